#include "silencio/synthcorpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "json_util.hpp"
#include "silencio/dtw.hpp"
#include "silencio/errors.hpp"
#include "silencio/matrix_io.hpp"

namespace silencio::corpus {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

Tensor gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = stddev * dist(rng);
  return t;
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k)
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += a(i, k) * b(k, j);
  return out;
}

// Moving average of white noise, rescaled to unit variance per dimension.
Tensor smooth_latent(std::size_t length, std::size_t dim, std::size_t window, std::mt19937_64& rng) {
  const Tensor raw = gaussian(length + window - 1, dim, 1.0, rng);
  Tensor z(length, dim);
  const double norm = 1.0 / std::sqrt(static_cast<double>(window));
  for (std::size_t t = 0; t < length; ++t)
    for (std::size_t d = 0; d < dim; ++d) {
      double s = 0.0;
      for (std::size_t w = 0; w < window; ++w) s += raw(t + w, d);
      z(t, d) = s * norm;
    }
  return z;
}

Tensor repeat_rows(const Tensor& t, std::size_t ratio) {
  if (ratio == 1) return t;
  Tensor out(t.rows() * ratio, t.cols());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const auto src = t.row(r / ratio);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

void add_noise(Tensor& t, double stddev, std::mt19937_64& rng) {
  if (stddev == 0.0) return;
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values()) v += dist(rng);
}

Tensor acoustics_from_latent(const Tensor& z, const AcousticMap& map, std::size_t ratio) {
  Tensor hidden = multiply(repeat_rows(z, ratio), map.g);
  for (double& v : hidden.values()) v = std::tanh(v);
  return multiply(hidden, map.h);
}

std::string utterance_id(std::size_t speaker, std::size_t index, Mode mode) {
  return fmt::format("spk{:02}_utt{:02}_{}", speaker, index, mode == Mode::kVocalized ? "voc" : "sil");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(fmt::format("{}: cannot open for writing", path.string()));
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("{}: missing or unreadable", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::size_t> read_warp_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != "silent_index,vocalized_index") {
    throw FormatError(fmt::format("{}: bad warp header", path.string()));
  }
  std::vector<std::size_t> warp;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t j = 0, i = 0;
    char comma = 0;
    std::istringstream row(line);
    if (!(row >> j >> comma >> i) || comma != ',' || j != warp.size()) {
      throw FormatError(fmt::format("{}: bad warp row '{}'", path.string(), line));
    }
    warp.push_back(i);
  }
  return warp;
}

}  // namespace

std::string to_string(Mode mode) { return mode == Mode::kVocalized ? "vocalized" : "silent"; }

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Mode parse_mode(const std::string& s) {
  if (s == "vocalized") return Mode::kVocalized;
  if (s == "silent") return Mode::kSilent;
  throw FormatError(fmt::format("unknown mode '{}'", s));
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw FormatError(fmt::format("unknown split '{}'", s));
}

void CorpusConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ContractError(fmt::format("corpus config: {} {}", field, why));
  };
  if (speakers < 2) fail("speakers", "must be >= 2");
  if (utterances_per_speaker < 4) fail("utterances_per_speaker", "must be >= 4");
  if (min_length < 8) fail("min_length", "must be >= 8");
  if (max_length < min_length) fail("max_length", "must be >= min_length");
  if (!(stretch_min >= 1.0 && stretch_min <= stretch_max && stretch_max <= 2.0)) {
    fail("stretch_min/stretch_max", "must satisfy 1 <= min <= max <= 2");
  }
  if (!(alpha_min > 0.0 && alpha_min <= alpha_max && alpha_max <= 1.0)) {
    fail("alpha_min/alpha_max", "must satisfy 0 < min <= max <= 1");
  }
  if (!(noise >= 0.0 && std::isfinite(noise))) fail("noise", "must be finite and >= 0");
  if (latent_dim == 0) fail("latent_dim", "must be positive");
  if (smooth_window == 0) fail("smooth_window", "must be positive");
  if (tongue_dim == 0 || lip_dim == 0 || acoustic_dim == 0) fail("stream dims", "must be positive");
  if (rate_ratio == 0) fail("rate_ratio", "must be positive");
}

void to_json(json& j, const CorpusConfig& c) {
  j = json{{"speakers", c.speakers},
           {"utterances_per_speaker", c.utterances_per_speaker},
           {"min_length", c.min_length},
           {"max_length", c.max_length},
           {"stretch_min", c.stretch_min},
           {"stretch_max", c.stretch_max},
           {"alpha_min", c.alpha_min},
           {"alpha_max", c.alpha_max},
           {"noise", c.noise},
           {"latent_dim", c.latent_dim},
           {"smooth_window", c.smooth_window},
           {"tongue_dim", c.tongue_dim},
           {"lip_dim", c.lip_dim},
           {"acoustic_dim", c.acoustic_dim},
           {"rate_ratio", c.rate_ratio},
           {"seed", c.seed}};
}

void from_json(const json& j, CorpusConfig& c) {
  detail::StrictReader(j, "corpus")
      .field("speakers", c.speakers)
      .field("utterances_per_speaker", c.utterances_per_speaker)
      .field("min_length", c.min_length)
      .field("max_length", c.max_length)
      .field("stretch_min", c.stretch_min)
      .field("stretch_max", c.stretch_max)
      .field("alpha_min", c.alpha_min)
      .field("alpha_max", c.alpha_max)
      .field("noise", c.noise)
      .field("latent_dim", c.latent_dim)
      .field("smooth_window", c.smooth_window)
      .field("tongue_dim", c.tongue_dim)
      .field("lip_dim", c.lip_dim)
      .field("acoustic_dim", c.acoustic_dim)
      .field("rate_ratio", c.rate_ratio)
      .field("seed", c.seed)
      .read();
}

Corpus::Corpus(CorpusConfig config, std::vector<Utterance> utterances,
               std::vector<GroundTruth> truth)
    : config_(std::move(config)), utterances_(std::move(utterances)), truth_(std::move(truth)) {
  for (std::size_t i = 0; i < utterances_.size(); ++i) {
    if (!index_.emplace(utterances_[i].id, i).second) {
      throw DataError(fmt::format("duplicate utterance id '{}'", utterances_[i].id));
    }
  }
  for (std::size_t i = 0; i < truth_.size(); ++i) truth_index_.emplace(truth_[i].silent_id, i);
  for (const Utterance& u : utterances_) {
    if (u.tongue.rows() != u.lip.rows()) {
      throw DataError(fmt::format("{}: tongue and lip frame counts differ", u.id));
    }
    if (u.mode == Mode::kSilent && u.acoustic) {
      throw DataError(fmt::format("{}: silent utterance carries acoustics", u.id));
    }
    if (!u.parallel_id.empty()) {
      const auto it = index_.find(u.parallel_id);
      if (it != index_.end() && utterances_[it->second].parallel_id != u.id) {
        throw DataError(fmt::format("{}: parallel link to {} is not mutual", u.id, u.parallel_id));
      }
    }
  }
}

const Utterance& Corpus::utterance(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw DataError(fmt::format("unknown utterance '{}'", id));
  return utterances_[it->second];
}

const Utterance& Corpus::twin(const Utterance& u) const {
  if (u.parallel_id.empty() || index_.count(u.parallel_id) == 0) {
    throw DataError(fmt::format("{}: missing parallel twin", u.id));
  }
  return utterance(u.parallel_id);
}

const GroundTruth* Corpus::truth_for(const std::string& silent_id) const {
  const auto it = truth_index_.find(silent_id);
  return it == truth_index_.end() ? nullptr : &truth_[it->second];
}

std::vector<const Utterance*> Corpus::select(Mode mode, Split split) const {
  std::vector<const Utterance*> out;
  for (const Utterance& u : utterances_)
    if (u.mode == mode && u.split == split) out.push_back(&u);
  return out;
}

std::vector<std::string> Corpus::speakers() const {
  std::set<std::string> s;
  for (const Utterance& u : utterances_) s.insert(u.speaker);
  return {s.begin(), s.end()};
}

Warp sample_warp(std::size_t length, double stretch_min, double stretch_max,
                 std::mt19937_64& rng) {
  if (length == 0) throw ContractError("sample_warp: length must be positive");
  if (!(stretch_min >= 1.0 && stretch_min <= stretch_max)) {
    throw ContractError(
        fmt::format("sample_warp: bad stretch range [{}, {}]", stretch_min, stretch_max));
  }
  std::uniform_real_distribution<double> stretch_dist(stretch_min, stretch_max);
  const double s = stretch_min == stretch_max ? stretch_min : stretch_dist(rng);
  const auto silent_length = std::max<std::size_t>(
      length, static_cast<std::size_t>(std::lround(s * static_cast<double>(length))));

  std::uniform_real_distribution<double> pos(0.0, static_cast<double>(length - 1));
  std::vector<double> draws(silent_length);
  for (double& d : draws) d = pos(rng);
  std::sort(draws.begin(), draws.end());

  Warp w;
  w.silent_length = silent_length;
  w.map.resize(silent_length);
  for (std::size_t j = 0; j < silent_length; ++j) {
    w.map[j] = static_cast<std::size_t>(std::lround(draws[j]));
  }
  // Forward pass caps steps at +1 from w(0) = 0; backward pass lifts the tail
  // so that w(T'-1) = T-1 with steps still in {0, 1}.
  w.map[0] = 0;
  for (std::size_t j = 1; j < silent_length; ++j) w.map[j] = std::min(w.map[j], w.map[j - 1] + 1);
  w.map[silent_length - 1] = length - 1;
  for (std::size_t j = silent_length - 1; j-- > 0;) {
    w.map[j] = std::max(w.map[j], w.map[j + 1] == 0 ? 0 : w.map[j + 1] - 1);
  }
  return w;
}

AcousticMap make_acoustic_map(const CorpusConfig& config, std::mt19937_64& rng) {
  const double dz = static_cast<double>(config.latent_dim);
  const double dh = static_cast<double>(config.acoustic_dim);
  AcousticMap m;
  m.g = gaussian(config.latent_dim, config.acoustic_dim, 1.5 / std::sqrt(dz), rng);
  m.h = gaussian(config.acoustic_dim, config.acoustic_dim, 1.0 / std::sqrt(dh), rng);
  return m;
}

SpeakerProfile make_speaker(const CorpusConfig& config, std::size_t speaker_index,
                            std::mt19937_64& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.latent_dim));
  SpeakerProfile p;
  p.id = fmt::format("spk{:02}", speaker_index);
  p.tongue_mix = gaussian(config.latent_dim, config.tongue_dim, scale, rng);
  p.lip_mix = gaussian(config.latent_dim, config.lip_dim, scale, rng);
  return p;
}

SynthPair synth_pair(const CorpusConfig& config, const AcousticMap& acoustic_map,
                     const SpeakerProfile& speaker, std::size_t utt_index, std::size_t length,
                     std::mt19937_64& rng) {
  if (length < 8) throw ContractError(fmt::format("synth_pair: length {} < 8", length));
  const std::size_t speaker_index = static_cast<std::size_t>(std::stoul(speaker.id.substr(3)));

  const Tensor z = smooth_latent(length, config.latent_dim, config.smooth_window, rng);
  const Tensor clean_tongue = multiply(z, speaker.tongue_mix);
  const Tensor clean_lip = multiply(z, speaker.lip_mix);

  SynthPair pair;
  Utterance& v = pair.vocalized;
  v.id = utterance_id(speaker_index, utt_index, Mode::kVocalized);
  v.speaker = speaker.id;
  v.mode = Mode::kVocalized;
  v.tongue = clean_tongue;
  v.lip = clean_lip;
  add_noise(v.tongue, config.noise, rng);
  add_noise(v.lip, config.noise, rng);
  v.acoustic = acoustics_from_latent(z, acoustic_map, config.rate_ratio);

  const Warp warp = sample_warp(length, config.stretch_min, config.stretch_max, rng);
  std::uniform_real_distribution<double> alpha_dist(config.alpha_min, config.alpha_max);
  const double alpha = config.alpha_min == config.alpha_max ? config.alpha_min : alpha_dist(rng);
  const align::AlignmentPath path = align::path_from_warp(warp.map);

  Utterance& s = pair.silent;
  s.id = utterance_id(speaker_index, utt_index, Mode::kSilent);
  s.speaker = speaker.id;
  s.mode = Mode::kSilent;
  s.tongue = align::warp_acoustic(clean_tongue, path, 1);
  s.lip = align::warp_acoustic(clean_lip, path, 1);
  if (alpha != 1.0) {
    for (double& x : s.tongue.values()) x *= alpha;
    for (double& x : s.lip.values()) x *= alpha;
  }
  add_noise(s.tongue, config.noise, rng);
  add_noise(s.lip, config.noise, rng);

  v.parallel_id = s.id;
  s.parallel_id = v.id;

  pair.truth.silent_id = s.id;
  pair.truth.warp = warp.map;
  pair.truth.oracle = align::warp_acoustic(*v.acoustic, path, config.rate_ratio);
  pair.truth.alpha = alpha;
  return pair;
}

Corpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  std::mt19937_64 global_rng(config.seed);
  const AcousticMap acoustic_map = make_acoustic_map(config, global_rng);

  std::vector<Utterance> utterances;
  std::vector<GroundTruth> truth;
  for (std::size_t spk = 0; spk < config.speakers; ++spk) {
    std::mt19937_64 rng(config.seed ^ (kGolden * (spk + 1)));
    const SpeakerProfile speaker = make_speaker(config, spk, rng);

    std::vector<std::size_t> order(config.utterances_per_speaker);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t val_index = order[0];
    const std::size_t test_index = order[1];

    std::uniform_int_distribution<std::size_t> length_dist(config.min_length, config.max_length);
    for (std::size_t u = 0; u < config.utterances_per_speaker; ++u) {
      SynthPair pair = synth_pair(config, acoustic_map, speaker, u, length_dist(rng), rng);
      const Split split = u == val_index ? Split::kVal : u == test_index ? Split::kTest : Split::kTrain;
      pair.vocalized.split = split;
      pair.silent.split = split;
      utterances.push_back(std::move(pair.vocalized));
      utterances.push_back(std::move(pair.silent));
      truth.push_back(std::move(pair.truth));
    }
  }
  return Corpus(config, std::move(utterances), std::move(truth));
}

void save_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir / "streams");
  fs::create_directories(dir / "truth");
  json utts = json::array();
  for (const Utterance& u : corpus.utterances()) {
    const std::string base = "streams/" + u.id;
    json entry{{"id", u.id},
               {"speaker", u.speaker},
               {"mode", to_string(u.mode)},
               {"split", to_string(u.split)},
               {"parallel_id", u.parallel_id},
               {"tongue", base + ".tongue.ataf"},
               {"lip", base + ".lip.ataf"}};
    io::write_matrix(dir / (base + ".tongue.ataf"), u.tongue);
    io::write_matrix(dir / (base + ".lip.ataf"), u.lip);
    if (u.acoustic) {
      entry["acoustic"] = base + ".acoustic.ataf";
      io::write_matrix(dir / (base + ".acoustic.ataf"), *u.acoustic);
    }
    utts.push_back(std::move(entry));
  }
  json truth = json::array();
  for (const GroundTruth& g : corpus.ground_truth()) {
    const std::string base = "truth/" + g.silent_id;
    std::string csv = "silent_index,vocalized_index\n";
    for (std::size_t j = 0; j < g.warp.size(); ++j) csv += fmt::format("{},{}\n", j, g.warp[j]);
    write_text(dir / (base + ".warp.csv"), csv);
    io::write_matrix(dir / (base + ".oracle.ataf"), g.oracle);
    truth.push_back(json{{"id", g.silent_id},
                         {"alpha", g.alpha},
                         {"warp", base + ".warp.csv"},
                         {"oracle", base + ".oracle.ataf"}});
  }
  const json manifest{{"format", "silencio-corpus"},
                      {"version", 1},
                      {"config", corpus.config()},
                      {"utterances", std::move(utts)},
                      {"ground_truth", std::move(truth)}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Corpus load_corpus(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(read_text(manifest_path));
  } catch (const json::parse_error& e) {
    throw FormatError(fmt::format("{}: corrupt manifest ({})", manifest_path.string(), e.what()));
  }
  try {
    if (manifest.at("format").get<std::string>() != "silencio-corpus") {
      throw FormatError(fmt::format("{}: not a corpus manifest", manifest_path.string()));
    }
    CorpusConfig config;
    try {
      config = manifest.at("config").get<CorpusConfig>();
    } catch (const UsageError& e) {
      throw FormatError(fmt::format("{}: {}", manifest_path.string(), e.what()));
    }
    std::vector<Utterance> utterances;
    for (const json& e : manifest.at("utterances")) {
      Utterance u;
      u.id = e.at("id").get<std::string>();
      u.speaker = e.at("speaker").get<std::string>();
      u.mode = parse_mode(e.at("mode").get<std::string>());
      u.split = parse_split(e.at("split").get<std::string>());
      u.parallel_id = e.at("parallel_id").get<std::string>();
      u.tongue = io::read_matrix(dir / e.at("tongue").get<std::string>());
      u.lip = io::read_matrix(dir / e.at("lip").get<std::string>());
      if (e.contains("acoustic")) u.acoustic = io::read_matrix(dir / e.at("acoustic").get<std::string>());
      utterances.push_back(std::move(u));
    }
    std::vector<GroundTruth> truth;
    for (const json& e : manifest.at("ground_truth")) {
      GroundTruth g;
      g.silent_id = e.at("id").get<std::string>();
      g.alpha = e.at("alpha").get<double>();
      g.warp = read_warp_csv(dir / e.at("warp").get<std::string>());
      g.oracle = io::read_matrix(dir / e.at("oracle").get<std::string>());
      truth.push_back(std::move(g));
    }
    try {
      return Corpus(config, std::move(utterances), std::move(truth));
    } catch (const DataError& e) {
      throw FormatError(fmt::format("{}: {}", manifest_path.string(), e.what()));
    }
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: malformed manifest ({})", manifest_path.string(), e.what()));
  }
}

}  // namespace silencio::corpus
