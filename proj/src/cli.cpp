#include "silencio/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json_util.hpp"
#include "silencio/errors.hpp"

namespace silencio::metrics {

void to_json(nlohmann::json& j, const ProbeConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"n_segments", c.n_segments},
           {"seg_len", c.seg_len},
           {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ProbeConfig& c) {
  detail::StrictReader(j, "probe")
      .field("epochs", c.epochs)
      .field("batch_size", c.batch_size)
      .field("learning_rate", c.learning_rate)
      .field("n_segments", c.n_segments)
      .field("seg_len", c.seg_len)
      .field("seed", c.seed)
      .read();
}

}  // namespace silencio::metrics

namespace silencio::cli {
namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr corpus::Mode kSilent = corpus::Mode::kSilent;
constexpr corpus::Mode kVocalized = corpus::Mode::kVocalized;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out) throw DataError(fmt::format("write failed for {}", path.string()));
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt_d(double v) { return metrics::format_double(v); }

std::string join(const std::vector<std::string>& xs, char sep) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) out += sep;
    out += xs[i];
  }
  return out;
}

std::string loss_csv_header() { return "iteration,epoch,recon_s,recon_v,disc,lambda,total\n"; }

void append_loss_rows(std::string& csv, int iteration,
                      const std::vector<train::LossBreakdown>& history) {
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto& l = history[e];
    csv += fmt::format("{},{},{},{},{},{},{}\n", iteration, e, fmt_d(l.recon_s), fmt_d(l.recon_v),
                       fmt_d(l.disc), fmt_d(l.lambda), fmt_d(l.total));
  }
}

std::string trace_row(const metrics::EvalReport& r) {
  return fmt::format("{},{},{},{},{}\n", r.iteration, fmt_d(r.mean(kSilent, "mse")),
                     fmt_d(r.mean(kVocalized, "mse")), fmt_d(r.mean(kSilent, "pseudo_fidelity")),
                     fmt_d(r.mean(kSilent, "alignment_error")));
}

json tensor_json(const std::string& name, const Tensor& t) {
  return json{{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"values", t.values()}};
}

json group_json(const net::ParamGroup& g) {
  json arr = json::array();
  for (std::size_t i = 0; i < g.size(); ++i) arr.push_back(tensor_json(g.names[i], g.tensors[i]));
  return arr;
}

net::ParamGroup group_from_json(const json& arr, const net::ParamGroup& layout,
                                const std::string& what) {
  if (!arr.is_array() || arr.size() != layout.size()) {
    throw FormatError(fmt::format("checkpoint: {} has {} tensors, expected {}", what,
                                  arr.is_array() ? arr.size() : 0, layout.size()));
  }
  net::ParamGroup g;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const json& e = arr[i];
    const auto name = e.at("name").get<std::string>();
    const auto rows = e.at("rows").get<std::size_t>();
    const auto cols = e.at("cols").get<std::size_t>();
    if (name != layout.names[i] || rows != layout.tensors[i].rows() ||
        cols != layout.tensors[i].cols()) {
      throw FormatError(fmt::format("checkpoint: {} tensor {} is {} {}x{}, expected {} {}", what, i,
                                    name, rows, cols, layout.names[i],
                                    layout.tensors[i].shape_string()));
    }
    auto values = e.at("values").get<std::vector<double>>();
    if (values.size() != rows * cols) {
      throw FormatError(fmt::format("checkpoint: {} has {} values, expected {}", name,
                                    values.size(), rows * cols));
    }
    g.names.push_back(name);
    g.tensors.emplace_back(rows, cols, std::move(values));
  }
  return g;
}

void check_dims(const corpus::Corpus& corpus, const net::ModelDims& dims) {
  const auto& c = corpus.config();
  if (dims.tongue != c.tongue_dim || dims.lip != c.lip_dim || dims.acoustic != c.acoustic_dim ||
      dims.rate_ratio != c.rate_ratio) {
    throw DataError(fmt::format(
        "checkpoint dims (tongue {}, lip {}, acoustic {}, k {}) do not match the corpus "
        "(tongue {}, lip {}, acoustic {}, k {})",
        dims.tongue, dims.lip, dims.acoustic, dims.rate_ratio, c.tongue_dim, c.lip_dim,
        c.acoustic_dim, c.rate_ratio));
  }
}

corpus::Corpus open_corpus(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) {
    throw UsageError(fmt::format("{}: not a corpus directory (no manifest.json)", dir.string()));
  }
  return corpus::load_corpus(dir);
}

void write_config_echo(const fs::path& out_dir, const RunConfig& config) {
  json j = config;
  write_text(out_dir / "config.json", j.dump(2) + "\n");
}

std::vector<std::string> excluded_from_meta(const json& meta) {
  if (meta.contains("excluded_speakers")) return meta.at("excluded_speakers").get<std::vector<std::string>>();
  return {};
}

struct TrainOutcome {
  train::IterativeResult result;
  metrics::EvalReport initial_report;
};

// Runs iterative training, writing per-iteration directories under `out_dir`.
TrainOutcome train_into(const corpus::Corpus& corpus, const net::ModelParams& initial,
                        const train::TrainConfig& tc, train::RunMode mode,
                        const fs::path& out_dir, const json& config_echo) {
  fs::create_directories(out_dir);
  TrainOutcome outcome;
  const auto excluded0 = train::excluded_speakers_for(corpus, initial);
  outcome.initial_report = metrics::evaluate(initial, corpus, 0, excluded0);

  std::string loss_csv = loss_csv_header();
  std::string trace_csv = "iteration,silent_mse,vocalized_mse,pseudo_fidelity,alignment_error\n";
  trace_csv += trace_row(outcome.initial_report);
  std::string iter_csv = "iteration,epsilon,reliable_count,excluded_count,excluded_speakers\n";

  auto on_iteration = [&](const train::IterationStats& s, const net::ModelParams& params,
                          const train::PseudoSelection& pseudo) {
    const fs::path dir = out_dir / fmt::format("iter{}", s.iteration);
    align::write_pseudo_targets(dir, s.iteration, pseudo.targets);
    metrics::write_report(dir / "eval", s.report);
    Checkpoint ck;
    ck.params = params;
    ck.meta = {{"stage", "train"},
               {"iteration", s.iteration},
               {"mode", train::to_string(mode)},
               {"seed", tc.seed},
               {"excluded_speakers", excluded0},
               {"config", config_echo}};
    save_checkpoint(dir / "checkpoint.json", ck);
    append_loss_rows(loss_csv, s.iteration, s.history);
    trace_csv += trace_row(s.report);
    iter_csv += fmt::format("{},{},{},{},{}\n", s.iteration, fmt_d(s.epsilon), s.reliable_count,
                            s.excluded_count, join(s.excluded_speakers, ';'));
    fmt::print(stderr, "[{}] iteration {}: eps {:.4f}, reliable {}, silent mse {:.4f}\n",
               train::to_string(mode), s.iteration, s.epsilon, s.reliable_count,
               s.report.mean(kSilent, "mse"));
  };
  outcome.result = train::iterative_train(corpus, tc, initial, on_iteration);

  write_text(out_dir / "loss.csv", loss_csv);
  write_text(out_dir / "trace.csv", trace_csv);
  write_text(out_dir / "iterations.csv", iter_csv);
  return outcome;
}

double median(std::vector<double> xs) {
  if (xs.empty()) return std::nan("");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace

void to_json(json& j, const RunConfig& c) {
  j = json{{"corpus", c.corpus},
           {"train", c.train},
           {"probe", c.probe},
           {"mode", train::to_string(c.mode)},
           {"ablation_seeds", c.ablation_seeds}};
  if (c.seed) j["seed"] = *c.seed;
}

void from_json(const json& j, RunConfig& c) {
  std::string mode = train::to_string(c.mode);
  std::optional<std::uint64_t> seed;
  detail::StrictReader reader(j, "config");
  reader.field("corpus", c.corpus)
      .field("train", c.train)
      .field("probe", c.probe)
      .field("mode", mode)
      .field("ablation_seeds", c.ablation_seeds);
  std::uint64_t seed_value = 0;
  reader.field("seed", seed_value).read();
  if (j.contains("seed")) seed = seed_value;
  c.mode = train::parse_run_mode(mode);
  c.seed = seed;
}

corpus::CorpusConfig RunConfig::effective_corpus() const {
  corpus::CorpusConfig c = corpus;
  if (seed) c.seed = *seed;
  return c;
}

train::TrainConfig RunConfig::effective_train() const {
  train::TrainConfig t = train;
  if (seed) t.seed = *seed;
  return t;
}

RunConfig load_run_config(const std::optional<fs::path>& path) {
  RunConfig config;
  if (!path) return config;
  const std::string text = read_text(*path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError(fmt::format("{}: {}", path->string(), e.what()));
  }
  try {
    config = j.get<RunConfig>();
  } catch (const UsageError& e) {
    throw UsageError(fmt::format("{}: {}", path->string(), e.what()));
  } catch (const json::exception& e) {
    throw UsageError(fmt::format("{}: {}", path->string(), e.what()));
  }
  try {
    config.effective_corpus().validate();
    config.effective_train().validate();
  } catch (const ContractError& e) {
    throw UsageError(fmt::format("{}: {}", path->string(), e.what()));
  }
  if (config.ablation_seeds.empty()) {
    throw UsageError(fmt::format("{}: ablation_seeds must not be empty", path->string()));
  }
  return config;
}

void save_checkpoint(const fs::path& path, const Checkpoint& checkpoint) {
  json dims = checkpoint.params.dims;
  const json j{{"format", "silencio-checkpoint"},
               {"version", 1},
               {"dims", dims},
               {"encoder", group_json(checkpoint.params.encoder)},
               {"decoder", group_json(checkpoint.params.decoder)},
               {"discriminator", group_json(checkpoint.params.discriminator)},
               {"meta", checkpoint.meta}};
  write_text(path, j.dump(1) + "\n");
}

Checkpoint load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError(fmt::format("checkpoint {} does not exist", path.string()));
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw FormatError(fmt::format("{}: corrupt checkpoint ({})", path.string(), e.what()));
  }
  Checkpoint ck;
  try {
    if (j.at("format").get<std::string>() != "silencio-checkpoint") {
      throw FormatError(fmt::format("{}: not a checkpoint file", path.string()));
    }
    ck.params.dims = j.at("dims").get<net::ModelDims>();
    ck.params.dims.validate();
    ck.params.encoder =
        group_from_json(j.at("encoder"), net::encoder_layout(ck.params.dims), "encoder");
    ck.params.decoder =
        group_from_json(j.at("decoder"), net::decoder_layout(ck.params.dims), "decoder");
    ck.params.discriminator = group_from_json(
        j.at("discriminator"), net::discriminator_layout(ck.params.dims), "discriminator");
    ck.meta = j.value("meta", json::object());
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: malformed checkpoint ({})", path.string(), e.what()));
  } catch (const UsageError& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  } catch (const ContractError& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
  if (!ck.params.all_finite()) throw FormatError(fmt::format("{}: non-finite parameters", path.string()));
  return ck;
}

void cmd_gen(const RunConfig& config, const fs::path& out_dir) {
  const corpus::Corpus c = corpus::generate_corpus(config.effective_corpus());
  corpus::save_corpus(c, out_dir);
  fmt::print(stderr, "wrote {} utterances to {}\n", c.utterances().size(), out_dir.string());
}

void cmd_pretrain(const fs::path& corpus_dir, const RunConfig& config, const fs::path& out_dir) {
  const corpus::Corpus c = open_corpus(corpus_dir);
  train::TrainConfig tc = config.effective_train();
  tc.model = train::dims_for(c, tc.model);
  const train::PretrainResult result = train::pretrain_vocalized(c, tc);

  fs::create_directories(out_dir);
  write_config_echo(out_dir, config);
  std::string loss_csv = loss_csv_header();
  append_loss_rows(loss_csv, 0, result.history);
  write_text(out_dir / "loss.csv", loss_csv);
  Checkpoint ck;
  ck.params = result.params;
  ck.meta = {{"stage", "pretrain"},
             {"iteration", 0},
             {"seed", tc.seed},
             {"excluded_speakers", train::excluded_speakers_for(c, result.params)},
             {"config", json(config)}};
  save_checkpoint(out_dir / "checkpoint.json", ck);
  if (!result.history.empty()) {
    fmt::print(stderr, "pretrained {} epochs, final recon_v {:.4f}\n", result.history.size(),
               result.history.back().recon_v);
  }
}

void cmd_train(const fs::path& corpus_dir, const fs::path& checkpoint, const RunConfig& config,
               const fs::path& out_dir) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const corpus::Corpus c = open_corpus(corpus_dir);
  check_dims(c, ck.params.dims);
  const train::TrainConfig tc = train::configure_for_mode(config.effective_train(), config.mode);

  fs::create_directories(out_dir);
  write_config_echo(out_dir, config);
  const TrainOutcome outcome = train_into(c, ck.params, tc, config.mode, out_dir, json(config));
  Checkpoint final_ck;
  final_ck.params = outcome.result.params;
  final_ck.meta = {{"stage", "train"},
                   {"iteration", outcome.result.stats.back().iteration},
                   {"mode", train::to_string(config.mode)},
                   {"seed", tc.seed},
                   {"excluded_speakers", outcome.result.eval_excluded},
                   {"config", json(config)}};
  save_checkpoint(out_dir / "checkpoint.json", final_ck);
}

void cmd_eval(const fs::path& corpus_dir, const fs::path& checkpoint, const fs::path& out_dir) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const corpus::Corpus c = open_corpus(corpus_dir);
  check_dims(c, ck.params.dims);
  const auto excluded = ck.meta.contains("excluded_speakers")
                            ? excluded_from_meta(ck.meta)
                            : train::excluded_speakers_for(c, ck.params);
  const int iteration = ck.meta.value("iteration", 0);
  const metrics::EvalReport report = metrics::evaluate(ck.params, c, iteration, excluded);
  metrics::write_report(out_dir, report);
  fmt::print(stderr, "silent mse {:.4f}, vocalized mse {:.4f}\n", report.mean(kSilent, "mse"),
             report.mean(kVocalized, "mse"));
}

void cmd_ablate(const fs::path& corpus_dir, const RunConfig& config, const fs::path& out_dir) {
  const corpus::Corpus c = open_corpus(corpus_dir);
  std::vector<std::uint64_t> seeds = config.ablation_seeds;
  if (config.seed) seeds = {*config.seed};
  const train::RunMode modes[] = {train::RunMode::kFull, train::RunMode::kNoIts,
                                  train::RunMode::kNoDat, train::RunMode::kBaseline};

  fs::create_directories(out_dir);
  write_config_echo(out_dir, config);

  // final reports and probe accuracies keyed by (mode, seed index)
  std::map<train::RunMode, std::vector<metrics::EvalReport>> reports;
  std::map<train::RunMode, std::vector<double>> probes;
  std::string runs_csv =
      "seed,mode,silent_mse,vocalized_mse,silent_mcd,vocalized_mcd,pseudo_fidelity,"
      "alignment_error,probe_accuracy\n";
  for (std::uint64_t seed : seeds) {
    train::TrainConfig base = config.train;
    base.seed = seed;
    base.model = train::dims_for(c, base.model);
    fmt::print(stderr, "seed {}: pretraining\n", seed);
    const net::ModelParams pretrained = train::pretrain_vocalized(c, base).params;
    for (train::RunMode mode : modes) {
      const train::TrainConfig tc = train::configure_for_mode(base, mode);
      const fs::path run_dir = out_dir / "runs" / fmt::format("seed{}_{}", seed, train::to_string(mode));
      const TrainOutcome outcome = train_into(c, pretrained, tc, mode, run_dir, json(config));
      const metrics::EvalReport& r = outcome.result.stats.back().report;
      const double probe = metrics::probe_domain_accuracy(outcome.result.params, c, config.probe);
      reports[mode].push_back(r);
      probes[mode].push_back(probe);
      runs_csv += fmt::format("{},{},{},{},{},{},{},{},{}\n", seed, train::to_string(mode),
                              fmt_d(r.mean(kSilent, "mse")), fmt_d(r.mean(kVocalized, "mse")),
                              fmt_d(r.mean(kSilent, "mcd")), fmt_d(r.mean(kVocalized, "mcd")),
                              fmt_d(r.mean(kSilent, "pseudo_fidelity")),
                              fmt_d(r.mean(kSilent, "alignment_error")), fmt_d(probe));
    }
  }
  write_text(out_dir / "runs.csv", runs_csv);

  std::vector<std::string> seed_strings;
  for (auto s : seeds) seed_strings.push_back(std::to_string(s));
  const std::string seed_list = join(seed_strings, ';');
  std::string table = "speech_mode,mode,mse_median,mcd_median,probe_accuracy_median,n_seeds,seeds\n";
  for (corpus::Mode speech : {kSilent, kVocalized}) {
    for (train::RunMode mode : modes) {
      std::vector<double> mse, mcd;
      for (const auto& r : reports[mode]) {
        mse.push_back(r.mean(speech, "mse"));
        mcd.push_back(r.mean(speech, "mcd"));
      }
      table += fmt::format("{},{},{},{},{},{},{}\n", corpus::to_string(speech),
                           train::to_string(mode), fmt_d(median(mse)), fmt_d(median(mcd)),
                           fmt_d(median(probes[mode])), seeds.size(), seed_list);
    }
  }
  write_text(out_dir / "ablation.csv", table);

  // Speaker-wise silent MSE of the baseline against the full method, averaged over seeds.
  std::map<std::string, std::pair<double, std::size_t>> base_mse, full_mse;
  auto collect = [](const std::vector<metrics::EvalReport>& rs, auto& into) {
    for (const auto& r : rs)
      for (const auto& rec : r.records) {
        if (rec.mode != kSilent) continue;
        into[rec.speaker].first += rec.mse;
        into[rec.speaker].second += 1;
      }
  };
  collect(reports[train::RunMode::kBaseline], base_mse);
  collect(reports[train::RunMode::kFull], full_mse);
  std::string speakers_csv = "speaker_id,baseline_mse,full_mse\n";
  std::vector<double> xs, ys;
  for (const auto& [speaker, b] : base_mse) {
    const auto it = full_mse.find(speaker);
    if (it == full_mse.end()) continue;
    const double x = b.first / static_cast<double>(b.second);
    const double y = it->second.first / static_cast<double>(it->second.second);
    xs.push_back(x);
    ys.push_back(y);
    speakers_csv += fmt::format("{},{},{}\n", speaker, fmt_d(x), fmt_d(y));
  }
  write_text(out_dir / "per_speaker.csv", speakers_csv);
  std::string fit_csv = "slope,intercept,n\n";
  try {
    const metrics::LinearFit fit = metrics::linear_fit(xs, ys);
    fit_csv += fmt::format("{},{},{}\n", fmt_d(fit.slope), fmt_d(fit.intercept), xs.size());
  } catch (const ContractError& e) {
    fmt::print(stderr, "per-speaker fit skipped: {}\n", e.what());
  }
  write_text(out_dir / "per_speaker_fit.csv", fit_csv);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"silencio: pseudo-target alignment and domain adversarial training lab"};
  app.require_subcommand(1);

  std::string config_path, corpus_dir, checkpoint, out_dir, mode;
  std::optional<std::uint64_t> seed;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Run config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "Seed overriding the config");
  };
  auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus");
  add_config(gen);
  gen->add_option("--out", out_dir, "Corpus output directory")->required();

  auto* pretrain = app.add_subcommand("pretrain", "Supervised pre-training on vocalized data");
  add_config(pretrain);
  pretrain->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  pretrain->add_option("--out", out_dir, "Output directory")->required();

  auto* trainc = app.add_subcommand("train", "Iterative pseudo-target and adversarial training");
  add_config(trainc);
  trainc->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  trainc->add_option("--checkpoint", checkpoint, "Initial checkpoint")->required();
  trainc->add_option("--out", out_dir, "Output directory")->required();
  trainc->add_option("--mode", mode, "full, no_its, no_dat or baseline");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();
  eval->add_option("--out", out_dir, "Report directory")->required();

  auto* ablate = app.add_subcommand("ablate", "Run every mode over the ablation seeds");
  add_config(ablate);
  ablate->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  ablate->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig config = load_run_config(config_path.empty() ? std::nullopt
                                                           : std::optional<fs::path>(config_path));
    if (seed) config.seed = *seed;
    if (!mode.empty()) config.mode = train::parse_run_mode(mode);

    if (*gen) cmd_gen(config, out_dir);
    if (*pretrain) cmd_pretrain(corpus_dir, config, out_dir);
    if (*trainc) cmd_train(corpus_dir, checkpoint, config, out_dir);
    if (*eval) cmd_eval(corpus_dir, checkpoint, out_dir);
    if (*ablate) cmd_ablate(corpus_dir, config, out_dir);
    return kExitOk;
  } catch (const UsageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  } catch (const ContractError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  } catch (const NumericError& e) {
    fmt::print(stderr, "numeric failure: {}\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitData;
  }
}

}  // namespace silencio::cli
