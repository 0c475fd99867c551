#include "silencio/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "json.hpp"
#include "silencio/align.hpp"
#include "silencio/errors.hpp"
#include "silencio/optim.hpp"
#include "silencio/parallel.hpp"
#include "silencio/segments.hpp"

namespace silencio::metrics {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ContractError(fmt::format("{}: shape mismatch {} vs {}", what, a.shape_string(),
                                    b.shape_string()));
  }
}

const char* kMetricNames[] = {"mse", "mcd", "pseudo_fidelity", "alignment_error"};

std::optional<double> metric_of(const UtteranceRecord& r, const std::string& metric) {
  if (metric == "mse") return r.mse;
  if (metric == "mcd") return r.mcd;
  if (metric == "pseudo_fidelity") return r.pseudo_fidelity;
  if (metric == "alignment_error") return r.alignment_error;
  return std::nullopt;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  return out;
}

std::string optional_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

}  // namespace

double mse_seq(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse_seq");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

double mcd(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mcd");
  const double scale = 10.0 / std::numbers::ln10;
  double total = 0.0;
  for (std::size_t t = 0; t < a.rows(); ++t) {
    double sq = 0.0;
    for (std::size_t d = 0; d < a.cols(); ++d) {
      const double diff = a(t, d) - b(t, d);
      sq += diff * diff;
    }
    total += scale * std::sqrt(2.0 * sq);
  }
  return total / static_cast<double>(a.rows());
}

double alignment_error(const align::AlignmentPath& path, const std::vector<std::size_t>& warp) {
  if (warp.empty()) throw ContractError("alignment_error: empty warp");
  std::vector<double> sum(warp.size(), 0.0);
  std::vector<std::size_t> count(warp.size(), 0);
  std::size_t max_j = 0;
  for (const auto& [i, j] : path.pairs) {
    if (j >= warp.size()) {
      throw ContractError(fmt::format("alignment_error: path reaches silent frame {} but warp has {}",
                                      j, warp.size()));
    }
    sum[j] += static_cast<double>(i);
    ++count[j];
    max_j = std::max(max_j, j);
  }
  if (max_j + 1 != warp.size() || std::find(count.begin(), count.end(), 0u) != count.end()) {
    throw ContractError(fmt::format("alignment_error: path does not cover all {} silent frames",
                                    warp.size()));
  }
  double total = 0.0;
  for (std::size_t j = 0; j < warp.size(); ++j) {
    total += std::abs(sum[j] / static_cast<double>(count[j]) - static_cast<double>(warp[j]));
  }
  return total / static_cast<double>(warp.size());
}

LinearFit linear_fit(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw ContractError(fmt::format("linear_fit: {} xs but {} ys", xs.size(), ys.size()));
  }
  if (xs.size() < 2) throw ContractError("linear_fit: need at least 2 points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx == 0.0) throw ContractError("linear_fit: all xs are equal");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

double probe_accuracy(std::span<const ProbeExample> train, std::span<const ProbeExample> held_out,
                      const net::ModelDims& dims, const ProbeConfig& config) {
  if (train.empty() || held_out.empty()) throw DataError("probe: empty training or held-out set");
  net::ParamGroup disc = net::init_params(dims, config.seed).discriminator;
  tg::OptState opt = tg::make_opt_state(disc.tensors);
  std::mt19937_64 rng(config.seed);

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t end = std::min(order.size(), b + config.batch_size);
      tg::Tape tape;
      const auto nodes = net::bind(tape, disc, true);
      std::vector<tg::Node> losses;
      for (std::size_t m = b; m < end; ++m) {
        const ProbeExample& ex = train[order[m]];
        const auto plan = train::plan_segments(ex.frames.rows(), config.n_segments,
                                               config.seg_len, rng);
        const tg::Node spliced = train::splice_segments(tape, tape.constant(ex.frames), plan);
        const net::DiscOutput out = net::discriminate(tape, nodes, spliced, 0.0, dims);
        losses.push_back(tg::softmax_cross_entropy(tape, out.logits, {ex.label}));
      }
      tg::Node total = losses.front();
      for (std::size_t i = 1; i < losses.size(); ++i) total = tg::add(tape, total, losses[i]);
      total = tg::scale(tape, total, 1.0 / static_cast<double>(losses.size()));
      const tg::GradMap grads = tape.backward(total);
      std::vector<Tensor> g;
      for (tg::Node n : nodes) g.push_back(grads.at(n));
      tg::optimizer_step(disc.tensors, g, opt, config.learning_rate);
    }
  }

  net::ModelParams scoring;
  scoring.dims = dims;
  scoring.discriminator = std::move(disc);
  std::mt19937_64 eval_rng(config.seed ^ 0x5bd1e995ULL);
  std::size_t correct = 0;
  for (const ProbeExample& ex : held_out) {
    const Tensor spliced =
        train::sample_segments(ex.frames, config.n_segments, config.seg_len, eval_rng);
    const auto probs = net::discriminate(spliced, scoring);
    const int predicted = probs[1] > probs[0] ? net::kSilentLabel : net::kVocalizedLabel;
    if (predicted == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(held_out.size());
}

double probe_domain_accuracy(const net::ModelParams& params, const corpus::Corpus& corpus,
                             const ProbeConfig& config) {
  std::vector<const corpus::Utterance*> train_utts, held_utts;
  for (const corpus::Utterance& u : corpus.utterances()) {
    (u.split == corpus::Split::kTrain ? train_utts : held_utts).push_back(&u);
  }
  auto encode_all = [&](const std::vector<const corpus::Utterance*>& utts) {
    std::vector<ProbeExample> out(utts.size());
    parallel_for(utts.size(), [&](std::size_t i) {
      const corpus::Utterance& u = *utts[i];
      out[i].frames = net::encode(u.id, u.tongue, u.lip, params).frames;
      out[i].label = u.mode == corpus::Mode::kSilent ? net::kSilentLabel : net::kVocalizedLabel;
    });
    return out;
  };
  const auto train = encode_all(train_utts);
  const auto held = encode_all(held_utts);
  auto has_both = [](const std::vector<ProbeExample>& xs) {
    bool v = false, s = false;
    for (const auto& x : xs) (x.label == net::kSilentLabel ? s : v) = true;
    return v && s;
  };
  if (!has_both(train)) throw DataError("probe: training split lacks one of the speaking modes");
  if (!has_both(held)) throw DataError("probe: held-out splits lack one of the speaking modes");
  return probe_accuracy(train, held, params.dims, config);
}

double EvalReport::mean(corpus::Mode mode, const std::string& metric) const {
  for (const Aggregate& a : aggregates)
    if (a.mode == mode && a.metric == metric) return a.mean;
  return std::numeric_limits<double>::quiet_NaN();
}

std::vector<Aggregate> aggregate(std::span<const UtteranceRecord> records_in) {
  // Sorting first makes the floating-point sums independent of record order.
  std::vector<UtteranceRecord> records(records_in.begin(), records_in.end());
  std::sort(records.begin(), records.end(),
            [](const UtteranceRecord& a, const UtteranceRecord& b) { return a.id < b.id; });
  std::vector<Aggregate> out;
  for (corpus::Mode mode : {corpus::Mode::kSilent, corpus::Mode::kVocalized}) {
    for (const char* metric : kMetricNames) {
      std::vector<double> values;
      for (const UtteranceRecord& r : records) {
        if (r.mode != mode) continue;
        if (const auto v = metric_of(r, metric)) values.push_back(*v);
      }
      if (values.empty()) continue;
      Aggregate a;
      a.mode = mode;
      a.metric = metric;
      a.n = values.size();
      double sum = 0.0;
      for (double v : values) sum += v;
      a.mean = sum / static_cast<double>(a.n);
      if (a.n > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        const double sd = std::sqrt(ss / static_cast<double>(a.n - 1));
        a.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(a.n));
      }
      out.push_back(a);
    }
  }
  return out;
}

EvalReport evaluate(const net::ModelParams& params, const corpus::Corpus& corpus, int iteration,
                    std::span<const std::string> excluded_speakers) {
  std::vector<const corpus::Utterance*> utts;
  for (const corpus::Utterance& u : corpus.utterances()) {
    if (u.split != corpus::Split::kTest) continue;
    if (u.mode == corpus::Mode::kSilent &&
        std::find(excluded_speakers.begin(), excluded_speakers.end(), u.speaker) !=
            excluded_speakers.end()) {
      continue;
    }
    utts.push_back(&u);
  }

  EvalReport report;
  report.iteration = iteration;
  report.records.resize(utts.size());
  parallel_for(utts.size(), [&](std::size_t n) {
    const corpus::Utterance& u = *utts[n];
    UtteranceRecord& r = report.records[n];
    r.id = u.id;
    r.speaker = u.speaker;
    r.mode = u.mode;
    const Tensor predicted = net::decode(net::encode(u.id, u.tongue, u.lip, params), params).post;
    if (u.mode == corpus::Mode::kVocalized) {
      if (!u.acoustic) throw DataError(fmt::format("{}: vocalized utterance without acoustics", u.id));
      r.mse = mse_seq(predicted, *u.acoustic);
      r.mcd = mcd(predicted, *u.acoustic);
      return;
    }
    const corpus::GroundTruth* truth = corpus.truth_for(u.id);
    if (truth == nullptr) throw DataError(fmt::format("{}: no ground truth for silent utterance", u.id));
    r.mse = mse_seq(predicted, truth->oracle);
    r.mcd = mcd(predicted, truth->oracle);
    const corpus::Utterance* one[] = {&u};
    const auto pseudo = align::generate_pseudo_targets(corpus, one, params, iteration);
    r.pseudo_fidelity = mse_seq(pseudo.front().acoustic, truth->oracle);
    r.alignment_error = alignment_error(pseudo.front().path, truth->warp);
  });
  std::sort(report.records.begin(), report.records.end(),
            [](const UtteranceRecord& a, const UtteranceRecord& b) { return a.id < b.id; });
  report.aggregates = aggregate(report.records);
  return report;
}

std::string format_double(double v) { return fmt::format("{}", v); }

void write_report(const std::filesystem::path& dir, const EvalReport& report) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir / "per_utterance.csv");
    out << "utterance_id,speaker_id,mode,mse,mcd,pseudo_fidelity,alignment_error\n";
    for (const UtteranceRecord& r : report.records) {
      out << r.id << ',' << r.speaker << ',' << corpus::to_string(r.mode) << ','
          << format_double(r.mse) << ',' << format_double(r.mcd) << ','
          << optional_field(r.pseudo_fidelity) << ',' << optional_field(r.alignment_error) << '\n';
    }
  }
  {
    auto out = open_out(dir / "aggregate.csv");
    out << "mode,metric,mean,ci95,n\n";
    for (const Aggregate& a : report.aggregates) {
      out << corpus::to_string(a.mode) << ',' << a.metric << ',' << format_double(a.mean) << ','
          << format_double(a.ci95) << ',' << a.n << '\n';
    }
  }
  nlohmann::ordered_json summary;
  summary["iteration"] = report.iteration;
  summary["utterances"] = report.records.size();
  auto& aggs = summary["aggregates"] = nlohmann::ordered_json::array();
  for (const Aggregate& a : report.aggregates) {
    aggs.push_back({{"mode", corpus::to_string(a.mode)},
                    {"metric", a.metric},
                    {"mean", a.mean},
                    {"ci95", a.ci95},
                    {"n", a.n}});
  }
  auto out = open_out(dir / "summary.json");
  out << summary.dump(2) << '\n';
}

}  // namespace silencio::metrics
