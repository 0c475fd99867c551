#include "silencio/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "json_util.hpp"
#include "silencio/errors.hpp"
#include "silencio/parallel.hpp"
#include "silencio/segments.hpp"

namespace silencio::net {

void to_json(nlohmann::json& j, const ModelDims& d) {
  j = nlohmann::json{{"tongue", d.tongue},
           {"lip", d.lip},
           {"feature", d.feature},
           {"acoustic", d.acoustic},
           {"hidden", d.hidden},
           {"enc_channels", d.enc_channels},
           {"postnet_channels", d.postnet_channels},
           {"disc_channels", d.disc_channels},
           {"kernel", d.kernel},
           {"rate_ratio", d.rate_ratio}};
}

void from_json(const nlohmann::json& j, ModelDims& d) {
  detail::StrictReader(j, "model")
      .field("tongue", d.tongue)
      .field("lip", d.lip)
      .field("feature", d.feature)
      .field("acoustic", d.acoustic)
      .field("hidden", d.hidden)
      .field("enc_channels", d.enc_channels)
      .field("postnet_channels", d.postnet_channels)
      .field("disc_channels", d.disc_channels)
      .field("kernel", d.kernel)
      .field("rate_ratio", d.rate_ratio)
      .read();
}

}  // namespace silencio::net

namespace silencio::train {
namespace {

using nlohmann::json;

enum class RngTag : std::uint64_t { kShuffle = 1, kSegments = 2, kPretrain = 3, kInit = 4 };

std::mt19937_64 derived_rng(std::uint64_t seed, RngTag tag, std::uint64_t a = 0,
                            std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(a),
                    static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

void accumulate(GradAccumulator& acc, const std::vector<Tensor>& grads) {
  if (acc.sum.empty()) {
    acc.sum = grads;
  } else {
    for (std::size_t i = 0; i < grads.size(); ++i)
      for (std::size_t j = 0; j < grads[i].size(); ++j) acc.sum[i][j] += grads[i][j];
  }
  ++acc.batches;
}

// Steps `group` with the mean of the accumulated batch gradients and resets the accumulator.
void flush(GradAccumulator& acc, net::ParamGroup& group, tg::OptState& opt, double lr) {
  if (acc.batches == 0) return;
  if (acc.batches > 1) {
    const double inv = 1.0 / static_cast<double>(acc.batches);
    for (Tensor& g : acc.sum)
      for (double& v : g.values()) v *= inv;
  }
  tg::optimizer_step(group.tensors, acc.sum, opt, lr);
  acc.sum.clear();
  acc.batches = 0;
}

struct MemberResult {
  double recon = 0.0;
  double disc = 0.0;
  std::vector<Tensor> encoder_grads, decoder_grads, disc_grads;
};

std::vector<Tensor> collect(const tg::GradMap& grads, const std::vector<tg::Node>& nodes) {
  std::vector<Tensor> out;
  out.reserve(nodes.size());
  for (tg::Node n : nodes) out.push_back(grads.at(n));
  return out;
}

void add_into(std::vector<Tensor>& total, std::vector<Tensor>&& part) {
  if (total.empty()) {
    total = std::move(part);
    return;
  }
  for (std::size_t i = 0; i < total.size(); ++i)
    for (std::size_t j = 0; j < total[i].size(); ++j) total[i][j] += part[i][j];
}

LossBreakdown mean_breakdown(const std::vector<LossBreakdown>& batches, double lambda) {
  LossBreakdown m;
  for (const LossBreakdown& b : batches) {
    m.recon_s += b.recon_s;
    m.recon_v += b.recon_v;
    m.disc += b.disc;
  }
  const double n = static_cast<double>(batches.size());
  m.recon_s /= n;
  m.recon_v /= n;
  m.disc /= n;
  m.lambda = lambda;
  m.total = m.recon_s + m.recon_v - lambda * m.disc;
  return m;
}

std::vector<std::vector<Example>> make_batches(std::vector<Example> examples,
                                               std::size_t batch_size, std::mt19937_64& rng) {
  std::shuffle(examples.begin(), examples.end(), rng);
  std::vector<std::vector<Example>> batches;
  for (std::size_t b = 0; b < examples.size(); b += batch_size) {
    const auto first = examples.begin() + static_cast<std::ptrdiff_t>(b);
    const auto last = examples.begin() + static_cast<std::ptrdiff_t>(std::min(examples.size(), b + batch_size));
    batches.emplace_back(first, last);
  }
  return batches;
}

std::vector<Example> vocalized_examples(const corpus::Corpus& corpus) {
  std::vector<Example> out;
  for (const corpus::Utterance* u : corpus.select(corpus::Mode::kVocalized, corpus::Split::kTrain)) {
    if (!u->acoustic) throw DataError(fmt::format("{}: vocalized utterance without acoustics", u->id));
    out.push_back({u, &*u->acoustic});
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ContractError(fmt::format("train config: {} {}", field, why));
  };
  if (epochs_per_iteration == 0) fail("epochs_per_iteration", "must be >= 1");
  if (switch_epoch > epochs_per_iteration) fail("switch_epoch", "must be <= epochs_per_iteration");
  if (slow_update_every == 0) fail("slow_update_every", "must be >= 1");
  if (batch_size == 0) fail("batch_size", "must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate", "must be > 0");
  if (n_segments == 0) fail("n_segments", "must be >= 1");
  if (seg_len == 0) fail("seg_len", "must be >= 1");
  if (iterations == 0) fail("iterations", "must be >= 1");
  model.validate();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs_per_iteration", c.epochs_per_iteration},
           {"switch_epoch", c.switch_epoch},
           {"slow_update_every", c.slow_update_every},
           {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"n_segments", c.n_segments},
           {"seg_len", c.seg_len},
           {"iterations", c.iterations},
           {"seed", c.seed},
           {"pretrain_epochs", c.pretrain_epochs},
           {"adversarial", c.adversarial},
           {"zero_lambda", c.zero_lambda},
           {"update_discriminator", c.update_discriminator},
           {"use_pseudo_targets", c.use_pseudo_targets},
           {"model", c.model}};
}

void from_json(const json& j, TrainConfig& c) {
  detail::StrictReader(j, "train")
      .field("epochs_per_iteration", c.epochs_per_iteration)
      .field("switch_epoch", c.switch_epoch)
      .field("slow_update_every", c.slow_update_every)
      .field("batch_size", c.batch_size)
      .field("learning_rate", c.learning_rate)
      .field("n_segments", c.n_segments)
      .field("seg_len", c.seg_len)
      .field("iterations", c.iterations)
      .field("seed", c.seed)
      .field("pretrain_epochs", c.pretrain_epochs)
      .field("adversarial", c.adversarial)
      .field("zero_lambda", c.zero_lambda)
      .field("update_discriminator", c.update_discriminator)
      .field("use_pseudo_targets", c.use_pseudo_targets)
      .field("model", c.model)
      .read();
}

double lambda_schedule(std::size_t current_epoch, std::size_t total_epochs) {
  if (total_epochs == 0) throw ContractError("lambda_schedule: total_epochs must be >= 1");
  if (current_epoch > total_epochs) {
    throw ContractError(fmt::format("lambda_schedule: epoch {} beyond total {}", current_epoch,
                                    total_epochs));
  }
  const double progress = static_cast<double>(current_epoch) / static_cast<double>(total_epochs);
  return 2.0 / (1.0 + std::exp(-2.0 * progress)) - 1.0;
}

UpdateFlags update_flags(std::size_t epoch, std::size_t batch_idx, const TrainConfig& config) {
  const bool slow_tick = (batch_idx + 1) % config.slow_update_every == 0;
  if (epoch < config.switch_epoch) return {slow_tick, true};
  return {true, slow_tick};
}

TrainerState TrainerState::fresh(net::ModelParams params, std::uint64_t segment_seed) {
  TrainerState s;
  s.encoder_opt = tg::make_opt_state(params.encoder.tensors);
  s.decoder_opt = tg::make_opt_state(params.decoder.tensors);
  s.disc_opt = tg::make_opt_state(params.discriminator.tensors);
  s.params = std::move(params);
  s.segment_rng.seed(segment_seed);
  return s;
}

LossBreakdown training_step(std::span<const Example> batch_in, TrainerState& state, double lambda,
                            UpdateFlags flags, const TrainConfig& config) {
  if (batch_in.empty()) throw ContractError("training_step: empty batch");
  std::vector<Example> batch(batch_in.begin(), batch_in.end());
  std::sort(batch.begin(), batch.end(), [](const Example& a, const Example& b) {
    return a.utterance->id < b.utterance->id;
  });

  std::size_t n_silent = 0;
  for (const Example& e : batch) n_silent += e.utterance->mode == corpus::Mode::kSilent ? 1 : 0;
  const std::size_t n_vocalized = batch.size() - n_silent;
  const double n_all = static_cast<double>(batch.size());

  // Segment offsets are drawn up front, in member order, so results do not
  // depend on how members are scheduled.
  std::vector<SegmentPlan> plans;
  if (config.adversarial) {
    for (const Example& e : batch) {
      plans.push_back(plan_segments(e.utterance->frames(), config.n_segments, config.seg_len,
                                    state.segment_rng));
    }
  }

  const net::ModelParams& params = state.params;
  std::vector<MemberResult> results(batch.size());
  parallel_for(batch.size(), [&](std::size_t m) {
    const Example& ex = batch[m];
    const corpus::Utterance& u = *ex.utterance;
    const bool silent = u.mode == corpus::Mode::kSilent;
    tg::Tape tape;
    const auto enc = net::bind(tape, params.encoder, true);
    const auto dec = net::bind(tape, params.decoder, true);
    const tg::Node encoded =
        net::encode(tape, enc, tape.constant(u.tongue), tape.constant(u.lip), params.dims);
    const tg::Node target = tape.constant(*ex.target);
    const net::DecodeNodes pred = net::decode(tape, dec, encoded, target, params.dims);
    const tg::Node recon = tg::scale(
        tape,
        tg::add(tape, tg::squared_error_mean(tape, pred.pre, target),
                tg::squared_error_mean(tape, pred.post, target)),
        0.5);
    const double weight = 1.0 / static_cast<double>(silent ? n_silent : n_vocalized);
    tg::Node objective = tg::scale(tape, recon, weight);

    MemberResult& r = results[m];
    r.recon = tape.value(recon)[0];
    std::vector<tg::Node> disc;
    if (config.adversarial) {
      disc = net::bind(tape, params.discriminator, true);
      const tg::Node spliced = splice_segments(tape, encoded, plans[m]);
      const net::DiscOutput out = net::discriminate(tape, disc, spliced, lambda, params.dims);
      const tg::Node ce = tg::softmax_cross_entropy(
          tape, out.logits, {silent ? net::kSilentLabel : net::kVocalizedLabel});
      r.disc = tape.value(ce)[0];
      objective = tg::add(tape, objective, tg::scale(tape, ce, 1.0 / n_all));
    }
    const tg::GradMap grads = tape.backward(objective);
    r.encoder_grads = collect(grads, enc);
    r.decoder_grads = collect(grads, dec);
    if (config.adversarial) r.disc_grads = collect(grads, disc);
  });

  LossBreakdown loss;
  loss.lambda = lambda;
  std::vector<Tensor> enc_grads, dec_grads, disc_grads;
  for (std::size_t m = 0; m < batch.size(); ++m) {
    MemberResult& r = results[m];
    if (batch[m].utterance->mode == corpus::Mode::kSilent) {
      loss.recon_s += r.recon;
    } else {
      loss.recon_v += r.recon;
    }
    loss.disc += r.disc;
    add_into(enc_grads, std::move(r.encoder_grads));
    add_into(dec_grads, std::move(r.decoder_grads));
    if (config.adversarial) add_into(disc_grads, std::move(r.disc_grads));
  }
  if (n_silent > 0) loss.recon_s /= static_cast<double>(n_silent);
  if (n_vocalized > 0) loss.recon_v /= static_cast<double>(n_vocalized);
  loss.disc /= n_all;
  loss.total = loss.recon_s + loss.recon_v - lambda * loss.disc;
  if (!std::isfinite(loss.total) || !std::isfinite(loss.disc)) {
    throw NumericError(fmt::format("non-finite loss (recon_s={}, recon_v={}, disc={})",
                                   loss.recon_s, loss.recon_v, loss.disc));
  }

  accumulate(state.encoder_acc, enc_grads);
  accumulate(state.decoder_acc, dec_grads);
  if (config.adversarial) accumulate(state.disc_acc, disc_grads);

  if (flags.update_encdec) {
    flush(state.encoder_acc, state.params.encoder, state.encoder_opt, config.learning_rate);
    flush(state.decoder_acc, state.params.decoder, state.decoder_opt, config.learning_rate);
  }
  if (config.adversarial && flags.update_disc) {
    if (config.update_discriminator) {
      flush(state.disc_acc, state.params.discriminator, state.disc_opt, config.learning_rate);
    } else {
      state.disc_acc = {};
    }
  }
  return loss;
}

PretrainResult pretrain_vocalized(const corpus::Corpus& corpus, const TrainConfig& config_in) {
  TrainConfig config = config_in;
  config.model = dims_for(corpus, config.model);
  config.validate();
  config.adversarial = false;
  const std::vector<Example> examples = vocalized_examples(corpus);
  if (examples.empty()) throw DataError("pretrain: no vocalized training utterances");

  PretrainResult result;
  TrainerState state = TrainerState::fresh(net::init_params(config.model, config.seed), 0);
  for (std::size_t epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
    auto rng = derived_rng(config.seed, RngTag::kPretrain, epoch);
    std::vector<LossBreakdown> per_batch;
    for (const auto& batch : make_batches(examples, config.batch_size, rng)) {
      per_batch.push_back(training_step(batch, state, 0.0, {true, false}, config));
    }
    result.history.push_back(mean_breakdown(per_batch, 0.0));
  }
  result.params = std::move(state.params);
  return result;
}

std::vector<LossBreakdown> run_epochs(const corpus::Corpus& corpus, const PseudoSelection& pseudo,
                                      TrainerState& state, const TrainConfig& config,
                                      int iteration) {
  config.validate();
  std::vector<Example> examples = vocalized_examples(corpus);
  for (const align::PseudoTarget& t : pseudo.targets) {
    if (!config.use_pseudo_targets || !pseudo.selection.is_reliable(t.silent_id)) continue;
    examples.push_back({&corpus.utterance(t.silent_id), &t.acoustic});
  }
  if (examples.empty()) throw DataError("run_epochs: no vocalized or reliable silent examples");
  std::sort(examples.begin(), examples.end(), [](const Example& a, const Example& b) {
    return a.utterance->id < b.utterance->id;
  });

  std::vector<LossBreakdown> history;
  const auto iter = static_cast<std::uint64_t>(iteration);
  for (std::size_t epoch = 0; epoch < config.epochs_per_iteration; ++epoch) {
    const double lambda =
        config.zero_lambda ? 0.0 : lambda_schedule(epoch, config.epochs_per_iteration);
    auto rng = derived_rng(config.seed, RngTag::kShuffle, iter, epoch);
    const auto batches = make_batches(examples, config.batch_size, rng);
    std::vector<LossBreakdown> per_batch;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      per_batch.push_back(
          training_step(batches[b], state, lambda, update_flags(epoch, b, config), config));
    }
    history.push_back(mean_breakdown(per_batch, lambda));
  }
  return history;
}

IterativeResult iterative_train(const corpus::Corpus& corpus, const TrainConfig& config_in,
                                net::ModelParams initial, const IterationCallback& on_iteration) {
  TrainConfig config = config_in;
  config.model = initial.dims;
  config.validate();
  const auto train_silent = corpus.select(corpus::Mode::kSilent, corpus::Split::kTrain);

  IterativeResult result;
  result.params = std::move(initial);
  for (std::size_t it = 1; it <= config.iterations; ++it) {
    const int iteration = static_cast<int>(it);
    PseudoSelection pseudo;
    pseudo.targets = align::generate_pseudo_targets(corpus, train_silent, result.params, iteration);
    std::vector<double> costs;
    for (const auto& t : pseudo.targets) costs.push_back(t.cost);
    const double epsilon = costs.empty() ? 0.0 : align::compute_threshold(costs);
    pseudo.selection = align::select_reliable(pseudo.targets, epsilon);
    align::apply_selection(pseudo.targets, pseudo.selection);
    if (it == 1) result.eval_excluded = pseudo.selection.excluded_speakers;

    TrainerState state = TrainerState::fresh(
        std::move(result.params), derived_rng(config.seed, RngTag::kSegments, it)());
    IterationStats stats;
    stats.iteration = iteration;
    stats.epsilon = epsilon;
    stats.reliable_count = pseudo.selection.reliable_ids.size();
    stats.excluded_speakers = pseudo.selection.excluded_speakers;
    stats.excluded_count = stats.excluded_speakers.size();
    stats.history = run_epochs(corpus, pseudo, state, config, iteration);
    result.params = std::move(state.params);
    stats.report = metrics::evaluate(result.params, corpus, iteration, result.eval_excluded);
    if (on_iteration) on_iteration(stats, result.params, pseudo);
    result.stats.push_back(std::move(stats));
  }
  return result;
}

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::kFull: return "full";
    case RunMode::kNoIts: return "no_its";
    case RunMode::kNoDat: return "no_dat";
    case RunMode::kBaseline: return "baseline";
  }
  return "full";
}

RunMode parse_run_mode(const std::string& s) {
  if (s == "full") return RunMode::kFull;
  if (s == "no_its") return RunMode::kNoIts;
  if (s == "no_dat") return RunMode::kNoDat;
  if (s == "baseline") return RunMode::kBaseline;
  throw UsageError(fmt::format("unknown mode '{}' (expected full, no_its, no_dat or baseline)", s));
}

TrainConfig configure_for_mode(TrainConfig config, RunMode mode) {
  switch (mode) {
    case RunMode::kNoIts:
      config.iterations = 1;
      break;
    case RunMode::kNoDat:
      config.adversarial = false;
      config.zero_lambda = true;
      config.update_discriminator = false;
      break;
    case RunMode::kBaseline:
      config.iterations = 1;
      config.adversarial = false;
      config.zero_lambda = true;
      config.update_discriminator = false;
      config.use_pseudo_targets = false;
      break;
    case RunMode::kFull:
      break;
  }
  return config;
}

net::ModelDims dims_for(const corpus::Corpus& corpus, net::ModelDims base) {
  const corpus::CorpusConfig& c = corpus.config();
  base.tongue = c.tongue_dim;
  base.lip = c.lip_dim;
  base.acoustic = c.acoustic_dim;
  base.rate_ratio = c.rate_ratio;
  return base;
}

std::vector<std::string> excluded_speakers_for(const corpus::Corpus& corpus,
                                               const net::ModelParams& params) {
  const auto train_silent = corpus.select(corpus::Mode::kSilent, corpus::Split::kTrain);
  if (train_silent.empty()) return {};
  const auto targets = align::generate_pseudo_targets(corpus, train_silent, params, 1);
  std::vector<double> costs;
  for (const auto& t : targets) costs.push_back(t.cost);
  return align::select_reliable(targets, align::compute_threshold(costs)).excluded_speakers;
}

}  // namespace silencio::train
