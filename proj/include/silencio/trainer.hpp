#pragma once

// Joint training on vocalized utterances (natural targets) and reliable
// silent utterances (pseudo targets) with a gradient-reversed domain
// discriminator, wrapped in rounds of pseudo-target regeneration.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "silencio/align.hpp"
#include "silencio/metrics.hpp"
#include "silencio/netblocks.hpp"
#include "silencio/optim.hpp"
#include "silencio/synthcorpus.hpp"

namespace silencio::net {

void to_json(nlohmann::json& j, const ModelDims& d);
void from_json(const nlohmann::json& j, ModelDims& d);

}  // namespace silencio::net

namespace silencio::train {

struct TrainConfig {
  std::size_t epochs_per_iteration = 60;
  std::size_t switch_epoch = 30;
  std::size_t slow_update_every = 5;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  std::size_t n_segments = 8;
  std::size_t seg_len = 10;
  std::size_t iterations = 3;
  std::uint64_t seed = 1;
  std::size_t pretrain_epochs = 40;
  bool adversarial = true;            // build the discriminator branch at all
  bool zero_lambda = false;           // force lambda = 0 in every epoch
  bool update_discriminator = true;   // allow discriminator optimizer steps
  bool use_pseudo_targets = true;     // train on reliable silent utterances
  net::ModelDims model;               // rate_ratio is taken from the corpus

  // ContractError naming the offending field.
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossBreakdown {
  double recon_s = 0.0;
  double recon_v = 0.0;
  double disc = 0.0;
  double lambda = 0.0;
  double total = 0.0;  // recon_s + recon_v - lambda * disc
};

struct UpdateFlags {
  bool update_encdec = false;
  bool update_disc = false;
  friend bool operator==(const UpdateFlags&, const UpdateFlags&) = default;
};

// 2 / (1 + exp(-2 * current / total)) - 1, i.e. tanh(current / total).
double lambda_schedule(std::size_t current_epoch, std::size_t total_epochs);

// Before switch_epoch the discriminator steps every batch and the
// encoder/decoder every slow_update_every-th batch; afterwards the roles swap.
UpdateFlags update_flags(std::size_t epoch, std::size_t batch_idx, const TrainConfig& config);

/// One supervised example: an utterance and the acoustic target it is trained against.
struct Example {
  const corpus::Utterance* utterance = nullptr;
  const Tensor* target = nullptr;  // natural (vocalized) or pseudo (silent) acoustics
};

struct GradAccumulator {
  std::vector<Tensor> sum;
  std::size_t batches = 0;
};

/// Parameters plus optimizer and accumulation state carried between steps.
struct TrainerState {
  net::ModelParams params;
  tg::OptState encoder_opt, decoder_opt, disc_opt;
  GradAccumulator encoder_acc, decoder_acc, disc_acc;
  std::mt19937_64 segment_rng;

  static TrainerState fresh(net::ModelParams params, std::uint64_t segment_seed);
};

// Forward/backward over the batch (members reduced in utterance-id order),
// gradient accumulation, and optimizer steps for flagged groups. Gradients
// for the encoder are scaled by -lambda on the discriminator path.
// ContractError on an empty batch; NumericError on a non-finite loss.
LossBreakdown training_step(std::span<const Example> batch, TrainerState& state, double lambda,
                            UpdateFlags flags, const TrainConfig& config);

struct PretrainResult {
  net::ModelParams params;
  std::vector<LossBreakdown> history;  // one entry per epoch
};

// Supervised encoder+decoder training on vocalized training utterances.
// DataError when there are none.
PretrainResult pretrain_vocalized(const corpus::Corpus& corpus, const TrainConfig& config);

// Training-split silent pseudo targets plus their reliability selection.
struct PseudoSelection {
  std::vector<align::PseudoTarget> targets;
  align::SelectionResult selection;
};

// One round of joint training. History has one entry per epoch.
std::vector<LossBreakdown> run_epochs(const corpus::Corpus& corpus,
                                      const PseudoSelection& pseudo, TrainerState& state,
                                      const TrainConfig& config, int iteration);

struct IterationStats {
  int iteration = 0;
  double epsilon = 0.0;
  std::size_t reliable_count = 0;
  std::size_t excluded_count = 0;
  std::vector<std::string> excluded_speakers;
  std::vector<LossBreakdown> history;
  metrics::EvalReport report;
};

using IterationCallback = std::function<void(const IterationStats&, const net::ModelParams&,
                                             const PseudoSelection&)>;

struct IterativeResult {
  net::ModelParams params;
  std::vector<IterationStats> stats;
  std::vector<std::string> eval_excluded;  // speakers excluded by the first round
};

IterativeResult iterative_train(const corpus::Corpus& corpus, const TrainConfig& config,
                                net::ModelParams initial,
                                const IterationCallback& on_iteration = {});

enum class RunMode { kFull, kNoIts, kNoDat, kBaseline };

std::string to_string(RunMode mode);
RunMode parse_run_mode(const std::string& s);  // UsageError on unknown names

// no_its: one iteration; no_dat: no discriminator, lambda = 0; baseline:
// one round of vocalized-only supervised training; full: unchanged.
TrainConfig configure_for_mode(TrainConfig config, RunMode mode);

// Model dims for `corpus`: stream widths and rate ratio copied from its config.
net::ModelDims dims_for(const corpus::Corpus& corpus, net::ModelDims base);

// Speakers whose training-split silent utterances are all unreliable under
// `params`' encoder with the mean-cost threshold.
std::vector<std::string> excluded_speakers_for(const corpus::Corpus& corpus,
                                               const net::ModelParams& params);

}  // namespace silencio::train
