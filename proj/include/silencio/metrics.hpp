#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "silencio/dtw.hpp"
#include "silencio/netblocks.hpp"
#include "silencio/synthcorpus.hpp"

namespace silencio::metrics {

// Mean over all entries of the squared difference. ContractError on shape mismatch.
double mse_seq(const Tensor& a, const Tensor& b);

// Mel-cepstral distortion in dB: mean over frames of
// (10 / ln 10) * sqrt(2 * sum_d (a - b)^2).
double mcd(const Tensor& a, const Tensor& b);

// Mean over silent frames j of |mean(V(j)) - warp(j)|, V(j) being the
// vocalized indices aligned to j.
double alignment_error(const align::AlignmentPath& path, const std::vector<std::size_t>& warp);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};

// Ordinary least squares. ContractError for < 2 points or constant xs.
LinearFit linear_fit(std::span<const double> xs, std::span<const double> ys);

struct ProbeConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 16;
  double learning_rate = 3e-3;
  std::size_t n_segments = 8;
  std::size_t seg_len = 10;
  std::uint64_t seed = 4242;
  friend bool operator==(const ProbeConfig&, const ProbeConfig&) = default;
};

struct ProbeExample {
  Tensor frames;  // encoded sequence, T x d_f
  int label = 0;  // net::kVocalizedLabel or net::kSilentLabel
};

// Trains a fresh discriminator (plain minimization, no reversal) on `train`
// and returns its accuracy on `held_out`.
double probe_accuracy(std::span<const ProbeExample> train, std::span<const ProbeExample> held_out,
                      const net::ModelDims& dims, const ProbeConfig& config);

// Probe on frozen encoder outputs: training split to fit, val+test to score.
// DataError when either side is empty.
double probe_domain_accuracy(const net::ModelParams& params, const corpus::Corpus& corpus,
                             const ProbeConfig& config);

struct UtteranceRecord {
  std::string id;
  std::string speaker;
  corpus::Mode mode = corpus::Mode::kVocalized;
  double mse = 0.0;
  double mcd = 0.0;
  std::optional<double> pseudo_fidelity;  // silent only
  std::optional<double> alignment_error;  // silent only
};

struct Aggregate {
  corpus::Mode mode = corpus::Mode::kVocalized;
  std::string metric;
  double mean = 0.0;
  double ci95 = 0.0;  // 1.96 * sample stddev / sqrt(n)
  std::size_t n = 0;
};

struct EvalReport {
  int iteration = 0;
  std::vector<UtteranceRecord> records;
  std::vector<Aggregate> aggregates;

  // NaN when the aggregate is absent.
  double mean(corpus::Mode mode, const std::string& metric) const;
};

std::vector<Aggregate> aggregate(std::span<const UtteranceRecord> records);

// Free-running decode of every test utterance. Silent references are the
// ground-truth oracle; silent utterances of `excluded_speakers` are skipped.
EvalReport evaluate(const net::ModelParams& params, const corpus::Corpus& corpus, int iteration,
                    std::span<const std::string> excluded_speakers = {});

// per_utterance.csv, aggregate.csv and summary.json under `dir`.
void write_report(const std::filesystem::path& dir, const EvalReport& report);

// Shortest round-trip decimal form used in every CSV.
std::string format_double(double v);

}  // namespace silencio::metrics
