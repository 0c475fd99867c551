#pragma once

// Command implementations behind the `silencio` executable. Each command
// reads configs and corpora from disk and writes its outputs under an
// output directory; run_cli maps failures to exit codes.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "silencio/metrics.hpp"
#include "silencio/netblocks.hpp"
#include "silencio/synthcorpus.hpp"
#include "silencio/trainer.hpp"

namespace silencio::metrics {

void to_json(nlohmann::json& j, const ProbeConfig& c);
void from_json(const nlohmann::json& j, ProbeConfig& c);

}  // namespace silencio::metrics

namespace silencio::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

struct RunConfig {
  corpus::CorpusConfig corpus;
  train::TrainConfig train;
  metrics::ProbeConfig probe;
  train::RunMode mode = train::RunMode::kFull;
  std::optional<std::uint64_t> seed;  // overrides corpus.seed and train.seed
  std::vector<std::uint64_t> ablation_seeds{1, 2, 3, 4, 5};

  // Copies of the sub-configs with `seed` applied.
  corpus::CorpusConfig effective_corpus() const;
  train::TrainConfig effective_train() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

// UsageError naming the file and the parse position or offending field.
// An absent path yields the defaults.
RunConfig load_run_config(const std::optional<std::filesystem::path>& path);

struct Checkpoint {
  net::ModelParams params;
  nlohmann::json meta;  // stage, iteration, mode, seed, excluded_speakers, config echo
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
// UsageError when the file is missing; FormatError when malformed or when the
// tensor shapes disagree with the stored dims.
Checkpoint load_checkpoint(const std::filesystem::path& path);

void cmd_gen(const RunConfig& config, const std::filesystem::path& out_dir);
void cmd_pretrain(const std::filesystem::path& corpus_dir, const RunConfig& config,
                  const std::filesystem::path& out_dir);
void cmd_train(const std::filesystem::path& corpus_dir, const std::filesystem::path& checkpoint,
               const RunConfig& config, const std::filesystem::path& out_dir);
void cmd_eval(const std::filesystem::path& corpus_dir, const std::filesystem::path& checkpoint,
              const std::filesystem::path& out_dir);
void cmd_ablate(const std::filesystem::path& corpus_dir, const RunConfig& config,
                const std::filesystem::path& out_dir);

// Parses argv, runs one command and returns its exit status.
int run_cli(int argc, char** argv);

}  // namespace silencio::cli
