#pragma once

// Pseudo acoustic targets for silent utterances: encode both parallel twins,
// align the encoder outputs with DTW, and warp the vocalized acoustics onto
// the silent time base. Samples whose normalized alignment cost is below a
// threshold form the reliable training set.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "silencio/dtw.hpp"
#include "silencio/netblocks.hpp"
#include "silencio/synthcorpus.hpp"

namespace silencio::align {

struct PseudoTarget {
  std::string silent_id;
  std::string speaker;
  Tensor acoustic;     // (k*T') x d_a
  double cost = 0.0;   // normalized DTW cost
  bool reliable = false;
  int iteration = 0;
  AlignmentPath path;  // vocalized frame i <-> silent frame j
};

struct SelectionResult {
  double epsilon = 0.0;
  std::vector<std::string> reliable_ids;  // sorted
  std::map<std::string, double> costs;
  std::vector<std::string> excluded_speakers;  // sorted

  bool is_reliable(const std::string& id) const;
};

// One target per utterance in `silent`, in the given order. DataError when a
// silent utterance has no vocalized twin with natural acoustics.
std::vector<PseudoTarget> generate_pseudo_targets(const corpus::Corpus& corpus,
                                                  std::span<const corpus::Utterance* const> silent,
                                                  const net::ModelParams& params, int iteration);

// Every silent utterance of the corpus.
std::vector<PseudoTarget> generate_pseudo_targets(const corpus::Corpus& corpus,
                                                  const net::ModelParams& params, int iteration);

// Arithmetic mean. ContractError on an empty list.
double compute_threshold(std::span<const double> costs);

// Reliable: cost < epsilon (strict). A speaker is excluded when none of its
// utterances among `targets` is reliable.
SelectionResult select_reliable(std::span<const PseudoTarget> targets, double epsilon);

// Sets each target's reliable flag from `selection`.
void apply_selection(std::span<PseudoTarget> targets, const SelectionResult& selection);

// Writes <dir>/pseudo/iter<N>/<id>.acoustic.ataf and costs.csv
// (utterance_id,speaker_id,cost,reliable).
void write_pseudo_targets(const std::filesystem::path& dir, int iteration,
                          std::span<const PseudoTarget> targets);

}  // namespace silencio::align
