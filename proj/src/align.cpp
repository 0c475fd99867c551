#include "silencio/align.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "silencio/errors.hpp"
#include "silencio/matrix_io.hpp"
#include "silencio/parallel.hpp"

namespace silencio::align {

bool SelectionResult::is_reliable(const std::string& id) const {
  return std::binary_search(reliable_ids.begin(), reliable_ids.end(), id);
}

std::vector<PseudoTarget> generate_pseudo_targets(const corpus::Corpus& corpus,
                                                  std::span<const corpus::Utterance* const> silent,
                                                  const net::ModelParams& params, int iteration) {
  const std::size_t ratio = params.dims.rate_ratio;
  std::vector<PseudoTarget> out(silent.size());
  parallel_for(silent.size(), [&](std::size_t n) {
    const corpus::Utterance& s = *silent[n];
    if (s.mode != corpus::Mode::kSilent) {
      throw DataError(fmt::format("{}: pseudo targets need a silent utterance", s.id));
    }
    if (s.parallel_id.empty()) throw DataError(fmt::format("{}: missing parallel twin", s.id));
    const corpus::Utterance& v = corpus.twin(s);
    if (!v.acoustic) {
      throw DataError(fmt::format("{}: parallel twin {} has no natural acoustics", s.id, v.id));
    }
    const net::EncodedSequence fv = net::encode(v.id, v.tongue, v.lip, params);
    const net::EncodedSequence fs = net::encode(s.id, s.tongue, s.lip, params);
    PseudoTarget& t = out[n];
    t.silent_id = s.id;
    t.speaker = s.speaker;
    t.iteration = iteration;
    t.path = dtw(pairwise_distance(fv.frames, fs.frames));
    t.cost = t.path.normalized_cost;
    t.acoustic = warp_acoustic(*v.acoustic, t.path, ratio);
  });
  return out;
}

std::vector<PseudoTarget> generate_pseudo_targets(const corpus::Corpus& corpus,
                                                  const net::ModelParams& params, int iteration) {
  std::vector<const corpus::Utterance*> silent;
  for (const corpus::Utterance& u : corpus.utterances())
    if (u.mode == corpus::Mode::kSilent) silent.push_back(&u);
  return generate_pseudo_targets(corpus, silent, params, iteration);
}

double compute_threshold(std::span<const double> costs) {
  if (costs.empty()) throw ContractError("compute_threshold: no costs");
  for (double c : costs)
    if (!std::isfinite(c)) throw ContractError("compute_threshold: non-finite cost");
  return std::accumulate(costs.begin(), costs.end(), 0.0) / static_cast<double>(costs.size());
}

SelectionResult select_reliable(std::span<const PseudoTarget> targets, double epsilon) {
  SelectionResult r;
  r.epsilon = epsilon;
  std::set<std::string> speakers, speakers_with_reliable;
  for (const PseudoTarget& t : targets) {
    r.costs[t.silent_id] = t.cost;
    speakers.insert(t.speaker);
    if (t.cost < epsilon) {
      r.reliable_ids.push_back(t.silent_id);
      speakers_with_reliable.insert(t.speaker);
    }
  }
  std::sort(r.reliable_ids.begin(), r.reliable_ids.end());
  std::set_difference(speakers.begin(), speakers.end(), speakers_with_reliable.begin(),
                      speakers_with_reliable.end(), std::back_inserter(r.excluded_speakers));
  return r;
}

void apply_selection(std::span<PseudoTarget> targets, const SelectionResult& selection) {
  for (PseudoTarget& t : targets) t.reliable = selection.is_reliable(t.silent_id);
}

void write_pseudo_targets(const std::filesystem::path& dir, int iteration,
                          std::span<const PseudoTarget> targets) {
  const std::filesystem::path out_dir = dir / "pseudo" / fmt::format("iter{}", iteration);
  std::filesystem::create_directories(out_dir);
  std::string csv = "utterance_id,speaker_id,cost,reliable\n";
  for (const PseudoTarget& t : targets) {
    io::write_matrix(out_dir / (t.silent_id + ".acoustic.ataf"), t.acoustic);
    csv += fmt::format("{},{},{},{}\n", t.silent_id, t.speaker, t.cost, t.reliable ? 1 : 0);
  }
  std::ofstream out(out_dir / "costs.csv", std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(fmt::format("{}: cannot write costs.csv", out_dir.string()));
  out << csv;
}

}  // namespace silencio::align
