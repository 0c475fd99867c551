#pragma once

// Synthetic parallel vocalized/silent corpora with known ground truth.
//
// Each utterance pair shares a smooth latent trajectory z. The vocalized
// twin observes z through speaker-specific mixing matrices (tongue, lip) and
// emits acoustics tanh(z G) H through global maps. The silent twin replays
// the clean streams along a random monotone stretch warp w, attenuated by an
// amplitude factor alpha and re-noised: longer, weaker, noisier.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "silencio/tensor.hpp"

namespace silencio::corpus {

enum class Mode { kVocalized, kSilent };
enum class Split { kTrain, kVal, kTest };

std::string to_string(Mode mode);
std::string to_string(Split split);
Mode parse_mode(const std::string& s);
Split parse_split(const std::string& s);

struct CorpusConfig {
  std::size_t speakers = 8;
  std::size_t utterances_per_speaker = 18;  // silent utterances; each has a vocalized twin
  std::size_t min_length = 16;              // vocalized articulatory frames
  std::size_t max_length = 32;
  double stretch_min = 1.2;
  double stretch_max = 1.6;
  double alpha_min = 0.6;
  double alpha_max = 0.9;
  double noise = 0.05;  // std of additive stream noise, both modes
  std::size_t latent_dim = 4;
  std::size_t smooth_window = 5;
  std::size_t tongue_dim = 6;
  std::size_t lip_dim = 4;
  std::size_t acoustic_dim = 8;
  std::size_t rate_ratio = 1;
  std::uint64_t seed = 7;

  // ContractError naming the offending field.
  void validate() const;
  friend bool operator==(const CorpusConfig&, const CorpusConfig&) = default;
};

void to_json(nlohmann::json& j, const CorpusConfig& c);
// Strict: unknown keys raise UsageError naming the key; missing keys keep defaults.
void from_json(const nlohmann::json& j, CorpusConfig& c);

struct Utterance {
  std::string id;
  std::string speaker;
  Mode mode = Mode::kVocalized;
  Split split = Split::kTrain;
  Tensor tongue;                   // T x d_t
  Tensor lip;                      // T x d_l
  std::optional<Tensor> acoustic;  // (k*T) x d_a, vocalized only
  std::string parallel_id;

  std::size_t frames() const { return tongue.rows(); }
  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct GroundTruth {
  std::string silent_id;
  std::vector<std::size_t> warp;  // silent frame -> vocalized frame
  Tensor oracle;                  // vocalized acoustics warped by `warp`
  double alpha = 1.0;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

class Corpus {
 public:
  Corpus() = default;
  Corpus(CorpusConfig config, std::vector<Utterance> utterances, std::vector<GroundTruth> truth);

  const CorpusConfig& config() const { return config_; }
  const std::vector<Utterance>& utterances() const { return utterances_; }
  const std::vector<GroundTruth>& ground_truth() const { return truth_; }

  // DataError when the id is unknown.
  const Utterance& utterance(const std::string& id) const;
  const Utterance& twin(const Utterance& u) const;
  const GroundTruth* truth_for(const std::string& silent_id) const;

  // Utterances with the given mode and split, in corpus order.
  std::vector<const Utterance*> select(Mode mode, Split split) const;
  std::vector<std::string> speakers() const;

  friend bool operator==(const Corpus& a, const Corpus& b) {
    return a.config_ == b.config_ && a.utterances_ == b.utterances_ && a.truth_ == b.truth_;
  }

 private:
  CorpusConfig config_;
  std::vector<Utterance> utterances_;
  std::vector<GroundTruth> truth_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::size_t> truth_index_;
};

struct SpeakerProfile {
  std::string id;
  Tensor tongue_mix;  // d_z x d_t
  Tensor lip_mix;     // d_z x d_l
};

// Global latent-to-acoustic maps shared by every speaker.
struct AcousticMap {
  Tensor g;  // d_z x d_h
  Tensor h;  // d_h x d_a
};

struct Warp {
  std::size_t silent_length = 0;
  std::vector<std::size_t> map;  // silent index -> vocalized index
};

// Draws s ~ U[stretch_min, stretch_max], T' = round(s*T) and a monotone warp
// from T' sorted uniform draws on [0, T-1]. The warp is forced through both
// endpoints with steps of 0 or 1, so every vocalized frame is used.
Warp sample_warp(std::size_t length, double stretch_min, double stretch_max,
                 std::mt19937_64& rng);

struct SynthPair {
  Utterance vocalized;
  Utterance silent;
  GroundTruth truth;
};

SynthPair synth_pair(const CorpusConfig& config, const AcousticMap& acoustic_map,
                     const SpeakerProfile& speaker, std::size_t utt_index, std::size_t length,
                     std::mt19937_64& rng);

AcousticMap make_acoustic_map(const CorpusConfig& config, std::mt19937_64& rng);
SpeakerProfile make_speaker(const CorpusConfig& config, std::size_t speaker_index,
                            std::mt19937_64& rng);

// Per speaker: one silent utterance (with its twin) to val, one to test,
// the rest to train.
Corpus generate_corpus(const CorpusConfig& config);

// Layout: manifest.json, streams/<id>.{tongue,lip,acoustic}.ataf,
// truth/<id>.{warp.csv,oracle.ataf}.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace silencio::corpus
