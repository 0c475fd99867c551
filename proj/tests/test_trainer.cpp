#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "silencio/errors.hpp"
#include "silencio/segments.hpp"
#include "silencio/trainer.hpp"
#include "test_support.hpp"

using namespace silencio;
using corpus::Mode;
using corpus::Split;
using train::Example;
using train::TrainConfig;

namespace {

TrainConfig quick_config() {
  TrainConfig c;
  c.epochs_per_iteration = 4;
  c.switch_epoch = 2;
  c.batch_size = 4;
  c.pretrain_epochs = 3;
  c.n_segments = 3;
  c.seg_len = 6;
  c.seed = 3;
  return c;
}

const corpus::Corpus& small_corpus() {
  static const corpus::Corpus c = corpus::generate_corpus(testing::small_corpus_config());
  return c;
}

net::ModelParams small_params(std::uint64_t seed) {
  return net::init_params(train::dims_for(small_corpus(), net::ModelDims{}), seed);
}

// Silent members are trained against their oracle so no alignment is needed.
std::vector<Example> all_examples(const corpus::Corpus& c) {
  std::vector<Example> out;
  for (const auto& u : c.utterances()) {
    if (u.split != Split::kTrain) continue;
    out.push_back({&u, u.mode == Mode::kSilent ? &c.truth_for(u.id)->oracle : &*u.acoustic});
  }
  return out;
}

double mse(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

bool same_weights(const net::ParamGroup& a, const net::ParamGroup& b) { return a.tensors == b.tensors; }

}  // namespace

TEST_CASE("lambda schedule") {
  CHECK(train::lambda_schedule(0, 100) == 0.0);
  CHECK(train::lambda_schedule(100, 100) == doctest::Approx(0.761594).epsilon(1e-6));
  CHECK(train::lambda_schedule(50, 100) == doctest::Approx(0.462117).epsilon(1e-6));
  for (std::size_t e = 1; e <= 60; ++e) {
    CHECK(train::lambda_schedule(e, 60) > train::lambda_schedule(e - 1, 60));
    CHECK(train::lambda_schedule(e, 60) <= std::tanh(1.0));
  }
}

TEST_CASE("update flags follow the slow/fast schedule") {
  TrainConfig c;
  CHECK(train::update_flags(0, 0, c) == train::UpdateFlags{false, true});
  CHECK(train::update_flags(0, 4, c) == train::UpdateFlags{true, true});
  CHECK(train::update_flags(c.switch_epoch, 0, c) == train::UpdateFlags{true, false});
  CHECK(train::update_flags(c.switch_epoch + 3, 9, c) == train::UpdateFlags{true, true});
  for (std::size_t batches : {1u, 4u, 5u, 13u, 20u}) {
    for (std::size_t epoch : {std::size_t{0}, c.switch_epoch - 1, c.switch_epoch, c.epochs_per_iteration - 1}) {
      std::size_t encdec = 0, disc = 0;
      for (std::size_t b = 0; b < batches; ++b) {
        const auto f = train::update_flags(epoch, b, c);
        CHECK((f.update_encdec || f.update_disc));
        encdec += f.update_encdec;
        disc += f.update_disc;
      }
      const std::size_t slow = batches / c.slow_update_every;
      CHECK(encdec == (epoch < c.switch_epoch ? slow : batches));
      CHECK(disc == (epoch < c.switch_epoch ? batches : slow));
    }
  }
}

TEST_CASE("segment sampling") {
  std::mt19937_64 rng(1);
  const auto big = train::sample_segments(Tensor(100, 3), 32, 50, rng);
  CHECK(big.rows() == 1600);
  CHECK(big.cols() == 3);

  const auto plan = train::plan_segments(8, 4, 10, rng);
  CHECK(plan.padded_length == 10);
  CHECK(plan.offsets == std::vector<std::size_t>(4, 0));
  Tensor x(8, 1);
  for (std::size_t i = 0; i < 8; ++i) x[i] = static_cast<double>(i);
  const auto padded = train::sample_segments(x, 2, 10, rng);
  REQUIRE(padded.rows() == 20);
  for (std::size_t i = 0; i < 20; ++i) CHECK(padded[i] == static_cast<double>((i % 10) % 8));

  std::mt19937_64 a(5), b(5);
  const Tensor y = testing::random_tensor(30, 2, rng);
  CHECK(train::sample_segments(y, 6, 7, a) == train::sample_segments(y, 6, 7, b));
  for (std::size_t off : train::plan_segments(30, 50, 7, a).offsets) CHECK(off <= 23);
  CHECK_THROWS_AS(train::plan_segments(0, 2, 3, a), ContractError);
}

TEST_CASE("training step losses match an independent value-level computation") {
  const auto& c = small_corpus();
  const auto pool = all_examples(c);
  auto config = quick_config();
  config.model = train::dims_for(c, config.model);
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Example> batch = pool;
    std::shuffle(batch.begin(), batch.end(), rng);
    batch.resize(testing::random_size(rng, 1, 6));
    const double lambda = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    auto state = train::TrainerState::fresh(small_params(trial), 100 + trial);
    const auto params = state.params;
    std::mt19937_64 seg_rng = state.segment_rng;

    const auto loss = train::training_step(batch, state, lambda, {true, true}, config);
    CHECK(std::abs(loss.total - (loss.recon_s + loss.recon_v - lambda * loss.disc)) <= 1e-12);
    CHECK(loss.lambda == lambda);

    std::sort(batch.begin(), batch.end(),
              [](const Example& a, const Example& b) { return a.utterance->id < b.utterance->id; });
    double rs = 0.0, rv = 0.0, ce = 0.0;
    std::size_t ns = 0, nv = 0;
    for (const Example& e : batch) {
      const auto enc = net::encode(e.utterance->id, e.utterance->tongue, e.utterance->lip, params);
      const auto pred = net::decode(enc, params, e.target);
      const double r = 0.5 * (mse(pred.pre, *e.target) + mse(pred.post, *e.target));
      const bool silent = e.utterance->mode == Mode::kSilent;
      (silent ? rs : rv) += r;
      (silent ? ns : nv) += 1;
      const auto p = net::discriminate(
          train::sample_segments(enc.frames, config.n_segments, config.seg_len, seg_rng), params);
      ce -= std::log(p[silent ? net::kSilentLabel : net::kVocalizedLabel]);
    }
    CHECK(loss.recon_s == doctest::Approx(ns ? rs / static_cast<double>(ns) : 0.0).epsilon(1e-12));
    CHECK(loss.recon_v == doctest::Approx(nv ? rv / static_cast<double>(nv) : 0.0).epsilon(1e-12));
    CHECK(loss.disc == doctest::Approx(ce / static_cast<double>(batch.size())).epsilon(1e-10));
    if (ns == 0) CHECK(loss.recon_s == 0.0);
    CHECK(loss.recon_s >= 0.0);
    CHECK(loss.recon_v >= 0.0);
  }
}

TEST_CASE("training step edge cases") {
  const auto& c = small_corpus();
  auto config = quick_config();
  config.model = train::dims_for(c, config.model);
  auto state = train::TrainerState::fresh(small_params(1), 2);
  CHECK_THROWS_AS(train::training_step({}, state, 0.0, {true, true}, config), ContractError);

  std::vector<Example> vocal_only;
  for (const auto& e : all_examples(c))
    if (e.utterance->mode == Mode::kVocalized && vocal_only.size() < 3) vocal_only.push_back(e);
  const auto loss = train::training_step(vocal_only, state, 0.5, {true, true}, config);
  CHECK(loss.recon_s == 0.0);
  CHECK(loss.recon_v > 0.0);
}

TEST_CASE("with lambda 0 the discriminator does not reach the encoder") {
  const auto& c = small_corpus();
  auto batch = all_examples(c);
  batch.resize(5);
  auto config = quick_config();
  config.model = train::dims_for(c, config.model);
  auto with = train::TrainerState::fresh(small_params(4), 9);
  auto without = with;
  const auto lw = train::training_step(batch, with, 0.0, {true, true}, config);
  auto plain = config;
  plain.adversarial = false;
  const auto lo = train::training_step(batch, without, 0.0, {true, true}, plain);
  CHECK(lw.total == lw.recon_s + lw.recon_v);
  CHECK(lw.total == lo.total);
  CHECK(same_weights(with.params.encoder, without.params.encoder));
  CHECK(same_weights(with.params.decoder, without.params.decoder));
  CHECK_FALSE(same_weights(with.params.discriminator, without.params.discriminator));
}

TEST_CASE("flagged groups step only when flagged") {
  const auto& c = small_corpus();
  auto batch = all_examples(c);
  batch.resize(4);
  auto config = quick_config();
  config.model = train::dims_for(c, config.model);
  auto state = train::TrainerState::fresh(small_params(5), 1);
  const auto before = state.params;
  train::training_step(batch, state, 0.3, {false, true}, config);
  CHECK(same_weights(state.params.encoder, before.encoder));
  CHECK(same_weights(state.params.decoder, before.decoder));
  CHECK_FALSE(same_weights(state.params.discriminator, before.discriminator));
  CHECK(state.encoder_acc.batches == 1);
  train::training_step(batch, state, 0.3, {true, false}, config);
  CHECK_FALSE(same_weights(state.params.encoder, before.encoder));
  CHECK(state.encoder_acc.batches == 0);
  CHECK(state.disc_acc.batches == 1);
}

TEST_CASE("pretraining") {
  const auto& c = small_corpus();
  auto config = quick_config();
  config.pretrain_epochs = 0;
  const auto none = train::pretrain_vocalized(c, config);
  CHECK(none.params == small_params(config.seed));
  CHECK(none.history.empty());

  config.pretrain_epochs = 12;
  const auto a = train::pretrain_vocalized(c, config);
  const auto b = train::pretrain_vocalized(c, config);
  CHECK(a.params == b.params);
  REQUIRE(a.history.size() == 12);
  CHECK(a.history.back().recon_v < a.history.front().recon_v);
  for (const auto& h : a.history) {
    CHECK(h.recon_s == 0.0);
    CHECK(h.disc == 0.0);
  }

  const corpus::Corpus empty(c.config(), {}, {});
  CHECK_THROWS_AS(train::pretrain_vocalized(empty, config), DataError);
}

TEST_CASE("run_epochs history and empty training sets") {
  const auto& c = small_corpus();
  auto config = quick_config();
  config.model = train::dims_for(c, config.model);
  auto state = train::TrainerState::fresh(small_params(6), 3);
  const auto history = train::run_epochs(c, {}, state, config, 1);
  REQUIRE(history.size() == config.epochs_per_iteration);
  CHECK(history[0].lambda == 0.0);
  CHECK(history[1].lambda == train::lambda_schedule(1, config.epochs_per_iteration));

  corpus::Utterance s;
  s.id = "only_silent";
  s.speaker = "spk00";
  s.mode = Mode::kSilent;
  s.tongue = Tensor(9, c.config().tongue_dim);
  s.lip = Tensor(9, c.config().lip_dim);
  const corpus::Corpus silent_only(c.config(), {s}, {});
  CHECK_THROWS_AS(train::run_epochs(silent_only, {}, state, config, 1), DataError);
}

TEST_CASE("no_dat equals training with the discriminator branch never built") {
  const auto& c = small_corpus();
  auto base = quick_config();
  base.iterations = 2;
  const auto init = train::pretrain_vocalized(c, base).params;

  auto built = base;
  built.zero_lambda = true;
  built.update_discriminator = false;
  const auto a = train::iterative_train(c, built, init);
  const auto b = train::iterative_train(c, train::configure_for_mode(base, train::RunMode::kNoDat), init);
  CHECK(same_weights(a.params.encoder, b.params.encoder));
  CHECK(same_weights(a.params.decoder, b.params.decoder));
  REQUIRE(a.stats.size() == b.stats.size());
  for (std::size_t i = 0; i < a.stats.size(); ++i) {
    CHECK(a.stats[i].epsilon == b.stats[i].epsilon);
    for (std::size_t e = 0; e < a.stats[i].history.size(); ++e) {
      CHECK(a.stats[i].history[e].recon_s == b.stats[i].history[e].recon_s);
      CHECK(a.stats[i].history[e].recon_v == b.stats[i].history[e].recon_v);
      CHECK(a.stats[i].history[e].lambda == 0.0);
    }
  }
}

TEST_CASE("iterative training is reproducible and regenerates targets") {
  const auto& c = small_corpus();
  auto config = quick_config();
  const auto init = train::pretrain_vocalized(c, config).params;
  std::vector<int> seen;
  const auto a = train::iterative_train(
      c, config, init, [&](const train::IterationStats& s, const net::ModelParams&, const train::PseudoSelection& p) {
        seen.push_back(s.iteration);
        CHECK(p.targets.size() == c.select(Mode::kSilent, Split::kTrain).size());
        CHECK(s.reliable_count == p.selection.reliable_ids.size());
      });
  const auto b = train::iterative_train(c, config, init);
  CHECK(seen == std::vector<int>{1, 2, 3});
  REQUIRE(a.stats.size() == 3);
  CHECK(a.params == b.params);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.stats[i].iteration == static_cast<int>(i + 1));
    CHECK(a.stats[i].epsilon == b.stats[i].epsilon);
    CHECK(a.stats[i].history.size() == config.epochs_per_iteration);
    CHECK(a.stats[i].report.records.size() == b.stats[i].report.records.size());
    for (std::size_t e = 0; e < config.epochs_per_iteration; ++e)
      CHECK(a.stats[i].history[e].total == b.stats[i].history[e].total);
  }
  CHECK(a.stats[0].epsilon != a.stats[1].epsilon);
  CHECK(a.stats[1].epsilon != a.stats[2].epsilon);

  config.iterations = 1;
  const auto once = train::iterative_train(c, train::configure_for_mode(config, train::RunMode::kNoIts), init);
  REQUIRE(once.stats.size() == 1);
  CHECK(once.stats[0].epsilon == a.stats[0].epsilon);
  CHECK(once.params == [&] {
    config.iterations = 1;
    return train::iterative_train(c, config, init).params;
  }());
}

TEST_CASE("mode configuration and validation") {
  TrainConfig base;
  CHECK(train::configure_for_mode(base, train::RunMode::kFull) == base);
  CHECK(train::configure_for_mode(base, train::RunMode::kNoIts).iterations == 1);
  const auto nd = train::configure_for_mode(base, train::RunMode::kNoDat);
  CHECK_FALSE(nd.adversarial);
  CHECK(nd.zero_lambda);
  CHECK(nd.iterations == base.iterations);
  const auto bl = train::configure_for_mode(base, train::RunMode::kBaseline);
  CHECK_FALSE(bl.use_pseudo_targets);
  CHECK(bl.iterations == 1);
  for (auto m : {train::RunMode::kFull, train::RunMode::kNoIts, train::RunMode::kNoDat, train::RunMode::kBaseline})
    CHECK(train::parse_run_mode(train::to_string(m)) == m);
  CHECK_THROWS_AS(train::parse_run_mode("nope"), UsageError);

  auto bad = base;
  bad.switch_epoch = bad.epochs_per_iteration + 1;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = base;
  bad.slow_update_every = 0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = base;
  bad.iterations = 0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}
