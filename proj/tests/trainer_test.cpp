#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>

#include "ogmge/trainer.hpp"
#include "oracles.hpp"

namespace ogmge {
namespace {

Splits small_splits(std::uint64_t seed = 1, std::size_t n_train = 256) {
  SyntheticSpec spec;
  spec.n_train = n_train;
  spec.n_val = 64;
  spec.n_test = 128;
  spec.dim_a = spec.dim_v = 8;
  spec.num_classes = 4;
  spec.seed = seed;
  return generate_synthetic(spec);
}

TrainConfig small_config(Strategy s) {
  TrainConfig c;
  c.strategy = s;
  c.learning_rate = 1e-2;
  c.batch_size = 32;
  c.epochs = 3;
  c.encoder_a = {12, 6};
  c.encoder_v = {12, 6};
  c.seed = 5;
  return c;
}

TEST(SgdUpdate, PlainStep) {
  std::vector<double> theta{1.0, -2.0}, buf(2, 0.0);
  const std::vector<double> g{0.5, 4.0};
  sgd_update(theta, g, 1.0, {}, 0.1, 0.0, 0.0, buf);
  EXPECT_DOUBLE_EQ(theta[0], 1.0 - 0.05);
  EXPECT_DOUBLE_EQ(theta[1], -2.0 - 0.4);
}

TEST(SgdUpdate, HalfCoefficientHalvesTheStep) {
  std::vector<double> theta{1.0}, buf(1, 0.0);
  sgd_update(theta, std::vector<double>{2.0}, 0.5, {}, 0.1, 0.0, 0.0, buf);
  EXPECT_DOUBLE_EQ(theta[0], 1.0 - 0.5 * 0.1 * 2.0);
}

TEST(SgdUpdate, ZeroGradientOnlyDecays) {
  std::vector<double> theta{3.0}, buf(1, 0.0);
  sgd_update(theta, std::vector<double>{0.0}, 1.0, std::vector<double>{0.0}, 0.1, 0.9, 0.0, buf);
  EXPECT_EQ(theta[0], 3.0);
  sgd_update(theta, std::vector<double>{0.0}, 1.0, {}, 0.1, 0.0, 1e-2, buf);
  EXPECT_DOUBLE_EQ(theta[0], 3.0 * (1.0 - 1e-3));
}

TEST(SgdUpdate, TwoMomentumStepsMatchHandUnroll) {
  const double lr = 0.05, mu = 0.9, wd = 1e-2, k = 0.7;
  const double g1 = 0.3, g2 = -1.2, h1 = 0.01, h2 = -0.02;
  std::vector<double> theta{0.8}, buf(1, 0.0);
  sgd_update(theta, std::vector<double>{g1}, k, std::vector<double>{h1}, lr, mu, wd, buf);
  sgd_update(theta, std::vector<double>{g2}, k, std::vector<double>{h2}, lr, mu, wd, buf);
  double t = 0.8;
  const double d1 = k * (g1 + wd * t) + h1;
  const double b1 = d1;
  t -= lr * b1;
  const double d2 = k * (g2 + wd * t) + h2;
  const double b2 = mu * b1 + d2;
  t -= lr * b2;
  EXPECT_NEAR(theta[0], t, 1e-15);
  EXPECT_NEAR(buf[0], b2, 1e-15);
}

TEST(SgdUpdate, ShapeMismatchThrows) {
  std::vector<double> theta(2), buf(2);
  EXPECT_THROW(sgd_update(theta, std::vector<double>(3), 1.0, {}, 0.1, 0.0, 0.0, buf), ContractError);
  EXPECT_THROW(sgd_update(theta, std::vector<double>(2), 1.0, std::vector<double>(1), 0.1, 0.0, 0.0, buf),
               ContractError);
}

TEST(AdamUpdate, FirstStepMovesByLearningRate) {
  std::vector<double> theta{1.0, 1.0}, m1(2, 0.0), m2(2, 0.0);
  adam_update(theta, std::vector<double>{3.0, -0.01}, 1.0, {}, 1e-3, AdamSettings{}, m1, m2, 1);
  EXPECT_NEAR(theta[0], 1.0 - 1e-3, 1e-9);
  EXPECT_NEAR(theta[1], 1.0 + 1e-3, 1e-8);
}

TEST(AdamUpdate, FiveStepsMatchReferenceRecurrence) {
  const AdamSettings s{0.8, 0.95, 1e-6, 1e-2};
  const double lr = 0.01;
  const std::vector<double> gs{0.4, -0.1, 0.25, 0.9, -0.6};
  const std::vector<double> ks{1.0, 0.5, 0.9, 0.3, 1.0};
  const std::vector<double> hs{0.0, 0.02, -0.01, 0.0, 0.05};
  std::vector<double> theta{0.3}, m1(1, 0.0), m2(1, 0.0);
  long double t = 0.3L, m = 0.0L, v = 0.0L;
  for (std::size_t i = 0; i < 5; ++i) {
    adam_update(theta, std::vector<double>{gs[i]}, ks[i], std::vector<double>{hs[i]}, lr, s, m1, m2, i + 1);
    const long double d = ks[i] * (gs[i] + s.weight_decay * t) + hs[i];
    m = s.beta1 * m + (1 - s.beta1) * d;
    v = s.beta2 * v + (1 - s.beta2) * d * d;
    const long double mh = m / (1 - std::pow(static_cast<long double>(s.beta1), i + 1));
    const long double vh = v / (1 - std::pow(static_cast<long double>(s.beta2), i + 1));
    t -= lr * mh / (std::sqrt(vh) + s.eps);
    EXPECT_NEAR(theta[0], static_cast<double>(t), 1e-14) << "step " << i + 1;
  }
}

TEST(AdamUpdate, ContractViolations) {
  std::vector<double> theta(2), m1(2), m2(1);
  EXPECT_THROW(adam_update(theta, std::vector<double>(2), 1.0, {}, 1e-3, AdamSettings{}, m1, m2, 1), ContractError);
  std::vector<double> m2ok(2);
  EXPECT_THROW(adam_update(theta, std::vector<double>(2), 1.0, {}, 1e-3, AdamSettings{}, m1, m2ok, 0), ContractError);
}

TEST(ModalityDropout, ExtremesAndRate) {
  SyntheticSpec spec;
  spec.n_train = 10000;
  spec.n_val = spec.n_test = 10;
  const auto s = generate_synthetic(spec);
  Rng rng(3);
  const auto none = apply_modality_dropout(s.train, 0.0, Modality::a, rng);
  EXPECT_EQ(none.x_a, s.train.x_a);
  const auto all = apply_modality_dropout(s.train, 1.0, Modality::v, rng);
  for (double v : all.x_v.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(all.x_a, s.train.x_a);
  EXPECT_EQ(all.labels, s.train.labels);
  const auto half = apply_modality_dropout(s.train, 0.5, Modality::a, rng);
  std::size_t zeroed = 0;
  for (std::size_t i = 0; i < half.size(); ++i) {
    bool z = true;
    for (double v : half.x_a.row(i)) z = z && v == 0.0;
    zeroed += z;
  }
  const double frac = zeroed / 10000.0;
  EXPECT_GE(frac, 0.48);
  EXPECT_LE(frac, 0.52);
  EXPECT_THROW(apply_modality_dropout(s.train, 1.5, Modality::a, rng), ContractError);
}

TEST(TrainConfig, ValidationAndSchedule) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_DOUBLE_EQ(c.learning_rate_at(69), 1e-3);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(70), 1e-4);
  c.lr_decay_period = 0;
  EXPECT_EQ(c.learning_rate_at(500), 1e-3);
  for (auto bad : std::vector<std::function<void(TrainConfig&)>>{
           [](TrainConfig& t) { t.learning_rate = 0; }, [](TrainConfig& t) { t.batch_size = 1; },
           [](TrainConfig& t) { t.alpha = -0.1; }, [](TrainConfig& t) { t.dropout_p = 1.2; },
           [](TrainConfig& t) { t.encoder_v.clear(); }}) {
    TrainConfig t;
    bad(t);
    EXPECT_THROW(t.validate(), ContractError);
  }
}

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig c = small_config(Strategy::ogm_ge);
  c.scope = ModulationScope::encoder_only;
  c.optimizer = OptimizerKind::adam;
  c.dropout_modality = Modality::v;
  const auto back = nlohmann::json::parse(nlohmann::json(c).dump()).get<TrainConfig>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
}

TEST(TrainStep, ReplayOfLoggedQuantitiesReproducesTheUpdate) {
  const auto s = small_splits();
  for (Strategy strat : {Strategy::joint, Strategy::ogm, Strategy::ogm_ge}) {
    TrainConfig cfg = small_config(strat);
    cfg.alpha = 0.8;
    auto model = init_model(cfg, s.train);
    const ModelParams before = model;
    OptimizerState state;
    TrainStreams streams(cfg.seed);
    std::vector<std::size_t> idx(32);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto step = train_step(model, gather(s.train, idx), cfg, state, streams, 0.01, true);
    ASSERT_TRUE(step.detail);
    auto bt = before.tensors();
    const auto at = model.tensors();
    const auto gt = step.detail->gradient.tensors();
    for (std::size_t t = 0; t < at.size(); ++t) {
      const auto& h = step.detail->noise[t];
      EXPECT_EQ(h.empty(), strat != Strategy::ogm_ge || at[t].owner == Owner::shared);
      for (std::size_t e = 0; e < at[t].values.size(); ++e) {
        const double k = step.detail->k[t];
        const double want =
            bt[t].values[e] - 0.01 * (k * (gt[t].values[e] + cfg.weight_decay * bt[t].values[e]) + (h.empty() ? 0.0 : h[e]));
        EXPECT_NEAR(at[t].values[e], want, 1e-15);
      }
    }
  }
}

TEST(TrainStep, OnlyTheDominantModalityIsScaled) {
  const auto s = small_splits(2);
  TrainConfig cfg = small_config(Strategy::ogm);
  cfg.alpha = 0.5;
  cfg.weight_decay = 0.0;
  cfg.momentum = 0.0;
  TrainConfig shadow_cfg = cfg;
  shadow_cfg.strategy = Strategy::joint;
  std::size_t modulated_steps = 0;
  for (std::uint64_t start = 0; start < 8; ++start) {
    auto model = init_model(cfg, s.train);
    auto shadow = model;
    std::vector<std::size_t> idx(32);
    std::iota(idx.begin(), idx.end(), start * 32);
    const auto batch = gather(s.train, idx);
    OptimizerState st1, st2;
    TrainStreams r1(cfg.seed), r2(cfg.seed);
    const ModelParams before = model;
    const auto step = train_step(model, batch, cfg, st1, r1, 0.1);
    train_step(shadow, batch, shadow_cfg, st2, r2, 0.1);
    const auto& m = step.modulation;
    ASSERT_FALSE(m.k_a < 1.0 && m.k_v < 1.0);
    if (m.k_a == 1.0 && m.k_v == 1.0) continue;
    ++modulated_steps;
    auto bt = before.tensors();
    const auto mt = model.tensors();
    const auto st = shadow.tensors();
    for (std::size_t t = 0; t < mt.size(); ++t) {
      const double k = mt[t].owner == Owner::shared ? 1.0 : m.k(mt[t].owner == Owner::a ? Modality::a : Modality::v);
      for (std::size_t e = 0; e < mt[t].values.size(); ++e) {
        const double delta = mt[t].values[e] - bt[t].values[e];
        const double shadow_delta = st[t].values[e] - bt[t].values[e];
        EXPECT_NEAR(delta, k * shadow_delta, 1e-13) << mt[t].name;
      }
    }
  }
  EXPECT_GT(modulated_steps, 0u);
}

TEST(TrainStep, EncoderOnlyScopeLeavesHeadUnscaled) {
  const auto s = small_splits(2);
  TrainConfig cfg = small_config(Strategy::ogm);
  cfg.alpha = 0.5;
  cfg.scope = ModulationScope::encoder_only;
  auto model = init_model(cfg, s.train);
  std::vector<std::size_t> idx(32);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  OptimizerState st;
  TrainStreams r(cfg.seed);
  const auto step = train_step(model, gather(s.train, idx), cfg, st, r, 0.1, true);
  const auto tensors = model.tensors();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    if (!tensors[t].is_encoder) EXPECT_EQ(step.detail->k[t], 1.0) << tensors[t].name;
  }
}

TEST(TrainStep, NonFiniteLossAborts) {
  const auto s = small_splits();
  const TrainConfig cfg = small_config(Strategy::joint);
  auto model = init_model(cfg, s.train);
  std::vector<std::size_t> idx(8);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto batch = gather(s.train, idx);
  batch.x_a(0, 0) = std::nan("");
  OptimizerState st;
  TrainStreams r(cfg.seed);
  try {
    train_step(model, batch, cfg, st, r, 0.1);
    FAIL() << "expected abort";
  } catch (const TrainingAborted& e) {
    EXPECT_NE(std::string(e.what()).find("loss"), std::string::npos);
  }
}

TEST(TrainStep, NonFiniteGradientNamesTheTensor) {
  try {
    detail::check_finite(std::vector<double>{1.0, INFINITY}, "gradient of encoder_v.layer1.weight");
    FAIL() << "expected abort";
  } catch (const TrainingAborted& e) {
    EXPECT_NE(std::string(e.what()).find("encoder_v.layer1.weight"), std::string::npos);
  }
}

TEST(Train, ZeroEpochsLeaveModelUntouched) {
  const auto s = small_splits();
  TrainConfig cfg = small_config(Strategy::ogm_ge);
  cfg.epochs = 0;
  const auto init = init_model(cfg, s.train);
  const auto r = train(s, cfg, init);
  EXPECT_EQ(r.model, init);
  EXPECT_EQ(r.record.steps(), 0u);
  EXPECT_TRUE(r.record.rho_a.empty());
  EXPECT_TRUE(r.record.epochs.empty());
}

TEST(Train, StrategyLatticeIsBitwise) {
  const auto s = small_splits(3);
  TrainConfig joint = small_config(Strategy::joint);
  TrainConfig ogm = small_config(Strategy::ogm);
  ogm.alpha = 0.0;
  TrainConfig ogm_ge = small_config(Strategy::ogm_ge);
  ogm_ge.alpha = 0.0;
  ogm_ge.ge = false;
  const auto a = train(s, joint), b = train(s, ogm), c = train(s, ogm_ge);
  EXPECT_TRUE(same_results(a.record, b.record));
  EXPECT_TRUE(same_results(a.record, c.record));
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.model, c.model);
}

TEST(Train, DeterministicUnderSeed) {
  const auto s = small_splits(4);
  TrainConfig cfg = small_config(Strategy::ogm_ge);
  cfg.alpha = 0.3;
  cfg.probe = true;
  cfg.probe_config.epochs = 3;
  const auto a = train(s, cfg), b = train(s, cfg);
  EXPECT_EQ(nlohmann::json(a.record).dump(), nlohmann::json(b.record).dump());
  cfg.seed = 6;
  EXPECT_FALSE(same_results(a.record, train(s, cfg).record));
}

TEST(Train, RecordShapes) {
  const auto s = small_splits(4, 250);
  const auto r = train(s, small_config(Strategy::ogm)).record;
  // 250 / 32 -> 7 full batches and a tail of 26.
  EXPECT_EQ(r.steps(), 3u * 8u);
  EXPECT_EQ(r.rho_a.size(), r.steps());
  EXPECT_EQ(r.k_a.size(), r.steps());
  EXPECT_EQ(r.k_v.size(), r.steps());
  EXPECT_EQ(r.epochs.size(), 3u);
  EXPECT_FALSE(r.probe_a.has_value());
  EXPECT_GE(r.test_map, 0.0);
  EXPECT_LE(r.test_map, 1.0);
}

TEST(Train, OneEpochLowersTrainingLossForEveryStrategy) {
  const auto s = small_splits(5, 512);
  for (Strategy strat : {Strategy::joint, Strategy::ogm, Strategy::ogm_ge, Strategy::modality_dropout}) {
    for (OptimizerKind opt : {OptimizerKind::sgd, OptimizerKind::adam}) {
      TrainConfig cfg = small_config(strat);
      cfg.optimizer = opt;
      cfg.epochs = 1;
      cfg.batch_size = 16;
      const auto init = init_model(cfg, s.train);
      const double before = evaluate(init, s.train).loss;
      const auto r = train(s, cfg, init);
      EXPECT_LT(evaluate(r.model, s.train).loss, before) << nlohmann::json(strat) << " " << nlohmann::json(opt);
      EXPECT_TRUE(std::isfinite(r.record.epochs[0].train_loss));
    }
  }
}

TEST(Train, SummationFusionTrains) {
  const auto s = small_splits(6);
  TrainConfig cfg = small_config(Strategy::ogm_ge);
  cfg.fusion = FusionMode::summation;
  const auto r = train(s, cfg);
  EXPECT_GT(r.record.test_accuracy, 0.25);
  cfg.encoder_v = {12, 5};
  EXPECT_THROW(train(s, cfg), ContractError);
}

}  // namespace
}  // namespace ogmge
