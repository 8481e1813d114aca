#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "diffpf/datagen.hpp"
#include "diffpf/estimator.hpp"
#include "diffpf/rng.hpp"
#include "helpers.hpp"

using namespace diffpf;

namespace {

struct Fix {
  ParsedCase pc;
  IncidenceSet inc;
  DatasetFile data;

  explicit Fix(int samples = 12, unsigned long long seed = 5) {
    pc = load_case(testutil::data_path("case5.m"));
    inc = build_incidence(pc.topology);
    ScenarioConfig cfg;
    cfg.samples = samples;
    cfg.seed = seed;
    cfg.tol = 1e-12;
    data = generate_dataset(pc.topology, inc, pc.nominal, pc.base, cfg, "case5");
    split_dataset(data, SplitRule::every_kth(3));
  }
};

AdmittanceParams shift_params(const AdmittanceParams& base, double delta) {
  AdmittanceParams p = base;
  p.gamma.array() += delta;
  p.beta.array() += delta;
  return p;
}

}  // namespace

TEST_CASE("adam's first bias-corrected step has magnitude near lr") {
  AdmittanceParams p;
  p.gamma = Eigen::Vector2d(0.5, -0.5);
  p.beta = Eigen::Vector2d(0.1, 0.2);
  AdmittanceParams before = p;

  ParamGradient g;
  g.gamma = Eigen::Vector2d(1.0, -1e6);
  g.beta = Eigen::Vector2d(3e-3, 40.0);

  TrainConfig cfg;
  cfg.lr = 1e-4;
  AdamState st;
  adam_step(st, p, g, cfg);
  CHECK(st.t == 1);

  // |step| = lr * |g| / (|g| + eps): off lr by a factor eps/|g|, so even the
  // 3e-3 probe stays within 1e-9 of lr, directed against the gradient
  for (int k = 0; k < 2; ++k) {
    double dg = p.gamma(k) - before.gamma(k);
    double db = p.beta(k) - before.beta(k);
    CHECK(std::abs(std::abs(dg) - cfg.lr) < 1e-9);
    CHECK(std::abs(std::abs(db) - cfg.lr) < 1e-9);
    CHECK(dg * (*g.gamma)(k) < 0.0);
    CHECK(db * (*g.beta)(k) < 0.0);
  }
}

TEST_CASE("adam leaves parameters alone on a zero gradient") {
  AdmittanceParams p;
  p.gamma = Eigen::Vector2d(0.5, -0.5);
  p.beta = Eigen::Vector2d(0.1, 0.2);
  AdmittanceParams before = p;

  ParamGradient g;
  g.gamma = Eigen::Vector2d(0.0, 0.0);
  g.beta = Eigen::Vector2d(0.0, 0.0);

  TrainConfig cfg;
  AdamState st;
  adam_step(st, p, g, cfg);
  adam_step(st, p, g, cfg);
  CHECK((p.gamma - before.gamma).norm() == 0.0);
  CHECK((p.beta - before.beta).norm() == 0.0);
  CHECK(st.t == 2);
}

TEST_CASE("adam touches only the groups present in the gradient") {
  AdmittanceParams p;
  p.gamma = Eigen::Vector2d(0.5, -0.5);
  p.beta = Eigen::Vector2d(0.1, 0.2);
  p.shunt_g = Eigen::Vector2d(0.0, 0.3);
  AdmittanceParams before = p;

  ParamGradient g;
  g.gamma = Eigen::Vector2d(1.0, 1.0);

  TrainConfig cfg;
  AdamState st;
  adam_step(st, p, g, cfg);
  CHECK((p.gamma - before.gamma).norm() > 0.0);
  CHECK((p.beta - before.beta).norm() == 0.0);
  CHECK((p.shunt_g - before.shunt_g).norm() == 0.0);

  // a state sized for gamma-only cannot absorb gamma+beta
  ParamGradient wider = g;
  wider.beta = Eigen::Vector2d(1.0, 1.0);
  CHECK(testutil::thrown_code([&] { adam_step(st, p, wider, cfg); }) == "BadArgument");

  ParamGradient none;
  AdamState st2;
  CHECK(testutil::thrown_code([&] { adam_step(st2, p, none, cfg); }) == "BadArgument");
}

TEST_CASE("reconstruction error is 1 at init, 0 at ref, 1/2 at the midpoint") {
  Fix fx(4);
  AdmittanceParams ref = fx.pc.nominal;
  AdmittanceParams init = shift_params(ref, 0.3);

  CHECK(reconstruction_error(fx.pc.topology, init, ref, init) == 1.0);
  CHECK(reconstruction_error(fx.pc.topology, ref, ref, init) == 0.0);

  // admittances are linear in the matrix, so averaging them halves the gap
  LineAdmittances ya = line_admittances(ref);
  LineAdmittances yb = line_admittances(init);
  auto [gamma_mid, beta_mid] =
      log_params_from_admittances(0.5 * (ya.g + yb.g), 0.5 * (ya.b + yb.b));
  AdmittanceParams mid = ref;
  mid.gamma = gamma_mid;
  mid.beta = beta_mid;
  CHECK(reconstruction_error(fx.pc.topology, mid, ref, init) ==
        doctest::Approx(0.5).epsilon(1e-12));

  CHECK(testutil::thrown_code([&] {
          reconstruction_error(fx.pc.topology, init, ref, ref);
        }) == "ZeroNormalizer");
}

TEST_CASE("sample extraction scatters blocks by bus class") {
  Fix fx(3);
  const DatasetSample& s = fx.data.samples[1];
  PfInputBatch in = inputs_from_samples(fx.pc.topology, fx.data, {1});
  // case5: gens at buses 1,2 -> p rows 0,1; loads at 3,4 -> p rows 2,3
  CHECK(in.gen_v(0, 0) == s.gen_v(0));
  CHECK(in.gen_v(1, 0) == s.gen_v(1));
  CHECK(in.p(0, 0) == s.gen_p(0));
  CHECK(in.p(1, 0) == s.gen_p(1));
  CHECK(in.p(2, 0) == s.load_p(0));
  CHECK(in.p(3, 0) == s.load_p(1));
  CHECK(in.load_q(0, 0) == s.load_q(0));
  CHECK(in.load_q(1, 0) == s.load_q(1));

  MeasurementBatch meas = measurements_from_samples(fx.pc.topology, fx.data, {2, 0});
  CHECK(meas.gen_theta(0, 0) == fx.data.samples[2].gen_theta(0));
  CHECK(meas.gen_q(1, 1) == fx.data.samples[0].gen_q(1));
}

TEST_CASE("validation error measures the recorded state exactly") {
  Fix fx(2);
  const int n_steps = 2;

  // overwrite the records with the n-step solution itself
  PfInputBatch in = inputs_from_samples(fx.pc.topology, fx.data, {0, 1});
  PfOutputBatch out = nr_solve(fx.pc.topology, fx.inc, fx.pc.nominal, in, n_steps);
  for (int a = 0; a < 2; ++a) {
    DatasetSample& s = fx.data.samples[static_cast<std::size_t>(a)];
    for (int r = 0; r < 2; ++r) {
      s.gen_theta(r) = out.state.theta(fx.pc.topology.generators()[static_cast<std::size_t>(r)], a);
      s.gen_q(r) = out.gen_q(r, a);
      int bus = fx.pc.topology.loads()[static_cast<std::size_t>(r)];
      s.load_v(r) = out.state.v(bus, a);
      s.load_theta(r) = out.state.theta(bus, a);
    }
  }
  CHECK(validation_error(fx.pc.topology, fx.inc, fx.pc.nominal, fx.data, {0, 1}, n_steps) ==
        0.0);

  const double delta = 0.01;
  fx.data.samples[1].load_v(0) += delta;
  double e = validation_error(fx.pc.topology, fx.inc, fx.pc.nominal, fx.data, {0, 1}, n_steps);
  CHECK(e == doctest::Approx(delta * delta / (2.0 * 5.0)).epsilon(1e-12));

  fx.data.samples[1].has_hidden = false;
  CHECK(testutil::thrown_code([&] {
          validation_error(fx.pc.topology, fx.inc, fx.pc.nominal, fx.data, {0, 1}, n_steps);
        }) == "MissingGroundTruth");
}

TEST_CASE("dataset loss equals the loss over extracted batches") {
  Fix fx(6);
  AdmittanceParams p = shift_params(fx.pc.nominal, 0.1);
  std::vector<int> idx{0, 2, 4};
  LossSpec spec;
  double a = dataset_loss(fx.pc.topology, fx.inc, p, fx.data, idx, 2, spec);
  double b = loss_value(fx.pc.topology, fx.inc, p,
                        inputs_from_samples(fx.pc.topology, fx.data, idx),
                        measurements_from_samples(fx.pc.topology, fx.data, idx), 2, spec);
  CHECK(a == b);
}

TEST_CASE("perturbed init is seeded, log-space, and leaves shunts alone") {
  Fix fx(2);
  AdmittanceParams a = perturbed_init(fx.pc.nominal, 0.2, 42);
  AdmittanceParams b = perturbed_init(fx.pc.nominal, 0.2, 42);
  AdmittanceParams c = perturbed_init(fx.pc.nominal, 0.2, 43);
  CHECK((a.gamma - b.gamma).norm() == 0.0);
  CHECK((a.beta - b.beta).norm() == 0.0);
  CHECK((a.gamma - c.gamma).norm() > 0.0);
  CHECK((a.gamma - fx.pc.nominal.gamma).norm() > 0.0);
  CHECK((a.shunt_g - fx.pc.nominal.shunt_g).norm() == 0.0);
  CHECK((a.shunt_b - fx.pc.nominal.shunt_b).norm() == 0.0);

  AdmittanceParams same = perturbed_init(fx.pc.nominal, 0.0, 42);
  CHECK((same.gamma - fx.pc.nominal.gamma).norm() == 0.0);

  // signs survive any draw because the perturbation lives in log space
  AdmittanceParams wild = perturbed_init(fx.pc.nominal, 5.0, 7);
  LineAdmittances y = line_admittances(wild);
  CHECK(y.g.minCoeff() > 0.0);
  CHECK(y.b.maxCoeff() < 0.0);
}

TEST_CASE("one full-batch epoch replays as a single adam step") {
  Fix fx(6, 9);
  AdmittanceParams init = shift_params(fx.pc.nominal, 0.15);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.epochs = 1;
  cfg.batch = 100;  // larger than the train split
  cfg.seed = 31;
  cfg.n_steps = 2;
  cfg.record_timing = false;
  LossSpec spec;

  TrainResult got = train(fx.pc.topology, fx.data, init, std::nullopt, cfg, spec);

  std::vector<int> order = fx.data.train_indices();
  std::mt19937_64 shuffle_rng(substream_seed(cfg.seed, "shuffle"));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  LossAndGradient lg = loss_and_gradient(
      fx.pc.topology, fx.inc, init, inputs_from_samples(fx.pc.topology, fx.data, order),
      measurements_from_samples(fx.pc.topology, fx.data, order), cfg.n_steps, spec);
  AdmittanceParams manual = init;
  AdamState st;
  adam_step(st, manual, lg.grad, cfg);

  REQUIRE(got.history.size() == 1);
  CHECK(got.history[0].loss == lg.loss);
  CHECK((got.params.gamma - manual.gamma).norm() == 0.0);
  CHECK((got.params.beta - manual.beta).norm() == 0.0);
}

TEST_CASE("training descends, logs on cadence, and repeats bitwise") {
  Fix fx(12, 5);
  AdmittanceParams init = perturbed_init(fx.pc.nominal, 0.2, 8);
  TrainConfig cfg;
  cfg.lr = 5e-3;
  cfg.epochs = 60;
  cfg.batch = 4;
  cfg.seed = 17;
  cfg.n_steps = 2;
  cfg.eval_every = 25;
  cfg.record_timing = false;
  LossSpec spec;

  TrainResult a = train(fx.pc.topology, fx.data, init, fx.pc.nominal, cfg, spec);
  REQUIRE(a.history.size() == 60);
  CHECK_FALSE(a.stopped_early);
  CHECK(a.history.back().loss < a.history.front().loss);

  for (int e = 0; e < 60; ++e) {
    CHECK(a.history[static_cast<std::size_t>(e)].epoch == e);
    CHECK(a.history[static_cast<std::size_t>(e)].are.has_value());
    bool expect_valid = (e == 24 || e == 49 || e == 59);
    CHECK(a.history[static_cast<std::size_t>(e)].valid_err.has_value() == expect_valid);
    CHECK_FALSE(a.history[static_cast<std::size_t>(e)].elapsed_s.has_value());
  }
  // the epoch-0 record is taken after the first updates, so the are has
  // already moved off its exact init value of 1
  CHECK(a.history[0].are.value() == doctest::Approx(1.0).epsilon(0.05));

  int calls = 0;
  TrainResult b = train(fx.pc.topology, fx.data, init, fx.pc.nominal, cfg, spec,
                        [&](const EpochInfo& info) {
                          CHECK(info.epoch == calls);
                          CHECK(info.record.loss == a.history[static_cast<std::size_t>(calls)].loss);
                          ++calls;
                        });
  CHECK(calls == 60);
  CHECK((b.params.gamma - a.params.gamma).norm() == 0.0);
  CHECK((b.params.beta - a.params.beta).norm() == 0.0);
  for (std::size_t e = 0; e < 60; ++e) {
    CHECK(b.history[e].loss == a.history[e].loss);
    CHECK(b.history[e].are.value() == a.history[e].are.value());
  }
}

TEST_CASE("training failure modes carry stable codes") {
  Fix fx(4);
  TrainConfig cfg;
  cfg.epochs = 3;
  LossSpec spec;

  DatasetFile all_valid = fx.data;
  for (auto& s : all_valid.samples) s.train = false;
  CHECK(testutil::thrown_code([&] {
          train(fx.pc.topology, all_valid, fx.pc.nominal, std::nullopt, cfg, spec);
        }) == "EmptyTrainSet");

  // corrupt the sample that epoch 0 visits second: the clean first batch
  // pins the baseline at truncation-noise level, the poisoned one then
  // exceeds it by far more than the 1e6x ratio guard allows
  Fix big(12);
  TrainConfig hot = cfg;
  hot.epochs = 1;
  hot.batch = 1;
  hot.n_steps = 2;
  std::vector<int> order = big.data.train_indices();
  std::mt19937_64 rng(substream_seed(hot.seed, "shuffle"));
  std::shuffle(order.begin(), order.end(), rng);
  DatasetFile poisoned = big.data;
  poisoned.samples[static_cast<std::size_t>(order[1])].gen_theta(0) += 10.0;
  CHECK(testutil::thrown_code([&] {
          train(big.pc.topology, poisoned, big.pc.nominal, std::nullopt, hot, spec);
        }) == "Diverged");

  DatasetFile wrong = fx.data;
  wrong.n_gen = 1;
  for (auto& s : wrong.samples) {
    s.gen_v.conservativeResize(1);
    s.gen_theta.conservativeResize(1);
    s.gen_p.conservativeResize(1);
    s.gen_q.conservativeResize(1);
  }
  CHECK(testutil::thrown_code([&] {
          train(fx.pc.topology, wrong, fx.pc.nominal, std::nullopt, cfg, spec);
        }) == "ShapeMismatch");
}

TEST_CASE("the are guard stops a run that fits the data away from the reference") {
  // data generated far from the reference, init almost at it: the loss can
  // only improve by walking the parameters away, raising the are
  ParsedCase pc = load_case(testutil::data_path("case5.m"));
  IncidenceSet inc = build_incidence(pc.topology);
  AdmittanceParams truth = shift_params(pc.nominal, 5.0);

  ScenarioConfig scfg;
  scfg.samples = 6;
  scfg.seed = 2;
  scfg.tol = 1e-12;
  DatasetFile data = generate_dataset(pc.topology, inc, truth, pc.base, scfg, "case5");
  split_dataset(data, SplitRule::every_kth(3));

  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.epochs = 4000;
  cfg.batch = 16;
  cfg.seed = 12;
  cfg.n_steps = 2;
  cfg.eval_every = 0;
  cfg.record_timing = false;
  cfg.stop_on_are_rise = true;
  LossSpec spec;

  AdmittanceParams init = perturbed_init(pc.nominal, 1e-3, 3);
  TrainResult res = train(pc.topology, data, init, pc.nominal, cfg, spec);
  CHECK(res.stopped_early);
  CHECK(res.history.size() == 2000);
  CHECK(res.history.back().are.value() > res.history.front().are.value());
  CHECK(res.history.back().loss < res.history.front().loss);
}
