#include "diffpf/datagen.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <utility>

#include "diffpf/rng.hpp"

namespace diffpf {

namespace {

void check_config(const ScenarioConfig& cfg) {
  if (cfg.samples < 1) throw Error("BadArgument", "need at least one sample");
  if (cfg.load_spread < 0.0 || cfg.q_spread < 0.0 || cfg.vg_spread < 0.0)
    throw Error("BadArgument", "spreads must be >= 0");
  if (!(cfg.tol > 0.0)) throw Error("BadArgument", "tol must be > 0");
  if (cfg.max_iter < 1) throw Error("BadArgument", "max_iter must be >= 1");
}

struct ScenarioDraw {
  Eigen::VectorXd p;       // |V*|
  Eigen::VectorXd gen_v;   // |Vg|
  Eigen::VectorXd load_q;  // |Vl|
};

// One operating point. Draw order is fixed (load p factors, load q factors,
// generator voltage shifts, each in ascending bus order) so that the stream
// position after a draw is independent of the values drawn.
ScenarioDraw draw_scenario(const GridTopology& topo, const BaseOperatingPoint& base,
                           const ScenarioConfig& cfg, std::mt19937_64& rng) {
  const auto& loads = topo.loads();
  const auto& gens = topo.generators();
  std::uniform_real_distribution<double> p_factor(1.0 - cfg.load_spread,
                                                  1.0 + cfg.load_spread);
  std::uniform_real_distribution<double> q_factor(1.0 - cfg.q_spread, 1.0 + cfg.q_spread);
  std::uniform_real_distribution<double> v_shift(-cfg.vg_spread, cfg.vg_spread);

  ScenarioDraw d;
  d.p = base.p;
  d.gen_v.resize(static_cast<Eigen::Index>(gens.size()));
  d.load_q.resize(static_cast<Eigen::Index>(loads.size()));

  double demand_base = 0.0, demand_new = 0.0;
  for (std::size_t r = 0; r < loads.size(); ++r) {
    const int pos = topo.non_slack_pos(loads[r]);
    const double p0 = base.p[pos];
    const double p1 = p0 * p_factor(rng);
    d.p[pos] = p1;
    demand_base -= p0;
    demand_new -= p1;
  }
  for (std::size_t r = 0; r < loads.size(); ++r)
    d.load_q[static_cast<Eigen::Index>(r)] =
        base.load_q[static_cast<Eigen::Index>(r)] * q_factor(rng);
  const double balance =
      std::abs(demand_base) > 1e-12 ? demand_new / demand_base : 1.0;
  for (std::size_t r = 0; r < gens.size(); ++r) {
    const int pos = topo.non_slack_pos(gens[r]);
    d.p[pos] = base.p[pos] * balance;
    d.gen_v[static_cast<Eigen::Index>(r)] =
        base.gen_v[static_cast<Eigen::Index>(r)] + v_shift(rng);
  }
  return d;
}

PfInputBatch single_input(const ScenarioDraw& d) {
  PfInputBatch in;
  in.gen_v = d.gen_v;
  in.p = d.p;
  in.load_q = d.load_q;
  return in;
}

}  // namespace

PfInputBatch sample_scenarios(const GridTopology& topo, const BaseOperatingPoint& base,
                              const ScenarioConfig& cfg) {
  check_config(cfg);
  std::mt19937_64 rng(substream_seed(cfg.seed, "scenario"));
  const auto n = static_cast<Eigen::Index>(cfg.samples);
  PfInputBatch in;
  in.gen_v.resize(static_cast<Eigen::Index>(topo.generators().size()), n);
  in.p.resize(static_cast<Eigen::Index>(topo.non_slack().size()), n);
  in.load_q.resize(static_cast<Eigen::Index>(topo.loads().size()), n);
  for (Eigen::Index a = 0; a < n; ++a) {
    const ScenarioDraw d = draw_scenario(topo, base, cfg, rng);
    in.gen_v.col(a) = d.gen_v;
    in.p.col(a) = d.p;
    in.load_q.col(a) = d.load_q;
  }
  return in;
}

DatasetFile generate_dataset(const GridTopology& topo, const IncidenceSet& inc,
                             const AdmittanceParams& ref, const BaseOperatingPoint& base,
                             const ScenarioConfig& cfg, const std::string& case_name) {
  check_config(cfg);
  std::mt19937_64 rng(substream_seed(cfg.seed, "scenario"));
  const auto& gens = topo.generators();
  const auto& loads = topo.loads();

  DatasetFile data;
  data.case_name = case_name;
  data.seed = cfg.seed;
  data.split_rule = "none";
  data.n_gen = static_cast<int>(gens.size());
  data.n_load = static_cast<int>(loads.size());
  data.hidden = true;

  for (int i = 0; i < cfg.samples; ++i) {
    bool done = false;
    for (int attempt = 0; attempt <= cfg.max_retries && !done; ++attempt) {
      if (attempt > 0) ++data.resampled;
      const ScenarioDraw d = draw_scenario(topo, base, cfg, rng);
      const PfInputBatch in = single_input(d);
      ConvergeResult conv;
      try {
        conv = nr_converge(topo, inc, ref, in, cfg.tol, cfg.max_iter);
      } catch (const NoConvergence&) {
        continue;
      }
      DatasetSample s;
      s.id = i;
      s.train = false;
      s.gen_v = d.gen_v;
      s.gen_theta.resize(static_cast<Eigen::Index>(gens.size()));
      s.gen_p.resize(static_cast<Eigen::Index>(gens.size()));
      for (std::size_t r = 0; r < gens.size(); ++r) {
        s.gen_theta[static_cast<Eigen::Index>(r)] = conv.out.state.theta(gens[r], 0);
        s.gen_p[static_cast<Eigen::Index>(r)] = d.p[topo.non_slack_pos(gens[r])];
      }
      s.gen_q = conv.out.gen_q.col(0);
      s.load_p.resize(static_cast<Eigen::Index>(loads.size()));
      s.load_v.resize(static_cast<Eigen::Index>(loads.size()));
      s.load_theta.resize(static_cast<Eigen::Index>(loads.size()));
      for (std::size_t r = 0; r < loads.size(); ++r) {
        s.load_p[static_cast<Eigen::Index>(r)] = d.p[topo.non_slack_pos(loads[r])];
        s.load_v[static_cast<Eigen::Index>(r)] = conv.out.state.v(loads[r], 0);
        s.load_theta[static_cast<Eigen::Index>(r)] = conv.out.state.theta(loads[r], 0);
      }
      s.load_q = d.load_q;
      s.has_hidden = true;
      data.samples.push_back(std::move(s));
      done = true;
    }
    if (!done)
      throw Error("GenerationFailed",
                  "sample " + std::to_string(i) + " did not converge after " +
                      std::to_string(cfg.max_retries) + " retries");
  }

  // Independent re-verification: reconstruct each recorded state and check the
  // recorded injections against the network equations at the reference
  // parameters.
  const double bound = 10.0 * cfg.tol;
  for (const auto& s : data.samples) {
    StateBatch st;
    st.v = Eigen::MatrixXd::Ones(topo.n_buses(), 1);
    st.theta = Eigen::MatrixXd::Zero(topo.n_buses(), 1);
    for (std::size_t r = 0; r < gens.size(); ++r) {
      st.v(gens[r], 0) = s.gen_v[static_cast<Eigen::Index>(r)];
      st.theta(gens[r], 0) = s.gen_theta[static_cast<Eigen::Index>(r)];
    }
    for (std::size_t r = 0; r < loads.size(); ++r) {
      st.v(loads[r], 0) = s.load_v[static_cast<Eigen::Index>(r)];
      st.theta(loads[r], 0) = s.load_theta[static_cast<Eigen::Index>(r)];
    }
    const Injections inj = compute_injections(inc, ref, st);
    double worst = 0.0;
    for (std::size_t r = 0; r < gens.size(); ++r) {
      worst = std::max(worst, std::abs(inj.p(gens[r], 0) - s.gen_p[static_cast<Eigen::Index>(r)]));
      worst = std::max(worst, std::abs(inj.q(gens[r], 0) - s.gen_q[static_cast<Eigen::Index>(r)]));
    }
    for (std::size_t r = 0; r < loads.size(); ++r) {
      worst = std::max(worst, std::abs(inj.p(loads[r], 0) - s.load_p[static_cast<Eigen::Index>(r)]));
      worst = std::max(worst, std::abs(inj.q(loads[r], 0) - s.load_q[static_cast<Eigen::Index>(r)]));
    }
    if (!(worst <= bound))
      throw Error("SelfCheckFailed", "sample " + std::to_string(s.id) +
                                         " residual " + std::to_string(worst) +
                                         " exceeds " + std::to_string(bound));
  }
  return data;
}

SplitRule SplitRule::every_kth(int k) {
  SplitRule r;
  r.kind = Kind::EveryKth;
  r.k = k;
  return r;
}

SplitRule SplitRule::by_fraction(double f) {
  SplitRule r;
  r.kind = Kind::Fraction;
  r.fraction = f;
  return r;
}

std::string SplitRule::describe() const {
  if (kind == Kind::EveryKth) return "every_kth:" + std::to_string(k);
  char buf[40];
  std::snprintf(buf, sizeof buf, "fraction:%g", fraction);
  return buf;
}

void split_dataset(DatasetFile& data, const SplitRule& rule,
                   std::vector<std::string>* warnings) {
  if (rule.kind == SplitRule::Kind::EveryKth && rule.k < 1)
    throw Error("BadArgument", "split stride must be >= 1");
  if (rule.kind == SplitRule::Kind::Fraction &&
      !(rule.fraction >= 0.0 && rule.fraction <= 1.0))
    throw Error("BadArgument", "split fraction must be in [0, 1]");

  int n_train = 0;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    bool train = false;
    if (rule.kind == SplitRule::Kind::EveryKth) {
      train = (i % static_cast<std::size_t>(rule.k)) == 0;
    } else {
      const double f = rule.fraction;
      train = std::floor(static_cast<double>(i + 1) * f) >
              std::floor(static_cast<double>(i) * f);
    }
    data.samples[i].train = train;
    n_train += train ? 1 : 0;
  }
  if (n_train == 0) throw Error("EmptyTrainSet", "split rule tagged no training samples");
  if (n_train == static_cast<int>(data.samples.size()) && warnings)
    warnings->push_back("validation set is empty under " + rule.describe());
  data.split_rule = rule.describe();
}

}  // namespace diffpf
