#include "diffpf/powerflow.hpp"

#include <Eigen/LU>
#include <cmath>
#include <string>

namespace diffpf {

namespace {

using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;

constexpr double kSingularRcond = 1e-14;

// Total incident series admittance plus shunt per bus; the diagonal of Y.
void bus_totals(const IncidenceSet& inc, const AdmittanceParams& params,
                const LineAdmittances& y, Eigen::VectorXd& gt, Eigen::VectorXd& bt) {
  gt = params.shunt_g;
  bt = params.shunt_b;
  for (std::size_t k = 0; k < inc.from.size(); ++k) {
    const auto ke = static_cast<Eigen::Index>(k);
    gt[inc.from[k]] += y.g[ke];
    gt[inc.to[k]] += y.g[ke];
    bt[inc.from[k]] += y.b[ke];
    bt[inc.to[k]] += y.b[ke];
  }
}

struct JacobianScratch {
  LineAdmittances y;
  Eigen::VectorXd gt, bt;
  Eigen::ArrayXXd c, s;  // E x N line-angle cosines/sines
};

JacobianScratch jacobian_scratch(const IncidenceSet& inc, const AdmittanceParams& params,
                                 const StateBatch& state) {
  JacobianScratch sc;
  sc.y = line_admittances(params);
  bus_totals(inc, params, sc.y, sc.gt, sc.bt);
  const auto e = static_cast<Eigen::Index>(inc.from.size());
  sc.c.resize(e, state.theta.cols());
  sc.s.resize(e, state.theta.cols());
  for (Eigen::Index k = 0; k < e; ++k) {
    RowArray d = state.theta.row(inc.to[static_cast<std::size_t>(k)]).array() -
                 state.theta.row(inc.from[static_cast<std::size_t>(k)]).array();
    sc.c.row(k) = d.cos();
    sc.s.row(k) = d.sin();
  }
  return sc;
}

void assemble_one(const GridTopology& topo, const IncidenceSet& inc,
                  const JacobianScratch& sc, const StateBatch& state, Eigen::Index a,
                  Eigen::MatrixXd& m) {
  const int nst = static_cast<int>(topo.non_slack().size());
  m.setZero();
  for (std::size_t k = 0; k < inc.from.size(); ++k) {
    const auto ke = static_cast<Eigen::Index>(k);
    const int s = inc.from[k], t = inc.to[k];
    const double g = sc.y.g[ke], b = sc.y.b[ke];
    const double c = sc.c(ke, a), sn = sc.s(ke, a);
    const double vs = state.v(s, a), vt = state.v(t, a);
    const double A = vs * vt;

    const int rp_s = topo.non_slack_pos(s), rp_t = topo.non_slack_pos(t);
    const int lp_s = topo.load_pos(s), lp_t = topo.load_pos(t);
    const int rq_s = lp_s < 0 ? -1 : nst + lp_s;
    const int rq_t = lp_t < 0 ? -1 : nst + lp_t;
    const int cth_s = rp_s, cth_t = rp_t;
    const int cv_s = rq_s, cv_t = rq_t;

    if (rp_t >= 0 && cth_s >= 0) m(rp_t, cth_s) += A * (-g * sn + b * c);
    if (rp_t >= 0 && cth_t >= 0) m(rp_t, cth_t) += A * (g * sn - b * c);
    if (rp_s >= 0 && cth_s >= 0) m(rp_s, cth_s) -= A * (g * sn + b * c);
    if (rp_s >= 0 && cth_t >= 0) m(rp_s, cth_t) += A * (g * sn + b * c);
    if (rq_t >= 0 && cth_s >= 0) m(rq_t, cth_s) += A * (g * c + b * sn);
    if (rq_t >= 0 && cth_t >= 0) m(rq_t, cth_t) -= A * (g * c + b * sn);
    if (rq_s >= 0 && cth_s >= 0) m(rq_s, cth_s) -= A * (g * c - b * sn);
    if (rq_s >= 0 && cth_t >= 0) m(rq_s, cth_t) += A * (g * c - b * sn);

    if (rp_t >= 0 && cv_s >= 0) m(rp_t, cv_s) += vt * (-g * c - b * sn);
    if (rp_t >= 0 && cv_t >= 0) m(rp_t, cv_t) += vs * (-g * c - b * sn);
    if (rp_s >= 0 && cv_s >= 0) m(rp_s, cv_s) += vt * (-g * c + b * sn);
    if (rp_s >= 0 && cv_t >= 0) m(rp_s, cv_t) += vs * (-g * c + b * sn);
    if (rq_t >= 0 && cv_s >= 0) m(rq_t, cv_s) += vt * (-g * sn + b * c);
    if (rq_t >= 0 && cv_t >= 0) m(rq_t, cv_t) += vs * (-g * sn + b * c);
    if (rq_s >= 0 && cv_s >= 0) m(rq_s, cv_s) += vt * (g * sn + b * c);
    if (rq_s >= 0 && cv_t >= 0) m(rq_s, cv_t) += vs * (g * sn + b * c);
  }
  for (int i : topo.loads()) {
    const int rq = nst + topo.load_pos(i);
    m(topo.non_slack_pos(i), rq) += 2.0 * state.v(i, a) * sc.gt[i];
    m(rq, rq) -= 2.0 * state.v(i, a) * sc.bt[i];
  }
}

void apply_update(const GridTopology& topo, StateBatch& state, const Eigen::VectorXd& u,
                  Eigen::Index a) {
  const int nst = static_cast<int>(topo.non_slack().size());
  for (int r = 0; r < nst; ++r) state.theta(topo.non_slack()[r], a) -= u[r];
  for (std::size_t r = 0; r < topo.loads().size(); ++r)
    state.v(topo.loads()[r], a) -= u[nst + static_cast<int>(r)];
}

Eigen::MatrixXd gen_rows(const GridTopology& topo, const Eigen::MatrixXd& full) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(topo.generators().size()), full.cols());
  for (std::size_t r = 0; r < topo.generators().size(); ++r)
    out.row(static_cast<Eigen::Index>(r)) = full.row(topo.generators()[r]);
  return out;
}

}  // namespace

Injections compute_injections(const IncidenceSet& inc, const AdmittanceParams& params,
                              const StateBatch& state) {
  const LineAdmittances y = line_admittances(params);
  Eigen::VectorXd gt, bt;
  bus_totals(inc, params, y, gt, bt);

  Injections out;
  out.p = (state.v.array().square().colwise() * gt.array()).matrix();
  out.q = (-(state.v.array().square().colwise() * bt.array())).matrix();

  for (std::size_t k = 0; k < inc.from.size(); ++k) {
    const auto ke = static_cast<Eigen::Index>(k);
    const int s = inc.from[k], t = inc.to[k];
    const double g = y.g[ke], b = y.b[ke];
    RowArray d = state.theta.row(t).array() - state.theta.row(s).array();
    RowArray c = d.cos();
    RowArray sn = d.sin();
    RowArray A = state.v.row(s).array() * state.v.row(t).array();
    out.p.row(t).array() += A * (-g * c - b * sn);
    out.p.row(s).array() += A * (-g * c + b * sn);
    out.q.row(t).array() += A * (-g * sn + b * c);
    out.q.row(s).array() += A * (g * sn + b * c);
  }
  return out;
}

Eigen::MatrixXd mismatch(const GridTopology& topo, const Injections& inj,
                         const PfInputBatch& in) {
  const int nst = static_cast<int>(topo.non_slack().size());
  const int nl = static_cast<int>(topo.loads().size());
  Eigen::MatrixXd mm(nst + nl, inj.p.cols());
  for (int r = 0; r < nst; ++r) mm.row(r) = inj.p.row(topo.non_slack()[r]) - in.p.row(r);
  for (int r = 0; r < nl; ++r)
    mm.row(nst + r) = inj.q.row(topo.loads()[r]) - in.load_q.row(r);
  return mm;
}

JacobianBlocks assemble_jacobian(const GridTopology& topo, const IncidenceSet& inc,
                                 const AdmittanceParams& params, const StateBatch& state) {
  const JacobianScratch sc = jacobian_scratch(inc, params, state);
  JacobianBlocks jac;
  jac.n_theta = static_cast<int>(topo.non_slack().size());
  jac.n_v = static_cast<int>(topo.loads().size());
  const int m = jac.n_theta + jac.n_v;
  jac.full.assign(static_cast<std::size_t>(state.v.cols()), Eigen::MatrixXd(m, m));
  for (Eigen::Index a = 0; a < state.v.cols(); ++a)
    assemble_one(topo, inc, sc, state, a, jac.full[static_cast<std::size_t>(a)]);
  return jac;
}

StateBatch flat_start(const GridTopology& topo, const PfInputBatch& in) {
  const Eigen::Index n = in.p.cols();
  StateBatch st;
  st.v = Eigen::MatrixXd::Ones(topo.n_buses(), n);
  st.theta = Eigen::MatrixXd::Zero(topo.n_buses(), n);
  for (std::size_t r = 0; r < topo.generators().size(); ++r)
    st.v.row(topo.generators()[r]) = in.gen_v.row(static_cast<Eigen::Index>(r));
  return st;
}

PfOutputBatch nr_solve(const GridTopology& topo, const IncidenceSet& inc,
                       const AdmittanceParams& params, const PfInputBatch& in, int n_steps,
                       std::vector<Eigen::VectorXd>* residual_log) {
  if (n_steps < 1) throw Error("BadArgument", "n_steps must be >= 1");
  StateBatch state = flat_start(topo, in);
  const Eigen::Index n = state.v.cols();
  const int m = static_cast<int>(topo.non_slack().size() + topo.loads().size());
  Eigen::MatrixXd jm(m, m);

  for (int step = 0; step < n_steps; ++step) {
    const Injections inj = compute_injections(inc, params, state);
    const Eigen::MatrixXd mm = mismatch(topo, inj, in);
    if (residual_log) residual_log->push_back(mm.cwiseAbs().colwise().maxCoeff().transpose());
    const JacobianScratch sc = jacobian_scratch(inc, params, state);
    for (Eigen::Index a = 0; a < n; ++a) {
      assemble_one(topo, inc, sc, state, a, jm);
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(jm);
      const double rc = lu.rcond();
      if (!(rc > kSingularRcond))
        throw SingularJacobian(static_cast<int>(a), step, rc);
      apply_update(topo, state, lu.solve(mm.col(a)), a);
    }
  }

  const Injections inj = compute_injections(inc, params, state);
  PfOutputBatch out;
  out.state = std::move(state);
  out.gen_q = gen_rows(topo, inj.q);
  return out;
}

ConvergeResult nr_converge(const GridTopology& topo, const IncidenceSet& inc,
                           const AdmittanceParams& params, const PfInputBatch& in,
                           double tol, int max_iter) {
  if (!(tol > 0.0)) throw Error("BadArgument", "tol must be > 0");
  if (max_iter < 1) throw Error("BadArgument", "max_iter must be >= 1");

  StateBatch state = flat_start(topo, in);
  const Eigen::Index n = state.v.cols();
  const int m = static_cast<int>(topo.non_slack().size() + topo.loads().size());
  Eigen::MatrixXd jm(m, m);

  std::vector<char> active(static_cast<std::size_t>(n), 1);
  std::vector<std::string> reason(static_cast<std::size_t>(n));
  Eigen::VectorXi iters = Eigen::VectorXi::Zero(n);

  for (int it = 0; it <= max_iter; ++it) {
    const Injections inj = compute_injections(inc, params, state);
    const Eigen::MatrixXd mm = mismatch(topo, inj, in);
    bool any_active = false;
    for (Eigen::Index a = 0; a < n; ++a) {
      auto& act = active[static_cast<std::size_t>(a)];
      if (!act) continue;
      const double res = mm.col(a).cwiseAbs().maxCoeff();
      if (!std::isfinite(res)) {
        act = 0;
        reason[static_cast<std::size_t>(a)] = "non-finite state";
        continue;
      }
      if (res <= tol) {
        act = 0;
        continue;
      }
      any_active = true;
    }
    if (!any_active || it == max_iter) break;

    const JacobianScratch sc = jacobian_scratch(inc, params, state);
    for (Eigen::Index a = 0; a < n; ++a) {
      if (!active[static_cast<std::size_t>(a)]) continue;
      assemble_one(topo, inc, sc, state, a, jm);
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(jm);
      const double rc = lu.rcond();
      if (!(rc > kSingularRcond)) {
        active[static_cast<std::size_t>(a)] = 0;
        reason[static_cast<std::size_t>(a)] =
            "singular system at iteration " + std::to_string(it) + ", rcond " + std::to_string(rc);
        continue;
      }
      apply_update(topo, state, lu.solve(mm.col(a)), a);
      iters[a] += 1;
    }
  }

  // failures: anything still active (ran out of iterations) or frozen with a reason
  std::vector<int> failed;
  std::string detail;
  for (Eigen::Index a = 0; a < n; ++a) {
    const auto i = static_cast<std::size_t>(a);
    if (active[i] || !reason[i].empty()) {
      failed.push_back(static_cast<int>(a));
      if (!detail.empty()) detail += "; ";
      detail += "sample " + std::to_string(a) + ": " +
                (reason[i].empty() ? "above tolerance after " + std::to_string(max_iter) + " iterations"
                                   : reason[i]);
    }
  }
  if (!failed.empty()) throw NoConvergence(std::move(failed), detail);

  const Injections inj = compute_injections(inc, params, state);
  ConvergeResult res;
  res.out.state = std::move(state);
  res.out.gen_q = gen_rows(topo, inj.q);
  res.iterations = std::move(iters);
  return res;
}

}  // namespace diffpf
