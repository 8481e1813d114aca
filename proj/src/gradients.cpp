#include "diffpf/gradients.hpp"

#include <Eigen/LU>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace diffpf {

namespace {

constexpr double kSingularRcond = 1e-14;

// Shared per-batch line data: admittances, Y diagonal totals.
struct LineData {
  LineAdmittances y;
  Eigen::VectorXd gt, bt;
};

LineData line_data(const IncidenceSet& inc, const AdmittanceParams& params) {
  LineData ld;
  ld.y = line_admittances(params);
  ld.gt = params.shunt_g;
  ld.bt = params.shunt_b;
  for (std::size_t k = 0; k < inc.from.size(); ++k) {
    const auto ke = static_cast<Eigen::Index>(k);
    ld.gt[inc.from[k]] += ld.y.g[ke];
    ld.gt[inc.to[k]] += ld.y.g[ke];
    ld.bt[inc.from[k]] += ld.y.b[ke];
    ld.bt[inc.to[k]] += ld.y.b[ke];
  }
  return ld;
}

// Raw-parameter gradient accumulator (before the chain to gamma/beta).
struct WBar {
  Eigen::VectorXd g, b, gsh, bsh;
  explicit WBar(Eigen::Index e, Eigen::Index v)
      : g(Eigen::VectorXd::Zero(e)),
        b(Eigen::VectorXd::Zero(e)),
        gsh(Eigen::VectorXd::Zero(v)),
        bsh(Eigen::VectorXd::Zero(v)) {}
};

// Gradient of psi = sum_i lamP_i*P_i(v,theta,w) + lamQ_i*Q_i(v,theta,w)
// with respect to state (dv, dth) and raw parameters (into wbar, sign-scaled).
void weighted_vjp(const IncidenceSet& inc, const LineData& ld, const Eigen::MatrixXd& v,
                  const Eigen::MatrixXd& th, Eigen::Index a, const Eigen::VectorXd& lam_p,
                  const Eigen::VectorXd& lam_q, Eigen::VectorXd& dv, Eigen::VectorXd& dth,
                  WBar* wbar, double wsign) {
  const auto nv = v.rows();
  dv.setZero(nv);
  dth.setZero(nv);
  for (std::size_t k = 0; k < inc.from.size(); ++k) {
    const auto ke = static_cast<Eigen::Index>(k);
    const int s = inc.from[k], t = inc.to[k];
    const double g = ld.y.g[ke], b = ld.y.b[ke];
    const double d = th(t, a) - th(s, a);
    const double c = std::cos(d), sn = std::sin(d);
    const double vs = v(s, a), vt = v(t, a);
    const double A = vs * vt;
    const double lps = lam_p[s], lpt = lam_p[t], lqs = lam_q[s], lqt = lam_q[t];
    const double ca = -g * (lpt + lps) + b * (lqt + lqs);
    const double cb = -b * (lpt - lps) + g * (lqs - lqt);
    const double f0 = ca * c + cb * sn;
    const double f1 = -ca * sn + cb * c;
    dv[s] += vt * f0;
    dv[t] += vs * f0;
    dth[t] += A * f1;
    dth[s] -= A * f1;
    if (wbar) {
      wbar->g[ke] += wsign * (A * (-c * (lpt + lps) + sn * (lqs - lqt)) +
                              vs * vs * lps + vt * vt * lpt);
      wbar->b[ke] += wsign * (A * (c * (lqt + lqs) - sn * (lpt - lps)) -
                              vs * vs * lqs - vt * vt * lqt);
    }
  }
  for (Eigen::Index i = 0; i < nv; ++i) {
    const double vi = v(i, a);
    dv[i] += 2.0 * vi * (lam_p[i] * ld.gt[i] - lam_q[i] * ld.bt[i]);
    if (wbar) {
      wbar->gsh[i] += wsign * vi * vi * lam_p[i];
      wbar->bsh[i] -= wsign * vi * vi * lam_q[i];
    }
  }
}

// Gradient of phi = directional derivative of psi along (dv_dir, dth_dir),
// i.e. the Hessian contraction lam' * dJ * u that survives in the adjoint of
// an exact Newton step. Accumulates raw-parameter parts into wbar.
void dirderiv_vjp(const IncidenceSet& inc, const LineData& ld, const Eigen::MatrixXd& v,
                  const Eigen::MatrixXd& th, Eigen::Index a, const Eigen::VectorXd& lam_p,
                  const Eigen::VectorXd& lam_q, const Eigen::VectorXd& dv_dir,
                  const Eigen::VectorXd& dth_dir, Eigen::VectorXd& dv, Eigen::VectorXd& dth,
                  WBar& wbar) {
  const auto nv = v.rows();
  dv.setZero(nv);
  dth.setZero(nv);
  for (std::size_t k = 0; k < inc.from.size(); ++k) {
    const auto ke = static_cast<Eigen::Index>(k);
    const int s = inc.from[k], t = inc.to[k];
    const double g = ld.y.g[ke], b = ld.y.b[ke];
    const double d = th(t, a) - th(s, a);
    const double c = std::cos(d), sn = std::sin(d);
    const double vs = v(s, a), vt = v(t, a);
    const double A = vs * vt;
    const double dvs = dv_dir[s], dvt = dv_dir[t];
    const double dd = dth_dir[t] - dth_dir[s];
    const double lps = lam_p[s], lpt = lam_p[t], lqs = lam_q[s], lqt = lam_q[t];
    const double ca = -g * (lpt + lps) + b * (lqt + lqs);
    const double cb = -b * (lpt - lps) + g * (lqs - lqt);
    const double f0 = ca * c + cb * sn;
    const double f1 = -ca * sn + cb * c;
    const double w = dvs * vt + vs * dvt;
    dv[s] += dvt * f0 + vt * f1 * dd;
    dv[t] += dvs * f0 + vs * f1 * dd;
    const double dphi_dd = w * f1 - A * f0 * dd;
    dth[t] += dphi_dd;
    dth[s] -= dphi_dd;
    const double dphi_da = w * c - A * sn * dd;
    const double dphi_db = w * sn + A * c * dd;
    wbar.g[ke] += dphi_da * (-(lpt + lps)) + dphi_db * (lqs - lqt) +
                  2.0 * vs * dvs * lps + 2.0 * vt * dvt * lpt;
    wbar.b[ke] += dphi_da * (lqt + lqs) + dphi_db * (-(lpt - lps)) -
                  2.0 * vs * dvs * lqs - 2.0 * vt * dvt * lqt;
  }
  for (Eigen::Index i = 0; i < nv; ++i) {
    const double vi = v(i, a);
    const double dvi = dv_dir[i];
    dv[i] += 2.0 * dvi * (lam_p[i] * ld.gt[i] - lam_q[i] * ld.bt[i]);
    wbar.gsh[i] += 2.0 * vi * dvi * lam_p[i];
    wbar.bsh[i] -= 2.0 * vi * dvi * lam_q[i];
  }
}

struct Tape {
  std::vector<StateBatch> states;                                // per step, pre-update
  std::vector<std::vector<Eigen::PartialPivLU<Eigen::MatrixXd>>> lus;  // [step][sample]
  std::vector<Eigen::MatrixXd> updates;                          // per step, m x N
  StateBatch final_state;
  Eigen::MatrixXd r_theta, r_q, r_p;  // |Vg| x N residuals at the final state
};

double forward_loss(const GridTopology& topo, const IncidenceSet& inc,
                    const AdmittanceParams& params, const PfInputBatch& in,
                    const MeasurementBatch& meas, int n_steps, const LossSpec& spec,
                    Tape* tape) {
  if (n_steps < 1) throw Error("BadArgument", "n_steps must be >= 1");
  const auto n_gen = static_cast<Eigen::Index>(topo.generators().size());
  const Eigen::Index n = in.p.cols();
  if (n_gen == 0) throw Error("BadArgument", "loss needs at least one generator bus");
  if (n == 0) throw Error("BadArgument", "empty batch");

  StateBatch state = flat_start(topo, in);
  const int nst = static_cast<int>(topo.non_slack().size());
  const int m = nst + static_cast<int>(topo.loads().size());
  Eigen::MatrixXd jm(m, m);

  for (int step = 0; step < n_steps; ++step) {
    const Injections inj = compute_injections(inc, params, state);
    const Eigen::MatrixXd mm = mismatch(topo, inj, in);
    const JacobianBlocks jac = assemble_jacobian(topo, inc, params, state);
    if (tape) {
      tape->states.push_back(state);
      tape->lus.emplace_back();
      tape->lus.back().reserve(static_cast<std::size_t>(n));
      tape->updates.emplace_back(m, n);
    }
    for (Eigen::Index a = 0; a < n; ++a) {
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac.full[static_cast<std::size_t>(a)]);
      const double rc = lu.rcond();
      if (!(rc > kSingularRcond)) throw SingularJacobian(static_cast<int>(a), step, rc);
      const Eigen::VectorXd u = lu.solve(mm.col(a));
      for (int r = 0; r < nst; ++r) state.theta(topo.non_slack()[r], a) -= u[r];
      for (std::size_t r = 0; r < topo.loads().size(); ++r)
        state.v(topo.loads()[r], a) -= u[nst + static_cast<int>(r)];
      if (tape) {
        tape->lus.back().push_back(std::move(lu));
        tape->updates.back().col(a) = u;
      }
    }
  }

  const Injections inj = compute_injections(inc, params, state);
  Eigen::MatrixXd r_theta(n_gen, n), r_q(n_gen, n), r_p(n_gen, n);
  for (Eigen::Index r = 0; r < n_gen; ++r) {
    const int bus = topo.generators()[static_cast<std::size_t>(r)];
    r_theta.row(r) = state.theta.row(bus) - meas.gen_theta.row(r);
    r_q.row(r) = inj.q.row(bus) - meas.gen_q.row(r);
    r_p.row(r) = inj.p.row(bus) - meas.gen_p.row(r);
  }

  double acc = 0.0;
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index r = 0; r < n_gen; ++r) {
      if (spec.theta_g) acc += r_theta(r, a) * r_theta(r, a);
      if (spec.q_g) acc += r_q(r, a) * r_q(r, a);
      if (spec.p_g) acc += r_p(r, a) * r_p(r, a);
      if (spec.v_g) {
        const int bus = topo.generators()[static_cast<std::size_t>(r)];
        const double rv = state.v(bus, a) - meas.gen_v(r, a);
        acc += rv * rv;
      }
    }
  }
  const double loss = acc / (static_cast<double>(n) * static_cast<double>(n_gen));

  if (tape) {
    tape->final_state = std::move(state);
    tape->r_theta = std::move(r_theta);
    tape->r_q = std::move(r_q);
    tape->r_p = std::move(r_p);
  }
  return loss;
}

}  // namespace

double loss_value(const GridTopology& topo, const IncidenceSet& inc,
                  const AdmittanceParams& params, const PfInputBatch& in,
                  const MeasurementBatch& meas, int n_steps, const LossSpec& spec) {
  return forward_loss(topo, inc, params, in, meas, n_steps, spec, nullptr);
}

LossAndGradient loss_and_gradient(const GridTopology& topo, const IncidenceSet& inc,
                                  const AdmittanceParams& params, const PfInputBatch& in,
                                  const MeasurementBatch& meas, int n_steps,
                                  const LossSpec& spec) {
  Tape tape;
  LossAndGradient out;
  out.loss = forward_loss(topo, inc, params, in, meas, n_steps, spec, &tape);

  const Eigen::Index nv = static_cast<Eigen::Index>(topo.n_buses());
  const Eigen::Index ne = params.gamma.size();
  const int nst = static_cast<int>(topo.non_slack().size());
  const int m = nst + static_cast<int>(topo.loads().size());
  const Eigen::Index n = in.p.cols();
  const auto n_gen = static_cast<Eigen::Index>(topo.generators().size());
  const double scale = 2.0 / (static_cast<double>(n) * static_cast<double>(n_gen));
  const LineData ld = line_data(inc, params);

  WBar wbar(ne, nv);
  Eigen::VectorXd lam_p(nv), lam_q(nv), dv(nv), dth(nv), dv_dir(nv), dth_dir(nv);
  Eigen::VectorXd xbar(m), lam(m), xnew(m);

  for (Eigen::Index a = 0; a < n; ++a) {
    xbar.setZero();
    // angle residual seeds directly on the unknown vector
    if (spec.theta_g)
      for (Eigen::Index r = 0; r < n_gen; ++r)
        xbar[topo.non_slack_pos(topo.generators()[static_cast<std::size_t>(r)])] +=
            scale * tape.r_theta(r, a);
    // injection-residual seeds through the final-state injections
    if (spec.p_g || spec.q_g) {
      lam_p.setZero();
      lam_q.setZero();
      for (Eigen::Index r = 0; r < n_gen; ++r) {
        const int bus = topo.generators()[static_cast<std::size_t>(r)];
        if (spec.p_g) lam_p[bus] = scale * tape.r_p(r, a);
        if (spec.q_g) lam_q[bus] = scale * tape.r_q(r, a);
      }
      weighted_vjp(inc, ld, tape.final_state.v, tape.final_state.theta, a, lam_p, lam_q,
                   dv, dth, &wbar, 1.0);
      for (int r = 0; r < nst; ++r) xbar[r] += dth[topo.non_slack()[r]];
      for (std::size_t r = 0; r < topo.loads().size(); ++r)
        xbar[nst + static_cast<int>(r)] += dv[topo.loads()[r]];
    }
    // v_g residuals compare pinned inputs with themselves: no adjoint flow

    for (int step = n_steps - 1; step >= 0; --step) {
      // adjoint of an exact Newton step: the identity and J^-T f paths cancel,
      // what remains flows through the curvature term weighted by the update
      lam = tape.lus[static_cast<std::size_t>(step)][static_cast<std::size_t>(a)]
                .transpose()
                .solve(xbar);
      lam_p.setZero();
      lam_q.setZero();
      for (int r = 0; r < nst; ++r) lam_p[topo.non_slack()[r]] = lam[r];
      for (std::size_t r = 0; r < topo.loads().size(); ++r)
        lam_q[topo.loads()[r]] = lam[nst + static_cast<int>(r)];

      const StateBatch& st = tape.states[static_cast<std::size_t>(step)];
      // -psi_w: parameter dependence of the solved equations themselves; the
      // state parts cancel against the identity path and are discarded
      weighted_vjp(inc, ld, st.v, st.theta, a, lam_p, lam_q, dv, dth, &wbar, -1.0);

      dv_dir.setZero();
      dth_dir.setZero();
      const Eigen::MatrixXd& u = tape.updates[static_cast<std::size_t>(step)];
      for (int r = 0; r < nst; ++r) dth_dir[topo.non_slack()[r]] = u(r, a);
      for (std::size_t r = 0; r < topo.loads().size(); ++r)
        dv_dir[topo.loads()[r]] = u(nst + static_cast<int>(r), a);

      dirderiv_vjp(inc, ld, st.v, st.theta, a, lam_p, lam_q, dv_dir, dth_dir, dv, dth, wbar);
      for (int r = 0; r < nst; ++r) xnew[r] = dth[topo.non_slack()[r]];
      for (std::size_t r = 0; r < topo.loads().size(); ++r)
        xnew[nst + static_cast<int>(r)] = dv[topo.loads()[r]];
      xbar = xnew;
    }
    // the flat start is constant: the remaining state adjoint is discarded
  }

  const LineAdmittances y = ld.y;
  if (params.trainable.gamma) out.grad.gamma = (wbar.g.array() * y.g.array()).matrix();
  if (params.trainable.beta) out.grad.beta = (wbar.b.array() * y.b.array()).matrix();
  if (params.trainable.shunt_g) out.grad.shunt_g = wbar.gsh;
  if (params.trainable.shunt_b) out.grad.shunt_b = wbar.bsh;
  return out;
}

ParamGradient finite_diff(const AdmittanceParams& params,
                          const std::function<double(const AdmittanceParams&)>& f, double h) {
  if (!(h > 0.0)) throw Error("BadArgument", "h must be > 0");
  ParamGradient out;
  AdmittanceParams p = params;
  auto central = [&](Eigen::VectorXd AdmittanceParams::* field, Eigen::Index i) {
    const double saved = (p.*field)[i];
    (p.*field)[i] = saved + h;
    const double up = f(p);
    (p.*field)[i] = saved - h;
    const double dn = f(p);
    (p.*field)[i] = saved;
    return (up - dn) / (2.0 * h);
  };
  auto run = [&](Eigen::VectorXd AdmittanceParams::* field) {
    Eigen::VectorXd grad((params.*field).size());
    for (Eigen::Index i = 0; i < grad.size(); ++i) grad[i] = central(field, i);
    return grad;
  };
  if (params.trainable.gamma) out.gamma = run(&AdmittanceParams::gamma);
  if (params.trainable.beta) out.beta = run(&AdmittanceParams::beta);
  if (params.trainable.shunt_g) out.shunt_g = run(&AdmittanceParams::shunt_g);
  if (params.trainable.shunt_b) out.shunt_b = run(&AdmittanceParams::shunt_b);
  return out;
}

ParamGradient finite_diff_gradient(const GridTopology& topo, const IncidenceSet& inc,
                                   const AdmittanceParams& params, const PfInputBatch& in,
                                   const MeasurementBatch& meas, int n_steps,
                                   const LossSpec& spec, double h) {
  return finite_diff(
      params,
      [&](const AdmittanceParams& p) {
        return loss_value(topo, inc, p, in, meas, n_steps, spec);
      },
      h);
}

}  // namespace diffpf
