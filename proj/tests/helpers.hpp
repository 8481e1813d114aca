#pragma once

// Shared fixtures for the unit tests: bundled case paths, an independent
// reference implementation of the injection equations built on an explicitly
// assembled bus admittance matrix, finite-difference Jacobians, and the
// closed-form two-bus solution.

#include <cmath>
#include <complex>
#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "diffpf/caseio.hpp"
#include "diffpf/network.hpp"
#include "diffpf/powerflow.hpp"

namespace testutil {

inline std::string data_path(const std::string& name) {
  return std::string(DIFFPF_DATA_DIR) + "/" + name;
}

// Fresh scratch directory per test binary, safe under parallel ctest.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Bus admittance matrix assembled the textbook way, independent of the
// per-line loops used by the library.
inline Eigen::MatrixXcd naive_ybus(int n_buses, const std::vector<diffpf::Line>& lines,
                                   const Eigen::VectorXd& g, const Eigen::VectorXd& b,
                                   const Eigen::VectorXd& shunt_g,
                                   const Eigen::VectorXd& shunt_b) {
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n_buses, n_buses);
  for (int i = 0; i < n_buses; ++i) y(i, i) = std::complex<double>(shunt_g(i), shunt_b(i));
  for (std::size_t k = 0; k < lines.size(); ++k) {
    std::complex<double> yk(g(static_cast<int>(k)), b(static_cast<int>(k)));
    int s = lines[k].from, t = lines[k].to;
    y(s, s) += yk;
    y(t, t) += yk;
    y(s, t) -= yk;
    y(t, s) -= yk;
  }
  return y;
}

// P_i = sum_j v_i v_j (G_ij cos(t_i - t_j) + B_ij sin(t_i - t_j))
// Q_i = sum_j v_i v_j (G_ij sin(t_i - t_j) - B_ij cos(t_i - t_j))
inline void naive_injections(const Eigen::MatrixXcd& ybus, const Eigen::VectorXd& v,
                             const Eigen::VectorXd& theta, Eigen::VectorXd& p,
                             Eigen::VectorXd& q) {
  int n = static_cast<int>(v.size());
  p.setZero(n);
  q.setZero(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double gij = ybus(i, j).real(), bij = ybus(i, j).imag();
      double d = theta(i) - theta(j);
      p(i) += v(i) * v(j) * (gij * std::cos(d) + bij * std::sin(d));
      q(i) += v(i) * v(j) * (gij * std::sin(d) - bij * std::cos(d));
    }
  }
}

// Single-column input batch at the case's base operating point.
inline diffpf::PfInputBatch base_input(const diffpf::ParsedCase& pc) {
  diffpf::PfInputBatch in;
  in.gen_v = pc.base.gen_v;
  in.p = pc.base.p;
  in.load_q = pc.base.load_q;
  return in;
}

// Random single-sample state; every bus gets a fresh magnitude and angle so
// the Jacobian is probed away from the flat point.
inline diffpf::StateBatch random_state(const diffpf::GridTopology& topo,
                                       std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dv(0.95, 1.05), dt(-0.3, 0.3);
  diffpf::StateBatch st;
  st.v.resize(topo.n_buses(), 1);
  st.theta.resize(topo.n_buses(), 1);
  for (int i = 0; i < topo.n_buses(); ++i) {
    st.v(i, 0) = dv(rng);
    st.theta(i, 0) = dt(rng);
  }
  return st;
}

// Central-difference Jacobian of the mismatch w.r.t. the unknown vector
// [theta over non-slack; v over loads] for sample column a.
inline Eigen::MatrixXd fd_jacobian(const diffpf::GridTopology& topo,
                                   const diffpf::IncidenceSet& inc,
                                   const diffpf::AdmittanceParams& params,
                                   const diffpf::StateBatch& state,
                                   const diffpf::PfInputBatch& in, int a, double h) {
  int nt = static_cast<int>(topo.non_slack().size());
  int nv = static_cast<int>(topo.loads().size());
  int m = nt + nv;
  Eigen::MatrixXd jac(m, m);
  for (int c = 0; c < m; ++c) {
    diffpf::StateBatch plus = state, minus = state;
    if (c < nt) {
      plus.theta(topo.non_slack()[c], a) += h;
      minus.theta(topo.non_slack()[c], a) -= h;
    } else {
      plus.v(topo.loads()[c - nt], a) += h;
      minus.v(topo.loads()[c - nt], a) -= h;
    }
    Eigen::MatrixXd fp = diffpf::mismatch(topo, diffpf::compute_injections(inc, params, plus), in);
    Eigen::MatrixXd fm = diffpf::mismatch(topo, diffpf::compute_injections(inc, params, minus), in);
    jac.col(c) = (fp.col(a) - fm.col(a)) / (2.0 * h);
  }
  return jac;
}

// Runs f and reports the code of the diffpf::Error it throws, "" if none.
template <typename F>
inline std::string thrown_code(F&& f) {
  try {
    f();
  } catch (const diffpf::Error& e) {
    return e.code();
  }
  return "";
}

inline double rel_err(double got, double want, double floor_abs) {
  double denom = std::max({std::abs(got), std::abs(want), floor_abs});
  return std::abs(got - want) / denom;
}

// Exact solution of slack + single load joined by one shunt-free line with
// admittance y: the load voltage solves |V|^2 - V = conj((p - iq)/y).
inline void two_bus_solution(std::complex<double> y, double p, double q, double& v_out,
                             double& theta_out) {
  std::complex<double> w = std::complex<double>(p, -q) / y;
  double bc = w.imag();
  double a = 0.5 * (1.0 + std::sqrt(1.0 - 4.0 * (bc * bc - w.real())));
  v_out = std::hypot(a, bc);
  theta_out = std::atan2(bc, a);
}

}  // namespace testutil
