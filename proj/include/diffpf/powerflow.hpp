#pragma once

#include <Eigen/Dense>
#include <vector>

#include "diffpf/network.hpp"

namespace diffpf {

// Column-per-sample voltage state. Rows cover all buses; the slack row is
// pinned to v = 1, theta = 0 and generator v rows are pinned to set-points.
struct StateBatch {
  Eigen::MatrixXd v;      // |V| x N
  Eigen::MatrixXd theta;  // |V| x N, radians, never wrapped
};

// Known quantities per sample. Row order within each block is ascending bus id.
struct PfInputBatch {
  Eigen::MatrixXd gen_v;   // |Vg| x N voltage set-points
  Eigen::MatrixXd p;       // |V*| x N active injections at all non-slack buses
  Eigen::MatrixXd load_q;  // |Vl| x N reactive injections at load buses
};

// Solver outputs: the full final state plus reactive injections at generators.
struct PfOutputBatch {
  StateBatch state;
  Eigen::MatrixXd gen_q;  // |Vg| x N
};

struct Injections {
  Eigen::MatrixXd p;  // |V| x N
  Eigen::MatrixXd q;  // |V| x N
};

// Bus power injections from the current state under the line/shunt model.
Injections compute_injections(const IncidenceSet& inc, const AdmittanceParams& params,
                              const StateBatch& state);

// Residuals of the known equations, rows [P over V*; Q over V^l], m x N.
Eigen::MatrixXd mismatch(const GridTopology& topo, const Injections& inj,
                         const PfInputBatch& in);

// Dense per-sample Jacobian of the mismatch w.r.t. the unknowns
// [theta over V*; v over V^l], row blocks [P over V*; Q over V^l].
struct JacobianBlocks {
  std::vector<Eigen::MatrixXd> full;  // per sample, m x m
  int n_theta = 0;                    // |V*|, leading rows/cols
  int n_v = 0;                        // |V^l|, trailing rows/cols

  auto p_theta(int a) const { return full[a].topLeftCorner(n_theta, n_theta); }
  auto p_v(int a) const { return full[a].topRightCorner(n_theta, n_v); }
  auto q_theta(int a) const { return full[a].bottomLeftCorner(n_v, n_theta); }
  auto q_v(int a) const { return full[a].bottomRightCorner(n_v, n_v); }
};

JacobianBlocks assemble_jacobian(const GridTopology& topo, const IncidenceSet& inc,
                                 const AdmittanceParams& params, const StateBatch& state);

// v = set-points at generators and 1 elsewhere, theta = 0 everywhere.
StateBatch flat_start(const GridTopology& topo, const PfInputBatch& in);

// Exactly n Newton-Raphson steps from flat start, one dense LU solve per
// sample per step. Throws SingularJacobian (aborting the whole batch) when a
// sample's linear system is rank-deficient. If residual_log is given it
// receives, per step, the per-sample infinity norm of the mismatch before
// that step's update.
PfOutputBatch nr_solve(const GridTopology& topo, const IncidenceSet& inc,
                       const AdmittanceParams& params, const PfInputBatch& in, int n_steps,
                       std::vector<Eigen::VectorXd>* residual_log = nullptr);

struct ConvergeResult {
  PfOutputBatch out;
  Eigen::VectorXi iterations;  // updates applied per sample
};

// Iterate until the per-sample mismatch infinity norm falls below tol.
// Converged samples are frozen so batch composition cannot change results.
// Samples that hit max_iter, lose finiteness, or hit a singular system are
// reported together through NoConvergence.
ConvergeResult nr_converge(const GridTopology& topo, const IncidenceSet& inc,
                           const AdmittanceParams& params, const PfInputBatch& in,
                           double tol, int max_iter);

}  // namespace diffpf
