#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>

#include "diffpf/powerflow.hpp"

namespace diffpf {

// Which generator-side residuals enter the fit objective. The v_g term is
// identically zero when generator voltages are pinned; it is kept selectable
// for completeness.
struct LossSpec {
  bool theta_g = true;
  bool q_g = true;
  bool p_g = true;
  bool v_g = false;
};

// Generator-side measurements aligned with PfInputBatch columns.
struct MeasurementBatch {
  Eigen::MatrixXd gen_v;      // |Vg| x N
  Eigen::MatrixXd gen_theta;  // |Vg| x N
  Eigen::MatrixXd gen_p;      // |Vg| x N
  Eigen::MatrixXd gen_q;      // |Vg| x N
};

// Gradient per parameter group; frozen groups are absent, never zero-filled.
struct ParamGradient {
  std::optional<Eigen::VectorXd> gamma, beta, shunt_g, shunt_b;
};

struct LossAndGradient {
  double loss = 0.0;
  ParamGradient grad;
};

// Mean squared generator residual of the n-step solver output,
// normalized by 1/(N * |Vg|) jointly over the enabled terms.
double loss_value(const GridTopology& topo, const IncidenceSet& inc,
                  const AdmittanceParams& params, const PfInputBatch& in,
                  const MeasurementBatch& meas, int n_steps, const LossSpec& spec);

// Same forward value plus the exact reverse-mode gradient through the
// unrolled solver iterations. Every forward linear solve contributes one
// transposed solve on the retained factorization; per-sample contributions
// accumulate in fixed sample order, so repeated calls are bitwise identical.
LossAndGradient loss_and_gradient(const GridTopology& topo, const IncidenceSet& inc,
                                  const AdmittanceParams& params, const PfInputBatch& in,
                                  const MeasurementBatch& meas, int n_steps,
                                  const LossSpec& spec);

// Central-difference gradient of an arbitrary scalar functional of the
// parameters, over the trainable coordinates only.
ParamGradient finite_diff(const AdmittanceParams& params,
                          const std::function<double(const AdmittanceParams&)>& f, double h);

// Central differences through the identical forward path as loss_value.
ParamGradient finite_diff_gradient(const GridTopology& topo, const IncidenceSet& inc,
                                   const AdmittanceParams& params, const PfInputBatch& in,
                                   const MeasurementBatch& meas, int n_steps,
                                   const LossSpec& spec, double h = 1e-6);

}  // namespace diffpf
