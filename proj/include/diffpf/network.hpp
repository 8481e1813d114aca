#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "diffpf/errors.hpp"

namespace diffpf {

enum class BusKind { Slack, Generator, Load };

// Directed line between dense bus indices. Direction only fixes the sign
// convention of the incidence matrices; the admittance model is symmetric.
struct Line {
  int from;
  int to;
};

// Validated grid graph: dense bus ids 0..V-1, exactly one slack bus, no
// self-loops, every line endpoint valid, connected as an undirected graph.
class GridTopology {
 public:
  GridTopology() = default;  // empty placeholder, not a valid grid
  GridTopology(std::vector<BusKind> kinds, std::vector<Line> lines);

  int n_buses() const { return static_cast<int>(kinds_.size()); }
  int n_lines() const { return static_cast<int>(lines_.size()); }
  BusKind kind(int bus) const { return kinds_[bus]; }
  const std::vector<BusKind>& kinds() const { return kinds_; }
  const std::vector<Line>& lines() const { return lines_; }

  int slack() const { return slack_; }
  const std::vector<int>& generators() const { return generators_; }
  const std::vector<int>& loads() const { return loads_; }
  // All non-slack buses in ascending id order; the angle unknowns follow it.
  const std::vector<int>& non_slack() const { return non_slack_; }

  int gen_pos(int bus) const { return gen_pos_[bus]; }
  int load_pos(int bus) const { return load_pos_[bus]; }
  int non_slack_pos(int bus) const { return non_slack_pos_[bus]; }

 private:
  std::vector<BusKind> kinds_;
  std::vector<Line> lines_;
  int slack_ = -1;
  std::vector<int> generators_, loads_, non_slack_;
  std::vector<int> gen_pos_, load_pos_, non_slack_pos_;
};

// The four signed bus-line incidence matrices (|V| x E) plus the endpoint
// index form that the hot loops use.
struct IncidenceSet {
  Eigen::MatrixXd b_out;    // b_out(i,k) = 1 iff bus i is the source of line k
  Eigen::MatrixXd b_in;     // b_in(i,k)  = 1 iff bus i is the target of line k
  Eigen::MatrixXd b_plus;   // b_in + b_out
  Eigen::MatrixXd b_minus;  // b_in - b_out
  std::vector<int> from, to;
};

IncidenceSet build_incidence(const GridTopology& topo);

struct LineAdmittances {
  Eigen::VectorXd g;  // series conductance per line, > 0
  Eigen::VectorXd b;  // series susceptance per line, < 0
};

// Which parameter groups the optimizer may move. Gradients of frozen groups
// are absent from ParamGradient, never zero-filled.
struct TrainMask {
  bool gamma = true;
  bool beta = true;
  bool shunt_g = false;
  bool shunt_b = false;
};

// Sign-safe line parameterization g = exp(gamma), b = -exp(beta), plus fixed
// per-bus shunt admittances (line charging folded in at parse time).
struct AdmittanceParams {
  Eigen::VectorXd gamma;    // per line
  Eigen::VectorXd beta;     // per line
  Eigen::VectorXd shunt_g;  // per bus
  Eigen::VectorXd shunt_b;  // per bus
  TrainMask trainable;
};

LineAdmittances line_admittances(const AdmittanceParams& params);

// Inverse of line_admittances. Throws NonPositiveConductance for g <= 0 and
// NonNegativeSusceptance for b >= 0 (the log map does not cover those signs).
std::pair<Eigen::VectorXd, Eigen::VectorXd> log_params_from_admittances(
    const Eigen::VectorXd& g, const Eigen::VectorXd& b);

// Alternative physical parameterization by series resistance/reactance.
struct RxParams {
  Eigen::VectorXd r;
  Eigen::VectorXd x;
};

// g = r/(r^2+x^2), b = -x/(r^2+x^2). Throws DegenerateImpedance when both
// components of a line vanish.
LineAdmittances admittances_from_rx(const RxParams& rx);

// Hinge penalty lambda * sum_k(max(0,-r_k) + max(0,-x_k)) keeping the rx
// parameterization in the physical quadrant.
double rx_regularizer(const RxParams& rx, double lambda);

// Dense complex bus admittance matrix. Exactly symmetric bitwise; row sums
// equal the bus shunt admittances.
Eigen::MatrixXcd admittance_matrix(int n_buses, const std::vector<Line>& lines,
                                   const LineAdmittances& y,
                                   const Eigen::VectorXd& shunt_g,
                                   const Eigen::VectorXd& shunt_b);
Eigen::MatrixXcd admittance_matrix(const GridTopology& topo,
                                   const AdmittanceParams& params);

}  // namespace diffpf
