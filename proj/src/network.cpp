#include "diffpf/network.hpp"

#include <cmath>
#include <string>

namespace diffpf {

GridTopology::GridTopology(std::vector<BusKind> kinds, std::vector<Line> lines)
    : kinds_(std::move(kinds)), lines_(std::move(lines)) {
  const int v = n_buses();
  if (v == 0) throw Error("BadArgument", "topology has no buses");

  for (int i = 0; i < v; ++i) {
    if (kinds_[i] == BusKind::Slack) {
      if (slack_ != -1) throw Error("MultipleSlackBuses", "buses " + std::to_string(slack_) + " and " + std::to_string(i));
      slack_ = i;
    }
  }
  if (slack_ == -1) throw Error("NoSlackBus", "no bus of slack kind");

  for (std::size_t k = 0; k < lines_.size(); ++k) {
    const Line& ln = lines_[k];
    if (ln.from < 0 || ln.from >= v || ln.to < 0 || ln.to >= v)
      throw Error("DanglingBranch", "line " + std::to_string(k) + " endpoint out of range");
    if (ln.from == ln.to)
      throw Error("SelfLoop", "line " + std::to_string(k) + " at bus " + std::to_string(ln.from));
  }

  // undirected reachability from the slack
  std::vector<std::vector<int>> adj(v);
  for (const Line& ln : lines_) {
    adj[ln.from].push_back(ln.to);
    adj[ln.to].push_back(ln.from);
  }
  std::vector<char> seen(v, 0);
  std::vector<int> stack{slack_};
  seen[slack_] = 1;
  while (!stack.empty()) {
    int i = stack.back();
    stack.pop_back();
    for (int j : adj[i])
      if (!seen[j]) {
        seen[j] = 1;
        stack.push_back(j);
      }
  }
  for (int i = 0; i < v; ++i)
    if (!seen[i]) throw Error("Disconnected", "bus " + std::to_string(i) + " unreachable from slack");

  gen_pos_.assign(v, -1);
  load_pos_.assign(v, -1);
  non_slack_pos_.assign(v, -1);
  for (int i = 0; i < v; ++i) {
    if (kinds_[i] == BusKind::Generator) {
      gen_pos_[i] = static_cast<int>(generators_.size());
      generators_.push_back(i);
    } else if (kinds_[i] == BusKind::Load) {
      load_pos_[i] = static_cast<int>(loads_.size());
      loads_.push_back(i);
    }
    if (i != slack_) {
      non_slack_pos_[i] = static_cast<int>(non_slack_.size());
      non_slack_.push_back(i);
    }
  }
}

IncidenceSet build_incidence(const GridTopology& topo) {
  const int v = topo.n_buses();
  const int e = topo.n_lines();
  IncidenceSet inc;
  inc.b_out = Eigen::MatrixXd::Zero(v, e);
  inc.b_in = Eigen::MatrixXd::Zero(v, e);
  inc.from.resize(e);
  inc.to.resize(e);
  for (int k = 0; k < e; ++k) {
    const Line& ln = topo.lines()[k];
    inc.b_out(ln.from, k) = 1.0;
    inc.b_in(ln.to, k) = 1.0;
    inc.from[k] = ln.from;
    inc.to[k] = ln.to;
  }
  inc.b_plus = inc.b_in + inc.b_out;
  inc.b_minus = inc.b_in - inc.b_out;
  return inc;
}

LineAdmittances line_admittances(const AdmittanceParams& params) {
  LineAdmittances y;
  y.g = params.gamma.array().exp();
  y.b = -params.beta.array().exp();
  return y;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> log_params_from_admittances(
    const Eigen::VectorXd& g, const Eigen::VectorXd& b) {
  if (g.size() != b.size()) throw Error("BadArgument", "g and b length mismatch");
  for (Eigen::Index k = 0; k < g.size(); ++k) {
    if (!(g[k] > 0.0))
      throw Error("NonPositiveConductance", "line " + std::to_string(k) + ": g = " + std::to_string(g[k]));
    if (!(b[k] < 0.0))
      throw Error("NonNegativeSusceptance", "line " + std::to_string(k) + ": b = " + std::to_string(b[k]));
  }
  return {g.array().log(), (-b).array().log()};
}

LineAdmittances admittances_from_rx(const RxParams& rx) {
  if (rx.r.size() != rx.x.size()) throw Error("BadArgument", "r and x length mismatch");
  LineAdmittances y;
  y.g.resize(rx.r.size());
  y.b.resize(rx.r.size());
  for (Eigen::Index k = 0; k < rx.r.size(); ++k) {
    const double d = rx.r[k] * rx.r[k] + rx.x[k] * rx.x[k];
    if (d == 0.0) throw Error("DegenerateImpedance", "line " + std::to_string(k) + ": r = x = 0");
    y.g[k] = rx.r[k] / d;
    y.b[k] = -rx.x[k] / d;
  }
  return y;
}

double rx_regularizer(const RxParams& rx, double lambda) {
  double acc = 0.0;
  for (Eigen::Index k = 0; k < rx.r.size(); ++k) acc += std::max(0.0, -rx.r[k]);
  for (Eigen::Index k = 0; k < rx.x.size(); ++k) acc += std::max(0.0, -rx.x[k]);
  return lambda * acc;
}

Eigen::MatrixXcd admittance_matrix(int n_buses, const std::vector<Line>& lines,
                                   const LineAdmittances& y, const Eigen::VectorXd& shunt_g,
                                   const Eigen::VectorXd& shunt_b) {
  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(n_buses, n_buses);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const std::complex<double> yk(y.g[static_cast<Eigen::Index>(k)],
                                  y.b[static_cast<Eigen::Index>(k)]);
    const int f = lines[k].from, t = lines[k].to;
    m(f, f) += yk;
    m(t, t) += yk;
    m(f, t) -= yk;
    m(t, f) -= yk;
  }
  for (int i = 0; i < n_buses; ++i) m(i, i) += std::complex<double>(shunt_g[i], shunt_b[i]);
  return m;
}

Eigen::MatrixXcd admittance_matrix(const GridTopology& topo, const AdmittanceParams& params) {
  return admittance_matrix(topo.n_buses(), topo.lines(), line_admittances(params),
                           params.shunt_g, params.shunt_b);
}

}  // namespace diffpf
