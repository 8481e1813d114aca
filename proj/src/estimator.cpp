#include "diffpf/estimator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "diffpf/rng.hpp"

namespace diffpf {

namespace {

// Flat packing of the trainable groups in fixed order gamma, beta,
// shunt_g, shunt_b; groups absent from grad contribute nothing.
Eigen::Index packed_size(const AdmittanceParams& params, const ParamGradient& grad) {
  Eigen::Index n = 0;
  if (grad.gamma) n += params.gamma.size();
  if (grad.beta) n += params.beta.size();
  if (grad.shunt_g) n += params.shunt_g.size();
  if (grad.shunt_b) n += params.shunt_b.size();
  return n;
}

}  // namespace

void adam_step(AdamState& state, AdmittanceParams& params, const ParamGradient& grad,
               const TrainConfig& cfg) {
  const Eigen::Index n = packed_size(params, grad);
  if (n == 0) throw Error("BadArgument", "no trainable parameter groups in gradient");
  Eigen::VectorXd g(n);
  Eigen::Index at = 0;
  auto pack = [&](const std::optional<Eigen::VectorXd>& part) {
    if (!part) return;
    g.segment(at, part->size()) = *part;
    at += part->size();
  };
  pack(grad.gamma);
  pack(grad.beta);
  pack(grad.shunt_g);
  pack(grad.shunt_b);

  if (state.m.size() == 0) {
    state.m = Eigen::VectorXd::Zero(n);
    state.u = Eigen::VectorXd::Zero(n);
    state.t = 0;
  }
  if (state.m.size() != n)
    throw Error("BadArgument", "optimizer state sized for a different parameter set");

  state.t += 1;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g;
  state.u = cfg.beta2 * state.u + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  const double mc = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double uc = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const Eigen::ArrayXd m_hat = state.m.array() / mc;
  const Eigen::ArrayXd u_hat = state.u.array() / uc;
  const Eigen::VectorXd step = (cfg.lr * m_hat / (u_hat.sqrt() + cfg.eps)).matrix();
  at = 0;
  auto unpack = [&](const std::optional<Eigen::VectorXd>& part,
                    Eigen::VectorXd AdmittanceParams::* field) {
    if (!part) return;
    (params.*field) -= step.segment(at, part->size());
    at += part->size();
  };
  unpack(grad.gamma, &AdmittanceParams::gamma);
  unpack(grad.beta, &AdmittanceParams::beta);
  unpack(grad.shunt_g, &AdmittanceParams::shunt_g);
  unpack(grad.shunt_b, &AdmittanceParams::shunt_b);
}

double reconstruction_error(const GridTopology& topo, const AdmittanceParams& params,
                            const AdmittanceParams& ref, const AdmittanceParams& init) {
  const Eigen::MatrixXcd y = admittance_matrix(topo, params);
  const Eigen::MatrixXcd y_ref = admittance_matrix(topo, ref);
  const Eigen::MatrixXcd y_init = admittance_matrix(topo, init);
  const double denom = (y_init - y_ref).norm();
  if (denom == 0.0)
    throw Error("ZeroNormalizer", "init and reference admittances coincide");
  return (y - y_ref).norm() / denom;
}

PfInputBatch inputs_from_samples(const GridTopology& topo, const DatasetFile& data,
                                 const std::vector<int>& idx) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  const auto n_gen = static_cast<Eigen::Index>(topo.generators().size());
  const auto n_load = static_cast<Eigen::Index>(topo.loads().size());
  const auto nst = static_cast<Eigen::Index>(topo.non_slack().size());
  PfInputBatch in;
  in.gen_v.resize(n_gen, n);
  in.p.resize(nst, n);
  in.load_q.resize(n_load, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    const DatasetSample& s = data.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])];
    in.gen_v.col(a) = s.gen_v;
    for (Eigen::Index r = 0; r < n_gen; ++r)
      in.p(topo.non_slack_pos(topo.generators()[static_cast<std::size_t>(r)]), a) = s.gen_p[r];
    for (Eigen::Index r = 0; r < n_load; ++r)
      in.p(topo.non_slack_pos(topo.loads()[static_cast<std::size_t>(r)]), a) = s.load_p[r];
    in.load_q.col(a) = s.load_q;
  }
  return in;
}

MeasurementBatch measurements_from_samples(const GridTopology& topo, const DatasetFile& data,
                                           const std::vector<int>& idx) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  const auto n_gen = static_cast<Eigen::Index>(topo.generators().size());
  MeasurementBatch meas;
  meas.gen_v.resize(n_gen, n);
  meas.gen_theta.resize(n_gen, n);
  meas.gen_p.resize(n_gen, n);
  meas.gen_q.resize(n_gen, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    const DatasetSample& s = data.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])];
    meas.gen_v.col(a) = s.gen_v;
    meas.gen_theta.col(a) = s.gen_theta;
    meas.gen_p.col(a) = s.gen_p;
    meas.gen_q.col(a) = s.gen_q;
  }
  return meas;
}

double validation_error(const GridTopology& topo, const IncidenceSet& inc,
                        const AdmittanceParams& params, const DatasetFile& data,
                        const std::vector<int>& sample_indices, int n_steps) {
  if (sample_indices.empty()) throw Error("BadArgument", "no samples to evaluate");
  for (const int i : sample_indices)
    if (!data.samples[static_cast<std::size_t>(i)].has_hidden)
      throw Error("MissingGroundTruth",
                  "sample " + std::to_string(i) + " lacks the hidden load-state block");
  const PfInputBatch in = inputs_from_samples(topo, data, sample_indices);
  const PfOutputBatch out = nr_solve(topo, inc, params, in, n_steps);
  const auto n = static_cast<Eigen::Index>(sample_indices.size());
  const auto n_gen = static_cast<Eigen::Index>(topo.generators().size());
  const auto n_load = static_cast<Eigen::Index>(topo.loads().size());
  double acc = 0.0;
  for (Eigen::Index a = 0; a < n; ++a) {
    const DatasetSample& s =
        data.samples[static_cast<std::size_t>(sample_indices[static_cast<std::size_t>(a)])];
    for (Eigen::Index r = 0; r < n_gen; ++r) {
      const int bus = topo.generators()[static_cast<std::size_t>(r)];
      const double dth = out.state.theta(bus, a) - s.gen_theta[r];
      const double dq = out.gen_q(r, a) - s.gen_q[r];
      acc += dth * dth + dq * dq;
    }
    for (Eigen::Index r = 0; r < n_load; ++r) {
      const int bus = topo.loads()[static_cast<std::size_t>(r)];
      const double dth = out.state.theta(bus, a) - s.load_theta[r];
      const double dv = out.state.v(bus, a) - s.load_v[r];
      acc += dth * dth + dv * dv;
    }
  }
  return acc / (static_cast<double>(n) * static_cast<double>(topo.n_buses()));
}

double dataset_loss(const GridTopology& topo, const IncidenceSet& inc,
                    const AdmittanceParams& params, const DatasetFile& data,
                    const std::vector<int>& idx, int n_steps, const LossSpec& spec) {
  if (idx.empty()) throw Error("BadArgument", "no samples to evaluate");
  const PfInputBatch in = inputs_from_samples(topo, data, idx);
  const MeasurementBatch meas = measurements_from_samples(topo, data, idx);
  return loss_value(topo, inc, params, in, meas, n_steps, spec);
}

AdmittanceParams perturbed_init(const AdmittanceParams& ref, double sigma,
                                unsigned long long seed) {
  AdmittanceParams out = ref;
  std::mt19937_64 rng(substream_seed(seed, "init"));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index k = 0; k < out.gamma.size(); ++k) out.gamma[k] += sigma * normal(rng);
  for (Eigen::Index k = 0; k < out.beta.size(); ++k) out.beta[k] += sigma * normal(rng);
  return out;
}

TrainResult train(const GridTopology& topo, const DatasetFile& data,
                  const AdmittanceParams& init, const std::optional<AdmittanceParams>& ref,
                  const TrainConfig& cfg, const LossSpec& spec,
                  const EpochCallback& on_epoch) {
  check_dataset_shape(data, topo);
  const std::vector<int> train_idx = data.train_indices();
  const std::vector<int> valid_idx = data.valid_indices();
  if (train_idx.empty()) throw Error("EmptyTrainSet", "no samples are tagged train");
  if (cfg.epochs < 1) throw Error("BadArgument", "epochs must be >= 1");
  if (cfg.batch < 1) throw Error("BadArgument", "batch must be >= 1");

  const IncidenceSet inc = build_incidence(topo);
  const auto n_train = static_cast<int>(train_idx.size());
  const int batch = std::min(cfg.batch, n_train);

  TrainResult result;
  result.params = init;
  AdamState adam;
  std::mt19937_64 shuffle_rng(substream_seed(cfg.seed, "shuffle"));
  std::vector<int> order = train_idx;

  double first_batch_loss = -1.0;
  double are_checkpoint = -1.0;
  double loss_checkpoint = -1.0;

  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();

  for (long long epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (int start = 0; start < n_train; start += batch) {
      const int len = std::min(batch, n_train - start);
      const std::vector<int> chunk(order.begin() + start, order.begin() + start + len);
      const PfInputBatch in = inputs_from_samples(topo, data, chunk);
      const MeasurementBatch meas = measurements_from_samples(topo, data, chunk);
      const LossAndGradient lg =
          loss_and_gradient(topo, inc, result.params, in, meas, cfg.n_steps, spec);
      if (first_batch_loss < 0.0) first_batch_loss = lg.loss;
      if (!std::isfinite(lg.loss) || !(lg.loss <= 1e6 * first_batch_loss))
        throw Error("Diverged", "batch loss " + std::to_string(lg.loss) + " at epoch " +
                                    std::to_string(epoch));
      adam_step(adam, result.params, lg.grad, cfg);
      epoch_loss += lg.loss * static_cast<double>(len);
    }
    epoch_loss /= static_cast<double>(n_train);

    MetricsRecord rec;
    rec.epoch = epoch;
    rec.loss = epoch_loss;
    if (ref) rec.are = reconstruction_error(topo, result.params, *ref, init);
    const bool eval_now =
        cfg.eval_every > 0 &&
        ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) && !valid_idx.empty();
    if (eval_now)
      rec.valid_err =
          validation_error(topo, inc, result.params, data, valid_idx, cfg.n_steps);
    if (cfg.record_timing)
      rec.elapsed_s = std::chrono::duration<double>(Clock::now() - t0).count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(EpochInfo{epoch, result.params, result.history.back()});

    if (cfg.stop_on_are_rise && ref && (epoch + 1) % 1000 == 0) {
      const double are_now = *rec.are;
      if (are_checkpoint >= 0.0 && are_now > are_checkpoint &&
          epoch_loss < loss_checkpoint) {
        result.stopped_early = true;
        break;
      }
      are_checkpoint = are_now;
      loss_checkpoint = epoch_loss;
    }
  }
  return result;
}

}  // namespace diffpf
