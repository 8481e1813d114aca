#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "diffpf/caseio.hpp"
#include "diffpf/gradients.hpp"

namespace diffpf {

struct TrainConfig {
  double lr = 1e-4;
  long long epochs = 1;
  int batch = 8;
  unsigned long long seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int n_steps = 3;
  long long eval_every = 1000;  // validation cadence, 0 disables
  bool record_timing = true;    // false keeps metrics files byte-reproducible
  bool stop_on_are_rise = false;
};

// First and second moment accumulators over the flattened trainable
// coordinates, in fixed group order gamma, beta, shunt_g, shunt_b.
struct AdamState {
  Eigen::VectorXd m, u;
  long long t = 0;
};

// One bias-corrected update; lazily sizes the moments on first use.
// Only gradient groups present in grad are packed, so frozen groups can
// never leak zeros into the update.
void adam_step(AdamState& state, AdmittanceParams& params, const ParamGradient& grad,
               const TrainConfig& cfg);

// Relative admittance reconstruction error
// |Y(params) - Y(ref)|_F / |Y(init) - Y(ref)|_F; exactly 1 at init and 0 at
// ref. Throws ZeroNormalizer when init and ref coincide.
double reconstruction_error(const GridTopology& topo, const AdmittanceParams& params,
                            const AdmittanceParams& ref, const AdmittanceParams& init);

// Mean squared full-state error of the n-step solver against the recorded
// ground truth over the given samples, normalized by 1/(N * |V|).
// Throws MissingGroundTruth when hidden load state is absent.
double validation_error(const GridTopology& topo, const IncidenceSet& inc,
                        const AdmittanceParams& params, const DatasetFile& data,
                        const std::vector<int>& sample_indices, int n_steps);

PfInputBatch inputs_from_samples(const GridTopology& topo, const DatasetFile& data,
                                 const std::vector<int>& idx);
MeasurementBatch measurements_from_samples(const GridTopology& topo, const DatasetFile& data,
                                           const std::vector<int>& idx);

// Forward loss over a sample set.
double dataset_loss(const GridTopology& topo, const IncidenceSet& inc,
                    const AdmittanceParams& params, const DatasetFile& data,
                    const std::vector<int>& idx, int n_steps, const LossSpec& spec);

// ref with gamma/beta perturbed by sigma * N(0,1) in log space ("init" seed
// substream); shunts copied unchanged.
AdmittanceParams perturbed_init(const AdmittanceParams& ref, double sigma,
                                unsigned long long seed);

struct EpochInfo {
  long long epoch;
  const AdmittanceParams& params;
  const MetricsRecord& record;
};
using EpochCallback = std::function<void(const EpochInfo&)>;

struct TrainResult {
  AdmittanceParams params;
  std::vector<MetricsRecord> history;
  bool stopped_early = false;
};

// Mini-batch Adam over the training split with a seeded epoch shuffle.
// Records one MetricsRecord per epoch (ARE only when ref is given,
// validation error on the eval_every cadence and at the final epoch).
// Throws Diverged when a batch loss is not finite or exceeds 1e6 x the first
// batch loss; throws EmptyTrainSet when no samples are tagged train.
TrainResult train(const GridTopology& topo, const DatasetFile& data,
                  const AdmittanceParams& init, const std::optional<AdmittanceParams>& ref,
                  const TrainConfig& cfg, const LossSpec& spec,
                  const EpochCallback& on_epoch = {});

}  // namespace diffpf
