#pragma once

#include <string>

#include "diffpf/caseio.hpp"
#include "diffpf/powerflow.hpp"

namespace diffpf {

struct ScenarioConfig {
  int samples = 2000;
  double load_spread = 0.2;   // multiplicative half-width on load p
  double q_spread = 0.2;      // multiplicative half-width on load q
  double vg_spread = 0.02;    // additive half-width on generator set-points, pu
  unsigned long long seed = 0;
  double tol = 1e-10;
  int max_iter = 50;
  int max_retries = 20;  // per-sample resampling budget
};

// Perturbed operating points around the base case: load p and q drawn with
// independent uniform factors in [1-s, 1+s], generator-bus active injections
// scaled by the sampled-to-base total load ratio to keep the active balance,
// generator set-points shifted uniformly within +-vg_spread. All draws come
// from the "scenario" substream of the configured seed.
PfInputBatch sample_scenarios(const GridTopology& topo, const BaseOperatingPoint& base,
                              const ScenarioConfig& cfg);

// Solve every sampled scenario to tolerance at the reference parameters and
// record observed generator data, load injections, and the hidden load state.
// Failed scenarios are resampled within max_retries (counted in the header);
// exhausting the budget throws GenerationFailed. Every record is re-verified
// against compute_injections before return.
DatasetFile generate_dataset(const GridTopology& topo, const IncidenceSet& inc,
                             const AdmittanceParams& ref, const BaseOperatingPoint& base,
                             const ScenarioConfig& cfg, const std::string& case_name);

struct SplitRule {
  enum class Kind { EveryKth, Fraction };
  Kind kind = Kind::EveryKth;
  int k = 50;
  double fraction = 0.02;

  static SplitRule every_kth(int k);
  static SplitRule by_fraction(double f);
  std::string describe() const;
};

// Deterministic tagging; every_kth sends indices == 0 (mod k) to train.
// Throws EmptyTrainSet when nothing lands in train; an empty validation set
// is only a warning.
void split_dataset(DatasetFile& data, const SplitRule& rule,
                   std::vector<std::string>* warnings = nullptr);

}  // namespace diffpf
