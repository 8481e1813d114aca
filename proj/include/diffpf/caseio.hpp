#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "diffpf/network.hpp"

namespace diffpf {

// Nominal operating data extracted from a case file, in per-unit.
struct BaseOperatingPoint {
  Eigen::VectorXd gen_v;   // |Vg| voltage set-points
  Eigen::VectorXd p;       // |V*| active injections
  Eigen::VectorXd load_q;  // |Vl| reactive injections
  Eigen::VectorXd vm;      // |V| reference voltage magnitudes from the file
  Eigen::VectorXd va;      // |V| reference angles, radians
};

struct ParsedCase {
  std::string name;  // from the leading function line, may be empty
  GridTopology topology;
  BaseOperatingPoint base;
  AdmittanceParams nominal;
  std::vector<int> external_ids;  // dense index -> bus id used in the file
  std::vector<std::string> warnings;
};

// Parse MATPOWER-style case text (mpc.* assignments, '%' comments, matrices
// with rows split by ';' or newline). Throws ParseError with a stable code
// and a 1-based source position.
ParsedCase parse_case(const std::string& text);
ParsedCase load_case(const std::string& path);

struct DatasetSample {
  int id = 0;
  bool train = false;
  Eigen::VectorXd gen_v, gen_theta, gen_p, gen_q;  // |Vg|
  Eigen::VectorXd load_p, load_q;                  // |Vl|
  // Ground-truth load state recorded by the generator, absent in field data.
  Eigen::VectorXd load_v, load_theta;  // |Vl| when has_hidden
  bool has_hidden = false;
};

struct DatasetFile {
  std::string case_name;
  unsigned long long seed = 0;
  std::string split_rule;  // e.g. "none", "every_kth:50"
  int n_gen = 0, n_load = 0;
  bool hidden = false;
  int resampled = 0;  // solver retries consumed during generation
  std::vector<DatasetSample> samples;

  std::vector<int> train_indices() const;
  std::vector<int> valid_indices() const;
};

// One-line JSON header followed by CSV rows; byte-deterministic, values
// round-trip at 17 significant digits.
void write_dataset(const std::string& path, const DatasetFile& data);
DatasetFile read_dataset(const std::string& path);

// ShapeMismatch unless block widths match the topology's bus classes.
void check_dataset_shape(const DatasetFile& data, const GridTopology& topo);

// JSON parameter document carrying line endpoints for alignment checks.
void write_params(const std::string& path, const AdmittanceParams& params,
                  const GridTopology& topo, const std::string& case_name);
// Throws TopologyMismatch when line count or endpoints disagree with topo.
AdmittanceParams read_params(const std::string& path, const GridTopology& topo);

struct MetricsRecord {
  long long epoch = 0;
  double loss = 0.0;
  std::optional<double> are;
  std::optional<double> valid_err;
  std::optional<double> elapsed_s;
};

// Appends one CSV row, writing the header first when the file is new/empty.
// Absent optional fields become empty CSV fields.
void append_metrics(const std::string& path, const MetricsRecord& record);

std::vector<MetricsRecord> read_metrics(const std::string& path);

}  // namespace diffpf
