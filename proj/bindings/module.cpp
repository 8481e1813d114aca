#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "diffpf/datagen.hpp"
#include "diffpf/estimator.hpp"

namespace py = pybind11;
using namespace diffpf;

PYBIND11_MODULE(_core, m) {
  m.doc() = "differentiable fixed-depth power-flow solving and line-parameter recovery";

  py::register_exception<Error>(m, "DiffpfError");

  py::enum_<BusKind>(m, "BusKind")
      .value("SLACK", BusKind::Slack)
      .value("GENERATOR", BusKind::Generator)
      .value("LOAD", BusKind::Load);

  py::class_<Line>(m, "Line")
      .def(py::init<int, int>(), py::arg("from_bus"), py::arg("to_bus"))
      .def_readwrite("from_bus", &Line::from)
      .def_readwrite("to_bus", &Line::to)
      .def("__repr__", [](const Line& l) {
        return "Line(" + std::to_string(l.from) + ", " + std::to_string(l.to) + ")";
      });

  py::class_<GridTopology>(m, "GridTopology")
      .def(py::init<std::vector<BusKind>, std::vector<Line>>(), py::arg("kinds"),
           py::arg("lines"))
      .def_property_readonly("n_buses", &GridTopology::n_buses)
      .def_property_readonly("n_lines", &GridTopology::n_lines)
      .def_property_readonly("slack", &GridTopology::slack)
      .def_property_readonly("generators", &GridTopology::generators)
      .def_property_readonly("loads", &GridTopology::loads)
      .def_property_readonly("non_slack", &GridTopology::non_slack)
      .def_property_readonly("lines", &GridTopology::lines)
      .def("kind", &GridTopology::kind, py::arg("bus"));

  py::class_<IncidenceSet>(m, "IncidenceSet");
  m.def("build_incidence", &build_incidence, py::arg("topology"));

  py::class_<TrainMask>(m, "TrainMask")
      .def(py::init<>())
      .def_readwrite("gamma", &TrainMask::gamma)
      .def_readwrite("beta", &TrainMask::beta)
      .def_readwrite("shunt_g", &TrainMask::shunt_g)
      .def_readwrite("shunt_b", &TrainMask::shunt_b);

  py::class_<AdmittanceParams>(m, "AdmittanceParams")
      .def(py::init<>())
      .def_readwrite("gamma", &AdmittanceParams::gamma)
      .def_readwrite("beta", &AdmittanceParams::beta)
      .def_readwrite("shunt_g", &AdmittanceParams::shunt_g)
      .def_readwrite("shunt_b", &AdmittanceParams::shunt_b)
      .def_readwrite("trainable", &AdmittanceParams::trainable);

  py::class_<LineAdmittances>(m, "LineAdmittances")
      .def_readonly("g", &LineAdmittances::g)
      .def_readonly("b", &LineAdmittances::b);
  m.def("line_admittances", &line_admittances, py::arg("params"));
  m.def("log_params_from_admittances", &log_params_from_admittances, py::arg("g"),
        py::arg("b"));
  m.def("admittance_matrix",
        py::overload_cast<const GridTopology&, const AdmittanceParams&>(&admittance_matrix),
        py::arg("topology"), py::arg("params"));

  py::class_<BaseOperatingPoint>(m, "BaseOperatingPoint")
      .def_readonly("gen_v", &BaseOperatingPoint::gen_v)
      .def_readonly("p", &BaseOperatingPoint::p)
      .def_readonly("load_q", &BaseOperatingPoint::load_q)
      .def_readonly("vm", &BaseOperatingPoint::vm)
      .def_readonly("va", &BaseOperatingPoint::va);

  py::class_<ParsedCase>(m, "ParsedCase")
      .def_readonly("name", &ParsedCase::name)
      .def_readonly("topology", &ParsedCase::topology)
      .def_readonly("base", &ParsedCase::base)
      .def_readonly("nominal", &ParsedCase::nominal)
      .def_readonly("external_ids", &ParsedCase::external_ids)
      .def_readonly("warnings", &ParsedCase::warnings);
  m.def("parse_case", &parse_case, py::arg("text"));
  m.def("load_case", &load_case, py::arg("path"));

  py::class_<StateBatch>(m, "StateBatch")
      .def(py::init<>())
      .def_readwrite("v", &StateBatch::v)
      .def_readwrite("theta", &StateBatch::theta);

  py::class_<PfInputBatch>(m, "PfInputBatch")
      .def(py::init<>())
      .def_readwrite("gen_v", &PfInputBatch::gen_v)
      .def_readwrite("p", &PfInputBatch::p)
      .def_readwrite("load_q", &PfInputBatch::load_q);

  py::class_<PfOutputBatch>(m, "PfOutputBatch")
      .def_readonly("state", &PfOutputBatch::state)
      .def_readonly("gen_q", &PfOutputBatch::gen_q);

  py::class_<Injections>(m, "Injections")
      .def_readonly("p", &Injections::p)
      .def_readonly("q", &Injections::q);
  m.def("compute_injections", &compute_injections, py::arg("incidence"), py::arg("params"),
        py::arg("state"));
  m.def("mismatch", &mismatch, py::arg("topology"), py::arg("injections"), py::arg("input"));
  m.def("flat_start", &flat_start, py::arg("topology"), py::arg("input"));
  m.def(
      "nr_solve",
      [](const GridTopology& topo, const IncidenceSet& inc, const AdmittanceParams& params,
         const PfInputBatch& in, int n_steps) {
        return nr_solve(topo, inc, params, in, n_steps);
      },
      py::arg("topology"), py::arg("incidence"), py::arg("params"), py::arg("input"),
      py::arg("n_steps"));

  py::class_<ConvergeResult>(m, "ConvergeResult")
      .def_readonly("out", &ConvergeResult::out)
      .def_readonly("iterations", &ConvergeResult::iterations);
  m.def("nr_converge", &nr_converge, py::arg("topology"), py::arg("incidence"),
        py::arg("params"), py::arg("input"), py::arg("tol") = 1e-10,
        py::arg("max_iter") = 50);

  py::class_<LossSpec>(m, "LossSpec")
      .def(py::init<>())
      .def_readwrite("theta_g", &LossSpec::theta_g)
      .def_readwrite("q_g", &LossSpec::q_g)
      .def_readwrite("p_g", &LossSpec::p_g)
      .def_readwrite("v_g", &LossSpec::v_g);

  py::class_<MeasurementBatch>(m, "MeasurementBatch")
      .def(py::init<>())
      .def_readwrite("gen_v", &MeasurementBatch::gen_v)
      .def_readwrite("gen_theta", &MeasurementBatch::gen_theta)
      .def_readwrite("gen_p", &MeasurementBatch::gen_p)
      .def_readwrite("gen_q", &MeasurementBatch::gen_q);

  py::class_<ParamGradient>(m, "ParamGradient")
      .def_readonly("gamma", &ParamGradient::gamma)
      .def_readonly("beta", &ParamGradient::beta)
      .def_readonly("shunt_g", &ParamGradient::shunt_g)
      .def_readonly("shunt_b", &ParamGradient::shunt_b);

  m.def("loss_value", &loss_value, py::arg("topology"), py::arg("incidence"),
        py::arg("params"), py::arg("input"), py::arg("measurements"), py::arg("n_steps"),
        py::arg("spec") = LossSpec{});
  m.def(
      "loss_and_gradient",
      [](const GridTopology& topo, const IncidenceSet& inc, const AdmittanceParams& params,
         const PfInputBatch& in, const MeasurementBatch& meas, int n_steps,
         const LossSpec& spec) {
        const LossAndGradient lg = loss_and_gradient(topo, inc, params, in, meas, n_steps, spec);
        return py::make_tuple(lg.loss, lg.grad);
      },
      py::arg("topology"), py::arg("incidence"), py::arg("params"), py::arg("input"),
      py::arg("measurements"), py::arg("n_steps"), py::arg("spec") = LossSpec{});
  m.def("finite_diff_gradient", &finite_diff_gradient, py::arg("topology"),
        py::arg("incidence"), py::arg("params"), py::arg("input"), py::arg("measurements"),
        py::arg("n_steps"), py::arg("spec") = LossSpec{}, py::arg("h") = 1e-6);

  py::class_<DatasetSample>(m, "DatasetSample")
      .def_readonly("id", &DatasetSample::id)
      .def_readonly("train", &DatasetSample::train)
      .def_readonly("gen_v", &DatasetSample::gen_v)
      .def_readonly("gen_theta", &DatasetSample::gen_theta)
      .def_readonly("gen_p", &DatasetSample::gen_p)
      .def_readonly("gen_q", &DatasetSample::gen_q)
      .def_readonly("load_p", &DatasetSample::load_p)
      .def_readonly("load_q", &DatasetSample::load_q)
      .def_readonly("load_v", &DatasetSample::load_v)
      .def_readonly("load_theta", &DatasetSample::load_theta)
      .def_readonly("has_hidden", &DatasetSample::has_hidden);

  py::class_<DatasetFile>(m, "DatasetFile")
      .def_readonly("case_name", &DatasetFile::case_name)
      .def_readonly("seed", &DatasetFile::seed)
      .def_readonly("split_rule", &DatasetFile::split_rule)
      .def_readonly("n_gen", &DatasetFile::n_gen)
      .def_readonly("n_load", &DatasetFile::n_load)
      .def_readonly("hidden", &DatasetFile::hidden)
      .def_readonly("resampled", &DatasetFile::resampled)
      .def_readonly("samples", &DatasetFile::samples)
      .def("train_indices", &DatasetFile::train_indices)
      .def("valid_indices", &DatasetFile::valid_indices);
  m.def("write_dataset", &write_dataset, py::arg("path"), py::arg("data"));
  m.def("read_dataset", &read_dataset, py::arg("path"));
  m.def("write_params", &write_params, py::arg("path"), py::arg("params"),
        py::arg("topology"), py::arg("case_name"));
  m.def("read_params", &read_params, py::arg("path"), py::arg("topology"));

  py::class_<ScenarioConfig>(m, "ScenarioConfig")
      .def(py::init<>())
      .def_readwrite("samples", &ScenarioConfig::samples)
      .def_readwrite("load_spread", &ScenarioConfig::load_spread)
      .def_readwrite("q_spread", &ScenarioConfig::q_spread)
      .def_readwrite("vg_spread", &ScenarioConfig::vg_spread)
      .def_readwrite("seed", &ScenarioConfig::seed)
      .def_readwrite("tol", &ScenarioConfig::tol)
      .def_readwrite("max_iter", &ScenarioConfig::max_iter)
      .def_readwrite("max_retries", &ScenarioConfig::max_retries);
  m.def("sample_scenarios", &sample_scenarios, py::arg("topology"), py::arg("base"),
        py::arg("config"));
  m.def("generate_dataset", &generate_dataset, py::arg("topology"), py::arg("incidence"),
        py::arg("ref"), py::arg("base"), py::arg("config"), py::arg("case_name"));

  py::class_<SplitRule>(m, "SplitRule")
      .def_static("every_kth", &SplitRule::every_kth, py::arg("k"))
      .def_static("by_fraction", &SplitRule::by_fraction, py::arg("fraction"))
      .def("describe", &SplitRule::describe);
  m.def(
      "split_dataset",
      [](DatasetFile& data, const SplitRule& rule) {
        std::vector<std::string> warnings;
        split_dataset(data, rule, &warnings);
        return warnings;
      },
      py::arg("data"), py::arg("rule"));

  m.def("inputs_from_samples", &inputs_from_samples, py::arg("topology"), py::arg("data"),
        py::arg("indices"));
  m.def("measurements_from_samples", &measurements_from_samples, py::arg("topology"),
        py::arg("data"), py::arg("indices"));
  m.def("dataset_loss", &dataset_loss, py::arg("topology"), py::arg("incidence"),
        py::arg("params"), py::arg("data"), py::arg("indices"), py::arg("n_steps"),
        py::arg("spec") = LossSpec{});
  m.def("validation_error", &validation_error, py::arg("topology"), py::arg("incidence"),
        py::arg("params"), py::arg("data"), py::arg("indices"), py::arg("n_steps"));
  m.def("reconstruction_error", &reconstruction_error, py::arg("topology"),
        py::arg("params"), py::arg("ref"), py::arg("init"));
  m.def("perturbed_init", &perturbed_init, py::arg("ref"), py::arg("sigma"), py::arg("seed"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch", &TrainConfig::batch)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("beta1", &TrainConfig::beta1)
      .def_readwrite("beta2", &TrainConfig::beta2)
      .def_readwrite("eps", &TrainConfig::eps)
      .def_readwrite("n_steps", &TrainConfig::n_steps)
      .def_readwrite("eval_every", &TrainConfig::eval_every)
      .def_readwrite("record_timing", &TrainConfig::record_timing)
      .def_readwrite("stop_on_are_rise", &TrainConfig::stop_on_are_rise);

  py::class_<MetricsRecord>(m, "MetricsRecord")
      .def_readonly("epoch", &MetricsRecord::epoch)
      .def_readonly("loss", &MetricsRecord::loss)
      .def_readonly("are", &MetricsRecord::are)
      .def_readonly("valid_err", &MetricsRecord::valid_err)
      .def_readonly("elapsed_s", &MetricsRecord::elapsed_s);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("params", &TrainResult::params)
      .def_readonly("history", &TrainResult::history)
      .def_readonly("stopped_early", &TrainResult::stopped_early);
  m.def(
      "train",
      [](const GridTopology& topo, const DatasetFile& data, const AdmittanceParams& init,
         const std::optional<AdmittanceParams>& ref, const TrainConfig& cfg,
         const LossSpec& spec) { return train(topo, data, init, ref, cfg, spec); },
      py::arg("topology"), py::arg("data"), py::arg("init"),
      py::arg("ref") = std::nullopt, py::arg("config") = TrainConfig{},
      py::arg("spec") = LossSpec{});
}
