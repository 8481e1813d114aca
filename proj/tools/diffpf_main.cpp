#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "diffpf/datagen.hpp"
#include "diffpf/estimator.hpp"

namespace {

using nlohmann::json;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

diffpf::ParsedCase load_case_checked(const std::string& path) {
  diffpf::ParsedCase parsed = diffpf::load_case(path);
  for (const auto& w : parsed.warnings) std::cerr << "warning: " << w << "\n";
  return parsed;
}

void echo_config(const std::string& cmd, const json& cfg) {
  std::cerr << "config " << cmd << " " << cfg.dump() << "\n";
}

const char* kind_name(diffpf::BusKind k) {
  switch (k) {
    case diffpf::BusKind::Slack:
      return "slack";
    case diffpf::BusKind::Generator:
      return "generator";
    default:
      return "load";
  }
}

diffpf::LossSpec parse_loss_terms(const std::string& s) {
  diffpf::LossSpec spec;
  spec.theta_g = spec.q_g = spec.p_g = spec.v_g = false;
  std::size_t start = 0;
  bool any = false;
  while (start <= s.size()) {
    const std::size_t pos = s.find(',', start);
    const std::string term =
        s.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
    if (term == "theta") {
      spec.theta_g = true;
    } else if (term == "q") {
      spec.q_g = true;
    } else if (term == "p") {
      spec.p_g = true;
    } else if (term == "v") {
      spec.v_g = true;
    } else if (!term.empty()) {
      throw CLI::ValidationError("--loss", "unknown term '" + term +
                                               "' (want theta, q, p, v)");
    }
    any = any || !term.empty();
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  if (!any) throw CLI::ValidationError("--loss", "needs at least one term");
  return spec;
}

std::string loss_terms_string(const diffpf::LossSpec& spec) {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += ',';
    s += name;
  };
  add(spec.theta_g, "theta");
  add(spec.q_g, "q");
  add(spec.p_g, "p");
  add(spec.v_g, "v");
  return s;
}

diffpf::AdmittanceParams resolve_params_arg(const std::string& arg,
                                            const diffpf::ParsedCase& parsed) {
  if (arg == "case") return parsed.nominal;
  return diffpf::read_params(arg, parsed.topology);
}

diffpf::PfInputBatch base_input(const diffpf::ParsedCase& parsed) {
  diffpf::PfInputBatch in;
  in.gen_v = parsed.base.gen_v;
  in.p = parsed.base.p;
  in.load_q = parsed.base.load_q;
  return in;
}

void write_bus_table(const std::string& path, const diffpf::ParsedCase& parsed,
                     const diffpf::StateBatch& state, const diffpf::Injections& inj) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw diffpf::Error("IoError", "cannot write " + path);
  out << "id,kind,v,theta,p,q\n";
  const auto& topo = parsed.topology;
  for (int i = 0; i < topo.n_buses(); ++i) {
    out << parsed.external_ids[static_cast<std::size_t>(i)] << ','
        << kind_name(topo.kind(i)) << ',' << fmt17(state.v(i, 0)) << ','
        << fmt17(state.theta(i, 0)) << ',' << fmt17(inj.p(i, 0)) << ','
        << fmt17(inj.q(i, 0)) << '\n';
  }
  if (!out) throw diffpf::Error("IoError", "short write to " + path);
}

struct TrainArgs {
  std::string case_path, data_path;
  int nr_steps = 3;
  double lr = 1e-4;
  long long epochs = 80000;
  int batch = 8;
  unsigned long long seed = 0;
  std::string init = "perturb:0.2";
  std::string ref_params;
  std::string loss = "theta,q,p";
  long long eval_every = 1000;
  bool stop_on_are_rise = false;
  bool no_timing = false;
};

void add_train_flags(CLI::App* cmd, TrainArgs& a, bool with_steps) {
  cmd->add_option("--case", a.case_path, "case file (MATPOWER subset)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--data", a.data_path, "dataset file from `gen`")
      ->required()
      ->check(CLI::ExistingFile);
  if (with_steps)
    cmd->add_option("--nr-steps", a.nr_steps, "solver unroll depth n")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
  cmd->add_option("--lr", a.lr, "Adam learning rate")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--epochs", a.epochs, "training epochs")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--batch", a.batch, "mini-batch size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--seed", a.seed, "master seed for init and shuffling")
      ->capture_default_str();
  cmd->add_option("--init", a.init,
                  "initial parameters: perturb:SIGMA (log-space noise around the case "
                  "nominals) or file:PATH")
      ->capture_default_str();
  cmd->add_option("--ref-params", a.ref_params,
                  "reference parameters for the reconstruction-error column: a params "
                  "JSON path, or 'case' for the case nominals");
  cmd->add_option("--loss", a.loss, "loss terms, comma-separated subset of theta,q,p,v")
      ->capture_default_str();
  cmd->add_option("--eval-every", a.eval_every,
                  "validation cadence in epochs (0 disables)")
      ->capture_default_str();
  cmd->add_flag("--stop-on-are-rise", a.stop_on_are_rise,
                "halt when reconstruction error rises over a 1000-epoch window while "
                "the loss still falls (needs --ref-params)");
  cmd->add_flag("--no-timing", a.no_timing,
                "leave the elapsed_s metrics column empty so reruns are byte-identical");
}

json train_args_json(const TrainArgs& a) {
  json j;
  j["case"] = a.case_path;
  j["data"] = a.data_path;
  j["nr_steps"] = a.nr_steps;
  j["lr"] = a.lr;
  j["epochs"] = a.epochs;
  j["batch"] = a.batch;
  j["seed"] = a.seed;
  j["init"] = a.init;
  j["ref_params"] = a.ref_params.empty() ? "none" : a.ref_params;
  j["loss"] = a.loss;
  j["eval_every"] = a.eval_every;
  j["stop_on_are_rise"] = a.stop_on_are_rise;
  j["no_timing"] = a.no_timing;
  return j;
}

diffpf::AdmittanceParams resolve_init(const TrainArgs& a, const diffpf::ParsedCase& parsed) {
  if (a.init.rfind("perturb:", 0) == 0) {
    const std::string sig = a.init.substr(8);
    char* end = nullptr;
    const double sigma = std::strtod(sig.c_str(), &end);
    if (end == sig.c_str() || *end != '\0' || sigma < 0.0)
      throw CLI::ValidationError("--init", "perturb needs a nonnegative sigma");
    return diffpf::perturbed_init(parsed.nominal, sigma, a.seed);
  }
  if (a.init.rfind("file:", 0) == 0)
    return diffpf::read_params(a.init.substr(5), parsed.topology);
  throw CLI::ValidationError("--init", "want perturb:SIGMA or file:PATH");
}

diffpf::TrainResult train_once(const diffpf::ParsedCase& parsed,
                               const diffpf::DatasetFile& data,
                               const diffpf::AdmittanceParams& init,
                               const std::optional<diffpf::AdmittanceParams>& ref,
                               const diffpf::TrainConfig& cfg, const diffpf::LossSpec& spec,
                               const std::string& metrics_path, const std::string& label) {
  std::error_code ec;
  std::filesystem::remove(metrics_path, ec);
  const long long stride = cfg.eval_every > 0 ? cfg.eval_every : 1000;
  diffpf::EpochCallback on_epoch = [&](const diffpf::EpochInfo& info) {
    diffpf::append_metrics(metrics_path, info.record);
    if ((info.epoch + 1) % stride == 0 || info.epoch + 1 == cfg.epochs) {
      std::cerr << label << "epoch " << info.epoch << " loss " << info.record.loss;
      if (info.record.are) std::cerr << " are " << *info.record.are;
      if (info.record.valid_err) std::cerr << " valid_err " << *info.record.valid_err;
      std::cerr << "\n";
    }
  };
  return diffpf::train(parsed.topology, data, init, ref, cfg, spec, on_epoch);
}

int run_main(int argc, char** argv) {
  CLI::App app{
      "differentiable power-flow toolkit: fixed-depth Newton-Raphson solving, synthetic "
      "measurement generation, and gradient-based line-parameter recovery"};
  app.require_subcommand(1);
  app.footer("File formats (case text, dataset CSV, params JSON, metrics CSV) are "
             "documented in README.md.");

  // ---- pf ----
  auto* pf = app.add_subcommand("pf", "solve the base power flow of a case");
  struct {
    std::string case_path, out;
    int n = 0;
    double tol = 1e-10;
    int max_iter = 50;
  } pf_a;
  pf->add_option("--case", pf_a.case_path, "case file")->required()->check(CLI::ExistingFile);
  auto* pf_n = pf->add_option("--n", pf_a.n, "run exactly n Newton steps")
                   ->check(CLI::PositiveNumber);
  auto* pf_tol =
      pf->add_option("--tol", pf_a.tol, "iterate to this mismatch tolerance (default mode)")
          ->check(CLI::PositiveNumber);
  pf_n->excludes(pf_tol);
  pf_tol->excludes(pf_n);
  pf->add_option("--max-iter", pf_a.max_iter, "iteration cap for --tol mode")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  pf->add_option("--out", pf_a.out, "bus table CSV to write")->required();
  pf->callback([&] {
    json cfg{{"case", pf_a.case_path},
             {"mode", *pf_n ? "fixed" : "tol"},
             {"n", pf_a.n},
             {"tol", pf_a.tol},
             {"max_iter", pf_a.max_iter},
             {"out", pf_a.out}};
    echo_config("pf", cfg);
    const diffpf::ParsedCase parsed = load_case_checked(pf_a.case_path);
    const diffpf::IncidenceSet inc = diffpf::build_incidence(parsed.topology);
    const diffpf::PfInputBatch in = base_input(parsed);
    diffpf::PfOutputBatch out;
    if (*pf_n) {
      out = diffpf::nr_solve(parsed.topology, inc, parsed.nominal, in, pf_a.n);
    } else {
      const diffpf::ConvergeResult conv = diffpf::nr_converge(
          parsed.topology, inc, parsed.nominal, in, pf_a.tol, pf_a.max_iter);
      out = conv.out;
      std::cerr << "converged in " << conv.iterations(0) << " iterations\n";
    }
    const diffpf::Injections inj =
        diffpf::compute_injections(inc, parsed.nominal, out.state);
    const Eigen::MatrixXd mm = diffpf::mismatch(parsed.topology, inj, in);
    const double residual = mm.cwiseAbs().maxCoeff();
    std::cerr << "residual " << fmt17(residual) << "\n";
    write_bus_table(pf_a.out, parsed, out.state, inj);
    json summary{{"residual", residual}, {"out", pf_a.out}};
    std::cout << summary.dump() << "\n";
  });

  // ---- gen ----
  auto* gen = app.add_subcommand("gen", "sample scenarios and write a measurement dataset");
  struct {
    std::string case_path, out;
    diffpf::ScenarioConfig cfg;
    int split_k = 50;
  } gen_a;
  gen->add_option("--case", gen_a.case_path, "case file")->required()->check(CLI::ExistingFile);
  gen->add_option("--samples", gen_a.cfg.samples, "scenario count")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  gen->add_option("--seed", gen_a.cfg.seed, "master seed")->capture_default_str();
  gen->add_option("--spread", gen_a.cfg.load_spread,
                  "multiplicative half-width on load active power")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  gen->add_option("--q-spread", gen_a.cfg.q_spread,
                  "multiplicative half-width on load reactive power")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  gen->add_option("--vg-spread", gen_a.cfg.vg_spread,
                  "additive half-width on generator set-points, pu")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  gen->add_option("--split-k", gen_a.split_k, "send every k-th sample to the training split")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  gen->add_option("--tol", gen_a.cfg.tol, "convergence tolerance for the reference solves")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  gen->add_option("--max-iter", gen_a.cfg.max_iter, "iteration cap per solve")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  gen->add_option("--out", gen_a.out, "dataset file to write")->required();
  gen->callback([&] {
    json cfg{{"case", gen_a.case_path},   {"samples", gen_a.cfg.samples},
             {"seed", gen_a.cfg.seed},    {"spread", gen_a.cfg.load_spread},
             {"q_spread", gen_a.cfg.q_spread}, {"vg_spread", gen_a.cfg.vg_spread},
             {"split_k", gen_a.split_k},  {"tol", gen_a.cfg.tol},
             {"max_iter", gen_a.cfg.max_iter}, {"out", gen_a.out}};
    echo_config("gen", cfg);
    const diffpf::ParsedCase parsed = load_case_checked(gen_a.case_path);
    const diffpf::IncidenceSet inc = diffpf::build_incidence(parsed.topology);
    diffpf::DatasetFile data = diffpf::generate_dataset(
        parsed.topology, inc, parsed.nominal, parsed.base, gen_a.cfg, parsed.name);
    std::vector<std::string> warnings;
    diffpf::split_dataset(data, diffpf::SplitRule::every_kth(gen_a.split_k), &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    diffpf::write_dataset(gen_a.out, data);
    json summary{{"samples", data.samples.size()},
                 {"train", data.train_indices().size()},
                 {"valid", data.valid_indices().size()},
                 {"resampled", data.resampled},
                 {"out", gen_a.out}};
    std::cout << summary.dump() << "\n";
  });

  // ---- train ----
  auto* tr = app.add_subcommand("train", "recover line parameters from a dataset");
  TrainArgs tr_a;
  std::string tr_out_params, tr_out_metrics;
  add_train_flags(tr, tr_a, true);
  tr->add_option("--out-params", tr_out_params, "trained parameters JSON")->required();
  tr->add_option("--out-metrics", tr_out_metrics, "per-epoch metrics CSV")->required();
  tr->callback([&] {
    json cfg = train_args_json(tr_a);
    cfg["out_params"] = tr_out_params;
    cfg["out_metrics"] = tr_out_metrics;
    echo_config("train", cfg);
    const diffpf::ParsedCase parsed = load_case_checked(tr_a.case_path);
    const diffpf::DatasetFile data = diffpf::read_dataset(tr_a.data_path);
    diffpf::check_dataset_shape(data, parsed.topology);
    const diffpf::AdmittanceParams init = resolve_init(tr_a, parsed);
    std::optional<diffpf::AdmittanceParams> ref;
    if (!tr_a.ref_params.empty()) ref = resolve_params_arg(tr_a.ref_params, parsed);
    const diffpf::LossSpec spec = parse_loss_terms(tr_a.loss);
    diffpf::TrainConfig cfg2;
    cfg2.lr = tr_a.lr;
    cfg2.epochs = tr_a.epochs;
    cfg2.batch = tr_a.batch;
    cfg2.seed = tr_a.seed;
    cfg2.n_steps = tr_a.nr_steps;
    cfg2.eval_every = tr_a.eval_every;
    cfg2.record_timing = !tr_a.no_timing;
    cfg2.stop_on_are_rise = tr_a.stop_on_are_rise;
    const diffpf::TrainResult result =
        train_once(parsed, data, init, ref, cfg2, spec, tr_out_metrics, "");
    diffpf::write_params(tr_out_params, result.params, parsed.topology, parsed.name);
    const diffpf::MetricsRecord& last = result.history.back();
    json summary;
    summary["final_loss"] = last.loss;
    if (last.are) summary["final_are"] = *last.are;
    if (last.valid_err) summary["final_valid_err"] = *last.valid_err;
    summary["epochs_run"] = result.history.size();
    summary["stopped_early"] = result.stopped_early;
    summary["out_params"] = tr_out_params;
    summary["out_metrics"] = tr_out_metrics;
    std::cout << summary.dump() << "\n";
  });

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "score saved parameters against a dataset");
  struct {
    std::string case_path, data_path, params, ref_params, init_params, residuals;
    int nr_steps = 3;
    std::string loss = "theta,q,p";
  } ev_a;
  ev->add_option("--case", ev_a.case_path, "case file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_a.data_path, "dataset file")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--params", ev_a.params,
                 "parameters to score: a params JSON path, or 'case' for the nominals")
      ->required();
  ev->add_option("--nr-steps", ev_a.nr_steps, "solver unroll depth n")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  ev->add_option("--ref-params", ev_a.ref_params,
                 "reference parameters (path or 'case'); enables the error-norm outputs");
  ev->add_option("--init-params", ev_a.init_params,
                 "initial parameters (path or 'case'); normalizes the reconstruction error");
  ev->add_option("--loss", ev_a.loss, "loss terms, comma-separated subset of theta,q,p,v")
      ->capture_default_str();
  ev->add_option("--residuals", ev_a.residuals, "optional per-bus residual CSV to write");
  ev->callback([&] {
    json cfg{{"case", ev_a.case_path},
             {"data", ev_a.data_path},
             {"params", ev_a.params},
             {"nr_steps", ev_a.nr_steps},
             {"ref_params", ev_a.ref_params.empty() ? "none" : ev_a.ref_params},
             {"init_params", ev_a.init_params.empty() ? "none" : ev_a.init_params},
             {"loss", ev_a.loss},
             {"residuals", ev_a.residuals.empty() ? "none" : ev_a.residuals}};
    echo_config("eval", cfg);
    const diffpf::ParsedCase parsed = load_case_checked(ev_a.case_path);
    const diffpf::DatasetFile data = diffpf::read_dataset(ev_a.data_path);
    diffpf::check_dataset_shape(data, parsed.topology);
    const diffpf::AdmittanceParams params = resolve_params_arg(ev_a.params, parsed);
    const diffpf::IncidenceSet inc = diffpf::build_incidence(parsed.topology);
    const diffpf::LossSpec spec = parse_loss_terms(ev_a.loss);

    std::vector<int> loss_idx = data.train_indices();
    const char* loss_over = "train";
    if (loss_idx.empty()) {
      loss_idx = data.valid_indices();
      loss_over = "all";
    }
    std::vector<int> eval_idx = data.valid_indices();
    const char* eval_over = "valid";
    if (eval_idx.empty()) {
      eval_idx = data.train_indices();
      eval_over = "all";
    }
    json summary;
    summary["loss"] = diffpf::dataset_loss(parsed.topology, inc, params, data, loss_idx,
                                           ev_a.nr_steps, spec);
    summary["loss_over"] = loss_over;
    summary["valid_err"] = diffpf::validation_error(parsed.topology, inc, params, data,
                                                    eval_idx, ev_a.nr_steps);
    summary["valid_err_over"] = eval_over;
    if (!ev_a.ref_params.empty()) {
      const diffpf::AdmittanceParams ref = resolve_params_arg(ev_a.ref_params, parsed);
      const Eigen::MatrixXcd y = diffpf::admittance_matrix(parsed.topology, params);
      const Eigen::MatrixXcd y_ref = diffpf::admittance_matrix(parsed.topology, ref);
      summary["err_norm"] = (y - y_ref).norm();
      if (!ev_a.init_params.empty()) {
        const diffpf::AdmittanceParams init = resolve_params_arg(ev_a.init_params, parsed);
        summary["are"] = diffpf::reconstruction_error(parsed.topology, params, ref, init);
      }
    }

    if (!ev_a.residuals.empty()) {
      std::vector<int> all(data.samples.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
      const diffpf::PfInputBatch in =
          diffpf::inputs_from_samples(parsed.topology, data, all);
      const diffpf::PfOutputBatch out =
          diffpf::nr_solve(parsed.topology, inc, params, in, ev_a.nr_steps);
      const diffpf::Injections inj =
          diffpf::compute_injections(inc, params, out.state);
      const auto& topo = parsed.topology;
      std::ofstream rf(ev_a.residuals, std::ios::binary);
      if (!rf) throw diffpf::Error("IoError", "cannot write " + ev_a.residuals);
      rf << "id,kind,p_residual,q_residual\n";
      for (int i = 0; i < topo.n_buses(); ++i) {
        double dp = 0.0, dq = 0.0;
        for (Eigen::Index a = 0; a < in.p.cols(); ++a) {
          if (topo.kind(i) != diffpf::BusKind::Slack)
            dp = std::max(dp, std::abs(inj.p(i, a) - in.p(topo.non_slack_pos(i), a)));
          if (topo.kind(i) == diffpf::BusKind::Load)
            dq = std::max(dq, std::abs(inj.q(i, a) - in.load_q(topo.load_pos(i), a)));
          if (topo.kind(i) == diffpf::BusKind::Generator)
            dq = std::max(dq, std::abs(out.gen_q(topo.gen_pos(i), a) -
                                       data.samples[static_cast<std::size_t>(a)]
                                           .gen_q[topo.gen_pos(i)]));
        }
        rf << parsed.external_ids[static_cast<std::size_t>(i)] << ','
           << kind_name(topo.kind(i)) << ',' << fmt17(dp) << ',' << fmt17(dq) << '\n';
      }
    }
    std::cout << summary.dump() << "\n";
  });

  // ---- sweep ----
  auto* sw = app.add_subcommand("sweep",
                                "train at several unroll depths and tabulate the outcomes");
  TrainArgs sw_a;
  std::vector<int> sw_ns{1, 2, 3, 4, 6, 8};
  std::string sw_out;
  add_train_flags(sw, sw_a, false);
  sw->add_option("--n-list", sw_ns, "unroll depths to sweep")
      ->delimiter(',')
      ->capture_default_str();
  sw->add_option("--out", sw_out, "output directory")->required();
  sw->callback([&] {
    json cfg = train_args_json(sw_a);
    cfg.erase("nr_steps");
    cfg["n_list"] = sw_ns;
    cfg["out"] = sw_out;
    echo_config("sweep", cfg);
    for (const int n : sw_ns)
      if (n < 1) throw CLI::ValidationError("--n-list", "depths must be >= 1");
    const diffpf::ParsedCase parsed = load_case_checked(sw_a.case_path);
    const diffpf::DatasetFile data = diffpf::read_dataset(sw_a.data_path);
    diffpf::check_dataset_shape(data, parsed.topology);
    const diffpf::AdmittanceParams init = resolve_init(sw_a, parsed);
    std::optional<diffpf::AdmittanceParams> ref;
    if (!sw_a.ref_params.empty()) ref = resolve_params_arg(sw_a.ref_params, parsed);
    const diffpf::LossSpec spec = parse_loss_terms(sw_a.loss);
    std::filesystem::create_directories(sw_out);

    struct Row {
      int n;
      bool ok = false;
      double loss = 0.0;
      std::optional<double> valid_err, are;
      double seconds = 0.0;
      std::string error;
    };
    std::vector<Row> rows;
    double base_seconds = -1.0;
    for (const int n : sw_ns) {
      Row row;
      row.n = n;
      diffpf::TrainConfig cfg2;
      cfg2.lr = sw_a.lr;
      cfg2.epochs = sw_a.epochs;
      cfg2.batch = sw_a.batch;
      cfg2.seed = sw_a.seed;
      cfg2.n_steps = n;
      cfg2.eval_every = sw_a.eval_every;
      cfg2.record_timing = !sw_a.no_timing;
      cfg2.stop_on_are_rise = sw_a.stop_on_are_rise;
      const std::string metrics_path =
          sw_out + "/metrics_n" + std::to_string(n) + ".csv";
      const std::string label = "[n=" + std::to_string(n) + "] ";
      try {
        const auto t0 = std::chrono::steady_clock::now();
        const diffpf::TrainResult result =
            train_once(parsed, data, init, ref, cfg2, spec, metrics_path, label);
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                          .count();
        diffpf::write_params(sw_out + "/params_n" + std::to_string(n) + ".json",
                             result.params, parsed.topology, parsed.name);
        const diffpf::MetricsRecord& last = result.history.back();
        row.ok = true;
        row.loss = last.loss;
        row.valid_err = last.valid_err;
        row.are = last.are;
        if (base_seconds < 0.0) base_seconds = row.seconds;
      } catch (const diffpf::Error& e) {
        row.error = e.what();
        std::cerr << "[n=" << n << "] failed: " << e.what() << "\n";
      }
      rows.push_back(row);
    }

    const std::string summary_path = sw_out + "/summary.csv";
    std::ofstream sf(summary_path, std::ios::binary);
    if (!sf) throw diffpf::Error("IoError", "cannot write " + summary_path);
    sf << "n,loss,valid_err,are,duration_ratio,status\n";
    json jrows = json::array();
    for (const Row& row : rows) {
      json jr;
      jr["n"] = row.n;
      sf << row.n << ',';
      if (row.ok) {
        sf << fmt17(row.loss) << ',';
        jr["loss"] = row.loss;
        if (row.valid_err) {
          sf << fmt17(*row.valid_err);
          jr["valid_err"] = *row.valid_err;
        }
        sf << ',';
        if (row.are) {
          sf << fmt17(*row.are);
          jr["are"] = *row.are;
        }
        sf << ',';
        char buf[32];
        const double ratio = base_seconds > 0.0 ? row.seconds / base_seconds : 0.0;
        std::snprintf(buf, sizeof buf, "%.3f", ratio);
        sf << buf << ",ok\n";
        jr["duration_ratio"] = ratio;
        jr["status"] = "ok";
      } else {
        sf << ",,,,error\n";
        jr["status"] = "error";
        jr["error"] = row.error;
      }
      jrows.push_back(jr);
    }
    sf.close();
    std::cout << jrows.dump() << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_main(argc, argv);
  } catch (const diffpf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
