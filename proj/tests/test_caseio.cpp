#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "diffpf/caseio.hpp"
#include "helpers.hpp"

using namespace diffpf;
using testutil::thrown_code;

namespace {

const auto kTmp = testutil::temp_dir("diffpf_test_caseio");

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Minimal case text with replaceable sections. Column layout matches the
// short forms: bus has 9 columns, gen 8, branch 11.
std::string mk(const std::string& bus, const std::string& gen, const std::string& branch,
               const std::string& base = "100") {
  return "function mpc = t\n"
         "mpc.baseMVA = " + base + ";\n"
         "mpc.bus = [\n" + bus + "];\n"
         "mpc.gen = [\n" + gen + "];\n"
         "mpc.branch = [\n" + branch + "];\n";
}

const std::string kBus =
    "1 3 0 0 0 0 1 1 0;\n"
    "2 1 30 10 0 0 1 1 0;\n";
const std::string kGen = "1 0 0 100 -100 1 100 1;\n";
const std::string kBranch = "1 2 0.01 0.1 0 0 0 0 0 0 1;\n";

std::string code_of(const std::string& text, int* line = nullptr, int* col = nullptr) {
  try {
    parse_case(text);
  } catch (const ParseError& e) {
    if (line) *line = e.line();
    if (col) *col = e.col();
    return e.code();
  }
  return "";
}

DatasetFile tiny_dataset() {
  DatasetFile d;
  d.case_name = "t";
  d.seed = 12345;
  d.split_rule = "none";
  d.n_gen = 2;
  d.n_load = 1;
  d.hidden = true;
  d.resampled = 3;
  for (int i = 0; i < 3; ++i) {
    DatasetSample s;
    s.id = i;
    s.train = (i != 1);
    s.gen_v = Eigen::Vector2d(1.0 + 1e-17, -3.5e-120 * (i + 1));
    s.gen_theta = Eigen::Vector2d(M_PI * i, -0.1);
    s.gen_p = Eigen::Vector2d(0.3, 1.0 / 3.0);
    s.gen_q = Eigen::Vector2d(-0.7, 5e300);
    s.load_p = Eigen::VectorXd::Constant(1, -0.123456789012345678);
    s.load_q = Eigen::VectorXd::Constant(1, 1e-300);
    s.load_v = Eigen::VectorXd::Constant(1, 0.97 + i * 0.001);
    s.load_theta = Eigen::VectorXd::Constant(1, -0.25);
    s.has_hidden = true;
    d.samples.push_back(s);
  }
  return d;
}

bool same_vec(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) return false;
  for (int i = 0; i < a.size(); ++i)
    if (a(i) != b(i)) return false;
  return true;
}

}  // namespace

TEST_CASE("two-bus case parses into per-unit quantities") {
  ParsedCase pc = parse_case(mk(kBus, kGen, kBranch));
  CHECK(pc.name == "t");
  CHECK(pc.topology.n_buses() == 2);
  CHECK(pc.topology.n_lines() == 1);
  CHECK(pc.topology.kind(0) == BusKind::Slack);
  CHECK(pc.topology.kind(1) == BusKind::Load);
  CHECK(pc.external_ids == std::vector<int>{1, 2});

  // r=0.01, x=0.1 -> y = (0.01 - 0.1i)/0.0101
  LineAdmittances y = line_admittances(pc.nominal);
  CHECK(y.g(0) == doctest::Approx(0.9900990099009901).epsilon(1e-14));
  CHECK(y.b(0) == doctest::Approx(-9.900990099009901).epsilon(1e-14));
  CHECK(pc.nominal.shunt_g.norm() == 0.0);
  CHECK(pc.nominal.shunt_b.norm() == 0.0);
  CHECK(pc.nominal.trainable.gamma);
  CHECK(pc.nominal.trainable.beta);
  CHECK_FALSE(pc.nominal.trainable.shunt_g);

  // Pd=30, Qd=10 MVA on a 100 MVA base, consumption is negative injection
  CHECK(pc.base.p.size() == 1);
  CHECK(pc.base.p(0) == doctest::Approx(-0.30).epsilon(1e-15));
  CHECK(pc.base.load_q(0) == doctest::Approx(-0.10).epsilon(1e-15));
  CHECK(pc.base.gen_v.size() == 0);
  CHECK(pc.warnings.empty());
}

TEST_CASE("lexer accepts comments, commas, continuations, and packed rows") {
  std::string text =
      "function mpc = weird % trailing comment\n"
      "mpc.version = '2';\n"
      "% full comment line\n"
      "mpc.baseMVA = 100;\n"
      "mpc.bus = [1,3,0,0,0,0,1,1,0; 2 1 ...\n"
      "  30 10 0 0 1 1 0];\n"
      "mpc.gen = [1 0 0 100 -100 1 100 1];\n"
      "mpc.branch = [1 2 0.01 0.1 0 0 0 0 0 0 1];\n";
  ParsedCase pc = parse_case(text);
  CHECK(pc.name == "weird");
  CHECK(pc.topology.n_buses() == 2);
  CHECK(pc.base.p(0) == doctest::Approx(-0.30));
}

TEST_CASE("unknown mpc fields are skipped with a warning") {
  std::string text = mk(kBus, kGen, kBranch) +
                     "mpc.gencost = [2 0 0 3 0.01 40 0; 2 0 0 3 0.01 40 0];\n";
  ParsedCase pc = parse_case(text);
  bool warned = false;
  for (const auto& w : pc.warnings) warned = warned || w.find("gencost") != std::string::npos;
  CHECK(warned);
}

TEST_CASE("out-of-service rows are dropped") {
  // second branch disabled, second gen disabled
  std::string bus =
      "1 3 0 0 0 0 1 1 0;\n"
      "2 1 30 10 0 0 1 1 0;\n"
      "3 1 5 1 0 0 1 1 0;\n";
  std::string gen =
      "1 0 0 100 -100 1 100 1;\n"
      "2 99 0 100 -100 1.05 100 0;\n";
  std::string branch =
      "1 2 0.01 0.1 0 0 0 0 0 0 1;\n"
      "1 2 0.01 0.1 0 0 0 0 0 0 0;\n"
      "2 3 0.02 0.2 0 0 0 0 0 0 1;\n";
  ParsedCase pc = parse_case(mk(bus, gen, branch));
  CHECK(pc.topology.n_lines() == 2);
  // the disabled gen contributes nothing, bus 2 stays a load
  CHECK(pc.topology.kind(1) == BusKind::Load);
  CHECK(pc.base.p(0) == doctest::Approx(-0.30));
}

TEST_CASE("generators at one bus aggregate") {
  std::string bus =
      "1 3 0 0 0 0 1 1 0;\n"
      "2 2 10 5 0 0 1 1.04 0;\n";
  std::string gen =
      "1 0 0 100 -100 1 100 1;\n"
      "2 25 3 100 -100 1.04 100 1;\n"
      "2 15 2 100 -100 1.03 100 1;\n";
  ParsedCase pc = parse_case(mk(bus, gen, kBranch));
  CHECK(pc.topology.kind(1) == BusKind::Generator);
  // net p = (25 + 15 - 10)/100, first in-service set-point wins
  CHECK(pc.base.p(0) == doctest::Approx(0.30).epsilon(1e-15));
  CHECK(pc.base.gen_v(0) == doctest::Approx(1.04).epsilon(1e-15));
}

TEST_CASE("pv bus without an in-service generator demotes to load") {
  std::string bus =
      "1 3 0 0 0 0 1 1 0;\n"
      "2 2 30 10 0 0 1 1 0;\n";
  ParsedCase pc = parse_case(mk(bus, kGen, kBranch));
  CHECK(pc.topology.kind(1) == BusKind::Load);
  bool warned = false;
  for (const auto& w : pc.warnings)
    warned = warned || w.find("treated as a load") != std::string::npos;
  CHECK(warned);
}

TEST_CASE("bus shunts, line charging, and angles convert units") {
  std::string bus =
      "1 3 0 0 0 0 1 1 0;\n"
      "2 1 30 10 2 -19 1 0.98 -12;\n";
  std::string branch = "1 2 0.01 0.1 0.22 0 0 0 0 0 1;\n";
  ParsedCase pc = parse_case(mk(bus, kGen, branch));
  // Gs/Bs are MW/MVAr at 1 pu: divide by baseMVA; charging adds b/2 per end
  CHECK(pc.nominal.shunt_g(1) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(pc.nominal.shunt_b(0) == doctest::Approx(0.11).epsilon(1e-15));
  CHECK(pc.nominal.shunt_b(1) == doctest::Approx(-0.19 + 0.11).epsilon(1e-12));
  CHECK(pc.base.vm(1) == doctest::Approx(0.98));
  CHECK(pc.base.va(1) == doctest::Approx(-12.0 * M_PI / 180.0).epsilon(1e-15));
}

TEST_CASE("zero-resistance branches get the conductance floor") {
  std::string branch = "1 2 0 0.1 0 0 0 0 0 0 1;\n";
  ParsedCase pc = parse_case(mk(kBus, kGen, branch));
  LineAdmittances y = line_admittances(pc.nominal);
  CHECK(y.g(0) == doctest::Approx(1e-6).epsilon(1e-9));
  CHECK_FALSE(pc.warnings.empty());
}

TEST_CASE("off-nominal taps and shifts are ignored with a warning") {
  std::string branch = "1 2 0.01 0.1 0 0 0 0 0.98 3 1;\n";
  ParsedCase pc = parse_case(mk(kBus, kGen, branch));
  bool warned = false;
  for (const auto& w : pc.warnings) warned = warned || w.find("tap") != std::string::npos ||
                                             w.find("shift") != std::string::npos;
  CHECK(warned);
}

TEST_CASE("parse failures report stable codes and positions") {
  int line = 0, col = 0;

  CHECK(code_of("function mpc = t\nmpc.bus = [" + kBus + "];\nmpc.gen = [" + kGen +
                "];\nmpc.branch = [" + kBranch + "];\n") == "MissingSection");
  CHECK(code_of("function mpc = t\nmpc.baseMVA = 100;\n") == "MissingSection");
  CHECK(code_of(mk(kBus, kGen, kBranch, "0")) == "BadValue");
  CHECK(code_of(mk(kBus, kGen, kBranch, "-10")) == "BadValue");

  CHECK(code_of(mk("1 3 0 0 0 0 1 1 0;\n1 1 30 10 0 0 1 1 0;\n", kGen, kBranch), &line,
                &col) == "DuplicateBusId");
  CHECK(line >= 1);
  CHECK(col >= 1);

  CHECK(code_of(mk("1 4 0 0 0 0 1 1 0;\n2 1 30 10 0 0 1 1 0;\n", kGen, kBranch)) ==
        "InvalidBusType");
  CHECK(code_of(mk("1 3 0 0 0 0 1 1 0;\n2 3 30 10 0 0 1 1 0;\n", kGen, kBranch)) ==
        "MultipleSlackBuses");
  CHECK(code_of(mk("1 1 0 0 0 0 1 1 0;\n2 1 30 10 0 0 1 1 0;\n", kGen, kBranch)) ==
        "NoSlackBus");
  CHECK(code_of(mk("1.5 3 0 0 0 0 1 1 0;\n2 1 30 10 0 0 1 1 0;\n", kGen, kBranch)) ==
        "BadValue");

  CHECK(code_of(mk(kBus, "7 0 0 100 -100 1 100 1;\n", kBranch)) == "DanglingGenerator");
  CHECK(code_of(mk(kBus, "1 0 0 100 -100 1 100 2;\n", kBranch)) == "BadValue");
  CHECK(code_of(mk(kBus, "1 0 0 100 -100 -1 100 1;\n", kBranch)) == "BadValue");

  CHECK(code_of(mk(kBus, kGen, "1 9 0.01 0.1 0 0 0 0 0 0 1;\n"), &line, &col) ==
        "DanglingBranch");
  CHECK(code_of(mk(kBus, kGen, "1 1 0.01 0.1 0 0 0 0 0 0 1;\n")) == "SelfLoop");
  CHECK(code_of(mk(kBus, kGen, "1 2 -0.01 0.1 0 0 0 0 0 0 1;\n")) ==
        "NonPositiveConductance");
  CHECK(code_of(mk(kBus, kGen, "1 2 0.01 0 0 0 0 0 0 0 1;\n")) == "NonNegativeSusceptance");
  CHECK(code_of(mk(kBus, kGen, "1 2 0.01 -0.1 0 0 0 0 0 0 1;\n")) ==
        "NonNegativeSusceptance");
  CHECK(code_of(mk(kBus, kGen, "1 2 0.01 0.1 0 0 0 0 0 0 3;\n")) == "BadValue");

  // all branches out of service leaves bus 2 unreachable
  CHECK(code_of(mk(kBus, kGen, "1 2 0.01 0.1 0 0 0 0 0 0 0;\n")) == "Disconnected");

  // syntax-level failures
  CHECK(code_of(mk("1 3 0 0 0 0 1 1 0;\n2 1 30 10 0 0 1 1;\n", kGen, kBranch), &line,
                &col) == "SyntaxError");  // ragged matrix
  CHECK(line >= 1);
  CHECK(code_of("function mpc = t\nmpc.baseMVA = 100;\nmpc.name = 'oops\n") == "SyntaxError");
  CHECK(code_of(mk(kBus, kGen, kBranch) + "mpc.extra = @invalid;\n") == "SyntaxError");
  CHECK(code_of("") == "MissingSection");
  CHECK(code_of("% nothing but a comment\n") == "MissingSection");
  CHECK(code_of("function mpc = t\nmpc.baseMVA = 100;\nmpc.bus = [1 3 0 0 0 0 1 1 0\n") ==
        "SyntaxError");  // unterminated matrix
}

TEST_CASE("bundled ieee cases load") {
  ParsedCase c14 = load_case(testutil::data_path("case14.m"));
  CHECK(c14.topology.n_buses() == 14);
  CHECK(c14.topology.n_lines() == 20);
  CHECK(static_cast<int>(c14.topology.generators().size()) == 4);

  ParsedCase c118 = load_case(testutil::data_path("case118.m"));
  CHECK(c118.topology.n_buses() == 118);
  CHECK(c118.topology.n_lines() == 186);
  CHECK(static_cast<int>(c118.topology.generators().size()) == 53);

  CHECK(thrown_code([] { load_case(testutil::data_path("nope.m")); }) == "IoError");
}

TEST_CASE("dataset files round-trip bitwise") {
  DatasetFile d = tiny_dataset();
  auto path = (kTmp / "roundtrip.csv").string();
  write_dataset(path, d);

  std::string first = slurp(path);
  CHECK(first.substr(0, 9) == "{\"case\":\"");
  CHECK(first.find("\r") == std::string::npos);

  DatasetFile back = read_dataset(path);
  CHECK(back.case_name == d.case_name);
  CHECK(back.seed == d.seed);
  CHECK(back.split_rule == d.split_rule);
  CHECK(back.n_gen == 2);
  CHECK(back.n_load == 1);
  CHECK(back.hidden);
  CHECK(back.resampled == 3);
  REQUIRE(back.samples.size() == 3);
  for (int i = 0; i < 3; ++i) {
    const auto& a = d.samples[i];
    const auto& b = back.samples[i];
    CHECK(b.id == a.id);
    CHECK(b.train == a.train);
    CHECK(same_vec(b.gen_v, a.gen_v));
    CHECK(same_vec(b.gen_theta, a.gen_theta));
    CHECK(same_vec(b.gen_p, a.gen_p));
    CHECK(same_vec(b.gen_q, a.gen_q));
    CHECK(same_vec(b.load_p, a.load_p));
    CHECK(same_vec(b.load_q, a.load_q));
    CHECK(b.has_hidden);
    CHECK(same_vec(b.load_v, a.load_v));
    CHECK(same_vec(b.load_theta, a.load_theta));
  }

  auto again = (kTmp / "roundtrip2.csv").string();
  write_dataset(again, back);
  CHECK(slurp(again) == first);
}

TEST_CASE("dataset without hidden columns and with zero samples") {
  DatasetFile d = tiny_dataset();
  d.hidden = false;
  for (auto& s : d.samples) {
    s.has_hidden = false;
    s.load_v.resize(0);
    s.load_theta.resize(0);
  }
  auto path = (kTmp / "field.csv").string();
  write_dataset(path, d);
  DatasetFile back = read_dataset(path);
  CHECK_FALSE(back.hidden);
  CHECK_FALSE(back.samples[0].has_hidden);
  CHECK(slurp(path).find("load_v") == std::string::npos);

  DatasetFile empty = tiny_dataset();
  empty.samples.clear();
  auto epath = (kTmp / "empty.csv").string();
  write_dataset(epath, empty);
  CHECK(read_dataset(epath).samples.empty());
}

TEST_CASE("dataset reader rejects malformed files with positions") {
  DatasetFile d = tiny_dataset();
  auto path = (kTmp / "ok.csv").string();
  write_dataset(path, d);
  std::string text = slurp(path);

  auto write_text = [&](const std::string& t) {
    auto p = (kTmp / "bad.csv").string();
    std::ofstream out(p, std::ios::binary);
    out << t;
    out.close();
    return p;
  };

  // drop the last field of the first data row
  std::size_t hdr_end = text.find('\n', text.find('\n') + 1);
  std::size_t row_end = text.find('\n', hdr_end + 1);
  std::size_t last_comma = text.rfind(',', row_end);
  {
    std::string t = text.substr(0, last_comma) + text.substr(row_end);
    try {
      read_dataset(write_text(t));
      CHECK(false);
    } catch (const ParseError& e) {
      CHECK(e.code() == "ShapeMismatch");
      CHECK(e.line() == 3);
    }
  }

  CHECK(thrown_code([&] { read_dataset(write_text("not json\nrest\n")); }) ==
        "SchemaMismatch");
  {
    // corrupt the split tag of the first row
    std::string t = text;
    std::size_t pos = t.find(",train,", hdr_end);
    t.replace(pos, 7, ",weird,");
    CHECK(thrown_code([&] { read_dataset(write_text(t)); }) == "SchemaMismatch");
  }
  {
    // header promises one more sample than the body carries
    std::string t = text;
    std::size_t pos = t.find("\"n_samples\":3");
    t.replace(pos, 13, "\"n_samples\":4");
    CHECK(thrown_code([&] { read_dataset(write_text(t)); }) == "SchemaMismatch");
  }
  CHECK(thrown_code([&] { read_dataset((kTmp / "missing.csv").string()); }) == "IoError");
}

TEST_CASE("dataset shape check is topology aware") {
  ParsedCase pc = parse_case(mk(kBus, kGen, kBranch));
  DatasetFile d = tiny_dataset();  // 2 gens, but the case has none
  CHECK(thrown_code([&] { check_dataset_shape(d, pc.topology); }) == "ShapeMismatch");
}

TEST_CASE("split index helpers partition samples") {
  DatasetFile d = tiny_dataset();
  CHECK(d.train_indices() == std::vector<int>{0, 2});
  CHECK(d.valid_indices() == std::vector<int>{1});
}

TEST_CASE("params files round-trip and check alignment") {
  ParsedCase pc = load_case(testutil::data_path("case5.m"));
  AdmittanceParams params = pc.nominal;
  params.gamma(2) = -1.25;
  params.trainable.shunt_b = true;

  auto path = (kTmp / "params.json").string();
  write_params(path, params, pc.topology, "case5");
  AdmittanceParams back = read_params(path, pc.topology);
  CHECK(same_vec(back.gamma, params.gamma));
  CHECK(same_vec(back.beta, params.beta));
  CHECK(same_vec(back.shunt_g, params.shunt_g));
  CHECK(same_vec(back.shunt_b, params.shunt_b));
  CHECK(back.trainable.gamma == params.trainable.gamma);
  CHECK(back.trainable.shunt_b == params.trainable.shunt_b);

  auto path2 = (kTmp / "params2.json").string();
  write_params(path2, back, pc.topology, "case5");
  CHECK(slurp(path2) == slurp(path));

  // a different topology must be rejected
  ParsedCase other = parse_case(mk(kBus, kGen, kBranch));
  CHECK(thrown_code([&] { read_params(path, other.topology); }) == "TopologyMismatch");
}

TEST_CASE("metrics files append rows with optional fields") {
  auto path = (kTmp / "metrics.csv").string();

  MetricsRecord r0;
  r0.epoch = 0;
  r0.loss = 0.5;
  append_metrics(path, r0);

  MetricsRecord r1;
  r1.epoch = 1;
  r1.loss = 0.25;
  r1.are = 0.75;
  r1.valid_err = 0.125;
  r1.elapsed_s = 0.0034;
  append_metrics(path, r1);

  CHECK(slurp(path) ==
        "epoch,loss,are,valid_err,elapsed_s\n"
        "0,0.5,,,\n"
        "1,0.25,0.75,0.125,0.003\n");

  auto back = read_metrics(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].epoch == 0);
  CHECK(back[0].loss == 0.5);
  CHECK_FALSE(back[0].are.has_value());
  CHECK_FALSE(back[0].elapsed_s.has_value());
  CHECK(back[1].are.value() == 0.75);
  CHECK(back[1].valid_err.value() == 0.125);
  CHECK(back[1].elapsed_s.value() == doctest::Approx(0.003));
}
