#include "diffpf/caseio.hpp"

#include <json.hpp>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <utility>

namespace diffpf {

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Case-text lexer
// ---------------------------------------------------------------------------

enum class Tok { Ident, Number, String, Punct, End };

struct Token {
  Tok kind = Tok::End;
  std::string text;
  double num = 0.0;
  int line = 1, col = 1;
  bool cont = false;  // a '...' continuation precedes this token
};

class Lexer {
 public:
  explicit Lexer(const std::string& s) : s_(s) {}

  Token next() {
    skip();
    Token t;
    t.line = line_;
    t.col = col_;
    t.cont = crossed_cont_;
    crossed_cont_ = false;
    if (i_ >= s_.size()) return t;
    const char c = s_[i_];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = i_;
      while (i_ < s_.size()) {
        const char d = s_[i_];
        if (std::isalnum(static_cast<unsigned char>(d)) || d == '_' || d == '.') {
          ++i_;
          ++col_;
        } else {
          break;
        }
      }
      t.kind = Tok::Ident;
      t.text = s_.substr(start, i_ - start);
      return t;
    }
    const bool signed_num = (c == '+' || c == '-') && i_ + 1 < s_.size() &&
                            (std::isdigit(static_cast<unsigned char>(s_[i_ + 1])) ||
                             s_[i_ + 1] == '.');
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' || signed_num) {
      const char* begin = s_.data() + i_;
      char* end = nullptr;
      const double v = std::strtod(begin, &end);
      if (end == begin)
        throw ParseError("SyntaxError", "malformed number", line_, col_);
      const auto len = static_cast<std::size_t>(end - begin);
      i_ += len;
      col_ += static_cast<int>(len);
      t.kind = Tok::Number;
      t.num = v;
      return t;
    }
    if (c == '\'') {
      ++i_;
      ++col_;
      const std::size_t start = i_;
      while (i_ < s_.size() && s_[i_] != '\'' && s_[i_] != '\n') {
        ++i_;
        ++col_;
      }
      if (i_ >= s_.size() || s_[i_] != '\'')
        throw ParseError("SyntaxError", "unterminated string", t.line, t.col);
      t.kind = Tok::String;
      t.text = s_.substr(start, i_ - start);
      ++i_;
      ++col_;
      return t;
    }
    if (c == '=' || c == '[' || c == ']' || c == ';' || c == ',') {
      ++i_;
      ++col_;
      t.kind = Tok::Punct;
      t.text = std::string(1, c);
      return t;
    }
    throw ParseError("SyntaxError", std::string("unexpected character '") + c + "'",
                     line_, col_);
  }

 private:
  void skip() {
    while (i_ < s_.size()) {
      const char c = s_[i_];
      if (c == '%') {
        while (i_ < s_.size() && s_[i_] != '\n') advance();
      } else if (c == '.' && i_ + 2 < s_.size() && s_[i_ + 1] == '.' && s_[i_ + 2] == '.') {
        crossed_cont_ = true;
        while (i_ < s_.size() && s_[i_] != '\n') advance();
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        advance();
      } else {
        break;
      }
    }
  }

  void advance() {
    if (s_[i_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++i_;
  }

  const std::string& s_;
  std::size_t i_ = 0;
  int line_ = 1, col_ = 1;
  bool crossed_cont_ = false;
};

// ---------------------------------------------------------------------------
// Statement parser: function header + mpc.<field> assignments
// ---------------------------------------------------------------------------

struct Cell {
  double val = 0.0;
  int line = 1, col = 1;
};

using CellMatrix = std::vector<std::vector<Cell>>;

struct Section {
  CellMatrix rows;
  int line = 1, col = 1;
  bool present = false;
};

struct RawCase {
  std::string name;
  double base_mva = 0.0;
  bool has_base = false;
  int base_line = 1, base_col = 1;
  Section bus, gen, branch;
  std::vector<std::string> warnings;
  int end_line = 1, end_col = 1;
};

class Parser {
 public:
  explicit Parser(const std::string& text) : lex_(text) { cur_ = lex_.next(); }

  RawCase run() {
    if (cur_.kind == Tok::Ident && cur_.text == "function") parse_function_header();
    while (cur_.kind != Tok::End) parse_statement();
    raw_.end_line = cur_.line;
    raw_.end_col = cur_.col;
    return std::move(raw_);
  }

 private:
  void bump() { cur_ = lex_.next(); }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("SyntaxError", msg, cur_.line, cur_.col);
  }

  void expect_punct(const std::string& p) {
    if (cur_.kind != Tok::Punct || cur_.text != p) fail("expected '" + p + "'");
    bump();
  }

  void parse_function_header() {
    bump();
    if (cur_.kind != Tok::Ident) fail("expected identifier after 'function'");
    bump();
    expect_punct("=");
    if (cur_.kind != Tok::Ident) fail("expected case name");
    raw_.name = cur_.text;
    bump();
  }

  void parse_statement() {
    if (cur_.kind == Tok::Ident && cur_.text == "return") {
      bump();
      if (cur_.kind == Tok::Punct && cur_.text == ";") bump();
      return;
    }
    if (cur_.kind != Tok::Ident || cur_.text.rfind("mpc.", 0) != 0)
      fail("expected an 'mpc.<field>' assignment");
    const std::string field = cur_.text.substr(4);
    const int fline = cur_.line, fcol = cur_.col;
    bump();
    expect_punct("=");

    if (field == "bus" || field == "gen" || field == "branch") {
      Section& sec = field == "bus" ? raw_.bus : field == "gen" ? raw_.gen : raw_.branch;
      if (cur_.kind != Tok::Punct || cur_.text != "[")
        fail("expected a matrix for mpc." + field);
      sec.line = fline;
      sec.col = fcol;
      sec.rows = parse_matrix();
      sec.present = true;
    } else if (field == "baseMVA") {
      if (cur_.kind != Tok::Number) fail("expected a number for mpc.baseMVA");
      raw_.base_mva = cur_.num;
      raw_.has_base = true;
      raw_.base_line = cur_.line;
      raw_.base_col = cur_.col;
      bump();
    } else if (field == "version") {
      skip_value();
    } else {
      raw_.warnings.push_back("ignored unknown field mpc." + field);
      skip_value();
    }
    if (cur_.kind == Tok::Punct && cur_.text == ";") bump();
  }

  CellMatrix parse_matrix() {
    expect_punct("[");
    CellMatrix rows;
    std::vector<Cell> row;
    int row_line = -1;
    auto flush = [&] {
      if (!row.empty()) {
        rows.push_back(std::move(row));
        row.clear();
      }
    };
    while (true) {
      if (cur_.kind == Tok::End) fail("unterminated matrix");
      if (cur_.kind == Tok::Punct) {
        if (cur_.text == "]") {
          flush();
          bump();
          break;
        }
        if (cur_.text == ";") {
          flush();
          bump();
          continue;
        }
        if (cur_.text == ",") {
          bump();
          continue;
        }
        fail("unexpected '" + cur_.text + "' in matrix");
      }
      if (cur_.kind != Tok::Number) fail("expected a number in matrix");
      if (!row.empty() && cur_.line != row_line && !cur_.cont) flush();
      row.push_back(Cell{cur_.num, cur_.line, cur_.col});
      row_line = cur_.line;
      bump();
    }
    for (const auto& r : rows)
      if (r.size() != rows.front().size())
        throw ParseError("SyntaxError", "matrix rows have differing lengths", r.front().line,
                         r.front().col);
    return rows;
  }

  // Value of an ignored assignment: a matrix, or a single scalar/string token.
  void skip_value() {
    if (cur_.kind == Tok::Punct && cur_.text == "[") {
      int depth = 0;
      do {
        if (cur_.kind == Tok::End) fail("unterminated matrix");
        if (cur_.kind == Tok::Punct && cur_.text == "[") ++depth;
        if (cur_.kind == Tok::Punct && cur_.text == "]") --depth;
        bump();
      } while (depth > 0);
      return;
    }
    if (cur_.kind == Tok::Number || cur_.kind == Tok::String || cur_.kind == Tok::Ident) {
      bump();
      return;
    }
    fail("expected a value");
  }

  Lexer lex_;
  Token cur_;
  RawCase raw_;
};

// ---------------------------------------------------------------------------
// Semantic pass: raw matrices -> validated grid model
// ---------------------------------------------------------------------------

long long int_cell(const Cell& c, const std::string& what) {
  const double r = std::round(c.val);
  if (!(std::abs(c.val - r) <= 1e-9) || std::abs(c.val) > 9e15)
    throw ParseError("BadValue", what + " must be an integer", c.line, c.col);
  return static_cast<long long>(r);
}

void require_cols(const Section& sec, std::size_t n, const std::string& name) {
  if (sec.rows.empty())
    throw ParseError("SyntaxError", "mpc." + name + " is empty", sec.line, sec.col);
  if (sec.rows.front().size() < n)
    throw ParseError("SyntaxError",
                     "mpc." + name + " needs at least " + std::to_string(n) + " columns",
                     sec.line, sec.col);
}

constexpr double kMinConductance = 1e-6;

ParsedCase analyze(RawCase raw) {
  if (!raw.has_base)
    throw ParseError("MissingSection", "mpc.baseMVA not found", raw.end_line, raw.end_col);
  if (!raw.bus.present)
    throw ParseError("MissingSection", "mpc.bus not found", raw.end_line, raw.end_col);
  if (!raw.gen.present)
    throw ParseError("MissingSection", "mpc.gen not found", raw.end_line, raw.end_col);
  if (!raw.branch.present)
    throw ParseError("MissingSection", "mpc.branch not found", raw.end_line, raw.end_col);
  if (!(raw.base_mva > 0.0))
    throw ParseError("BadValue", "baseMVA must be positive", raw.base_line, raw.base_col);
  require_cols(raw.bus, 9, "bus");
  require_cols(raw.gen, 8, "gen");
  require_cols(raw.branch, 11, "branch");
  const double base = raw.base_mva;

  const int nv = static_cast<int>(raw.bus.rows.size());
  std::map<long long, int> dense;
  std::vector<int> external_ids(static_cast<std::size_t>(nv));
  std::vector<int> bus_type(static_cast<std::size_t>(nv));
  Eigen::VectorXd pd(nv), qd(nv), shunt_g(nv), shunt_b(nv), vm(nv), va(nv);
  int slack_seen = 0;
  for (int i = 0; i < nv; ++i) {
    const auto& r = raw.bus.rows[static_cast<std::size_t>(i)];
    const long long id = int_cell(r[0], "bus id");
    if (!dense.emplace(id, i).second)
      throw ParseError("DuplicateBusId", "bus id " + std::to_string(id) + " repeats",
                       r[0].line, r[0].col);
    external_ids[static_cast<std::size_t>(i)] = static_cast<int>(id);
    const long long type = int_cell(r[1], "bus type");
    if (type < 1 || type > 3)
      throw ParseError("InvalidBusType",
                       "bus type " + std::to_string(type) + " unsupported (want 1, 2 or 3)",
                       r[1].line, r[1].col);
    if (type == 3 && ++slack_seen > 1)
      throw ParseError("MultipleSlackBuses", "second type-3 bus", r[1].line, r[1].col);
    bus_type[static_cast<std::size_t>(i)] = static_cast<int>(type);
    pd[i] = r[2].val / base;
    qd[i] = r[3].val / base;
    shunt_g[i] = r[4].val / base;
    shunt_b[i] = r[5].val / base;
    vm[i] = r[7].val;
    va[i] = r[8].val * (std::acos(-1.0) / 180.0);
  }
  if (slack_seen == 0)
    throw ParseError("NoSlackBus", "no type-3 bus", raw.bus.line, raw.bus.col);

  Eigen::VectorXd pg_sum = Eigen::VectorXd::Zero(nv);
  Eigen::VectorXd qg_sum = Eigen::VectorXd::Zero(nv);
  Eigen::VectorXd vg_first = Eigen::VectorXd::Zero(nv);
  std::vector<bool> has_gen(static_cast<std::size_t>(nv), false);
  for (const auto& r : raw.gen.rows) {
    const long long id = int_cell(r[0], "gen bus id");
    const auto it = dense.find(id);
    if (it == dense.end())
      throw ParseError("DanglingGenerator", "gen references unknown bus " + std::to_string(id),
                       r[0].line, r[0].col);
    const long long status = int_cell(r[7], "gen status");
    if (status != 0 && status != 1)
      throw ParseError("BadValue", "gen status must be 0 or 1", r[7].line, r[7].col);
    if (status == 0) continue;
    const int i = it->second;
    pg_sum[i] += r[1].val / base;
    qg_sum[i] += r[2].val / base;
    if (!has_gen[static_cast<std::size_t>(i)]) {
      if (!(r[5].val > 0.0))
        throw ParseError("BadValue", "gen voltage set-point must be positive", r[5].line,
                         r[5].col);
      vg_first[i] = r[5].val;
      has_gen[static_cast<std::size_t>(i)] = true;
    }
  }

  std::vector<BusKind> kinds(static_cast<std::size_t>(nv));
  for (int i = 0; i < nv; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    if (bus_type[iu] == 3) {
      kinds[iu] = BusKind::Slack;
    } else if (bus_type[iu] == 2) {
      if (has_gen[iu]) {
        kinds[iu] = BusKind::Generator;
      } else {
        kinds[iu] = BusKind::Load;
        raw.warnings.push_back("bus " + std::to_string(external_ids[iu]) +
                               " is type 2 with no in-service gen; treated as a load");
      }
    } else {
      kinds[iu] = BusKind::Load;
    }
  }

  std::vector<Line> lines;
  std::vector<double> line_g, line_b;
  int floored = 0, tapped = 0;
  long long first_floor_from = 0, first_floor_to = 0;
  for (const auto& r : raw.branch.rows) {
    const long long status = int_cell(r[10], "branch status");
    if (status != 0 && status != 1)
      throw ParseError("BadValue", "branch status must be 0 or 1", r[10].line, r[10].col);
    if (status == 0) continue;
    const long long fid = int_cell(r[0], "branch from-bus");
    const long long tid = int_cell(r[1], "branch to-bus");
    const auto fit = dense.find(fid);
    const auto tit = dense.find(tid);
    if (fit == dense.end() || tit == dense.end())
      throw ParseError("DanglingBranch",
                       "branch references unknown bus " +
                           std::to_string(fit == dense.end() ? fid : tid),
                       r[0].line, r[0].col);
    if (fit->second == tit->second)
      throw ParseError("SelfLoop", "branch connects bus " + std::to_string(fid) + " to itself",
                       r[0].line, r[0].col);
    const double rr = r[2].val, xx = r[3].val;
    if (rr < 0.0)
      throw ParseError("NonPositiveConductance", "branch resistance must be >= 0", r[2].line,
                       r[2].col);
    if (!(xx > 0.0))
      throw ParseError("NonNegativeSusceptance", "branch reactance must be > 0", r[3].line,
                       r[3].col);
    const double d = rr * rr + xx * xx;
    double g = rr / d;
    if (g < kMinConductance) {
      g = kMinConductance;
      if (floored++ == 0) {
        first_floor_from = fid;
        first_floor_to = tid;
      }
    }
    const double b = -xx / d;
    if (r.size() > 8 && r[8].val != 0.0 && r[8].val != 1.0) ++tapped;
    lines.push_back(Line{fit->second, tit->second});
    line_g.push_back(g);
    line_b.push_back(b);
    const double half_charge = r[4].val / 2.0;
    shunt_b[fit->second] += half_charge;
    shunt_b[tit->second] += half_charge;
  }
  if (floored > 0)
    raw.warnings.push_back("conductance floored to " + fmt17(kMinConductance) + " on " +
                           std::to_string(floored) + " zero-resistance branch(es), first " +
                           std::to_string(first_floor_from) + "-" +
                           std::to_string(first_floor_to));
  if (tapped > 0)
    raw.warnings.push_back(std::to_string(tapped) +
                           " branch tap/shift entries ignored (series-admittance line model)");

  // Connectivity check here, so the error carries a file position.
  {
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(nv));
    for (const auto& l : lines) {
      adj[static_cast<std::size_t>(l.from)].push_back(l.to);
      adj[static_cast<std::size_t>(l.to)].push_back(l.from);
    }
    std::vector<bool> seen(static_cast<std::size_t>(nv), false);
    std::vector<int> stack{0};
    seen[0] = true;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      for (const int j : adj[static_cast<std::size_t>(i)])
        if (!seen[static_cast<std::size_t>(j)]) {
          seen[static_cast<std::size_t>(j)] = true;
          stack.push_back(j);
        }
    }
    for (int i = 0; i < nv; ++i)
      if (!seen[static_cast<std::size_t>(i)])
        throw ParseError("Disconnected",
                         "bus " + std::to_string(external_ids[static_cast<std::size_t>(i)]) +
                             " unreachable over in-service branches",
                         raw.branch.line, raw.branch.col);
  }

  ParsedCase out;
  out.name = raw.name;
  try {
    out.topology = GridTopology(kinds, lines);
  } catch (const Error& e) {
    throw ParseError("SyntaxError", e.what(), raw.bus.line, raw.bus.col);
  }
  const GridTopology& topo = out.topology;

  const auto ne = static_cast<Eigen::Index>(lines.size());
  Eigen::VectorXd g(ne), b(ne);
  for (Eigen::Index k = 0; k < ne; ++k) {
    g[k] = line_g[static_cast<std::size_t>(k)];
    b[k] = line_b[static_cast<std::size_t>(k)];
  }
  auto logs = log_params_from_admittances(g, b);
  out.nominal.gamma = std::move(logs.first);
  out.nominal.beta = std::move(logs.second);
  out.nominal.shunt_g = shunt_g;
  out.nominal.shunt_b = shunt_b;

  const auto& gens = topo.generators();
  const auto& loads = topo.loads();
  const auto& ns = topo.non_slack();
  out.base.gen_v.resize(static_cast<Eigen::Index>(gens.size()));
  for (std::size_t r = 0; r < gens.size(); ++r)
    out.base.gen_v[static_cast<Eigen::Index>(r)] = vg_first[gens[r]];
  out.base.p.resize(static_cast<Eigen::Index>(ns.size()));
  for (std::size_t r = 0; r < ns.size(); ++r)
    out.base.p[static_cast<Eigen::Index>(r)] = pg_sum[ns[r]] - pd[ns[r]];
  out.base.load_q.resize(static_cast<Eigen::Index>(loads.size()));
  for (std::size_t r = 0; r < loads.size(); ++r)
    out.base.load_q[static_cast<Eigen::Index>(r)] = qg_sum[loads[r]] - qd[loads[r]];
  out.base.vm = vm;
  out.base.va = va;
  out.external_ids = std::move(external_ids);
  out.warnings = std::move(raw.warnings);
  return out;
}

// ---------------------------------------------------------------------------
// CSV helpers
// ---------------------------------------------------------------------------

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

double parse_double(const std::string& s, int line, int field) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw ParseError("SchemaMismatch", "malformed number '" + s + "'", line, field);
  return v;
}

long long parse_int(const std::string& s, int line, int field) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const long long v = std::strtoll(begin, &end, 10);
  if (end == begin || *end != '\0')
    throw ParseError("SchemaMismatch", "malformed integer '" + s + "'", line, field);
  return v;
}

std::string dataset_columns(int n_gen, int n_load, bool hidden) {
  std::ostringstream h;
  h << "id,split";
  auto block = [&](const char* stem, int n) {
    for (int i = 0; i < n; ++i) h << ',' << stem << '_' << i;
  };
  block("gen_v", n_gen);
  block("gen_theta", n_gen);
  block("gen_p", n_gen);
  block("gen_q", n_gen);
  block("load_p", n_load);
  block("load_q", n_load);
  if (hidden) {
    block("load_v", n_load);
    block("load_theta", n_load);
  }
  return h.str();
}

void require_len(const Eigen::VectorXd& v, int n, const std::string& what) {
  if (v.size() != n)
    throw Error("ShapeMismatch",
                what + " has " + std::to_string(v.size()) + " entries, expected " +
                    std::to_string(n));
}

}  // namespace

// ---------------------------------------------------------------------------

ParsedCase parse_case(const std::string& text) {
  Parser parser(text);
  return analyze(parser.run());
}

ParsedCase load_case(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IoError", "cannot open case file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_case(ss.str());
}

std::vector<int> DatasetFile::train_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].train) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> DatasetFile::valid_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (!samples[i].train) out.push_back(static_cast<int>(i));
  return out;
}

void write_dataset(const std::string& path, const DatasetFile& data) {
  for (const auto& s : data.samples) {
    require_len(s.gen_v, data.n_gen, "gen_v");
    require_len(s.gen_theta, data.n_gen, "gen_theta");
    require_len(s.gen_p, data.n_gen, "gen_p");
    require_len(s.gen_q, data.n_gen, "gen_q");
    require_len(s.load_p, data.n_load, "load_p");
    require_len(s.load_q, data.n_load, "load_q");
    if (s.has_hidden != data.hidden)
      throw Error("ShapeMismatch", "sample hidden block disagrees with header");
    if (data.hidden) {
      require_len(s.load_v, data.n_load, "load_v");
      require_len(s.load_theta, data.n_load, "load_theta");
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write " + path);
  nlohmann::json h;
  h["case"] = data.case_name;
  h["n_samples"] = data.samples.size();
  h["seed"] = data.seed;
  h["split_rule"] = data.split_rule;
  h["n_gen"] = data.n_gen;
  h["n_load"] = data.n_load;
  h["hidden"] = data.hidden;
  h["resampled"] = data.resampled;
  out << h.dump() << '\n';
  out << dataset_columns(data.n_gen, data.n_load, data.hidden) << '\n';
  auto put = [&](const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) out << ',' << fmt17(v[i]);
  };
  for (const auto& s : data.samples) {
    out << s.id << ',' << (s.train ? "train" : "valid");
    put(s.gen_v);
    put(s.gen_theta);
    put(s.gen_p);
    put(s.gen_q);
    put(s.load_p);
    put(s.load_q);
    if (data.hidden) {
      put(s.load_v);
      put(s.load_theta);
    }
    out << '\n';
  }
  if (!out) throw Error("IoError", "short write to " + path);
}

DatasetFile read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IoError", "cannot open dataset " + path);
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("SchemaMismatch", "missing JSON header line", 1, 1);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("SchemaMismatch", std::string("bad JSON header: ") + e.what(), 1, 1);
  }
  DatasetFile data;
  std::size_t n_samples = 0;
  try {
    data.case_name = h.at("case").get<std::string>();
    data.seed = h.at("seed").get<unsigned long long>();
    data.split_rule = h.at("split_rule").get<std::string>();
    data.n_gen = h.at("n_gen").get<int>();
    data.n_load = h.at("n_load").get<int>();
    data.hidden = h.value("hidden", false);
    data.resampled = h.value("resampled", 0);
    n_samples = h.at("n_samples").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("SchemaMismatch", std::string("incomplete header: ") + e.what(), 1, 1);
  }

  if (!std::getline(in, line))
    throw ParseError("SchemaMismatch", "missing column header line", 2, 1);
  if (line != dataset_columns(data.n_gen, data.n_load, data.hidden))
    throw ParseError("SchemaMismatch", "unexpected column header", 2, 1);

  const int expected =
      2 + 4 * data.n_gen + 2 * data.n_load + (data.hidden ? 2 * data.n_load : 0);
  int lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (static_cast<int>(f.size()) != expected)
      throw ParseError("ShapeMismatch",
                       "row has " + std::to_string(f.size()) + " fields, expected " +
                           std::to_string(expected),
                       lineno, 1);
    DatasetSample s;
    s.id = static_cast<int>(parse_int(f[0], lineno, 1));
    if (f[1] == "train") {
      s.train = true;
    } else if (f[1] == "valid") {
      s.train = false;
    } else {
      throw ParseError("SchemaMismatch", "split tag must be train or valid", lineno, 2);
    }
    int at = 2;
    auto take = [&](int n) {
      Eigen::VectorXd v(n);
      for (int i = 0; i < n; ++i, ++at) v[i] = parse_double(f[static_cast<std::size_t>(at)],
                                                            lineno, at + 1);
      return v;
    };
    s.gen_v = take(data.n_gen);
    s.gen_theta = take(data.n_gen);
    s.gen_p = take(data.n_gen);
    s.gen_q = take(data.n_gen);
    s.load_p = take(data.n_load);
    s.load_q = take(data.n_load);
    if (data.hidden) {
      s.load_v = take(data.n_load);
      s.load_theta = take(data.n_load);
      s.has_hidden = true;
    }
    data.samples.push_back(std::move(s));
  }
  if (data.samples.size() != n_samples)
    throw ParseError("SchemaMismatch",
                     "header promises " + std::to_string(n_samples) + " samples, file has " +
                         std::to_string(data.samples.size()),
                     lineno, 1);
  return data;
}

void check_dataset_shape(const DatasetFile& data, const GridTopology& topo) {
  if (data.n_gen != static_cast<int>(topo.generators().size()) ||
      data.n_load != static_cast<int>(topo.loads().size()))
    throw Error("ShapeMismatch",
                "dataset blocks (" + std::to_string(data.n_gen) + " gen, " +
                    std::to_string(data.n_load) + " load) do not match the case (" +
                    std::to_string(topo.generators().size()) + " gen, " +
                    std::to_string(topo.loads().size()) + " load)");
}

void write_params(const std::string& path, const AdmittanceParams& params,
                  const GridTopology& topo, const std::string& case_name) {
  if (params.gamma.size() != topo.n_lines() || params.beta.size() != topo.n_lines() ||
      params.shunt_g.size() != topo.n_buses() || params.shunt_b.size() != topo.n_buses())
    throw Error("ShapeMismatch", "parameter vectors do not match the topology");
  nlohmann::json j;
  j["case"] = case_name;
  auto lines = nlohmann::json::array();
  for (int k = 0; k < topo.n_lines(); ++k) {
    nlohmann::json l;
    l["from"] = topo.lines()[static_cast<std::size_t>(k)].from;
    l["to"] = topo.lines()[static_cast<std::size_t>(k)].to;
    l["gamma"] = params.gamma[k];
    l["beta"] = params.beta[k];
    lines.push_back(std::move(l));
  }
  j["lines"] = std::move(lines);
  j["shunt_g"] = std::vector<double>(params.shunt_g.data(),
                                     params.shunt_g.data() + params.shunt_g.size());
  j["shunt_b"] = std::vector<double>(params.shunt_b.data(),
                                     params.shunt_b.data() + params.shunt_b.size());
  j["trainable"] = {{"gamma", params.trainable.gamma},
                    {"beta", params.trainable.beta},
                    {"shunt_g", params.trainable.shunt_g},
                    {"shunt_b", params.trainable.shunt_b}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw Error("IoError", "short write to " + path);
}

AdmittanceParams read_params(const std::string& path, const GridTopology& topo) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IoError", "cannot open params " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("SchemaMismatch", std::string("bad params JSON: ") + e.what());
  }
  AdmittanceParams p;
  try {
    const auto& lines = j.at("lines");
    if (static_cast<int>(lines.size()) != topo.n_lines())
      throw Error("TopologyMismatch",
                  "params file has " + std::to_string(lines.size()) + " lines, case has " +
                      std::to_string(topo.n_lines()));
    p.gamma.resize(topo.n_lines());
    p.beta.resize(topo.n_lines());
    for (int k = 0; k < topo.n_lines(); ++k) {
      const auto& l = lines.at(static_cast<std::size_t>(k));
      const Line& want = topo.lines()[static_cast<std::size_t>(k)];
      if (l.at("from").get<int>() != want.from || l.at("to").get<int>() != want.to)
        throw Error("TopologyMismatch",
                    "line " + std::to_string(k) + " endpoints disagree with the case");
      p.gamma[k] = l.at("gamma").get<double>();
      p.beta[k] = l.at("beta").get<double>();
    }
    const auto sg = j.at("shunt_g").get<std::vector<double>>();
    const auto sb = j.at("shunt_b").get<std::vector<double>>();
    if (static_cast<int>(sg.size()) != topo.n_buses() ||
        static_cast<int>(sb.size()) != topo.n_buses())
      throw Error("TopologyMismatch", "shunt vectors do not match the bus count");
    p.shunt_g = Eigen::Map<const Eigen::VectorXd>(sg.data(),
                                                  static_cast<Eigen::Index>(sg.size()));
    p.shunt_b = Eigen::Map<const Eigen::VectorXd>(sb.data(),
                                                  static_cast<Eigen::Index>(sb.size()));
    if (j.contains("trainable")) {
      const auto& t = j.at("trainable");
      p.trainable.gamma = t.value("gamma", true);
      p.trainable.beta = t.value("beta", true);
      p.trainable.shunt_g = t.value("shunt_g", false);
      p.trainable.shunt_b = t.value("shunt_b", false);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("SchemaMismatch", std::string("incomplete params JSON: ") + e.what());
  }
  return p;
}

void append_metrics(const std::string& path, const MetricsRecord& record) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  const bool need_header = ec || size == 0;
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error("IoError", "cannot append to " + path);
  if (need_header) out << "epoch,loss,are,valid_err,elapsed_s\n";
  out << record.epoch << ',' << fmt17(record.loss) << ',';
  if (record.are) out << fmt17(*record.are);
  out << ',';
  if (record.valid_err) out << fmt17(*record.valid_err);
  out << ',';
  if (record.elapsed_s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", *record.elapsed_s);
    out << buf;
  }
  out << '\n';
  if (!out) throw Error("IoError", "short write to " + path);
}

std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IoError", "cannot open metrics " + path);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,loss,are,valid_err,elapsed_s")
    throw ParseError("SchemaMismatch", "unexpected metrics header", 1, 1);
  std::vector<MetricsRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 5)
      throw ParseError("SchemaMismatch", "metrics row needs 5 fields", lineno, 1);
    MetricsRecord r;
    r.epoch = parse_int(f[0], lineno, 1);
    r.loss = parse_double(f[1], lineno, 2);
    if (!f[2].empty()) r.are = parse_double(f[2], lineno, 3);
    if (!f[3].empty()) r.valid_err = parse_double(f[3], lineno, 4);
    if (!f[4].empty()) r.elapsed_s = parse_double(f[4], lineno, 5);
    out.push_back(r);
  }
  return out;
}

}  // namespace diffpf
