#include "chartmix/evalkit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <variant>

#include <json.hpp>

#include "chartmix/errors.hpp"

namespace chartmix::eval {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Number extraction
// ---------------------------------------------------------------------------

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Scans one number starting at i (which must point at a digit, or at a sign /
// dot directly leading into digits). Returns the value and advances `end`.
std::optional<double> scan_number(std::string_view s, std::size_t i,
                                  std::size_t& end) {
  std::string digits;
  std::size_t j = i;
  if (j < s.size() && (s[j] == '-' || s[j] == '+')) {
    if (s[j] == '-') digits.push_back('-');
    ++j;
  }
  std::size_t int_digits = 0;
  while (j < s.size()) {
    if (is_digit(s[j])) {
      digits.push_back(s[j]);
      ++int_digits;
      ++j;
    } else if (s[j] == ',' && int_digits > 0 && j + 3 < s.size() &&
               is_digit(s[j + 1]) && is_digit(s[j + 2]) && is_digit(s[j + 3]) &&
               (j + 4 >= s.size() || !is_digit(s[j + 4]))) {
      // thousands separator: exactly three digits follow
      digits.append(s.substr(j + 1, 3));
      int_digits += 3;
      j += 4;
    } else {
      break;
    }
  }
  std::size_t frac_digits = 0;
  if (j < s.size() && s[j] == '.' && j + 1 < s.size() && is_digit(s[j + 1])) {
    digits.push_back('.');
    ++j;
    while (j < s.size() && is_digit(s[j])) {
      digits.push_back(s[j]);
      ++frac_digits;
      ++j;
    }
  }
  if (int_digits == 0 && frac_digits == 0) return std::nullopt;
  if (j < s.size() && s[j] == '%') ++j;  // stripped, not rescaled
  end = j;
  return std::strtod(digits.c_str(), nullptr);
}

}  // namespace

std::optional<double> extract_number(std::string_view text) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const bool sign_lead =
        (c == '-' || c == '+') && i + 1 < text.size() &&
        (is_digit(text[i + 1]) ||
         (text[i + 1] == '.' && i + 2 < text.size() && is_digit(text[i + 2])));
    const bool dot_lead = c == '.' && i + 1 < text.size() && is_digit(text[i + 1]);
    if (is_digit(c) || sign_lead || dot_lead) {
      std::size_t end = i;
      auto v = scan_number(text, i, end);
      if (v) return v;
    }
  }
  return std::nullopt;
}

bool is_numeric_answer(std::string_view text) {
  std::size_t b = 0, e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  if (b == e) return false;
  std::string_view core = text.substr(b, e - b);
  std::size_t end = 0;
  auto v = scan_number(core, 0, end);
  return v.has_value() && end == core.size();
}

std::string normalize_answer(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char ch : text) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!out.empty()) pending_space = true;
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  while (!out.empty()) {
    const char last = out.back();
    if (last == '.' || last == ',' || last == '!' || last == '?' || last == ';' ||
        last == ':')
      out.pop_back();
    else
      break;
  }
  return out;
}

bool relaxed_match(const std::string& pred, const std::string& gt, double margin) {
  if (is_numeric_answer(gt)) {
    const auto g = extract_number(gt);
    const auto p = extract_number(pred);
    if (!g || !p) return false;
    if (*g == 0.0) return std::abs(*p) <= margin;
    return std::abs(*p - *g) <= margin * std::abs(*g);
  }
  return normalize_answer(pred) == normalize_answer(gt);
}

// ---------------------------------------------------------------------------
// PoT interpreter
// ---------------------------------------------------------------------------

namespace {

struct PotValue {
  std::variant<double, std::vector<double>> v;
  bool is_number() const { return std::holds_alternative<double>(v); }
  double number() const { return std::get<double>(v); }
  const std::vector<double>& list() const { return std::get<std::vector<double>>(v); }
};

enum class PExprKind { number, variable, list, unary_minus, binary, call };

struct PExpr {
  PExprKind kind;
  double number = 0.0;
  std::string name;  // variable or function name
  char op = 0;
  std::vector<std::unique_ptr<PExpr>> args;
};

struct PotLexer {
  explicit PotLexer(std::string_view s) : s_(s) {}

  void skip_ws() {
    while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t')) ++i_;
  }
  bool done() {
    skip_ws();
    return i_ >= s_.size();
  }
  char peek() {
    skip_ws();
    return i_ < s_.size() ? s_[i_] : '\0';
  }
  char take() {
    skip_ws();
    return s_[i_++];
  }
  bool try_take(char c) {
    skip_ws();
    if (i_ < s_.size() && s_[i_] == c) {
      ++i_;
      return true;
    }
    return false;
  }
  std::string take_ident() {
    skip_ws();
    std::string out;
    while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) ||
                              s_[i_] == '_'))
      out.push_back(s_[i_++]);
    return out;
  }
  double take_number() {
    skip_ws();
    std::size_t j = i_;
    if (j < s_.size() && (s_[j] == '-' || s_[j] == '+')) ++j;
    std::size_t digits = 0;
    while (j < s_.size() && is_digit(s_[j])) ++j, ++digits;
    if (j < s_.size() && s_[j] == '.') {
      ++j;
      while (j < s_.size() && is_digit(s_[j])) ++j, ++digits;
    }
    if (digits == 0) throw PotError("malformed number");
    if (j < s_.size() && (s_[j] == 'e' || s_[j] == 'E')) {
      ++j;
      if (j < s_.size() && (s_[j] == '-' || s_[j] == '+')) ++j;
      std::size_t ed = 0;
      while (j < s_.size() && is_digit(s_[j])) ++j, ++ed;
      if (ed == 0) throw PotError("malformed exponent");
    }
    const std::string text(s_.substr(i_, j - i_));
    i_ = j;
    return std::strtod(text.c_str(), nullptr);
  }

  std::string_view s_;
  std::size_t i_ = 0;
};

const std::vector<std::string> kPotFunctions = {"sum", "mean", "max", "min",
                                                "len", "abs", "round"};

std::unique_ptr<PExpr> parse_expr(PotLexer& lex);

std::unique_ptr<PExpr> parse_factor(PotLexer& lex) {
  const char c = lex.peek();
  if (c == '(') {
    lex.take();
    auto e = parse_expr(lex);
    if (!lex.try_take(')')) throw PotError("expected ')'");
    return e;
  }
  if (c == '-') {
    lex.take();
    auto e = std::make_unique<PExpr>();
    e->kind = PExprKind::unary_minus;
    e->args.push_back(parse_factor(lex));
    return e;
  }
  if (c == '[') {
    lex.take();
    auto e = std::make_unique<PExpr>();
    e->kind = PExprKind::list;
    if (!lex.try_take(']')) {
      while (true) {
        e->args.push_back(parse_expr(lex));
        if (lex.try_take(',')) continue;
        if (lex.try_take(']')) break;
        throw PotError("expected ',' or ']'");
      }
    }
    return e;
  }
  if (is_digit(c) || c == '.') {
    auto e = std::make_unique<PExpr>();
    e->kind = PExprKind::number;
    e->number = lex.take_number();
    return e;
  }
  if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
    const std::string name = lex.take_ident();
    if (name.empty()) throw PotError("expected identifier");
    if (lex.try_take('(')) {
      if (std::find(kPotFunctions.begin(), kPotFunctions.end(), name) ==
          kPotFunctions.end())
        throw PotError("unknown function '" + name + "'");
      auto e = std::make_unique<PExpr>();
      e->kind = PExprKind::call;
      e->name = name;
      if (!lex.try_take(')')) {
        while (true) {
          e->args.push_back(parse_expr(lex));
          if (lex.try_take(',')) continue;
          if (lex.try_take(')')) break;
          throw PotError("expected ',' or ')'");
        }
      }
      return e;
    }
    auto e = std::make_unique<PExpr>();
    e->kind = PExprKind::variable;
    e->name = name;
    return e;
  }
  throw PotError(std::string("unexpected character '") + c + "'");
}

std::unique_ptr<PExpr> parse_term(PotLexer& lex) {
  auto lhs = parse_factor(lex);
  while (true) {
    const char c = lex.peek();
    if (c != '*' && c != '/') break;
    lex.take();
    auto node = std::make_unique<PExpr>();
    node->kind = PExprKind::binary;
    node->op = c;
    node->args.push_back(std::move(lhs));
    node->args.push_back(parse_factor(lex));
    lhs = std::move(node);
  }
  return lhs;
}

std::unique_ptr<PExpr> parse_expr(PotLexer& lex) {
  auto lhs = parse_term(lex);
  while (true) {
    const char c = lex.peek();
    if (c != '+' && c != '-') break;
    lex.take();
    auto node = std::make_unique<PExpr>();
    node->kind = PExprKind::binary;
    node->op = c;
    node->args.push_back(std::move(lhs));
    node->args.push_back(parse_term(lex));
    lhs = std::move(node);
  }
  return lhs;
}

}  // namespace

struct PotStatement {
  std::string name;
  std::unique_ptr<PExpr> expr;
};

PotProgram::PotProgram() = default;
PotProgram::PotProgram(PotProgram&&) noexcept = default;
PotProgram& PotProgram::operator=(PotProgram&&) noexcept = default;
PotProgram::~PotProgram() = default;

PotProgram pot_parse(const std::string& text) {
  PotProgram program;
  std::istringstream in(text);
  std::string line;
  bool saw_answer = false;
  while (std::getline(in, line)) {
    // ignore blank lines
    bool blank = true;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c))) {
        blank = false;
        break;
      }
    if (blank) continue;
    if (saw_answer) throw PotError("statements after 'answer'");

    PotLexer lex(line);
    const std::string name = lex.take_ident();
    if (name.empty()) throw PotError("expected variable name");
    if (!lex.try_take('=')) throw PotError("expected '='");
    for (const PotStatement& s : program.statements)
      if (s.name == name) throw PotError("variable '" + name + "' reassigned");
    if (std::find(kPotFunctions.begin(), kPotFunctions.end(), name) !=
        kPotFunctions.end())
      throw PotError("cannot assign to function name '" + name + "'");
    PotStatement stmt;
    stmt.name = name;
    stmt.expr = parse_expr(lex);
    if (!lex.done()) throw PotError("trailing tokens");
    if (name == "answer") saw_answer = true;
    program.statements.push_back(std::move(stmt));
  }
  if (program.statements.empty()) throw PotError("empty program");
  if (!saw_answer) throw PotError("missing 'answer ='");
  return program;
}

namespace {

PotValue eval_expr(const PExpr& e,
                   const std::map<std::string, PotValue>& env) {
  switch (e.kind) {
    case PExprKind::number:
      return PotValue{e.number};
    case PExprKind::variable: {
      auto it = env.find(e.name);
      if (it == env.end()) throw PotError("undefined variable '" + e.name + "'");
      return it->second;
    }
    case PExprKind::list: {
      std::vector<double> items;
      for (const auto& arg : e.args) {
        PotValue v = eval_expr(*arg, env);
        if (!v.is_number()) throw PotError("nested lists are not allowed");
        items.push_back(v.number());
      }
      return PotValue{std::move(items)};
    }
    case PExprKind::unary_minus: {
      PotValue v = eval_expr(*e.args[0], env);
      if (!v.is_number()) throw PotError("cannot negate a list");
      return PotValue{-v.number()};
    }
    case PExprKind::binary: {
      PotValue a = eval_expr(*e.args[0], env);
      PotValue b = eval_expr(*e.args[1], env);
      if (!a.is_number() || !b.is_number())
        throw PotError("arithmetic requires numbers");
      const double x = a.number(), y = b.number();
      switch (e.op) {
        case '+': return PotValue{x + y};
        case '-': return PotValue{x - y};
        case '*': return PotValue{x * y};
        case '/':
          if (y == 0.0) throw PotError("division by zero");
          return PotValue{x / y};
      }
      throw PotError("bad operator");
    }
    case PExprKind::call: {
      std::vector<PotValue> args;
      for (const auto& arg : e.args) args.push_back(eval_expr(*arg, env));
      auto list_arg = [&]() -> std::vector<double> {
        if (args.size() == 1 && !args[0].is_number()) return args[0].list();
        std::vector<double> flat;
        for (const PotValue& v : args) {
          if (!v.is_number()) throw PotError(e.name + ": mixed list and scalars");
          flat.push_back(v.number());
        }
        return flat;
      };
      if (e.name == "sum" || e.name == "mean" || e.name == "max" ||
          e.name == "min" || e.name == "len") {
        const std::vector<double> xs = list_arg();
        if (xs.empty()) throw PotError(e.name + ": empty argument");
        if (e.name == "len") return PotValue{static_cast<double>(xs.size())};
        if (e.name == "sum" || e.name == "mean") {
          double s = 0.0;
          for (double x : xs) s += x;
          return PotValue{e.name == "sum" ? s : s / static_cast<double>(xs.size())};
        }
        double best = xs[0];
        for (double x : xs)
          best = e.name == "max" ? std::max(best, x) : std::min(best, x);
        return PotValue{best};
      }
      if (e.name == "abs" || e.name == "round") {
        if (args.size() != 1 || !args[0].is_number())
          throw PotError(e.name + ": expects one number");
        const double x = args[0].number();
        return PotValue{e.name == "abs" ? std::abs(x) : std::round(x)};
      }
      throw PotError("unknown function '" + e.name + "'");
    }
  }
  throw PotError("bad expression");
}

}  // namespace

double pot_eval(const PotProgram& program) {
  std::map<std::string, PotValue> env;
  for (const PotStatement& stmt : program.statements)
    env.emplace(stmt.name, eval_expr(*stmt.expr, env));
  auto it = env.find("answer");
  if (it == env.end()) throw PotError("missing 'answer ='");
  if (!it->second.is_number()) throw PotError("answer is not a number");
  const double v = it->second.number();
  if (!std::isfinite(v)) throw PotError("answer is not finite");
  return v;
}

PotOutcome try_pot(const std::string& text) {
  PotOutcome out;
  PotProgram program;
  try {
    program = pot_parse(text);
  } catch (const PotError&) {
    return out;  // not a program; score the raw text instead
  }
  out.is_program = true;
  try {
    out.value = pot_eval(program);
  } catch (const PotError& e) {
    out.error = e.what();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

RelaxedReport score_report(const std::vector<QAItem>& items,
                           std::vector<double> margins, bool pot_mode) {
  if (items.empty()) throw UsageError("score_report: no items");
  std::sort(margins.begin(), margins.end());
  RelaxedReport report;
  report.margins = margins;
  report.accuracies.assign(margins.size(), 0.0);
  report.count = items.size();

  for (const QAItem& item : items) {
    ItemVerdict verdict;
    verdict.id = item.id;
    std::string pred = item.prediction;
    if (pot_mode) {
      const PotOutcome outcome = try_pot(item.prediction);
      if (outcome.is_program) {
        verdict.pot_used = true;
        if (outcome.value) {
          pred = format_value(*outcome.value);
        } else {
          verdict.pot_error = true;
          pred.clear();  // failed programs cannot match
        }
      }
    }
    for (std::size_t m = 0; m < margins.size(); ++m) {
      const bool ok = verdict.pot_error
                          ? false
                          : relaxed_match(pred, item.ground_truth, margins[m]);
      verdict.verdict_per_margin.push_back(ok);
      if (ok) report.accuracies[m] += 1.0;
    }
    report.items.push_back(std::move(verdict));
  }
  for (double& a : report.accuracies) a /= static_cast<double>(items.size());
  return report;
}

std::vector<QAItem> read_prediction_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open prediction file: " + path);
  std::vector<QAItem> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded())
      throw IoError("prediction file: bad JSON on line " + std::to_string(line_no));
    QAItem item;
    item.id = j.value("id", "item-" + std::to_string(line_no));
    item.question = j.value("question", "");
    item.ground_truth = j.value("ground_truth", "");
    item.prediction = j.value("prediction", "");
    if (item.ground_truth.empty())
      throw IoError("prediction file: empty ground_truth on line " +
                    std::to_string(line_no));
    items.push_back(std::move(item));
  }
  return items;
}

std::string report_to_json_text(const RelaxedReport& report) {
  json j;
  j["margins"] = report.margins;
  j["accuracies"] = report.accuracies;
  j["count"] = report.count;
  json items = json::array();
  for (const ItemVerdict& v : report.items) {
    json jv;
    jv["id"] = v.id;
    jv["verdict_per_margin"] = v.verdict_per_margin;
    if (v.pot_used) jv["pot_error"] = v.pot_error;
    items.push_back(std::move(jv));
  }
  j["items"] = std::move(items);
  return j.dump();
}

}  // namespace chartmix::eval
