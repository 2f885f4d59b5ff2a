#include <cctype>
#include <cstdlib>
#include <map>
#include <sstream>

#include "chartmix/chartsynth.hpp"
#include "chartmix/errors.hpp"

namespace chartmix::synth {

// ---------------------------------------------------------------------------
// Emission. One statement per attribute, fixed order, all numbers as literal
// lists and all colors as hex literals.
// ---------------------------------------------------------------------------

namespace {

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

bool valid_hex_color(const std::string& s) {
  if (s.size() != 7 || s[0] != '#') return false;
  for (std::size_t i = 1; i < 7; ++i) {
    const char c = s[i];
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

void check_consistent(const ChartSpec& spec, const MetaTable& table) {
  if (spec.palette.size() != table.series())
    throw ConfigError("gen_code: palette length != series count");
  if (spec.chart_type == ChartType::pie && table.series() != 1)
    throw ConfigError("gen_code: pie requires a single series");
  if (spec.title_text != table.title)
    throw ConfigError("gen_code: spec title differs from table title");
  for (const std::string& c : spec.palette)
    if (!valid_hex_color(c)) throw ConfigError("gen_code: bad palette color " + c);
  if (const auto* pie = std::get_if<PieOptions>(&spec.options))
    if (pie->explode.size() != table.rows())
      throw ConfigError("gen_code: explode length != row count");
  for (const auto& row : table.values)
    if (row.size() != table.series())
      throw ConfigError("gen_code: ragged value grid");
}

}  // namespace

CodeDoc gen_code(const ChartSpec& spec, const MetaTable& table) {
  check_consistent(spec, table);
  std::ostringstream out;
  out << "type " << chart_type_name(spec.chart_type) << "\n";
  out << "title " << quote(spec.title_text)
      << " pos=" << title_position_name(spec.title_position) << "\n";
  out << "grid " << (spec.grid ? "on" : "off") << "\n";
  if (spec.legend_show)
    out << "legend on loc=" << legend_location_name(spec.legend_location) << "\n";
  else
    out << "legend off\n";
  out << "font title = " << spec.title_font_size << "\n";
  out << "font label = " << spec.label_font_size << "\n";
  for (std::size_t i = 0; i < spec.palette.size(); ++i)
    out << "color " << i << " = " << spec.palette[i] << "\n";

  switch (spec.chart_type) {
    case ChartType::line: {
      const auto& opt = std::get<LineOptions>(spec.options);
      out << "marker " << marker_name(opt.marker) << "\n";
      out << "linestyle " << line_style_name(opt.style) << "\n";
      break;
    }
    case ChartType::bar: {
      const auto& opt = std::get<BarOptions>(spec.options);
      out << "barwidth " << format_number(opt.width) << "\n";
      out << "orient " << (opt.orientation == BarOrientation::vertical ? "v" : "h")
          << "\n";
      break;
    }
    case ChartType::pie: {
      const auto& opt = std::get<PieOptions>(spec.options);
      out << "explode [";
      for (std::size_t i = 0; i < opt.explode.size(); ++i)
        out << (i ? " " : "") << format_number(opt.explode[i]);
      out << "]\n";
      break;
    }
    case ChartType::scatter: {
      const auto& opt = std::get<ScatterOptions>(spec.options);
      out << "marker " << marker_name(opt.marker) << "\n";
      break;
    }
  }

  out << "xlabels [";
  for (std::size_t r = 0; r < table.rows(); ++r)
    out << (r ? " " : "") << quote(table.row_labels[r]);
  out << "]\n";
  for (std::size_t s = 0; s < table.series(); ++s) {
    out << "series " << quote(table.col_labels[s]) << " = [";
    for (std::size_t r = 0; r < table.rows(); ++r)
      out << (r ? " " : "") << format_number(table.values[r][s]);
    out << "]\n";
  }
  return CodeDoc{out.str()};
}

// ---------------------------------------------------------------------------
// Lexer. Line oriented; `#` starts a comment unless it is immediately followed
// by six hex digits (a color literal). Commas count as whitespace.
// ---------------------------------------------------------------------------

namespace {

enum class TokKind { ident, string, number, hexcolor, equals, lbracket, rbracket };

struct Token {
  TokKind kind;
  std::string text;
  double number = 0.0;
  int line = 0;
  int col = 0;
};

bool is_hex_digit(char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
}

std::vector<Token> lex_line(const std::string& line, int line_no) {
  std::vector<Token> toks;
  std::size_t i = 0;
  const std::size_t n = line.size();
  while (i < n) {
    const char c = line[i];
    const int col = static_cast<int>(i) + 1;
    if (c == ' ' || c == '\t' || c == '\r' || c == ',') {
      ++i;
      continue;
    }
    if (c == '#') {
      bool color = i + 6 < n;
      for (std::size_t k = 1; color && k <= 6; ++k)
        if (!is_hex_digit(line[i + k])) color = false;
      if (color && i + 7 < n) {
        const char after = line[i + 7];
        if (std::isalnum(static_cast<unsigned char>(after))) color = false;
      }
      if (!color) break;  // comment to end of line
      toks.push_back({TokKind::hexcolor, line.substr(i, 7), 0.0, line_no, col});
      i += 7;
      continue;
    }
    if (c == '=') {
      toks.push_back({TokKind::equals, "=", 0.0, line_no, col});
      ++i;
      continue;
    }
    if (c == '[') {
      toks.push_back({TokKind::lbracket, "[", 0.0, line_no, col});
      ++i;
      continue;
    }
    if (c == ']') {
      toks.push_back({TokKind::rbracket, "]", 0.0, line_no, col});
      ++i;
      continue;
    }
    if (c == '"') {
      std::string s;
      ++i;
      bool closed = false;
      while (i < n) {
        if (line[i] == '\\' && i + 1 < n) {
          s.push_back(line[i + 1]);
          i += 2;
        } else if (line[i] == '"') {
          ++i;
          closed = true;
          break;
        } else {
          s.push_back(line[i]);
          ++i;
        }
      }
      if (!closed) throw ChartScriptError(line_no, col, "unterminated string");
      toks.push_back({TokKind::string, s, 0.0, line_no, col});
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' ||
        c == '.') {
      std::size_t j = i;
      if (line[j] == '-' || line[j] == '+') ++j;
      std::size_t digits = 0;
      while (j < n && std::isdigit(static_cast<unsigned char>(line[j]))) ++j, ++digits;
      if (j < n && line[j] == '.') {
        ++j;
        while (j < n && std::isdigit(static_cast<unsigned char>(line[j]))) ++j, ++digits;
      }
      if (digits == 0) throw ChartScriptError(line_no, col, "malformed number");
      if (j < n && (line[j] == 'e' || line[j] == 'E')) {
        ++j;
        if (j < n && (line[j] == '-' || line[j] == '+')) ++j;
        std::size_t exp_digits = 0;
        while (j < n && std::isdigit(static_cast<unsigned char>(line[j]))) ++j, ++exp_digits;
        if (exp_digits == 0) throw ChartScriptError(line_no, col, "malformed exponent");
      }
      const std::string text = line.substr(i, j - i);
      toks.push_back({TokKind::number, text, std::strtod(text.c_str(), nullptr),
                      line_no, col});
      i = j;
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < n && (std::isalnum(static_cast<unsigned char>(line[j])) ||
                       line[j] == '_'))
        ++j;
      toks.push_back({TokKind::ident, line.substr(i, j - i), 0.0, line_no, col});
      i = j;
      continue;
    }
    throw ChartScriptError(line_no, col,
                           std::string("unexpected character '") + c + "'");
  }
  return toks;
}

// Cursor over one statement line.
class Stmt {
 public:
  Stmt(std::vector<Token> toks, int line) : toks_(std::move(toks)), line_(line) {}

  bool done() const { return pos_ >= toks_.size(); }
  int line() const { return line_; }

  const Token& expect(TokKind kind, const char* what) {
    if (done())
      throw ChartScriptError(line_, end_col(), std::string("expected ") + what);
    const Token& t = toks_[pos_];
    if (t.kind != kind)
      throw ChartScriptError(t.line, t.col,
                             std::string("expected ") + what + ", got '" + t.text + "'");
    ++pos_;
    return t;
  }

  const Token& expect_ident(const std::string& word) {
    const Token& t = expect(TokKind::ident, ("'" + word + "'").c_str());
    if (t.text != word)
      throw ChartScriptError(t.line, t.col, "expected '" + word + "', got '" + t.text + "'");
    return t;
  }

  void expect_end() {
    if (!done()) {
      const Token& t = toks_[pos_];
      throw ChartScriptError(t.line, t.col, "trailing tokens after statement");
    }
  }

  bool peek_is(TokKind kind) const { return !done() && toks_[pos_].kind == kind; }

  int end_col() const {
    if (toks_.empty()) return 1;
    const Token& last = toks_.back();
    return last.col + static_cast<int>(last.text.size());
  }

 private:
  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  int line_;
};

void semantic_error(int line, const std::string& msg) {
  throw ChartScriptError(line, 1, msg);
}

}  // namespace

ParsedChart parse_code(const CodeDoc& code) {
  std::istringstream in(code.text);
  std::string raw;
  int line_no = 0;

  ChartSpec spec;
  MetaTable table;
  std::map<std::string, int> seen;  // statement keyword -> line
  std::vector<std::string> colors;
  std::vector<bool> color_set;
  bool have_xlabels = false;
  std::vector<std::pair<std::string, std::vector<double>>> series;
  int series_line = 0;
  // Type-specific attributes are collected independently (the grammar is
  // order-free) and assembled once the chart type is known.
  std::optional<double> barwidth;
  std::optional<BarOrientation> orient;
  std::optional<MarkerShape> marker;
  std::optional<LineStyle> linestyle;
  std::optional<std::vector<double>> explode;

  auto mark_once = [&seen](const std::string& key, int line) {
    auto [it, inserted] = seen.emplace(key, line);
    if (!inserted) semantic_error(line, "duplicate statement '" + key + "'");
  };

  while (std::getline(in, raw)) {
    ++line_no;
    std::vector<Token> toks = lex_line(raw, line_no);
    if (toks.empty()) continue;
    Stmt stmt(std::move(toks), line_no);
    const Token& head = stmt.expect(TokKind::ident, "statement keyword");
    const std::string& kw = head.text;

    if (kw == "type") {
      mark_once("type", line_no);
      const Token& t = stmt.expect(TokKind::ident, "chart type");
      auto ct = chart_type_from(t.text);
      if (!ct) throw ChartScriptError(t.line, t.col, "unknown chart type '" + t.text + "'");
      spec.chart_type = *ct;
    } else if (kw == "title") {
      mark_once("title", line_no);
      const Token& text = stmt.expect(TokKind::string, "title string");
      stmt.expect_ident("pos");
      stmt.expect(TokKind::equals, "'='");
      const Token& pos = stmt.expect(TokKind::ident, "title position");
      auto tp = title_position_from(pos.text);
      if (!tp) throw ChartScriptError(pos.line, pos.col, "unknown title position");
      spec.title_text = text.text;
      spec.title_position = *tp;
      table.title = text.text;
    } else if (kw == "grid") {
      mark_once("grid", line_no);
      const Token& t = stmt.expect(TokKind::ident, "'on' or 'off'");
      if (t.text == "on") spec.grid = true;
      else if (t.text == "off") spec.grid = false;
      else throw ChartScriptError(t.line, t.col, "expected 'on' or 'off'");
    } else if (kw == "legend") {
      mark_once("legend", line_no);
      const Token& t = stmt.expect(TokKind::ident, "'on' or 'off'");
      if (t.text == "off") {
        spec.legend_show = false;
        spec.legend_location = LegendLocation::topright;
      } else if (t.text == "on") {
        spec.legend_show = true;
        stmt.expect_ident("loc");
        stmt.expect(TokKind::equals, "'='");
        const Token& loc = stmt.expect(TokKind::ident, "legend location");
        auto ll = legend_location_from(loc.text);
        if (!ll) throw ChartScriptError(loc.line, loc.col, "unknown legend location");
        spec.legend_location = *ll;
      } else {
        throw ChartScriptError(t.line, t.col, "expected 'on' or 'off'");
      }
    } else if (kw == "font") {
      const Token& which = stmt.expect(TokKind::ident, "'title' or 'label'");
      stmt.expect(TokKind::equals, "'='");
      const Token& size = stmt.expect(TokKind::number, "font size");
      if (size.number <= 0 || size.number != static_cast<int>(size.number))
        throw ChartScriptError(size.line, size.col, "font size must be a positive integer");
      if (which.text == "title") {
        mark_once("font title", line_no);
        spec.title_font_size = static_cast<int>(size.number);
      } else if (which.text == "label") {
        mark_once("font label", line_no);
        spec.label_font_size = static_cast<int>(size.number);
      } else {
        throw ChartScriptError(which.line, which.col, "unknown font '" + which.text + "'");
      }
    } else if (kw == "color") {
      const Token& idx = stmt.expect(TokKind::number, "color index");
      stmt.expect(TokKind::equals, "'='");
      const Token& hex = stmt.expect(TokKind::hexcolor, "hex color");
      if (idx.number < 0 || idx.number != static_cast<int>(idx.number))
        throw ChartScriptError(idx.line, idx.col, "color index must be a non-negative integer");
      const auto i = static_cast<std::size_t>(idx.number);
      if (i >= colors.size()) {
        colors.resize(i + 1);
        color_set.resize(i + 1, false);
      }
      if (color_set[i]) semantic_error(line_no, "duplicate color index " + std::to_string(i));
      colors[i] = hex.text;
      color_set[i] = true;
    } else if (kw == "barwidth") {
      mark_once("barwidth", line_no);
      const Token& w = stmt.expect(TokKind::number, "bar width");
      barwidth = w.number;
    } else if (kw == "orient") {
      mark_once("orient", line_no);
      const Token& o = stmt.expect(TokKind::ident, "'v' or 'h'");
      if (o.text != "v" && o.text != "h")
        throw ChartScriptError(o.line, o.col, "expected 'v' or 'h'");
      orient = o.text == "h" ? BarOrientation::horizontal : BarOrientation::vertical;
    } else if (kw == "marker") {
      mark_once("marker", line_no);
      const Token& m = stmt.expect(TokKind::ident, "marker name");
      auto mk = marker_from(m.text);
      if (!mk) throw ChartScriptError(m.line, m.col, "unknown marker '" + m.text + "'");
      marker = *mk;
    } else if (kw == "linestyle") {
      mark_once("linestyle", line_no);
      const Token& s = stmt.expect(TokKind::ident, "line style");
      auto st = line_style_from(s.text);
      if (!st) throw ChartScriptError(s.line, s.col, "unknown line style '" + s.text + "'");
      linestyle = *st;
    } else if (kw == "explode") {
      mark_once("explode", line_no);
      stmt.expect(TokKind::lbracket, "'['");
      std::vector<double> offsets;
      while (stmt.peek_is(TokKind::number))
        offsets.push_back(stmt.expect(TokKind::number, "number").number);
      stmt.expect(TokKind::rbracket, "']'");
      explode = std::move(offsets);
    } else if (kw == "xlabels") {
      mark_once("xlabels", line_no);
      stmt.expect(TokKind::lbracket, "'['");
      while (stmt.peek_is(TokKind::string))
        table.row_labels.push_back(stmt.expect(TokKind::string, "label").text);
      stmt.expect(TokKind::rbracket, "']'");
      have_xlabels = true;
    } else if (kw == "series") {
      const Token& name = stmt.expect(TokKind::string, "series name");
      stmt.expect(TokKind::equals, "'='");
      stmt.expect(TokKind::lbracket, "'['");
      std::vector<double> vals;
      while (stmt.peek_is(TokKind::number))
        vals.push_back(stmt.expect(TokKind::number, "number").number);
      stmt.expect(TokKind::rbracket, "']'");
      for (const auto& s : series)
        if (s.first == name.text)
          semantic_error(line_no, "duplicate series '" + name.text + "'");
      series.emplace_back(name.text, std::move(vals));
      series_line = line_no;
    } else {
      throw ChartScriptError(head.line, head.col, "unknown statement '" + kw + "'");
    }
    stmt.expect_end();
  }

  if (line_no == 0) throw ChartScriptError(1, 1, "empty document");
  const int end_line = line_no;
  if (seen.empty() && series.empty())
    throw ChartScriptError(1, 1, "document has no statements");

  // Completeness and cross-statement consistency.
  if (series.empty()) semantic_error(end_line, "missing series");
  if (!have_xlabels) semantic_error(end_line, "missing 'xlabels' statement");
  if (!seen.count("type")) semantic_error(end_line, "missing 'type' statement");
  if (!seen.count("title")) semantic_error(end_line, "missing 'title' statement");
  if (!seen.count("grid")) semantic_error(end_line, "missing 'grid' statement");
  if (!seen.count("legend")) semantic_error(end_line, "missing 'legend' statement");
  if (!seen.count("font title")) semantic_error(end_line, "missing 'font title' statement");
  if (!seen.count("font label")) semantic_error(end_line, "missing 'font label' statement");

  for (std::size_t i = 0; i < color_set.size(); ++i)
    if (!color_set[i]) semantic_error(end_line, "missing color index " + std::to_string(i));
  if (colors.size() != series.size())
    semantic_error(end_line, "color count " + std::to_string(colors.size()) +
                                 " != series count " + std::to_string(series.size()));
  spec.palette = colors;

  const std::size_t rows = table.row_labels.size();
  if (rows == 0) semantic_error(end_line, "xlabels must not be empty");
  for (const auto& [name, vals] : series) {
    if (vals.size() != rows)
      semantic_error(series_line, "series '" + name + "' has " +
                                      std::to_string(vals.size()) + " values for " +
                                      std::to_string(rows) + " labels");
    table.col_labels.push_back(name);
  }
  table.values.assign(rows, std::vector<double>(series.size(), 0.0));
  for (std::size_t s = 0; s < series.size(); ++s)
    for (std::size_t r = 0; r < rows; ++r) table.values[r][s] = series[s].second[r];

  // Type-specific statements must match the declared type.
  switch (spec.chart_type) {
    case ChartType::line:
      if (!marker) semantic_error(end_line, "line chart missing 'marker'");
      if (!linestyle) semantic_error(end_line, "line chart missing 'linestyle'");
      if (barwidth || orient || explode)
        semantic_error(end_line, "statement not valid for line charts");
      spec.options = LineOptions{*marker, *linestyle};
      break;
    case ChartType::bar:
      if (!barwidth) semantic_error(end_line, "bar chart missing 'barwidth'");
      if (!orient) semantic_error(end_line, "bar chart missing 'orient'");
      if (marker || linestyle || explode)
        semantic_error(end_line, "statement not valid for bar charts");
      spec.options = BarOptions{*barwidth, *orient};
      break;
    case ChartType::pie:
      if (!explode) semantic_error(end_line, "pie chart missing 'explode'");
      if (marker || linestyle || barwidth || orient)
        semantic_error(end_line, "statement not valid for pie charts");
      if (series.size() != 1) semantic_error(end_line, "pie requires exactly one series");
      if (explode->size() != rows)
        semantic_error(end_line, "explode length != row count");
      spec.options = PieOptions{std::move(*explode)};
      break;
    case ChartType::scatter:
      if (!marker) semantic_error(end_line, "scatter chart missing 'marker'");
      if (linestyle || barwidth || orient || explode)
        semantic_error(end_line, "statement not valid for scatter charts");
      spec.options = ScatterOptions{*marker};
      break;
  }
  return ParsedChart{std::move(spec), std::move(table)};
}

}  // namespace chartmix::synth
