#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "chartmix/toy_stack.hpp"

namespace chartmix::synth {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct MetaTable {
  std::string title;
  std::vector<std::string> col_labels;  // one per series
  std::vector<std::string> row_labels;  // one per row (x categories)
  std::vector<std::vector<double>> values;  // rows x series

  std::size_t rows() const { return row_labels.size(); }
  std::size_t series() const { return col_labels.size(); }
};

bool operator==(const MetaTable& a, const MetaTable& b);
inline bool operator!=(const MetaTable& a, const MetaTable& b) { return !(a == b); }

enum class ChartType { line, bar, pie, scatter };
enum class TitlePosition { left, center, right };
enum class LegendLocation { topleft, topright, bottomleft, bottomright };
enum class LineStyle { solid, dashed, dotted };
enum class MarkerShape { circle, square, diamond };
enum class BarOrientation { vertical, horizontal };

struct LineOptions {
  MarkerShape marker = MarkerShape::circle;
  LineStyle style = LineStyle::solid;
  bool operator==(const LineOptions&) const = default;
};
struct BarOptions {
  double width = 0.7;
  BarOrientation orientation = BarOrientation::vertical;
  bool operator==(const BarOptions&) const = default;
};
struct PieOptions {
  std::vector<double> explode;  // one offset per slice
  bool operator==(const PieOptions&) const = default;
};
struct ScatterOptions {
  MarkerShape marker = MarkerShape::circle;
  bool operator==(const ScatterOptions&) const = default;
};

struct ChartSpec {
  ChartType chart_type = ChartType::line;
  std::string title_text;
  TitlePosition title_position = TitlePosition::center;
  bool grid = false;
  bool legend_show = true;
  LegendLocation legend_location = LegendLocation::topright;
  std::vector<std::string> palette;  // "#rrggbb" per series
  int title_font_size = 16;
  int label_font_size = 11;
  std::variant<LineOptions, BarOptions, PieOptions, ScatterOptions> options;
};

bool operator==(const ChartSpec& a, const ChartSpec& b);
inline bool operator!=(const ChartSpec& a, const ChartSpec& b) { return !(a == b); }

struct CodeDoc {
  std::string text;
};

struct Quadruple {
  std::string id;
  std::uint64_t seed = 0;
  MetaTable table;
  ChartSpec spec;
  CodeDoc code;
  std::string svg;
  Raster raster;
  double range_lo = 0.0;  // generator's declared value range, used by the QA tasks
  double range_hi = 1.0;
};

// ---------------------------------------------------------------------------
// Errors carrying source positions
// ---------------------------------------------------------------------------

class ChartScriptError : public std::runtime_error {
 public:
  ChartScriptError(int line, int col, const std::string& message)
      : std::runtime_error("line " + std::to_string(line) + ", col " +
                           std::to_string(col) + ": " + message),
        line(line), col(col) {}
  int line;
  int col;
};

class RenderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Predefined attribute sets (finite, so sampling is auditable)
// ---------------------------------------------------------------------------

const std::vector<std::string>& palette_set();        // 12 hex colors
const std::vector<int>& title_font_sizes();           // {14, 16, 18}
const std::vector<int>& label_font_sizes();           // {10, 11, 12}
const std::vector<double>& bar_widths();              // {0.5, 0.6, 0.7, 0.8}
const std::vector<double>& explode_offsets();         // {0, 0.05, 0.1}

// ---------------------------------------------------------------------------
// Number formatting: shortest decimal within 6 significant digits. Generator
// values are canonicalized through this format so emit/parse round-trips are
// exact.
// ---------------------------------------------------------------------------

std::string format_number(double v);
double canonical_value(double v);  // parse(format_number(v))

// ---------------------------------------------------------------------------
// Pipeline operations
// ---------------------------------------------------------------------------

struct TableSample {
  MetaTable table;
  double range_lo = 0.0;
  double range_hi = 1.0;
};

TableSample sample_table(std::uint64_t seed);
ChartSpec derive_spec(const MetaTable& table, std::uint64_t seed);
CodeDoc gen_code(const ChartSpec& spec, const MetaTable& table);

struct ParsedChart {
  ChartSpec spec;
  MetaTable table;
};
ParsedChart parse_code(const CodeDoc& code);  // throws ChartScriptError

struct Rendered {
  std::string svg;
  Raster raster;
};
Rendered render(const ChartSpec& spec, const MetaTable& table);  // throws RenderError

Quadruple make_quadruple(std::uint64_t seed);

struct ValidationResult {
  bool ok = false;
  std::string reason;  // "", "parse-error", "round-trip-mismatch", "render-error"
};
ValidationResult validate_quadruple(const Quadruple& q);

struct SynthReport {
  std::size_t requested = 0;
  std::size_t retained = 0;
  double retention = 0.0;
  std::string manifest_path;
  std::uint64_t manifest_hash = 0;  // FNV-1a of the manifest bytes
};
SynthReport synth_batch(std::size_t n, std::uint64_t base_seed,
                        const std::string& out_dir);

// ---------------------------------------------------------------------------
// Serializations
// ---------------------------------------------------------------------------

std::string table_to_csv(const MetaTable& table);
std::string spec_to_json_text(const ChartSpec& spec);  // canonical: sorted keys
ChartSpec spec_from_json_text(const std::string& text);
std::string table_to_json_text(const MetaTable& table);
MetaTable table_from_json_text(const std::string& text);

struct InstructionPair {
  std::string task;  // "table" | "json" | "code"
  std::string instruction;
  std::string answer;
};
std::vector<InstructionPair> instruction_pairs(const Quadruple& q);

// Minimal well-formedness check for the emitted SVG (balanced, properly
// nested tags with quoted attributes).
bool svg_well_formed(const std::string& text);

std::uint64_t fnv1a_hash(const std::string& bytes);

// enum <-> keyword helpers shared by the code dialect and the JSON schema
std::string chart_type_name(ChartType t);
std::optional<ChartType> chart_type_from(const std::string& name);
std::string title_position_name(TitlePosition p);
std::optional<TitlePosition> title_position_from(const std::string& name);
std::string legend_location_name(LegendLocation l);
std::optional<LegendLocation> legend_location_from(const std::string& name);
std::string line_style_name(LineStyle s);
std::optional<LineStyle> line_style_from(const std::string& name);
std::string marker_name(MarkerShape m);
std::optional<MarkerShape> marker_from(const std::string& name);

}  // namespace chartmix::synth
