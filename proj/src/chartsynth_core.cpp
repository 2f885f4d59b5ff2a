#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <sstream>

#include <json.hpp>

#include "chartmix/chartsynth.hpp"
#include "chartmix/errors.hpp"
#include "chartmix/rng.hpp"

namespace chartmix::synth {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Enum names
// ---------------------------------------------------------------------------

namespace {

template <typename E>
std::optional<E> lookup(const std::vector<std::pair<E, const char*>>& table,
                        const std::string& name) {
  for (const auto& [value, key] : table)
    if (name == key) return value;
  return std::nullopt;
}

const std::vector<std::pair<ChartType, const char*>> kChartTypes = {
    {ChartType::line, "line"},
    {ChartType::bar, "bar"},
    {ChartType::pie, "pie"},
    {ChartType::scatter, "scatter"}};
const std::vector<std::pair<TitlePosition, const char*>> kTitlePositions = {
    {TitlePosition::left, "left"},
    {TitlePosition::center, "center"},
    {TitlePosition::right, "right"}};
const std::vector<std::pair<LegendLocation, const char*>> kLegendLocations = {
    {LegendLocation::topleft, "topleft"},
    {LegendLocation::topright, "topright"},
    {LegendLocation::bottomleft, "bottomleft"},
    {LegendLocation::bottomright, "bottomright"}};
const std::vector<std::pair<LineStyle, const char*>> kLineStyles = {
    {LineStyle::solid, "solid"},
    {LineStyle::dashed, "dashed"},
    {LineStyle::dotted, "dotted"}};
const std::vector<std::pair<MarkerShape, const char*>> kMarkers = {
    {MarkerShape::circle, "circle"},
    {MarkerShape::square, "square"},
    {MarkerShape::diamond, "diamond"}};

template <typename E>
const char* name_of(const std::vector<std::pair<E, const char*>>& table, E v) {
  for (const auto& [value, key] : table)
    if (value == v) return key;
  return "?";
}

}  // namespace

std::string chart_type_name(ChartType t) { return name_of(kChartTypes, t); }
std::optional<ChartType> chart_type_from(const std::string& n) {
  return lookup(kChartTypes, n);
}
std::string title_position_name(TitlePosition p) { return name_of(kTitlePositions, p); }
std::optional<TitlePosition> title_position_from(const std::string& n) {
  return lookup(kTitlePositions, n);
}
std::string legend_location_name(LegendLocation l) {
  return name_of(kLegendLocations, l);
}
std::optional<LegendLocation> legend_location_from(const std::string& n) {
  return lookup(kLegendLocations, n);
}
std::string line_style_name(LineStyle s) { return name_of(kLineStyles, s); }
std::optional<LineStyle> line_style_from(const std::string& n) {
  return lookup(kLineStyles, n);
}
std::string marker_name(MarkerShape m) { return name_of(kMarkers, m); }
std::optional<MarkerShape> marker_from(const std::string& n) {
  return lookup(kMarkers, n);
}

// ---------------------------------------------------------------------------
// Predefined attribute sets
// ---------------------------------------------------------------------------

const std::vector<std::string>& palette_set() {
  static const std::vector<std::string> colors = {
      "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
      "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78"};
  return colors;
}

const std::vector<int>& title_font_sizes() {
  static const std::vector<int> sizes = {14, 16, 18};
  return sizes;
}

const std::vector<int>& label_font_sizes() {
  static const std::vector<int> sizes = {10, 11, 12};
  return sizes;
}

const std::vector<double>& bar_widths() {
  static const std::vector<double> widths = {0.5, 0.6, 0.7, 0.8};
  return widths;
}

const std::vector<double>& explode_offsets() {
  static const std::vector<double> offsets = {0.0, 0.05, 0.1};
  return offsets;
}

// ---------------------------------------------------------------------------
// Number formatting
// ---------------------------------------------------------------------------

std::string format_number(double v) {
  if (v == 0.0) return "0";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  const double target = std::strtod(buf, nullptr);
  for (int p = 1; p <= 6; ++p) {
    std::snprintf(buf, sizeof buf, "%.*g", p, v);
    if (std::strtod(buf, nullptr) == target) return buf;
  }
  return buf;  // unreachable: p = 6 reproduces target by construction
}

double canonical_value(double v) {
  return std::strtod(format_number(v).c_str(), nullptr);
}

// ---------------------------------------------------------------------------
// Equality
// ---------------------------------------------------------------------------

bool operator==(const MetaTable& a, const MetaTable& b) {
  return a.title == b.title && a.col_labels == b.col_labels &&
         a.row_labels == b.row_labels && a.values == b.values;
}

bool operator==(const ChartSpec& a, const ChartSpec& b) {
  return a.chart_type == b.chart_type && a.title_text == b.title_text &&
         a.title_position == b.title_position && a.grid == b.grid &&
         a.legend_show == b.legend_show &&
         a.legend_location == b.legend_location && a.palette == b.palette &&
         a.title_font_size == b.title_font_size &&
         a.label_font_size == b.label_font_size && a.options == b.options;
}

// ---------------------------------------------------------------------------
// Table synthesis
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string> kMetrics = {
    "Revenue",  "Rainfall",   "Throughput", "Energy Use", "Population",
    "Exports",  "Downloads",  "Attendance", "Yield",      "Emissions",
    "Sales",    "Latency"};

const std::vector<std::string> kContexts = {
    "by Region",   "per Quarter", "by Product", "over Time",
    "by Category", "per Site",    "by Channel", "by Team"};

const std::vector<std::string> kSeriesNames = {
    "Alpha", "Bravo",  "North",  "South",  "Online", "Retail",
    "East",  "West",   "Prime",  "Basic",  "Urban",  "Rural"};

const std::vector<std::vector<std::string>> kRowFamilies = {
    {"Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct",
     "Nov", "Dec"},
    {"2010", "2011", "2012", "2013", "2014", "2015", "2016", "2017", "2018",
     "2019", "2020", "2021"},
    {"Q1 A", "Q2 A", "Q3 A", "Q4 A", "Q1 B", "Q2 B", "Q3 B", "Q4 B", "Q1 C",
     "Q2 C", "Q3 C", "Q4 C"},
    {"Oslo", "Lima", "Kyoto", "Cairo", "Quito", "Dakar", "Hanoi", "Sofia",
     "Tunis", "Accra", "Perth", "Turin"},
    {"Item 1", "Item 2", "Item 3", "Item 4", "Item 5", "Item 6", "Item 7",
     "Item 8", "Item 9", "Item 10", "Item 11", "Item 12"}};

const std::vector<std::pair<double, double>> kValueRanges = {
    {0.1, 1.0}, {1.0, 100.0}, {10.0, 1000.0}, {100.0, 10000.0}};

std::vector<std::string> sample_distinct(const std::vector<std::string>& pool,
                                         std::size_t count, Rng& rng) {
  std::vector<std::size_t> order = rng.permutation(pool.size());
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(pool[order[i]]);
  return out;
}

}  // namespace

TableSample sample_table(std::uint64_t seed) {
  Rng rng(substream_seed(seed, 1));
  TableSample sample;
  const auto rows = static_cast<std::size_t>(rng.uniform_int(3, 12));
  const auto series = static_cast<std::size_t>(rng.uniform_int(1, 4));
  const auto& range = kValueRanges[rng.index(kValueRanges.size())];
  sample.range_lo = range.first;
  sample.range_hi = range.second;

  MetaTable& t = sample.table;
  t.title = rng.pick(kMetrics) + " " + rng.pick(kContexts);
  t.col_labels = sample_distinct(kSeriesNames, series, rng);
  const auto& family = kRowFamilies[rng.index(kRowFamilies.size())];
  t.row_labels.assign(family.begin(), family.begin() + static_cast<long>(rows));
  t.values.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    t.values[r].resize(series);
    for (std::size_t s = 0; s < series; ++s)
      t.values[r][s] = canonical_value(rng.uniform(range.first, range.second));
  }
  return sample;
}

ChartSpec derive_spec(const MetaTable& table, std::uint64_t seed) {
  Rng rng(substream_seed(seed, 2));
  ChartSpec spec;

  std::vector<ChartType> eligible = {ChartType::line, ChartType::bar,
                                     ChartType::scatter};
  if (table.series() == 1) eligible.push_back(ChartType::pie);
  spec.chart_type = eligible[rng.index(eligible.size())];

  spec.title_text = table.title;
  spec.title_position =
      kTitlePositions[rng.index(kTitlePositions.size())].first;
  spec.grid = rng.uniform_int(0, 1) == 1;
  spec.legend_show = rng.uniform_int(0, 1) == 1;
  // Location is only part of the record when the legend is shown; otherwise it
  // is pinned so emit/parse round-trips stay exact.
  spec.legend_location =
      spec.legend_show ? kLegendLocations[rng.index(kLegendLocations.size())].first
                       : LegendLocation::topright;
  spec.palette = sample_distinct(palette_set(), table.series(), rng);
  spec.title_font_size = title_font_sizes()[rng.index(title_font_sizes().size())];
  spec.label_font_size = label_font_sizes()[rng.index(label_font_sizes().size())];

  switch (spec.chart_type) {
    case ChartType::line: {
      LineOptions opt;
      opt.marker = kMarkers[rng.index(kMarkers.size())].first;
      opt.style = kLineStyles[rng.index(kLineStyles.size())].first;
      spec.options = opt;
      break;
    }
    case ChartType::bar: {
      BarOptions opt;
      opt.width = bar_widths()[rng.index(bar_widths().size())];
      opt.orientation = rng.uniform_int(0, 1) == 1 ? BarOrientation::horizontal
                                                   : BarOrientation::vertical;
      spec.options = opt;
      break;
    }
    case ChartType::pie: {
      PieOptions opt;
      opt.explode.resize(table.rows());
      for (double& e : opt.explode)
        e = explode_offsets()[rng.index(explode_offsets().size())];
      spec.options = opt;
      break;
    }
    case ChartType::scatter: {
      ScatterOptions opt;
      opt.marker = kMarkers[rng.index(kMarkers.size())].first;
      spec.options = opt;
      break;
    }
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Serializations
// ---------------------------------------------------------------------------

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char c : s) {
    if (c == '"') quoted += "\"\"";
    else quoted += c;
  }
  quoted += "\"";
  return quoted;
}

}  // namespace

std::string table_to_csv(const MetaTable& table) {
  std::ostringstream out;
  out << "category";
  for (const std::string& c : table.col_labels) out << "," << csv_field(c);
  out << "\n";
  for (std::size_t r = 0; r < table.rows(); ++r) {
    out << csv_field(table.row_labels[r]);
    for (std::size_t s = 0; s < table.series(); ++s)
      out << "," << format_number(table.values[r][s]);
    out << "\n";
  }
  return out.str();
}

namespace {

json spec_to_json(const ChartSpec& spec) {
  json j;
  j["chart_type"] = chart_type_name(spec.chart_type);
  j["title"] = {{"text", spec.title_text},
                {"position", title_position_name(spec.title_position)}};
  j["grid"] = spec.grid;
  j["legend"] = {{"show", spec.legend_show},
                 {"location", legend_location_name(spec.legend_location)}};
  j["palette"] = spec.palette;
  j["fonts"] = {{"title_size", spec.title_font_size},
                {"label_size", spec.label_font_size}};
  switch (spec.chart_type) {
    case ChartType::line: {
      const auto& opt = std::get<LineOptions>(spec.options);
      j["line"] = {{"marker", marker_name(opt.marker)},
                   {"style", line_style_name(opt.style)}};
      break;
    }
    case ChartType::bar: {
      const auto& opt = std::get<BarOptions>(spec.options);
      j["bar"] = {{"width", opt.width},
                  {"orientation", opt.orientation == BarOrientation::vertical
                                      ? "vertical"
                                      : "horizontal"}};
      break;
    }
    case ChartType::pie: {
      const auto& opt = std::get<PieOptions>(spec.options);
      j["pie"] = {{"explode", opt.explode}};
      break;
    }
    case ChartType::scatter: {
      const auto& opt = std::get<ScatterOptions>(spec.options);
      j["scatter"] = {{"marker", marker_name(opt.marker)}};
      break;
    }
  }
  return j;
}

template <typename T>
T require_enum(const std::optional<T>& v, const std::string& what) {
  if (!v) throw IoError("spec json: bad " + what);
  return *v;
}

}  // namespace

std::string spec_to_json_text(const ChartSpec& spec) {
  return spec_to_json(spec).dump();
}

ChartSpec spec_from_json_text(const std::string& text) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw IoError("spec json: parse failure");
  ChartSpec spec;
  spec.chart_type =
      require_enum(chart_type_from(j.at("chart_type").get<std::string>()),
                   "chart_type");
  spec.title_text = j.at("title").at("text").get<std::string>();
  spec.title_position = require_enum(
      title_position_from(j.at("title").at("position").get<std::string>()),
      "title position");
  spec.grid = j.at("grid").get<bool>();
  spec.legend_show = j.at("legend").at("show").get<bool>();
  spec.legend_location = require_enum(
      legend_location_from(j.at("legend").at("location").get<std::string>()),
      "legend location");
  spec.palette = j.at("palette").get<std::vector<std::string>>();
  spec.title_font_size = j.at("fonts").at("title_size").get<int>();
  spec.label_font_size = j.at("fonts").at("label_size").get<int>();
  switch (spec.chart_type) {
    case ChartType::line: {
      LineOptions opt;
      opt.marker = require_enum(
          marker_from(j.at("line").at("marker").get<std::string>()), "marker");
      opt.style = require_enum(
          line_style_from(j.at("line").at("style").get<std::string>()), "style");
      spec.options = opt;
      break;
    }
    case ChartType::bar: {
      BarOptions opt;
      opt.width = j.at("bar").at("width").get<double>();
      const std::string o = j.at("bar").at("orientation").get<std::string>();
      if (o == "vertical") opt.orientation = BarOrientation::vertical;
      else if (o == "horizontal") opt.orientation = BarOrientation::horizontal;
      else throw IoError("spec json: bad orientation");
      spec.options = opt;
      break;
    }
    case ChartType::pie: {
      PieOptions opt;
      opt.explode = j.at("pie").at("explode").get<std::vector<double>>();
      spec.options = opt;
      break;
    }
    case ChartType::scatter: {
      ScatterOptions opt;
      opt.marker = require_enum(
          marker_from(j.at("scatter").at("marker").get<std::string>()), "marker");
      spec.options = opt;
      break;
    }
  }
  return spec;
}

std::string table_to_json_text(const MetaTable& table) {
  json j;
  j["title"] = table.title;
  j["col_labels"] = table.col_labels;
  j["row_labels"] = table.row_labels;
  j["values"] = table.values;
  return j.dump();
}

MetaTable table_from_json_text(const std::string& text) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw IoError("table json: parse failure");
  MetaTable t;
  t.title = j.at("title").get<std::string>();
  t.col_labels = j.at("col_labels").get<std::vector<std::string>>();
  t.row_labels = j.at("row_labels").get<std::vector<std::string>>();
  t.values = j.at("values").get<std::vector<std::vector<double>>>();
  return t;
}

std::uint64_t fnv1a_hash(const std::string& bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace chartmix::synth
