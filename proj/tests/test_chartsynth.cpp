#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <doctest.h>
#include <json.hpp>

#include "chartmix/chartsynth.hpp"
#include "chartmix/errors.hpp"

using namespace chartmix;
using namespace chartmix::synth;

namespace {

std::size_t count_occurrences(const std::string& text, const std::string& needle) {
  std::size_t count = 0;
  for (std::size_t pos = text.find(needle); pos != std::string::npos;
       pos = text.find(needle, pos + needle.size()))
    ++count;
  return count;
}

std::string marks_group(const std::string& svg) {
  const std::size_t begin = svg.find("<g class=\"marks\">");
  const std::size_t end = svg.find("</g>", begin);
  REQUIRE(begin != std::string::npos);
  return svg.substr(begin, end - begin);
}

}  // namespace

TEST_SUITE("chartsynth") {

TEST_CASE("format_number is canonical and idempotent") {
  CHECK(format_number(0.0) == "0");
  CHECK(format_number(0.05) == "0.05");
  CHECK(format_number(123.456) == "123.456");
  CHECK(format_number(canonical_value(123.4567891)) == format_number(123.4567891));
  for (double v : {0.1, 3.14159, 9999.99, 1e6, 1.0 / 3.0}) {
    const double canon = canonical_value(v);
    CHECK(canonical_value(canon) == canon);  // idempotent
    CHECK(std::strtod(format_number(canon).c_str(), nullptr) == canon);
  }
}

TEST_CASE("sample_table determinism and bounds") {
  const TableSample a = sample_table(7);
  const TableSample b = sample_table(7);
  CHECK(a.table == b.table);
  CHECK(a.range_lo == b.range_lo);

  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const TableSample s = sample_table(seed);
    CHECK(s.table.rows() >= 3);
    CHECK(s.table.rows() <= 12);
    CHECK(s.table.series() >= 1);
    CHECK(s.table.series() <= 4);
    for (const auto& row : s.table.values) {
      REQUIRE(row.size() == s.table.series());
      for (double v : row) {
        CHECK(v >= s.range_lo);
        CHECK(v <= s.range_hi);
      }
    }
  }
}

TEST_CASE("seed-0 table content regression") {
  const TableSample s = sample_table(0);
  const std::string csv = table_to_csv(s.table);
  // frozen from a seeded run
  CHECK(fnv1a_hash(csv + s.table.title) == 0x4db3e3660cc62629ULL);
}

TEST_CASE("derive_spec samples only predefined values") {
  const auto& palette = palette_set();
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    const TableSample s = sample_table(seed);
    const ChartSpec spec = derive_spec(s.table, seed);
    CHECK(spec.palette.size() == s.table.series());
    for (const std::string& c : spec.palette)
      CHECK(std::find(palette.begin(), palette.end(), c) != palette.end());
    if (s.table.series() > 1) CHECK(spec.chart_type != ChartType::pie);
    CHECK(std::find(title_font_sizes().begin(), title_font_sizes().end(),
                    spec.title_font_size) != title_font_sizes().end());
  }
}

TEST_CASE("seed-0 spec canonical json regression") {
  const TableSample s = sample_table(0);
  const ChartSpec spec = derive_spec(s.table, 0);
  const std::string json_text = spec_to_json_text(spec);
  CHECK(spec_from_json_text(json_text) == spec);
  // frozen from a seeded run
  CHECK(fnv1a_hash(json_text) == 0xf3abfbd7f01d6b7aULL);
}

TEST_CASE("gen_code structure contracts") {
  const TableSample s = sample_table(42);
  const ChartSpec spec = derive_spec(s.table, 42);
  const CodeDoc code = gen_code(spec, s.table);

  CHECK(count_occurrences(code.text, "series ") == s.table.series());
  for (std::size_t i = 0; i < spec.palette.size(); ++i) {
    std::ostringstream stmt;
    stmt << "color " << i << " = " << spec.palette[i];
    CHECK(code.text.find(stmt.str()) != std::string::npos);
  }
  CHECK(count_occurrences(code.text, "type ") == 1);
  CHECK(count_occurrences(code.text, "xlabels ") == 1);
}

TEST_CASE("gen_code rejects inconsistent inputs") {
  const TableSample s = sample_table(43);
  ChartSpec spec = derive_spec(s.table, 43);
  spec.palette.push_back("#1f77b4");
  CHECK_THROWS_AS(gen_code(spec, s.table), ConfigError);
}

TEST_CASE("round-trip identity over many seeds") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const TableSample s = sample_table(seed);
    const ChartSpec spec = derive_spec(s.table, seed);
    const CodeDoc code = gen_code(spec, s.table);
    const ParsedChart parsed = parse_code(code);
    CHECK_MESSAGE(parsed.spec == spec, "spec mismatch at seed ", seed);
    CHECK_MESSAGE(parsed.table == s.table, "table mismatch at seed ", seed);
  }
}

TEST_CASE("parser error positions") {
  try {
    parse_code(CodeDoc{""});
    FAIL("expected error");
  } catch (const ChartScriptError& e) {
    CHECK(e.line == 1);
  }

  try {
    parse_code(CodeDoc{"type bar\n"});
    FAIL("expected error");
  } catch (const ChartScriptError& e) {
    CHECK(std::string(e.what()).find("missing series") != std::string::npos);
  }

  try {
    parse_code(CodeDoc{"type bar\ntitle 3 pos=center\n"});
    FAIL("expected error");
  } catch (const ChartScriptError& e) {
    CHECK(e.line == 2);
    CHECK(e.col >= 6);
  }

  CHECK_THROWS_AS(parse_code(CodeDoc{"bogus statement\n"}), ChartScriptError);
  CHECK_THROWS_AS(parse_code(CodeDoc{"type frobnicate\n"}), ChartScriptError);
  // duplicate statement
  const TableSample s = sample_table(5);
  const ChartSpec spec = derive_spec(s.table, 5);
  CodeDoc code = gen_code(spec, s.table);
  CHECK_THROWS_AS(parse_code(CodeDoc{code.text + "grid on\n"}), ChartScriptError);
}

TEST_CASE("comments and flexible ordering parse") {
  const char* text =
      "# a comment line\n"
      "series \"Only\" = [1 2.5 3]\n"
      "xlabels [\"a\" \"b\" \"c\"]\n"
      "color 0 = #1f77b4\n"
      "font label = 10\n"
      "font title = 16\n"
      "legend off\n"
      "grid off  # trailing comment\n"
      "title \"Out of order\" pos=left\n"
      "type line\n"
      "marker circle\n"
      "linestyle dashed\n";
  const ParsedChart parsed = parse_code(CodeDoc{text});
  CHECK(parsed.spec.chart_type == ChartType::line);
  CHECK(parsed.table.rows() == 3);
  CHECK(parsed.table.values[1][0] == 2.5);
}

TEST_CASE("render produces well-formed deterministic svg") {
  for (std::uint64_t seed : {0ULL, 1ULL, 2ULL, 3ULL, 10ULL, 25ULL}) {
    const TableSample s = sample_table(seed);
    const ChartSpec spec = derive_spec(s.table, seed);
    const Rendered a = render(spec, s.table);
    const Rendered b = render(spec, s.table);
    CHECK(svg_well_formed(a.svg));
    CHECK(a.svg == b.svg);  // byte-identical
    CHECK(a.raster.width == 490);
    CHECK(a.raster.height == 490);
    CHECK(a.raster.rgb == b.raster.rgb);
  }
  CHECK_FALSE(svg_well_formed("<svg><g></svg>"));
  CHECK_FALSE(svg_well_formed("<svg>"));
}

TEST_CASE("bar chart emits one rect per datum") {
  // find a bar-chart seed, then count rect marks
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const TableSample s = sample_table(seed);
    const ChartSpec spec = derive_spec(s.table, seed);
    if (spec.chart_type != ChartType::bar) continue;
    const Rendered r = render(spec, s.table);
    const std::size_t rects = count_occurrences(marks_group(r.svg), "<rect");
    CHECK(rects == s.table.rows() * s.table.series());
    return;
  }
  FAIL("no bar chart in the first 200 seeds");
}

TEST_CASE("line charts emit one path per series, pies one wedge per slice") {
  bool saw_line = false, saw_pie = false;
  for (std::uint64_t seed = 0; seed < 400 && !(saw_line && saw_pie); ++seed) {
    const TableSample s = sample_table(seed);
    const ChartSpec spec = derive_spec(s.table, seed);
    if (spec.chart_type == ChartType::line && !saw_line) {
      const Rendered r = render(spec, s.table);
      CHECK(count_occurrences(marks_group(r.svg), "<path") == s.table.series());
      saw_line = true;
    }
    if (spec.chart_type == ChartType::pie && !saw_pie) {
      const Rendered r = render(spec, s.table);
      CHECK(count_occurrences(marks_group(r.svg), "<path") == s.table.rows());
      saw_pie = true;
    }
  }
  CHECK(saw_line);
  CHECK(saw_pie);
}

TEST_CASE("zero-sum pie fails to render") {
  MetaTable t;
  t.title = "Zero";
  t.col_labels = {"Only"};
  t.row_labels = {"a", "b", "c"};
  t.values = {{0.0}, {0.0}, {0.0}};
  ChartSpec spec;
  spec.chart_type = ChartType::pie;
  spec.title_text = "Zero";
  spec.palette = {"#1f77b4"};
  spec.options = PieOptions{{0.0, 0.0, 0.0}};
  CHECK_THROWS_AS(render(spec, t), RenderError);
}

TEST_CASE("validate_quadruple verdicts and reasons") {
  const Quadruple q = make_quadruple(3);
  CHECK(validate_quadruple(q).ok);

  // corrupt one digit of a color literal
  Quadruple bad = q;
  const std::size_t pos = bad.code.text.find("color 0 = #");
  REQUIRE(pos != std::string::npos);
  char& digit = bad.code.text[pos + 11];
  digit = digit == '1' ? '2' : '1';
  const ValidationResult v = validate_quadruple(bad);
  CHECK_FALSE(v.ok);
  CHECK(v.reason == "round-trip-mismatch");

  // truncated or garbled code both surface as parse errors
  Quadruple trunc = q;
  trunc.code.text = "type bar\n";
  CHECK(validate_quadruple(trunc).reason == "parse-error");
  trunc.code.text = "???\n";
  CHECK(validate_quadruple(trunc).reason == "parse-error");

  // zero-sum pie renders nothing: reason render-error
  Quadruple pie;
  pie.table.title = "Zero";
  pie.table.col_labels = {"Only"};
  pie.table.row_labels = {"a", "b", "c"};
  pie.table.values = {{0.0}, {0.0}, {0.0}};
  pie.spec.chart_type = ChartType::pie;
  pie.spec.title_text = "Zero";
  pie.spec.palette = {"#1f77b4"};
  pie.spec.options = PieOptions{{0.0, 0.0, 0.0}};
  pie.code = gen_code(pie.spec, pie.table);
  CHECK(validate_quadruple(pie).reason == "render-error");
}

TEST_CASE("synth_batch retention, instructions, and worker independence") {
  namespace fs = std::filesystem;
  const std::string dir_a = (fs::temp_directory_path() / "chartmix_t1").string();
  const std::string dir_b = (fs::temp_directory_path() / "chartmix_t2").string();

#ifdef _OPENMP
  omp_set_num_threads(2);
#endif
  const SynthReport a = synth_batch(50, 0, dir_a);
#ifdef _OPENMP
  omp_set_num_threads(1);
#endif
  const SynthReport b = synth_batch(50, 0, dir_b);
#ifdef _OPENMP
  omp_set_num_threads(2);
#endif

  CHECK(a.retention == 1.0);
  CHECK(a.retained == 50);
  CHECK(a.manifest_hash == b.manifest_hash);

  std::ifstream manifest(a.manifest_path);
  REQUIRE(manifest.good());
  std::string line;
  std::size_t records = 0;
  while (std::getline(manifest, line)) {
    const nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.at("instructions").size() == 3);
    CHECK(j.contains("id"));
    CHECK(j.contains("seed"));
    CHECK(j.contains("table"));
    CHECK(j.contains("spec"));
    CHECK(j.contains("code"));
    CHECK(j.contains("svg_path"));
    CHECK(fs::exists(fs::path(dir_a) / j.at("svg_path").get<std::string>()));
    ++records;
  }
  CHECK(records == 50);

  CHECK_THROWS_AS(synth_batch(0, 0, dir_a), UsageError);
}

TEST_CASE("attribute coverage over 10000 seeds") {
  std::set<ChartType> types;
  std::set<TitlePosition> positions;
  std::set<LegendLocation> locations;
  std::set<LineStyle> styles;
  std::set<MarkerShape> markers;
  std::set<double> widths, offsets;
  std::set<int> title_sizes, label_sizes;
  std::set<std::string> colors;
  std::set<BarOrientation> orientations;

  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const TableSample s = sample_table(seed);
    const ChartSpec spec = derive_spec(s.table, seed);
    types.insert(spec.chart_type);
    positions.insert(spec.title_position);
    if (spec.legend_show) locations.insert(spec.legend_location);
    title_sizes.insert(spec.title_font_size);
    label_sizes.insert(spec.label_font_size);
    for (const std::string& c : spec.palette) colors.insert(c);
    if (const auto* line = std::get_if<LineOptions>(&spec.options)) {
      styles.insert(line->style);
      markers.insert(line->marker);
    } else if (const auto* bar = std::get_if<BarOptions>(&spec.options)) {
      widths.insert(bar->width);
      orientations.insert(bar->orientation);
    } else if (const auto* pie = std::get_if<PieOptions>(&spec.options)) {
      for (double e : pie->explode) offsets.insert(e);
    } else if (const auto* scatter = std::get_if<ScatterOptions>(&spec.options)) {
      markers.insert(scatter->marker);
    }
  }
  CHECK(types.size() == 4);
  CHECK(positions.size() == 3);
  CHECK(locations.size() == 4);
  CHECK(styles.size() == 3);
  CHECK(markers.size() == 3);
  CHECK(widths.size() == bar_widths().size());
  CHECK(offsets.size() == explode_offsets().size());
  CHECK(title_sizes.size() == title_font_sizes().size());
  CHECK(label_sizes.size() == label_font_sizes().size());
  CHECK(colors.size() == palette_set().size());
  CHECK(orientations.size() == 2);
}

}  // TEST_SUITE
