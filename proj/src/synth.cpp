#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "chartmix/chartsynth.hpp"
#include "chartmix/errors.hpp"

namespace chartmix::synth {

using nlohmann::json;

namespace {

std::string quadruple_id(std::uint64_t seed) {
  std::ostringstream out;
  out << "q" << std::setw(8) << std::setfill('0') << seed;
  return out.str();
}

}  // namespace

Quadruple make_quadruple(std::uint64_t seed) {
  Quadruple q;
  q.seed = seed;
  q.id = quadruple_id(seed);
  TableSample sample = sample_table(seed);
  q.table = std::move(sample.table);
  q.range_lo = sample.range_lo;
  q.range_hi = sample.range_hi;
  q.spec = derive_spec(q.table, seed);
  q.code = gen_code(q.spec, q.table);
  Rendered r = render(q.spec, q.table);
  q.svg = std::move(r.svg);
  q.raster = std::move(r.raster);
  return q;
}

ValidationResult validate_quadruple(const Quadruple& q) {
  ParsedChart parsed;
  try {
    parsed = parse_code(q.code);
  } catch (const ChartScriptError&) {
    return {false, "parse-error"};
  }
  if (parsed.spec != q.spec || parsed.table != q.table)
    return {false, "round-trip-mismatch"};
  try {
    render(q.spec, q.table);
  } catch (const RenderError&) {
    return {false, "render-error"};
  }
  return {true, ""};
}

std::vector<InstructionPair> instruction_pairs(const Quadruple& q) {
  return {
      {"table", "Convert the chart to a CSV table.", table_to_csv(q.table)},
      {"json", "List the chart attributes as JSON.", spec_to_json_text(q.spec)},
      {"code", "Write a plotting script that reproduces the chart.", q.code.text},
  };
}

SynthReport synth_batch(std::size_t n, std::uint64_t base_seed,
                        const std::string& out_dir) {
  if (n < 1) throw UsageError("synth_batch: n must be >= 1");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "svg", ec);
  if (ec) throw IoError("synth_batch: cannot create " + out_dir + ": " + ec.message());

  struct Slot {
    bool valid = false;
    Quadruple quad;
  };
  std::vector<Slot> slots(n);

#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(i);
    try {
      Quadruple q = make_quadruple(seed);
      if (validate_quadruple(q).ok) {
        slots[i].quad = std::move(q);
        slots[i].valid = true;
      }
    } catch (const std::exception&) {
      // dropped: counts against retention
    }
  }

  const fs::path manifest_path = fs::path(out_dir) / "manifest.jsonl";
  std::ostringstream manifest;
  std::size_t retained = 0;
  for (const Slot& slot : slots) {  // seed order, independent of worker count
    if (!slot.valid) continue;
    const Quadruple& q = slot.quad;
    const std::string svg_rel = "svg/" + q.id + ".svg";
    {
      std::ofstream svg_out(fs::path(out_dir) / svg_rel, std::ios::binary);
      if (!svg_out) throw IoError("synth_batch: cannot write " + svg_rel);
      svg_out << q.svg;
    }
    json rec;
    rec["id"] = q.id;
    rec["seed"] = q.seed;
    rec["table"] = json::parse(table_to_json_text(q.table));
    rec["spec"] = json::parse(spec_to_json_text(q.spec));
    rec["code"] = q.code.text;
    rec["svg_path"] = svg_rel;
    json instr = json::array();
    for (const InstructionPair& p : instruction_pairs(q))
      instr.push_back({{"task", p.task},
                       {"instruction", p.instruction},
                       {"answer", p.answer}});
    rec["instructions"] = std::move(instr);
    manifest << rec.dump() << "\n";
    ++retained;
  }

  const std::string bytes = manifest.str();
  {
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw IoError("synth_batch: cannot write manifest");
    out << bytes;
  }

  SynthReport report;
  report.requested = n;
  report.retained = retained;
  report.retention = static_cast<double>(retained) / static_cast<double>(n);
  report.manifest_path = manifest_path.string();
  report.manifest_hash = fnv1a_hash(bytes);
  return report;
}

}  // namespace chartmix::synth
