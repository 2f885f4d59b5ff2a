// Acceptance suite: one line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "chartmix/chartsynth.hpp"
#include "chartmix/connector.hpp"
#include "chartmix/evalkit.hpp"
#include "chartmix/numkit.hpp"
#include "chartmix/rng.hpp"
#include "chartmix/toy_stack.hpp"
#include "chartmix/train.hpp"
#include "qa_fixture.hpp"

using namespace chartmix;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.uniform(-1.0, 1.0);
  return m;
}

MoEConnector random_gate_connector(std::size_t d_in, std::size_t d_h,
                                   std::size_t d_out, std::size_t l, std::size_t k,
                                   bool renorm, std::uint64_t seed) {
  MoEConnector c = make_connector(d_in, d_h, d_out, l, k, renorm, seed);
  Rng rng(substream_seed(seed, 99));
  c.gate.wg = random_matrix(d_in, l, rng);
  c.gate.bg = random_matrix(1, l, rng);
  return c;
}

// ---------------------------------------------------------------------------
// 1. gradient correctness
// ---------------------------------------------------------------------------
Outcome criterion_gradients() {
  const train::GradCheckSweep sweep = train::grad_check_sweep(20, 0);
  char buf[160];
  std::snprintf(buf, sizeof buf, "max rel err %.3g over %zu configs%s%s",
                sweep.max_rel_err, sweep.configs,
                sweep.worst.empty() ? "" : ", worst ", sweep.worst.c_str());
  return {sweep.passed && sweep.max_rel_err <= 1e-4, buf};
}

// ---------------------------------------------------------------------------
// 2. routing algebra
// ---------------------------------------------------------------------------
Outcome criterion_routing() {
  Rng rng(7001);
  std::string fail;

  // nonzero count, weight signs, sums
  for (int trial = 0; trial < 12 && fail.empty(); ++trial) {
    const std::size_t l = 1 + rng.index(6);
    const std::size_t k = 1 + rng.index(l);
    const bool renorm = trial % 2 == 0;
    MoEConnector c = random_gate_connector(5, 6, 4, l, k, renorm, 7100 + trial);
    const Matrix v = random_matrix(9, 5, rng);
    const MoEForward fwd = moe_forward(c, v);
    for (std::size_t i = 0; i < v.rows && fail.empty(); ++i) {
      std::size_t nonzero = 0;
      double sum = 0.0;
      for (std::size_t j = 0; j < l; ++j) {
        const double w = fwd.trace.weights.at(i, j);
        if (w < 0.0) fail = "negative weight";
        if (w != 0.0) ++nonzero;
        sum += w;
      }
      if (nonzero != std::min(k, l)) fail = "nonzero count != min(K, L)";
      if (renorm && std::abs(sum - 1.0) > 1e-9) fail = "renormalized sum off";
      if (!renorm && sum > 1.0 + 1e-12) fail = "faithful sum exceeds 1";
    }
  }

  // degenerate MoE == plain MLP
  if (fail.empty()) {
    MoEConnector c = random_gate_connector(6, 8, 5, 1, 1, true, 7200);
    const Matrix v = random_matrix(5, 6, rng);
    if (max_abs_diff(moe_forward(c, v).output, expert_forward(c.experts[0], v)) >
        1e-12)
      fail = "L=1,K=1 differs from the plain MLP";
  }

  // identical experts + renormalize collapse
  if (fail.empty()) {
    for (std::size_t k = 1; k <= 4 && fail.empty(); ++k) {
      MoEConnector c = random_gate_connector(5, 7, 4, 4, k, true, 7300 + k);
      for (std::size_t j = 1; j < 4; ++j) c.experts[j] = c.experts[0];
      const Matrix v = random_matrix(6, 5, rng);
      if (max_abs_diff(moe_forward(c, v).output,
                       expert_forward(c.experts[0], v)) > 1e-12)
        fail = "identical-expert collapse off at K=" + std::to_string(k);
    }
  }

  // permutation equivariance
  if (fail.empty()) {
    MoEConnector c = random_gate_connector(5, 6, 4, 4, 2, true, 7400);
    const Matrix v = random_matrix(7, 5, rng);
    const Matrix base = moe_forward(c, v).output;
    const std::vector<std::size_t> perm = {3, 1, 0, 2};
    MoEConnector p = c;
    for (std::size_t j = 0; j < 4; ++j) {
      p.experts[j] = c.experts[perm[j]];
      for (std::size_t d = 0; d < 5; ++d)
        p.gate.wg.at(d, j) = c.gate.wg.at(d, perm[j]);
      p.gate.bg.at(0, j) = c.gate.bg.at(0, perm[j]);
    }
    if (max_abs_diff(base, moe_forward(p, v).output) > 1e-12)
      fail = "permutation equivariance violated";
  }

  // K = L passthrough
  if (fail.empty()) {
    const std::vector<double> row = {0.5, 0.25, 0.125, 0.125};
    for (bool renorm : {false, true}) {
      const auto w = route_top_k(row, 4, renorm);
      for (std::size_t j = 0; j < 4; ++j)
        if (std::abs(w[j] - row[j]) > 1e-12) fail = "K=L passthrough off";
    }
  }

  return {fail.empty(), fail.empty() ? "all routing properties hold" : fail};
}

// ---------------------------------------------------------------------------
// 3 & 4. init ordering and bz-loss effect share one grid
// ---------------------------------------------------------------------------
struct GridResults {
  train::AblationSummary summary;
  std::vector<std::uint64_t> seeds;
  double seconds = 0.0;
};

GridResults run_grid() {
  GridResults grid;
  grid.seeds = {1, 2, 3, 4, 5};
  const auto t0 = std::chrono::steady_clock::now();
  train::AblationFixture fixture;  // the pinned toy SFT fixture
  grid.summary = train::ablation_compare(
      {train::InitStrategy::random, train::InitStrategy::co_upcycle,
       train::InitStrategy::diverse},
      grid.seeds, fixture, /*bz_variant=*/true);
  grid.seconds = seconds_since(t0);
  return grid;
}

Outcome criterion_init_ordering(const GridResults& grid) {
  using train::InitStrategy;
  const auto& s = grid.summary;
  const std::size_t wins_vs_random =
      s.loss_wins(InitStrategy::diverse, InitStrategy::random, grid.seeds);
  const std::size_t wins_vs_co =
      s.loss_wins(InitStrategy::diverse, InitStrategy::co_upcycle, grid.seeds);
  const double acc_diverse = s.mean_acc05(InitStrategy::diverse);
  const double acc_co = s.mean_acc05(InitStrategy::co_upcycle);
  const double acc_random = s.mean_acc05(InitStrategy::random);

  const bool passed = wins_vs_random >= 4 && wins_vs_co >= 3 &&
                      acc_diverse >= acc_co && acc_co >= acc_random;
  char buf[240];
  std::snprintf(buf, sizeof buf,
                "loss wins: diverse>random %zu/5, diverse>co-upcycle %zu/5; "
                "acc@0.05 means %.3f / %.3f / %.3f (diverse/co/random)",
                wins_vs_random, wins_vs_co, acc_diverse, acc_co, acc_random);
  return {passed, buf};
}

Outcome criterion_bz_effect(const GridResults& grid) {
  using train::InitStrategy;
  std::size_t chi_lower = 0, loss_not_lower = 0, have = 0;
  for (const std::uint64_t seed : grid.seeds) {
    const train::AblationRun* off =
        grid.summary.find(InitStrategy::diverse, seed, false);
    const train::AblationRun* on =
        grid.summary.find(InitStrategy::diverse, seed, true);
    if (off == nullptr || on == nullptr) continue;
    ++have;
    if (on->usage_chi_square < off->usage_chi_square) ++chi_lower;
    if (on->final_loss >= off->final_loss) ++loss_not_lower;
  }
  const bool passed = have == 5 && chi_lower >= 4 && loss_not_lower >= 3;
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "chi-square lower with bz in %zu/5 seeds; task loss not lower "
                "with bz in %zu/5 seeds",
                chi_lower, loss_not_lower);
  return {passed, buf};
}

// ---------------------------------------------------------------------------
// 5. parameter-overhead formula
// ---------------------------------------------------------------------------
Outcome criterion_param_overhead() {
  const std::size_t d_in = 32, d_h = 64, d_out = 48, l = 4;
  const MoEConnector c = make_connector(d_in, d_h, d_out, l, 2, true, 0);
  const ParamCounts counts = param_count(c);

  const std::size_t expert_hand = d_in * d_h + d_h + d_h * d_out + d_out;
  const std::size_t gate_hand = d_in * l + l;
  const std::size_t total_hand = l * expert_hand + gate_hand;
  const std::size_t overhead = counts.total - counts.per_expert;

  const bool passed = counts.per_expert == expert_hand &&
                      counts.gate == gate_hand && counts.total == total_hand &&
                      overhead == (l - 1) * expert_hand + gate_hand;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "total %zu (expert %zu, gate %zu), overhead over one expert %zu",
                counts.total, counts.per_expert, counts.gate, overhead);
  return {passed, buf};
}

// ---------------------------------------------------------------------------
// 6. pipeline integrity
// ---------------------------------------------------------------------------
Outcome criterion_pipeline() {
  namespace fs = std::filesystem;
  const std::string dir_a = (fs::temp_directory_path() / "chartmix_acc_a").string();
  const std::string dir_b = (fs::temp_directory_path() / "chartmix_acc_b").string();

#ifdef _OPENMP
  omp_set_num_threads(omp_get_max_threads());
#endif
  const synth::SynthReport a = synth::synth_batch(1000, 0, dir_a);
#ifdef _OPENMP
  omp_set_num_threads(1);
#endif
  const synth::SynthReport b = synth::synth_batch(1000, 0, dir_b);
#ifdef _OPENMP
  omp_set_num_threads(omp_get_max_threads());
#endif

  if (a.retention != 1.0)
    return {false, "retention " + std::to_string(a.retention)};
  if (a.manifest_hash != b.manifest_hash)
    return {false, "manifest hash differs across worker counts"};

  // round-trip + well-formed SVG on every quadruple
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const synth::Quadruple q = synth::make_quadruple(seed);
    const synth::ValidationResult v = synth::validate_quadruple(q);
    if (!v.ok) return {false, "seed " + std::to_string(seed) + ": " + v.reason};
    if (!synth::svg_well_formed(q.svg))
      return {false, "seed " + std::to_string(seed) + ": malformed svg"};
    ++checked;
  }

  // mutation: corrupt one digit of a color literal
  synth::Quadruple mutant = synth::make_quadruple(0);
  const std::size_t pos = mutant.code.text.find(" = #") + 4;
  mutant.code.text[pos] = mutant.code.text[pos] == 'f' ? '0' : 'f';
  if (synth::validate_quadruple(mutant).ok)
    return {false, "mutated color literal still validates"};

  char buf[160];
  std::snprintf(buf, sizeof buf,
                "retention 1.0, stable hash %016llx, %zu quadruples round-trip",
                static_cast<unsigned long long>(a.manifest_hash), checked);
  return {true, buf};
}

// ---------------------------------------------------------------------------
// 7. metric fidelity
// ---------------------------------------------------------------------------
Outcome criterion_metric() {
  const auto items = fixture_qa_items();
  const eval::RelaxedReport report =
      eval::score_report(items, {0.05, 0.10, 0.20}, false);
  const auto& fixture = hand_scored_fixture();
  for (std::size_t i = 0; i < fixture.size(); ++i)
    for (std::size_t m = 0; m < 3; ++m)
      if (report.items[i].verdict_per_margin[m] != fixture[i].verdicts[m])
        return {false, "fixture item " + std::to_string(i) + " mismatch"};

  // the verbose-range answer scores incorrect at every margin
  for (std::size_t m = 0; m < 3; ++m)
    if (report.items[4].verdict_per_margin[m])
      return {false, "range-string case scored correct"};

  Rng rng(7700);
  for (int set = 0; set < 100; ++set) {
    std::vector<eval::QAItem> perturbed;
    for (int i = 0; i < 20; ++i) {
      const double g = rng.uniform(-1000.0, 1000.0);
      const double delta = rng.uniform(-0.3, 0.3);
      perturbed.push_back({"p" + std::to_string(i), "", eval::format_value(g),
                           eval::format_value(g * (1.0 + delta))});
    }
    const eval::RelaxedReport r = eval::score_report(perturbed);
    if (!(r.accuracies[0] <= r.accuracies[1] && r.accuracies[1] <= r.accuracies[2]))
      return {false, "margin monotonicity violated on set " + std::to_string(set)};
  }
  return {true, "20 hand-scored verdicts exact, monotone on 100 perturbation sets"};
}

// ---------------------------------------------------------------------------
// 8. PoT interpreter
// ---------------------------------------------------------------------------
Outcome criterion_pot() {
  using eval::pot_eval;
  using eval::pot_parse;
  struct Case {
    const char* program;
    double expected;
  };
  const Case cases[] = {
      {"a=[1,2,3]\nanswer=sum(a)", 6.0},
      {"xs=[2,4,6,8]\nanswer=mean(xs)", 5.0},
      {"x=30\ny=60\nanswer=x/y", 0.5},
      {"v=[3,9,4]\nanswer=max(v)-min(v)", 6.0},
  };
  for (const Case& c : cases) {
    const double got = pot_eval(pot_parse(c.program));
    if (got != c.expected)
      return {false, std::string("program '") + c.program + "' returned " +
                         eval::format_value(got)};
  }

  // failing programs must not abort a scoring run
  std::vector<eval::QAItem> items = {
      {"1", "", "6", "a=[1,2,3]\nanswer=sum(a)"},
      {"2", "", "5", "answer=1/0"},
      {"3", "", "5", "answer=missing_var*2"},
  };
  const eval::RelaxedReport report = eval::score_report(items, {0.05}, true);
  if (!report.items[0].verdict_per_margin[0]) return {false, "valid program scored wrong"};
  if (report.items[1].verdict_per_margin[0] || report.items[2].verdict_per_margin[0])
    return {false, "failing program scored correct"};
  if (!report.items[1].pot_error || !report.items[2].pot_error)
    return {false, "runtime errors not reported"};
  return {true, "closed-form programs exact; error programs contained"};
}

// ---------------------------------------------------------------------------
// 9. routing-map export
// ---------------------------------------------------------------------------
std::size_t count_occurrences(const std::string& text, const std::string& needle) {
  std::size_t count = 0;
  for (std::size_t pos = text.find(needle); pos != std::string::npos;
       pos = text.find(needle, pos + needle.size()))
    ++count;
  return count;
}

Outcome criterion_route_map() {
  const train::StackConfig stack_cfg;  // canonical dims, grid 7
  const train::FrozenStack stack(stack_cfg);

  // fixture bar chart: first bar-type seed
  std::uint64_t bar_seed = 0;
  bool found = false;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const synth::TableSample s = synth::sample_table(seed);
    if (synth::derive_spec(s.table, seed).chart_type == synth::ChartType::bar) {
      bar_seed = seed;
      found = true;
      break;
    }
  }
  if (!found) return {false, "no bar chart seed found"};
  const synth::Quadruple chart = synth::make_quadruple(bar_seed);

  // small diverse-init training run
  train::AblationFixture fixture;
  fixture.align_pairs = 16;
  fixture.align_epochs = 6;
  fixture.qa_table = 24;
  fixture.qa_json = 8;
  fixture.qa_code = 8;
  fixture.schedule.phases = {{6, 5e-5, false}, {2, 1e-5, true}};

  const train::AlignTask table_task =
      train::build_align_task(train::AlignKind::table, fixture.align_pairs, 20000);
  const train::AlignTask json_task =
      train::build_align_task(train::AlignKind::json, fixture.align_pairs, 20016);
  const train::AlignTask code_task =
      train::build_align_task(train::AlignKind::code, fixture.align_pairs, 20032);
  const auto general = train::build_general_pairs(fixture.align_pairs, 30000);

  std::map<train::AlignKind, ExpertMLP> aligned;
  aligned.emplace(train::AlignKind::table,
                  train::align_connector(table_task, stack, 1, fixture.align_epochs,
                                         fixture.align_lr)
                      .connector);
  aligned.emplace(train::AlignKind::json,
                  train::align_connector(json_task, stack, 2, fixture.align_epochs,
                                         fixture.align_lr)
                      .connector);
  aligned.emplace(train::AlignKind::code,
                  train::align_connector(code_task, stack, 3, fixture.align_epochs,
                                         fixture.align_lr)
                      .connector);
  const ExpertMLP vanilla =
      train::vanilla_connector(general, stack, 4, fixture.align_epochs,
                               fixture.align_lr)
          .connector;

  MoEConnector connector = train::init_moe(train::InitStrategy::diverse, aligned,
                                           vanilla, 4, 2, true, 5);
  DecoderHead head = stack.head_template;
  const train::QADataset qa = train::build_qa_dataset(
      stack.encoder, fixture.qa_table, fixture.qa_json, fixture.qa_code, 40000);
  train::sft_run(connector, head, qa, fixture.schedule, false, 6);

  const std::string svg =
      train::route_map_svg(connector, stack.encoder, chart.raster, &chart.svg);
  if (!synth::svg_well_formed(svg)) return {false, "trained map svg malformed"};
  const std::size_t n = stack.encoder.token_count();
  if (count_occurrences(svg, "token-cell") != n)
    return {false, "trained map cell count != N"};
  if (count_occurrences(svg, "legend-entry") != 4)
    return {false, "legend does not have 4 entries"};

  // zero gate: every cell colored E0
  const MoEConnector zero_gate = make_connector(
      stack_cfg.d_in, stack_cfg.d_hidden, stack_cfg.d_out, 4, 2, true, 7);
  const std::string zero_svg =
      train::route_map_svg(zero_gate, stack.encoder, chart.raster, &chart.svg);
  if (!synth::svg_well_formed(zero_svg)) return {false, "zero-gate svg malformed"};
  const std::size_t e0_cells =
      count_occurrences(zero_svg, "fill=\"#4c78a8\" fill-opacity");
  if (e0_cells != n)
    return {false, "zero-gate map has " + std::to_string(e0_cells) +
                       " E0 cells, want " + std::to_string(n)};
  return {true, "trained map: 49 cells + 4-entry legend; zero gate all E0"};
}

}  // namespace

int main() {
  struct Row {
    int id;
    const char* name;
    Outcome outcome;
    double seconds;
  };
  std::vector<Row> rows;

  const auto timed = [&rows](int id, const char* name, auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome = fn();
    rows.push_back({id, name, std::move(outcome), seconds_since(t0)});
  };

  timed(1, "gradient correctness", criterion_gradients);
  timed(2, "routing algebra", criterion_routing);

  const GridResults grid = run_grid();
  rows.push_back({3, "init-ordering reproduction", criterion_init_ordering(grid),
                  grid.seconds});
  rows.push_back({4, "bz-loss effect", criterion_bz_effect(grid), 0.0});

  timed(5, "parameter-overhead formula", criterion_param_overhead);
  timed(6, "pipeline integrity", criterion_pipeline);
  timed(7, "metric fidelity", criterion_metric);
  timed(8, "pot interpreter", criterion_pot);
  timed(9, "routing-map export", criterion_route_map);

  bool all_passed = true;
  for (const Row& row : rows) {
    std::printf("[%s] criterion %d: %s (%.1f s) - %s\n",
                row.outcome.passed ? "PASS" : "FAIL", row.id, row.name,
                row.seconds, row.outcome.detail.c_str());
    all_passed = all_passed && row.outcome.passed;
  }
  std::printf("%s\n", all_passed ? "ACCEPTANCE: all criteria passed"
                                 : "ACCEPTANCE: failures present");
  return all_passed ? 0 : 1;
}
