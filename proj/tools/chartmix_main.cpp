#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "chartmix/chartsynth.hpp"
#include "chartmix/errors.hpp"
#include "chartmix/evalkit.hpp"
#include "chartmix/train.hpp"

namespace {

using namespace chartmix;
namespace fs = std::filesystem;

// JSON config files: one flat object; dotted keys address subcommand options
// ({"synth.n": 1000}). Unknown keys are rejected; flags take precedence.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    return "{}\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j = nlohmann::json::parse(input, nullptr, false);
    if (j.is_discarded()) throw CLI::FileError("config file is not valid JSON");
    if (!j.is_object()) throw CLI::FileError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      std::string name = key;
      for (std::size_t dot = name.find('.'); dot != std::string::npos;
           dot = name.find('.')) {
        item.parents.push_back(name.substr(0, dot));
        name = name.substr(dot + 1);
      }
      item.name = name;
      if (value.is_array()) {
        for (const auto& v : value)
          item.inputs.push_back(v.is_string() ? v.get<std::string>() : v.dump());
      } else if (value.is_string()) {
        item.inputs.push_back(value.get<std::string>());
      } else {
        item.inputs.push_back(value.dump());
      }
      items.push_back(std::move(item));
    }
    return items;
  }
};

void enable_config_file(CLI::App* cmd) {
  cmd->fallthrough();  // lets --config after a subcommand reach the root app
}

std::string default_out_dir() {
  const char* env = std::getenv("CHARTMIX_OUT_DIR");
  return env != nullptr ? env : "out";
}

void add_stack_options(CLI::App* cmd, train::StackConfig& stack) {
  cmd->add_option("--d-in", stack.d_in, "Connector input width");
  cmd->add_option("--d-hidden", stack.d_hidden, "Connector hidden width");
  cmd->add_option("--d-out", stack.d_out, "Connector output width");
  cmd->add_option("--grid", stack.grid, "Patch grid size (N = grid^2 tokens)");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

train::InitStrategy strategy_from_name(const std::string& name) {
  if (name == "random") return train::InitStrategy::random;
  if (name == "co_upcycle") return train::InitStrategy::co_upcycle;
  if (name == "diverse") return train::InitStrategy::diverse;
  throw ConfigError("unknown strategy '" + name + "'");
}

int run(int argc, char** argv) {
  CLI::App app{"Mixture-of-experts chart connector: synthesis, alignment, "
               "training, evaluation"};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file (flags override)");
  app.allow_config_extras(false);

  // ---- synth ----
  auto* synth_cmd = app.add_subcommand("synth", "Generate a quadruple batch");
  enable_config_file(synth_cmd);
  std::size_t synth_n = 1000;
  std::uint64_t synth_seed = 0;
  std::string synth_out = default_out_dir();
  synth_cmd->add_option("--n", synth_n, "Number of seeds to generate");
  synth_cmd->add_option("--seed", synth_seed, "Base seed");
  synth_cmd->add_option("--out", synth_out, "Output directory");

  // ---- align ----
  auto* align_cmd =
      app.add_subcommand("align", "Train one connector on an alignment task");
  enable_config_file(align_cmd);
  std::string align_kind = "table";
  std::size_t align_pairs = 64;
  std::uint64_t align_data_seed = 20000;
  std::uint64_t align_seed = 0;
  std::size_t align_epochs = 30;
  double align_lr = 5e-5;
  std::string align_out = "expert.json";
  train::StackConfig align_stack;
  align_cmd->add_option("--kind", align_kind,
                        "Alignment target: table, json, code, or vanilla");
  align_cmd->add_option("--pairs", align_pairs, "Dataset size");
  align_cmd->add_option("--data-seed", align_data_seed, "Chart pool base seed");
  align_cmd->add_option("--seed", align_seed, "Training seed");
  align_cmd->add_option("--epochs", align_epochs, "Training epochs");
  align_cmd->add_option("--lr", align_lr, "Peak learning rate");
  align_cmd->add_option("--out", align_out, "Expert checkpoint path");
  add_stack_options(align_cmd, align_stack);

  // ---- init ----
  auto* init_cmd = app.add_subcommand("init", "Assemble an MoE connector");
  enable_config_file(init_cmd);
  std::string init_strategy = "diverse";
  std::string init_table, init_json, init_code, init_vanilla;
  std::size_t init_experts = 4, init_k = 2;
  bool init_faithful = false;
  std::uint64_t init_seed = 0;
  std::string init_out = "connector.json";
  init_cmd->add_option("--strategy", init_strategy,
                       "random, co_upcycle, or diverse");
  init_cmd->add_option("--table", init_table, "Table-aligned expert checkpoint");
  init_cmd->add_option("--json", init_json, "JSON-aligned expert checkpoint");
  init_cmd->add_option("--code", init_code, "Code-aligned expert checkpoint");
  init_cmd->add_option("--vanilla", init_vanilla, "Vanilla expert checkpoint")
      ->required();
  init_cmd->add_option("--experts", init_experts, "Expert count L");
  init_cmd->add_option("--k", init_k, "Active experts per token");
  init_cmd->add_flag("--faithful-topk", init_faithful,
                     "Keep raw softmax weights after masking (no renormalization)");
  init_cmd->add_option("--seed", init_seed, "Seed for random initialization");
  init_cmd->add_option("--out", init_out, "Connector checkpoint path");

  // ---- sft ----
  auto* sft_cmd =
      app.add_subcommand("sft", "Two-phase supervised fine-tuning with annealing");
  enable_config_file(sft_cmd);
  std::string sft_connector;
  std::size_t sft_qa_table = 500, sft_qa_json = 200, sft_qa_code = 100;
  std::uint64_t sft_data_seed = 40000;
  std::uint64_t sft_seed = 0;
  std::size_t sft_epochs1 = 30, sft_epochs2 = 10;
  double sft_lr1 = 5e-5, sft_lr2 = 1e-5;
  std::size_t sft_batch = 16;
  bool sft_bz = false;
  std::string sft_out = default_out_dir();
  train::StackConfig sft_stack;
  sft_cmd->add_option("--connector", sft_connector, "Connector checkpoint")
      ->required();
  sft_cmd->add_option("--qa-table", sft_qa_table, "Table-provenance chart count");
  sft_cmd->add_option("--qa-json", sft_qa_json, "JSON-provenance chart count");
  sft_cmd->add_option("--qa-code", sft_qa_code, "Code-provenance chart count");
  sft_cmd->add_option("--data-seed", sft_data_seed, "QA pool base seed");
  sft_cmd->add_option("--seed", sft_seed, "Training seed");
  sft_cmd->add_option("--epochs1", sft_epochs1, "Phase 1 epochs");
  sft_cmd->add_option("--epochs2", sft_epochs2, "Phase 2 (annealing) epochs");
  sft_cmd->add_option("--lr1", sft_lr1, "Phase 1 peak learning rate");
  sft_cmd->add_option("--lr2", sft_lr2, "Phase 2 peak learning rate");
  sft_cmd->add_option("--batch", sft_batch, "Batch size");
  sft_cmd->add_flag("--bz-loss", sft_bz, "Add balance and router z losses");
  sft_cmd->add_option("--out", sft_out, "Output directory");
  add_stack_options(sft_cmd, sft_stack);

  // ---- ablate ----
  auto* ablate_cmd = app.add_subcommand(
      "ablate", "Init-strategy and bz-loss grid over several seeds");
  enable_config_file(ablate_cmd);
  std::vector<std::string> ablate_strategies = {"random", "co_upcycle", "diverse"};
  std::vector<std::uint64_t> ablate_seeds = {1, 2, 3, 4, 5};
  bool ablate_no_bz = false;
  std::string ablate_out;
  train::AblationFixture fixture;
  ablate_cmd->add_option("--strategies", ablate_strategies,
                         "Strategies to compare (>= 2)");
  ablate_cmd->add_option("--seeds", ablate_seeds, "Run seeds (>= 5)");
  ablate_cmd->add_flag("--no-bz-variant", ablate_no_bz,
                       "Skip the diverse + bz-loss runs");
  ablate_cmd->add_option("--align-pairs", fixture.align_pairs,
                         "Alignment pairs per task");
  ablate_cmd->add_option("--align-epochs", fixture.align_epochs, "Alignment epochs");
  ablate_cmd->add_option("--qa-table", fixture.qa_table, "QA pool: table block");
  ablate_cmd->add_option("--qa-json", fixture.qa_json, "QA pool: json block");
  ablate_cmd->add_option("--qa-code", fixture.qa_code, "QA pool: code block");
  ablate_cmd->add_option("--eval-charts", fixture.eval_charts, "Held-out eval charts");
  ablate_cmd->add_option("--out", ablate_out, "Summary JSON path");

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "Score a prediction file");
  enable_config_file(eval_cmd);
  std::string eval_predictions, eval_out;
  bool eval_pot = false;
  std::vector<double> eval_margins = {0.05, 0.10, 0.20};
  eval_cmd->add_option("--predictions", eval_predictions, "JSONL prediction file")
      ->required();
  eval_cmd->add_option("--out", eval_out, "Report JSON path");
  eval_cmd->add_flag("--pot", eval_pot, "Evaluate program-of-thought predictions");
  eval_cmd->add_option("--margins", eval_margins, "Relative margins");

  // ---- route-viz ----
  auto* viz_cmd =
      app.add_subcommand("route-viz", "Top-1 expert map over a chart raster");
  enable_config_file(viz_cmd);
  std::string viz_connector;
  std::uint64_t viz_chart_seed = 0;
  std::string viz_out = "route_map.svg";
  train::StackConfig viz_stack;
  viz_cmd->add_option("--connector", viz_connector, "Connector checkpoint")
      ->required();
  viz_cmd->add_option("--chart-seed", viz_chart_seed, "Chart seed to render");
  viz_cmd->add_option("--out", viz_out, "Output SVG path");
  add_stack_options(viz_cmd, viz_stack);

  // ---- grad-check ----
  auto* grad_cmd =
      app.add_subcommand("grad-check", "Finite-difference gradient sweep");
  enable_config_file(grad_cmd);
  std::size_t grad_configs = 20;
  std::uint64_t grad_seed = 0;
  grad_cmd->add_option("--configs", grad_configs, "Number of random configs");
  grad_cmd->add_option("--seed", grad_seed, "Sweep seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // bad flags and bad config files are config errors
  }

  if (synth_cmd->parsed()) {
    const synth::SynthReport report =
        synth::synth_batch(synth_n, synth_seed, synth_out);
    std::cout << "requested " << report.requested << ", retained "
              << report.retained << " (retention " << report.retention << ")\n"
              << "manifest " << report.manifest_path << "\n"
              << "manifest-hash " << std::hex << report.manifest_hash << std::dec
              << "\n";
    return 0;
  }

  if (align_cmd->parsed()) {
    const train::FrozenStack stack(align_stack);
    train::AlignResult result;
    if (align_kind == "vanilla") {
      const auto pairs = train::build_general_pairs(align_pairs, align_data_seed);
      result = train::vanilla_connector(pairs, stack, align_seed, align_epochs,
                                        align_lr);
    } else {
      train::AlignKind kind;
      if (align_kind == "table") kind = train::AlignKind::table;
      else if (align_kind == "json") kind = train::AlignKind::json;
      else if (align_kind == "code") kind = train::AlignKind::code;
      else throw ConfigError("unknown alignment kind '" + align_kind + "'");
      const auto task = train::build_align_task(kind, align_pairs, align_data_seed);
      result = train::align_connector(task, stack, align_seed, align_epochs,
                                      align_lr);
    }
    save_expert(result.connector, align_kind, align_out);
    std::cout << "kind " << align_kind << ", steps " << result.steps
              << ", loss " << result.initial_loss << " -> " << result.final_loss
              << "\nsaved " << align_out << "\n";
    return 0;
  }

  if (init_cmd->parsed()) {
    const ExpertMLP vanilla = load_expert(init_vanilla);
    std::map<train::AlignKind, ExpertMLP> aligned;
    if (!init_table.empty())
      aligned.emplace(train::AlignKind::table, load_expert(init_table));
    if (!init_json.empty())
      aligned.emplace(train::AlignKind::json, load_expert(init_json));
    if (!init_code.empty())
      aligned.emplace(train::AlignKind::code, load_expert(init_code));
    const MoEConnector connector =
        train::init_moe(strategy_from_name(init_strategy), aligned, vanilla,
                        init_experts, init_k, !init_faithful, init_seed);
    save_connector(connector, init_out);
    std::cout << "strategy " << init_strategy << ", L " << init_experts << ", K "
              << init_k << (init_faithful ? ", faithful top-k" : ", renormalized")
              << "\nsaved " << init_out << "\n";
    return 0;
  }

  if (sft_cmd->parsed()) {
    const train::FrozenStack stack(sft_stack);
    MoEConnector connector = load_connector(sft_connector);
    DecoderHead head = stack.head_template;
    const train::QADataset data = train::build_qa_dataset(
        stack.encoder, sft_qa_table, sft_qa_json, sft_qa_code, sft_data_seed);
    train::SftSchedule schedule;
    schedule.phases = {{sft_epochs1, sft_lr1, false}, {sft_epochs2, sft_lr2, true}};
    schedule.batch_size = sft_batch;

    fs::create_directories(sft_out);
    const auto checkpoint = [&](std::size_t phase, const MoEConnector& c,
                                const DecoderHead& h) {
      train::save_training_state(
          {c, h}, (fs::path(sft_out) / ("phase" + std::to_string(phase + 1) + ".json"))
                      .string());
    };
    const train::TrainLog log =
        train::sft_run(connector, head, data, schedule, sft_bz, sft_seed, checkpoint);
    train::write_train_log(log, (fs::path(sft_out) / "log.jsonl").string());
    std::cout << "steps " << log.steps.size() << ", final loss " << log.final_loss
              << "\noutputs in " << sft_out << "\n";
    return 0;
  }

  if (ablate_cmd->parsed()) {
    std::vector<train::InitStrategy> strategies;
    for (const std::string& name : ablate_strategies)
      strategies.push_back(strategy_from_name(name));
    const train::AblationSummary summary =
        train::ablation_compare(strategies, ablate_seeds, fixture, !ablate_no_bz);
    for (const train::InitStrategy s : strategies)
      std::cout << train::init_strategy_name(s)
                << ": mean final loss " << summary.mean_final_loss(s)
                << ", mean acc@0.05 " << summary.mean_acc05(s) << "\n";
    for (std::size_t a = 0; a < strategies.size(); ++a)
      for (std::size_t b = 0; b < strategies.size(); ++b)
        if (a != b)
          std::cout << train::init_strategy_name(strategies[a]) << " beats "
                    << train::init_strategy_name(strategies[b]) << " in "
                    << summary.loss_wins(strategies[a], strategies[b], ablate_seeds)
                    << "/" << ablate_seeds.size() << " seeds\n";
    if (!ablate_out.empty())
      write_text(ablate_out, train::ablation_to_json_text(summary));
    return 0;
  }

  if (eval_cmd->parsed()) {
    const auto items = eval::read_prediction_file(eval_predictions);
    const eval::RelaxedReport report =
        eval::score_report(items, eval_margins, eval_pot);
    for (std::size_t m = 0; m < report.margins.size(); ++m)
      std::cout << "acc@" << report.margins[m] << " " << report.accuracies[m]
                << "\n";
    if (!eval_out.empty()) write_text(eval_out, eval::report_to_json_text(report));
    return 0;
  }

  if (viz_cmd->parsed()) {
    const MoEConnector connector = load_connector(viz_connector);
    const train::FrozenStack stack(viz_stack);
    const synth::Quadruple q = synth::make_quadruple(viz_chart_seed);
    const std::string svg =
        train::route_map_svg(connector, stack.encoder, q.raster, &q.svg);
    write_text(viz_out, svg);
    std::cout << "saved " << viz_out << "\n";
    return 0;
  }

  if (grad_cmd->parsed()) {
    const train::GradCheckSweep sweep =
        train::grad_check_sweep(grad_configs, grad_seed);
    std::cout << "configs " << sweep.configs << ", max rel err "
              << sweep.max_rel_err << ", max abs err " << sweep.max_abs_err;
    if (!sweep.worst.empty()) std::cout << " (worst: " << sweep.worst << ")";
    std::cout << "\n" << (sweep.passed ? "PASS" : "FAIL") << "\n";
    if (!sweep.passed) throw NumericError("gradient check failed");
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
