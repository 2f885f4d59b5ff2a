#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "chartmix/connector.hpp"
#include "chartmix/matrix.hpp"
#include "chartmix/toy_stack.hpp"

namespace chartmix::train {

// Frozen-stack dimensions shared by every command. Seeds pin the frozen
// weights so runs are reproducible from configuration alone.
struct StackConfig {
  std::size_t d_in = 32;
  std::size_t d_hidden = 64;
  std::size_t d_out = 48;
  std::size_t embed_dim = 48;
  std::size_t hash_dim = 512;
  std::size_t lora_rank = 4;
  double lora_scale = 2.0;  // alpha/r with alpha = 8
  std::size_t grid = 7;     // N = 49 tokens
  std::uint64_t encoder_seed = 11;
  std::uint64_t embedder_seed = 12;
  std::uint64_t head_seed = 13;
};

struct FrozenStack {
  StackConfig config;
  PatchEncoder encoder;
  TextEmbedder embedder;
  DecoderHead head_template;  // fresh adapter (lora_b = 0)

  explicit FrozenStack(const StackConfig& cfg);
};

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

enum class AlignKind { table, json, code };
std::string align_kind_name(AlignKind kind);

struct AlignPair {
  Raster raster;
  std::string target;
};

struct AlignTask {
  AlignKind kind;
  std::vector<AlignPair> pairs;
};

// Chart rasters paired with the matching serialization of the quadruple.
AlignTask build_align_task(AlignKind kind, std::size_t count,
                           std::uint64_t base_seed);

// Non-chart rasters (noise / gradients / blobs) with caption stubs, for the
// vanilla connector.
std::vector<AlignPair> build_general_pairs(std::size_t count,
                                           std::uint64_t base_seed);

// Toy QA: regress [max value, min value, series count], normalized to [0, 1]
// by the generator's declared ranges.
struct QAExample {
  Matrix tokens;                 // N x D_in, precomputed through the frozen encoder
  std::array<double, 3> answer;  // normalized
};

struct QADataset {
  std::vector<QAExample> examples;
};

// Seed blocks are laid out table-first, then json, then code provenance.
QADataset build_qa_dataset(const PatchEncoder& encoder, std::size_t n_table,
                           std::size_t n_json, std::size_t n_code,
                           std::uint64_t base_seed);

// ---------------------------------------------------------------------------
// Alignment pre-training (only the single connector updates)
// ---------------------------------------------------------------------------

struct AlignResult {
  ExpertMLP connector;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::size_t steps = 0;
};

AlignResult align_connector(const AlignTask& task, const FrozenStack& stack,
                            std::uint64_t seed, std::size_t epochs, double lr,
                            std::size_t batch_size = 16);

AlignResult vanilla_connector(const std::vector<AlignPair>& general_pairs,
                              const FrozenStack& stack, std::uint64_t seed,
                              std::size_t epochs, double lr,
                              std::size_t batch_size = 16);

// ---------------------------------------------------------------------------
// Expert initialization
// ---------------------------------------------------------------------------

enum class InitStrategy { random, co_upcycle, diverse };
std::string init_strategy_name(InitStrategy strategy);

// diverse requires L = 4 and all three aligned connectors: E0 = vanilla,
// E1 = table, E2 = JSON, E3 = code. The gate starts at zero in every mode.
MoEConnector init_moe(InitStrategy strategy,
                      const std::map<AlignKind, ExpertMLP>& aligned,
                      const ExpertMLP& vanilla, std::size_t num_experts,
                      std::size_t top_k, bool renormalize, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Two-phase supervised fine-tuning with annealing
// ---------------------------------------------------------------------------

struct PhaseConfig {
  std::size_t epochs = 0;
  double peak_lr = 0.0;
  bool anneal_slice = false;  // train on the held-in anneal subset only
};

struct SftSchedule {
  std::vector<PhaseConfig> phases = {{30, 5e-5, false}, {10, 1e-5, true}};
  std::size_t batch_size = 16;
  double warmup_ratio = 0.01;
  double anneal_fraction = 0.25;  // leading fraction of the pool
  double balance_coeff = kDefaultBalanceCoeff;
  double z_coeff = kDefaultZLossCoeff;
};

struct TrainLogRecord {
  std::size_t step = 0;
  int phase = 0;
  double lr = 0.0;
  double loss = 0.0;          // task loss
  double balance_loss = 0.0;  // unweighted aux values (0 when bz off)
  double z_loss = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRecord> steps;
  std::vector<UsageStats> per_epoch_usage;
  std::uint64_t seed = 0;
  double final_loss = 0.0;  // mean task loss over the last epoch
};

// Invoked after each completed phase (for per-phase checkpoints).
using PhaseCallback =
    std::function<void(std::size_t phase, const MoEConnector&, const DecoderHead&)>;

// Trains gate + experts + adapter in place; encoder and head.w stay frozen.
TrainLog sft_run(MoEConnector& connector, DecoderHead& head,
                 const QADataset& data, const SftSchedule& schedule,
                 bool bz_loss, std::uint64_t seed,
                 const PhaseCallback& phase_done = {});

void write_train_log(const TrainLog& log, const std::string& path);

// Combined connector + adapter checkpoint written after each phase.
struct TrainingState {
  MoEConnector connector;
  DecoderHead head;
};
void save_training_state(const TrainingState& state, const std::string& path);
TrainingState load_training_state(const std::string& path);

// ---------------------------------------------------------------------------
// Evaluation on the toy QA task
// ---------------------------------------------------------------------------

std::array<double, 3> qa_predict(const MoEConnector& connector,
                                 const DecoderHead& head, const Matrix& tokens);

// Relaxed accuracy of the three per-chart answers at the given margin.
double qa_relaxed_accuracy(const MoEConnector& connector, const DecoderHead& head,
                           const QADataset& data, double margin);

// Top-K usage over a dataset with the trained router.
UsageStats eval_usage(const MoEConnector& connector, const QADataset& data);

// ---------------------------------------------------------------------------
// Ablation grid (init strategies and the bz-loss switch)
// ---------------------------------------------------------------------------

struct AblationFixture {
  std::size_t align_pairs = 64;
  std::size_t align_epochs = 30;
  double align_lr = 5e-5;
  std::size_t qa_table = 100;
  std::size_t qa_json = 40;
  std::size_t qa_code = 20;
  std::size_t eval_charts = 60;
  SftSchedule schedule;
  StackConfig stack;
  std::size_t num_experts = 4;
  std::size_t top_k = 2;
  bool renormalize = true;
  // seed-space layout for the data pools
  std::uint64_t align_data_seed = 20000;
  std::uint64_t general_data_seed = 30000;
  std::uint64_t qa_data_seed = 40000;
  std::uint64_t eval_data_seed = 50000;
};

struct AblationRun {
  InitStrategy strategy = InitStrategy::random;
  std::uint64_t seed = 0;
  bool bz_loss = false;
  double final_loss = 0.0;
  double acc05 = 0.0;
  double usage_chi_square = 0.0;  // top-K usage on the eval pool
};

struct AblationSummary {
  std::vector<AblationRun> runs;

  const AblationRun* find(InitStrategy strategy, std::uint64_t seed,
                          bool bz_loss) const;
  // #seeds where `a` reaches strictly lower final loss than `b` (bz off runs)
  std::size_t loss_wins(InitStrategy a, InitStrategy b,
                        const std::vector<std::uint64_t>& seeds) const;
  double mean_final_loss(InitStrategy strategy, bool bz_loss = false) const;
  double mean_acc05(InitStrategy strategy, bool bz_loss = false) const;
};

// Runs every (strategy, seed) cell with bz off, plus diverse-init cells with
// bz on for the usage comparison. Independent cells run in parallel.
AblationSummary ablation_compare(const std::vector<InitStrategy>& strategies,
                                 const std::vector<std::uint64_t>& seeds,
                                 const AblationFixture& fixture,
                                 bool bz_variant = true);

std::string ablation_to_json_text(const AblationSummary& summary);

// ---------------------------------------------------------------------------
// Gradient sweep over random connector + adapter configurations
// ---------------------------------------------------------------------------

struct GradCheckSweep {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst;
  std::size_t configs = 0;
  bool passed = false;
};

// Random L in {1,2,4,8}, K <= L, dims <= 64; loss runs tokens -> connector ->
// pooled adapter head -> three-channel regression, so gate, expert, and
// adapter gradients are all exercised. bz aux losses join every third config.
GradCheckSweep grad_check_sweep(std::size_t configs, std::uint64_t seed,
                                double rel_tol = 1e-4);

// ---------------------------------------------------------------------------
// Top-1 routing map (SVG overlay over the rendered chart)
// ---------------------------------------------------------------------------

// One colored cell per visual token (grid x grid), colored by the token's
// top-1 expert, plus a legend entry per expert. When chart_svg is non-null its
// drawing is inlined underneath the overlay.
std::string route_map_svg(const MoEConnector& connector,
                          const PatchEncoder& encoder, const Raster& raster,
                          const std::string* chart_svg);

}  // namespace chartmix::train
