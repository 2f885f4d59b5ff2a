#include "chartmix/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "chartmix/chartsynth.hpp"
#include "chartmix/errors.hpp"
#include "chartmix/evalkit.hpp"
#include "chartmix/numkit.hpp"
#include "chartmix/rng.hpp"

namespace chartmix::train {

using nlohmann::json;

FrozenStack::FrozenStack(const StackConfig& cfg)
    : config(cfg),
      encoder(cfg.grid, cfg.d_in, cfg.encoder_seed),
      embedder(cfg.hash_dim, cfg.embed_dim, cfg.embedder_seed),
      head_template(DecoderHead::create(cfg.d_out, cfg.embed_dim, cfg.lora_rank,
                                        cfg.lora_scale, cfg.head_seed)) {}

std::string align_kind_name(AlignKind kind) {
  switch (kind) {
    case AlignKind::table: return "table";
    case AlignKind::json: return "json";
    case AlignKind::code: return "code";
  }
  return "?";
}

std::string init_strategy_name(InitStrategy strategy) {
  switch (strategy) {
    case InitStrategy::random: return "random";
    case InitStrategy::co_upcycle: return "co_upcycle";
    case InitStrategy::diverse: return "diverse";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

AlignTask build_align_task(AlignKind kind, std::size_t count,
                           std::uint64_t base_seed) {
  AlignTask task;
  task.kind = kind;
  task.pairs.resize(count);
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < static_cast<long long>(count); ++i) {
    synth::Quadruple q = synth::make_quadruple(base_seed + static_cast<std::uint64_t>(i));
    std::string target;
    switch (kind) {
      case AlignKind::table: target = synth::table_to_csv(q.table); break;
      case AlignKind::json: target = synth::spec_to_json_text(q.spec); break;
      case AlignKind::code: target = q.code.text; break;
    }
    task.pairs[i] = AlignPair{std::move(q.raster), std::move(target)};
  }
  return task;
}

namespace {

const std::vector<std::string> kToneWords = {"red",  "orange", "green",
                                             "blue", "violet", "gray"};

std::array<std::uint8_t, 3> tone_color(std::size_t tone, Rng& rng) {
  static const std::array<std::array<std::uint8_t, 3>, 6> bases = {{
      {200, 60, 60}, {230, 140, 40}, {70, 160, 80},
      {60, 90, 200}, {140, 70, 180}, {120, 120, 120},
  }};
  auto c = bases[tone];
  for (auto& ch : c)
    ch = static_cast<std::uint8_t>(
        std::clamp<int>(static_cast<int>(ch) + static_cast<int>(rng.uniform_int(-30, 30)), 0, 255));
  return c;
}

}  // namespace

std::vector<AlignPair> build_general_pairs(std::size_t count,
                                           std::uint64_t base_seed) {
  std::vector<AlignPair> pairs(count);
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < static_cast<long long>(count); ++i) {
    Rng rng(substream_seed(base_seed + static_cast<std::uint64_t>(i), 7));
    Raster img(490, 490);
    std::string caption;
    const auto kind = rng.uniform_int(0, 2);
    if (kind == 0) {
      // per-pixel noise around a tone
      const std::size_t tone = rng.index(kToneWords.size());
      const auto base = tone_color(tone, rng);
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          std::array<std::uint8_t, 3> c;
          for (int ch = 0; ch < 3; ++ch)
            c[ch] = static_cast<std::uint8_t>(std::clamp<int>(
                static_cast<int>(base[ch]) + static_cast<int>(rng.uniform_int(-60, 60)), 0, 255));
          img.set_pixel(x, y, c);
        }
      caption = "grainy noise texture in " + kToneWords[tone] + " tones";
    } else if (kind == 1) {
      const std::size_t t0 = rng.index(kToneWords.size());
      const std::size_t t1 = rng.index(kToneWords.size());
      const auto c0 = tone_color(t0, rng);
      const auto c1 = tone_color(t1, rng);
      const bool horizontal = rng.uniform_int(0, 1) == 1;
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          const double t = horizontal ? static_cast<double>(x) / (img.width - 1)
                                      : static_cast<double>(y) / (img.height - 1);
          std::array<std::uint8_t, 3> c;
          for (int ch = 0; ch < 3; ++ch)
            c[ch] = static_cast<std::uint8_t>(
                std::lround(c0[ch] + t * (static_cast<double>(c1[ch]) - c0[ch])));
          img.set_pixel(x, y, c);
        }
      caption = std::string("smooth ") + (horizontal ? "horizontal" : "vertical") +
                " gradient from " + kToneWords[t0] + " to " + kToneWords[t1];
    } else {
      const std::size_t tone = rng.index(kToneWords.size());
      const auto fg = tone_color(tone, rng);
      const auto blobs = rng.uniform_int(3, 9);
      for (std::int64_t b = 0; b < blobs; ++b) {
        const double cx = rng.uniform(40.0, 450.0);
        const double cy = rng.uniform(40.0, 450.0);
        const double r = rng.uniform(20.0, 80.0);
        const int x0 = static_cast<int>(cx - r), x1 = static_cast<int>(cx + r);
        const int y0 = static_cast<int>(cy - r), y1 = static_cast<int>(cy + r);
        for (int y = y0; y <= y1; ++y)
          for (int x = x0; x <= x1; ++x) {
            const double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= r * r) img.set_pixel(x, y, fg);
          }
      }
      caption = "scattered " + kToneWords[tone] + " blobs on a white background";
    }
    pairs[i] = AlignPair{std::move(img), std::move(caption)};
  }
  return pairs;
}

QADataset build_qa_dataset(const PatchEncoder& encoder, std::size_t n_table,
                           std::size_t n_json, std::size_t n_code,
                           std::uint64_t base_seed) {
  const std::size_t total = n_table + n_json + n_code;
  QADataset data;
  data.examples.resize(total);
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < static_cast<long long>(total); ++i) {
    synth::Quadruple q = synth::make_quadruple(base_seed + static_cast<std::uint64_t>(i));
    double vmax = q.table.values[0][0], vmin = q.table.values[0][0];
    for (const auto& row : q.table.values)
      for (double v : row) {
        vmax = std::max(vmax, v);
        vmin = std::min(vmin, v);
      }
    const double span = q.range_hi - q.range_lo;
    QAExample ex;
    ex.tokens = encoder.encode(q.raster);
    ex.answer = {(vmax - q.range_lo) / span, (vmin - q.range_lo) / span,
                 static_cast<double>(q.table.series()) / 4.0};
    data.examples[i] = std::move(ex);
  }
  return data;
}

// ---------------------------------------------------------------------------
// Alignment pre-training
// ---------------------------------------------------------------------------

namespace {

struct EncodedPair {
  Matrix tokens;  // N x D_in
  Matrix target;  // 1 x E
};

double align_dataset_loss(const ExpertMLP& connector, const DecoderHead& head,
                          const std::vector<EncodedPair>& pairs) {
  double total = 0.0;
  for (const EncodedPair& p : pairs) {
    const Matrix out = expert_forward(connector, p.tokens);
    const Matrix pred = head.decode_frozen(mean_pool_rows(out));
    total += mse_loss(pred, p.target);
  }
  return total / static_cast<double>(pairs.size());
}

void axpy(Matrix& acc, const Matrix& g, double alpha) {
  for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += alpha * g.data[i];
}

}  // namespace

AlignResult align_connector(const AlignTask& task, const FrozenStack& stack,
                            std::uint64_t seed, std::size_t epochs, double lr,
                            std::size_t batch_size) {
  return vanilla_connector(task.pairs, stack, seed, epochs, lr, batch_size);
}

AlignResult vanilla_connector(const std::vector<AlignPair>& general_pairs,
                              const FrozenStack& stack, std::uint64_t seed,
                              std::size_t epochs, double lr,
                              std::size_t batch_size) {
  if (general_pairs.empty()) throw UsageError("alignment: empty dataset");
  if (batch_size < 1) throw ConfigError("alignment: batch size must be >= 1");

  std::vector<EncodedPair> pairs(general_pairs.size());
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < static_cast<long long>(general_pairs.size()); ++i)
    pairs[i] = EncodedPair{stack.encoder.encode(general_pairs[i].raster),
                           stack.embedder.embed(general_pairs[i].target)};

  const std::size_t d_in = stack.config.d_in;
  const std::size_t d_hidden = stack.config.d_hidden;
  const std::size_t d_out = stack.config.d_out;

  Rng rng(substream_seed(seed, 100));
  AlignResult result;
  result.connector = ExpertMLP::random(d_in, d_hidden, d_out, rng);

  const DecoderHead& head = stack.head_template;
  result.initial_loss = align_dataset_loss(result.connector, head, pairs);

  const std::size_t steps_per_epoch =
      (pairs.size() + batch_size - 1) / batch_size;
  const std::size_t total_steps = epochs * steps_per_epoch;

  AdamWState opt_state;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const std::vector<std::size_t> order = rng.permutation(pairs.size());
    for (std::size_t b = 0; b < pairs.size(); b += batch_size) {
      const std::size_t b_end = std::min(pairs.size(), b + batch_size);
      const double inv = 1.0 / static_cast<double>(b_end - b);

      ExpertMLP& c = result.connector;
      ExpertGrads acc{Matrix(c.w1.rows, c.w1.cols), Matrix(1, c.b1.cols),
                      Matrix(c.w2.rows, c.w2.cols), Matrix(1, c.b2.cols)};
      for (std::size_t k = b; k < b_end; ++k) {
        const EncodedPair& p = pairs[order[k]];
        ExpertCache cache;
        const Matrix out = expert_forward(c, p.tokens, &cache);
        const Matrix pooled = mean_pool_rows(out);
        const Matrix pred = head.decode_frozen(pooled);
        const Matrix dpred = mse_loss_grad(pred, p.target);
        const Matrix dpooled = matmul(dpred, head.w.transposed());
        const Matrix dout = mean_pool_rows_backward(dpooled, out.rows);
        const ExpertGrads g = expert_backward(c, p.tokens, cache, dout);
        axpy(acc.dw1, g.dw1, inv);
        axpy(acc.db1, g.db1, inv);
        axpy(acc.dw2, g.dw2, inv);
        axpy(acc.db2, g.db2, inv);
      }
      AdamWConfig cfg;
      cfg.lr = cosine_lr(step, total_steps, lr);
      adamw_step({&c.w1, &c.b1, &c.w2, &c.b2},
                 {&acc.dw1, &acc.db1, &acc.dw2, &acc.db2}, opt_state, cfg);
      ++step;
    }
  }
  result.steps = step;
  result.final_loss = align_dataset_loss(result.connector, head, pairs);
  return result;
}

// ---------------------------------------------------------------------------
// Expert initialization
// ---------------------------------------------------------------------------

MoEConnector init_moe(InitStrategy strategy,
                      const std::map<AlignKind, ExpertMLP>& aligned,
                      const ExpertMLP& vanilla, std::size_t num_experts,
                      std::size_t top_k, bool renormalize, std::uint64_t seed) {
  if (num_experts < 1) throw ConfigError("init_moe: need at least one expert");
  if (top_k < 1 || top_k > num_experts)
    throw ConfigError("init_moe: top_k must be in [1, L]");

  MoEConnector c;
  c.top_k = top_k;
  c.renormalize = renormalize;

  switch (strategy) {
    case InitStrategy::random: {
      for (std::size_t j = 0; j < num_experts; ++j) {
        Rng rng(substream_seed(seed, 200 + j));
        c.experts.push_back(ExpertMLP::random(vanilla.d_in(), vanilla.d_hidden(),
                                              vanilla.d_out(), rng));
      }
      break;
    }
    case InitStrategy::co_upcycle: {
      for (std::size_t j = 0; j < num_experts; ++j) c.experts.push_back(vanilla);
      break;
    }
    case InitStrategy::diverse: {
      if (num_experts != 4)
        throw ConfigError("init_moe: diverse initialization requires L = 4");
      const AlignKind order[3] = {AlignKind::table, AlignKind::json, AlignKind::code};
      c.experts.push_back(vanilla);  // E0
      for (AlignKind kind : order) {
        auto it = aligned.find(kind);
        if (it == aligned.end())
          throw ConfigError("init_moe: missing aligned connector for " +
                            align_kind_name(kind));
        c.experts.push_back(it->second);
      }
      break;
    }
  }
  c.gate.wg = Matrix(c.experts.front().d_in(), num_experts);
  c.gate.bg = Matrix(1, num_experts);
  c.expert_labels = default_expert_labels(num_experts);
  return c;
}

// ---------------------------------------------------------------------------
// Supervised fine-tuning
// ---------------------------------------------------------------------------

namespace {

struct SftGradients {
  MoEGrads moe;
  DecoderHeadGrads head;

  static SftGradients zeros(const MoEConnector& c, const DecoderHead& h) {
    SftGradients g;
    g.moe.dwg = Matrix(c.gate.wg.rows, c.gate.wg.cols);
    g.moe.dbg = Matrix(1, c.gate.bg.cols);
    for (const ExpertMLP& e : c.experts)
      g.moe.experts.push_back(ExpertGrads{Matrix(e.w1.rows, e.w1.cols),
                                          Matrix(1, e.b1.cols),
                                          Matrix(e.w2.rows, e.w2.cols),
                                          Matrix(1, e.b2.cols)});
    g.head.dlora_a = Matrix(h.lora_a.rows, h.lora_a.cols);
    g.head.dlora_b = Matrix(h.lora_b.rows, h.lora_b.cols);
    return g;
  }

  void add(const MoEGrads& moe_g, const DecoderHeadGrads& head_g, double alpha) {
    axpy(moe.dwg, moe_g.dwg, alpha);
    axpy(moe.dbg, moe_g.dbg, alpha);
    for (std::size_t j = 0; j < moe.experts.size(); ++j) {
      axpy(moe.experts[j].dw1, moe_g.experts[j].dw1, alpha);
      axpy(moe.experts[j].db1, moe_g.experts[j].db1, alpha);
      axpy(moe.experts[j].dw2, moe_g.experts[j].dw2, alpha);
      axpy(moe.experts[j].db2, moe_g.experts[j].db2, alpha);
    }
    axpy(head.dlora_a, head_g.dlora_a, alpha);
    axpy(head.dlora_b, head_g.dlora_b, alpha);
  }
};

// Task loss for one example plus gradients through connector and adapter.
struct ExampleResult {
  double loss = 0.0;
  AuxLosses aux;
  RoutingTrace trace;
};

ExampleResult sft_example(MoEConnector& connector, DecoderHead& head,
                          const QAExample& ex, bool bz_loss, double balance_coeff,
                          double z_coeff, MoEGrads* moe_out,
                          DecoderHeadGrads* head_out) {
  ExampleResult res;
  MoEForward fwd = moe_forward(connector, ex.tokens);
  const Matrix pooled = mean_pool_rows(fwd.output);
  const Matrix decoded = head.decode(pooled);  // 1 x E

  // answer readout: the first three output channels
  Matrix pred(1, 3);
  for (std::size_t k = 0; k < 3; ++k) pred.at(0, k) = decoded.at(0, k);
  Matrix target(1, 3);
  for (std::size_t k = 0; k < 3; ++k) target.at(0, k) = ex.answer[k];
  res.loss = mse_loss(pred, target);
  res.aux = aux_losses(fwd.trace);

  if (moe_out != nullptr) {
    const Matrix dpred = mse_loss_grad(pred, target);
    Matrix ddecoded(1, decoded.cols);
    for (std::size_t k = 0; k < 3; ++k) ddecoded.at(0, k) = dpred.at(0, k);
    Matrix dpooled;
    *head_out = head_backward(head, pooled, ddecoded, &dpooled);
    const Matrix dout = mean_pool_rows_backward(dpooled, fwd.output.rows);
    if (bz_loss) {
      const AuxLossGrads aux_g =
          aux_loss_grads(fwd.trace, balance_coeff, z_coeff);
      *moe_out = moe_backward(connector, ex.tokens, fwd, dout, &aux_g.dprobs,
                              &aux_g.dlogits);
    } else {
      *moe_out = moe_backward(connector, ex.tokens, fwd, dout);
    }
  }
  res.trace = std::move(fwd.trace);
  return res;
}

}  // namespace

TrainLog sft_run(MoEConnector& connector, DecoderHead& head,
                 const QADataset& data, const SftSchedule& schedule,
                 bool bz_loss, std::uint64_t seed,
                 const PhaseCallback& phase_done) {
  if (data.examples.empty()) throw UsageError("sft_run: empty dataset");
  TrainLog log;
  log.seed = seed;

  const std::size_t n = data.examples.size();
  const std::size_t anneal_n = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(schedule.anneal_fraction *
                                            static_cast<double>(n))));

  Rng rng(substream_seed(seed, 300));
  std::size_t global_step = 0;
  double last_epoch_loss = 0.0;
  std::size_t last_epoch_steps = 0;

  for (std::size_t phase_idx = 0; phase_idx < schedule.phases.size(); ++phase_idx) {
    const PhaseConfig& phase = schedule.phases[phase_idx];
    if (phase.epochs == 0) continue;
    const std::size_t pool_n = phase.anneal_slice ? anneal_n : n;
    const std::size_t steps_per_epoch =
        (pool_n + schedule.batch_size - 1) / schedule.batch_size;
    const std::size_t total_steps = phase.epochs * steps_per_epoch;

    AdamWState opt_state;  // fresh optimizer per phase
    std::size_t phase_step = 0;

    for (std::size_t epoch = 0; epoch < phase.epochs; ++epoch) {
      std::vector<std::size_t> order = rng.permutation(pool_n);
      std::vector<RoutingTrace> epoch_traces;
      epoch_traces.reserve(pool_n);
      double epoch_loss = 0.0;
      std::size_t epoch_steps = 0;

      for (std::size_t b = 0; b < pool_n; b += schedule.batch_size) {
        const std::size_t b_end = std::min(pool_n, b + schedule.batch_size);
        const double inv = 1.0 / static_cast<double>(b_end - b);

        SftGradients acc = SftGradients::zeros(connector, head);
        double batch_loss = 0.0, batch_balance = 0.0, batch_z = 0.0;
        for (std::size_t k = b; k < b_end; ++k) {
          const QAExample& ex = data.examples[order[k]];
          MoEGrads moe_g;
          DecoderHeadGrads head_g;
          ExampleResult r = sft_example(connector, head, ex, bz_loss,
                                        schedule.balance_coeff, schedule.z_coeff,
                                        &moe_g, &head_g);
          acc.add(moe_g, head_g, inv);
          batch_loss += r.loss * inv;
          batch_balance += r.aux.balance * inv;
          batch_z += r.aux.z * inv;
          epoch_traces.push_back(std::move(r.trace));
        }
        if (!std::isfinite(batch_loss))
          throw NumericError("sft_run: non-finite loss at step " +
                             std::to_string(global_step));

        std::vector<Matrix*> params = {&connector.gate.wg, &connector.gate.bg};
        std::vector<const Matrix*> grads = {&acc.moe.dwg, &acc.moe.dbg};
        for (std::size_t j = 0; j < connector.experts.size(); ++j) {
          ExpertMLP& e = connector.experts[j];
          ExpertGrads& g = acc.moe.experts[j];
          params.insert(params.end(), {&e.w1, &e.b1, &e.w2, &e.b2});
          grads.insert(grads.end(), {&g.dw1, &g.db1, &g.dw2, &g.db2});
        }
        params.insert(params.end(), {&head.lora_a, &head.lora_b});
        grads.insert(grads.end(), {&acc.head.dlora_a, &acc.head.dlora_b});

        AdamWConfig cfg;
        cfg.lr = cosine_lr(phase_step, total_steps, phase.peak_lr,
                           schedule.warmup_ratio);
        adamw_step(params, grads, opt_state, cfg);

        log.steps.push_back(TrainLogRecord{global_step,
                                           static_cast<int>(phase_idx), cfg.lr,
                                           batch_loss,
                                           bz_loss ? batch_balance : 0.0,
                                           bz_loss ? batch_z : 0.0});
        epoch_loss += batch_loss;
        ++epoch_steps;
        ++phase_step;
        ++global_step;
      }
      log.per_epoch_usage.push_back(usage_stats(epoch_traces));
      last_epoch_loss = epoch_loss / static_cast<double>(epoch_steps);
      last_epoch_steps = epoch_steps;
    }
    if (phase_done) phase_done(phase_idx, connector, head);
  }
  log.final_loss = last_epoch_steps > 0 ? last_epoch_loss : 0.0;
  return log;
}

void write_train_log(const TrainLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write train log: " + path);
  for (const TrainLogRecord& r : log.steps) {
    json j;
    j["step"] = r.step;
    j["phase"] = r.phase;
    j["lr"] = r.lr;
    j["loss"] = r.loss;
    j["balance_loss"] = r.balance_loss;
    j["z_loss"] = r.z_loss;
    out << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// QA evaluation
// ---------------------------------------------------------------------------

std::array<double, 3> qa_predict(const MoEConnector& connector,
                                 const DecoderHead& head, const Matrix& tokens) {
  const MoEForward fwd = moe_forward(connector, tokens);
  const Matrix decoded = head.decode(mean_pool_rows(fwd.output));
  return {decoded.at(0, 0), decoded.at(0, 1), decoded.at(0, 2)};
}

double qa_relaxed_accuracy(const MoEConnector& connector, const DecoderHead& head,
                           const QADataset& data, double margin) {
  if (data.examples.empty()) throw UsageError("qa_relaxed_accuracy: empty dataset");
  std::vector<eval::QAItem> items;
  static const char* kQuestions[3] = {
      "What is the normalized maximum series value?",
      "What is the normalized minimum series value?",
      "What fraction of the maximum series count is used?"};
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    const auto pred = qa_predict(connector, head, data.examples[i].tokens);
    for (std::size_t k = 0; k < 3; ++k) {
      eval::QAItem item;
      item.id = "c" + std::to_string(i) + "-a" + std::to_string(k);
      item.question = kQuestions[k];
      item.ground_truth = eval::format_value(data.examples[i].answer[k]);
      item.prediction = eval::format_value(pred[k]);
      items.push_back(std::move(item));
    }
  }
  const eval::RelaxedReport report = eval::score_report(items, {margin}, false);
  return report.accuracies[0];
}

UsageStats eval_usage(const MoEConnector& connector, const QADataset& data) {
  if (data.examples.empty()) throw UsageError("eval_usage: empty dataset");
  std::vector<RoutingTrace> traces;
  traces.reserve(data.examples.size());
  for (const QAExample& ex : data.examples)
    traces.push_back(moe_forward(connector, ex.tokens).trace);
  return usage_stats(traces);
}

// ---------------------------------------------------------------------------
// Ablation grid
// ---------------------------------------------------------------------------

const AblationRun* AblationSummary::find(InitStrategy strategy,
                                         std::uint64_t seed, bool bz_loss) const {
  for (const AblationRun& r : runs)
    if (r.strategy == strategy && r.seed == seed && r.bz_loss == bz_loss) return &r;
  return nullptr;
}

std::size_t AblationSummary::loss_wins(InitStrategy a, InitStrategy b,
                                       const std::vector<std::uint64_t>& seeds) const {
  std::size_t wins = 0;
  for (std::uint64_t seed : seeds) {
    const AblationRun* ra = find(a, seed, false);
    const AblationRun* rb = find(b, seed, false);
    if (ra != nullptr && rb != nullptr && ra->final_loss < rb->final_loss) ++wins;
  }
  return wins;
}

double AblationSummary::mean_final_loss(InitStrategy strategy, bool bz_loss) const {
  double sum = 0.0;
  std::size_t count = 0;
  for (const AblationRun& r : runs)
    if (r.strategy == strategy && r.bz_loss == bz_loss) {
      sum += r.final_loss;
      ++count;
    }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

double AblationSummary::mean_acc05(InitStrategy strategy, bool bz_loss) const {
  double sum = 0.0;
  std::size_t count = 0;
  for (const AblationRun& r : runs)
    if (r.strategy == strategy && r.bz_loss == bz_loss) {
      sum += r.acc05;
      ++count;
    }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

AblationSummary ablation_compare(const std::vector<InitStrategy>& strategies,
                                 const std::vector<std::uint64_t>& seeds,
                                 const AblationFixture& fixture, bool bz_variant) {
  if (strategies.size() < 2)
    throw ConfigError("ablation_compare: need at least 2 strategies");
  if (seeds.size() < 5) throw ConfigError("ablation_compare: need at least 5 seeds");

  const FrozenStack stack(fixture.stack);

  // Shared pools: charts and captions do not depend on the run seed.
  const AlignTask table_task =
      build_align_task(AlignKind::table, fixture.align_pairs, fixture.align_data_seed);
  const AlignTask json_task =
      build_align_task(AlignKind::json, fixture.align_pairs,
                       fixture.align_data_seed + fixture.align_pairs);
  const AlignTask code_task =
      build_align_task(AlignKind::code, fixture.align_pairs,
                       fixture.align_data_seed + 2 * fixture.align_pairs);
  const std::vector<AlignPair> general =
      build_general_pairs(fixture.align_pairs, fixture.general_data_seed);
  const QADataset qa = build_qa_dataset(stack.encoder, fixture.qa_table,
                                        fixture.qa_json, fixture.qa_code,
                                        fixture.qa_data_seed);
  const QADataset eval_pool = build_qa_dataset(stack.encoder, fixture.eval_charts,
                                               0, 0, fixture.eval_data_seed);

  const bool has_diverse =
      std::find(strategies.begin(), strategies.end(), InitStrategy::diverse) !=
      strategies.end();
  const std::size_t cells_per_seed =
      strategies.size() + ((bz_variant && has_diverse) ? 1 : 0);

  AblationSummary summary;
  summary.runs.resize(seeds.size() * cells_per_seed);

#pragma omp parallel for schedule(dynamic)
  for (long long si = 0; si < static_cast<long long>(seeds.size()); ++si) {
    const std::uint64_t seed = seeds[si];

    std::map<AlignKind, ExpertMLP> aligned;
    aligned.emplace(AlignKind::table,
                    align_connector(table_task, stack, substream_seed(seed, 1),
                                    fixture.align_epochs, fixture.align_lr)
                        .connector);
    aligned.emplace(AlignKind::json,
                    align_connector(json_task, stack, substream_seed(seed, 2),
                                    fixture.align_epochs, fixture.align_lr)
                        .connector);
    aligned.emplace(AlignKind::code,
                    align_connector(code_task, stack, substream_seed(seed, 3),
                                    fixture.align_epochs, fixture.align_lr)
                        .connector);
    const ExpertMLP vanilla =
        vanilla_connector(general, stack, substream_seed(seed, 4),
                          fixture.align_epochs, fixture.align_lr)
            .connector;

    auto run_cell = [&](InitStrategy strategy, bool bz, std::size_t slot) {
      MoEConnector connector =
          init_moe(strategy, aligned, vanilla, fixture.num_experts, fixture.top_k,
                   fixture.renormalize,
                   substream_seed(seed, 20 + static_cast<std::uint64_t>(strategy)));
      DecoderHead head = stack.head_template;
      const TrainLog log =
          sft_run(connector, head, qa, fixture.schedule, bz,
                  substream_seed(seed, 30 + static_cast<std::uint64_t>(strategy)));
      AblationRun run;
      run.strategy = strategy;
      run.seed = seed;
      run.bz_loss = bz;
      run.final_loss = log.final_loss;
      run.acc05 = qa_relaxed_accuracy(connector, head, eval_pool, 0.05);
      run.usage_chi_square = eval_usage(connector, eval_pool).chi_square;
      summary.runs[static_cast<std::size_t>(si) * cells_per_seed + slot] = run;
    };

    std::size_t slot = 0;
    for (InitStrategy strategy : strategies) run_cell(strategy, false, slot++);
    if (bz_variant && has_diverse) run_cell(InitStrategy::diverse, true, slot++);
  }
  return summary;
}

std::string ablation_to_json_text(const AblationSummary& summary) {
  json runs = json::array();
  for (const AblationRun& r : summary.runs) {
    runs.push_back({{"strategy", init_strategy_name(r.strategy)},
                    {"seed", r.seed},
                    {"bz_loss", r.bz_loss},
                    {"final_loss", r.final_loss},
                    {"acc05", r.acc05},
                    {"usage_chi_square", r.usage_chi_square}});
  }
  json j;
  j["runs"] = std::move(runs);
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Training-state checkpoint
// ---------------------------------------------------------------------------

namespace {

json matrix_json(const Matrix& m) {
  return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

Matrix matrix_unjson(const json& j) {
  Matrix m;
  m.rows = j.at("rows").get<std::size_t>();
  m.cols = j.at("cols").get<std::size_t>();
  m.data = j.at("data").get<std::vector<double>>();
  if (m.data.size() != m.rows * m.cols)
    throw IoError("training state: matrix payload length mismatch");
  return m;
}

}  // namespace

void save_training_state(const TrainingState& state, const std::string& path) {
  json j;
  j["format"] = "training-state";
  j["version"] = 1;
  j["connector"] = json::parse(connector_to_json_text(state.connector));
  j["head"] = {{"w", matrix_json(state.head.w)},
               {"lora_a", matrix_json(state.head.lora_a)},
               {"lora_b", matrix_json(state.head.lora_b)},
               {"scale", state.head.scale}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write training state: " + path);
  out << j.dump() << "\n";
}

TrainingState load_training_state(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw IoError("training state: invalid JSON");
  if (j.value("format", "") != "training-state")
    throw IoError("training state: wrong format");
  TrainingState state;
  state.connector = connector_from_json_text(j.at("connector").dump());
  state.head.w = matrix_unjson(j.at("head").at("w"));
  state.head.lora_a = matrix_unjson(j.at("head").at("lora_a"));
  state.head.lora_b = matrix_unjson(j.at("head").at("lora_b"));
  state.head.scale = j.at("head").at("scale").get<double>();
  return state;
}

// ---------------------------------------------------------------------------
// Gradient sweep
// ---------------------------------------------------------------------------

GradCheckSweep grad_check_sweep(std::size_t configs, std::uint64_t seed,
                                double rel_tol) {
  GradCheckSweep sweep;
  sweep.configs = configs;
  const std::size_t ls[4] = {1, 2, 4, 8};

  for (std::size_t k = 0; k < configs; ++k) {
    Rng rng(substream_seed(seed, 400 + k));
    const std::size_t num_experts = ls[k % 4];
    const std::size_t top_k =
        1 + static_cast<std::size_t>(rng.index(num_experts));
    const std::size_t d_in = 3 + rng.index(6);
    const std::size_t d_h = 4 + rng.index(7);
    const std::size_t d_out = 4 + rng.index(5);
    const std::size_t e_dim = 3 + rng.index(5);
    const std::size_t n_tokens = 2 + rng.index(4);
    const bool renormalize = k % 2 == 0;
    const bool with_bz = k % 3 == 0;

    MoEConnector connector = make_connector(d_in, d_h, d_out, num_experts, top_k,
                                            renormalize, substream_seed(seed, k));
    // a zero gate sits exactly on a routing tie; give it random weights
    connector.gate.wg = Matrix::xavier(d_in, num_experts, rng);
    for (double& v : connector.gate.bg.data) v = rng.uniform(-0.1, 0.1);

    DecoderHead head =
        DecoderHead::create(d_out, e_dim, 2, 2.0, substream_seed(seed, 500 + k));
    for (double& v : head.lora_b.data) v = rng.uniform(-0.2, 0.2);  // nonzero path

    Matrix tokens(n_tokens, d_in);
    for (double& v : tokens.data) v = rng.uniform(-1.0, 1.0);
    Matrix target(1, 3);
    for (double& v : target.data) v = rng.uniform(0.0, 1.0);

    const auto loss_fn = [&]() -> double {
      const MoEForward fwd = moe_forward(connector, tokens);
      const Matrix decoded = head.decode(mean_pool_rows(fwd.output));
      Matrix pred(1, 3);
      for (std::size_t i = 0; i < 3; ++i) pred.at(0, i) = decoded.at(0, i);
      double loss = mse_loss(pred, target);
      if (with_bz) {
        const AuxLosses aux = aux_losses(fwd.trace);
        loss += kDefaultBalanceCoeff * aux.balance + kDefaultZLossCoeff * aux.z;
      }
      return loss;
    };

    // analytic gradients at the unperturbed point
    MoEForward fwd = moe_forward(connector, tokens);
    const Matrix pooled = mean_pool_rows(fwd.output);
    const Matrix decoded = head.decode(pooled);
    Matrix pred(1, 3);
    for (std::size_t i = 0; i < 3; ++i) pred.at(0, i) = decoded.at(0, i);
    const Matrix dpred = mse_loss_grad(pred, target);
    Matrix ddecoded(1, decoded.cols);
    for (std::size_t i = 0; i < 3; ++i) ddecoded.at(0, i) = dpred.at(0, i);
    Matrix dpooled;
    DecoderHeadGrads head_grads = head_backward(head, pooled, ddecoded, &dpooled);
    const Matrix dout = mean_pool_rows_backward(dpooled, fwd.output.rows);
    MoEGrads moe_grads;
    if (with_bz) {
      const AuxLossGrads aux_g =
          aux_loss_grads(fwd.trace, kDefaultBalanceCoeff, kDefaultZLossCoeff);
      moe_grads = moe_backward(connector, tokens, fwd, dout, &aux_g.dprobs,
                               &aux_g.dlogits);
    } else {
      moe_grads = moe_backward(connector, tokens, fwd, dout);
    }

    std::vector<ParamRef> params;
    params.push_back({"gate.wg", &connector.gate.wg, &moe_grads.dwg, false});
    params.push_back({"gate.bg", &connector.gate.bg, &moe_grads.dbg, false});
    for (std::size_t j = 0; j < connector.experts.size(); ++j) {
      ExpertMLP& e = connector.experts[j];
      ExpertGrads& g = moe_grads.experts[j];
      const std::string p = "expert" + std::to_string(j);
      params.push_back({p + ".w1", &e.w1, &g.dw1, false});
      params.push_back({p + ".b1", &e.b1, &g.db1, false});
      params.push_back({p + ".w2", &e.w2, &g.dw2, false});
      params.push_back({p + ".b2", &e.b2, &g.db2, false});
    }
    params.push_back({"lora_a", &head.lora_a, &head_grads.dlora_a, false});
    params.push_back({"lora_b", &head.lora_b, &head_grads.dlora_b, false});

    const GradCheckReport report = grad_check(loss_fn, params, rel_tol);
    if (report.max_rel_err > sweep.max_rel_err) {
      sweep.max_rel_err = report.max_rel_err;
      sweep.worst = "config " + std::to_string(k) + ": " + report.worst_param;
    }
    sweep.max_abs_err = std::max(sweep.max_abs_err, report.max_abs_err);
  }
  sweep.passed = sweep.max_rel_err <= rel_tol;
  return sweep;
}

// ---------------------------------------------------------------------------
// Routing map
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string>& route_colors() {
  static const std::vector<std::string> colors = {"#4c78a8", "#f58518",
                                                  "#54a24b", "#e45756",
                                                  "#72b7b2", "#eeca3b",
                                                  "#b279a2", "#9d755d"};
  return colors;
}

}  // namespace

std::string route_map_svg(const MoEConnector& connector,
                          const PatchEncoder& encoder, const Raster& raster,
                          const std::string* chart_svg) {
  const Matrix tokens = encoder.encode(raster);
  const MoEForward fwd = moe_forward(connector, tokens);
  const std::size_t g = encoder.grid();
  const std::size_t n_experts = connector.num_experts();

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"490\" height=\"490\""
      << " viewBox=\"0 0 490 490\">\n";
  if (chart_svg != nullptr) {
    // inline the chart body (everything between the <svg ...> wrapper tags)
    const std::size_t open_end = chart_svg->find('>', chart_svg->find("<svg"));
    const std::size_t close = chart_svg->rfind("</svg>");
    if (open_end != std::string::npos && close != std::string::npos)
      svg << "<g class=\"chart\">"
          << chart_svg->substr(open_end + 1, close - open_end - 1) << "</g>\n";
  }
  svg << "<g class=\"cells\">";
  const double cell_w = 490.0 / static_cast<double>(g);
  for (std::size_t t = 0; t < tokens.rows; ++t) {
    // top-1 expert: argmax of routing probabilities, ties toward lower index
    std::size_t best = 0;
    for (std::size_t j = 1; j < n_experts; ++j)
      if (fwd.trace.probs.at(t, j) > fwd.trace.probs.at(t, best)) best = j;
    const std::size_t px = t % g, py = t / g;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "<rect class=\"token-cell\" x=\"%.2f\" y=\"%.2f\" width=\"%.2f\""
                  " height=\"%.2f\" fill=\"%s\" fill-opacity=\"0.45\"/>",
                  px * cell_w, py * cell_w, cell_w, cell_w,
                  route_colors()[best % route_colors().size()].c_str());
    svg << buf;
  }
  svg << "</g>\n<g class=\"route-legend\">";
  for (std::size_t j = 0; j < n_experts; ++j) {
    const double y = 12.0 + 20.0 * static_cast<double>(j);
    const std::string label =
        j < connector.expert_labels.size() ? connector.expert_labels[j]
                                           : "E" + std::to_string(j);
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "<g class=\"legend-entry\"><rect x=\"6\" y=\"%.2f\" width=\"14\""
                  " height=\"14\" fill=\"%s\"/><text x=\"24\" y=\"%.2f\""
                  " font-size=\"12\" font-family=\"sans-serif\">%s</text></g>",
                  y, route_colors()[j % route_colors().size()].c_str(), y + 12.0,
                  label.c_str());
    svg << buf;
  }
  svg << "</g>\n</svg>\n";
  return svg.str();
}

}  // namespace chartmix::train

