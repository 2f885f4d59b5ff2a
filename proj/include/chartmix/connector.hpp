#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "chartmix/matrix.hpp"
#include "chartmix/numkit.hpp"

namespace chartmix {

class Rng;

// One candidate connector: a two-layer MLP with a GELU in between.
struct ExpertMLP {
  Matrix w1;  // D_in x D_h
  Matrix b1;  // 1 x D_h
  Matrix w2;  // D_h x D_out
  Matrix b2;  // 1 x D_out

  std::size_t d_in() const { return w1.rows; }
  std::size_t d_hidden() const { return w1.cols; }
  std::size_t d_out() const { return w2.cols; }

  static ExpertMLP random(std::size_t d_in, std::size_t d_h, std::size_t d_out,
                          Rng& rng);
};

struct ExpertCache {
  Matrix h_pre;  // pre-activation of layer 1
  Matrix h_act;  // gelu(h_pre)
};

struct ExpertGrads {
  Matrix dw1, db1, dw2, db2;
};

Matrix expert_forward(const ExpertMLP& e, const Matrix& v,
                      ExpertCache* cache = nullptr);
ExpertGrads expert_backward(const ExpertMLP& e, const Matrix& v,
                            const ExpertCache& cache, const Matrix& dy);

// Linear router producing per-token expert logits.
struct GateNet {
  Matrix wg;  // D_in x L
  Matrix bg;  // 1 x L
};

struct MoEConnector {
  std::vector<ExpertMLP> experts;
  GateNet gate;
  std::size_t top_k = 2;
  bool renormalize = true;  // off = keep the raw softmax weights of the kept experts
  std::vector<std::string> expert_labels;  // "E0".."E{L-1}"

  std::size_t num_experts() const { return experts.size(); }
  std::size_t d_in() const { return experts.empty() ? 0 : experts[0].d_in(); }
  std::size_t d_out() const { return experts.empty() ? 0 : experts[0].d_out(); }
};

// Fresh connector with Xavier experts and a zero gate (uniform routing at step 0).
MoEConnector make_connector(std::size_t d_in, std::size_t d_h, std::size_t d_out,
                            std::size_t num_experts, std::size_t top_k,
                            bool renormalize, std::uint64_t seed);

std::vector<std::string> default_expert_labels(std::size_t count);

struct RoutingTrace {
  Matrix logits;   // N x L
  Matrix probs;    // N x L
  Matrix weights;  // N x L, zero outside the kept set
  std::vector<std::vector<std::size_t>> kept;  // per token, kept ids ascending
};

// Keeps the K largest probabilities (ties broken toward the lower index),
// zeroes the rest, and optionally renormalizes the kept entries to sum to 1.
std::vector<double> route_top_k(const std::vector<double>& prob_row,
                                std::size_t k, bool renormalize);

// Tokens gathered per expert: only routed rows are processed, which is
// row-for-row identical to running the expert on the full token matrix.
struct ExpertDispatch {
  std::vector<std::size_t> rows;  // token indices routed to this expert
  Matrix inputs;                  // |rows| x D_in
  Matrix outputs;                 // |rows| x D_out
  ExpertCache cache;
};

struct MoEForward {
  Matrix output;  // N x D_out
  RoutingTrace trace;
  std::vector<ExpertDispatch> dispatch;  // one per expert
};

MoEForward moe_forward(const MoEConnector& c, const Matrix& v);

struct MoEGrads {
  std::vector<ExpertGrads> experts;
  Matrix dwg, dbg;
};

// Backward through output mixing, the kept softmax weights (the top-K
// selection itself is straight-masked) and every expert. `dprobs_extra` /
// `dlogits_extra`, when non-null, are added before the softmax backward;
// they carry auxiliary-loss gradients.
MoEGrads moe_backward(const MoEConnector& c, const Matrix& v,
                      const MoEForward& fwd, const Matrix& dout,
                      const Matrix* dprobs_extra = nullptr,
                      const Matrix* dlogits_extra = nullptr);

// ---------------------------------------------------------------------------
// Auxiliary losses (off by default in training; kept switchable).
// ---------------------------------------------------------------------------

struct AuxLosses {
  double balance = 0.0;  // L * sum_j f_j * P_j
  double z = 0.0;        // mean_i (logsumexp_j logits_ij)^2
};

AuxLosses aux_losses(const RoutingTrace& trace);

// Gradients of balance_coeff*balance + z_coeff*z. The assignment fractions
// f_j are treated as constants (straight-through counting).
struct AuxLossGrads {
  Matrix dprobs;   // from the balance term
  Matrix dlogits;  // from the z term
};
AuxLossGrads aux_loss_grads(const RoutingTrace& trace, double balance_coeff,
                            double z_coeff);

constexpr double kDefaultBalanceCoeff = 0.01;
constexpr double kDefaultZLossCoeff = 0.001;

// ---------------------------------------------------------------------------
// Routing statistics
// ---------------------------------------------------------------------------

struct UsageStats {
  std::vector<double> shares;  // per-expert fraction of kept assignments
  double chi_square = 0.0;     // distance of shares from the uniform vector
  std::size_t assignments = 0;
};

UsageStats usage_stats(const std::vector<RoutingTrace>& traces);

// ---------------------------------------------------------------------------
// Parameter accounting
// ---------------------------------------------------------------------------

struct ParamCounts {
  std::size_t per_expert = 0;
  std::size_t gate = 0;
  std::size_t experts_total = 0;
  std::size_t total = 0;
};

ParamCounts param_count(const MoEConnector& c);

// ---------------------------------------------------------------------------
// Checkpoint file: versioned JSON, round-trips weights bit-exactly.
// ---------------------------------------------------------------------------

std::string connector_to_json_text(const MoEConnector& c);
MoEConnector connector_from_json_text(const std::string& text);
void save_connector(const MoEConnector& c, const std::string& path);
MoEConnector load_connector(const std::string& path);

// Single-expert checkpoint (alignment outputs).
std::string expert_to_json_text(const ExpertMLP& e, const std::string& role);
ExpertMLP expert_from_json_text(const std::string& text, std::string* role = nullptr);
void save_expert(const ExpertMLP& e, const std::string& role, const std::string& path);
ExpertMLP load_expert(const std::string& path, std::string* role = nullptr);

}  // namespace chartmix
