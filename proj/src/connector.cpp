#include "chartmix/connector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "chartmix/errors.hpp"
#include "chartmix/rng.hpp"

namespace chartmix {

using nlohmann::json;

ExpertMLP ExpertMLP::random(std::size_t d_in, std::size_t d_h, std::size_t d_out,
                            Rng& rng) {
  ExpertMLP e;
  e.w1 = Matrix::xavier(d_in, d_h, rng);
  e.b1 = Matrix(1, d_h);
  e.w2 = Matrix::xavier(d_h, d_out, rng);
  e.b2 = Matrix(1, d_out);
  return e;
}

Matrix expert_forward(const ExpertMLP& e, const Matrix& v, ExpertCache* cache) {
  Matrix h_pre = affine(v, e.w1, e.b1);
  Matrix h_act = gelu(h_pre);
  Matrix out = affine(h_act, e.w2, e.b2);
  if (cache != nullptr) {
    cache->h_pre = std::move(h_pre);
    cache->h_act = std::move(h_act);
  }
  return out;
}

ExpertGrads expert_backward(const ExpertMLP& e, const Matrix& v,
                            const ExpertCache& cache, const Matrix& dy) {
  ExpertGrads g;
  AffineGrads l2 = affine_backward(cache.h_act, e.w2, dy, /*want_dx=*/true);
  g.dw2 = std::move(l2.dw);
  g.db2 = std::move(l2.db);
  Matrix dh_pre = gelu_backward(cache.h_pre, l2.dx);
  AffineGrads l1 = affine_backward(v, e.w1, dh_pre, /*want_dx=*/false);
  g.dw1 = std::move(l1.dw);
  g.db1 = std::move(l1.db);
  return g;
}

std::vector<std::string> default_expert_labels(std::size_t count) {
  std::vector<std::string> labels;
  labels.reserve(count);
  for (std::size_t i = 0; i < count; ++i) labels.push_back("E" + std::to_string(i));
  return labels;
}

MoEConnector make_connector(std::size_t d_in, std::size_t d_h, std::size_t d_out,
                            std::size_t num_experts, std::size_t top_k,
                            bool renormalize, std::uint64_t seed) {
  if (num_experts < 1) throw ConfigError("make_connector: need at least one expert");
  if (top_k < 1 || top_k > num_experts)
    throw ConfigError("make_connector: top_k must be in [1, L]");
  MoEConnector c;
  for (std::size_t j = 0; j < num_experts; ++j) {
    Rng rng(substream_seed(seed, j));
    c.experts.push_back(ExpertMLP::random(d_in, d_h, d_out, rng));
  }
  c.gate.wg = Matrix(d_in, num_experts);
  c.gate.bg = Matrix(1, num_experts);
  c.top_k = top_k;
  c.renormalize = renormalize;
  c.expert_labels = default_expert_labels(num_experts);
  return c;
}

namespace {

// Indices of the k largest entries, ties toward the lower index.
std::vector<std::size_t> top_k_indices(const double* row, std::size_t n,
                                       std::size_t k) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(k), idx.end(),
                    [row](std::size_t a, std::size_t b) {
                      if (row[a] != row[b]) return row[a] > row[b];
                      return a < b;
                    });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::vector<double> route_top_k(const std::vector<double>& prob_row,
                                std::size_t k, bool renormalize) {
  const std::size_t n = prob_row.size();
  if (k < 1 || k > n) throw ConfigError("route_top_k: K must be in [1, L]");
  const std::vector<std::size_t> kept = top_k_indices(prob_row.data(), n, k);
  std::vector<double> w(n, 0.0);
  double sum = 0.0;
  for (std::size_t j : kept) {
    w[j] = prob_row[j];
    sum += prob_row[j];
  }
  if (renormalize && sum > 0.0)
    for (std::size_t j : kept) w[j] /= sum;
  return w;
}

MoEForward moe_forward(const MoEConnector& c, const Matrix& v) {
  const std::size_t n_tokens = v.rows;
  const std::size_t n_experts = c.num_experts();
  if (n_experts == 0) throw ConfigError("moe_forward: connector has no experts");
  if (c.top_k < 1 || c.top_k > n_experts)
    throw ConfigError("moe_forward: top_k must be in [1, L]");
  if (v.cols != c.d_in()) throw DimensionError("moe_forward: token width != D_in");

  MoEForward fwd;
  RoutingTrace& trace = fwd.trace;
  trace.logits = affine(v, c.gate.wg, c.gate.bg);
  trace.probs = softmax_rows(trace.logits);
  trace.weights = Matrix(n_tokens, n_experts);
  trace.kept.resize(n_tokens);

  const std::size_t k = std::min(c.top_k, n_experts);
  for (std::size_t i = 0; i < n_tokens; ++i) {
    std::vector<std::size_t> kept =
        top_k_indices(&trace.probs.data[i * n_experts], n_experts, k);
    double sum = 0.0;
    for (std::size_t j : kept) sum += trace.probs.at(i, j);
    for (std::size_t j : kept) {
      double w = trace.probs.at(i, j);
      if (c.renormalize && sum > 0.0) w /= sum;
      trace.weights.at(i, j) = w;
    }
    trace.kept[i] = std::move(kept);
  }

  fwd.dispatch.resize(n_experts);
  for (std::size_t i = 0; i < n_tokens; ++i)
    for (std::size_t j : trace.kept[i]) fwd.dispatch[j].rows.push_back(i);

  const std::size_t d_out = c.d_out();
  const std::size_t d_in = c.d_in();
  for (std::size_t j = 0; j < n_experts; ++j) {
    ExpertDispatch& disp = fwd.dispatch[j];
    if (disp.rows.empty()) continue;
    disp.inputs = Matrix(disp.rows.size(), d_in);
    for (std::size_t p = 0; p < disp.rows.size(); ++p)
      for (std::size_t d = 0; d < d_in; ++d)
        disp.inputs.at(p, d) = v.at(disp.rows[p], d);
    disp.outputs = expert_forward(c.experts[j], disp.inputs, &disp.cache);
  }

  fwd.output = Matrix(n_tokens, d_out);
  for (std::size_t i = 0; i < n_tokens; ++i) {
    for (std::size_t j : trace.kept[i]) {  // ascending index, fixed order
      const ExpertDispatch& disp = fwd.dispatch[j];
      const std::size_t p =
          static_cast<std::size_t>(std::lower_bound(disp.rows.begin(), disp.rows.end(), i) -
                                   disp.rows.begin());
      const double w = trace.weights.at(i, j);
      for (std::size_t d = 0; d < d_out; ++d)
        fwd.output.at(i, d) += w * disp.outputs.at(p, d);
    }
  }
  if (!fwd.output.all_finite()) throw NumericError("moe_forward: non-finite output");
  return fwd;
}

MoEGrads moe_backward(const MoEConnector& c, const Matrix& v,
                      const MoEForward& fwd, const Matrix& dout,
                      const Matrix* dprobs_extra, const Matrix* dlogits_extra) {
  const std::size_t n_tokens = v.rows;
  const std::size_t n_experts = c.num_experts();
  const std::size_t d_out = c.d_out();
  if (!dout.same_shape(fwd.output)) throw DimensionError("moe_backward: dout shape");

  const RoutingTrace& trace = fwd.trace;
  MoEGrads grads;

  // d(loss)/d(weight_ij) = <expert_j(v_i), dout_i>, kept entries only.
  Matrix dweights(n_tokens, n_experts);
  for (std::size_t j = 0; j < n_experts; ++j) {
    const ExpertDispatch& disp = fwd.dispatch[j];
    for (std::size_t p = 0; p < disp.rows.size(); ++p) {
      const std::size_t i = disp.rows[p];
      double dot = 0.0;
      for (std::size_t d = 0; d < d_out; ++d)
        dot += disp.outputs.at(p, d) * dout.at(i, d);
      dweights.at(i, j) = dot;
    }
  }

  // Through the (optionally renormalized) kept weights to the probabilities.
  Matrix dprobs(n_tokens, n_experts);
  for (std::size_t i = 0; i < n_tokens; ++i) {
    if (c.renormalize) {
      double sum = 0.0, weighted = 0.0;
      for (std::size_t j : trace.kept[i]) {
        sum += trace.probs.at(i, j);
        weighted += dweights.at(i, j) * trace.weights.at(i, j);
      }
      if (sum > 0.0)
        for (std::size_t j : trace.kept[i])
          dprobs.at(i, j) = (dweights.at(i, j) - weighted) / sum;
    } else {
      for (std::size_t j : trace.kept[i]) dprobs.at(i, j) = dweights.at(i, j);
    }
  }
  if (dprobs_extra != nullptr) {
    if (!dprobs_extra->same_shape(dprobs))
      throw DimensionError("moe_backward: dprobs_extra shape");
    for (std::size_t i = 0; i < dprobs.data.size(); ++i)
      dprobs.data[i] += dprobs_extra->data[i];
  }

  Matrix dlogits = softmax_rows_backward(trace.probs, dprobs);
  if (dlogits_extra != nullptr) {
    if (!dlogits_extra->same_shape(dlogits))
      throw DimensionError("moe_backward: dlogits_extra shape");
    for (std::size_t i = 0; i < dlogits.data.size(); ++i)
      dlogits.data[i] += dlogits_extra->data[i];
  }

  AffineGrads gate_grads = affine_backward(v, c.gate.wg, dlogits, /*want_dx=*/false);
  grads.dwg = std::move(gate_grads.dw);
  grads.dbg = std::move(gate_grads.db);

  grads.experts.resize(n_experts);
  for (std::size_t j = 0; j < n_experts; ++j) {
    const ExpertDispatch& disp = fwd.dispatch[j];
    const ExpertMLP& e = c.experts[j];
    if (disp.rows.empty()) {
      grads.experts[j] = ExpertGrads{Matrix(e.w1.rows, e.w1.cols),
                                     Matrix(1, e.b1.cols),
                                     Matrix(e.w2.rows, e.w2.cols),
                                     Matrix(1, e.b2.cols)};
      continue;
    }
    Matrix upstream(disp.rows.size(), d_out);
    for (std::size_t p = 0; p < disp.rows.size(); ++p) {
      const std::size_t i = disp.rows[p];
      const double w = trace.weights.at(i, j);
      for (std::size_t d = 0; d < d_out; ++d)
        upstream.at(p, d) = w * dout.at(i, d);
    }
    grads.experts[j] = expert_backward(e, disp.inputs, disp.cache, upstream);
  }
  return grads;
}

AuxLosses aux_losses(const RoutingTrace& trace) {
  const std::size_t n_tokens = trace.probs.rows;
  const std::size_t n_experts = trace.probs.cols;
  AuxLosses out;
  if (n_tokens == 0) return out;

  std::size_t total_kept = 0;
  std::vector<double> counts(n_experts, 0.0);
  for (const auto& kept : trace.kept) {
    total_kept += kept.size();
    for (std::size_t j : kept) counts[j] += 1.0;
  }
  double balance = 0.0;
  for (std::size_t j = 0; j < n_experts; ++j) {
    const double f = total_kept > 0 ? counts[j] / static_cast<double>(total_kept) : 0.0;
    double p_mean = 0.0;
    for (std::size_t i = 0; i < n_tokens; ++i) p_mean += trace.probs.at(i, j);
    p_mean /= static_cast<double>(n_tokens);
    balance += f * p_mean;
  }
  out.balance = static_cast<double>(n_experts) * balance;

  double z = 0.0;
  for (std::size_t i = 0; i < n_tokens; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n_experts; ++j)
      mx = std::max(mx, trace.logits.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < n_experts; ++j)
      s += std::exp(trace.logits.at(i, j) - mx);
    const double lse = mx + std::log(s);
    z += lse * lse;
  }
  out.z = z / static_cast<double>(n_tokens);
  return out;
}

AuxLossGrads aux_loss_grads(const RoutingTrace& trace, double balance_coeff,
                            double z_coeff) {
  const std::size_t n_tokens = trace.probs.rows;
  const std::size_t n_experts = trace.probs.cols;
  AuxLossGrads g;
  g.dprobs = Matrix(n_tokens, n_experts);
  g.dlogits = Matrix(n_tokens, n_experts);
  if (n_tokens == 0) return g;

  std::size_t total_kept = 0;
  std::vector<double> counts(n_experts, 0.0);
  for (const auto& kept : trace.kept) {
    total_kept += kept.size();
    for (std::size_t j : kept) counts[j] += 1.0;
  }
  // balance = L * sum_j f_j * mean_i p_ij, f held constant.
  for (std::size_t j = 0; j < n_experts; ++j) {
    const double f = total_kept > 0 ? counts[j] / static_cast<double>(total_kept) : 0.0;
    const double d = balance_coeff * static_cast<double>(n_experts) * f /
                     static_cast<double>(n_tokens);
    for (std::size_t i = 0; i < n_tokens; ++i) g.dprobs.at(i, j) = d;
  }
  // z = mean_i lse_i^2; d/dlogit_ij = (2/N) * lse_i * p_ij.
  for (std::size_t i = 0; i < n_tokens; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n_experts; ++j)
      mx = std::max(mx, trace.logits.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < n_experts; ++j)
      s += std::exp(trace.logits.at(i, j) - mx);
    const double lse = mx + std::log(s);
    const double scale = z_coeff * 2.0 * lse / static_cast<double>(n_tokens);
    for (std::size_t j = 0; j < n_experts; ++j)
      g.dlogits.at(i, j) = scale * trace.probs.at(i, j);
  }
  return g;
}

UsageStats usage_stats(const std::vector<RoutingTrace>& traces) {
  if (traces.empty()) throw UsageError("usage_stats: no traces");
  const std::size_t n_experts = traces.front().probs.cols;
  UsageStats stats;
  stats.shares.assign(n_experts, 0.0);
  for (const RoutingTrace& t : traces) {
    if (t.probs.cols != n_experts)
      throw DimensionError("usage_stats: expert count varies across traces");
    for (const auto& kept : t.kept) {
      for (std::size_t j : kept) stats.shares[j] += 1.0;
      stats.assignments += kept.size();
    }
  }
  if (stats.assignments == 0) throw UsageError("usage_stats: no routed tokens");
  const double uniform = 1.0 / static_cast<double>(n_experts);
  for (double& s : stats.shares) s /= static_cast<double>(stats.assignments);
  for (double s : stats.shares) {
    const double d = s - uniform;
    stats.chi_square += d * d / uniform;
  }
  return stats;
}

ParamCounts param_count(const MoEConnector& c) {
  ParamCounts counts;
  if (c.experts.empty()) return counts;
  const ExpertMLP& e = c.experts.front();
  counts.per_expert = e.w1.size() + e.b1.size() + e.w2.size() + e.b2.size();
  counts.gate = c.gate.wg.size() + c.gate.bg.size();
  counts.experts_total = counts.per_expert * c.num_experts();
  counts.total = counts.experts_total + counts.gate;
  return counts;
}

namespace {

constexpr int kCheckpointVersion = 1;

json matrix_to_json(const Matrix& m) {
  return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

Matrix matrix_from_json(const json& j) {
  Matrix m;
  m.rows = j.at("rows").get<std::size_t>();
  m.cols = j.at("cols").get<std::size_t>();
  m.data = j.at("data").get<std::vector<double>>();
  if (m.data.size() != m.rows * m.cols)
    throw IoError("checkpoint: matrix payload length mismatch");
  return m;
}

}  // namespace

std::string connector_to_json_text(const MoEConnector& c) {
  json j;
  j["format"] = "moe-connector";
  j["version"] = kCheckpointVersion;
  j["top_k"] = c.top_k;
  j["renormalize"] = c.renormalize;
  j["labels"] = c.expert_labels;
  j["gate"] = {{"wg", matrix_to_json(c.gate.wg)}, {"bg", matrix_to_json(c.gate.bg)}};
  json experts = json::array();
  for (const ExpertMLP& e : c.experts)
    experts.push_back({{"w1", matrix_to_json(e.w1)},
                       {"b1", matrix_to_json(e.b1)},
                       {"w2", matrix_to_json(e.w2)},
                       {"b2", matrix_to_json(e.b2)}});
  j["experts"] = std::move(experts);
  return j.dump();
}

MoEConnector connector_from_json_text(const std::string& text) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw IoError("checkpoint: invalid JSON");
  if (j.value("format", "") != "moe-connector")
    throw IoError("checkpoint: not a connector file");
  if (j.value("version", -1) != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version");
  MoEConnector c;
  c.top_k = j.at("top_k").get<std::size_t>();
  c.renormalize = j.at("renormalize").get<bool>();
  c.expert_labels = j.at("labels").get<std::vector<std::string>>();
  c.gate.wg = matrix_from_json(j.at("gate").at("wg"));
  c.gate.bg = matrix_from_json(j.at("gate").at("bg"));
  for (const json& je : j.at("experts")) {
    ExpertMLP e;
    e.w1 = matrix_from_json(je.at("w1"));
    e.b1 = matrix_from_json(je.at("b1"));
    e.w2 = matrix_from_json(je.at("w2"));
    e.b2 = matrix_from_json(je.at("b2"));
    c.experts.push_back(std::move(e));
  }
  if (c.experts.empty()) throw IoError("checkpoint: no experts");
  if (c.top_k < 1 || c.top_k > c.num_experts())
    throw IoError("checkpoint: top_k out of range");
  return c;
}

void save_connector(const MoEConnector& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path);
  out << connector_to_json_text(c) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

MoEConnector load_connector(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return connector_from_json_text(text);
}

std::string expert_to_json_text(const ExpertMLP& e, const std::string& role) {
  json j;
  j["format"] = "expert-mlp";
  j["version"] = kCheckpointVersion;
  j["role"] = role;
  j["w1"] = matrix_to_json(e.w1);
  j["b1"] = matrix_to_json(e.b1);
  j["w2"] = matrix_to_json(e.w2);
  j["b2"] = matrix_to_json(e.b2);
  return j.dump();
}

ExpertMLP expert_from_json_text(const std::string& text, std::string* role) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw IoError("expert checkpoint: invalid JSON");
  if (j.value("format", "") != "expert-mlp")
    throw IoError("expert checkpoint: not an expert file");
  if (j.value("version", -1) != kCheckpointVersion)
    throw IoError("expert checkpoint: unsupported version");
  if (role != nullptr) *role = j.value("role", "");
  ExpertMLP e;
  e.w1 = matrix_from_json(j.at("w1"));
  e.b1 = matrix_from_json(j.at("b1"));
  e.w2 = matrix_from_json(j.at("w2"));
  e.b2 = matrix_from_json(j.at("b2"));
  return e;
}

void save_expert(const ExpertMLP& e, const std::string& role,
                 const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path);
  out << expert_to_json_text(e, role) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

ExpertMLP load_expert(const std::string& path, std::string* role) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return expert_from_json_text(text, role);
}

}  // namespace chartmix
