#include "chartmix/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "chartmix/errors.hpp"
#include "chartmix/rng.hpp"

namespace chartmix {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// Parallelizing tiny matrices costs more than it saves.
constexpr std::size_t kParallelWorkThreshold = 16 * 1024;

double gelu_scalar(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_deriv_scalar(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

void softmax_row(const double* in, double* out, std::size_t n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(in[j] - mx);
    sum += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
}

void matmul_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  const std::size_t n = b.cols, k = a.cols;
  const double* arow = &a.data[i * k];
  double* crow = &c.data[i * n];
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = &b.data[p * n];
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Matrix Matrix::xavier(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  const double limit = std::sqrt(6.0 / static_cast<double>(r + c));
  for (double& v : m.data) v = rng.uniform(-limit, limit);
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix Matrix::transposed() const {
  Matrix t(cols, rows);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t.at(j, i) = at(i, j);
  return t;
}

bool operator==(const Matrix& a, const Matrix& b) {
  return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
  double d = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    d = std::max(d, std::abs(a.data[i] - b.data[i]));
  return d;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw DimensionError("matmul: inner dimensions differ (" +
                         std::to_string(a.cols) + " vs " + std::to_string(b.rows) + ")");
  Matrix c(a.rows, b.cols);
  const std::size_t work = a.rows * a.cols * b.cols;
  if (work >= kParallelWorkThreshold) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(a.rows); ++i)
      matmul_row(a, b, c, static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < a.rows; ++i) matmul_row(a, b, c, i);
  }
  return c;
}

Matrix gelu(const Matrix& x) {
  Matrix y(x.rows, x.cols);
  const long long n = static_cast<long long>(x.data.size());
  if (x.data.size() >= kParallelWorkThreshold) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < n; ++i) y.data[i] = gelu_scalar(x.data[i]);
  } else {
    for (long long i = 0; i < n; ++i) y.data[i] = gelu_scalar(x.data[i]);
  }
  return y;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows, logits.cols);
  if (logits.rows * logits.cols >= kParallelWorkThreshold) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(logits.rows); ++i)
      softmax_row(&logits.data[i * logits.cols], &p.data[i * logits.cols], logits.cols);
  } else {
    for (std::size_t i = 0; i < logits.rows; ++i)
      softmax_row(&logits.data[i * logits.cols], &p.data[i * logits.cols], logits.cols);
  }
  return p;
}

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw DimensionError("matmul: inner dimensions differ");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) matmul_row(a, b, c, i);
  return c;
}

Matrix gelu(const Matrix& x) {
  Matrix y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = gelu_scalar(x.data[i]);
  return y;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i)
    softmax_row(&logits.data[i * logits.cols], &p.data[i * logits.cols], logits.cols);
  return p;
}

}  // namespace serial

Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  if (x.cols != w.rows) throw DimensionError("affine: X.cols != W.rows");
  if (b.rows != 1 || b.cols != w.cols)
    throw DimensionError("affine: bias must be 1 x W.cols");
  Matrix y = matmul(x, w);
  for (std::size_t i = 0; i < y.rows; ++i)
    for (std::size_t j = 0; j < y.cols; ++j) y.at(i, j) += b.at(0, j);
  return y;
}

AffineGrads affine_backward(const Matrix& x, const Matrix& w, const Matrix& dy,
                            bool want_dx) {
  if (dy.rows != x.rows || dy.cols != w.cols)
    throw DimensionError("affine_backward: dY shape mismatch");
  AffineGrads g;
  g.dw = matmul(x.transposed(), dy);
  g.db = Matrix(1, w.cols);
  for (std::size_t i = 0; i < dy.rows; ++i)
    for (std::size_t j = 0; j < dy.cols; ++j) g.db.at(0, j) += dy.at(i, j);
  if (want_dx) g.dx = matmul(dy, w.transposed());
  return g;
}

Matrix gelu_backward(const Matrix& x, const Matrix& dy) {
  if (!x.same_shape(dy)) throw DimensionError("gelu_backward: shape mismatch");
  Matrix dx(x.rows, x.cols);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    dx.data[i] = gelu_deriv_scalar(x.data[i]) * dy.data[i];
  return dx;
}

Matrix softmax_rows_backward(const Matrix& probs, const Matrix& dprobs) {
  if (!probs.same_shape(dprobs))
    throw DimensionError("softmax_rows_backward: shape mismatch");
  Matrix dlogits(probs.rows, probs.cols);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < probs.cols; ++j)
      dot += probs.at(i, j) * dprobs.at(i, j);
    for (std::size_t j = 0; j < probs.cols; ++j)
      dlogits.at(i, j) = probs.at(i, j) * (dprobs.at(i, j) - dot);
  }
  return dlogits;
}

double mse_loss(const Matrix& pred, const Matrix& target) {
  if (!pred.same_shape(target)) throw DimensionError("mse_loss: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - target.data[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.data.size());
}

Matrix mse_loss_grad(const Matrix& pred, const Matrix& target) {
  if (!pred.same_shape(target)) throw DimensionError("mse_loss_grad: shape mismatch");
  Matrix g(pred.rows, pred.cols);
  const double scale = 2.0 / static_cast<double>(pred.data.size());
  for (std::size_t i = 0; i < pred.data.size(); ++i)
    g.data[i] = scale * (pred.data[i] - target.data[i]);
  return g;
}

GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::vector<ParamRef>& params, double rel_tol,
                           double abs_tol) {
  GradCheckReport report;
  for (const ParamRef& p : params) {
    if (p.frozen) {
      // Frozen blocks must carry no analytic gradient.
      if (p.grad != nullptr)
        for (double g : p.grad->data)
          if (g != 0.0)
            throw NumericError("grad_check: frozen param '" + p.name +
                               "' has nonzero analytic gradient");
      continue;
    }
    for (std::size_t i = 0; i < p.value->data.size(); ++i) {
      double& cell = p.value->data[i];
      const double orig = cell;
      const double h = 1e-5 * std::max(1.0, std::abs(orig));
      cell = orig + h;
      const double fp = loss();
      cell = orig - h;
      const double fm = loss();
      cell = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("grad_check: non-finite loss at param '" + p.name + "'");
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = p.grad->data[i];
      const double abs_err = std::abs(numeric - analytic);
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      // Scalars within the absolute tolerance count as exact; tracking their
      // relative error would just amplify finite-difference noise around 0.
      if (abs_err > abs_tol) {
        const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-12});
        const double rel_err = abs_err / denom;
        if (rel_err > report.max_rel_err) {
          report.max_rel_err = rel_err;
          report.worst_param = p.name + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  report.passed = report.max_rel_err <= rel_tol || report.max_abs_err <= abs_tol;
  return report;
}

double global_grad_norm(const std::vector<const Matrix*>& grads) {
  double sq = 0.0;
  for (const Matrix* g : grads)
    for (double v : g->data) sq += v * v;
  return std::sqrt(sq);
}

void adamw_step(const std::vector<Matrix*>& params,
                const std::vector<const Matrix*>& grads, AdamWState& state,
                const AdamWConfig& cfg) {
  if (params.size() != grads.size())
    throw DimensionError("adamw_step: params/grads count mismatch");
  if (cfg.lr < 0.0) throw ConfigError("adamw_step: negative learning rate");
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.emplace_back(p->rows, p->cols);
      state.v.emplace_back(p->rows, p->cols);
    }
  }
  if (state.m.size() != params.size())
    throw DimensionError("adamw_step: state/param count mismatch");

  double clip_scale = 1.0;
  if (cfg.clip_norm > 0.0) {
    const double norm = global_grad_norm(grads);
    if (norm > cfg.clip_norm) clip_scale = cfg.clip_norm / norm;
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    const Matrix& g = *grads[k];
    if (!p.same_shape(g) || !p.same_shape(state.m[k]))
      throw DimensionError("adamw_step: shape mismatch in block " + std::to_string(k));
    Matrix& m = state.m[k];
    Matrix& v = state.v[k];
    const double decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double gi = g.data[i] * clip_scale;
      m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
      v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] = p.data[i] * decay - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double cosine_lr(std::size_t step, std::size_t total_steps, double peak_lr,
                 double warmup_ratio) {
  if (total_steps == 0) return 0.0;
  const auto warmup = static_cast<std::size_t>(
      std::max<long long>(1, std::llround(warmup_ratio * static_cast<double>(total_steps))));
  if (step < warmup)
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (warmup >= total_steps) return peak_lr;
  // progress hits exactly 1 on the phase's last step, so it ends at lr 0
  const double span = static_cast<double>(total_steps - warmup);
  double progress = static_cast<double>(step + 1 - warmup) / span;
  progress = std::min(1.0, std::max(0.0, progress));
  return peak_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

}  // namespace chartmix
