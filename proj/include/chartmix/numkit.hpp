#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "chartmix/matrix.hpp"

namespace chartmix {

// ---------------------------------------------------------------------------
// Kernels. The omp variants parallelize over independent output elements with
// a fixed per-element accumulation order, so they are bit-identical to the
// serial references below for any thread count.
// ---------------------------------------------------------------------------

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix gelu(const Matrix& x);
Matrix softmax_rows(const Matrix& logits);

namespace serial {
// Reference implementations kept for tests and the benchmark target.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix gelu(const Matrix& x);
Matrix softmax_rows(const Matrix& logits);
}  // namespace serial

// Y = X*W + b (b broadcast over rows; b is 1 x W.cols).
Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b);

struct AffineGrads {
  Matrix dx, dw, db;
};
// dY -> gradients. dx is skipped (left empty) when want_dx is false.
AffineGrads affine_backward(const Matrix& x, const Matrix& w, const Matrix& dy,
                            bool want_dx = true);

// Elementwise derivative of the tanh-approximation GELU, applied to upstream dy.
Matrix gelu_backward(const Matrix& x, const Matrix& dy);

// Backward of softmax_rows: given probs and dL/dprobs, returns dL/dlogits.
Matrix softmax_rows_backward(const Matrix& probs, const Matrix& dprobs);

double mse_loss(const Matrix& pred, const Matrix& target);
Matrix mse_loss_grad(const Matrix& pred, const Matrix& target);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst_param;
  bool passed = false;
};

// A named parameter block with its analytic gradient. Frozen blocks are never
// perturbed; their analytic gradient must be all zero (or empty).
struct ParamRef {
  std::string name;
  Matrix* value = nullptr;
  const Matrix* grad = nullptr;
  bool frozen = false;
};

// Central differences with h = 1e-5 * max(1, |p|) per scalar. `loss` must
// recompute the loss from the current contents of the param matrices.
GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::vector<ParamRef>& params,
                           double rel_tol = 1e-4, double abs_tol = 1e-7);

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay and global-norm gradient clipping.
// ---------------------------------------------------------------------------

struct AdamWState {
  std::size_t step = 0;
  std::vector<Matrix> m, v;
};

struct AdamWConfig {
  double lr = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

double global_grad_norm(const std::vector<const Matrix*>& grads);

void adamw_step(const std::vector<Matrix*>& params,
                const std::vector<const Matrix*>& grads, AdamWState& state,
                const AdamWConfig& cfg);

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warm-up (step 0 -> lr 0) followed by cosine
// decay to 0 at the last step of the phase.
// ---------------------------------------------------------------------------

double cosine_lr(std::size_t step, std::size_t total_steps, double peak_lr,
                 double warmup_ratio = 0.01);

}  // namespace chartmix
