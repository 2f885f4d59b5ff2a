#include <cmath>

#include <doctest.h>

#include "chartmix/errors.hpp"
#include "chartmix/numkit.hpp"
#include "chartmix/rng.hpp"

using namespace chartmix;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.uniform(lo, hi);
  return m;
}

}  // namespace

TEST_SUITE("numkit") {

TEST_CASE("matmul identity and zero") {
  Rng rng(1);
  const Matrix a = random_matrix(4, 4, rng);
  const Matrix eye = Matrix::identity(4);
  CHECK(matmul(a, eye) == a);
  const Matrix zero(4, 3);
  const Matrix az = matmul(a, zero);
  for (double v : az.data) CHECK(v == 0.0);
}

TEST_CASE("matmul closed form") {
  Matrix a(2, 2);
  a.data = {1, 2, 3, 4};
  Matrix b(2, 1);
  b.data = {5, 6};
  const Matrix c = matmul(a, b);
  CHECK(c.rows == 2);
  CHECK(c.cols == 1);
  CHECK(c.at(0, 0) == 17.0);
  CHECK(c.at(1, 0) == 39.0);
}

TEST_CASE("matmul shape mismatch") {
  const Matrix a(2, 3), b(4, 2);
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("matmul parallel matches serial bit for bit") {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t m = 1 + rng.index(40);
    const std::size_t k = 1 + rng.index(40);
    const std::size_t n = 1 + rng.index(40);
    const Matrix a = random_matrix(m, k, rng);
    const Matrix b = random_matrix(k, n, rng);
    CHECK(matmul(a, b) == serial::matmul(a, b));
  }
  // large enough to take the parallel path
  const Matrix a = random_matrix(80, 64, rng);
  const Matrix b = random_matrix(64, 70, rng);
  CHECK(matmul(a, b) == serial::matmul(a, b));
}

TEST_CASE("affine identity and zero input") {
  Rng rng(3);
  const Matrix x = random_matrix(3, 4, rng);
  const Matrix eye = Matrix::identity(4);
  const Matrix zero_b(1, 4);
  CHECK(affine(x, eye, zero_b) == x);

  const Matrix x0(5, 4);
  Matrix b(1, 3);
  b.data = {0.5, -1.0, 2.0};
  const Matrix w(4, 3);
  const Matrix y = affine(x0, w, b);
  for (std::size_t i = 0; i < y.rows; ++i)
    for (std::size_t j = 0; j < y.cols; ++j) CHECK(y.at(i, j) == b.at(0, j));
}

TEST_CASE("affine dW matches central differences") {
  Rng rng(4);
  Matrix x = random_matrix(3, 4, rng);
  Matrix w = random_matrix(4, 5, rng);
  Matrix b = random_matrix(1, 5, rng);
  const Matrix target = random_matrix(3, 5, rng);

  const Matrix y = affine(x, w, b);
  const Matrix dy = mse_loss_grad(y, target);
  const AffineGrads grads = affine_backward(x, w, dy);

  for (std::size_t i = 0; i < w.data.size(); ++i) {
    const double orig = w.data[i];
    const double h = 1e-5 * std::max(1.0, std::abs(orig));
    w.data[i] = orig + h;
    const double fp = mse_loss(affine(x, w, b), target);
    w.data[i] = orig - h;
    const double fm = mse_loss(affine(x, w, b), target);
    w.data[i] = orig;
    const double numeric = (fp - fm) / (2 * h);
    CHECK(grads.dw.data[i] == doctest::Approx(numeric).epsilon(1e-4));
  }
}

TEST_CASE("gelu fixed points") {
  Matrix x(1, 3);
  x.data = {0.0, 10.0, 1.0};
  const Matrix y = gelu(x);
  CHECK(y.at(0, 0) == 0.0);
  CHECK(y.at(0, 1) == doctest::Approx(10.0).epsilon(1e-7));
  // direct evaluation of the tanh approximation at x = 1
  const double u = std::sqrt(2.0 / M_PI) * (1.0 + 0.044715);
  const double expected = 0.5 * (1.0 + std::tanh(u));
  CHECK(y.at(0, 2) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("softmax closed forms") {
  Matrix x(2, 4, 3.7);
  const Matrix p = softmax_rows(x);
  for (double v : p.data) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  Matrix two(1, 2);
  two.data = {0.0, std::log(3.0)};
  const Matrix q = softmax_rows(two);
  CHECK(q.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(q.at(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance and row sums") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = random_matrix(8, 6, rng, -50.0, 50.0);
    Matrix shifted = x;
    const double c = rng.uniform(-30.0, 30.0);
    for (double& v : shifted.data) v += c;  // same shift for every entry
    const Matrix p = softmax_rows(x);
    const Matrix ps = softmax_rows(shifted);
    CHECK(max_abs_diff(p, ps) < 1e-12);
    for (std::size_t i = 0; i < p.rows; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < p.cols; ++j) {
        CHECK(p.at(i, j) >= 0.0);
        sum += p.at(i, j);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  CHECK(serial::softmax_rows(random_matrix(4, 4, rng)).rows == 4);
}

TEST_CASE("softmax parallel matches serial") {
  Rng rng(6);
  const Matrix x = random_matrix(600, 40, rng, -50.0, 50.0);
  CHECK(softmax_rows(x) == serial::softmax_rows(x));
  const Matrix g = random_matrix(200, 100, rng);
  CHECK(gelu(g) == serial::gelu(g));
}

TEST_CASE("mse closed forms and brute force") {
  Rng rng(7);
  const Matrix a = random_matrix(2, 3, rng);
  CHECK(mse_loss(a, a) == 0.0);

  Matrix b = a;
  for (double& v : b.data) v += 1.0;
  CHECK(mse_loss(b, a) == doctest::Approx(1.0).epsilon(1e-12));

  const Matrix pred = random_matrix(2, 3, rng);
  const Matrix target = random_matrix(2, 3, rng);
  double expected = 0.0;  // independent recomputation
  for (std::size_t i = 0; i < 6; ++i) {
    const double d = pred.data[i] - target.data[i];
    expected += d * d;
  }
  expected /= 6.0;
  CHECK(mse_loss(pred, target) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("grad_check quadratic closed form") {
  Matrix p(1, 1, 3.0);
  Matrix grad(1, 1, 3.0);  // d(p^2/2)/dp = p
  const auto loss = [&p]() { return 0.5 * p.at(0, 0) * p.at(0, 0); };
  const GradCheckReport report =
      grad_check(loss, {{"p", &p, &grad, false}}, 1e-6, 1e-8);
  CHECK(report.passed);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("grad_check frozen params report zero both ways") {
  Matrix p(1, 1, 3.0);
  Matrix grad_p(1, 1, 3.0);
  Matrix frozen(1, 1, 7.0);
  Matrix frozen_grad(1, 1, 0.0);
  const auto loss = [&p]() { return 0.5 * p.at(0, 0) * p.at(0, 0); };

  // analytic side must be zero, and the loss does not depend on it numerically
  const double h = 1e-5 * 7.0;
  frozen.at(0, 0) = 7.0 + h;
  const double fp = loss();
  frozen.at(0, 0) = 7.0 - h;
  const double fm = loss();
  frozen.at(0, 0) = 7.0;
  CHECK((fp - fm) / (2 * h) == 0.0);

  const GradCheckReport report = grad_check(
      loss, {{"p", &p, &grad_p, false}, {"frozen", &frozen, &frozen_grad, true}});
  CHECK(report.passed);
}

TEST_CASE("grad_check rejects nonzero frozen gradients") {
  Matrix p(1, 1, 1.0);
  Matrix bad(1, 1, 0.5);
  const auto loss = [&p]() { return p.at(0, 0); };
  CHECK_THROWS_AS(
      grad_check(loss, {{"frozen", &p, &bad, true}}), NumericError);
}

TEST_CASE("adamw fixed point and first-step magnitude") {
  Matrix p(1, 1, 2.0);
  Matrix g(1, 1, 0.0);
  AdamWState state;
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  adamw_step({&p}, {&g}, state, cfg);
  CHECK(p.at(0, 0) == 2.0);

  // nonzero scalar gradient: bias correction makes the first update ~lr
  Matrix q(1, 1, 0.0);
  Matrix gq(1, 1, 0.7);
  AdamWState s2;
  adamw_step({&q}, {&gq}, s2, cfg);
  CHECK(std::abs(q.at(0, 0)) == doctest::Approx(cfg.lr).epsilon(1e-6));
  CHECK(q.at(0, 0) < 0.0);  // moves against the gradient
}

TEST_CASE("adamw three-step scalar trajectory vs hand-rolled update") {
  const double lr = 0.01, b1 = 0.9, b2 = 0.95, eps = 1e-8, wd = 0.1, clip = 1.0;
  const double grads[3] = {0.4, -1.7, 0.9};

  Matrix p(1, 1, 1.0);
  AdamWState state;
  for (double gv : grads) {
    Matrix g(1, 1, gv);
    AdamWConfig cfg;
    cfg.lr = lr;
    adamw_step({&p}, {&g}, state, cfg);
  }

  // independent re-derivation of the update rule
  double x = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    double gv = grads[t - 1];
    const double norm = std::abs(gv);
    if (norm > clip) gv *= clip / norm;
    m = b1 * m + (1 - b1) * gv;
    v = b2 * v + (1 - b2) * gv * gv;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    x = x * (1 - lr * wd) - lr * mhat / (std::sqrt(vhat) + eps);
  }
  CHECK(p.at(0, 0) == doctest::Approx(x).epsilon(1e-12));
}

TEST_CASE("adamw lr zero changes nothing, decay factor is exact") {
  Rng rng(8);
  Matrix p = random_matrix(3, 3, rng);
  const Matrix before = p;
  Matrix g = random_matrix(3, 3, rng);
  AdamWState state;
  AdamWConfig cfg;
  cfg.lr = 0.0;
  adamw_step({&p}, {&g}, state, cfg);
  CHECK(p == before);

  // zero grads, wd > 0: every weight shrinks by exactly (1 - lr*wd)
  Matrix q = random_matrix(4, 2, rng);
  const Matrix qb = q;
  Matrix zero(4, 2);
  AdamWState s2;
  AdamWConfig c2;
  c2.lr = 0.05;
  c2.weight_decay = 0.1;
  adamw_step({&q}, {&zero}, s2, c2);
  const double factor = 1.0 - c2.lr * c2.weight_decay;
  for (std::size_t i = 0; i < q.data.size(); ++i)
    CHECK(q.data[i] == qb.data[i] * factor);
}

TEST_CASE("backward passes survive grad_check on 20 random shapes") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.index(4);
    const std::size_t d_in = 2 + rng.index(4);
    const std::size_t d_h = 2 + rng.index(5);
    const std::size_t d_out = 2 + rng.index(4);
    const Matrix x = random_matrix(n, d_in, rng);
    Matrix w1 = random_matrix(d_in, d_h, rng);
    Matrix b1 = random_matrix(1, d_h, rng);
    Matrix w2 = random_matrix(d_h, d_out, rng);
    Matrix b2 = random_matrix(1, d_out, rng);
    const Matrix target = random_matrix(n, d_out, rng);

    const auto loss = [&]() {
      return mse_loss(affine(gelu(affine(x, w1, b1)), w2, b2), target);
    };

    const Matrix h_pre = affine(x, w1, b1);
    const Matrix h_act = gelu(h_pre);
    const Matrix y = affine(h_act, w2, b2);
    const Matrix dy = mse_loss_grad(y, target);
    AffineGrads l2 = affine_backward(h_act, w2, dy);
    const Matrix dh = gelu_backward(h_pre, l2.dx);
    AffineGrads l1 = affine_backward(x, w1, dh, false);

    const GradCheckReport report = grad_check(
        loss, {{"w1", &w1, &l1.dw, false},
               {"b1", &b1, &l1.db, false},
               {"w2", &w2, &l2.dw, false},
               {"b2", &b2, &l2.db, false}});
    CHECK_MESSAGE(report.passed, "trial ", trial, " worst ", report.worst_param,
                  " rel ", report.max_rel_err);
    CHECK(report.max_rel_err <= 1e-4);
  }
}

TEST_CASE("cosine schedule warm-up and decay endpoints") {
  const double peak = 5e-5;
  CHECK(cosine_lr(0, 1500, peak) == 0.0);
  CHECK(cosine_lr(1499, 1500, peak) <= 1e-7 * peak);
  // near-peak right after warm-up, decaying through the phase
  const std::size_t warmup = 15;  // 1% of 1500
  CHECK(cosine_lr(warmup, 1500, peak) == doctest::Approx(peak));
  CHECK(cosine_lr(warmup / 2, 1500, peak) < cosine_lr(warmup, 1500, peak));
  CHECK(cosine_lr(750, 1500, peak) < cosine_lr(warmup, 1500, peak));
  // tiny phases still end at zero
  CHECK(cosine_lr(1, 2, peak) == 0.0);
  CHECK(cosine_lr(4, 5, peak) <= 1e-7 * peak);
}

TEST_CASE("kernels are deterministic") {
  Rng rng(10);
  const Matrix a = random_matrix(30, 30, rng);
  const Matrix b = random_matrix(30, 30, rng);
  CHECK(matmul(a, b) == matmul(a, b));
  CHECK(gelu(a) == gelu(a));
  CHECK(softmax_rows(a) == softmax_rows(a));
}

}  // TEST_SUITE
