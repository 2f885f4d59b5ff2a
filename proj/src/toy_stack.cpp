#include "chartmix/toy_stack.hpp"

#include <cctype>
#include <cmath>

#include "chartmix/errors.hpp"
#include "chartmix/numkit.hpp"
#include "chartmix/rng.hpp"

namespace chartmix {

Raster::Raster(int w, int h, std::array<std::uint8_t, 3> fill)
    : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3) {
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = fill[0];
    rgb[i + 1] = fill[1];
    rgb[i + 2] = fill[2];
  }
}

void Raster::set_pixel(int x, int y, std::array<std::uint8_t, 3> c) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  std::uint8_t* p = pixel(x, y);
  p[0] = c[0];
  p[1] = c[1];
  p[2] = c[2];
}

namespace {

double luminance(const std::uint8_t* px) {
  return (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]) / 255.0;
}

}  // namespace

PatchEncoder::PatchEncoder(std::size_t grid, std::size_t d_in, std::uint64_t seed)
    : grid_(grid) {
  if (grid < 1) throw ConfigError("PatchEncoder: grid must be >= 1");
  Rng rng(seed);
  proj_ = Matrix::xavier(kFeatureCount, d_in, rng);
}

Matrix PatchEncoder::encode(const Raster& raster) const {
  if (raster.empty()) throw UsageError("encode: empty raster");
  if (raster.width < static_cast<int>(grid_) || raster.height < static_cast<int>(grid_))
    throw UsageError("encode: raster smaller than the patch grid");

  const std::size_t n = token_count();
  Matrix stats(n, kFeatureCount);

#pragma omp parallel for schedule(static)
  for (long long t = 0; t < static_cast<long long>(n); ++t) {
    const std::size_t py = static_cast<std::size_t>(t) / grid_;
    const std::size_t px = static_cast<std::size_t>(t) % grid_;
    const int x0 = static_cast<int>(px * raster.width / grid_);
    const int x1 = static_cast<int>((px + 1) * raster.width / grid_);
    const int y0 = static_cast<int>(py * raster.height / grid_);
    const int y1 = static_cast<int>((py + 1) * raster.height / grid_);
    const double count = static_cast<double>(x1 - x0) * (y1 - y0);

    double mean_r = 0.0, mean_g = 0.0, mean_b = 0.0;
    double luma_sum = 0.0, luma_sq = 0.0;
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        const std::uint8_t* p = raster.pixel(x, y);
        mean_r += p[0];
        mean_g += p[1];
        mean_b += p[2];
        const double l = luminance(p);
        luma_sum += l;
        luma_sq += l * l;
      }
    // statistics are measured relative to a blank white canvas, so background
    // patches map to the zero token and contribute nothing to pooled features
    mean_r = mean_r / (255.0 * count) - 1.0;
    mean_g = mean_g / (255.0 * count) - 1.0;
    mean_b = mean_b / (255.0 * count) - 1.0;
    const double luma_mean = luma_sum / count;
    const double luma_var = std::max(0.0, luma_sq / count - luma_mean * luma_mean);

    double edge_h = 0.0, edge_v = 0.0;
    std::size_t edge_h_n = 0, edge_v_n = 0;
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1 - 1; ++x) {
        edge_h += std::abs(luminance(raster.pixel(x + 1, y)) - luminance(raster.pixel(x, y)));
        ++edge_h_n;
      }
    for (int y = y0; y < y1 - 1; ++y)
      for (int x = x0; x < x1; ++x) {
        edge_v += std::abs(luminance(raster.pixel(x, y + 1)) - luminance(raster.pixel(x, y)));
        ++edge_v_n;
      }
    if (edge_h_n > 0) edge_h /= static_cast<double>(edge_h_n);
    if (edge_v_n > 0) edge_v /= static_cast<double>(edge_v_n);

    stats.at(t, 0) = mean_r;
    stats.at(t, 1) = mean_g;
    stats.at(t, 2) = mean_b;
    stats.at(t, 3) = luma_var;
    stats.at(t, 4) = edge_h;
    stats.at(t, 5) = edge_v;
  }
  return matmul(stats, proj_);
}

TextEmbedder::TextEmbedder(std::size_t hash_dim, std::size_t embed_dim,
                           std::uint64_t seed)
    : hash_dim_(hash_dim) {
  if (hash_dim < 1) throw ConfigError("TextEmbedder: hash_dim must be >= 1");
  Rng rng(seed);
  proj_ = Matrix::xavier(hash_dim, embed_dim, rng);
}

namespace {

// FNV-1a, fixed here so hashing does not depend on the standard library.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

Matrix TextEmbedder::embed(const std::string& text) const {
  std::vector<double> counts(hash_dim_, 0.0);
  std::string token;
  auto flush = [&]() {
    if (token.empty()) return;
    counts[fnv1a(token) % hash_dim_] += 1.0;
    token.clear();
  };
  for (char ch : text) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '.' || c == '#')
      token.push_back(static_cast<char>(std::tolower(c)));
    else
      flush();
  }
  flush();

  Matrix bag(1, hash_dim_);
  bag.data = std::move(counts);
  Matrix out = matmul(bag, proj_);
  double norm = 0.0;
  for (double v : out.data) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0.0)
    for (double& v : out.data) v /= norm;
  return out;
}

DecoderHead DecoderHead::create(std::size_t d_out, std::size_t embed_dim,
                                std::size_t rank, double scale, std::uint64_t seed) {
  DecoderHead head;
  Rng rng(seed);
  head.w = Matrix::xavier(d_out, embed_dim, rng);
  head.lora_a = Matrix::xavier(d_out, rank, rng);
  head.lora_b = Matrix(rank, embed_dim);  // zero: adapter silent at step 0
  head.scale = scale;
  return head;
}

Matrix DecoderHead::effective_weight() const {
  Matrix delta = matmul(lora_a, lora_b);
  Matrix eff = w;
  for (std::size_t i = 0; i < eff.data.size(); ++i)
    eff.data[i] += scale * delta.data[i];
  return eff;
}

Matrix DecoderHead::decode(const Matrix& pooled) const {
  if (pooled.cols != d_out()) throw DimensionError("decode: pooled width != D_out");
  return matmul(pooled, effective_weight());
}

Matrix DecoderHead::decode_frozen(const Matrix& pooled) const {
  if (pooled.cols != d_out()) throw DimensionError("decode_frozen: pooled width != D_out");
  return matmul(pooled, w);
}

DecoderHeadGrads head_backward(const DecoderHead& head, const Matrix& pooled,
                               const Matrix& dy, Matrix* dpooled) {
  if (dy.rows != pooled.rows || dy.cols != head.embed_dim())
    throw DimensionError("head_backward: dy shape mismatch");
  DecoderHeadGrads grads;
  // y = pooled * M with M = W + s*A*B; dM = pooled^T * dy.
  Matrix dm = matmul(pooled.transposed(), dy);
  grads.dlora_a = matmul(dm, head.lora_b.transposed());
  grads.dlora_b = matmul(head.lora_a.transposed(), dm);
  for (double& v : grads.dlora_a.data) v *= head.scale;
  for (double& v : grads.dlora_b.data) v *= head.scale;
  if (dpooled != nullptr) *dpooled = matmul(dy, head.effective_weight().transposed());
  return grads;
}

Matrix mean_pool_rows(const Matrix& tokens) {
  if (tokens.rows == 0) throw UsageError("mean_pool_rows: no rows");
  Matrix out(1, tokens.cols);
  for (std::size_t i = 0; i < tokens.rows; ++i)
    for (std::size_t j = 0; j < tokens.cols; ++j) out.at(0, j) += tokens.at(i, j);
  for (double& v : out.data) v /= static_cast<double>(tokens.rows);
  return out;
}

Matrix mean_pool_rows_backward(const Matrix& dpooled, std::size_t n_rows) {
  Matrix d(n_rows, dpooled.cols);
  const double inv = 1.0 / static_cast<double>(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i)
    for (std::size_t j = 0; j < dpooled.cols; ++j)
      d.at(i, j) = dpooled.at(0, j) * inv;
  return d;
}

}  // namespace chartmix
