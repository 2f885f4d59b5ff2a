#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "chartmix/matrix.hpp"

namespace chartmix {

struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // 3 bytes per pixel, row-major

  Raster() = default;
  Raster(int w, int h, std::array<std::uint8_t, 3> fill = {255, 255, 255});

  std::uint8_t* pixel(int x, int y) { return &rgb[3 * (static_cast<std::size_t>(y) * width + x)]; }
  const std::uint8_t* pixel(int x, int y) const {
    return &rgb[3 * (static_cast<std::size_t>(y) * width + x)];
  }
  void set_pixel(int x, int y, std::array<std::uint8_t, 3> c);
  bool empty() const { return width <= 0 || height <= 0; }
};

// Frozen patch-statistics encoder standing in for a vision tower. The image is
// split into a g x g grid; each patch is reduced to 6 statistics (mean R/G/B,
// luminance variance, horizontal and vertical edge energy) and projected by a
// frozen seeded matrix into D_in dims. Tokens come out in row-major patch order.
class PatchEncoder {
 public:
  static constexpr std::size_t kFeatureCount = 6;

  PatchEncoder(std::size_t grid, std::size_t d_in, std::uint64_t seed);

  std::size_t grid() const { return grid_; }
  std::size_t token_count() const { return grid_ * grid_; }
  std::size_t d_in() const { return proj_.cols; }
  const Matrix& projection() const { return proj_; }

  Matrix encode(const Raster& raster) const;  // N x D_in

 private:
  std::size_t grid_;
  Matrix proj_;  // kFeatureCount x D_in, frozen
};

// Frozen hashed bag-of-tokens embedder for alignment targets. Output is
// L2-normalized (zero vector for text with no tokens).
class TextEmbedder {
 public:
  TextEmbedder(std::size_t hash_dim, std::size_t embed_dim, std::uint64_t seed);

  std::size_t embed_dim() const { return proj_.cols; }
  Matrix embed(const std::string& text) const;  // 1 x E

 private:
  std::size_t hash_dim_;
  Matrix proj_;  // hash_dim x E, frozen
};

// Frozen linear head with a trainable low-rank adapter:
// y = pooled * (W + scale * A * B). Only A and B receive gradients.
struct DecoderHead {
  Matrix w;       // D_out x E, frozen
  Matrix lora_a;  // D_out x r
  Matrix lora_b;  // r x E, zero at init so step 0 matches the frozen head
  double scale = 2.0;

  std::size_t d_out() const { return w.rows; }
  std::size_t embed_dim() const { return w.cols; }
  std::size_t rank() const { return lora_a.cols; }

  static DecoderHead create(std::size_t d_out, std::size_t embed_dim,
                            std::size_t rank, double scale, std::uint64_t seed);

  Matrix effective_weight() const;
  Matrix decode(const Matrix& pooled) const;          // with adapter
  Matrix decode_frozen(const Matrix& pooled) const;   // W only, used in alignment
};

struct DecoderHeadGrads {
  Matrix dlora_a, dlora_b;
};

// dy -> adapter gradients; dpooled (when non-null) receives the input gradient.
DecoderHeadGrads head_backward(const DecoderHead& head, const Matrix& pooled,
                               const Matrix& dy, Matrix* dpooled = nullptr);

// Mean over token rows -> 1 x D.
Matrix mean_pool_rows(const Matrix& tokens);

// Spreads d(pooled) back to token rows (each row gets d/N).
Matrix mean_pool_rows_backward(const Matrix& dpooled, std::size_t n_rows);

}  // namespace chartmix
