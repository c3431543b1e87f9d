#include "clb/data/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "clb/core/errors.hpp"

namespace clb {

void flip_horizontal(std::span<float> image, const InputShape& shape) {
  const std::size_t w = shape.width;
  for (std::size_t row = 0; row < shape.channels * shape.height; ++row) {
    float* r = image.data() + row * w;
    for (std::size_t x = 0; x < w / 2; ++x) std::swap(r[x], r[w - 1 - x]);
  }
}

void rotate(std::span<float> image, const InputShape& shape, double degrees) {
  if (degrees == 0.0) return;
  const std::size_t h = shape.height, w = shape.width;
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
  std::vector<float> src(image.begin(), image.end());
  for (std::size_t ch = 0; ch < shape.channels; ++ch) {
    const float* in = src.data() + ch * h * w;
    float* out = image.data() + ch * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        // Inverse map: output pixel -> source position.
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        const double sx = c * dx + s * dy + cx, sy = -s * dx + c * dy + cy;
        const double fx = std::floor(sx), fy = std::floor(sy);
        const double ax = sx - fx, ay = sy - fy;
        const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
        auto at = [&](long yy, long xx) -> double {
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) return 0.0;
          return in[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
        };
        const double v = (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
                         ay * ((1 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1));
        out[y * w + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

void augment(std::span<float> batch, const InputShape& shape, Rng& rng, const AugmentOptions& options) {
  const std::size_t per = shape.numel();
  if (per == 0 || batch.size() % per != 0) {
    throw ShapeError("augment: batch of " + std::to_string(batch.size()) +
                     " values is not a whole number of images");
  }
  for (std::size_t n = 0; n < batch.size() / per; ++n) {
    auto img = batch.subspan(n * per, per);
    // Always draw all three numbers so the stream position depends only on n.
    const bool flip = rng.bernoulli(options.flip_probability);
    const bool turn = rng.bernoulli(options.rotate_probability);
    const double angle = rng.uniform(-options.max_degrees, options.max_degrees);
    if (flip) flip_horizontal(img, shape);
    if (turn) rotate(img, shape, angle);
  }
}

void augment(std::span<float> batch, const InputShape& shape, std::uint64_t seed,
             const AugmentOptions& options) {
  Rng rng(seed);
  augment(batch, shape, rng, options);
}

}  // namespace clb
