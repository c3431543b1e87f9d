#include "clb/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "clb/core/errors.hpp"

namespace clb {

const std::vector<std::string>& expression_labels() {
  static const std::vector<std::string> labels{"Neutral",  "Anger",     "Contempt", "Disgust",
                                               "Fearful",  "Happiness", "Sadness",  "Surprised"};
  return labels;
}

void validate(const SyntheticSpec& spec) {
  if (spec.n_classes < 1) throw ArgumentError("synthetic: n_classes must be >= 1");
  if (spec.train_per_class < 1 || spec.test_per_class < 1) {
    throw ArgumentError("synthetic: samples per class must be >= 1");
  }
  if (!(spec.separation > 0.0 && spec.separation <= 1.0)) {
    throw ArgumentError("synthetic: separation must be in (0, 1]");
  }
  if (!(spec.jitter >= 0.0 && spec.jitter < 0.5)) throw ArgumentError("synthetic: jitter must be in [0, 0.5)");
  if (!(spec.contrast >= 0.0 && spec.contrast < 1.0)) throw ArgumentError("synthetic: contrast must be in [0, 1)");
  if (!(spec.noise >= 0.0) || !std::isfinite(spec.noise)) throw ArgumentError("synthetic: noise must be >= 0");
  if (spec.shape.channels < 1 || spec.shape.height < 4 || spec.shape.width < 4) {
    throw ArgumentError("synthetic: image must be at least 1x4x4");
  }
  if (!spec.class_names.empty() && spec.class_names.size() != spec.n_classes) {
    throw ArgumentError("synthetic: " + std::to_string(spec.class_names.size()) + " class names for " +
                        std::to_string(spec.n_classes) + " classes");
  }
}

namespace {

std::vector<std::string> class_names_for(const SyntheticSpec& spec) {
  if (!spec.class_names.empty()) return spec.class_names;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < spec.n_classes; ++k) {
    names.push_back(spec.n_classes <= 8 ? expression_labels()[k] : "class_" + std::to_string(k));
  }
  return names;
}

std::vector<float> raw_glyph(const InputShape& shape, std::size_t k, std::size_t n, double oy = 0, double ox = 0) {
  const double h = static_cast<double>(shape.height), w = static_cast<double>(shape.width);
  const double size = std::min(h, w);
  const double theta = std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
  const double phi = 2.0 * std::numbers::pi * (static_cast<double>(k) + 0.5) / static_cast<double>(n);
  const double cy = (h - 1) / 2 + oy, cx = (w - 1) / 2 + ox;
  const double by = cy + 0.3 * size * std::sin(phi), bx = cx + 0.3 * size * std::cos(phi);
  const double bar_half_width = 0.06 * size, bar_half_length = 0.4 * size, blob_sigma = 0.1 * size;
  std::vector<float> out(shape.numel());
  const std::size_t plane = shape.height * shape.width;
  for (std::size_t y = 0; y < shape.height; ++y) {
    for (std::size_t x = 0; x < shape.width; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double along = dx * std::cos(theta) + dy * std::sin(theta);
      const double across = -dx * std::sin(theta) + dy * std::cos(theta);
      const double bar = std::abs(along) <= bar_half_length
                             ? std::exp(-0.5 * (across * across) / (bar_half_width * bar_half_width))
                             : 0.0;
      const double ry = static_cast<double>(y) - by, rx = static_cast<double>(x) - bx;
      const double blob = std::exp(-0.5 * (ry * ry + rx * rx) / (blob_sigma * blob_sigma));
      // Gray images see both shapes; colour channels split them.
      const double both = std::max(bar, blob);
      for (std::size_t c = 0; c < shape.channels; ++c) {
        const double v = shape.channels == 1 ? both : (c % 3 == 0 ? both : c % 3 == 1 ? bar : blob);
        out[c * plane + y * shape.width + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

std::vector<float> mixed_glyph(const SyntheticSpec& spec, std::size_t class_index, double oy, double ox) {
  std::vector<float> mean(spec.shape.numel(), 0.0f);
  std::vector<float> own;
  for (std::size_t k = 0; k < spec.n_classes; ++k) {
    if (spec.separation == 1.0 && k != class_index) continue;
    auto g = raw_glyph(spec.shape, k, spec.n_classes, oy, ox);
    for (std::size_t i = 0; i < g.size(); ++i) mean[i] += g[i] / static_cast<float>(spec.n_classes);
    if (k == class_index) own = std::move(g);
  }
  const double s = spec.separation;
  for (std::size_t i = 0; i < own.size(); ++i) {
    own[i] = static_cast<float>((1.0 - s) * mean[i] + s * own[i]);
  }
  return own;
}

}  // namespace

std::vector<float> synthetic_glyph(const SyntheticSpec& spec, std::size_t class_index) {
  validate(spec);
  if (class_index >= spec.n_classes) throw ArgumentError("synthetic: class index out of range");
  return mixed_glyph(spec, class_index, 0.0, 0.0);
}

DatasetPair gen_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  DatasetPair out;
  const auto names = class_names_for(spec);
  std::vector<std::vector<float>> glyphs;
  for (std::size_t k = 0; k < spec.n_classes; ++k) glyphs.push_back(synthetic_glyph(spec, k));
  const double max_shift = spec.jitter * static_cast<double>(std::min(spec.shape.height, spec.shape.width));

  Rng root(spec.seed);
  Rng train_rng = root.fork(), test_rng = root.fork();
  auto fill = [&](LabeledDataset& ds, Partition part, std::size_t per_class, Rng& rng) {
    ds.shape = spec.shape;
    ds.class_names = names;
    ds.partition = part;
    ds.images.reserve(per_class * spec.n_classes * spec.shape.numel());
    std::vector<float> img(spec.shape.numel());
    for (std::size_t k = 0; k < spec.n_classes; ++k) {
      for (std::size_t n = 0; n < per_class; ++n) {
        const bool vary = spec.jitter > 0.0 || spec.contrast > 0.0;
        std::vector<float> shifted;
        double gain = 1.0;
        if (vary) {
          const double oy = max_shift * (2.0 * rng.uniform() - 1.0), ox = max_shift * (2.0 * rng.uniform() - 1.0);
          gain = 1.0 - spec.contrast * rng.uniform();
          shifted = mixed_glyph(spec, k, oy, ox);
        }
        const auto& g = vary ? shifted : glyphs[k];
        for (std::size_t i = 0; i < img.size(); ++i) {
          const double v = gain * g[i] + (spec.noise > 0.0 ? spec.noise * rng.normal() : 0.0);
          img[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
        ds.push_back(img, k);
      }
    }
  };
  fill(out.train, Partition::Train, spec.train_per_class, train_rng);
  fill(out.test, Partition::Test, spec.test_per_class, test_rng);
  return out;
}

}  // namespace clb
