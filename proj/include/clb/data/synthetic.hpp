#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clb/data/dataset.hpp"

namespace clb {

/// The eight expression labels, in the order used by preset orderings.
const std::vector<std::string>& expression_labels();

struct SyntheticSpec {
  std::size_t n_classes = 8;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 50;
  InputShape shape{1, 32, 32};
  /// Class separation in (0, 1]: each image is (1-s)*mean_glyph + s*glyph.
  double separation = 1.0;
  double noise = 0.1;
  /// Per-sample nuisance: uniform glyph shift of up to jitter*min(H,W)
  /// pixels per axis, and intensity gain drawn from [1-contrast, 1].
  double jitter = 0.1;
  double contrast = 0.5;
  std::uint64_t seed = 0;
  /// Defaults to expression_labels() for up to 8 classes, "class_k" beyond.
  std::vector<std::string> class_names;
};

/// Throws ArgumentError on a bad SyntheticSpec field.
void validate(const SyntheticSpec& spec);

/// Class-specific glyph in [0,1] for one [C,H,W] image: an oriented bar and
/// an off-centre blob, both placed by class index.
std::vector<float> synthetic_glyph(const SyntheticSpec& spec, std::size_t class_index);

/// Glyph plus N(0, noise^2) per pixel, clamped to [0,1]. Samples are ordered
/// by class, train and test drawn from separate streams of `seed`.
DatasetPair gen_synthetic(const SyntheticSpec& spec);

}  // namespace clb
