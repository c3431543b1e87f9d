#pragma once

#include <cstdint>
#include <span>

#include "clb/core/rng.hpp"
#include "clb/models/lenet.hpp"

namespace clb {

struct AugmentOptions {
  double flip_probability = 0.5;
  double rotate_probability = 0.5;
  double max_degrees = 30.0;
};

/// Mirrors one [C,H,W] image left-right in place.
void flip_horizontal(std::span<float> image, const InputShape& shape);

/// Rotates one [C,H,W] image about its centre, bilinear, with pixels that
/// fall outside the frame filled with 0. Angle 0 returns the input exactly.
void rotate(std::span<float> image, const InputShape& shape, double degrees);

/// Per image: flip with flip_probability, then rotate by U(-max, max) with
/// rotate_probability. Draws come from `rng` in image order.
void augment(std::span<float> batch, const InputShape& shape, Rng& rng,
             const AugmentOptions& options = {});

void augment(std::span<float> batch, const InputShape& shape, std::uint64_t seed,
             const AugmentOptions& options = {});

}  // namespace clb
