#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace clb {

struct Ordering {
  std::string name;
  /// Class indices into the dataset's class_names, in learning order.
  std::vector<std::size_t> classes;
};

/// Preset class-name sequences over the eight expression labels.
const std::vector<std::string>& preset_order(const std::string& name);

/// Builds an ordering for a dataset's class names:
/// - "o1", "o2", "o3": presets; preset labels absent from the dataset are
///   skipped, and every dataset class must appear in the preset.
/// - "identity": dataset order.
/// - "shuffle": seeded permutation.
/// - "custom": the names in `custom`, which must be a permutation.
/// Throws ArgumentError on an unknown name, unknown or duplicate classes.
Ordering make_ordering(const std::string& name, const std::vector<std::string>& class_names,
                       const std::vector<std::string>& custom = {}, std::uint64_t seed = 0);

/// Task-IL grouping: consecutive pairs, the last alone when the count is odd.
std::vector<std::vector<std::size_t>> task_groups(const Ordering& ordering);

}  // namespace clb
