#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "clb/core/rng.hpp"
#include "clb/core/tensor.hpp"
#include "clb/models/lenet.hpp"

namespace clb {

enum class Partition { Train, Test };

/// Images [N,C,H,W] in [0,1], stored as float whatever the training
/// precision is.
struct LabeledDataset {
  InputShape shape;
  std::vector<float> images;
  std::vector<std::size_t> labels;
  std::vector<std::string> class_names;
  Partition partition = Partition::Train;

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return class_names.size(); }
  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(images).subspan(i * shape.numel(), shape.numel());
  }
  void push_back(std::span<const float> pixels, std::size_t label);
  /// Checks labels and buffer sizes; throws ArgumentError.
  void validate() const;
  std::vector<std::size_t> class_counts() const;
  std::vector<std::size_t> indices_of(std::size_t label) const;
};

struct DatasetPair {
  LabeledDataset train;
  LabeledDataset test;
};

enum class Scenario { TaskIL, ClassIL };

std::string to_string(Scenario s);
Scenario parse_scenario(const std::string& text);

/// One protocol increment. Indices point into the parent datasets.
struct Unit {
  std::vector<std::size_t> classes;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

/// Class-IL: one unit per class in `order`. Task-IL: consecutive pairs, the
/// last unit holding a single class when the count is odd. Throws
/// ArgumentError when a class has no train or no test samples, or when
/// `order` is not a permutation of the dataset's classes.
std::vector<Unit> split_by_classes(const DatasetPair& data, const std::vector<std::size_t>& order,
                                   Scenario scenario);

/// Classes above `cap` are subsampled uniformly to exactly `cap`; kept samples
/// retain their relative order. Classes at or below `cap` are untouched.
LabeledDataset downsample_cap(const LabeledDataset& ds, std::size_t cap, std::uint64_t seed);

/// Stacks the chosen images into a [n,C,H,W] tensor.
template <typename T>
Tensor<T> gather_images(const LabeledDataset& ds, std::span<const std::size_t> indices);

std::vector<std::size_t> gather_labels(const LabeledDataset& ds, std::span<const std::size_t> indices);

}  // namespace clb
