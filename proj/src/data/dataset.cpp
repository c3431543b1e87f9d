#include "clb/data/dataset.hpp"

#include <algorithm>

#include "clb/core/errors.hpp"

namespace clb {

void LabeledDataset::push_back(std::span<const float> pixels, std::size_t label) {
  if (pixels.size() != shape.numel()) {
    throw ShapeError("dataset: image has " + std::to_string(pixels.size()) + " values, expected " +
                     std::to_string(shape.numel()));
  }
  images.insert(images.end(), pixels.begin(), pixels.end());
  labels.push_back(label);
}

void LabeledDataset::validate() const {
  if (images.size() != labels.size() * shape.numel()) {
    throw ArgumentError("dataset: " + std::to_string(images.size()) + " pixel values for " +
                        std::to_string(labels.size()) + " images");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= class_names.size()) {
      throw ArgumentError("dataset: sample " + std::to_string(i) + " has label " +
                          std::to_string(labels[i]) + " but only " +
                          std::to_string(class_names.size()) + " classes");
    }
  }
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(class_names.size(), 0);
  for (std::size_t l : labels) ++counts.at(l);
  return counts;
}

std::vector<std::size_t> LabeledDataset::indices_of(std::size_t label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) out.push_back(i);
  }
  return out;
}

std::string to_string(Scenario s) { return s == Scenario::TaskIL ? "task-il" : "class-il"; }

Scenario parse_scenario(const std::string& text) {
  if (text == "task-il") return Scenario::TaskIL;
  if (text == "class-il") return Scenario::ClassIL;
  throw ArgumentError("unknown scenario '" + text + "' (expected task-il or class-il)");
}

std::vector<Unit> split_by_classes(const DatasetPair& data, const std::vector<std::size_t>& order,
                                   Scenario scenario) {
  const std::size_t c = data.train.num_classes();
  if (data.test.num_classes() != c) throw ArgumentError("split: train and test class counts differ");
  std::vector<std::size_t> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != iota_indices(c)) {
    throw ArgumentError("split: ordering is not a permutation of the " + std::to_string(c) + " classes");
  }
  const std::size_t per_unit = scenario == Scenario::TaskIL ? 2 : 1;
  std::vector<Unit> units;
  for (std::size_t start = 0; start < order.size(); start += per_unit) {
    Unit u;
    for (std::size_t k = start; k < std::min(start + per_unit, order.size()); ++k) u.classes.push_back(order[k]);
    units.push_back(std::move(u));
  }
  auto fill = [&](const LabeledDataset& ds, auto member, const char* what) {
    std::vector<std::size_t> unit_of(c);
    for (std::size_t u = 0; u < units.size(); ++u) {
      for (std::size_t k : units[u].classes) unit_of[k] = u;
    }
    for (std::size_t i = 0; i < ds.size(); ++i) (units[unit_of[ds.labels[i]]].*member).push_back(i);
    const auto counts = ds.class_counts();
    for (std::size_t k = 0; k < c; ++k) {
      if (counts[k] == 0) {
        throw ArgumentError("split: class '" + ds.class_names[k] + "' has no " + what + " samples");
      }
    }
  };
  fill(data.train, &Unit::train_indices, "train");
  fill(data.test, &Unit::test_indices, "test");
  return units;
}

LabeledDataset downsample_cap(const LabeledDataset& ds, std::size_t cap, std::uint64_t seed) {
  if (cap == 0) throw ArgumentError("downsample_cap: cap must be >= 1");
  Rng rng(seed);
  std::vector<char> keep(ds.size(), 1);
  for (std::size_t k = 0; k < ds.num_classes(); ++k) {
    auto idx = ds.indices_of(k);
    if (idx.size() <= cap) continue;
    rng.shuffle(idx);
    for (std::size_t j = cap; j < idx.size(); ++j) keep[idx[j]] = 0;
  }
  LabeledDataset out;
  out.shape = ds.shape;
  out.class_names = ds.class_names;
  out.partition = ds.partition;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (keep[i]) out.push_back(ds.image(i), ds.labels[i]);
  }
  return out;
}

template <typename T>
Tensor<T> gather_images(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  const auto& s = ds.shape;
  Tensor<T> out({indices.size(), s.channels, s.height, s.width});
  T* dst = out.values().data();
  for (std::size_t i : indices) {
    const auto img = ds.image(i);
    std::copy(img.begin(), img.end(), dst);
    dst += img.size();
  }
  return out;
}

std::vector<std::size_t> gather_labels(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(ds.labels[i]);
  return out;
}

template Tensor<float> gather_images<float>(const LabeledDataset&, std::span<const std::size_t>);
template Tensor<double> gather_images<double>(const LabeledDataset&, std::span<const std::size_t>);

}  // namespace clb
