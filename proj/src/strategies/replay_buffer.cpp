#include "clb/strategies/replay_buffer.hpp"

#include <algorithm>

#include "clb/core/errors.hpp"

namespace clb {

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t item_size)
    : capacity_(capacity), item_size_(item_size) {
  if (capacity == 0) throw ArgumentError("replay buffer: capacity must be >= 1");
  if (item_size == 0) throw ArgumentError("replay buffer: item size must be >= 1");
}

void ReplayBuffer::place(std::size_t slot, std::span<const float> item, std::size_t label) {
  std::copy(item.begin(), item.end(), items_.begin() + static_cast<std::ptrdiff_t>(slot * item_size_));
  auto& old_slots = slots_by_class_[labels_[slot]];
  old_slots.erase(std::find(old_slots.begin(), old_slots.end(), slot));
  labels_[slot] = label;
  slots_by_class_[label].push_back(slot);
}

std::size_t ReplayBuffer::random_slot_of(std::size_t label, Rng& rng) const {
  const auto& s = slots_by_class_[label];
  return s[rng.index(s.size())];
}

void ReplayBuffer::insert(std::span<const float> item, std::size_t label, Rng& rng) {
  if (item.size() != item_size_) {
    throw ArgumentError("replay buffer: item of " + std::to_string(item.size()) + " values, expected " +
                        std::to_string(item_size_));
  }
  if (label >= seen_.size()) {
    seen_.resize(label + 1, 0);
    slots_by_class_.resize(label + 1);
  }
  ++seen_[label];
  if (labels_.size() < capacity_) {
    items_.insert(items_.end(), item.begin(), item.end());
    slots_by_class_[label].push_back(labels_.size());
    labels_.push_back(label);
    return;
  }
  std::size_t largest = 0;
  for (const auto& s : slots_by_class_) largest = std::max(largest, s.size());
  if (slots_by_class_[label].size() < largest) {
    std::vector<std::size_t> candidates;
    for (std::size_t k = 0; k < slots_by_class_.size(); ++k) {
      if (slots_by_class_[k].size() == largest) candidates.push_back(k);
    }
    const std::size_t victim = candidates[rng.index(candidates.size())];
    place(random_slot_of(victim, rng), item, label);
    return;
  }
  const double keep = static_cast<double>(slots_by_class_[label].size()) / static_cast<double>(seen_[label]);
  if (rng.bernoulli(keep)) place(random_slot_of(label, rng), item, label);
}

std::vector<std::size_t> ReplayBuffer::class_counts() const {
  std::vector<std::size_t> out;
  for (const auto& s : slots_by_class_) out.push_back(s.size());
  return out;
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (labels_.empty()) throw ArgumentError("replay buffer: cannot sample from an empty buffer");
  std::vector<std::size_t> pool = iota_indices(labels_.size());
  std::vector<std::size_t> out;
  out.reserve(n);
  while (out.size() < n) {
    // Partial Fisher-Yates: the first k entries become a uniform draw.
    const std::size_t k = std::min(n - out.size(), pool.size());
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
    out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

}  // namespace clb
