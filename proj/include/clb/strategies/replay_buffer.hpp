#pragma once

#include <span>
#include <vector>

#include "clb/core/rng.hpp"

namespace clb {

/// Fixed-capacity store of (item, label) pairs with class-balanced reservoir
/// eviction. Until full, every item is kept. Once full, an item of a class
/// that is not among the largest replaces a random item of a random largest
/// class; an item of a largest class replaces a random item of its own class
/// with probability count/seen (plain reservoir within the class).
///
/// At capacity every class c holds at least min(seen_c, max_count - 1) items,
/// so classes that supplied enough items differ by at most one.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t item_size);

  std::size_t capacity() const { return capacity_; }
  std::size_t item_size() const { return item_size_; }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }

  void insert(std::span<const float> item, std::size_t label, Rng& rng);

  std::span<const float> item(std::size_t slot) const {
    return std::span<const float>(items_).subspan(slot * item_size_, item_size_);
  }
  std::size_t label(std::size_t slot) const { return labels_[slot]; }
  /// Count per label, indexed by label (length = largest label seen + 1).
  std::vector<std::size_t> class_counts() const;
  /// Number of insert() calls per label.
  const std::vector<std::size_t>& seen_counts() const { return seen_; }

  /// n slots drawn uniformly without replacement (with replacement only
  /// beyond size()). Throws ArgumentError on an empty buffer.
  std::vector<std::size_t> sample(std::size_t n, Rng& rng) const;

 private:
  void place(std::size_t slot, std::span<const float> item, std::size_t label);
  std::size_t random_slot_of(std::size_t label, Rng& rng) const;

  std::size_t capacity_;
  std::size_t item_size_;
  std::vector<float> items_;
  std::vector<std::size_t> labels_;
  std::vector<std::vector<std::size_t>> slots_by_class_;
  std::vector<std::size_t> seen_;
};

}  // namespace clb
