#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mdmsteer/core.hpp"

namespace mdmsteer {

// Ring store of clean sequences; once full, each push overwrites the oldest
// entry.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 10000);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  void push(const Sequence& x);
  void push(std::span<const Sequence> xs);

  // Uniform draws with replacement. Throws EmptyBuffer.
  std::vector<Sequence> sample(std::size_t batch_size, Rng& rng) const;
  // Contents from oldest to newest.
  std::vector<Sequence> contents() const;

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<Sequence> items_;
};

}  // namespace mdmsteer
