#include "mdmsteer/replay_buffer.hpp"

#include <random>

#include "mdmsteer/errors.hpp"

namespace mdmsteer {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw InvalidInput("replay buffer capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(const Sequence& x) {
  if (items_.size() < capacity_) {
    items_.push_back(x);
  } else {
    items_[cursor_] = x;
  }
  cursor_ = (cursor_ + 1) % capacity_;
}

void ReplayBuffer::push(std::span<const Sequence> xs) {
  for (const auto& x : xs) push(x);
}

std::vector<Sequence> ReplayBuffer::sample(std::size_t batch_size, Rng& rng) const {
  if (items_.empty()) throw EmptyBuffer("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<Sequence> out;
  out.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) out.push_back(items_[pick(rng)]);
  return out;
}

std::vector<Sequence> ReplayBuffer::contents() const {
  if (items_.size() < capacity_) return items_;
  std::vector<Sequence> out;
  out.reserve(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) out.push_back(items_[(cursor_ + i) % capacity_]);
  return out;
}

}  // namespace mdmsteer
