#pragma once

#include <cstdint>

namespace mdmsteer {

// Model and reward evaluations made during one train or inference step.
// A "call" is one denoiser forward pass on one input sequence.
struct CallCounter {
  std::int64_t pretrained = 0;
  std::int64_t finetuned = 0;
  std::int64_t reward = 0;

  void reset() { *this = CallCounter{}; }

  void count_model(bool finetuned_model) {
    if (finetuned_model) {
      ++finetuned;
    } else {
      ++pretrained;
    }
  }
};

inline void count_model(CallCounter* counter, bool finetuned_model) {
  if (counter) counter->count_model(finetuned_model);
}

inline void count_reward(CallCounter* counter) {
  if (counter) ++counter->reward;
}

}  // namespace mdmsteer
