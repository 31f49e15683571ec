#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mdmsteer/core.hpp"
#include "mdmsteer/denoiser.hpp"
#include "mdmsteer/logz_head.hpp"
#include "mdmsteer/optim.hpp"

namespace mdmsteer {

// Binary layout: the 9-byte magic "MDMSTEER1", then fields in declaration
// order (strings and f64 arrays are u64-length prefixed, integers are u64/i64,
// all little-endian), then a u64 FNV-1a checksum of every preceding byte.
struct Checkpoint {
  std::string stage;        // "pretrain" or a fine-tuning method name
  std::string config_text;  // serialized RunConfig of the producing run
  std::string schedule;     // NoiseSchedule descriptor
  std::string architecture;
  std::vector<double> params;
  std::vector<double> ema;  // empty when EMA is off
  double ema_decay = 0.0;
  std::int64_t steps = 0;
  double adam_lr = 0.0;
  std::int64_t adam_step = 0;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::string head_architecture;  // empty without a log Z head
  std::vector<double> head_params;
  std::int64_t head_adam_step = 0;
  std::vector<double> head_adam_m;
  std::vector<double> head_adam_v;
  double log_z_scalar = 0.0;

  // Rebuilds the denoiser; use_ema selects the EMA weights when present.
  std::unique_ptr<Denoiser> make_model(bool use_ema = false) const;
  NoiseSchedule make_schedule() const { return NoiseSchedule::from_descriptor(schedule); }
  // Throws ConfigError when the checkpoint has no head.
  LogZHead make_head() const;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
// Throws ParseError on a bad magic, truncation or checksum mismatch.
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::uint64_t fnv1a64(const unsigned char* data, std::size_t size);

}  // namespace mdmsteer
