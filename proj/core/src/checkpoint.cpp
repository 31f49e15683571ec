#include "mdmsteer/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "mdmsteer/errors.hpp"

namespace mdmsteer {

namespace {

constexpr char kMagic[] = "MDMSTEER1";
constexpr std::size_t kMagicSize = sizeof(kMagic) - 1;

class Writer {
 public:
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void blob(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<double> blob() {
    const std::uint64_t n = u64();
    if (n > (size_ - pos_) / 8) throw ParseError("checkpoint truncated", 0);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  bool done() const { return pos_ == size_; }

 private:
  void need(std::uint64_t n) const {
    if (n > size_ - pos_) throw ParseError("checkpoint truncated", 0);
  }
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const unsigned char* data, std::size_t size) {
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::unique_ptr<Denoiser> Checkpoint::make_model(bool use_ema) const {
  auto model = make_denoiser(architecture);
  const auto& source = (use_ema && !ema.empty()) ? ema : params;
  if (source.size() != model->num_params()) {
    throw ParseError("checkpoint holds " + std::to_string(source.size()) + " parameters, architecture needs " +
                         std::to_string(model->num_params()),
                     0);
  }
  std::copy(source.begin(), source.end(), model->params().begin());
  return model;
}

LogZHead Checkpoint::make_head() const {
  if (head_architecture.empty()) throw ConfigError("checkpoint has no log Z head");
  LogZHead head = LogZHead::from_architecture(head_architecture);
  if (head_params.size() != head.num_params()) throw ParseError("log Z head parameter count mismatch", 0);
  std::copy(head_params.begin(), head_params.end(), head.params().begin());
  return head;
}

std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.raw(kMagic, kMagicSize);
  w.str(c.stage);
  w.str(c.config_text);
  w.str(c.schedule);
  w.str(c.architecture);
  w.blob(c.params);
  w.blob(c.ema);
  w.f64(c.ema_decay);
  w.i64(c.steps);
  w.f64(c.adam_lr);
  w.i64(c.adam_step);
  w.blob(c.adam_m);
  w.blob(c.adam_v);
  w.str(c.head_architecture);
  w.blob(c.head_params);
  w.i64(c.head_adam_step);
  w.blob(c.head_adam_m);
  w.blob(c.head_adam_v);
  w.f64(c.log_z_scalar);
  const std::uint64_t sum = fnv1a64(w.bytes().data(), w.bytes().size());
  w.u64(sum);
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < kMagicSize + 8 || std::memcmp(bytes.data(), kMagic, kMagicSize) != 0) {
    throw ParseError("not a checkpoint (bad magic)", 0);
  }
  const std::size_t body = bytes.size() - 8;
  Reader tail(bytes.data() + body, 8);
  if (tail.u64() != fnv1a64(bytes.data(), body)) throw ParseError("checkpoint checksum mismatch", 0);

  Reader r(bytes.data() + kMagicSize, body - kMagicSize);
  Checkpoint c;
  c.stage = r.str();
  c.config_text = r.str();
  c.schedule = r.str();
  c.architecture = r.str();
  c.params = r.blob();
  c.ema = r.blob();
  c.ema_decay = r.f64();
  c.steps = r.i64();
  c.adam_lr = r.f64();
  c.adam_step = r.i64();
  c.adam_m = r.blob();
  c.adam_v = r.blob();
  c.head_architecture = r.str();
  c.head_params = r.blob();
  c.head_adam_step = r.i64();
  c.head_adam_m = r.blob();
  c.head_adam_v = r.blob();
  c.log_z_scalar = r.f64();
  if (!r.done()) throw ParseError("trailing bytes in checkpoint", 0);
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace mdmsteer
