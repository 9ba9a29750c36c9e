#include "cozad/errors.hpp"
#include "cozad/model.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>

namespace cozad {

namespace {

constexpr std::uint8_t kMagic[4] = {'C', 'O', 'Z', 'M'};
constexpr std::uint8_t kVersion = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  template <typename Range>
  void f32s(const Range& values) {
    for (double v : values) f32(v);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  double f64() { return std::bit_cast<double>(u64()); }
  void f32s(std::span<double> out) {
    need(out.size() * 4);
    for (double& v : out) v = f32();
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CorruptionError("COZM: truncated payload");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

template <typename Derived>
std::span<double> span_of(Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

template <typename Derived>
std::span<const double> span_of(const Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  const ModelParams& p = checkpoint.params;
  p.validate();
  Writer w;
  for (std::uint8_t c : kMagic) w.u8(c);
  w.u8(kVersion);
  w.u32(static_cast<std::uint32_t>(p.feat_dim()));
  w.u32(static_cast<std::uint32_t>(p.adapted_dim()));
  w.u32(static_cast<std::uint32_t>(p.hidden_dim()));
  w.f32s(span_of(p.adaptor_weight));
  w.f32s(span_of(p.disc_w1));
  w.f32s(span_of(p.disc_b1));
  w.f32s(span_of(p.bn_gamma));
  w.f32s(span_of(p.bn_beta));
  w.f32s(span_of(p.bn_running_mean));
  w.f32s(span_of(p.bn_running_var));
  w.f32s(span_of(p.disc_w2));
  w.f32(p.disc_b2);
  w.f32(p.leaky_slope);
  if (checkpoint.adam) {
    const AdamState& a = *checkpoint.adam;
    w.u8(1);
    w.u64(a.step);
    w.f64(a.beta1);
    w.f64(a.beta2);
    w.f64(a.eps);
    for (const auto& block : trainable_blocks(a.first_moment)) w.f32s(block.values);
    for (const auto& block : trainable_blocks(a.second_moment)) w.f32s(block.values);
  } else {
    w.u8(0);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError("COZM: bad magic bytes");
  }
  Reader r(bytes.subspan(4));
  if (const auto version = r.u8(); version != kVersion) {
    throw FormatError("COZM: unsupported version " + std::to_string(version));
  }
  const std::uint32_t feat = r.u32();
  const std::uint32_t adapted = r.u32();
  const std::uint32_t hidden = r.u32();
  if (feat == 0 || adapted == 0 || hidden == 0) throw CorruptionError("COZM: zero dimension");
  const std::uint64_t expected_floats =
      std::uint64_t{feat} * adapted + std::uint64_t{adapted} * hidden + 7ULL * hidden + 2;
  if (expected_floats * 4 > bytes.size()) {
    throw CorruptionError("COZM: header dimensions exceed payload length");
  }

  Checkpoint ck;
  ModelParams& p = ck.params;
  p.adaptor_weight.resize(feat, adapted);
  p.disc_w1.resize(adapted, hidden);
  p.disc_b1.resize(hidden);
  p.bn_gamma.resize(hidden);
  p.bn_beta.resize(hidden);
  p.bn_running_mean.resize(hidden);
  p.bn_running_var.resize(hidden);
  p.disc_w2.resize(hidden);
  r.f32s(span_of(p.adaptor_weight));
  r.f32s(span_of(p.disc_w1));
  r.f32s(span_of(p.disc_b1));
  r.f32s(span_of(p.bn_gamma));
  r.f32s(span_of(p.bn_beta));
  r.f32s(span_of(p.bn_running_mean));
  r.f32s(span_of(p.bn_running_var));
  r.f32s(span_of(p.disc_w2));
  p.disc_b2 = r.f32();
  p.leaky_slope = r.f32();

  const std::uint8_t has_adam = r.u8();
  if (has_adam > 1) throw CorruptionError("COZM: invalid optimizer flag");
  if (has_adam == 1) {
    AdamState a = AdamState::for_params(p);
    a.step = r.u64();
    a.beta1 = r.f64();
    a.beta2 = r.f64();
    a.eps = r.f64();
    for (auto& block : trainable_blocks(a.first_moment)) r.f32s(block.values);
    for (auto& block : trainable_blocks(a.second_moment)) r.f32s(block.values);
    ck.adam = std::move(a);
  }
  if (!r.at_end()) throw CorruptionError("COZM: trailing bytes after payload");
  try {
    p.validate();
  } catch (const ContractError& e) {
    throw CorruptionError(std::string("COZM: ") + e.what());
  }
  return ck;
}

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace cozad
