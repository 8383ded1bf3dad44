#pragma once

#include <array>
#include <cstdint>

namespace pilotwave {

// Counter-based Philox4x32-10 stream. Fully portable: output depends only on
// (master_seed, stream_id, draw index), never on call interleaving, so
// per-trajectory streams give schedule-independent ensembles.
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::uint64_t stream_id)
      : key_{static_cast<std::uint32_t>(master_seed),
             static_cast<std::uint32_t>(master_seed >> 32)},
        stream_(stream_id) {}

  std::uint64_t next_u64() {
    if (have_ == 0) refill();
    --have_;
    return buf_[have_];
  }

  // uniform in [0, 1), 53 random bits
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n)
  std::uint64_t uniform_below(std::uint64_t n) {
    const std::uint64_t limit = n * (~std::uint64_t{0} / n);
    std::uint64_t u;
    do { u = next_u64(); } while (u >= limit);
    return u % n;
  }

  std::uint64_t draws_used() const { return block_ * 2 - have_; }

  std::uint64_t master_seed() const {
    return (static_cast<std::uint64_t>(key_[1]) << 32) | key_[0];
  }
  std::uint64_t stream_id() const { return stream_; }

  // Raw 10-round block function (key words, counter words) -> 4 output words,
  // exposed for known-answer testing against the published vectors.
  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 2> key,
                                            std::array<std::uint32_t, 4> ctr) {
    for (int r = 0; r < 10; ++r) {
      round(ctr, key[0], key[1]);
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u, kWeyl1 = 0xBB67AE85u;
  static constexpr std::uint32_t kMul0 = 0xD2511F53u, kMul1 = 0xCD9E8D57u;

  static void round(std::array<std::uint32_t, 4>& c, std::uint32_t k0, std::uint32_t k1) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
    const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    c = {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
  }

  void refill() {
    const std::array<std::uint32_t, 4> c = block(
        key_, {static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
               static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)});
    buf_[0] = (static_cast<std::uint64_t>(c[0]) << 32) | c[1];
    buf_[1] = (static_cast<std::uint64_t>(c[2]) << 32) | c[3];
    have_ = 2;
    ++block_;
  }

  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 2> buf_{};
  int have_ = 0;
};

}  // namespace pilotwave
