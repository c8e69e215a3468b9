#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "ted4/common.hpp"
#include "ted4/entropy.hpp"

namespace ted4 {

inline constexpr int kProbBits = 16;
inline constexpr std::uint32_t kProbTotal = 1u << kProbBits;
inline constexpr long kMaxSymbolBound = 16000;

/// Integer cumulative frequencies for indices -bound..bound plus an escape
/// symbol (the last entry). cum has one more entry than there are symbols.
struct SymbolCdf {
  long bound = 0;
  std::vector<std::uint32_t> cum;

  std::size_t symbols() const { return cum.size() - 1; }
  std::size_t escape() const { return symbols() - 1; }
  std::uint32_t freq(std::size_t s) const { return cum[s + 1] - cum[s]; }

  void validate() const {
    if (cum.size() < 2 || cum.front() != 0 || cum.back() != kProbTotal) fail(ErrorKind::format, "malformed cdf: bad total");
    for (std::size_t s = 0; s + 1 < cum.size(); ++s) {
      if (cum[s + 1] <= cum[s]) fail(ErrorKind::format, "malformed cdf: zero-frequency symbol");
    }
  }
};

/// Probabilities to 16-bit counts by largest remainder, so each count is within
/// one unit of p * 2^16. Symbols that would get zero are raised to 1 and the
/// surplus is taken from the most over-allocated symbols.
inline SymbolCdf cdf_from_probabilities(std::span<const double> probs, long bound) {
  const std::size_t n = probs.size();
  require(n >= 2 && n < kProbTotal, "alphabet size out of range");
  double sum = 0.0;
  for (double p : probs) sum += std::clamp(p, 0.0, 1.0);
  require(sum > 0.0, "probabilities sum to zero");
  std::vector<double> target(n);
  std::vector<std::uint32_t> freq(n);
  std::int64_t used = 0;
  for (std::size_t s = 0; s < n; ++s) {
    target[s] = std::clamp(probs[s], 0.0, 1.0) / sum * kProbTotal;
    freq[s] = static_cast<std::uint32_t>(std::floor(target[s]));
    used += freq[s];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto remainder = [&](std::size_t s) { return target[s] - freq[s]; };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder(a) > remainder(b); });
  for (std::size_t i = 0; used < static_cast<std::int64_t>(kProbTotal); i = (i + 1) % n) {
    ++freq[order[i]];
    ++used;
  }
  std::int64_t surplus = 0;
  for (auto& f : freq) {
    if (f == 0) {
      f = 1;
      ++surplus;
    }
  }
  if (surplus > 0) {
    // max-heap on over-allocation, ties to the lower index
    const auto less = [&](std::size_t a, std::size_t b) {
      const double oa = freq[a] - target[a], ob = freq[b] - target[b];
      return oa != ob ? oa < ob : a > b;
    };
    std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(less)> heap(less);
    for (std::size_t s = 0; s < n; ++s)
      if (freq[s] > 1) heap.push(s);
    while (surplus > 0) {
      require(!heap.empty(), "alphabet too large for 16-bit counts");
      const std::size_t s = heap.top();
      heap.pop();
      --freq[s];
      --surplus;
      if (freq[s] > 1) heap.push(s);
    }
  }
  SymbolCdf cdf;
  cdf.bound = bound;
  cdf.cum.assign(n + 1, 0);
  for (std::size_t s = 0; s < n; ++s) cdf.cum[s + 1] = cdf.cum[s] + freq[s];
  return cdf;
}

/// Discretized Gaussian over indices -bound..bound (value = q * index), tail mass to escape.
inline SymbolCdf build_cdf(double mu, double sigma, double q, long bound) {
  require(sigma > 0.0 && q > 0.0 && bound >= 1, "build_cdf needs sigma > 0, q > 0, bound >= 1");
  bound = std::min(bound, kMaxSymbolBound);
  std::vector<double> probs(2 * bound + 2);
  double sum = 0.0;
  for (long k = -bound; k <= bound; ++k) {
    probs[k + bound] = bin_probability(q * static_cast<double>(k), mu, sigma, q);
    sum += probs[k + bound];
  }
  probs.back() = std::max(0.0, 1.0 - sum);
  return cdf_from_probabilities(probs, bound);
}

/// Carry-less range coder (32-bit low/range, 16-bit probabilities).
class RangeEncoder {
 public:
  void encode(std::uint32_t cum, std::uint32_t freq) {
    range_ >>= kProbBits;
    low_ += cum * range_;
    range_ *= freq;
    normalize();
  }

  void encode_symbol(long index, const SymbolCdf& cdf) {
    if (index >= -cdf.bound && index <= cdf.bound) {
      const auto s = static_cast<std::size_t>(index + cdf.bound);
      encode(cdf.cum[s], cdf.freq(s));
      return;
    }
    const std::size_t esc = cdf.escape();
    encode(cdf.cum[esc], cdf.freq(esc));
    encode_raw32(zigzag(index));
  }

  void encode_raw32(std::uint32_t v) {
    encode(v >> 16, 1);
    encode(v & 0xFFFF, 1);
  }

  std::vector<std::uint8_t> finish() {
    for (int i = 0; i < 4; ++i) {
      out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
      low_ <<= 8;
    }
    return std::move(out_);
  }

  static std::uint32_t zigzag(long v) {
    const auto x = static_cast<std::int32_t>(v);
    return (static_cast<std::uint32_t>(x) << 1) ^ static_cast<std::uint32_t>(x >> 31);
  }

 private:
  static constexpr std::uint32_t kTop = 1u << 24, kBot = 1u << 16;

  void normalize() {
    while ((low_ ^ (low_ + range_)) < kTop || (range_ < kBot && ((range_ = (0u - low_) & (kBot - 1)), true))) {
      out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
      low_ <<= 8;
      range_ <<= 8;
    }
  }

  std::uint32_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> bytes) : in_(bytes) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
  }

  std::uint32_t peek() {
    range_ >>= kProbBits;
    return std::min<std::uint32_t>((code_ - low_) / range_, kProbTotal - 1);
  }

  void consume(std::uint32_t cum, std::uint32_t freq) {
    low_ += cum * range_;
    range_ *= freq;
    while ((low_ ^ (low_ + range_)) < kTop || (range_ < kBot && ((range_ = (0u - low_) & (kBot - 1)), true))) {
      code_ = (code_ << 8) | next_byte();
      low_ <<= 8;
      range_ <<= 8;
    }
  }

  long decode_symbol(const SymbolCdf& cdf) {
    const std::uint32_t target = peek();
    const auto it = std::upper_bound(cdf.cum.begin(), cdf.cum.end(), target);
    const auto s = static_cast<std::size_t>(it - cdf.cum.begin()) - 1;
    consume(cdf.cum[s], cdf.freq(s));
    if (s == cdf.escape()) return unzigzag(decode_raw32());
    return static_cast<long>(s) - cdf.bound;
  }

  std::uint32_t decode_raw32() {
    const std::uint32_t hi = peek();
    consume(hi, 1);
    const std::uint32_t lo = peek();
    consume(lo, 1);
    return (hi << 16) | lo;
  }

  static long unzigzag(std::uint32_t v) {
    return static_cast<long>(static_cast<std::int32_t>((v >> 1) ^ (0u - (v & 1u))));
  }

  /// True when the decoder ran past the end of its input.
  bool overrun() const { return pos_ > in_.size(); }

 private:
  static constexpr std::uint32_t kTop = 1u << 24, kBot = 1u << 16;

  std::uint32_t next_byte() {
    const std::uint32_t b = pos_ < in_.size() ? in_[pos_] : 0u;
    ++pos_;
    return b;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  std::uint32_t low_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

inline std::vector<std::uint8_t> range_encode(std::span<const long> symbols, std::span<const SymbolCdf> cdfs) {
  require(symbols.size() == cdfs.size(), "one cdf per symbol is required");
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    cdfs[i].validate();
    enc.encode_symbol(symbols[i], cdfs[i]);
  }
  return enc.finish();
}

inline std::vector<long> range_decode(std::span<const std::uint8_t> bytes, std::span<const SymbolCdf> cdfs) {
  RangeDecoder dec(bytes);
  std::vector<long> out;
  out.reserve(cdfs.size());
  for (const SymbolCdf& c : cdfs) {
    c.validate();
    out.push_back(dec.decode_symbol(c));
  }
  if (dec.overrun()) fail(ErrorKind::format, "range-coded payload is truncated");
  return out;
}

/// Adaptive probability of a zero bit, 16-bit fixed point.
class AdaptiveBit {
 public:
  std::uint32_t p0() const { return p0_; }
  void update(bool bit) {
    if (bit) p0_ -= p0_ >> kRate;
    else p0_ += (kProbTotal - p0_) >> kRate;
    p0_ = std::clamp<std::uint32_t>(p0_, kMin, kProbTotal - kMin);
  }

 private:
  static constexpr int kRate = 4;
  static constexpr std::uint32_t kMin = 32;
  std::uint32_t p0_ = kProbTotal / 2;
};

inline void encode_bit(RangeEncoder& enc, AdaptiveBit& model, bool bit) {
  if (bit) enc.encode(model.p0(), kProbTotal - model.p0());
  else enc.encode(0, model.p0());
  model.update(bit);
}

inline bool decode_bit(RangeDecoder& dec, AdaptiveBit& model) {
  const std::uint32_t v = dec.peek();
  const bool bit = v >= model.p0();
  if (bit) dec.consume(model.p0(), kProbTotal - model.p0());
  else dec.consume(0, model.p0());
  model.update(bit);
  return bit;
}

inline std::vector<std::uint8_t> encode_mask(const std::vector<bool>& bits) {
  RangeEncoder enc;
  AdaptiveBit model;
  for (bool b : bits) encode_bit(enc, model, b);
  return enc.finish();
}

inline std::vector<bool> decode_mask(std::span<const std::uint8_t> bytes, std::size_t count) {
  RangeDecoder dec(bytes);
  AdaptiveBit model;
  std::vector<bool> bits(count);
  for (std::size_t i = 0; i < count; ++i) bits[i] = decode_bit(dec, model);
  if (dec.overrun()) fail(ErrorKind::format, "mask payload is truncated");
  return bits;
}

}  // namespace ted4
