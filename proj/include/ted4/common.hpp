#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ted4 {

using Vec3 = std::array<double, 3>;

/// Error category; the CLI maps each one onto a process exit code.
enum class ErrorKind { usage = 2, io = 3, format = 4, numerical = 5 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool ok, const std::string& what, ErrorKind kind = ErrorKind::usage) {
  if (!ok) fail(kind, what);
}

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

// Smooth positive map and its inverse, shared by every "raw -> positive" parameter.
inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double softplus_grad(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Round-to-nearest-even conversion to IEEE binary16 and back. Throws when the
/// value does not fit the 16-bit range.
inline std::uint16_t to_half_bits(double v) {
  const Eigen::half h(static_cast<float>(v));
  require(std::isfinite(static_cast<float>(h)), "value " + std::to_string(v) + " overflows 16-bit float",
          ErrorKind::numerical);
  return Eigen::numext::bit_cast<std::uint16_t>(h);
}
inline double from_half_bits(std::uint16_t bits) {
  return static_cast<double>(static_cast<float>(Eigen::numext::bit_cast<Eigen::half>(bits)));
}
inline double round_half(double v) { return from_half_bits(to_half_bits(v)); }
inline double round_float(double v) { return static_cast<double>(static_cast<float>(v)); }

/// Seeded generator with platform-independent real-valued draws (the standard
/// distributions are implementation-defined, which would break determinism).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ted4
