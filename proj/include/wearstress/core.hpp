/// @file core.hpp
/// Shared vocabulary for the wearstress library: error types, class labels,
/// seeded random streams, a deterministic parallel loop and content hashing.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <thread>
#include <vector>

namespace wearstress {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto exit codes (usage 1, data 2, invariant 3).
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed file or unreadable artifact.
struct FormatError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

/// Invalid configuration or argument values.
struct ConfigError : Error {
  using Error::Error;
};

/// An operation did not get enough data to produce a value.
struct InsufficientData : Error {
  using Error::Error;
};

struct StratificationError : Error {
  using Error::Error;
};

/// Training produced a non-finite loss.
struct DivergenceError : Error {
  using Error::Error;
};

/// A library invariant was violated; indicates a bug rather than bad input.
struct InvariantError : Error {
  using Error::Error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InvariantError(what);
}

// ---------------------------------------------------------------------------
// Stress classes
// ---------------------------------------------------------------------------

enum class StressLabel : std::uint8_t { Baseline = 0, Acute = 1, Chronic = 2 };

inline constexpr int kNumClasses = 3;

inline constexpr std::array<StressLabel, kNumClasses> kAllLabels = {
    StressLabel::Baseline, StressLabel::Acute, StressLabel::Chronic};

inline std::string_view label_name(StressLabel l) {
  switch (l) {
    case StressLabel::Baseline: return "baseline";
    case StressLabel::Acute: return "acute";
    case StressLabel::Chronic: return "chronic";
  }
  return "?";
}

inline StressLabel parse_label(std::string_view s) {
  if (s == "baseline") return StressLabel::Baseline;
  if (s == "acute") return StressLabel::Acute;
  if (s == "chronic") return StressLabel::Chronic;
  throw FormatError("unknown stress label '" + std::string(s) + "'");
}

inline int class_index(StressLabel l) { return static_cast<int>(l); }
inline StressLabel label_from_index(int c) {
  if (c < 0 || c >= kNumClasses) throw FormatError("class index out of range: " + std::to_string(c));
  return static_cast<StressLabel>(c);
}

// ---------------------------------------------------------------------------
// Random streams
//
// A single user seed fans out into independent streams keyed by a tag and a
// counter, so the values a component draws never depend on which thread ran
// it or in which order siblings were scheduled.
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s,
                                     std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                 std::uint64_t index = 0) {
  return splitmix64(splitmix64(seed ^ fnv1a(tag)) + splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Portable random stream. The engine is std::mt19937_64, whose output is
/// fixed by the standard; the transforms below are written out so results do
/// not depend on a standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0)
      : engine_(derive_seed(seed, tag, index)) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    if (n == 0) throw ConfigError("Rng::below(0)");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Poisson draw by inversion; fine for the small rates used here.
  int poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    const double l = std::exp(-lambda);
    int k = 0;
    double p = uniform();
    while (p > l) {
      ++k;
      p *= uniform();
    }
    return k;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Deterministic parallel loop
// ---------------------------------------------------------------------------

namespace detail {
inline std::atomic<int>& thread_setting() {
  static std::atomic<int> n{1};
  return n;
}
inline bool& inside_parallel_region() {
  thread_local bool flag = false;
  return flag;
}
}  // namespace detail

inline void set_threads(int n) { detail::thread_setting() = std::max(1, n); }
inline int threads() { return detail::thread_setting(); }

/// Runs fn(i) for i in [0, n). Each index writes only its own output slot, so
/// results are identical for every thread count. Nested calls run serially.
/// If several indices throw, the exception of the lowest index is rethrown.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const int t = std::min<std::size_t>(threads(), n);
  if (t <= 1 || detail::inside_parallel_region()) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t failed_at = n;
  std::exception_ptr failure;
  auto worker = [&](int w) {
    detail::inside_parallel_region() = true;
    for (std::size_t i = static_cast<std::size_t>(w); i < n; i += static_cast<std::size_t>(t)) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_at) {
          failed_at = i;
          failure = std::current_exception();
        }
        break;
      }
    }
    detail::inside_parallel_region() = false;
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(t - 1));
  for (int w = 1; w < t; ++w) pool.emplace_back(worker, w);
  worker(0);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

/// Shortest decimal representation that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::string_view context) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && s.front() == '+') ++first;
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw FormatError(std::string(context) + ": cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

inline long long parse_int(std::string_view s, std::string_view context) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError(std::string(context) + ": cannot parse integer '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string hex64(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

}  // namespace wearstress
