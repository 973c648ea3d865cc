#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sizerec {

enum class Err {
  UnknownSize,
  EmptyDataset,
  TooFewInstances,
  InvalidConfig,
  ShapeMismatch,
  AllMasked,
  AllKeysMasked,
  InvalidLabel,
  IndexOutOfRange,
  EmptySequence,
  NotAScalar,
  NoGradients,
  EmptyTrainingSet,
  EmptyHistory,
  DivergedLoss,
  EmptyEvaluationSet,
  InsufficientAblationUsers,
  EmptyPopulation,
  ModelLoadError,
  BundleCorrupt,
  IOError,
  BindError,
  BadRequest,
  UnknownScale,
};

const char* err_name(Err e);

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& msg)
      : std::runtime_error(std::string(err_name(code)) + ": " + msg), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& msg) { throw Error(code, msg); }

// Deterministic RNG used everywhere. All draws go through this wrapper so that
// a fixed seed reproduces datasets, weight inits and batch orders bit-for-bit,
// independent of the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

  uint64_t next_u64() {
    // splitmix64
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return (next_u64() >> 11) * (1.0 / 9007199254740992.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) fail(Err::InvalidConfig, "uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal(double mean = 0.0, double sd = 1.0) {
    // Box-Muller, one value per call; the sibling draw is discarded so the
    // stream consumed per call is fixed.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sd * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

// FNV-1a, used for content hashes (cache keys, model version strings).
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(uint64_t v);

double now_ms();  // monotonic

namespace logging {
enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };
void set_level(Level lvl);
bool set_level(const std::string& name);  // false if unknown name
Level level();
void debug(const char* fmt, ...);
void info(const char* fmt, ...);
void warn(const char* fmt, ...);
void error(const char* fmt, ...);
}  // namespace logging

}  // namespace sizerec
