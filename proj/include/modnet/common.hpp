#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace modnet {

// Error taxonomy. Every throw site states what was violated and the values
// involved; callers catch by category.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct UsageError : Error { using Error::Error; };
struct LayoutError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct GenerationError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct InternalError : Error { using Error::Error; };

inline constexpr const char* kVersion = "0.1.0";

// splitmix64 step; used to derive independent named streams from one seed.
uint64_t mix_seed(uint64_t a, uint64_t b);

// Deterministic RNG. std::mt19937_64 drives it, but all distributions are
// built here from raw 64-bit draws so results do not depend on the standard
// library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1) with 53 random bits
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n) by rejection over a power-of-two mask
  int uniform_int(int n);

  // standard normal, Box-Muller with cached spare
  double normal();

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // independent stream derived from this one's seed position
  Rng fork(uint64_t salt) { return Rng(mix_seed(next_u64(), salt)); }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Thread cap from MODNET_THREADS (default 1). Applies to BLAS and to
// process-internal parallelism; 1 is the bit-reproducible mode.
int thread_limit();
void set_blas_threads(int n);

// Worker threads used by parallel_for (BLAS itself stays single-threaded;
// concurrent independent GEMMs scale better here than one threaded GEMM).
void set_worker_threads(int n);
int worker_threads();

// Runs fn over [0, n) split into one contiguous chunk per worker. Chunk
// boundaries depend only on n and the worker count, and every chunk writes
// disjoint data, so results are deterministic for a fixed thread setting.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace modnet
