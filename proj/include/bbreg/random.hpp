#pragma once

// Reproducible random streams and beta-binomial variates.
//
// A stream is identified by (seed, stream_id); the engine is seeded from a
// SplitMix64 hash of both, so replicate b of a bootstrap draws the same
// numbers no matter which thread runs it or in which order.

#include <cstdint>
#include <random>
#include <vector>

#include "bbreg/model.hpp"

namespace bbreg {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class RngStream {
 public:
  using engine_type = std::mt19937_64;

  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), stream_id_(stream_id), engine_(key(seed, stream_id)) {}

  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] std::uint64_t stream_id() const { return stream_id_; }

  /// Independent child stream, e.g. bootstrap replicate `id` of this stream.
  [[nodiscard]] RngStream substream(std::uint64_t id) const { return {key(seed_, stream_id_), id}; }

  engine_type& engine() { return engine_; }

 private:
  static std::uint64_t key(std::uint64_t seed, std::uint64_t stream_id) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream_id + 0x632be59bd9b4e019ULL));
  }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  engine_type engine_;
};

/// Beta(a, b) variate from two gamma variates.
inline double sample_beta(double a, double b, RngStream& rng) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  const double x = ga(rng.engine());
  const double y = gb(rng.engine());
  const double sum = x + y;
  if (sum > 0.0) return x / sum;
  // both underflowed: only the mixing proportion survives
  std::bernoulli_distribution coin(a / (a + b));
  return coin(rng.engine()) ? 1.0 : 0.0;
}

/// Binomial(M, p); libstdc++ uses inversion for small M p and a rejection
/// sampler otherwise.
inline std::int64_t sample_binomial(std::int64_t M, double p, RngStream& rng) {
  if (p <= 0.0) return 0;
  if (p >= 1.0) return M;
  std::binomial_distribution<std::int64_t> dist(M, p);
  return dist(rng.engine());
}

/// One draw per sample: Z_i ~ Beta(a1_i, a2_i), then W_i ~ Binomial(M_i, Z_i).
inline std::vector<std::int64_t> sample_beta_binomial(const Theta& theta, const DesignPair& design,
                                                      const std::vector<std::int64_t>& depths, RngStream& rng) {
  if (depths.size() != design.rows()) {
    throw std::invalid_argument("sample_beta_binomial: depth vector length does not match the design");
  }
  const auto lp = linked_params(theta, design);
  std::vector<std::int64_t> out(depths.size());
  for (std::size_t i = 0; i < depths.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double z = sample_beta(lp.a1[ii], lp.a2[ii], rng);
    out[i] = sample_binomial(depths[i], z, rng);
  }
  return out;
}

}  // namespace bbreg
