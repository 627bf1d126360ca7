// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace flowvi {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

using Rng = std::mt19937_64;

// Finalizer from splitmix64; decorrelates consecutive seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream for (seed, iteration, stream). Particle updates use
// stream = particle index, so a step may fan out per particle and still
// reproduce the sequential result bit for bit.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t iteration, std::uint64_t stream) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ iteration);
  h = mix64(h ^ stream);
  return Rng(h);
}

// Fills eps with iid standard normal draws. A fresh distribution per call
// keeps the engine state the only carrier of randomness.
inline void standard_normal(Rng& rng, Vec& eps) {
  std::normal_distribution<double> n01(0.0, 1.0);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = n01(rng);
}

inline Vec standard_normal(Rng& rng, Eigen::Index d) {
  Vec eps(d);
  standard_normal(rng, eps);
  return eps;
}

inline void check_same_dim(const Vec& a, const Vec& b, const char* what) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (" +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
}

inline void check_finite(const Vec& v, const char* what) {
  if (!v.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite entries");
}

}  // namespace flowvi
