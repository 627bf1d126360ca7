// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "flowvi/common.hpp"
#include "flowvi/flows/config.hpp"

namespace flowvi {

// Coordinate changes that carry the positivity (or box) constraint on the
// precision coordinates. Updates are applied in the mapped space and pulled
// back, so no step can leave the constraint set.

inline Vec log_mirror_map(const Vec& s) {
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (!(s[i] > 0.0))
      throw std::invalid_argument("log_mirror_map: coordinate " + std::to_string(i) + " not positive");
  return s.array().log().matrix();
}

inline Vec log_mirror_inverse(const Vec& zeta) { return zeta.array().exp().matrix(); }

// zeta = log(x - lo) - log(hi - x), the logit of the normalized position.
inline Vec box_mirror_map(const Vec& s, double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("box_mirror_map: need lo < hi");
  Vec zeta(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (!(s[i] > lo) || !(s[i] < hi))
      throw std::invalid_argument("box_mirror_map: coordinate " + std::to_string(i) +
                                  " outside (" + std::to_string(lo) + ", " + std::to_string(hi) + ")");
    zeta[i] = std::log(s[i] - lo) - std::log(hi - s[i]);
  }
  return zeta;
}

// Inverse logit scaled to (lo, hi), computed without exp overflow and clamped
// to the open interval so round trips never land on a bound.
inline Vec box_mirror_inverse(const Vec& zeta, double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("box_mirror_inverse: need lo < hi");
  Vec s(zeta.size());
  const double lo_in = std::nextafter(lo, hi);
  const double hi_in = std::nextafter(hi, lo);
  for (Eigen::Index i = 0; i < zeta.size(); ++i) {
    const double t = zeta[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-zeta[i]))
                                    : std::exp(zeta[i]) / (1.0 + std::exp(zeta[i]));
    s[i] = std::min(hi_in, std::max(lo_in, lo + (hi - lo) * t));
  }
  return s;
}

inline Vec mirror_map(const Vec& s, const Stabilize& st) {
  switch (st.kind) {
    case Stabilize::Kind::kNone: return s;
    case Stabilize::Kind::kLogMirror: return log_mirror_map(s);
    case Stabilize::Kind::kBoxMirror: return box_mirror_map(s, st.lo, st.hi);
  }
  throw std::logic_error("mirror_map: unknown stabilizer");
}

inline Vec inverse_mirror_map(const Vec& zeta, const Stabilize& st) {
  switch (st.kind) {
    case Stabilize::Kind::kNone: return zeta;
    case Stabilize::Kind::kLogMirror: return log_mirror_inverse(zeta);
    case Stabilize::Kind::kBoxMirror: return box_mirror_inverse(zeta, st.lo, st.hi);
  }
  throw std::logic_error("inverse_mirror_map: unknown stabilizer");
}

}  // namespace flowvi
