// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "flowvi/mixture.hpp"

namespace flowvi {

enum class Algorithm { kGFlowVi, kNgFlowVi, kBbvi, kNgvi, kSvgd };

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "gflowvi") return Algorithm::kGFlowVi;
  if (s == "ngflowvi") return Algorithm::kNgFlowVi;
  if (s == "bbvi") return Algorithm::kBbvi;
  if (s == "ngvi") return Algorithm::kNgvi;
  if (s == "svgd") return Algorithm::kSvgd;
  throw std::invalid_argument("unknown algorithm '" + s + "'");
}

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kGFlowVi: return "gflowvi";
    case Algorithm::kNgFlowVi: return "ngflowvi";
    case Algorithm::kBbvi: return "bbvi";
    case Algorithm::kNgvi: return "ngvi";
    case Algorithm::kSvgd: return "svgd";
  }
  return "?";
}

// Reparameterization of the precision coordinates during the update. kNone
// steps in s directly and treats a nonpositive result as an error; the mirror
// variants step in mapped coordinates, which keeps s in its domain for any
// step size.
struct Stabilize {
  enum class Kind { kNone, kLogMirror, kBoxMirror };

  Kind kind = Kind::kNone;
  double lo = 0.0;  // box bounds, used only by kBoxMirror
  double hi = 0.0;

  static Stabilize none() { return {}; }
  static Stabilize log_mirror() { return {Kind::kLogMirror, 0.0, 0.0}; }
  static Stabilize box_mirror(double lo, double hi) {
    if (!(lo > 0.0) || !(hi > lo))
      throw std::invalid_argument("box_mirror: bounds must satisfy 0 < lo < hi");
    return {Kind::kBoxMirror, lo, hi};
  }
};

struct FlowConfig {
  Algorithm algorithm = Algorithm::kGFlowVi;
  double eta = 1e-3;
  long iterations = 1000;
  int samples_per_particle = 1;  // Monte Carlo draws behind each update direction
  bool md_weights = false;       // mirror-descent step on the mixture weights
  int fv_samples = 64;           // draws per first-variation estimate in the weight step
  Stabilize stabilize = Stabilize::log_mirror();
  int svgd_particles = 100;
  std::uint64_t seed = 0;
};

inline void validate_flow_config(const FlowConfig& c) {
  if (!(c.eta >= 0.0)) throw std::invalid_argument("FlowConfig: eta must be nonnegative");
  if (c.iterations < 0) throw std::invalid_argument("FlowConfig: negative iteration count");
  if (c.samples_per_particle < 1) throw std::invalid_argument("FlowConfig: need at least one sample per particle");
  if (c.fv_samples < 1) throw std::invalid_argument("FlowConfig: need at least one first-variation sample");
  if (c.svgd_particles < 1) throw std::invalid_argument("FlowConfig: need at least one svgd particle");
}

// Optimizer state for the mixture-based algorithms. The iteration index and
// the seed determine every random draw inside a step, so a run is replayable
// from any snapshot.
struct FlowState {
  ParticleMixture mixture;
  long iteration = 0;
  std::uint64_t seed = 0;
};

}  // namespace flowvi
