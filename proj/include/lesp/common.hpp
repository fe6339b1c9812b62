#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <stdexcept>
#include <string>

namespace lesp {

using Vec2 = Eigen::Vector2d;

// Point in the learned subgoal space. The latent dimension is fixed to 2
// throughout (counting grids and measure dumps assume it).
using LatentPoint = Eigen::Vector2d;

// Raised when a learned quantity (loss, gradient, network output) goes
// non-finite. Callers abort the run and surface the message.
struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  return m.allFinite();
}

// Exact-round-trip scalar formatting for checkpoint and config files.
inline std::string hexfloat_str(double x) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%a", x);
  return buf;
}

inline double read_double_token(std::istream& is, const char* what) {
  std::string tok;
  if (!(is >> tok)) throw TrainingError(std::string(what) + ": truncated");
  return std::strtod(tok.c_str(), nullptr);
}

}  // namespace lesp
