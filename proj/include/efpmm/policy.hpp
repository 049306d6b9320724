#pragma once

// Near-optimal controls from the quadratic value approximation: per-size
// bid/ask offsets through the exact optimal-offset function and execution
// rates through the exact execution Hamiltonians.

#include "efpmm/core.hpp"
#include "efpmm/execution.hpp"
#include "efpmm/flow.hpp"
#include "efpmm/riccati.hpp"

#include <vector>

namespace efpmm {

enum class Instrument { Spot = 0, Futures = 1 };

struct ControlDecision {
  std::vector<double> bid;  // offsets per ladder size, bp
  std::vector<double> ask;
  double v_S = 0.0;  // oz / day
  double v_F = 0.0;
  bool clamped = false;  // a quote hit kQuoteFloor
};

/// -2 (row i of A) x - B_i: marginal value of one more unit of the instrument.
inline double marginal_value(const Mat4& A, const Vec4& B, const Vec4& x, Instrument inst) {
  const int i = static_cast<int>(inst);
  return -2.0 * A.row(i).dot(x) - B(i);
}

/// Exact evaluation (one root-find per size and side).
ControlDecision decide(const ValueApprox& va, double t, const Vec4& x, const ModelParams& params);

/// (ask - bid) / 2 for size z. Positive: both quotes shifted up, the dealer
/// is leaning to buy.
double skew(const ValueApprox& va, double t, const Vec4& x, double z, const ModelParams& params);

enum class Axis { q_S = 0, q_F = 1, E = 2, D = 3 };

/// A 2D slice of state space: `solved` is expressed as an affine function of
/// the free coordinate w, where x[free] = w * free_scale; every other
/// coordinate is taken from `base`. Use free_scale = sigma_E to slice in
/// epsilon = E / sigma_E.
struct ZoneSlice {
  Vec4 base = Vec4::Zero();
  Axis solved = Axis::q_S;
  Axis free = Axis::E;
  double free_scale = 1.0;
};

/// No-execution slab |marginal value| <= psi restricted to a slice:
///   solved = lower_intercept + slope * w  and  solved = upper_intercept + slope * w.
/// buy_below: the instrument is bought below the lower line (sold above the upper).
struct ZoneBoundary {
  bool unbounded = false;  // marginal value does not depend on the solved axis
  double lower_intercept = 0.0;
  double upper_intercept = 0.0;
  double slope = 0.0;
  bool buy_below = true;

  double lower(double w) const { return lower_intercept + slope * w; }
  double upper(double w) const { return upper_intercept + slope * w; }
};

ZoneBoundary no_execution_zone(const ValueApprox& va, double t, Instrument inst,
                               const ZoneSlice& slice, const ModelParams& params);

struct StrategyOptions {
  double fit_size = 0.0;  // 0: smallest ladder size
  double riccati_step = kDefaultRiccatiStep;
  bool filtered = false;  // solve with sigma_D_hat and R_hat
  bool futures_enabled = true;
};

/// Fitted, solved and tabulated strategy for one parameter set. Immutable
/// after construction; decide() is safe to call concurrently.
class Strategy {
 public:
  explicit Strategy(ModelParams params, const StrategyOptions& options = {});

  const ModelParams& params() const { return params_; }
  const QuadHamiltonian& quad() const { return quad_; }
  const ValueApprox& value() const { return value_; }
  const RiccatiSystem& system() const { return system_; }
  const StrategyOptions& options() const { return options_; }

  /// Same controls as efpmm::decide, with offsets from interpolation tables.
  ControlDecision decide(double t, const Vec4& x) const;

  /// Hot-loop variant with A, B already evaluated; reuses `out`'s storage.
  void decide_into(const Mat4& A, const Vec4& B, const Vec4& x, ControlDecision& out) const;

 private:
  ModelParams params_;
  StrategyOptions options_;
  QuadHamiltonian quad_;
  RiccatiSystem system_;
  ValueApprox value_;
  std::vector<OffsetTable> tables_;
};

}  // namespace efpmm
