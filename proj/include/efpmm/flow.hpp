#pragma once

// Client flow: logistic fill probability, the quote Hamiltonian
//
//   H(z, p) = sup_delta f(delta) * (1 - exp(-gamma z (delta - p))) / (gamma z),
//
// the optimal offset and a second-order Taylor fit of H used by the Riccati system.

#include "efpmm/core.hpp"

#include <vector>

namespace efpmm {

/// Quotes are never placed below this offset.
inline constexpr double kQuoteFloor = -100.0;  // bp

/// f(delta) = 1 / (1 + exp(alpha + beta * delta)).
double fill_probability(double delta, const ModelParams& params);

/// Inverse of fill_probability on (0, 1).
double inverse_fill_probability(double probability, const ModelParams& params);

struct QuoteOptimum {
  double delta = 0.0;   // unconstrained argmax, bp
  double offset = 0.0;  // delta clamped at kQuoteFloor, bp
  double H = 0.0;       // bp
  double dH_dp = 0.0;   // envelope derivative, dimensionless
  bool clamped = false;
};

/// Maximizes the quote objective for one size and reservation shift p.
/// Root-finds the first-order condition on a bracket that always starts at
/// delta = p (the objective is increasing there); falls back to Brent's
/// minimizer if the root finder fails. Throws NumericalError carrying (z, p).
QuoteOptimum solve_quote(double z, double p, const ModelParams& params);

double quote_hamiltonian(double z, double p, const ModelParams& params);
double quote_hamiltonian_dp(double z, double p, const ModelParams& params);

/// delta_bar(z, p) = f^{-1}(gamma z H(z, p) - dH/dp(z, p)), clamped at the quote floor.
double optimal_offset(double z, double p, const ModelParams& params);

/// d(delta*)/dp by implicit differentiation of the first-order condition.
double optimal_offset_slope(double z, double p, const ModelParams& params);

/// H_check(p) = a0 + a1 p + a2 p^2 / 2.
struct QuadHamiltonian {
  double a0 = 0.0;
  double a1 = 0.0;
  double a2 = 0.0;
  double fit_size = 0.0;  // oz

  double operator()(double p) const { return a0 + a1 * p + 0.5 * a2 * p * p; }
  double derivative(double p) const { return a1 + a2 * p; }
};

inline constexpr double kQuadFitStep = 1e-5;  // bp

/// Taylor fit of H(z0, .) at p = 0; a2 from a central difference of the
/// envelope derivative. Throws NumericalError if a2 <= 0.
QuadHamiltonian fit_quadratic(const ModelParams& params, double z0);

/// Smallest ladder size, the default fit point.
QuadHamiltonian fit_quadratic(const ModelParams& params);

/// Cubic Hermite table of delta*(z, p) over a p-range for one size; outside
/// the range it falls back to solve_quote. Interpolation error is below 1e-9 bp
/// at the default resolution.
class OffsetTable {
 public:
  OffsetTable(double z, const ModelParams& params, double p_min = -60.0, double p_max = 60.0,
              double step = 0.005);

  /// Clamped optimal offset.
  double offset(double p) const;
  double size() const { return z_; }

 private:
  double exact(double p) const;

  double z_;
  ModelParams params_;
  double p_min_;
  double step_;
  std::vector<double> delta_;
  std::vector<double> slope_;
};

}  // namespace efpmm
