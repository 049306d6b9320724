#include "efpmm/flow.hpp"

#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>

namespace efpmm {

namespace {

// 1 - f(delta), evaluated without cancellation.
double complement_fill(double delta, const ModelParams& params) {
  return 1.0 / (1.0 + std::exp(-(params.alpha + params.beta * delta)));
}

std::string where(double z, double p) {
  std::ostringstream os;
  os.precision(17);
  os << "(z=" << z << ", p=" << p << ")";
  return os.str();
}

}  // namespace

double fill_probability(double delta, const ModelParams& params) {
  return 1.0 / (1.0 + std::exp(params.alpha + params.beta * delta));
}

double inverse_fill_probability(double probability, const ModelParams& params) {
  return (std::log(1.0 / probability - 1.0) - params.alpha) / params.beta;
}

QuoteOptimum solve_quote(double z, double p, const ModelParams& params) {
  const double gz = params.gamma * z;
  const double beta = params.beta;

  const auto objective = [&](double delta) {
    return fill_probability(delta, params) * -std::expm1(-gz * (delta - p)) / gz;
  };
  // Scaled first-order condition; positive below the optimum, negative above.
  const auto foc = [&](double delta) {
    const double u = std::exp(-gz * (delta - p));
    return gz * u + beta * complement_fill(delta, params) * std::expm1(-gz * (delta - p));
  };

  const double lo = p;
  double hi = std::max(p, -params.alpha / beta) + 1.0 / beta;
  double f_hi = foc(hi);
  for (int i = 0; f_hi >= 0.0 && i < 200; ++i) {
    hi = p + 2.0 * (hi - p);
    f_hi = foc(hi);
  }

  double delta = std::numeric_limits<double>::quiet_NaN();
  if (f_hi < 0.0 && std::isfinite(hi)) {
    try {
      std::uintmax_t max_iter = 200;
      const auto bracket = boost::math::tools::toms748_solve(
          foc, lo, hi, foc(lo), f_hi,
          boost::math::tools::eps_tolerance<double>(std::numeric_limits<double>::digits - 3),
          max_iter);
      if (max_iter < 200) delta = 0.5 * (bracket.first + bracket.second);
    } catch (const std::exception&) {
      // fall through to the minimizer
    }
  }
  if (!std::isfinite(delta)) {
    const double upper = std::isfinite(hi) ? hi : p + 100.0 / beta;
    std::uintmax_t max_iter = 500;
    const auto best = boost::math::tools::brent_find_minima(
        [&](double d) { return -objective(d); }, lo, upper, std::numeric_limits<double>::digits / 2,
        max_iter);
    delta = best.first;
  }
  if (!std::isfinite(delta)) throw NumericalError("quote optimization failed at " + where(z, p));

  QuoteOptimum out;
  out.delta = delta;
  out.H = objective(delta);
  out.dH_dp = -fill_probability(delta, params) * std::exp(-gz * (delta - p));
  out.clamped = delta < kQuoteFloor;
  out.offset = std::max(delta, kQuoteFloor);
  if (!std::isfinite(out.H) || !std::isfinite(out.dH_dp)) {
    throw NumericalError("non-finite quote Hamiltonian at " + where(z, p));
  }
  return out;
}

double quote_hamiltonian(double z, double p, const ModelParams& params) {
  return solve_quote(z, p, params).H;
}

double quote_hamiltonian_dp(double z, double p, const ModelParams& params) {
  return solve_quote(z, p, params).dH_dp;
}

double optimal_offset(double z, double p, const ModelParams& params) {
  const auto q = solve_quote(z, p, params);
#ifndef NDEBUG
  const double target = params.gamma * z * q.H - q.dH_dp;
  assert(std::abs(fill_probability(q.delta, params) - target) <= 1e-8);
#endif
  return q.offset;
}

double optimal_offset_slope(double z, double p, const ModelParams& params) {
  const double delta = solve_quote(z, p, params).delta;
  const double gz = params.gamma * z;
  const double beta = params.beta;
  const double f = fill_probability(delta, params);
  const double fc = complement_fill(delta, params);
  const double u = std::exp(-gz * (delta - p));
  const double one_minus_u = -std::expm1(-gz * (delta - p));
  const double num = gz * u * (beta * fc + gz);
  const double den = beta * beta * f * fc * one_minus_u + beta * fc * gz * u + gz * gz * u;
  return num / den;
}

QuadHamiltonian fit_quadratic(const ModelParams& params, double z0) {
  if (!(z0 > 0.0)) throw ConfigError("fit size must be positive");
  const auto centre = solve_quote(z0, 0.0, params);
  const double up = quote_hamiltonian_dp(z0, kQuadFitStep, params);
  const double down = quote_hamiltonian_dp(z0, -kQuadFitStep, params);

  QuadHamiltonian quad;
  quad.a0 = centre.H;
  quad.a1 = centre.dH_dp;
  quad.a2 = (up - down) / (2.0 * kQuadFitStep);
  quad.fit_size = z0;
  if (!(quad.a2 > 0.0)) {
    throw NumericalError("quadratic Hamiltonian fit is not convex (a2 <= 0); check alpha/beta/gamma");
  }
  return quad;
}

QuadHamiltonian fit_quadratic(const ModelParams& params) {
  return fit_quadratic(params, params.ladder.front());
}

OffsetTable::OffsetTable(double z, const ModelParams& params, double p_min, double p_max,
                         double step)
    : z_(z), params_(params), p_min_(p_min), step_(step) {
  const auto n = static_cast<std::size_t>(std::ceil((p_max - p_min) / step)) + 1;
  delta_.resize(n);
  slope_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = p_min + static_cast<double>(i) * step;
    delta_[i] = solve_quote(z, p, params).delta;
    slope_[i] = optimal_offset_slope(z, p, params);
  }
}

double OffsetTable::exact(double p) const { return solve_quote(z_, p, params_).offset; }

double OffsetTable::offset(double p) const {
  const double s = (p - p_min_) / step_;
  if (!(s >= 0.0) || s >= static_cast<double>(delta_.size() - 1)) return exact(p);
  const auto i = static_cast<std::size_t>(s);
  const double t = s - static_cast<double>(i);
  const double t2 = t * t;
  const double t3 = t2 * t;
  const double h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
  const double h10 = t3 - 2.0 * t2 + t;
  const double h01 = -2.0 * t3 + 3.0 * t2;
  const double h11 = t3 - t2;
  const double d = h00 * delta_[i] + h10 * step_ * slope_[i] + h01 * delta_[i + 1] +
                   h11 * step_ * slope_[i + 1];
  return std::max(d, kQuoteFloor);
}

}  // namespace efpmm
