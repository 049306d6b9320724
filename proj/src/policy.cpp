#include "efpmm/policy.hpp"

#include "efpmm/filter.hpp"

#include <cmath>

namespace efpmm {

ControlDecision decide(const ValueApprox& va, double t, const Vec4& x, const ModelParams& params) {
  const Mat4 A = va.A(t);
  const Vec4 B = va.B(t);
  const double shift = 2.0 * A.row(0).dot(x) + B(0);

  ControlDecision out;
  out.bid.resize(params.ladder.size());
  out.ask.resize(params.ladder.size());
  for (std::size_t i = 0; i < params.ladder.size(); ++i) {
    const double z = params.ladder[i];
    const auto bid = solve_quote(z, z * A(0, 0) + shift, params);
    const auto ask = solve_quote(z, z * A(0, 0) - shift, params);
    out.bid[i] = bid.offset;
    out.ask[i] = ask.offset;
    out.clamped = out.clamped || bid.clamped || ask.clamped;
  }
  out.v_S = hamiltonian_prime(marginal_value(A, B, x, Instrument::Spot), spot_cost(params));
  out.v_F = va.futures_enabled()
                ? hamiltonian_prime(marginal_value(A, B, x, Instrument::Futures), futures_cost(params))
                : 0.0;
  return out;
}

double skew(const ValueApprox& va, double t, const Vec4& x, double z, const ModelParams& params) {
  const Mat4 A = va.A(t);
  const Vec4 B = va.B(t);
  const double shift = 2.0 * A.row(0).dot(x) + B(0);
  const double bid = optimal_offset(z, z * A(0, 0) + shift, params);
  const double ask = optimal_offset(z, z * A(0, 0) - shift, params);
  return 0.5 * (ask - bid);
}

ZoneBoundary no_execution_zone(const ValueApprox& va, double t, Instrument inst,
                               const ZoneSlice& slice, const ModelParams& params) {
  const Mat4 A = va.A(t);
  const Vec4 B = va.B(t);
  const int i = static_cast<int>(inst);
  const int s = static_cast<int>(slice.solved);
  const int f = static_cast<int>(slice.free);
  const double psi = inst == Instrument::Spot ? params.psi_S : params.psi_F;

  // marginal(x) = c + a * x[solved] + b * w
  Vec4 base = slice.base;
  base(s) = 0.0;
  base(f) = 0.0;
  const double c = marginal_value(A, B, base, inst);
  const double a = -2.0 * A(i, s);
  const double b = -2.0 * A(i, f) * slice.free_scale;

  ZoneBoundary out;
  if (inst == Instrument::Futures && !va.futures_enabled()) {
    out.unbounded = true;
    return out;
  }
  if (a == 0.0) {
    out.unbounded = true;
    return out;
  }
  const double at_plus = (psi - c) / a;   // marginal = +psi: buy threshold
  const double at_minus = (-psi - c) / a;  // marginal = -psi: sell threshold
  out.slope = -b / a;
  out.lower_intercept = std::min(at_plus, at_minus);
  out.upper_intercept = std::max(at_plus, at_minus);
  // Buying happens where marginal > psi; below the lower line iff a < 0.
  out.buy_below = a < 0.0;
  return out;
}

Strategy::Strategy(ModelParams params, const StrategyOptions& options)
    : params_(validate(std::move(params))), options_(options) {
  const double z0 = options_.fit_size > 0.0 ? options_.fit_size : params_.ladder.front();
  quad_ = fit_quadratic(params_, z0);
  const Mat3 cov = options_.filtered ? filtered_covariance(params_) : covariance_matrix(params_);
  system_ = build_system(params_, quad_, cov, options_.futures_enabled);
  value_ = solve(system_, params_.T, options_.riccati_step);
  tables_.reserve(params_.ladder.size());
  for (const double z : params_.ladder) tables_.emplace_back(z, params_);
}

void Strategy::decide_into(const Mat4& A, const Vec4& B, const Vec4& x, ControlDecision& out) const {
  const std::size_t n = params_.ladder.size();
  out.bid.resize(n);
  out.ask.resize(n);
  out.clamped = false;
  const double shift = 2.0 * A.row(0).dot(x) + B(0);
  for (std::size_t i = 0; i < n; ++i) {
    const double base = params_.ladder[i] * A(0, 0);
    out.bid[i] = tables_[i].offset(base + shift);
    out.ask[i] = tables_[i].offset(base - shift);
    out.clamped = out.clamped || out.bid[i] <= kQuoteFloor || out.ask[i] <= kQuoteFloor;
  }
  out.v_S = hamiltonian_prime(marginal_value(A, B, x, Instrument::Spot), spot_cost(params_));
  out.v_F = options_.futures_enabled
                ? hamiltonian_prime(marginal_value(A, B, x, Instrument::Futures),
                                    futures_cost(params_))
                : 0.0;
}

ControlDecision Strategy::decide(double t, const Vec4& x) const {
  ControlDecision out;
  decide_into(value_.A(t), value_.B(t), x, out);
  return out;
}

}  // namespace efpmm
