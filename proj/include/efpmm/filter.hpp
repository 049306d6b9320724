#pragma once

// Filtering of the unobserved mean level D from observed spot and EFP paths,
// the effective (partial-information) dynamics, and a moment-matching
// calibrator for the nested OU parameters.

#include "efpmm/core.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace efpmm {

struct FilterState {
  double D_hat = 0.0;  // bp
  double nu2 = 0.0;    // bp^2
};

enum class FilterGain { Stationary, Transient };

/// Explicit Euler step of d(nu^2)/dt = -k_E^2 nu^4 / ((1 - rho^2) sigma_E^2) - 2 k_D nu^2 + sigma_D^2,
/// clamped at zero.
double variance_ode_step(double nu2, const ModelParams& params, double dt);

/// Fixed point of the variance ODE.
double asymptotic_variance(const ModelParams& params);

/// Filter prior for a fresh run: D_hat = D_bar, nu^2 at its fixed point.
FilterState initial_filter_state(const ModelParams& params);

struct EffectiveDynamics {
  double sigma_D_hat = 0.0;
  Mat3 R_hat = Mat3::Identity();  // rank 2
};

/// sigma_D -> sigma_D_hat, R -> R_hat.
EffectiveDynamics effective_sigma_D(const ModelParams& params);

/// Covariance of (S, E, D_hat) increments under the filtration of (S, E).
Mat3 filtered_covariance(const ModelParams& params);

/// One Euler step of D_hat driven by the observed increments (dS, dE) over dt,
/// with E the EFP level at the start of the step.
FilterState filter_step(const FilterState& fs, double dS, double dE, double E, double dt,
                        const ModelParams& params, FilterGain gain = FilterGain::Stationary);

/// Stationary Cov(E_t, E_{t+h}) of the nested OU pair:
///   c_E exp(-k_E |h|) + c_D exp(-k_D |h|),
///   c_D = k_E^2 sigma_D^2 / (2 k_D (k_E^2 - k_D^2)),
///   c_E = sigma_E^2 / (2 k_E) - k_E sigma_D^2 / (2 (k_E^2 - k_D^2)).
/// Requires k_D > 0 (unless sigma_D = 0) and k_E != k_D.
double stationary_autocovariance(double h, const ModelParams& params);

struct EfpSeries {
  std::vector<double> values;  // bp
  double spacing = 0.0;        // day
};

/// Two-column CSV (timestamp_seconds, efp_bp) with uniform spacing.
EfpSeries read_efp_csv(const std::filesystem::path& path);

struct CalibrationOptions {
  std::vector<double> lags_seconds = {1,    10,    60,    300,   900,   1800,   3600,   7200,
                                      14400, 28800, 43200, 86400, 172800, 345600};
  int max_iterations = 4000;
  double tolerance = 1e-10;
  int bootstrap_samples = 0;  // moving-block bootstrap of the fit, 0 disables
  double bootstrap_block_days = 1.0;
  unsigned long long bootstrap_seed = 7;
};

struct CalibrationResult {
  double k_E = 0.0;
  double sigma_E = 0.0;
  double k_D = 0.0;
  double sigma_D = 0.0;
  double D_bar = 0.0;
  double objective = 0.0;
  int iterations = 0;
  bool zero_volatility = false;
  // Bootstrap standard errors; zero when bootstrap is off.
  double se_k_E = 0.0;
  double se_sigma_E = 0.0;
  double se_k_D = 0.0;
  double se_sigma_D = 0.0;
};

/// Least-squares match of empirical autocovariances and short-lag variograms
/// to the nested OU closed form, minimized by Nelder-Mead in log-parameters
/// with k_D < k_E enforced. D_bar is the sample mean. Requires >= 1e4 samples.
/// Throws NumericalError if the simplex does not converge.
CalibrationResult calibrate_efp(std::span<const double> series, double spacing,
                                const ModelParams& init, const CalibrationOptions& options = {});

/// Empirical autocovariance (biased, 1/n normalisation) at a lag in samples.
double empirical_autocovariance(std::span<const double> series, std::size_t lag, double mean);

}  // namespace efpmm
