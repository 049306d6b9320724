#pragma once

// Model constants, state containers and covariance assembly.
//
// Unit ledger used throughout the library:
//   time            day
//   prices          basis-point offsets from an arbitrary reference
//   sizes           oz
//   intensities     per day
//   cash / P&L      bp * oz
// Numeric kernels never convert units.

#include <Eigen/Dense>
#include "json.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace efpmm {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;
using Mat3 = Eigen::Matrix3d;
using Mat2 = Eigen::Matrix2d;

/// Bad input: malformed configuration, invalid parameters, bad data files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parameter set that violates a model invariant. The message names the field.
class ValidationError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Integration blow-up, root-finder failure and similar numerical breakdowns.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kSecondsPerDay = 86400.0;

struct ModelParams {
  double sigma_S = 0.0;  // bp / sqrt(day)
  double k_E = 0.0;      // 1 / day
  double sigma_E = 0.0;  // bp / sqrt(day)
  double k_D = 0.0;      // 1 / day
  double sigma_D = 0.0;  // bp / sqrt(day)
  double D_bar = 0.0;    // bp
  double rho = 0.0;      // spot / EFP Brownian correlation

  std::vector<double> ladder;  // oz, strictly increasing
  std::vector<double> lambda;  // 1 / day, one per ladder size

  double alpha = 0.0;
  double beta = 0.0;  // 1 / bp

  double psi_S = 0.0;  // bp
  double psi_F = 0.0;  // bp
  double eta_S = 0.0;  // bp * day / oz
  double eta_F = 0.0;  // bp * day / oz

  double gamma = 0.0;  // 1 / (bp * oz)
  double K_S = 0.0;    // bp / oz
  double K_F = 0.0;    // bp / oz
  double T = 0.0;      // day

  bool operator==(const ModelParams&) const = default;
};

/// Spot gold parameter set with futures access: risk aversion 3e-4, one hour
/// horizon, plain OU EFP (k_D = sigma_D = 0), zero terminal penalties.
ModelParams gold_params();

/// Returns the parameters unchanged when every invariant holds; throws
/// ValidationError naming the first offending field otherwise.
ModelParams validate(ModelParams params);

/// sum_i z_i * lambda(z_i), oz / day.
double ladder_flow(const ModelParams& params);

/// Correlation of (W^S, W^E, W^D): only the spot / EFP entry is non-zero.
Mat3 correlation_matrix(double rho);

/// diag(sigmas) * R * diag(sigmas).
Mat3 covariance_matrix(double sigma_S, double sigma_E, double sigma_D, const Mat3& correlation);

/// Full-information covariance of (S, E, D) increments per day.
Mat3 covariance_matrix(const ModelParams& params);

/// Covariance with the spot row and column removed, i.e. the (E, D) block.
Mat2 trailing_block(const Mat3& sigma);

struct MarketState {
  double t = 0.0;  // day
  double S = 0.0;  // bp
  double E = 0.0;  // bp
  double D = 0.0;  // bp, true or filtered mean level
};

struct Inventory {
  double q_S = 0.0;  // oz
  double q_F = 0.0;  // oz
  double X = 0.0;    // bp * oz
};

/// Stacked state x = (q_S, q_F, E, D) used by the quadratic value function.
inline Vec4 state_vector(const Inventory& inv, const MarketState& st) {
  return Vec4(inv.q_S, inv.q_F, st.E, st.D);
}

/// Mark-to-market value X + q_S * S + q_F * (S + E).
inline double mark_to_market(const Inventory& inv, const MarketState& st) {
  return inv.X + inv.q_S * st.S + inv.q_F * (st.S + st.E);
}

// JSON: a flat object with exactly the ModelParams field names.
void to_json(nlohmann::json& j, const ModelParams& p);
void from_json(const nlohmann::json& j, ModelParams& p);

/// Parses and validates. Unknown or missing keys are a ConfigError.
ModelParams params_from_json(const nlohmann::json& j);
ModelParams load_params(const std::filesystem::path& path);

}  // namespace efpmm
