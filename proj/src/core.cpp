#include "efpmm/core.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace efpmm {

ModelParams gold_params() {
  ModelParams p;
  p.sigma_S = 140.0;
  p.k_E = 8.0;
  p.sigma_E = 5.0;
  p.k_D = 0.0;
  p.sigma_D = 0.0;
  p.D_bar = 0.0;
  p.rho = 0.0;
  p.ladder = {100.0, 200.0, 500.0, 1000.0, 2000.0, 5000.0};
  p.lambda = {1600.0, 600.0, 1000.0, 600.0, 120.0, 80.0};
  p.alpha = -0.8;
  p.beta = 5.0;
  p.psi_S = 0.4;
  p.psi_F = 0.2;
  p.eta_S = 7e-8;
  p.eta_F = 3e-8;
  p.gamma = 3e-4;
  p.K_S = 0.0;
  p.K_F = 0.0;
  p.T = 1.0 / 24.0;
  return p;
}

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError(message);
}

bool finite(double x) { return std::isfinite(x); }

}  // namespace

ModelParams validate(ModelParams p) {
  const std::pair<const char*, double> scalars[] = {
      {"sigma_S", p.sigma_S}, {"k_E", p.k_E},     {"sigma_E", p.sigma_E}, {"k_D", p.k_D},
      {"sigma_D", p.sigma_D}, {"D_bar", p.D_bar}, {"rho", p.rho},         {"alpha", p.alpha},
      {"beta", p.beta},       {"psi_S", p.psi_S}, {"psi_F", p.psi_F},     {"eta_S", p.eta_S},
      {"eta_F", p.eta_F},     {"gamma", p.gamma}, {"K_S", p.K_S},         {"K_F", p.K_F},
      {"T", p.T}};
  for (const auto& [name, value] : scalars) {
    require(finite(value), std::string(name) + " must be finite");
  }

  require(p.sigma_S > 0.0, "sigma_S must be positive");
  require(p.sigma_E > 0.0, "sigma_E must be positive");
  require(p.k_E > 0.0, "k_E must be positive");
  require(p.k_D >= 0.0, "k_D must be non-negative");
  require(p.sigma_D >= 0.0, "sigma_D must be non-negative");
  require(std::abs(p.rho) < 1.0, "rho must lie in (-1,1)");
  require(p.beta > 0.0, "beta must be positive");
  require(p.gamma > 0.0, "gamma must be positive");
  require(p.eta_S > 0.0, "eta_S must be positive");
  require(p.eta_F > 0.0, "eta_F must be positive");
  require(p.psi_S >= 0.0, "psi_S must be non-negative");
  require(p.psi_F >= 0.0, "psi_F must be non-negative");
  require(p.K_S >= 0.0, "K_S must be non-negative");
  require(p.K_F >= 0.0, "K_F must be non-negative");
  require(p.T > 0.0, "T must be positive");

  require(!p.ladder.empty(), "ladder must not be empty");
  require(p.ladder.size() == p.lambda.size(), "lambda must have one entry per ladder size");
  for (std::size_t i = 0; i < p.ladder.size(); ++i) {
    require(finite(p.ladder[i]) && p.ladder[i] > 0.0, "ladder sizes must be positive");
    require(finite(p.lambda[i]) && p.lambda[i] > 0.0, "lambda entries must be positive");
    if (i > 0) require(p.ladder[i] > p.ladder[i - 1], "ladder must be strictly increasing");
  }
  return p;
}

double ladder_flow(const ModelParams& params) {
  double sum = 0.0;
  for (std::size_t i = 0; i < params.ladder.size(); ++i) sum += params.ladder[i] * params.lambda[i];
  return sum;
}

Mat3 correlation_matrix(double rho) {
  Mat3 r = Mat3::Identity();
  r(0, 1) = r(1, 0) = rho;
  return r;
}

Mat3 covariance_matrix(double sigma_S, double sigma_E, double sigma_D, const Mat3& correlation) {
  // Entry-wise so that the result is exactly symmetric.
  const double s[3] = {sigma_S, sigma_E, sigma_D};
  Mat3 out;
  for (int i = 0; i < 3; ++i) {
    for (int j = i; j < 3; ++j) out(i, j) = out(j, i) = s[i] * s[j] * correlation(i, j);
  }
  return out;
}

Mat3 covariance_matrix(const ModelParams& params) {
  return covariance_matrix(params.sigma_S, params.sigma_E, params.sigma_D,
                           correlation_matrix(params.rho));
}

Mat2 trailing_block(const Mat3& sigma) { return sigma.bottomRightCorner<2, 2>(); }

namespace {

const std::set<std::string>& param_keys() {
  static const std::set<std::string> keys = {
      "sigma_S", "k_E",   "sigma_E", "k_D",   "sigma_D", "D_bar", "rho",
      "ladder",  "lambda", "alpha",  "beta",  "psi_S",   "psi_F", "eta_S",
      "eta_F",   "gamma", "K_S",     "K_F",   "T"};
  return keys;
}

}  // namespace

void to_json(nlohmann::json& j, const ModelParams& p) {
  j = nlohmann::json{{"sigma_S", p.sigma_S}, {"k_E", p.k_E},     {"sigma_E", p.sigma_E},
                     {"k_D", p.k_D},         {"sigma_D", p.sigma_D}, {"D_bar", p.D_bar},
                     {"rho", p.rho},         {"ladder", p.ladder}, {"lambda", p.lambda},
                     {"alpha", p.alpha},     {"beta", p.beta},   {"psi_S", p.psi_S},
                     {"psi_F", p.psi_F},     {"eta_S", p.eta_S}, {"eta_F", p.eta_F},
                     {"gamma", p.gamma},     {"K_S", p.K_S},     {"K_F", p.K_F},
                     {"T", p.T}};
}

void from_json(const nlohmann::json& j, ModelParams& p) {
  if (!j.is_object()) throw ConfigError("model parameters must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!param_keys().count(key)) throw ConfigError("unknown parameter key '" + key + "'");
  }
  for (const auto& key : param_keys()) {
    if (!j.contains(key)) throw ConfigError("missing parameter key '" + key + "'");
  }
  try {
    p.sigma_S = j.at("sigma_S").get<double>();
    p.k_E = j.at("k_E").get<double>();
    p.sigma_E = j.at("sigma_E").get<double>();
    p.k_D = j.at("k_D").get<double>();
    p.sigma_D = j.at("sigma_D").get<double>();
    p.D_bar = j.at("D_bar").get<double>();
    p.rho = j.at("rho").get<double>();
    p.ladder = j.at("ladder").get<std::vector<double>>();
    p.lambda = j.at("lambda").get<std::vector<double>>();
    p.alpha = j.at("alpha").get<double>();
    p.beta = j.at("beta").get<double>();
    p.psi_S = j.at("psi_S").get<double>();
    p.psi_F = j.at("psi_F").get<double>();
    p.eta_S = j.at("eta_S").get<double>();
    p.eta_F = j.at("eta_F").get<double>();
    p.gamma = j.at("gamma").get<double>();
    p.K_S = j.at("K_S").get<double>();
    p.K_F = j.at("K_F").get<double>();
    p.T = j.at("T").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad parameter value: ") + e.what());
  }
}

ModelParams params_from_json(const nlohmann::json& j) { return validate(j.get<ModelParams>()); }

ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open parameter file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
  return params_from_json(j);
}

}  // namespace efpmm
