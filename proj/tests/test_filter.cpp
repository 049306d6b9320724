#include "doctest.h"

#include "efpmm/filter.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace efpmm;

namespace {

ModelParams nested() {
  ModelParams p = gold_params();
  p.k_E = 8.0;
  p.sigma_E = 5.0;
  p.k_D = 0.2;
  p.sigma_D = 2.0;
  p.rho = 0.0;
  return p;
}

// Plain Euler simulation of (S, E, D), independent of the library's price engine.
struct Path {
  std::vector<double> S, E, D;
};

Path simulate(const ModelParams& p, double dt, std::size_t n, std::uint64_t seed, double E0 = 0.0,
              double D0 = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Path out;
  out.S.resize(n + 1);
  out.E.resize(n + 1);
  out.D.resize(n + 1);
  out.S[0] = 0.0;
  out.E[0] = E0;
  out.D[0] = D0 + p.D_bar;
  const double sq = std::sqrt(dt);
  const double c = std::sqrt(1.0 - p.rho * p.rho);
  for (std::size_t k = 0; k < n; ++k) {
    const double z1 = g(rng), z2 = g(rng), z3 = g(rng);
    const double wS = z1, wE = p.rho * z1 + c * z2;
    out.S[k + 1] = out.S[k] + p.sigma_S * sq * wS;
    out.E[k + 1] = out.E[k] - p.k_E * (out.E[k] - out.D[k]) * dt + p.sigma_E * sq * wE;
    out.D[k + 1] = out.D[k] - p.k_D * (out.D[k] - p.D_bar) * dt + p.sigma_D * sq * z3;
  }
  return out;
}

}  // namespace

TEST_CASE("variance ODE") {
  ModelParams p = nested();
  const double inf = asymptotic_variance(p);
  const double c = p.k_E * p.k_E / ((1.0 - p.rho * p.rho) * p.sigma_E * p.sigma_E);
  CHECK(std::abs(-c * inf * inf - 2.0 * p.k_D * inf + p.sigma_D * p.sigma_D) <= 1e-12);

  double nu = 0.0;
  for (int k = 0; k < 2000000 && std::abs(variance_ode_step(nu, p, 1e-4) - nu) > 1e-16; ++k) {
    nu = variance_ode_step(nu, p, 1e-4);
  }
  CHECK(std::abs(nu - inf) <= 1e-8);

  // Monotone convergence from sampled starting points.
  for (double start : {0.0, 0.3 * inf, 2.0 * inf, inf + p.sigma_D * p.sigma_D / (2 * p.k_D + 1)}) {
    double v = start;
    double gap = std::abs(v - inf);
    for (int k = 0; k < 40000; ++k) {
      v = variance_ode_step(v, p, 1e-4);
      const double g = std::abs(v - inf);
      CHECK(g <= gap + 1e-15);
      gap = g;
    }
    CHECK(gap < 1e-6);
  }

  ModelParams flat = p;
  flat.sigma_D = 0.0;
  CHECK(variance_ode_step(0.0, flat, 0.01) == 0.0);
  CHECK(asymptotic_variance(flat) == 0.0);
}

TEST_CASE("asymptotic variance closed form") {
  ModelParams p = nested();
  p.k_D = 0.0;
  p.sigma_D = 5.0;
  CHECK(asymptotic_variance(p) == doctest::Approx(3.125).epsilon(1e-14));
  p = nested();
  double prev = 0.0;
  for (double s = 0.25; s <= 8.0; s += 0.25) {
    p.sigma_D = s;
    const double v = asymptotic_variance(p);
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("effective parameters") {
  ModelParams p = nested();
  for (double rho : {0.0, 0.3, -0.7}) {
    for (double kd : {0.0, 0.2, 1.5}) {
      p.rho = rho;
      p.k_D = kd;
      const auto eff = effective_sigma_D(p);
      const double other =
          p.k_E / (p.sigma_E * std::sqrt(1.0 - rho * rho)) * asymptotic_variance(p);
      CHECK(std::abs(eff.sigma_D_hat - other) <= 1e-12 * other);
      CHECK(eff.R_hat(1, 2) == doctest::Approx(std::sqrt(1.0 - rho * rho)).epsilon(1e-15));
      CHECK(eff.R_hat.diagonal() == Eigen::Vector3d::Ones());
      const Eigen::FullPivLU<Mat3> lu(eff.R_hat);
      CHECK(lu.rank() == 2);
    }
  }
  p = nested();
  p.k_D = 0.0;
  CHECK(effective_sigma_D(p).sigma_D_hat == doctest::Approx(p.sigma_D).epsilon(1e-15));
  p.sigma_D = 0.0;
  CHECK(effective_sigma_D(p).sigma_D_hat == 0.0);
  const Mat3 fc = filtered_covariance(nested());
  CHECK(fc(2, 2) == doctest::Approx(std::pow(effective_sigma_D(nested()).sigma_D_hat, 2)));
}

TEST_CASE("filter step") {
  const ModelParams p = nested();
  FilterState fs{1.3, asymptotic_variance(p)};
  const double E = 2.0, dt = 1e-3;
  const auto next = filter_step(fs, 0.0, -p.k_E * (E - fs.D_hat) * dt, E, dt, p);
  CHECK(next.D_hat == doctest::Approx(fs.D_hat - p.k_D * (fs.D_hat - p.D_bar) * dt).epsilon(1e-14));

  // Linear in the innovations at fixed gain.
  const FilterState zero{0.0, fs.nu2};
  const auto a = filter_step(zero, 0.7, 0.3, 0.0, dt, p);
  const auto b = filter_step(zero, -0.2, 0.5, 0.0, dt, p);
  const auto ab = filter_step(zero, 0.5, 0.8, 0.0, dt, p);
  CHECK(ab.D_hat == doctest::Approx(a.D_hat + b.D_hat).epsilon(1e-14));

  const auto tr = filter_step(fs, 0.1, 0.1, E, dt, p, FilterGain::Transient);
  CHECK(tr.nu2 == variance_ode_step(fs.nu2, p, dt));

  // No unobserved noise: the estimate follows the deterministic D.
  ModelParams q = p;
  q.sigma_D = 0.0;
  q.D_bar = 1.0;
  const Path path = simulate(q, 1.0 / 86400.0, 86400, 3, 0.0, 2.0);
  FilterState f{path.D[0], 0.0};
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < path.E.size(); ++k) {
    f = filter_step(f, path.S[k + 1] - path.S[k], path.E[k + 1] - path.E[k], path.E[k],
                    1.0 / 86400.0, q);
    worst = std::max(worst, std::abs(f.D_hat - path.D[k + 1]));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("filter mean squared error matches the asymptotic variance") {
  const ModelParams p = nested();
  const double dt = 1.0 / 86400.0;
  const double nu2 = asymptotic_variance(p);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Path path = simulate(p, dt, 10 * 86400, 100 + seed);
    FilterState f = initial_filter_state(p);
    for (std::size_t k = 0; k + 1 < path.E.size(); ++k) {
      f = filter_step(f, path.S[k + 1] - path.S[k], path.E[k + 1] - path.E[k], path.E[k], dt, p);
      if (k > 86400) {
        const double e = f.D_hat - path.D[k + 1];
        sum += e * e;
        ++count;
      }
    }
  }
  const double mse = sum / static_cast<double>(count);
  CAPTURE(mse);
  CAPTURE(nu2);
  CHECK(std::abs(mse - nu2) <= 0.2 * nu2);
}

TEST_CASE("stationary autocovariance") {
  ModelParams p = nested();
  for (double h : {0.0, 0.01, 0.3, 2.0}) {
    CHECK(stationary_autocovariance(h, p) == stationary_autocovariance(-h, p));
  }
  ModelParams plain = p;
  plain.sigma_D = 0.0;
  plain.k_D = 0.0;
  for (double h : {0.0, 0.05, 1.0}) {
    CHECK(stationary_autocovariance(h, plain) ==
          doctest::Approx(25.0 / 16.0 * std::exp(-8.0 * h)).epsilon(1e-14));
  }
  ModelParams resonant = p;
  resonant.k_D = resonant.k_E;
  CHECK_THROWS_AS(stationary_autocovariance(0.1, resonant), ConfigError);
  ModelParams frozen = p;
  frozen.k_D = 0.0;
  CHECK_THROWS_AS(stationary_autocovariance(0.1, frozen), ConfigError);
}

TEST_CASE("stationary autocovariance against simulated paths") {
  // 256 paths of 100 days (after a 30-day burn-in) at a 30 s Euler step.
  const ModelParams p = nested();
  const double dt = 30.0 / 86400.0;
  const std::size_t burn = static_cast<std::size_t>(30.0 / dt);
  const std::size_t n = static_cast<std::size_t>(100.0 / dt);
  const std::vector<std::size_t> lags = {0, 2, 20, 120, 2880};
  std::vector<double> acc(lags.size(), 0.0);
  std::vector<double> count(lags.size(), 0.0);
  for (std::uint64_t seed = 0; seed < 256; ++seed) {
    const Path path = simulate(p, dt, burn + n, 1000 + seed);
    for (std::size_t j = 0; j < lags.size(); ++j) {
      for (std::size_t k = burn; k + lags[j] <= burn + n; k += 7) {
        acc[j] += path.E[k] * path.E[k + lags[j]];
        count[j] += 1.0;
      }
    }
  }
  for (std::size_t j = 0; j < lags.size(); ++j) {
    const double emp = acc[j] / count[j];
    const double model = stationary_autocovariance(static_cast<double>(lags[j]) * dt, p);
    CAPTURE(lags[j]);
    CAPTURE(emp);
    CAPTURE(model);
    CHECK(std::abs(emp - model) <= 0.05 * model);
  }
}

TEST_CASE("calibration recovers simulated parameters") {
  const ModelParams p = nested();
  const double dt = 1.0 / 86400.0;
  const Path path = simulate(p, dt, 30 * 86400, 77);
  ModelParams init = p;
  init.k_E = 3.0;
  init.sigma_E = 3.0;
  init.k_D = 0.5;
  init.sigma_D = 1.0;
  const auto r = calibrate_efp(path.E, dt, init);
  CAPTURE(r.k_E);
  CAPTURE(r.sigma_E);
  CAPTURE(r.k_D);
  CAPTURE(r.sigma_D);
  CHECK(std::abs(r.k_E - p.k_E) <= 0.2 * p.k_E);
  CHECK(std::abs(r.sigma_E - p.sigma_E) <= 0.1 * p.sigma_E);
  CHECK(r.k_D < r.k_E);
  CHECK(!r.zero_volatility);
}

TEST_CASE("calibration on plain OU data finds no nested volatility") {
  ModelParams p = nested();
  p.sigma_D = 0.0;
  p.k_D = 0.0;
  const double dt = 10.0 / 86400.0;
  const Path path = simulate(p, dt, 30 * 8640, 5);
  CalibrationOptions opt;
  opt.bootstrap_samples = 40;
  const auto r = calibrate_efp(path.E, dt, nested(), opt);
  CAPTURE(r.sigma_D);
  CAPTURE(r.se_sigma_D);
  CHECK(r.se_sigma_D > 0.0);
  CHECK(r.sigma_D < 2.0 * r.se_sigma_D);
  CHECK(std::abs(r.k_E - p.k_E) <= 0.2 * p.k_E);
}

TEST_CASE("degenerate calibration inputs") {
  const std::vector<double> flat(20000, 3.0);
  const auto r = calibrate_efp(flat, 1.0 / 86400.0, nested());
  CHECK(r.zero_volatility);
  CHECK(r.D_bar == 3.0);
  const std::vector<double> short_series(100, 1.0);
  CHECK_THROWS_AS(calibrate_efp(short_series, 1.0 / 86400.0, nested()), ConfigError);
}

TEST_CASE("EFP series CSV") {
  const auto dir = std::filesystem::temp_directory_path() / "efpmm_filter_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "ok.csv");
    out << "timestamp_seconds,efp_bp\n0,1.5\n10,1.7\n20,1.2\n";
  }
  const auto s = read_efp_csv(dir / "ok.csv");
  CHECK(s.values.size() == 3);
  CHECK(s.spacing == doctest::Approx(10.0 / 86400.0));
  {
    std::ofstream out(dir / "gap.csv");
    out << "0,1.5\n10,1.7\n25,1.2\n";
  }
  CHECK_THROWS_AS(read_efp_csv(dir / "gap.csv"), ConfigError);
  CHECK_THROWS_AS(read_efp_csv(dir / "missing.csv"), ConfigError);
}
