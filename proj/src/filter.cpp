#include "efpmm/filter.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

namespace efpmm {

namespace {

double innovation_gain_factor(const ModelParams& p) {
  return p.k_E / (p.sigma_E * std::sqrt(1.0 - p.rho * p.rho));
}

}  // namespace

double variance_ode_step(double nu2, const ModelParams& p, double dt) {
  const double c = innovation_gain_factor(p) * innovation_gain_factor(p);
  const double rate = -c * nu2 * nu2 - 2.0 * p.k_D * nu2 + p.sigma_D * p.sigma_D;
  return std::max(nu2 + dt * rate, 0.0);
}

double asymptotic_variance(const ModelParams& p) {
  if (p.sigma_D == 0.0) return 0.0;
  const double c = innovation_gain_factor(p) * innovation_gain_factor(p);
  return p.sigma_D * p.sigma_D /
         (p.k_D + std::sqrt(p.k_D * p.k_D + c * p.sigma_D * p.sigma_D));
}

FilterState initial_filter_state(const ModelParams& params) {
  return {params.D_bar, asymptotic_variance(params)};
}

EffectiveDynamics effective_sigma_D(const ModelParams& p) {
  EffectiveDynamics out;
  if (p.sigma_D > 0.0) {
    const double xi = innovation_gain_factor(p) * p.sigma_D;
    out.sigma_D_hat = p.sigma_D * xi / (p.k_D + std::sqrt(p.k_D * p.k_D + xi * xi));
  }
  const double c = std::sqrt(1.0 - p.rho * p.rho);
  out.R_hat << 1.0, p.rho, 0.0,  //
      p.rho, 1.0, c,             //
      0.0, c, 1.0;
  return out;
}

Mat3 filtered_covariance(const ModelParams& p) {
  const auto eff = effective_sigma_D(p);
  return covariance_matrix(p.sigma_S, p.sigma_E, eff.sigma_D_hat, eff.R_hat);
}

FilterState filter_step(const FilterState& fs, double dS, double dE, double E, double dt,
                        const ModelParams& p, FilterGain gain) {
  const double dW_S = dS / p.sigma_S;
  const double dW_E = (dE + p.k_E * (E - fs.D_hat) * dt) / p.sigma_E;
  const double dW_D = (dW_E - p.rho * dW_S) / std::sqrt(1.0 - p.rho * p.rho);

  FilterState next;
  next.D_hat = fs.D_hat - p.k_D * (fs.D_hat - p.D_bar) * dt +
               innovation_gain_factor(p) * fs.nu2 * dW_D;
  next.nu2 = gain == FilterGain::Stationary ? asymptotic_variance(p)
                                            : variance_ode_step(fs.nu2, p, dt);
  return next;
}

double stationary_autocovariance(double h, const ModelParams& p) {
  const double a = std::abs(h);
  const double plain = p.sigma_E * p.sigma_E / (2.0 * p.k_E);
  if (p.sigma_D == 0.0) return plain * std::exp(-p.k_E * a);
  if (!(p.k_D > 0.0)) throw ConfigError("stationary autocovariance needs k_D > 0");
  if (p.k_E == p.k_D) throw ConfigError("stationary autocovariance undefined for k_E == k_D");
  const double s2 = p.sigma_D * p.sigma_D;
  const double gap = p.k_E * p.k_E - p.k_D * p.k_D;
  const double c_D = p.k_E * p.k_E * s2 / (2.0 * p.k_D * gap);
  const double c_E = plain - p.k_E * s2 / (2.0 * gap);
  return c_E * std::exp(-p.k_E * a) + c_D * std::exp(-p.k_D * a);
}

double empirical_autocovariance(std::span<const double> x, std::size_t lag, double mean) {
  if (lag >= x.size()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i + lag < x.size(); ++i) sum += (x[i] - mean) * (x[i + lag] - mean);
  return sum / static_cast<double>(x.size());
}

EfpSeries read_efp_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open EFP series " + path.string());
  std::string line;
  std::vector<double> stamps;
  EfpSeries out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    if (row == 1 && !line.empty() && (std::isalpha(static_cast<unsigned char>(line[0])) != 0)) {
      continue;  // header
    }
    std::stringstream ss(line);
    std::string a, b;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',')) {
      throw ConfigError("EFP series row " + std::to_string(row) + ": expected two columns");
    }
    try {
      stamps.push_back(std::stod(a));
      out.values.push_back(std::stod(b));
    } catch (const std::exception&) {
      throw ConfigError("EFP series row " + std::to_string(row) + ": not numeric");
    }
  }
  if (stamps.size() < 2) throw ConfigError("EFP series needs at least two rows");
  const double spacing = stamps[1] - stamps[0];
  if (!(spacing > 0.0)) throw ConfigError("EFP series timestamps must increase");
  for (std::size_t i = 1; i < stamps.size(); ++i) {
    const double d = stamps[i] - stamps[i - 1];
    if (std::abs(d - spacing) > 1e-6 * spacing) {
      throw ConfigError("EFP series must be uniformly sampled (row " + std::to_string(i + 1) + ")");
    }
  }
  out.spacing = spacing / kSecondsPerDay;
  return out;
}

namespace {

using Point = std::array<double, 4>;

struct SimplexResult {
  Point x{};
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  double spread = 0.0;
};

template <class F>
SimplexResult nelder_mead(F&& f, const Point& start, const Point& scale, int max_iter, double tol) {
  constexpr std::size_t n = 4;
  std::array<Point, n + 1> simplex;
  std::array<double, n + 1> values;
  simplex[0] = start;
  for (std::size_t i = 0; i < n; ++i) {
    simplex[i + 1] = start;
    simplex[i + 1][i] += scale[i];
  }
  for (std::size_t i = 0; i <= n; ++i) values[i] = f(simplex[i]);

  SimplexResult res;
  std::array<std::size_t, n + 1> order;
  for (int it = 0; it < max_iter; ++it) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    const auto best = order.front();
    const auto worst = order.back();
    const auto second = order[n - 1];

    res.spread = values[worst] - values[best];
    double size = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
      for (std::size_t k = 0; k < n; ++k) size = std::max(size, std::abs(simplex[i][k] - simplex[best][k]));
    }
    if (res.spread <= tol * (std::abs(values[best]) + tol) && size < 1e-6) {
      res.converged = true;
      res.iterations = it;
      break;
    }

    Point centroid{};
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == worst) continue;
      for (std::size_t k = 0; k < n; ++k) centroid[k] += simplex[i][k] / n;
    }
    const auto along = [&](double t) {
      Point p;
      for (std::size_t k = 0; k < n; ++k) p[k] = centroid[k] + t * (simplex[worst][k] - centroid[k]);
      return p;
    };

    const Point reflected = along(-1.0);
    const double f_r = f(reflected);
    if (f_r < values[best]) {
      const Point expanded = along(-2.0);
      const double f_e = f(expanded);
      if (f_e < f_r) {
        simplex[worst] = expanded;
        values[worst] = f_e;
      } else {
        simplex[worst] = reflected;
        values[worst] = f_r;
      }
    } else if (f_r < values[second]) {
      simplex[worst] = reflected;
      values[worst] = f_r;
    } else {
      const bool outside = f_r < values[worst];
      const Point contracted = along(outside ? -0.5 : 0.5);
      const double f_c = f(contracted);
      if (f_c < (outside ? f_r : values[worst])) {
        simplex[worst] = contracted;
        values[worst] = f_c;
      } else {
        for (std::size_t i = 0; i <= n; ++i) {
          if (i == best) continue;
          for (std::size_t k = 0; k < n; ++k) {
            simplex[i][k] = simplex[best][k] + 0.5 * (simplex[i][k] - simplex[best][k]);
          }
          values[i] = f(simplex[i]);
        }
      }
    }
    res.iterations = it + 1;
  }
  const auto best = static_cast<std::size_t>(
      std::min_element(values.begin(), values.end()) - values.begin());
  res.x = simplex[best];
  res.value = values[best];
  return res;
}

// Per-block sums of squared lagged differences; a variogram estimate is
// sum(S) / (2 sum(N)) over any selection of blocks.
struct VariogramBlocks {
  std::vector<std::size_t> lags;                 // samples
  std::vector<std::vector<double>> sq_sum;       // [block][lag]
  std::vector<std::vector<double>> pair_count;   // [block][lag]
};

VariogramBlocks variogram_blocks(std::span<const double> x, const std::vector<std::size_t>& lags,
                                 std::size_t block_len) {
  VariogramBlocks vb;
  vb.lags = lags;
  const std::size_t n_blocks = std::max<std::size_t>(1, (x.size() + block_len - 1) / block_len);
  vb.sq_sum.assign(n_blocks, std::vector<double>(lags.size(), 0.0));
  vb.pair_count.assign(n_blocks, std::vector<double>(lags.size(), 0.0));
  for (std::size_t j = 0; j < lags.size(); ++j) {
    const auto lag = lags[j];
    for (std::size_t i = 0; i + lag < x.size(); ++i) {
      const double d = x[i + lag] - x[i];
      const auto b = std::min(i / block_len, n_blocks - 1);
      vb.sq_sum[b][j] += d * d;
      vb.pair_count[b][j] += 1.0;
    }
  }
  return vb;
}

std::vector<double> variogram_from(const VariogramBlocks& vb, const std::vector<std::size_t>& blocks) {
  std::vector<double> v(vb.lags.size(), 0.0);
  for (std::size_t j = 0; j < vb.lags.size(); ++j) {
    double s = 0.0, c = 0.0;
    for (const auto b : blocks) {
      s += vb.sq_sum[b][j];
      c += vb.pair_count[b][j];
    }
    v[j] = c > 0.0 ? s / (2.0 * c) : 0.0;
  }
  return v;
}

struct Fitted {
  double k_E, sigma_E, k_D, sigma_D;
};

Fitted decode(const Point& x) {
  const double k_E = std::exp(x[0]);
  return {k_E, std::exp(x[1]), k_E / (1.0 + std::exp(-x[2])), std::exp(x[3])};
}

SimplexResult fit_variogram(const std::vector<double>& lag_days, const std::vector<double>& target,
                            const Point& start, const CalibrationOptions& options) {
  const auto objective = [&](const Point& x) {
    const Fitted f = decode(x);
    ModelParams m;
    m.k_E = f.k_E;
    m.sigma_E = f.sigma_E;
    m.k_D = f.k_D;
    m.sigma_D = f.sigma_D;
    if (!(m.k_D > 0.0) || m.k_D >= m.k_E || !std::isfinite(m.k_E) || !std::isfinite(m.sigma_D)) {
      return 1e300;
    }
    const double c0 = stationary_autocovariance(0.0, m);
    double sum = 0.0;
    for (std::size_t j = 0; j < lag_days.size(); ++j) {
      if (!(target[j] > 0.0)) continue;
      const double model = c0 - stationary_autocovariance(lag_days[j], m);
      if (!(model > 0.0)) return 1e300;
      const double r = std::log(target[j] / model);
      sum += r * r;
    }
    return sum;
  };
  const Point scale = {0.3, 0.3, 0.5, 0.5};
  return nelder_mead(objective, start, scale, options.max_iterations, options.tolerance);
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

CalibrationResult calibrate_efp(std::span<const double> series, double spacing,
                                const ModelParams& init, const CalibrationOptions& options) {
  if (series.size() < 10000) throw ConfigError("calibration needs at least 1e4 samples");
  if (!(spacing > 0.0)) throw ConfigError("calibration spacing must be positive");

  CalibrationResult out;
  out.D_bar = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(series.size());
  const double var = empirical_autocovariance(series, 0, out.D_bar);
  if (!(var > 1e-24)) {
    out.zero_volatility = true;
    return out;
  }

  std::vector<std::size_t> lags;
  std::vector<double> lag_days;
  for (const double s : options.lags_seconds) {
    const auto lag = static_cast<std::size_t>(std::llround(s / (spacing * kSecondsPerDay)));
    if (lag == 0 || lag >= series.size() / 2) continue;
    if (!lags.empty() && lag == lags.back()) continue;
    lags.push_back(lag);
    lag_days.push_back(static_cast<double>(lag) * spacing);
  }
  if (lags.size() < 4) throw ConfigError("calibration: series too short for the lag set");

  const auto block_len = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(options.bootstrap_block_days / spacing)));
  const auto blocks = variogram_blocks(series, lags, block_len);
  std::vector<std::size_t> all(blocks.sq_sum.size());
  std::iota(all.begin(), all.end(), 0);
  const auto target = variogram_from(blocks, all);

  const double k_E0 = init.k_E > 0.0 ? init.k_E : 1.0;
  const double s_E0 = init.sigma_E > 0.0 ? init.sigma_E : std::sqrt(2.0 * k_E0 * var);
  const double k_D0 = init.k_D > 0.0 && init.k_D < k_E0 ? init.k_D : 0.05 * k_E0;
  const double s_D0 = init.sigma_D > 0.0 ? init.sigma_D : 0.1 * s_E0;
  const Point start = {std::log(k_E0), std::log(s_E0), -std::log(k_E0 / k_D0 - 1.0), std::log(s_D0)};

  const auto fit = fit_variogram(lag_days, target, start, options);
  if (!fit.converged) {
    std::ostringstream os;
    os << "calibration simplex did not converge after " << fit.iterations
       << " iterations (best objective " << fit.value << ", spread " << fit.spread << ")";
    throw NumericalError(os.str());
  }
  const Fitted f = decode(fit.x);
  out.k_E = f.k_E;
  out.sigma_E = f.sigma_E;
  out.k_D = f.k_D;
  out.sigma_D = f.sigma_D;
  out.objective = fit.value;
  out.iterations = fit.iterations;

  if (options.bootstrap_samples > 0) {
    std::mt19937_64 rng(options.bootstrap_seed);
    std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
    std::vector<double> kE, sE, kD, sD;
    std::vector<std::size_t> chosen(all.size());
    for (int b = 0; b < options.bootstrap_samples; ++b) {
      for (auto& c : chosen) c = pick(rng);
      const auto replicate = variogram_from(blocks, chosen);
      const auto r = fit_variogram(lag_days, replicate, fit.x, options);
      const Fitted g = decode(r.x);
      kE.push_back(g.k_E);
      sE.push_back(g.sigma_E);
      kD.push_back(g.k_D);
      sD.push_back(g.sigma_D);
    }
    out.se_k_E = stddev(kE);
    out.se_sigma_E = stddev(sE);
    out.se_k_D = stddev(kD);
    out.se_sigma_D = stddev(sD);
  }
  return out;
}

}  // namespace efpmm
