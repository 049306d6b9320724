#include "efpmm/sim.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>

namespace efpmm {

Rng path_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    0x45465050u};
  return Rng(seq);
}

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("EFPMM_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

void validate(const SimConfig& c, const ModelParams& params) {
  if (!(c.dt > 0.0)) throw ConfigError("simulation dt must be positive");
  if (!(c.horizon >= c.dt)) throw ConfigError("simulation horizon must cover at least one step");
  if (c.n_paths == 0) throw ConfigError("simulation needs at least one path");
  if (c.record_every == 0) throw ConfigError("record_every must be positive");
  const double lam = *std::max_element(params.lambda.begin(), params.lambda.end());
  const double p = lam * fill_probability(kQuoteFloor, params) * c.dt;
  if (p > 0.1) {
    std::ostringstream os;
    os << "dt too coarse: per-step arrival probability " << p << " exceeds 0.1 at the quote floor";
    throw ConfigError(os.str());
  }
}

Volumes& Volumes::operator+=(const Volumes& o) {
  client_bid += o.client_bid;
  client_ask += o.client_ask;
  spot_hedge += o.spot_hedge;
  futures_hedge += o.futures_hedge;
  return *this;
}

VolumeShares shares(const Volumes& v) {
  const double total = v.total();
  if (!(total > 0.0)) return {};
  return {v.client_bid / total, v.client_ask / total, v.spot_hedge / total,
          v.futures_hedge / total};
}

StepFlows execute_controls(const MarketState& state, Inventory& inv, const ControlDecision& d,
                           Rng& rng, const ModelParams& params, double dt, bool freeze,
                           std::vector<FillEvent>* events, std::size_t step_index) {
  StepFlows flows;
  for (std::size_t i = 0; i < params.ladder.size(); ++i) {
    const double z = params.ladder[i];
    const double p_bid = params.lambda[i] * fill_probability(d.bid[i], params) * dt;
    const double p_ask = params.lambda[i] * fill_probability(d.ask[i], params) * dt;
    const double u_bid = freeze ? 1.0 : uniform01(rng);
    const double u_ask = freeze ? 1.0 : uniform01(rng);
    if (u_bid < p_bid) {
      const double price = state.S - d.bid[i];
      inv.q_S += z;
      inv.X -= z * price;
      flows.spread_pnl += z * d.bid[i];
      flows.volumes.client_bid += z;
      ++flows.fills;
      if (events) events->push_back({step_index, i, true, d.bid[i], price});
    }
    if (u_ask < p_ask) {
      const double price = state.S + d.ask[i];
      inv.q_S -= z;
      inv.X += z * price;
      flows.spread_pnl += z * d.ask[i];
      flows.volumes.client_ask += z;
      ++flows.fills;
      if (events) events->push_back({step_index, i, false, d.ask[i], price});
    }
  }

  const double spot_qty = d.v_S * dt;
  const double fut_qty = d.v_F * dt;
  const double costs = (cost(d.v_S, spot_cost(params)) + cost(d.v_F, futures_cost(params))) * dt;
  inv.q_S += spot_qty;
  inv.q_F += fut_qty;
  inv.X -= spot_qty * state.S + fut_qty * (state.S + state.E) + costs;
  flows.hedge_cost = costs;
  flows.volumes.spot_hedge = std::abs(spot_qty);
  flows.volumes.futures_hedge = std::abs(fut_qty);
  return flows;
}

Mat3 psd_factor(const Mat3& m) {
  const Eigen::LDLT<Mat3> ldlt(m);
  const Eigen::Vector3d d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
  Mat3 L = ldlt.matrixL();
  Mat3 factor = ldlt.transpositionsP().transpose() * (L * d.asDiagonal());
  return factor;
}

PriceDynamics::PriceDynamics(const ModelParams& params, double dt, PriceScheme scheme)
    : params_(params), dt_(dt), scheme_(scheme) {
  const Mat3 sigma = covariance_matrix(params);
  if (scheme == PriceScheme::Euler) {
    noise_factor_ = psd_factor(sigma * dt);
    return;
  }
  Mat3 F = Mat3::Zero();
  F(1, 1) = -params.k_E;
  F(1, 2) = params.k_E;
  F(2, 2) = -params.k_D;
  const Eigen::Vector3d c(0.0, 0.0, params.k_D * params.D_bar);

  Eigen::Matrix4d aug = Eigen::Matrix4d::Zero();
  aug.topLeftCorner<3, 3>() = F * dt;
  aug.topRightCorner<3, 1>() = c * dt;
  const Eigen::Matrix4d aug_exp = aug.exp();
  transition_ = aug_exp.topLeftCorner<3, 3>();
  offset_ = aug_exp.topRightCorner<3, 1>();

  // Van Loan: exp([[-F, Sigma], [0, F']] dt) = [[., G12], [0, G22]], Q = G22' G12.
  Eigen::Matrix<double, 6, 6> vl = Eigen::Matrix<double, 6, 6>::Zero();
  vl.topLeftCorner<3, 3>() = -F * dt;
  vl.topRightCorner<3, 3>() = sigma * dt;
  vl.bottomRightCorner<3, 3>() = F.transpose() * dt;
  const Eigen::Matrix<double, 6, 6> vl_exp = vl.exp();
  Mat3 Q = vl_exp.bottomRightCorner<3, 3>().transpose() * vl_exp.topRightCorner<3, 3>();
  Q = 0.5 * (Q + Q.transpose()).eval();
  noise_factor_ = psd_factor(Q);
}

void PriceDynamics::advance(MarketState& st, Rng& rng, bool freeze) const {
  Eigen::Vector3d z = Eigen::Vector3d::Zero();
  if (!freeze) {
    std::normal_distribution<double> normal;
    z << normal(rng), normal(rng), normal(rng);
  }
  const Eigen::Vector3d noise = noise_factor_ * z;
  if (scheme_ == PriceScheme::Euler) {
    const double dE = -params_.k_E * (st.E - st.D) * dt_;
    const double dD = -params_.k_D * (st.D - params_.D_bar) * dt_;
    st.S += noise(0);
    st.E += dE + noise(1);
    st.D += dD + noise(2);
  } else {
    const Eigen::Vector3d y = transition_ * Eigen::Vector3d(st.S, st.E, st.D) + offset_ + noise;
    st.S = y(0);
    st.E = y(1);
    st.D = y(2);
  }
  st.t += dt_;
}

StepOutcome step(const MarketState& state, const Inventory& inv, const ControlDecision& decision,
                 Rng& rng, const ModelParams& params, const PriceDynamics& prices, double dt,
                 bool freeze) {
  StepOutcome out{state, inv, {}};
  out.flows = execute_controls(state, out.inventory, decision, rng, params, dt, freeze);
  prices.advance(out.state, rng, freeze);
  return out;
}

namespace {

// A(t_n), B(t_n) for every simulation step, or a single frozen pair.
struct ControlSchedule {
  std::vector<Mat4> A;
  std::vector<Vec4> B;

  ControlSchedule(const ValueApprox& va, double dt, std::size_t n_steps, bool stationary) {
    const std::size_t n = stationary ? 1 : n_steps;
    A.reserve(n);
    B.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double t = static_cast<double>(k) * dt;
      A.push_back(va.A(t));
      B.push_back(va.B(t));
    }
  }
  const Mat4& a(std::size_t k) const { return A.size() == 1 ? A[0] : A[k]; }
  const Vec4& b(std::size_t k) const { return B.size() == 1 ? B[0] : B[k]; }
};

std::size_t step_count(const SimConfig& c) {
  return static_cast<std::size_t>(std::llround(c.horizon / c.dt));
}

double accounting_error(const Inventory& before_prices, const MarketState& old_state,
                        const MarketState& new_state, double mtm_old, const StepFlows& flows) {
  const double dS = new_state.S - old_state.S;
  const double dE = new_state.E - old_state.E;
  const double expected = mtm_old + flows.spread_pnl - flows.hedge_cost +
                          before_prices.q_S * dS + before_prices.q_F * (dS + dE);
  const double actual = mark_to_market(before_prices, new_state);
  const double scale = std::abs(before_prices.X) + std::abs(before_prices.q_S * new_state.S) +
                       std::abs(before_prices.q_F * (new_state.S + new_state.E)) + 1.0;
  return std::abs(actual - expected) / scale;
}

struct SampleSink {
  virtual ~SampleSink() = default;
  virtual void sample(std::size_t j, const PathSample& s) = 0;
};

PathSummary run_one(const SimConfig& config, const Strategy& strategy, const ControlSchedule& sched,
                    const PriceDynamics& prices, std::uint64_t index, SampleSink& sink,
                    std::vector<FillEvent>* events) {
  const ModelParams& params = strategy.params();
  Rng rng = path_rng(config.seed, index);
  const std::size_t n_steps = step_count(config);
  const bool filtered = config.mode == InformationMode::Filtered;

  MarketState st = config.initial_state;
  st.t = 0.0;
  Inventory inv = config.initial_inventory;
  FilterState fs = initial_filter_state(params);
  ControlDecision d;

  PathSummary summary;
  const double mtm0 = mark_to_market(inv, st);
  double mtm = mtm0;
  std::size_t j = 0;

  const auto emit = [&](std::size_t k) {
    PathSample s;
    s.t = static_cast<double>(k) * config.dt;
    s.state = st;
    s.state.t = s.t;
    s.D_hat = filtered ? fs.D_hat : st.D;
    s.inventory = inv;
    s.mtm = mtm;
    s.v_S = d.v_S;
    s.v_F = d.v_F;
    s.top_bid = d.bid.empty() ? 0.0 : d.bid[0];
    s.top_ask = d.ask.empty() ? 0.0 : d.ask[0];
    sink.sample(j++, s);
  };

  for (std::size_t k = 0; k < n_steps; ++k) {
    const Vec4 x(inv.q_S, inv.q_F, st.E, filtered ? fs.D_hat : st.D);
    strategy.decide_into(sched.a(k), sched.b(k), x, d);
    if (k % config.record_every == 0) emit(k);

    const MarketState old = st;
    const StepFlows flows =
        execute_controls(st, inv, d, rng, params, config.dt, config.freeze_randomness, events, k);
    prices.advance(st, rng, config.freeze_randomness);
    if (filtered) {
      fs = filter_step(fs, st.S - old.S, st.E - old.E, old.E, config.dt, params);
    }

    summary.max_accounting_error =
        std::max(summary.max_accounting_error, accounting_error(inv, old, st, mtm, flows));
    mtm = mark_to_market(inv, st);
    summary.volumes += flows.volumes;
    summary.fills += flows.fills;
  }
  st.t = static_cast<double>(n_steps) * config.dt;
  emit(n_steps);

  summary.terminal_inventory = inv;
  summary.terminal_state = st;
  summary.pnl = mtm - mtm0;
  summary.objective = summary.pnl - params.K_S * inv.q_S * inv.q_S - params.K_F * inv.q_F * inv.q_F;
  return summary;
}

void check_mode(const SimConfig& config, const Strategy& strategy) {
  if ((config.mode == InformationMode::Filtered) != strategy.options().filtered) {
    throw ConfigError(
        "information mode mismatch: filtered simulation needs a strategy solved with the filtered "
        "covariance, and oracle simulation needs a full-information strategy");
  }
}

struct RecordSink final : SampleSink {
  std::vector<PathSample>* out;
  explicit RecordSink(std::vector<PathSample>* o) : out(o) {}
  void sample(std::size_t, const PathSample& s) override { out->push_back(s); }
};

// Sums over paths for each sample index.
struct Moments {
  std::vector<double> t;
  std::vector<double> s_qS, ss_qS, s_qF, ss_qF, s_net, ss_net, s_pnl, ss_pnl;

  explicit Moments(std::size_t n)
      : t(n), s_qS(n), ss_qS(n), s_qF(n), ss_qF(n), s_net(n), ss_net(n), s_pnl(n), ss_pnl(n) {}

  void add(const Moments& o) {
    for (std::size_t j = 0; j < t.size(); ++j) {
      t[j] = o.t[j];
      s_qS[j] += o.s_qS[j];
      ss_qS[j] += o.ss_qS[j];
      s_qF[j] += o.s_qF[j];
      ss_qF[j] += o.ss_qF[j];
      s_net[j] += o.s_net[j];
      ss_net[j] += o.ss_net[j];
      s_pnl[j] += o.s_pnl[j];
      ss_pnl[j] += o.ss_pnl[j];
    }
  }
};

struct MomentSink final : SampleSink {
  Moments* m;
  double mtm0;
  MomentSink(Moments* moments, double initial_mtm) : m(moments), mtm0(initial_mtm) {}
  void sample(std::size_t j, const PathSample& s) override {
    const double qS = s.inventory.q_S, qF = s.inventory.q_F, net = qS + qF, pnl = s.mtm - mtm0;
    m->t[j] = s.t;
    m->s_qS[j] += qS;
    m->ss_qS[j] += qS * qS;
    m->s_qF[j] += qF;
    m->ss_qF[j] += qF * qF;
    m->s_net[j] += net;
    m->ss_net[j] += net * net;
    m->s_pnl[j] += pnl;
    m->ss_pnl[j] += pnl * pnl;
  }
};

}  // namespace

PathRecord simulate_path(const SimConfig& config, const Strategy& strategy, std::uint64_t path_index) {
  validate(config, strategy.params());
  check_mode(config, strategy);
  const ControlSchedule sched(strategy.value(), config.dt, step_count(config),
                              config.stationary_controls);
  const PriceDynamics prices(strategy.params(), config.dt, config.scheme);

  PathRecord rec;
  rec.samples.reserve(step_count(config) / config.record_every + 2);
  RecordSink sink(&rec.samples);
  const auto summary = run_one(config, strategy, sched, prices, path_index, sink,
                               config.record_events ? &rec.events : nullptr);
  rec.volumes = summary.volumes;
  rec.fills = summary.fills;
  rec.objective = mark_to_market(summary.terminal_inventory, summary.terminal_state) -
                  strategy.params().K_S * summary.terminal_inventory.q_S *
                      summary.terminal_inventory.q_S -
                  strategy.params().K_F * summary.terminal_inventory.q_F *
                      summary.terminal_inventory.q_F;
  rec.max_accounting_error = summary.max_accounting_error;
  return rec;
}

EnsembleResult run_paths(const SimConfig& config, const Strategy& strategy) {
  validate(config, strategy.params());
  check_mode(config, strategy);
  const std::size_t n_steps = step_count(config);
  const ControlSchedule sched(strategy.value(), config.dt, n_steps, config.stationary_controls);
  const PriceDynamics prices(strategy.params(), config.dt, config.scheme);
  const std::size_t n_samples = n_steps / config.record_every + 1 + (n_steps % config.record_every ? 1 : 0);

  constexpr std::size_t kBlock = 64;
  const std::size_t n_blocks = (config.n_paths + kBlock - 1) / kBlock;
  std::vector<Moments> block_moments(n_blocks, Moments(n_samples));

  EnsembleResult result;
  result.paths.resize(config.n_paths);
  const double mtm0 = mark_to_market(config.initial_inventory, config.initial_state);

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  const auto worker = [&] {
    try {
      for (std::size_t b = next++; b < n_blocks; b = next++) {
        MomentSink sink(&block_moments[b], mtm0);
        const std::size_t end = std::min(config.n_paths, (b + 1) * kBlock);
        for (std::size_t i = b * kBlock; i < end; ++i) {
          result.paths[i] = run_one(config, strategy, sched, prices, i, sink, nullptr);
        }
      }
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  };

  const unsigned n_threads =
      std::min<unsigned>(resolve_threads(config.threads), static_cast<unsigned>(n_blocks));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < n_threads; ++w) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);

  Moments total(n_samples);
  for (const auto& m : block_moments) total.add(m);
  for (const auto& p : result.paths) result.volumes += p.volumes;

  const double n = static_cast<double>(config.n_paths);
  auto& s = result.series;
  s.t = total.t;
  const auto mean_se = [&](const std::vector<double>& sum, const std::vector<double>& sq,
                           std::vector<double>& mean, std::vector<double>& se, bool std_not_se) {
    mean.resize(n_samples);
    se.resize(n_samples);
    for (std::size_t j = 0; j < n_samples; ++j) {
      mean[j] = sum[j] / n;
      const double var = n > 1.0 ? std::max(0.0, (sq[j] - n * mean[j] * mean[j]) / (n - 1.0)) : 0.0;
      se[j] = std_not_se ? std::sqrt(var) : std::sqrt(var / n);
    }
  };
  mean_se(total.s_qS, total.ss_qS, s.mean_q_S, s.se_q_S, false);
  mean_se(total.s_qF, total.ss_qF, s.mean_q_F, s.se_q_F, false);
  mean_se(total.s_net, total.ss_net, s.mean_net, s.se_net, false);
  mean_se(total.s_pnl, total.ss_pnl, s.mean_pnl, s.std_pnl, true);
  return result;
}

StationaryStats stationary_stats(const PathRecord& rec, double bin_width, int half_bins,
                                 double burn_in) {
  StationaryStats out;
  out.histogram.bin_width = bin_width;
  out.histogram.half_bins = half_bins;
  const int nb = out.histogram.bins();
  out.histogram.counts.assign(static_cast<std::size_t>(nb * nb), 0.0);

  double n = 0.0, mS = 0.0, mF = 0.0, cSS = 0.0, cFF = 0.0, cSF = 0.0;
  for (const auto& s : rec.samples) {
    if (s.t < burn_in) continue;
    const double qS = s.inventory.q_S, qF = s.inventory.q_F;
    const int iS = static_cast<int>(std::lround(qS / bin_width)) + half_bins;
    const int iF = static_cast<int>(std::lround(qF / bin_width)) + half_bins;
    if (iS < 0 || iS >= nb || iF < 0 || iF >= nb) {
      out.histogram.out_of_range += 1.0;
    } else {
      out.histogram.counts[static_cast<std::size_t>(iS * nb + iF)] += 1.0;
    }
    // Welford update of the joint moments.
    n += 1.0;
    const double dS = qS - mS, dF = qF - mF;
    mS += dS / n;
    mF += dF / n;
    cSS += dS * (qS - mS);
    cFF += dF * (qF - mF);
    cSF += dS * (qF - mF);
  }
  if (cSS > 0.0 && cFF > 0.0) out.corr_q = cSF / std::sqrt(cSS * cFF);

  const auto modal = std::max_element(out.histogram.counts.begin(), out.histogram.counts.end()) -
                     out.histogram.counts.begin();
  out.modal_S = static_cast<int>(modal) / nb;
  out.modal_F = static_cast<int>(modal) % nb;
  out.shares = shares(rec.volumes);

  // Non-overlapping hourly windows on the sample grid.
  if (rec.samples.size() >= 2) {
    const double spacing = rec.samples[1].t - rec.samples[0].t;
    const auto per_hour = static_cast<std::size_t>(std::llround((1.0 / 24.0) / spacing));
    std::vector<double> hourly;
    std::size_t start = 0;
    while (start < rec.samples.size() && rec.samples[start].t < burn_in) ++start;
    if (per_hour > 0) {
      for (std::size_t k = start; k + per_hour < rec.samples.size(); k += per_hour) {
        hourly.push_back(rec.samples[k + per_hour].mtm - rec.samples[k].mtm);
      }
    }
    out.hours = hourly.size();
    if (!hourly.empty()) {
      double sum = 0.0;
      for (double h : hourly) sum += h;
      out.hourly_pnl_mean = sum / static_cast<double>(hourly.size());
      double sq = 0.0;
      for (double h : hourly) sq += (h - out.hourly_pnl_mean) * (h - out.hourly_pnl_mean);
      out.hourly_pnl_std =
          hourly.size() > 1 ? std::sqrt(sq / static_cast<double>(hourly.size() - 1)) : 0.0;
    }
  }
  return out;
}

MarketTape read_market_csv(std::istream& in, double max_gap_seconds) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("market CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  bool futures = false;
  if (line == "timestamp_s,spot_bp,efp_bp") {
    futures = false;
  } else if (line == "timestamp_s,spot_bp,futures_bp") {
    futures = true;
  } else {
    throw ConfigError("market CSV header must be timestamp_s,spot_bp,efp_bp or "
                      "timestamp_s,spot_bp,futures_bp");
  }
  MarketTape tape;
  std::size_t row = 1;
  double last = 0.0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c, ',')) {
      throw ConfigError("market CSV row " + std::to_string(row) + ": expected three columns");
    }
    double ts = 0.0, s = 0.0, e = 0.0;
    try {
      ts = std::stod(a);
      s = std::stod(b);
      e = std::stod(c);
    } catch (const std::exception&) {
      throw ConfigError("market CSV row " + std::to_string(row) + ": not numeric");
    }
    if (!tape.t.empty()) {
      if (!(ts > last)) {
        throw ConfigError("market CSV row " + std::to_string(row) + ": timestamps must increase");
      }
      if (ts - last > max_gap_seconds) {
        throw ConfigError("market CSV row " + std::to_string(row) + ": gap of " +
                          std::to_string(ts - last) + " s exceeds the limit");
      }
    }
    last = ts;
    tape.t.push_back(ts / kSecondsPerDay);
    tape.S.push_back(s);
    tape.E.push_back(futures ? e - s : e);
  }
  if (tape.t.size() < 2) throw ConfigError("market CSV needs at least two rows");
  return tape;
}

MarketTape read_market_csv(const std::filesystem::path& path, double max_gap_seconds) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open market CSV " + path.string());
  return read_market_csv(in, max_gap_seconds);
}

PathRecord backtest(const MarketTape& tape, const BacktestConfig& config, const Strategy& strategy) {
  if (tape.t.size() < 2 || tape.S.size() != tape.t.size() || tape.E.size() != tape.t.size()) {
    throw ConfigError("backtest tape is malformed");
  }
  if (config.record_every == 0) throw ConfigError("record_every must be positive");
  if (config.filtered != strategy.options().filtered) {
    throw ConfigError("information mode mismatch between backtest and strategy");
  }
  ModelParams flow_params = strategy.params();
  for (auto& l : flow_params.lambda) l *= config.intensity_scale;

  double max_dt = 0.0;
  for (std::size_t n = 1; n < tape.t.size(); ++n) max_dt = std::max(max_dt, tape.t[n] - tape.t[n - 1]);
  const double lam = *std::max_element(flow_params.lambda.begin(), flow_params.lambda.end());
  if (lam * fill_probability(kQuoteFloor, flow_params) * max_dt > 0.1) {
    throw ConfigError("market CSV sampling too coarse for client-flow thinning");
  }

  const ModelParams& params = strategy.params();
  const Mat4 A = strategy.value().A(0.0);
  const Vec4 B = strategy.value().B(0.0);
  Rng rng = path_rng(config.seed, 0);

  PathRecord rec;
  Inventory inv = config.initial_inventory;
  FilterState fs = initial_filter_state(params);
  ControlDecision d;
  MarketState st{tape.t[0], tape.S[0], tape.E[0], params.D_bar};

  const auto emit = [&] {
    PathSample s;
    s.t = st.t;
    s.state = st;
    s.D_hat = config.filtered ? fs.D_hat : params.D_bar;
    s.inventory = inv;
    s.mtm = mark_to_market(inv, st);
    s.v_S = d.v_S;
    s.v_F = d.v_F;
    s.top_bid = d.bid.empty() ? 0.0 : d.bid[0];
    s.top_ask = d.ask.empty() ? 0.0 : d.ask[0];
    rec.samples.push_back(s);
  };

  const std::size_t n_steps = tape.t.size() - 1;
  for (std::size_t n = 0; n < n_steps; ++n) {
    const double dt = tape.t[n + 1] - tape.t[n];
    const double D = config.filtered ? fs.D_hat : params.D_bar;
    strategy.decide_into(A, B, Vec4(inv.q_S, inv.q_F, st.E, D), d);
    if (n % config.record_every == 0) emit();

    const MarketState old = st;
    const double mtm_old = mark_to_market(inv, st);
    const StepFlows flows = execute_controls(st, inv, d, rng, flow_params, dt, false, &rec.events, n);
    st.t = tape.t[n + 1];
    st.S = tape.S[n + 1];
    st.E = tape.E[n + 1];
    if (config.filtered) fs = filter_step(fs, st.S - old.S, st.E - old.E, old.E, dt, params);
    st.D = config.filtered ? fs.D_hat : params.D_bar;

    rec.max_accounting_error =
        std::max(rec.max_accounting_error, accounting_error(inv, old, st, mtm_old, flows));
    rec.volumes += flows.volumes;
    rec.fills += flows.fills;
  }
  emit();
  rec.objective = rec.samples.back().mtm;
  return rec;
}

}  // namespace efpmm
