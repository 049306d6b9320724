#pragma once

// Monte Carlo engine: correlated (S, E, D) paths, client fills by Bernoulli
// thinning per ladder size and side, piecewise-constant hedging, cash and
// inventory accounting, and summary statistics.
//
// Step ordering at time t_n: the decision is taken on (t_n, prices_n,
// inventory_n); client fills and hedges execute at prices_n; prices then move
// to t_{n+1}; the filter (if any) consumes the realised increments.

#include "efpmm/core.hpp"
#include "efpmm/filter.hpp"
#include "efpmm/policy.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

namespace efpmm {

using Rng = std::mt19937_64;

/// Independent generator for path `index` of a run seeded with `seed`.
Rng path_rng(std::uint64_t seed, std::uint64_t index);

/// Worker count: `requested` if non-zero, else EFPMM_THREADS, else hardware concurrency.
unsigned resolve_threads(unsigned requested = 0);

enum class InformationMode { Oracle, Filtered };
enum class PriceScheme { Euler, Exact };

struct SimConfig {
  double dt = 1.0 / kSecondsPerDay;  // day
  double horizon = 1.0 / 24.0;       // day
  std::size_t n_paths = 1;
  std::uint64_t seed = 1;
  InformationMode mode = InformationMode::Oracle;
  PriceScheme scheme = PriceScheme::Euler;
  Inventory initial_inventory;
  MarketState initial_state;
  bool stationary_controls = false;  // use A(0), B(0) throughout
  bool freeze_randomness = false;    // no price noise and no client fills
  std::size_t record_every = 60;     // steps between recorded samples
  bool record_events = false;
  unsigned threads = 0;
};

/// Throws ConfigError if dt, horizon or the arrival probability bound is violated.
void validate(const SimConfig& config, const ModelParams& params);

struct Volumes {
  double client_bid = 0.0;  // oz bought from clients
  double client_ask = 0.0;  // oz sold to clients
  double spot_hedge = 0.0;
  double futures_hedge = 0.0;

  double total() const { return client_bid + client_ask + spot_hedge + futures_hedge; }
  Volumes& operator+=(const Volumes& o);
};

struct VolumeShares {
  double client_bid = 0.0;
  double client_ask = 0.0;
  double spot_hedge = 0.0;
  double futures_hedge = 0.0;
};

VolumeShares shares(const Volumes& v);

struct FillEvent {
  std::size_t step = 0;
  std::size_t size_index = 0;
  bool client_sells = false;  // true: dealer's bid was hit
  double offset = 0.0;        // bp
  double price = 0.0;         // bp
};

struct StepFlows {
  Volumes volumes;
  double spread_pnl = 0.0;  // sum of z * offset over fills, bp * oz
  double hedge_cost = 0.0;  // (L_S(v_S) + L_F(v_F)) dt, bp * oz
  std::size_t fills = 0;
};

/// Client fills and hedges at the current prices. Appends fills to `events` when non-null.
StepFlows execute_controls(const MarketState& state, Inventory& inv, const ControlDecision& decision,
                           Rng& rng, const ModelParams& params, double dt, bool freeze = false,
                           std::vector<FillEvent>* events = nullptr, std::size_t step_index = 0);

/// Exogenous price dynamics over one step of fixed length.
class PriceDynamics {
 public:
  PriceDynamics(const ModelParams& params, double dt, PriceScheme scheme);

  /// Advances (S, E, D) and t. With freeze, the noise is zero.
  void advance(MarketState& state, Rng& rng, bool freeze = false) const;

 private:
  ModelParams params_;
  double dt_;
  PriceScheme scheme_;
  Mat3 transition_ = Mat3::Identity();
  Eigen::Vector3d offset_ = Eigen::Vector3d::Zero();
  Mat3 noise_factor_ = Mat3::Zero();
};

/// Factor L with L L' = m for a symmetric PSD (possibly singular) matrix.
Mat3 psd_factor(const Mat3& m);

struct StepOutcome {
  MarketState state;
  Inventory inventory;
  StepFlows flows;
};

/// One full step: execute the decision, then advance prices.
StepOutcome step(const MarketState& state, const Inventory& inv, const ControlDecision& decision,
                 Rng& rng, const ModelParams& params, const PriceDynamics& prices, double dt,
                 bool freeze = false);

struct PathSample {
  double t = 0.0;
  MarketState state;
  double D_hat = 0.0;
  Inventory inventory;
  double mtm = 0.0;
  double v_S = 0.0;
  double v_F = 0.0;
  double top_bid = 0.0;
  double top_ask = 0.0;
};

struct PathRecord {
  std::vector<PathSample> samples;
  std::vector<FillEvent> events;
  Volumes volumes;
  std::size_t fills = 0;
  double objective = 0.0;                 // terminal MtM minus inventory penalties
  double max_accounting_error = 0.0;      // relative, per step
};

/// Simulates one path with full recording.
PathRecord simulate_path(const SimConfig& config, const Strategy& strategy, std::uint64_t path_index = 0);

struct PathSummary {
  Inventory terminal_inventory;
  MarketState terminal_state;
  double pnl = 0.0;        // terminal MtM minus initial MtM
  double objective = 0.0;  // pnl minus terminal inventory penalties
  Volumes volumes;
  std::size_t fills = 0;
  double max_accounting_error = 0.0;
};

struct EnsembleSeries {
  std::vector<double> t;
  std::vector<double> mean_q_S, mean_q_F, mean_net;
  std::vector<double> se_q_S, se_q_F, se_net;
  std::vector<double> mean_pnl, std_pnl;
};

struct EnsembleResult {
  std::vector<PathSummary> paths;
  EnsembleSeries series;
  Volumes volumes;
};

/// Deterministic in (config, strategy) regardless of the worker count.
EnsembleResult run_paths(const SimConfig& config, const Strategy& strategy);

struct Histogram2D {
  double bin_width = 0.0;
  int half_bins = 0;  // bins are centred on multiples of bin_width in [-half_bins, half_bins]
  std::vector<double> counts;  // row-major [i_S][i_F]
  double out_of_range = 0.0;

  int bins() const { return 2 * half_bins + 1; }
  double centre(int i) const { return (i - half_bins) * bin_width; }
  double at(int i_S, int i_F) const { return counts[static_cast<std::size_t>(i_S * bins() + i_F)]; }
};

struct StationaryStats {
  Histogram2D histogram;
  int modal_S = 0;
  int modal_F = 0;
  double corr_q = 0.0;
  VolumeShares shares;
  double hourly_pnl_mean = 0.0;
  double hourly_pnl_std = 0.0;
  std::size_t hours = 0;
};

/// Histogram over (q_S, q_F) and hourly P&L moments from a long path.
/// `burn_in` (day) of samples is discarded.
StationaryStats stationary_stats(const PathRecord& record, double bin_width = 250.0,
                                 int half_bins = 40, double burn_in = 0.0);

struct MarketTape {
  std::vector<double> t;  // day
  std::vector<double> S;  // bp
  std::vector<double> E;  // bp
};

/// CSV with header timestamp_s,spot_bp,efp_bp or timestamp_s,spot_bp,futures_bp.
/// Timestamps must strictly increase; gaps above max_gap_seconds are rejected.
MarketTape read_market_csv(const std::filesystem::path& path, double max_gap_seconds = 300.0);
MarketTape read_market_csv(std::istream& in, double max_gap_seconds = 300.0);

struct BacktestConfig {
  std::uint64_t seed = 1;
  double intensity_scale = 1.0;
  bool filtered = true;  // policy sees D_hat; otherwise D = D_bar
  Inventory initial_inventory;
  std::size_t record_every = 60;
};

/// Replays recorded prices as the exogenous path and simulates client flow and hedging.
PathRecord backtest(const MarketTape& tape, const BacktestConfig& config, const Strategy& strategy);

}  // namespace efpmm
