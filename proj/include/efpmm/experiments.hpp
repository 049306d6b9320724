#pragma once

// Experiment drivers behind the command-line tool. Each command reads a JSON
// config, writes CSV files into an output directory and returns a summary
// that ends up in manifest.json next to the CSVs.

#include "efpmm/core.hpp"
#include "efpmm/policy.hpp"
#include "efpmm/sim.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace efpmm::experiments {

using nlohmann::json;

std::string version();

/// Parameters from "params" (inline object) or "params_file" (relative to
/// base_dir), defaulting to the gold set, then "overrides" applied key by key.
ModelParams resolve_params(const json& config, const std::filesystem::path& base_dir);

/// Inclusive arithmetic grid {"min", "max", "step"}.
struct Grid {
  double min = 0.0;
  double max = 0.0;
  double step = 1.0;
  std::vector<double> values() const;
};

// ---------------------------------------------------------------------------
// Reusable computations

/// Relaxation diagnostics on the ensemble mean of q_S + q_F.
struct RelaxSummary {
  double half_life = 0.0;         // day, NaN if the net exposure never halves
  double min_q_F = 0.0;           // oz
  double t_min_q_F = 0.0;         // day
  double final_q_F = 0.0;         // oz
  double worst_rise = 0.0;        // largest rise above the running minimum, in units of 3 SE
  bool net_monotone = true;       // worst_rise <= 1
};

RelaxSummary summarize_relaxation(const EnsembleSeries& series);

/// Spot and futures no-execution slabs in (q_S, eps = E / sigma_E) at fixed q_F.
struct ZonePair {
  ZoneBoundary spot;
  ZoneBoundary futures;

  /// The two slabs are disjoint at eps: every inventory trades one instrument.
  bool crossed(double eps) const;
};

ZonePair zone_pair(const Strategy& strategy, double q_F, double t = 0.0);

/// Skew at eps and the smallest positive eps at which spot execution starts,
/// both at zero inventories and D = D_bar.
struct EfpResponse {
  double skew = 0.0;
  double onset_eps = 0.0;  // +inf when spot execution never starts
};

EfpResponse efp_response(const Strategy& strategy, double eps, double z);

struct SweepPoint {
  double ratio = 0.0;  // sigma_D / sigma_E
  double skew = 0.0;
  double onset_eps = 0.0;
};

std::vector<SweepPoint> nested_sweep(const ModelParams& base, const std::vector<double>& ratios,
                                     double eps);

struct SpreadRow {
  double z = 0.0;
  double q_S = 0.0;
  double with_futures = 0.0;  // bid + ask offsets, bp
  double spot_only = 0.0;
};

/// Quoted spreads per ladder size with and without the futures control.
std::vector<SpreadRow> spread_comparison(const Strategy& with_futures, const Strategy& spot_only,
                                         const std::vector<double>& q_S);

/// Uniformly sampled EFP series from the exact OU transition, starting at D_bar.
std::vector<double> simulate_efp(const ModelParams& params, double spacing, std::size_t n,
                                 std::uint64_t seed);

/// Tape of (S, E) from the exact transition at 1-second spacing.
MarketTape synthetic_tape(const ModelParams& params, double days, std::uint64_t seed);

/// Share of recorded samples where the EFP position q_F and the deviation
/// E - D_hat have opposite signs (samples where either is zero are skipped).
double efp_opposition_share(const PathRecord& record);

// ---------------------------------------------------------------------------
// Commands

struct Invocation {
  json config;
  std::filesystem::path base_dir;  // relative paths in the config resolve here
  std::filesystem::path out_dir;
  std::uint64_t seed = 1;
};

struct Outcome {
  std::vector<std::string> files;  // relative to out_dir
  json summary = json::object();
};

using Command = std::function<Outcome(const Invocation&, const ModelParams&)>;

const std::map<std::string, Command>& commands();

/// Resolves parameters, runs the command, writes manifest.json and returns it.
/// `seed` overrides the config's "seed" entry.
json run(const std::string& name, const json& config, const std::filesystem::path& base_dir,
         const std::filesystem::path& out_dir, std::optional<std::uint64_t> seed = std::nullopt);

}  // namespace efpmm::experiments
