#include "efpmm/experiments.hpp"

#include "efpmm/filter.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#ifndef EFPMM_VERSION
#define EFPMM_VERSION "0.0.0"
#endif

namespace efpmm::experiments {

namespace fs = std::filesystem;

std::string version() { return EFPMM_VERSION; }

namespace {

constexpr double kSecond = 1.0 / kSecondsPerDay;

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

template <class T>
T knob(const json& c, const char* key, T fallback) {
  if (!c.contains(key)) return fallback;
  try {
    return c.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

double positive(double v, const char* key) {
  if (!(std::isfinite(v) && v > 0.0)) throw ConfigError(std::string(key) + " must be positive");
  return v;
}

std::vector<double> finite_list(const json& c, const char* key, std::vector<double> fallback) {
  auto v = knob(c, key, std::move(fallback));
  if (v.empty()) throw ConfigError(std::string(key) + " must not be empty");
  for (double x : v) {
    if (!std::isfinite(x)) throw ConfigError(std::string(key) + " entries must be finite");
  }
  return v;
}

Grid grid(const json& c, const char* key, Grid fallback) {
  if (!c.contains(key)) return fallback;
  const json& g = c.at(key);
  if (!g.is_object()) throw ConfigError(std::string(key) + " must be an object {min, max, step}");
  Grid out;
  out.min = knob(g, "min", fallback.min);
  out.max = knob(g, "max", fallback.max);
  out.step = knob(g, "step", fallback.step);
  if (!std::isfinite(out.min) || !std::isfinite(out.max) || !(out.step > 0.0) ||
      out.max < out.min || (out.max - out.min) / out.step > 1e7) {
    throw ConfigError(std::string(key) + ": grid must be finite with min <= max and step > 0");
  }
  return out;
}

void check_keys(const json& c, std::initializer_list<const char*> allowed) {
  static const std::set<std::string> common = {"params", "params_file", "overrides", "seed",
                                               "description"};
  for (const auto& [key, _] : c.items()) {
    if (common.count(key)) continue;
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
}

std::string tag(double v) {
  std::ostringstream os;
  if (v == std::round(v) && std::abs(v) < 1e9) {
    os << static_cast<long long>(v);
  } else {
    os << std::setprecision(3) << v;
  }
  return os.str();
}

class Csv {
 public:
  Csv(const fs::path& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw ConfigError("cannot write " + path.string());
    out_ << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
  }
  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << values[i];
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

json matrix_json(const Mat4& m) {
  json out = json::array();
  for (int i = 0; i < 4; ++i) out.push_back({m(i, 0), m(i, 1), m(i, 2), m(i, 3)});
  return out;
}

// NaN and inf are not valid JSON numbers.
json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

bool nonincreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[i - 1]) return false;
  }
  return true;
}

bool nondecreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] < v[i - 1]) return false;
  }
  return true;
}

PriceScheme scheme_from(const json& c) {
  const auto s = knob<std::string>(c, "scheme", "euler");
  if (s == "euler") return PriceScheme::Euler;
  if (s == "exact") return PriceScheme::Exact;
  throw ConfigError("scheme must be \"euler\" or \"exact\"");
}

// ---------------------------------------------------------------------------

Outcome cmd_solve(const Invocation& inv, const ModelParams& p) {
  const json& c = inv.config;
  check_keys(c, {"riccati_step", "filtered", "futures_enabled"});
  StrategyOptions opt;
  opt.riccati_step = positive(knob(c, "riccati_step", kDefaultRiccatiStep), "riccati_step");
  opt.filtered = knob(c, "filtered", false);
  opt.futures_enabled = knob(c, "futures_enabled", true);
  const auto t0 = std::chrono::steady_clock::now();
  const Strategy s(p, opt);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::ofstream out(inv.out_dir / "value.csv");
  if (!out) throw ConfigError("cannot write value.csv");
  s.value().write_csv(out);

  Outcome o;
  o.files = {"value.csv"};
  const Vec4 B0 = s.value().B(0.0);
  o.summary = {{"solve_seconds", seconds},
               {"nodes", s.value().grid().size()},
               {"A0", matrix_json(s.value().A(0.0))},
               {"B0", {B0(0), B0(1), B0(2), B0(3)}},
               {"max_step_asymmetry", s.value().max_step_asymmetry()},
               {"quad", {{"a0", s.quad().a0}, {"a1", s.quad().a1}, {"a2", s.quad().a2}}}};
  return o;
}

Outcome cmd_ladder(const Invocation& inv, const ModelParams& p) {
  const json& c = inv.config;
  check_keys(c, {"q_S", "q_F", "E", "D", "t"});
  const auto q_S = grid(c, "q_S", {-5000.0, 5000.0, 50.0}).values();
  const auto q_F = finite_list(c, "q_F", {0.0, 1000.0});
  const double E = knob(c, "E", 0.0);
  const double D = knob(c, "D", p.D_bar);
  const double t = knob(c, "t", 0.0);
  if (!(t >= 0.0 && t <= p.T)) throw ConfigError("t must lie in [0, T]");
  const Strategy s(p);

  std::vector<std::string> header = {"q_S"};
  for (double z : p.ladder) header.push_back("bid_" + tag(z));
  for (double z : p.ladder) header.push_back("ask_" + tag(z));
  header.push_back("v_S");
  header.push_back("v_F");

  Outcome o;
  o.summary["sheets"] = json::array();
  for (double qf : q_F) {
    const std::string name = "ladder_qF_" + tag(qf) + ".csv";
    Csv csv(inv.out_dir / name, header);
    for (double qs : q_S) {
      const auto d = decide(s.value(), t, Vec4(qs, qf, E, D), p);
      std::vector<double> row = {qs};
      row.insert(row.end(), d.bid.begin(), d.bid.end());
      row.insert(row.end(), d.ask.begin(), d.ask.end());
      row.push_back(d.v_S);
      row.push_back(d.v_F);
      csv.row(row);
    }
    o.files.push_back(name);

    ZoneSlice slice;
    slice.base = Vec4(0.0, qf, E, D);
    slice.solved = Axis::q_S;
    slice.free = Axis::E;
    const auto spot = no_execution_zone(s.value(), t, Instrument::Spot, slice, p);
    const auto fut = no_execution_zone(s.value(), t, Instrument::Futures, slice, p);
    o.summary["sheets"].push_back({{"q_F", qf},
                                   {"file", name},
                                   {"spot_zone", {spot.lower(E), spot.upper(E)}},
                                   {"futures_zone", {fut.lower(E), fut.upper(E)}}});
  }
  return o;
}

Outcome cmd_relax(const Invocation& inv, const ModelParams& p) {
  const json& c = inv.config;
  check_keys(c, {"n_paths", "horizon_seconds", "dt_seconds", "q_S0", "q_F0", "record_every",
                 "scheme"});
  SimConfig sc;
  sc.n_paths = knob<std::size_t>(c, "n_paths", 20000);
  sc.horizon = positive(knob(c, "horizon_seconds", p.T * kSecondsPerDay), "horizon_seconds") * kSecond;
  sc.dt = positive(knob(c, "dt_seconds", 1.0), "dt_seconds") * kSecond;
  sc.record_every = knob<std::size_t>(c, "record_every", 10);
  sc.scheme = scheme_from(c);
  sc.seed = inv.seed;
  sc.initial_inventory.q_S = knob(c, "q_S0", 1000.0);
  sc.initial_inventory.q_F = knob(c, "q_F0", 0.0);
  sc.initial_state.D = p.D_bar;
  if (sc.horizon > p.T * (1.0 + 1e-12)) throw ConfigError("horizon_seconds exceeds the horizon T");

  const Strategy s(p);
  const auto r = run_paths(sc, s);
  const auto& se = r.series;
  Csv csv(inv.out_dir / "relax.csv", {"t_seconds", "mean_q_S", "se_q_S", "mean_q_F", "se_q_F",
                                      "mean_net", "se_net", "mean_pnl", "std_pnl"});
  for (std::size_t j = 0; j < se.t.size(); ++j) {
    csv.row({se.t[j] * kSecondsPerDay, se.mean_q_S[j], se.se_q_S[j], se.mean_q_F[j], se.se_q_F[j],
             se.mean_net[j], se.se_net[j], se.mean_pnl[j], se.std_pnl[j]});
  }
  const auto rs = summarize_relaxation(se);
  const auto sh = shares(r.volumes);
  Outcome o;
  o.files = {"relax.csv"};
  o.summary = {{"n_paths", sc.n_paths},
               {"half_life_minutes", number(rs.half_life * 1440.0)},
               {"min_mean_q_F", rs.min_q_F},
               {"t_min_mean_q_F_seconds", rs.t_min_q_F * kSecondsPerDay},
               {"final_mean_q_F", rs.final_q_F},
               {"net_monotone_within_3se", rs.net_monotone},
               {"worst_rise_over_3se", rs.worst_rise},
               {"volume_shares",
                {{"client_bid", sh.client_bid},
                 {"client_ask", sh.client_ask},
                 {"spot_hedge", sh.spot_hedge},
                 {"futures_hedge", sh.futures_hedge}}}};
  return o;
}

Outcome cmd_zones(const Invocation& inv, const ModelParams& p) {
  const json& c = inv.config;
  check_keys(c, {"gammas", "eps", "q_F"});
  const auto gammas = finite_list(c, "gammas", {1e-3, 1e-4});
  const auto eps = grid(c, "eps", {-3.0, 3.0, 0.05}).values();
  const double q_F = knob(c, "q_F", 0.0);

  Outcome o;
  o.summary["gammas"] = json::array();
  for (double g : gammas) {
    ModelParams pg = p;
    pg.gamma = g;
    const Strategy s(pg);
    const ZonePair z = zone_pair(s, q_F);
    const std::string name = "zones_gamma_" + tag(g) + ".csv";
    Csv csv(inv.out_dir / name,
            {"eps", "spot_lower", "spot_upper", "futures_lower", "futures_upper", "crossed"});
    std::vector<double> crossed;
    for (double w : eps) {
      const bool x = z.crossed(w);
      if (x) crossed.push_back(w);
      csv.row({w, z.spot.lower(w), z.spot.upper(w), z.futures.lower(w), z.futures.upper(w),
               x ? 1.0 : 0.0});
    }
    o.files.push_back(name);
    json entry = {{"gamma", g},
                  {"file", name},
                  {"spot", {{"lower_intercept", z.spot.lower_intercept},
                            {"upper_intercept", z.spot.upper_intercept},
                            {"slope", z.spot.slope}}},
                  {"futures", {{"lower_intercept", z.futures.lower_intercept},
                               {"upper_intercept", z.futures.upper_intercept},
                               {"slope", z.futures.slope}}},
                  {"crossing_points", crossed.size()}};
    if (!crossed.empty()) {
      entry["crossing_eps_min"] = *std::min_element(crossed.begin(), crossed.end());
      entry["crossing_eps_max"] = *std::max_element(crossed.begin(), crossed.end());
      double nearest = std::abs(crossed.front());
      for (double w : crossed) nearest = std::min(nearest, std::abs(w));
      entry["crossing_abs_eps_min"] = nearest;
    }
    o.summary["gammas"].push_back(entry);
  }
  return o;
}

Outcome cmd_skewmap(const Invocation& inv, const ModelParams& p) {
  const json& c = inv.config;
  check_keys(c, {"gammas", "eps", "position", "axis", "size"});
  const auto gammas = finite_list(c, "gammas", {1e-3, 1e-4});
  const auto eps = grid(c, "eps", {-3.0, 3.0, 0.1}).values();
  const auto pos = grid(c, "position", {-3000.0, 3000.0, 100.0}).values();
  const auto axis = knob<std::string>(c, "axis", "q_S");
  if (axis != "q_S" && axis != "efp") throw ConfigError("axis must be \"q_S\" or \"efp\"");
  const double z = knob(c, "size", p.ladder.front());
  if (std::find(p.ladder.begin(), p.ladder.end(), z) == p.ladder.end()) {
    throw ConfigError("size must be one of the ladder sizes");
  }

  Outcome o;
  o.summary["gammas"] = json::array();
  for (double g : gammas) {
    ModelParams pg = p;
    pg.gamma = g;
    const Strategy s(pg);
    const std::string name = "skew_gamma_" + tag(g) + ".csv";
    Csv csv(inv.out_dir / name, {axis == "efp" ? "efp_position" : "q_S", "eps", "skew"});
    double at_origin = 0.0;
    for (double q : pos) {
      for (double w : eps) {
        // EFP position q: long q futures against q short spot.
        const Vec4 x = axis == "efp" ? Vec4(-q, q, w * pg.sigma_E, pg.D_bar)
                                     : Vec4(q, 0.0, w * pg.sigma_E, pg.D_bar);
        const double k = skew(s.value(), 0.0, x, z, pg);
        if (q == 0.0 && w == 0.0) at_origin = k;
        csv.row({q, w, k});
      }
    }
    o.files.push_back(name);
    o.summary["gammas"].push_back({{"gamma", g}, {"file", name}, {"skew_at_origin", at_origin}});
  }
  return o;
}

Outcome cmd_nested_sweep(const Invocation& inv, const ModelParams& p) {
  const json& c = inv.config;
  check_keys(c, {"ratios", "eps"});
  const auto ratios = finite_list(c, "ratios", {0.0, 0.1, 0.2, 0.3, 0.4, 0.6, 0.8, 1.0});
  const double eps = knob(c, "eps", 1.0);
  const auto pts = nested_sweep(p, ratios, eps);
  Csv csv(inv.out_dir / "nested_sweep.csv", {"sigma_D_over_sigma_E", "sigma_D", "skew", "onset_eps"});
  std::vector<double> mag, onset;
  for (const auto& pt : pts) {
    csv.row({pt.ratio, pt.ratio * p.sigma_E, pt.skew, pt.onset_eps});
    mag.push_back(std::abs(pt.skew));
    onset.push_back(pt.onset_eps);
  }
  Outcome o;
  o.files = {"nested_sweep.csv"};
  o.summary = {{"points", pts.size()},
               {"skew_magnitude_nonincreasing", nonincreasing(mag)},
               {"onset_nondecreasing", nondecreasing(onset)}};
  return o;
}

struct FrontierPoint {
  StationaryStats stats;
  double sharpe = 0.0;
};

FrontierPoint stationary_point(const ModelParams& p, const StrategyOptions& opt, const SimConfig& sc,
                               double burn_in) {
  const Strategy s(p, opt);
  const auto rec = simulate_path(sc, s);
  FrontierPoint out;
  out.stats = stationary_stats(rec, 250.0, 40, burn_in);
  out.sharpe = out.stats.hourly_pnl_std > 0.0 ? out.stats.hourly_pnl_mean / out.stats.hourly_pnl_std
                                              : 0.0;
  return out;
}

Outcome cmd_frontier(const Invocation& inv, const ModelParams& p) {
  const json& c = inv.config;
  check_keys(c, {"gammas", "horizon_seconds", "burn_in_seconds", "record_every", "compare_spot_only"});
  const auto gammas = finite_list(c, "gammas", {1e-5, 3.16e-5, 1e-4, 3.16e-4, 1e-3, 3.16e-3, 1e-2});
  SimConfig sc;
  sc.horizon = positive(knob(c, "horizon_seconds", 1e6), "horizon_seconds") * kSecond;
  sc.record_every = knob<std::size_t>(c, "record_every", 60);
  sc.stationary_controls = true;
  sc.seed = inv.seed;
  sc.initial_state.D = p.D_bar;
  const double burn = knob(c, "burn_in_seconds", 3600.0) * kSecond;
  const bool compare = knob(c, "compare_spot_only", true);

  Csv csv(inv.out_dir / "frontier.csv",
          {"gamma", "share_client_bid", "share_client_ask", "share_spot_hedge",
           "share_futures_hedge", "hourly_pnl_mean", "hourly_pnl_std", "hours", "sharpe",
           "sharpe_spot_only"});
  std::vector<double> stds;
  json rows = json::array();
  for (double g : gammas) {
    ModelParams pg = p;
    pg.gamma = g;
    const auto pt = stationary_point(pg, {}, sc, burn);
    double spot_only = std::numeric_limits<double>::quiet_NaN();
    if (compare) {
      StrategyOptions off;
      off.futures_enabled = false;
      spot_only = stationary_point(pg, off, sc, burn).sharpe;
    }
    const auto& st = pt.stats;
    csv.row({g, st.shares.client_bid, st.shares.client_ask, st.shares.spot_hedge,
             st.shares.futures_hedge, st.hourly_pnl_mean, st.hourly_pnl_std,
             static_cast<double>(st.hours), pt.sharpe, spot_only});
    stds.push_back(st.hourly_pnl_std);
    rows.push_back({{"gamma", g}, {"sharpe", pt.sharpe}, {"sharpe_spot_only", number(spot_only)}});
  }
  Outcome o;
  o.files = {"frontier.csv"};
  o.summary = {{"pnl_std_nonincreasing_in_gamma", nonincreasing(stds)}, {"points", rows}};
  return o;
}

Outcome cmd_stationary(const Invocation& inv, const ModelParams& p) {
  const json& c = inv.config;
  check_keys(c, {"horizon_seconds", "burn_in_seconds", "record_every", "bin_width", "half_bins",
                 "futures_enabled"});
  SimConfig sc;
  sc.horizon = positive(knob(c, "horizon_seconds", 1e7), "horizon_seconds") * kSecond;
  sc.record_every = knob<std::size_t>(c, "record_every", 60);
  sc.stationary_controls = true;
  sc.seed = inv.seed;
  sc.initial_state.D = p.D_bar;
  const double burn = knob(c, "burn_in_seconds", 3600.0) * kSecond;
  const double bin = positive(knob(c, "bin_width", 250.0), "bin_width");
  const int half = knob(c, "half_bins", 40);
  if (half < 1) throw ConfigError("half_bins must be at least 1");
  StrategyOptions opt;
  opt.futures_enabled = knob(c, "futures_enabled", true);

  const Strategy s(p, opt);
  const auto rec = simulate_path(sc, s);
  const auto st = stationary_stats(rec, bin, half, burn);
  Csv csv(inv.out_dir / "inventory_hist.csv", {"q_S", "q_F", "count"});
  const auto& h = st.histogram;
  for (int i = 0; i < h.bins(); ++i) {
    for (int j = 0; j < h.bins(); ++j) csv.row({h.centre(i), h.centre(j), h.at(i, j)});
  }
  Outcome o;
  o.files = {"inventory_hist.csv"};
  o.summary = {{"corr_q_S_q_F", st.corr_q},
               {"modal_q_S", h.centre(st.modal_S)},
               {"modal_q_F", h.centre(st.modal_F)},
               {"modal_on_diagonal", st.modal_S + st.modal_F == 2 * half},
               {"out_of_range", h.out_of_range},
               {"hourly_pnl_mean", st.hourly_pnl_mean},
               {"hourly_pnl_std", st.hourly_pnl_std},
               {"volume_shares",
                {{"client_bid", st.shares.client_bid},
                 {"client_ask", st.shares.client_ask},
                 {"spot_hedge", st.shares.spot_hedge},
                 {"futures_hedge", st.shares.futures_hedge}}},
               {"max_accounting_error", rec.max_accounting_error}};
  return o;
}

Outcome cmd_spread_compare(const Invocation& inv, const ModelParams& p) {
  const json& c = inv.config;
  check_keys(c, {"q_S", "top_of_book"});
  const auto q_S = finite_list(c, "q_S", {0.0, 2500.0});
  const auto top = grid(c, "top_of_book", {-5000.0, 5000.0, 100.0}).values();
  const Strategy with(p);
  StrategyOptions off;
  off.futures_enabled = false;
  const Strategy without(p, off);

  const auto rows = spread_comparison(with, without, q_S);
  Csv by_size(inv.out_dir / "spread_by_size.csv", {"size", "q_S", "with_futures", "spot_only"});
  json better = json::object();
  for (const auto& r : rows) {
    by_size.row({r.z, r.q_S, r.with_futures, r.spot_only});
    const std::string key = tag(r.q_S);
    if (!better.contains(key)) better[key] = true;
    if (r.with_futures > r.spot_only) better[key] = false;
  }
  Csv tob(inv.out_dir / "spread_top.csv", {"q_S", "with_futures", "spot_only"});
  for (const auto& r : spread_comparison(with, without, top)) {
    if (r.z == p.ladder.front()) tob.row({r.q_S, r.with_futures, r.spot_only});
  }
  Outcome o;
  o.files = {"spread_by_size.csv", "spread_top.csv"};
  o.summary = {{"with_futures_not_wider", better}};
  return o;
}

Outcome cmd_backtest(const Invocation& inv, const ModelParams& p) {
  const json& c = inv.config;
  check_keys(c, {"market_csv", "max_gap_seconds", "synthetic_days", "intensity_scale", "filtered",
                 "record_every", "q_S0", "q_F0"});
  MarketTape tape;
  Outcome o;
  if (c.contains("market_csv")) {
    const fs::path path = inv.base_dir / knob<std::string>(c, "market_csv", "");
    tape = read_market_csv(path, knob(c, "max_gap_seconds", 300.0));
  } else {
    const double days = positive(knob(c, "synthetic_days", 1.0), "synthetic_days");
    tape = synthetic_tape(p, days, inv.seed);
    Csv csv(inv.out_dir / "tape.csv", {"timestamp_s", "spot_bp", "efp_bp"});
    for (std::size_t n = 0; n < tape.t.size(); ++n) {
      csv.row({std::round(tape.t[n] * kSecondsPerDay), tape.S[n], tape.E[n]});
    }
    o.files.push_back("tape.csv");
  }
  BacktestConfig bc;
  bc.seed = inv.seed;
  bc.intensity_scale = knob(c, "intensity_scale", 1.0);
  if (!(bc.intensity_scale >= 0.0)) throw ConfigError("intensity_scale must be non-negative");
  bc.filtered = knob(c, "filtered", true);
  bc.record_every = knob<std::size_t>(c, "record_every", 60);
  bc.initial_inventory.q_S = knob(c, "q_S0", 0.0);
  bc.initial_inventory.q_F = knob(c, "q_F0", 0.0);
  StrategyOptions opt;
  opt.filtered = bc.filtered;
  const Strategy s(p, opt);
  const auto rec = backtest(tape, bc, s);

  Csv csv(inv.out_dir / "backtest.csv",
          {"t_seconds", "spot_bp", "efp_bp", "D_hat", "q_S", "q_F", "mtm", "v_S", "v_F"});
  for (const auto& x : rec.samples) {
    csv.row({x.t * kSecondsPerDay, x.state.S, x.state.E, x.D_hat, x.inventory.q_S, x.inventory.q_F,
             x.mtm, x.v_S, x.v_F});
  }
  o.files.push_back("backtest.csv");
  const auto sh = shares(rec.volumes);
  o.summary = {{"pnl", rec.samples.back().mtm - rec.samples.front().mtm},
               {"fills", rec.fills},
               {"efp_opposition_share", efp_opposition_share(rec)},
               {"max_accounting_error", rec.max_accounting_error},
               {"volume_shares",
                {{"client_bid", sh.client_bid},
                 {"client_ask", sh.client_ask},
                 {"spot_hedge", sh.spot_hedge},
                 {"futures_hedge", sh.futures_hedge}}}};
  return o;
}

Outcome cmd_filter_demo(const Invocation& inv, const ModelParams& p) {
  const json& c = inv.config;
  check_keys(c, {"days", "record_every", "burn_in_days", "compare_paths", "compare_horizon_seconds"});
  StrategyOptions filt;
  filt.filtered = true;
  const Strategy filtered(p, filt);

  SimConfig sc;
  sc.horizon = positive(knob(c, "days", 5.0), "days");
  sc.record_every = knob<std::size_t>(c, "record_every", 60);
  sc.mode = InformationMode::Filtered;
  sc.stationary_controls = true;
  sc.seed = inv.seed;
  sc.initial_state.D = p.D_bar;
  const double burn = knob(c, "burn_in_days", 1.0);
  const auto rec = simulate_path(sc, filtered);

  Csv csv(inv.out_dir / "filter_demo.csv", {"t_days", "E", "D", "D_hat"});
  double se = 0.0, n = 0.0;
  for (const auto& x : rec.samples) {
    csv.row({x.t, x.state.E, x.state.D, x.D_hat});
    if (x.t >= burn) {
      se += (x.D_hat - x.state.D) * (x.D_hat - x.state.D);
      n += 1.0;
    }
  }
  const double mse = n > 0.0 ? se / n : std::numeric_limits<double>::quiet_NaN();
  const double nu2 = asymptotic_variance(p);

  // Paired-seed comparison of oracle and filtered P&L over the control horizon.
  SimConfig pc;
  pc.n_paths = knob<std::size_t>(c, "compare_paths", 200);
  pc.horizon = positive(knob(c, "compare_horizon_seconds", p.T * kSecondsPerDay),
                        "compare_horizon_seconds") * kSecond;
  if (pc.horizon > p.T * (1.0 + 1e-12)) throw ConfigError("compare_horizon_seconds exceeds T");
  pc.seed = inv.seed;
  pc.record_every = 600;
  pc.initial_state.D = p.D_bar;
  const Strategy oracle(p);
  const auto ro = run_paths(pc, oracle);
  pc.mode = InformationMode::Filtered;
  const auto rf = run_paths(pc, filtered);
  Csv cmp(inv.out_dir / "filter_compare.csv", {"path", "pnl_oracle", "pnl_filtered"});
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < pc.n_paths; ++i) {
    cmp.row({static_cast<double>(i), ro.paths[i].pnl, rf.paths[i].pnl});
    const double d = rf.paths[i].pnl - ro.paths[i].pnl;
    sum += d;
    sq += d * d;
  }
  const double m = static_cast<double>(pc.n_paths);
  const double mean_diff = sum / m;
  const double se_diff = m > 1.0 ? std::sqrt(std::max(0.0, (sq - m * mean_diff * mean_diff) / (m - 1.0)) / m)
                                 : 0.0;
  Outcome o;
  o.files = {"filter_demo.csv", "filter_compare.csv"};
  o.summary = {{"filter_mse", number(mse)},
               {"nu_inf2", nu2},
               {"mse_over_nu_inf2", number(nu2 > 0.0 ? mse / nu2 : std::numeric_limits<double>::quiet_NaN())},
               {"sigma_D_hat", effective_sigma_D(p).sigma_D_hat},
               {"paired_pnl_difference", mean_diff},
               {"paired_pnl_difference_se", se_diff}};
  return o;
}

Outcome cmd_calibrate(const Invocation& inv, const ModelParams& p) {
  const json& c = inv.config;
  check_keys(c, {"efp_csv", "synthetic_days", "spacing_seconds", "init", "bootstrap_samples",
                 "lags_seconds"});
  std::vector<double> series;
  double spacing = 0.0;
  const bool synthetic = !c.contains("efp_csv");
  if (synthetic) {
    spacing = positive(knob(c, "spacing_seconds", 1.0), "spacing_seconds") * kSecond;
    const double days = positive(knob(c, "synthetic_days", 30.0), "synthetic_days");
    series = simulate_efp(p, spacing, static_cast<std::size_t>(std::llround(days / spacing)), inv.seed);
  } else {
    auto s = read_efp_csv(inv.base_dir / knob<std::string>(c, "efp_csv", ""));
    series = std::move(s.values);
    spacing = s.spacing;
  }
  ModelParams init = p;
  init.k_E = 3.0;
  init.sigma_E = 3.0;
  init.k_D = 0.5;
  init.sigma_D = 1.0;
  if (c.contains("init")) {
    const json& j = c.at("init");
    if (!j.is_object()) throw ConfigError("init must be an object");
    init.k_E = knob(j, "k_E", init.k_E);
    init.sigma_E = knob(j, "sigma_E", init.sigma_E);
    init.k_D = knob(j, "k_D", init.k_D);
    init.sigma_D = knob(j, "sigma_D", init.sigma_D);
  }
  CalibrationOptions opt;
  opt.bootstrap_samples = knob(c, "bootstrap_samples", 0);
  opt.bootstrap_seed = inv.seed;
  opt.lags_seconds = knob(c, "lags_seconds", opt.lags_seconds);
  const auto r = calibrate_efp(series, spacing, init, opt);

  json result = {{"k_E", r.k_E},
                 {"sigma_E", r.sigma_E},
                 {"k_D", r.k_D},
                 {"sigma_D", r.sigma_D},
                 {"D_bar", r.D_bar},
                 {"objective", r.objective},
                 {"iterations", r.iterations},
                 {"zero_volatility", r.zero_volatility},
                 {"se", {{"k_E", r.se_k_E}, {"sigma_E", r.se_sigma_E}, {"k_D", r.se_k_D},
                         {"sigma_D", r.se_sigma_D}}},
                 {"samples", series.size()},
                 {"spacing_seconds", spacing * kSecondsPerDay}};
  if (synthetic) {
    result["truth"] = {{"k_E", p.k_E}, {"sigma_E", p.sigma_E}, {"k_D", p.k_D},
                       {"sigma_D", p.sigma_D}, {"D_bar", p.D_bar}};
  }
  {
    std::ofstream out(inv.out_dir / "calibration.json");
    if (!out) throw ConfigError("cannot write calibration.json");
    out << result.dump(2) << '\n';
  }

  Outcome o;
  o.files = {"calibration.json"};
  if (!r.zero_volatility) {
    ModelParams fitted = p;
    fitted.k_E = r.k_E;
    fitted.sigma_E = r.sigma_E;
    fitted.k_D = r.k_D;
    fitted.sigma_D = r.sigma_D;
    const double mean = std::accumulate(series.begin(), series.end(), 0.0) / series.size();
    Csv csv(inv.out_dir / "acf.csv", {"lag_seconds", "empirical", "model"});
    for (double lag : opt.lags_seconds) {
      const auto k = static_cast<std::size_t>(std::llround(lag * kSecond / spacing));
      if (k >= series.size()) continue;
      double model = std::numeric_limits<double>::quiet_NaN();
      try {
        model = stationary_autocovariance(static_cast<double>(k) * spacing, fitted);
      } catch (const ConfigError&) {
      }
      csv.row({lag, empirical_autocovariance(series, k, mean), model});
    }
    o.files.push_back("acf.csv");
  }
  o.summary = result;
  return o;
}

}  // namespace

// ---------------------------------------------------------------------------

ModelParams resolve_params(const json& config, const fs::path& base_dir) {
  if (!config.is_object()) throw ConfigError("config must be a JSON object");
  if (config.contains("params") && config.contains("params_file")) {
    throw ConfigError("give either params or params_file, not both");
  }
  json base;
  if (config.contains("params")) {
    base = config.at("params");
  } else if (config.contains("params_file")) {
    if (!config.at("params_file").is_string()) throw ConfigError("params_file must be a string");
    base = read_json(base_dir / config.at("params_file").get<std::string>());
  } else {
    base = gold_params();
  }
  if (!base.is_object()) throw ConfigError("params must be a JSON object");
  if (config.contains("overrides")) {
    const json& ov = config.at("overrides");
    if (!ov.is_object()) throw ConfigError("overrides must be a JSON object");
    for (const auto& [key, value] : ov.items()) {
      if (!base.contains(key)) throw ConfigError("unknown parameter in overrides: " + key);
      base[key] = value;
    }
  }
  return params_from_json(base);
}

std::vector<double> Grid::values() const {
  std::vector<double> out;
  const auto n = static_cast<std::size_t>(std::floor((max - min) / step + 1e-9));
  out.reserve(n + 1);
  for (std::size_t i = 0; i <= n; ++i) out.push_back(min + static_cast<double>(i) * step);
  return out;
}

RelaxSummary summarize_relaxation(const EnsembleSeries& s) {
  RelaxSummary r;
  r.half_life = std::numeric_limits<double>::quiet_NaN();
  if (s.t.empty()) return r;
  const double half = 0.5 * s.mean_net.front();
  for (std::size_t j = 1; j < s.t.size(); ++j) {
    if ((half >= 0.0 && s.mean_net[j] <= half) || (half < 0.0 && s.mean_net[j] >= half)) {
      const double a = s.mean_net[j - 1], b = s.mean_net[j];
      const double w = b != a ? (half - a) / (b - a) : 1.0;
      r.half_life = s.t[j - 1] + w * (s.t[j] - s.t[j - 1]);
      break;
    }
  }
  std::size_t arg = 0;
  for (std::size_t j = 1; j < s.t.size(); ++j) {
    if (s.mean_q_F[j] < s.mean_q_F[arg]) arg = j;
  }
  r.min_q_F = s.mean_q_F[arg];
  r.t_min_q_F = s.t[arg];
  r.final_q_F = s.mean_q_F.back();

  // Rise above the running minimum, measured against 3 combined standard errors.
  std::size_t m = 0;
  for (std::size_t j = 1; j < s.t.size(); ++j) {
    const double rise = s.mean_net[j] - s.mean_net[m];
    const double tol = 3.0 * std::hypot(s.se_net[j], s.se_net[m]);
    if (rise > 0.0) {
      r.worst_rise = std::max(r.worst_rise, tol > 0.0 ? rise / tol : std::numeric_limits<double>::infinity());
    }
    if (s.mean_net[j] < s.mean_net[m]) m = j;
  }
  r.net_monotone = r.worst_rise <= 1.0;
  return r;
}

bool ZonePair::crossed(double eps) const {
  if (spot.unbounded || futures.unbounded) return false;
  return futures.upper(eps) < spot.lower(eps) || futures.lower(eps) > spot.upper(eps);
}

ZonePair zone_pair(const Strategy& strategy, double q_F, double t) {
  const ModelParams& p = strategy.params();
  ZoneSlice slice;
  slice.base = Vec4(0.0, q_F, 0.0, p.D_bar);
  slice.solved = Axis::q_S;
  slice.free = Axis::E;
  slice.free_scale = p.sigma_E;
  return {no_execution_zone(strategy.value(), t, Instrument::Spot, slice, p),
          no_execution_zone(strategy.value(), t, Instrument::Futures, slice, p)};
}

EfpResponse efp_response(const Strategy& strategy, double eps, double z) {
  const ModelParams& p = strategy.params();
  const Mat4 A = strategy.value().A(0.0);
  const Vec4 B = strategy.value().B(0.0);
  EfpResponse r;
  r.skew = skew(strategy.value(), 0.0, Vec4(0.0, 0.0, p.D_bar + eps * p.sigma_E, p.D_bar), z, p);

  // Spot marginal value along E = D_bar + w sigma_E is a + b w.
  const double a = marginal_value(A, B, Vec4(0.0, 0.0, p.D_bar, p.D_bar), Instrument::Spot);
  const double b = -2.0 * A(0, 2) * p.sigma_E;
  r.onset_eps = std::numeric_limits<double>::infinity();
  if (b != 0.0) {
    for (double target : {p.psi_S, -p.psi_S}) {
      const double w = (target - a) / b;
      if (w > 0.0) r.onset_eps = std::min(r.onset_eps, w);
    }
  }
  return r;
}

std::vector<SweepPoint> nested_sweep(const ModelParams& base, const std::vector<double>& ratios,
                                     double eps) {
  std::vector<SweepPoint> out;
  for (double ratio : ratios) {
    if (!(ratio >= 0.0)) throw ConfigError("sigma_D / sigma_E ratios must be non-negative");
    ModelParams p = base;
    p.sigma_D = ratio * p.sigma_E;
    const Strategy s(p);
    const auto r = efp_response(s, eps, p.ladder.front());
    out.push_back({ratio, r.skew, r.onset_eps});
  }
  return out;
}

std::vector<SpreadRow> spread_comparison(const Strategy& with_futures, const Strategy& spot_only,
                                         const std::vector<double>& q_S) {
  const ModelParams& p = with_futures.params();
  std::vector<SpreadRow> rows;
  for (double q : q_S) {
    const Vec4 x(q, 0.0, p.D_bar, p.D_bar);
    const auto a = decide(with_futures.value(), 0.0, x, p);
    const auto b = decide(spot_only.value(), 0.0, x, spot_only.params());
    for (std::size_t i = 0; i < p.ladder.size(); ++i) {
      rows.push_back({p.ladder[i], q, a.bid[i] + a.ask[i], b.bid[i] + b.ask[i]});
    }
  }
  return rows;
}

std::vector<double> simulate_efp(const ModelParams& params, double spacing, std::size_t n,
                                 std::uint64_t seed) {
  const PriceDynamics dyn(params, spacing, PriceScheme::Exact);
  Rng rng = path_rng(seed, 0);
  MarketState st{0.0, 0.0, params.D_bar, params.D_bar};
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    out.push_back(st.E);
    dyn.advance(st, rng);
  }
  return out;
}

MarketTape synthetic_tape(const ModelParams& params, double days, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(std::llround(days * kSecondsPerDay));
  const PriceDynamics dyn(params, kSecond, PriceScheme::Exact);
  Rng rng = path_rng(seed, 1);
  MarketState st{0.0, 0.0, params.D_bar, params.D_bar};
  MarketTape tape;
  tape.t.reserve(n + 1);
  tape.S.reserve(n + 1);
  tape.E.reserve(n + 1);
  for (std::size_t k = 0; k <= n; ++k) {
    tape.t.push_back(static_cast<double>(k) * kSecond);
    tape.S.push_back(st.S);
    tape.E.push_back(st.E);
    dyn.advance(st, rng);
  }
  return tape;
}

double efp_opposition_share(const PathRecord& record) {
  double against = 0.0, counted = 0.0;
  for (const auto& s : record.samples) {
    const double dev = s.state.E - s.D_hat;
    const double pos = s.inventory.q_F;
    if (dev == 0.0 || std::abs(pos) < 1e-9) continue;
    counted += 1.0;
    if (dev * pos < 0.0) against += 1.0;
  }
  return counted > 0.0 ? against / counted : 0.0;
}

const std::map<std::string, Command>& commands() {
  static const std::map<std::string, Command> table = {
      {"solve", cmd_solve},
      {"ladder", cmd_ladder},
      {"relax", cmd_relax},
      {"zones", cmd_zones},
      {"skewmap", cmd_skewmap},
      {"nested-sweep", cmd_nested_sweep},
      {"frontier", cmd_frontier},
      {"stationary", cmd_stationary},
      {"spread-compare", cmd_spread_compare},
      {"backtest", cmd_backtest},
      {"filter-demo", cmd_filter_demo},
      {"calibrate", cmd_calibrate},
  };
  return table;
}

json run(const std::string& name, const json& config, const fs::path& base_dir,
         const fs::path& out_dir, std::optional<std::uint64_t> seed) {
  const auto& table = commands();
  const auto it = table.find(name);
  if (it == table.end()) throw ConfigError("unknown command '" + name + "'");

  Invocation inv;
  inv.config = config;
  inv.base_dir = base_dir;
  inv.out_dir = out_dir;
  inv.seed = seed ? *seed : knob<std::uint64_t>(config, "seed", 1);
  const ModelParams params = resolve_params(config, base_dir);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  const auto t0 = std::chrono::steady_clock::now();
  const Outcome outcome = it->second(inv, params);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json manifest = {{"command", name},
                   {"version", version()},
                   {"seed", inv.seed},
                   {"params", params},
                   {"config", config},
                   {"outputs", outcome.files},
                   {"summary", outcome.summary},
                   {"wall_time_seconds", wall},
                   {"threads", resolve_threads()},
                   {"versions",
                    {{"efpmm", version()},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                   std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"compiler", __VERSION__}}}};
  std::ofstream out(out_dir / "manifest.json");
  if (!out) throw ConfigError("cannot write manifest.json");
  out << manifest.dump(2) << '\n';
  return manifest;
}

}  // namespace efpmm::experiments
