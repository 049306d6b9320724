#include "doctest.h"

#include "efpmm/policy.hpp"

#include <cmath>
#include <random>

using namespace efpmm;

namespace {

ModelParams with_gamma(double g) {
  ModelParams p = gold_params();
  p.gamma = g;
  return p;
}

// Spot inventory (q_F = E = D = 0) at which |marginal value| reaches psi.
double onset(const Strategy& s, Instrument inst) {
  const Mat4 A = s.value().A(0.0);
  const int i = static_cast<int>(inst);
  const double psi = inst == Instrument::Spot ? s.params().psi_S : s.params().psi_F;
  return psi / std::abs(2.0 * A(i, 0));
}

}  // namespace

TEST_CASE("symmetric state gives zero skew and no hedging") {
  ModelParams p = gold_params();
  p.K_S = 1e-3;
  p.K_F = 2e-3;
  p.k_D = 0.3;
  p.sigma_D = 1.0;
  const Strategy s(p);
  for (double t : {0.0, 0.02, p.T}) {
    CHECK(s.value().B(t).cwiseAbs().maxCoeff() == 0.0);
    const auto d = decide(s.value(), t, Vec4::Zero(), p);
    for (std::size_t i = 0; i < p.ladder.size(); ++i) CHECK(d.bid[i] == d.ask[i]);
    CHECK(d.v_S == 0.0);
    CHECK(d.v_F == 0.0);
    CHECK(skew(s.value(), t, Vec4::Zero(), 100.0, p) == 0.0);
  }
}

TEST_CASE("antisymmetry under x -> -x") {
  ModelParams p = gold_params();
  p.k_D = 0.2;
  p.sigma_D = 2.0;
  const Strategy s(p);
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    const Vec4 x(3000.0 * u(rng), 3000.0 * u(rng), 10.0 * u(rng), 3.0 * u(rng));
    const double t = 0.04 * std::abs(u(rng));
    const auto a = decide(s.value(), t, x, p);
    const auto b = decide(s.value(), t, -x, p);
    for (std::size_t i = 0; i < p.ladder.size(); ++i) {
      CHECK(a.bid[i] == b.ask[i]);
      CHECK(a.ask[i] == b.bid[i]);
    }
    CHECK(a.v_S == -b.v_S);
    CHECK(a.v_F == -b.v_F);
  }
}

TEST_CASE("quotes lean against inventory") {
  const ModelParams p = gold_params();
  const Strategy s(p);
  double prev_bid = -1e9, prev_ask = 1e9;
  for (double q = -5000.0; q <= 5000.0; q += 100.0) {
    const auto d = decide(s.value(), 0.0, Vec4(q, 0.0, 0.0, 0.0), p);
    CHECK(d.bid[0] >= prev_bid);
    CHECK(d.ask[0] <= prev_ask);
    prev_bid = d.bid[0];
    prev_ask = d.ask[0];
  }
}

TEST_CASE("internalization band exists for every tested risk aversion") {
  for (double g : {1e-4, 3e-4, 1e-3}) {
    const Strategy s(with_gamma(g));
    const double band = std::min(onset(s, Instrument::Spot), onset(s, Instrument::Futures));
    CHECK(band > 0.0);
    for (double q : {-0.99 * band, -0.5 * band, 0.0, 0.5 * band, 0.99 * band}) {
      const auto d = decide(s.value(), 0.0, Vec4(q, 0.0, 0.0, 0.0), s.params());
      CHECK(d.v_S == 0.0);
      CHECK(d.v_F == 0.0);
    }
    const auto out = decide(s.value(), 0.0, Vec4(1.01 * band, 0.0, 0.0, 0.0), s.params());
    CHECK((out.v_S != 0.0 || out.v_F != 0.0));
  }
}

TEST_CASE("futures hedging starts before spot hedging") {
  const Strategy s(gold_params());
  const double spot = onset(s, Instrument::Spot);
  const double fut = onset(s, Instrument::Futures);
  CHECK(fut < spot);
  const auto mid = decide(s.value(), 0.0, Vec4(0.5 * (spot + fut), 0.0, 0.0, 0.0), s.params());
  CHECK(mid.v_S == 0.0);
  CHECK(mid.v_F < 0.0);
}

TEST_CASE("futures inventory shifts the spot equilibrium") {
  const ModelParams p = gold_params();
  const Strategy s(p);
  ZoneSlice slice;
  slice.base = Vec4(0.0, 1000.0, 0.0, 0.0);
  slice.solved = Axis::q_S;
  slice.free = Axis::E;
  const auto zone = no_execution_zone(s.value(), 0.0, Instrument::Spot, slice, p);
  REQUIRE(!zone.unbounded);
  CHECK(zone.lower(0.0) <= -1000.0);
  CHECK(zone.upper(0.0) >= -1000.0);
  const auto d = decide(s.value(), 0.0, Vec4(-1000.0, 1000.0, 0.0, 0.0), p);
  CHECK(d.v_S == 0.0);
}

TEST_CASE("execution rates match an independent marginal value") {
  ModelParams p = gold_params();
  p.k_D = 0.2;
  p.sigma_D = 2.0;
  p.D_bar = 1.0;
  const Strategy s(p);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    const Vec4 x(4000.0 * u(rng), 4000.0 * u(rng), 10.0 * u(rng), 3.0 * u(rng));
    const Mat4 A = s.value().A(0.0);
    const Vec4 B = s.value().B(0.0);
    double mS = -B(0), mF = -B(1);
    for (int j = 0; j < 4; ++j) {
      mS -= 2.0 * A(0, j) * x(j);
      mF -= 2.0 * A(1, j) * x(j);
    }
    const auto d = decide(s.value(), 0.0, x, p);
    CHECK(d.v_S == doctest::Approx(hamiltonian_prime(mS, spot_cost(p))).epsilon(1e-12));
    CHECK(d.v_F == doctest::Approx(hamiltonian_prime(mF, futures_cost(p))).epsilon(1e-12));
  }
}

TEST_CASE("tabulated and exact decisions agree") {
  ModelParams p = gold_params();
  p.k_D = 0.2;
  p.sigma_D = 2.0;
  const Strategy s(p);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    const Vec4 x(8000.0 * u(rng), 8000.0 * u(rng), 15.0 * u(rng), 5.0 * u(rng));
    const double t = p.T * std::abs(u(rng));
    const auto fast = s.decide(t, x);
    const auto exact = decide(s.value(), t, x, p);
    for (std::size_t i = 0; i < p.ladder.size(); ++i) {
      CHECK(std::abs(fast.bid[i] - exact.bid[i]) <= 1e-9);
      CHECK(std::abs(fast.ask[i] - exact.ask[i]) <= 1e-9);
    }
    CHECK(fast.v_S == exact.v_S);
    CHECK(fast.v_F == exact.v_F);
  }
}

TEST_CASE("no-execution zone boundaries") {
  ModelParams p = gold_params();
  p.k_D = 0.2;
  p.sigma_D = 2.0;
  const Strategy s(p);
  ZoneSlice slice;
  slice.base = Vec4(0.0, 300.0, 0.0, 0.7);
  slice.solved = Axis::q_S;
  slice.free = Axis::E;
  slice.free_scale = p.sigma_E;
  const Mat4 A = s.value().A(0.0);
  const Vec4 B = s.value().B(0.0);

  for (Instrument inst : {Instrument::Spot, Instrument::Futures}) {
    const double psi = inst == Instrument::Spot ? p.psi_S : p.psi_F;
    const auto z = no_execution_zone(s.value(), 0.0, inst, slice, p);
    REQUIRE(!z.unbounded);
    CHECK(z.lower_intercept < z.upper_intercept);
    for (double w = -3.0; w <= 3.0; w += 0.5) {
      for (const double qs : {z.lower(w), z.upper(w)}) {
        Vec4 x = slice.base;
        x(0) = qs;
        x(2) = w * p.sigma_E;
        CHECK(std::abs(std::abs(marginal_value(A, B, x, inst)) - psi) <= 1e-10);
      }
      // Inside the slab nothing trades, just outside something does.
      Vec4 x = slice.base;
      x(2) = w * p.sigma_E;
      x(0) = 0.5 * (z.lower(w) + z.upper(w));
      const auto inside = decide(s.value(), 0.0, x, p);
      CHECK((inst == Instrument::Spot ? inside.v_S : inside.v_F) == 0.0);
      x(0) = z.lower(w) - 1.0;
      const auto below = decide(s.value(), 0.0, x, p);
      const double v = inst == Instrument::Spot ? below.v_S : below.v_F;
      CHECK((z.buy_below ? v > 0.0 : v < 0.0));
    }
    // Affine: three points on a line.
    const double l0 = z.lower(-2.0), l1 = z.lower(0.5), l2 = z.lower(3.0);
    CHECK((l1 - l0) / 2.5 == doctest::Approx((l2 - l1) / 2.5).epsilon(1e-12));
  }

  ModelParams no_cost = p;
  no_cost.psi_S = 0.0;
  const Strategy s0(no_cost);
  const auto collapsed = no_execution_zone(s0.value(), 0.0, Instrument::Spot, slice, no_cost);
  CHECK(collapsed.lower_intercept == collapsed.upper_intercept);

  // A marginal value that does not depend on the solved axis has no boundary.
  const ValueApprox flat({0.0, 1.0}, {Mat4::Zero(), Mat4::Zero()}, {Vec4::Zero(), Vec4::Zero()});
  CHECK(no_execution_zone(flat, 0.0, Instrument::Spot, slice, p).unbounded);

  StrategyOptions off;
  off.futures_enabled = false;
  const Strategy spot_only(gold_params(), off);
  CHECK(no_execution_zone(spot_only.value(), 0.0, Instrument::Futures, slice, gold_params()).unbounded);
}

TEST_CASE("skew along the EFP diagonal") {
  const ModelParams p = gold_params();
  const Strategy s(p);
  double prev = 1e9;
  for (double q = -3000.0; q <= 3000.0; q += 250.0) {
    const double k = skew(s.value(), 0.0, Vec4(q, -q, 0.0, 0.0), 100.0, p);
    CHECK(k <= prev);
    prev = k;
  }
  // Long spot: quotes shift down to attract client buying.
  CHECK(skew(s.value(), 0.0, Vec4(1000.0, 0.0, 0.0, 0.0), 100.0, p) < 0.0);
  // Rich futures (E > 0): the dealer wants spot and leans to buy.
  CHECK(skew(s.value(), 0.0, Vec4(0.0, 0.0, 5.0, 0.0), 100.0, p) > 0.0);
}

TEST_CASE("futures disabled") {
  StrategyOptions off;
  off.futures_enabled = false;
  const Strategy s(gold_params(), off);
  const auto d = s.decide(0.0, Vec4(5000.0, 0.0, 3.0, 0.0));
  CHECK(d.v_F == 0.0);
  CHECK(d.v_S < 0.0);
  CHECK(decide(s.value(), 0.0, Vec4(5000.0, 0.0, 3.0, 0.0), gold_params()).v_F == 0.0);
}
