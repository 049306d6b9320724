#pragma once

// Independent reference computations used only by tests. Nothing here calls
// the production root finders, integrators or closed forms it is compared to.

#include "efpmm/core.hpp"
#include "efpmm/flow.hpp"
#include "efpmm/riccati.hpp"

#include <cmath>
#include <vector>

namespace efpmm::oracle {

struct GridMax {
  double value = 0.0;
  double argmax = 0.0;
};

inline double quote_objective(double z, double p, double delta, const ModelParams& m) {
  const double gz = m.gamma * z;
  const double f = 1.0 / (1.0 + std::exp(m.alpha + m.beta * delta));
  return f * (1.0 - std::exp(-gz * (delta - p))) / gz;
}

/// Brute-force sup over delta in [lo, hi] at `step`, refined by a second grid
/// of step 1e-7 around the best coarse point.
inline GridMax quote_grid_max(double z, double p, const ModelParams& m, double lo = -10.0,
                              double hi = 40.0, double step = 1e-4) {
  GridMax best{-1e300, lo};
  const auto n = static_cast<long>(std::llround((hi - lo) / step));
  for (long i = 0; i <= n; ++i) {
    const double d = lo + static_cast<double>(i) * step;
    const double v = quote_objective(z, p, d, m);
    if (v > best.value) best = {v, d};
  }
  const double centre = best.argmax;
  const double fine = 1e-7;
  for (long i = -2000; i <= 2000; ++i) {
    const double d = centre + static_cast<double>(i) * fine;
    const double v = quote_objective(z, p, d, m);
    if (v > best.value) best = {v, d};
  }
  return best;
}

/// sup_v (v p - psi |v| - eta v^2) on a uniform grid.
inline double execution_grid_sup(double p, double psi, double eta, double v_max, long n) {
  double best = 0.0;
  for (long i = -n; i <= n; ++i) {
    const double v = v_max * static_cast<double>(i) / static_cast<double>(n);
    best = std::max(best, v * p - psi * std::abs(v) - eta * v * v);
  }
  return best;
}

/// Explicit Euler, backward from T, for the A/B system; returns A(0) and B(0).
inline std::pair<Mat4, Vec4> euler_A0(const RiccatiSystem& sys, double T, double dt) {
  const auto n = static_cast<long>(std::ceil(T / dt - 1e-9));
  const double h = T / static_cast<double>(n);
  Mat4 A = sys.terminal_A;
  Vec4 B = sys.terminal_B;
  for (long k = 0; k < n; ++k) {
    const Mat4 dA = A * sys.M_A * A + A * sys.U_A + sys.U_A.transpose() * A + sys.R_A;
    const Vec4 dB = A * sys.M_A * B + A * sys.V_B + sys.U_A.transpose() * B;
    A -= h * dA;
    B -= h * dB;
  }
  return {A, B};
}

/// Terms of the quadratic-Hamiltonian PDE for theta = -x'Ax - x'B evaluated at
/// x, with d theta / dt supplied by the caller. Every term is built from the
/// model parameters and direct evaluations of theta, not from the assembled
/// Riccati matrices. Returns the individual terms; their sum is the residual.
struct PdeTerms {
  std::vector<double> terms;
  double sum() const {
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
  }
  double scale() const {
    double s = 0.0;
    for (double t : terms) s = std::max(s, std::abs(t));
    return s;
  }
};

inline PdeTerms pde_terms(const ModelParams& m, const QuadHamiltonian& quad, const Mat3& sigma,
                          const Mat4& A, const Vec4& B, double dtheta_dt, const Vec4& x) {
  const auto theta = [&](const Vec4& y) { return -y.dot(A * y) - y.dot(B); };
  const Vec4 grad = -2.0 * A * x - B;
  const double qS = x(0), qF = x(1), E = x(2), D = x(3);

  PdeTerms out;
  out.terms.push_back(dtheta_dt);
  out.terms.push_back(-m.k_E * (E - D) * (qF + grad(2)));
  out.terms.push_back(-m.k_D * (D - m.D_bar) * grad(3));
  // 1/2 Tr(Sigma_ED Hess_ED theta); Hess = -2 A restricted to (E, D).
  const Mat2 hess = -2.0 * A.bottomRightCorner<2, 2>();
  out.terms.push_back(0.5 * (trailing_block(sigma) * hess).trace());
  const Eigen::Vector3d v(qS + qF, qF + grad(2), grad(3));
  out.terms.push_back(-0.5 * m.gamma * v.dot(sigma * v));
  double jumps = 0.0;
  for (std::size_t i = 0; i < m.ladder.size(); ++i) {
    const double z = m.ladder[i];
    Vec4 up = x, down = x;
    up(0) += z;
    down(0) -= z;
    const double j_plus = (theta(x) - theta(up)) / z;
    const double j_minus = (theta(x) - theta(down)) / z;
    jumps += z * m.lambda[i] * (quad(j_plus) + quad(j_minus));
  }
  out.terms.push_back(jumps);
  out.terms.push_back(grad(0) * grad(0) / (4.0 * m.eta_S));
  out.terms.push_back(grad(1) * grad(1) / (4.0 * m.eta_F));
  return out;
}

}  // namespace efpmm::oracle
