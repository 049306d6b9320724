#include "efpmm/riccati.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace efpmm {

RiccatiSystem build_system(const ModelParams& params, const QuadHamiltonian& quad,
                           const Mat3& cov, bool futures_enabled) {
  const double g = params.gamma;
  const double s11 = cov(0, 0), s12 = cov(0, 1), s13 = cov(0, 2);
  const double s22 = cov(1, 1), s23 = cov(1, 2), s33 = cov(2, 2);

  RiccatiSystem sys;
  sys.futures_enabled = futures_enabled;

  // Hamiltonian curvature of the quotes and both hedging channels.
  sys.M_A(0, 0) = 4.0 * quad.a2 * ladder_flow(params) + 1.0 / params.eta_S;
  sys.M_A(1, 1) = futures_enabled ? 1.0 / params.eta_F : 0.0;
  sys.M_A(2, 2) = -2.0 * g * s22;
  sys.M_A(2, 3) = sys.M_A(3, 2) = -2.0 * g * s23;
  sys.M_A(3, 3) = -2.0 * g * s33;

  // gamma * Sigma[(E,D), :] * [[1,1],[0,1],[0,0]] in the lower-left block,
  // mean-reversion drift in the lower-right block.
  sys.U_A(2, 0) = g * s12;
  sys.U_A(2, 1) = g * (s12 + s22);
  sys.U_A(3, 0) = g * s13;
  sys.U_A(3, 1) = g * (s13 + s23);
  sys.U_A(2, 2) = params.k_E;
  sys.U_A(2, 3) = -params.k_E;
  sys.U_A(3, 3) = params.k_D;

  // Variance of the mark-to-market exposure (q_S + q_F, q_F) plus the EFP carry q_F * (E - D).
  sys.R_A(0, 0) = -0.5 * g * s11;
  sys.R_A(0, 1) = sys.R_A(1, 0) = -0.5 * g * (s11 + s12);
  sys.R_A(1, 1) = -0.5 * g * (s11 + 2.0 * s12 + s22);
  sys.R_A(1, 2) = sys.R_A(2, 1) = -0.5 * params.k_E;
  sys.R_A(1, 3) = sys.R_A(3, 1) = 0.5 * params.k_E;

  sys.V_B(3) = -2.0 * params.k_D * params.D_bar;

  // theta(T) = -K_S q_S^2 - K_F q_F^2 under theta = -x'Ax.
  sys.terminal_A(0, 0) = params.K_S;
  sys.terminal_A(1, 1) = params.K_F;
  return sys;
}

RiccatiSystem build_system(const ModelParams& params, const QuadHamiltonian& quad) {
  return build_system(params, quad, covariance_matrix(params));
}

ValueApprox::ValueApprox(std::vector<double> grid, std::vector<Mat4> A, std::vector<Vec4> B,
                         bool futures_enabled)
    : grid_(std::move(grid)), A_(std::move(A)), B_(std::move(B)), futures_enabled_(futures_enabled) {
  if (grid_.size() < 2 || grid_.size() != A_.size() || grid_.size() != B_.size()) {
    throw ConfigError("value approximation needs matching grid, A and B with at least two nodes");
  }
  for (std::size_t i = 1; i < grid_.size(); ++i) {
    if (!(grid_[i] > grid_[i - 1])) throw ConfigError("value approximation grid must increase");
  }
}

std::size_t ValueApprox::locate(double t, double& weight) const {
  if (t <= grid_.front()) {
    weight = 0.0;
    return 0;
  }
  if (t >= grid_.back()) {
    weight = 1.0;
    return grid_.size() - 2;
  }
  const auto it = std::upper_bound(grid_.begin(), grid_.end(), t);
  const auto i = static_cast<std::size_t>(it - grid_.begin()) - 1;
  weight = (t - grid_[i]) / (grid_[i + 1] - grid_[i]);
  return i;
}

Mat4 ValueApprox::A(double t) const {
  double w = 0.0;
  const auto i = locate(t, w);
  if (w == 0.0) return A_[i];
  if (w == 1.0) return A_[i + 1];
  return (1.0 - w) * A_[i] + w * A_[i + 1];
}

Vec4 ValueApprox::B(double t) const {
  double w = 0.0;
  const auto i = locate(t, w);
  if (w == 0.0) return B_[i];
  if (w == 1.0) return B_[i + 1];
  return (1.0 - w) * B_[i] + w * B_[i + 1];
}

void ValueApprox::write_csv(std::ostream& os) const {
  os << "t,A11,A12,A13,A14,A22,A23,A24,A33,A34,A44,B1,B2,B3,B4\n";
  os << std::setprecision(17);
  for (std::size_t k = 0; k < grid_.size(); ++k) {
    os << grid_[k];
    for (int i = 0; i < 4; ++i) {
      for (int j = i; j < 4; ++j) os << ',' << A_[k](i, j);
    }
    for (int i = 0; i < 4; ++i) os << ',' << B_[k](i);
    os << '\n';
  }
}

ValueApprox ValueApprox::read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("t,A11", 0) != 0) {
    throw ConfigError("value approximation CSV: missing header");
  }
  std::vector<double> grid;
  std::vector<Mat4> As;
  std::vector<Vec4> Bs;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 15) throw ConfigError("value approximation CSV: expected 15 columns");
    Mat4 A;
    std::size_t c = 1;
    for (int i = 0; i < 4; ++i) {
      for (int j = i; j < 4; ++j) A(i, j) = A(j, i) = v[c++];
    }
    grid.push_back(v[0]);
    As.push_back(A);
    Bs.emplace_back(v[11], v[12], v[13], v[14]);
  }
  return ValueApprox(std::move(grid), std::move(As), std::move(Bs));
}

ValueApprox solve(const RiccatiSystem& system, double T, double dt_max) {
  if (!(dt_max > 0.0)) throw ConfigError("Riccati step must be positive");
  if (!(T > 0.0)) throw ConfigError("Riccati horizon must be positive");

  const auto n = static_cast<std::size_t>(std::ceil(T / dt_max - 1e-9));
  const double h = T / static_cast<double>(n);

  std::vector<double> grid(n + 1);
  std::vector<Mat4> As(n + 1);
  std::vector<Vec4> Bs(n + 1);
  for (std::size_t k = 0; k <= n; ++k) grid[k] = static_cast<double>(k) * h;
  grid[n] = T;

  Mat4 A = system.terminal_A;
  Vec4 B = system.terminal_B;
  As[n] = A;
  Bs[n] = B;

  // Backward in time: d/dtau Y = -F(Y) with tau = T - t.
  const auto fA = [&](const Mat4& a) -> Mat4 { return -system.rhs_A(a); };
  const auto fB = [&](const Mat4& a, const Vec4& b) -> Vec4 { return -system.rhs_B(a, b); };

  double max_asym = 0.0;
  for (std::size_t k = n; k > 0; --k) {
    const Mat4 kA1 = fA(A);
    const Vec4 kB1 = fB(A, B);
    const Mat4 A2 = A + 0.5 * h * kA1;
    const Vec4 B2 = B + 0.5 * h * kB1;
    const Mat4 kA2 = fA(A2);
    const Vec4 kB2 = fB(A2, B2);
    const Mat4 A3 = A + 0.5 * h * kA2;
    const Vec4 B3 = B + 0.5 * h * kB2;
    const Mat4 kA3 = fA(A3);
    const Vec4 kB3 = fB(A3, B3);
    const Mat4 A4 = A + h * kA3;
    const Vec4 B4 = B + h * kB3;
    const Mat4 kA4 = fA(A4);
    const Vec4 kB4 = fB(A4, B4);

    A += (h / 6.0) * (kA1 + 2.0 * kA2 + 2.0 * kA3 + kA4);
    B += (h / 6.0) * (kB1 + 2.0 * kB2 + 2.0 * kB3 + kB4);

    if (!A.allFinite() || !B.allFinite()) {
      std::ostringstream os;
      os << "Riccati integration blew up at t=" << grid[k - 1] << " day";
      throw NumericalError(os.str());
    }
    max_asym = std::max(max_asym, (A - A.transpose()).cwiseAbs().maxCoeff());
    A = 0.5 * (A + A.transpose()).eval();

    As[k - 1] = A;
    Bs[k - 1] = B;
  }

  ValueApprox va(std::move(grid), std::move(As), std::move(Bs), system.futures_enabled);
  va.set_max_step_asymmetry(max_asym);
  return va;
}

double theta_check(const ValueApprox& va, double t, const Vec4& x) {
  return -x.dot(va.A(t) * x) - x.dot(va.B(t));
}

}  // namespace efpmm
