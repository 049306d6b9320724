#pragma once

// Quadratic value-function approximation
//
//   theta(t, x) = -x' A(t) x - x' B(t) - C(t),   x = (q_S, q_F, E, D),
//
// with A, B solving, backward from A(T) = diag(K_S, K_F, 0, 0), B(T) = 0,
//
//   A' = A M A + A U + U' A + R,
//   B' = A M B + A V + U' B.
//
// C(t) does not affect the controls and is not computed.

#include "efpmm/core.hpp"
#include "efpmm/flow.hpp"

#include <iosfwd>
#include <vector>

namespace efpmm {

struct RiccatiSystem {
  Mat4 M_A = Mat4::Zero();
  Mat4 U_A = Mat4::Zero();
  Mat4 R_A = Mat4::Zero();
  Vec4 V_B = Vec4::Zero();
  Mat4 terminal_A = Mat4::Zero();
  Vec4 terminal_B = Vec4::Zero();
  bool futures_enabled = true;

  Mat4 rhs_A(const Mat4& A) const { return A * M_A * A + A * U_A + U_A.transpose() * A + R_A; }
  Vec4 rhs_B(const Mat4& A, const Vec4& B) const {
    return A * M_A * B + A * V_B + U_A.transpose() * B;
  }
};

/// Assembles the system for a given (S, E, D) covariance. Passing the
/// filtered covariance gives the partial-information problem. With
/// futures_enabled = false the futures Hamiltonian term is removed (M_A(1,1) = 0).
RiccatiSystem build_system(const ModelParams& params, const QuadHamiltonian& quad,
                           const Mat3& covariance, bool futures_enabled = true);

/// Full-information system.
RiccatiSystem build_system(const ModelParams& params, const QuadHamiltonian& quad);

/// Time-indexed A(t), B(t) on a uniform grid over [0, T], linear interpolation between nodes.
class ValueApprox {
 public:
  ValueApprox() = default;
  ValueApprox(std::vector<double> grid, std::vector<Mat4> A, std::vector<Vec4> B,
              bool futures_enabled = true);

  Mat4 A(double t) const;
  Vec4 B(double t) const;

  const std::vector<double>& grid() const { return grid_; }
  const std::vector<Mat4>& A_nodes() const { return A_; }
  const std::vector<Vec4>& B_nodes() const { return B_; }
  double horizon() const { return grid_.back(); }
  bool futures_enabled() const { return futures_enabled_; }

  /// Largest |A - A'| seen on any integration step before re-symmetrization.
  double max_step_asymmetry() const { return max_step_asymmetry_; }
  void set_max_step_asymmetry(double v) { max_step_asymmetry_ = v; }

  /// CSV with header t,A11,A12,A13,A14,A22,A23,A24,A33,A34,A44,B1,B2,B3,B4.
  void write_csv(std::ostream& os) const;
  static ValueApprox read_csv(std::istream& is);

 private:
  std::size_t locate(double t, double& weight) const;

  std::vector<double> grid_;
  std::vector<Mat4> A_;
  std::vector<Vec4> B_;
  bool futures_enabled_ = true;
  double max_step_asymmetry_ = 0.0;
};

inline constexpr double kDefaultRiccatiStep = 1e-5;  // day

/// Classical RK4 backward from T at a fixed step <= dt_max, A re-symmetrized
/// after every step. Throws NumericalError on non-finite entries.
ValueApprox solve(const RiccatiSystem& system, double T, double dt_max = kDefaultRiccatiStep);

/// -x' A(t) x - x' B(t).
double theta_check(const ValueApprox& va, double t, const Vec4& x);

}  // namespace efpmm
