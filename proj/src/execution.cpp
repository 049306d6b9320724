#include "efpmm/execution.hpp"

#include <algorithm>
#include <cmath>

namespace efpmm {

double cost(double v, const CostSpec& spec) { return spec.psi * std::abs(v) + spec.eta * v * v; }

double hamiltonian(double p, const CostSpec& spec) {
  const double excess = std::max(std::abs(p) - spec.psi, 0.0);
  return excess * excess / (4.0 * spec.eta);
}

double hamiltonian_prime(double p, const CostSpec& spec) {
  const double excess = std::max(std::abs(p) - spec.psi, 0.0);
  if (excess == 0.0) return 0.0;
  return std::copysign(excess / (2.0 * spec.eta), p);
}

double quad_hamiltonian(double p, const CostSpec& spec) { return p * p / (4.0 * spec.eta); }

double quad_prime(double p, const CostSpec& spec) { return p / (2.0 * spec.eta); }

}  // namespace efpmm
