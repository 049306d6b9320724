#pragma once

// External hedging costs L(v) = psi |v| + eta v^2 and their Legendre transforms.

#include "efpmm/core.hpp"

namespace efpmm {

struct CostSpec {
  double psi = 0.0;  // bp
  double eta = 0.0;  // bp * day / oz
};

inline CostSpec spot_cost(const ModelParams& p) { return {p.psi_S, p.eta_S}; }
inline CostSpec futures_cost(const ModelParams& p) { return {p.psi_F, p.eta_F}; }

/// L(v), bp * oz / day for v in oz / day.
double cost(double v, const CostSpec& spec);

/// sup_v (v p - L(v)) = max(|p| - psi, 0)^2 / (4 eta).
double hamiltonian(double p, const CostSpec& spec);

/// Optimal execution rate for marginal value p; zero on |p| <= psi.
double hamiltonian_prime(double p, const CostSpec& spec);

// Linear cost dropped. Only the Riccati system uses these.
double quad_hamiltonian(double p, const CostSpec& spec);
double quad_prime(double p, const CostSpec& spec);

}  // namespace efpmm
