#pragma once

#include <vector>

#include <Eigen/Dense>

#include "ccdf/integrals.hpp"
#include "ccdf/tensor.hpp"

namespace ccdf {

/// Reference determinant |Phi> and the normal-product partition
/// H = <Phi|H|Phi> + F_N + V_N. Occupied spin orbitals are the n_electrons
/// lowest-index ones under the current orbital ordering.
struct ReferenceFrame {
    int m = 0;
    std::vector<int> occupied;
    std::vector<int> virtuals;
    double e_ref = 0.0;
    Tensor fock;                  // (m, m)
    std::vector<double> epsilon;  // diagonal of fock

    int n_occ() const { return static_cast<int>(occupied.size()); }
    int n_virt() const { return static_cast<int>(virtuals.size()); }
    bool is_occupied(int p) const { return p < n_occ(); }
    double max_offdiagonal_fock() const;
};

struct Mbpt2Result {
    double e2 = 0.0;
    Tensor t2_first_order;  // (nv, nv, no, no)
    Eigen::MatrixXd density;  // spatial one-particle density
    std::vector<double> natural_occupations;         // descending
    Eigen::MatrixXd natural_orbital_coefficients;    // columns = natural orbitals
};

ReferenceFrame build_reference(const SpinOrbitalHamiltonian& H, int n_electrons);

/// Unrelaxed, singles-free MBPT(2): first-order doubles, correlation energy,
/// correlated one-particle density and its natural orbitals. Requires a
/// canonical reference (off-diagonal fock below 1e-8).
Mbpt2Result mbpt2(const SpinOrbitalHamiltonian& H, const ReferenceFrame& ref);

}  // namespace ccdf
