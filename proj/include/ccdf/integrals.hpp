#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ccdf/tensor.hpp"

namespace ccdf {

/// Spatial-orbital integrals as read from an FCIDUMP file. The two-electron
/// tensor is stored in chemist convention (pq|rs) with full 8-fold symmetry
/// expanded.
struct IntegralSet {
    int n_orbitals = 0;
    int n_electrons = 0;
    int ms2 = 0;
    double core_energy = 0.0;
    Tensor h_spatial;    // (n, n)
    Tensor eri_spatial;  // (n, n, n, n), chemist (pq|rs)
    std::vector<int> point_group_irreps;

    void check_invariants(double tol = 1e-12) const;
};

/// h^p_q and antisymmetrized v^{pq}_{rs} = <pq||rs> over spin orbitals.
/// Spin orbital s = 2p + sigma, alpha even / beta odd.
struct SpinOrbitalHamiltonian {
    int m = 0;
    double scalar = 0.0;
    Tensor h;  // (m, m)
    Tensor v;  // (m, m, m, m)

    void check_invariants(double tol = 1e-12) const;
};

IntegralSet parse_fcidump(const std::string& path);

/// Writes spatial tensors in FCIDUMP format. `permsym` is the permutational
/// symmetry of the two-electron tensor: 8 (standard), 4 or 1; files with
/// permsym < 8 carry a PERMSYM= header key so the parser expands them
/// correctly.
void write_fcidump(const std::string& path, const Tensor& h, const Tensor& eri,
                   double core_energy, int n_electrons, int ms2 = 0,
                   double drop_tol = 1e-14);

SpinOrbitalHamiltonian to_spin_orbitals(const IntegralSet& ints);

/// Transforms to a rotated spatial-orbital basis, h' = C^T h C and the
/// chemist-convention four-index transform (four successive one-index
/// contractions). C must be orthogonal within 1e-10.
SpinOrbitalHamiltonian rotate_basis(const SpinOrbitalHamiltonian& H,
                                    const Eigen::MatrixXd& C);

/// Extracts the spatial chemist-convention tensors from a spin-conserving
/// spin-orbital operator (inverse of to_spin_orbitals). Throws ExportError if
/// the alpha/beta blocks are inconsistent beyond `tol`.
void spin_trace(const SpinOrbitalHamiltonian& H, Tensor& h_out, Tensor& eri_out,
                double tol = 1e-10);

}  // namespace ccdf
