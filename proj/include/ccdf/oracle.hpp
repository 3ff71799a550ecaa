#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "ccdf/normal_ordered.hpp"

namespace ccdf::oracle {

/// Ordered determinant basis of a fixed-particle-number sector over at most
/// 12 spin orbitals (interleaved spin convention, alpha even / beta odd).
struct SectorBasis {
    int m = 0;
    std::vector<std::uint64_t> dets;
    std::unordered_map<std::uint64_t, int> index;

    int dim() const { return static_cast<int>(dets.size()); }
};

/// All determinants with n_alpha alpha and n_beta beta electrons.
SectorBasis make_sector(int m, int n_alpha, int n_beta);

/// All determinants with n electrons regardless of Sz.
SectorBasis make_sector_nelec(int m, int n);

struct DenseOperator {
    Eigen::MatrixXd matrix;
    SectorBasis basis;

    double hermiticity_defect() const {
        return (matrix - matrix.transpose()).cwiseAbs().maxCoeff();
    }
};

/// Exact matrix of a particle-hole normal-ordered operator via
/// second-quantized action on the basis states.
DenseOperator materialize(const NormalOrderedOperator& op, const ReferenceFrame& ref,
                          const SectorBasis& sector);

/// Exact matrix of a physical-vacuum operator (scalar + one- + two-body).
DenseOperator materialize(const PhysicalVacuumOperator& op, const SectorBasis& sector);

DenseOperator materialize(const SpinOrbitalHamiltonian& H, const SectorBasis& sector);

/// U^T M(H) U with U = exp(M(sigma)) computed by eigendecomposition of the
/// antisymmetric matrix of the anti-Hermitian operator sigma.
DenseOperator exact_transform(const SpinOrbitalHamiltonian& H, const NormalOrderedOperator& sigma,
                              const ReferenceFrame& ref, const SectorBasis& sector);

/// exp(S) for the dense antisymmetric matrix of an anti-Hermitian operator.
Eigen::MatrixXd matrix_exponential_antisymmetric(const Eigen::MatrixXd& S);

Eigen::MatrixXd matrix_commutator(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Matrix evaluation of the bracket/coefficient structure
///   H + [H_N,s] + (1/2)[[H_N,s],s] + (1/6)[[[F_N,s],s],s]
/// truncated at commutator depth 1..3 (matching prefactors 1, 1/2, 1/6).
/// All operators enter as dense matrices on the same sector.
Eigen::MatrixXd commutator_series(const Eigen::MatrixXd& H, const Eigen::MatrixXd& HN,
                                  const Eigen::MatrixXd& FN, const Eigen::MatrixXd& S, int depth);

/// Lowest eigenvalue of the block of M over determinants contained in the
/// active spin-orbital set (the (P+Q_int) projection).
double lowest_eigenvalue_in_active_block(const DenseOperator& M,
                                         const std::vector<int>& active_spin);

double lowest_eigenvalue(const Eigen::MatrixXd& M);

}  // namespace ccdf::oracle
