#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

#include "ccdf/integrals.hpp"
#include "ccdf/reference.hpp"
#include "ccdf/tensor.hpp"

namespace ccdf {

enum class OperatorSymmetry { None, Hermitian, AntiHermitian };

/// Index-range tag for one tensor slot of an operator block.
enum class SlotRange : std::int8_t { Full = 0, Occ = 1, Virt = 2 };

/// Support block of a coefficient tensor: the tensor is (known to be) zero
/// outside the union of its blocks. Slots of a rank-k tensor: k uppers then
/// k lowers. Operators default to a single all-Full block per rank.
struct SupportBlock {
    std::array<SlotRange, 6> slots{};
};

/// Particle-hole normal-ordered operator up to rank 3:
///   O = scalar + sum c1^p_q {p+ q} + (1/4) sum c2^{pq}_{rs} {p+ q+ s r}
///              + (1/36) sum c3^{pqr}_{stu} {p+ q+ r+ u t s}
/// with c2/c3 antisymmetric within upper and lower index groups.
struct NormalOrderedOperator {
    int m = 0;
    double scalar = 0.0;
    Tensor c1;  // (m, m)
    Tensor c2;  // (m, m, m, m)
    Tensor c3;  // (m, m, m, m, m, m), only when retained
    OperatorSymmetry sym = OperatorSymmetry::None;
    std::optional<int> order_grade;
    std::vector<SupportBlock> support1, support2, support3;  // empty = single Full block

    static NormalOrderedOperator zero(int m, int max_rank = 2);

    bool has_rank(int k) const {
        if (k == 0) return true;
        if (k == 1) return !c1.empty();
        if (k == 2) return !c2.empty();
        if (k == 3) return !c3.empty();
        return false;
    }
    const Tensor& rank_tensor(int k) const { return k == 1 ? c1 : (k == 2 ? c2 : c3); }
    Tensor& rank_tensor(int k) { return k == 1 ? c1 : (k == 2 ? c2 : c3); }
    int max_rank() const { return has_rank(3) ? 3 : (has_rank(2) ? 2 : (has_rank(1) ? 1 : 0)); }

    NormalOrderedOperator adjoint() const;

    /// max |cK - cK^adjoint| over retained ranks (0 for an exactly Hermitian op)
    double hermiticity_defect() const;
    double antihermiticity_defect() const;
};

struct WickContext {
    int m = 0;
    int no = 0;  // occupied spin orbitals are [0, no)
    int rank3_materialize_cap = 14;

    std::pair<int, int> range(SlotRange r) const {
        switch (r) {
            case SlotRange::Occ: return {0, no};
            case SlotRange::Virt: return {no, m};
            default: return {0, m};
        }
    }
};

/// H in particle-hole normal product form: scalar = <Phi|H|Phi>, c1 = fock,
/// c2 = v (Hermitian flag set).
NormalOrderedOperator normal_order(const SpinOrbitalHamiltonian& H, const ReferenceFrame& ref);

/// Connected-Wick commutator [A, B], keeping output ranks <= max_rank (1..3).
/// B must have rank <= 2. Rank-3 output requires m <= ctx.rank3_materialize_cap.
NormalOrderedOperator commutator(const NormalOrderedOperator& A, const NormalOrderedOperator& B,
                                 int max_rank, const WickContext& ctx);

/// Componentwise linear combination.
NormalOrderedOperator scale_add(
    const std::vector<std::pair<double, const NormalOrderedOperator*>>& terms);

struct PhysicalVacuumOperator {
    int m = 0;
    double scalar = 0.0;
    Tensor one_body;  // (m, m)
    Tensor two_body;  // (m, m, m, m) antisymmetrized
};

/// Re-expresses a rank<=2 particle-hole normal-ordered operator over the
/// physical vacuum. Throws UnsupportedError for rank-3 input.
PhysicalVacuumOperator ph_to_physical_vacuum(const NormalOrderedOperator& A,
                                             const ReferenceFrame& ref);

/// Accumulates coeff * [[A, B]_(rank 3), C]_(rank <= 2) into `out` without
/// materializing the rank-3 intermediate. A, B must be rank 2; C rank <= 2.
/// When `out_indices` is non-null, output tensors are compact over that index
/// list (out.c1 is |list|^2 etc.) and only those entries are produced.
void accumulate_rank3_channel(const NormalOrderedOperator& A, const NormalOrderedOperator& B,
                              const NormalOrderedOperator& C, double coeff,
                              NormalOrderedOperator& out, const WickContext& ctx,
                              const std::vector<int>* out_indices = nullptr);

/// commutator() with output restricted to an index list (compact tensors).
NormalOrderedOperator commutator_restricted(const NormalOrderedOperator& A,
                                            const NormalOrderedOperator& B, int max_rank,
                                            const WickContext& ctx,
                                            const std::vector<int>& out_indices);

/// One stream of a perturbatively graded operator sum.
struct GradedComponent {
    int grade = 0;
    NormalOrderedOperator op;
};
using GradedOperator = std::vector<GradedComponent>;

/// Commutator distributed over graded components; term grades add, and
/// combinations exceeding max_order are dropped during the expansion.
GradedOperator graded_commutator(const GradedOperator& A, const GradedOperator& B, int max_rank,
                                 int max_order, const WickContext& ctx);

/// Drops components with grade > max_order. Throws DomainError on ungraded
/// components (grade tag absent on op.order_grade mirror).
GradedOperator perturbative_filter(const GradedOperator& stream, int max_order);

NormalOrderedOperator graded_sum(const GradedOperator& g);

/// Debug dump: one line per stored coefficient, "rank indices... value".
void dump_operator(const NormalOrderedOperator& op, std::ostream& os, double tol = 1e-14);

}  // namespace ccdf
