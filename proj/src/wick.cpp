#include "ccdf/normal_ordered.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstdint>
#include <numeric>

#include "ccdf/errors.hpp"

namespace ccdf {

namespace {

// ---------------------------------------------------------------------------
// Collapsed Wick contraction patterns for a product of two particle-hole
// normal-ordered antisymmetrized tensors L (rank kL) and R (rank kR), with
// h hole contractions (L upper <-> R lower, summed over occupied) and
// p particle contractions (L lower <-> R upper, summed over virtuals).
//
// Canonical slot choice: hole t pairs L upper slot (kL-h+t) with R lower
// slot t; particle t pairs L lower slot (kL-p+t) with R upper slot t.
// The raw output tensor is laid out [L-up-free, R-up-free | L-lo-free,
// R-lo-free] and antisymmetrized by signed shuffles of the two subgroups.
//
// Signs and multiplicities below are validated wholesale against dense
// Fock-space matrices by the oracle equivalence tests.
// ---------------------------------------------------------------------------
struct Pattern {
    int kL, kR, h, p, sign, mult;
};

constexpr Pattern kPatterns[] = {
    {1, 1, 0, 1, +1, 1},  {1, 1, 1, 0, -1, 1},  {1, 1, 1, 1, +1, 1},
    {1, 2, 0, 1, +1, 2},  {1, 2, 1, 0, -1, 2},  {1, 2, 1, 1, +1, 4},
    {1, 3, 0, 1, +1, 3},  {1, 3, 1, 0, -1, 3},  {1, 3, 1, 1, +1, 9},
    {2, 1, 0, 1, +1, 2},  {2, 1, 1, 0, -1, 2},  {2, 1, 1, 1, +1, 4},
    {2, 2, 0, 1, +1, 4},  {2, 2, 0, 2, +1, 2},  {2, 2, 1, 0, -1, 4},
    {2, 2, 1, 1, +1, 16}, {2, 2, 1, 2, -1, 8},  {2, 2, 2, 0, +1, 2},
    {2, 2, 2, 1, +1, 8},  {2, 2, 2, 2, +1, 4},
    {2, 3, 0, 2, +1, 6},  {2, 3, 1, 1, +1, 36}, {2, 3, 1, 2, -1, 36},
    {2, 3, 2, 0, +1, 6},  {2, 3, 2, 1, +1, 36}, {2, 3, 2, 2, +1, 36},
    {3, 1, 0, 1, +1, 3},  {3, 1, 1, 0, -1, 3},  {3, 1, 1, 1, +1, 9},
    {3, 2, 0, 2, +1, 6},  {3, 2, 1, 1, +1, 36}, {3, 2, 1, 2, -1, 36},
    {3, 2, 2, 0, +1, 6},  {3, 2, 2, 1, +1, 36}, {3, 2, 2, 2, +1, 36},
};

int factorial(int n) {
    int r = 1;
    for (int i = 2; i <= n; ++i) r *= i;
    return r;
}

double pattern_prefactor(const Pattern& pat) {
    const int ua = pat.kL - pat.h, ub = pat.kR - pat.p;
    const int la = pat.kL - pat.p, lb = pat.kR - pat.h;
    return static_cast<double>(pat.sign * pat.mult) * factorial(ua) * factorial(ub) *
           factorial(la) * factorial(lb) /
           (static_cast<double>(factorial(pat.kL)) * factorial(pat.kL) * factorial(pat.kR) *
            factorial(pat.kR));
}

struct Shuffle {
    std::array<int, 3> raw_at_pos{};  // output position -> raw subgroup slot
    int sign = 1;
};

std::vector<Shuffle> make_shuffles(int n1, int n2) {
    const int n = n1 + n2;
    std::vector<Shuffle> out;
    std::vector<int> mask(n, 0);
    std::fill(mask.begin(), mask.begin() + n1, 1);
    std::sort(mask.begin(), mask.end());
    // enumerate all position subsets for subgroup 1
    std::vector<int> pos(n1);
    std::iota(pos.begin(), pos.end(), 0);
    std::vector<bool> sel(n, false);
    std::function<void(int, int)> rec = [&](int start, int chosen) {
        if (chosen == n1) {
            Shuffle s;
            int i1 = 0, i2 = n1;
            std::array<int, 3> perm{};
            for (int q = 0; q < n; ++q) perm[q] = sel[q] ? i1++ : i2++;
            int inv = 0;
            for (int a = 0; a < n; ++a)
                for (int b = a + 1; b < n; ++b)
                    if (perm[a] > perm[b]) ++inv;
            s.raw_at_pos = perm;
            s.sign = (inv % 2 == 0) ? 1 : -1;
            out.push_back(s);
            return;
        }
        for (int q = start; q < n; ++q) {
            sel[q] = true;
            rec(q + 1, chosen + 1);
            sel[q] = false;
        }
    };
    if (n == 0) {
        out.push_back(Shuffle{});
        return out;
    }
    rec(0, 0);
    return out;
}

std::pair<int, int> intersect(std::pair<int, int> a, std::pair<int, int> b) {
    return {std::max(a.first, b.first), std::min(a.second, b.second)};
}

const std::vector<SupportBlock>& blocks_of(const NormalOrderedOperator& op, int rank,
                                           std::vector<SupportBlock>& scratch) {
    const std::vector<SupportBlock>* s = nullptr;
    if (rank == 1) s = &op.support1;
    else if (rank == 2) s = &op.support2;
    else s = &op.support3;
    if (!s->empty()) return *s;
    scratch.assign(1, SupportBlock{});  // single all-Full block
    return scratch;
}

// Contracted-dimension descriptor: strides into L and R plus a global range.
struct ConDim {
    std::size_t sL = 0, sR = 0;
    int b = 0, e = 0;
};

double inner_contract(const double* Lbase, const double* Rbase, const ConDim* cd, int nc) {
    switch (nc) {
        case 0:
            return Lbase[0] * Rbase[0];
        case 1: {
            double acc = 0.0;
            const auto& d = cd[0];
            const double* lp = Lbase + static_cast<std::size_t>(d.b) * d.sL;
            const double* rp = Rbase + static_cast<std::size_t>(d.b) * d.sR;
            for (int i = d.b; i < d.e; ++i, lp += d.sL, rp += d.sR) acc += (*lp) * (*rp);
            return acc;
        }
        case 2: {
            double acc = 0.0;
            for (int i = cd[0].b; i < cd[0].e; ++i) {
                const double* l0 = Lbase + static_cast<std::size_t>(i) * cd[0].sL;
                const double* r0 = Rbase + static_cast<std::size_t>(i) * cd[0].sR;
                const auto& d = cd[1];
                const double* lp = l0 + static_cast<std::size_t>(d.b) * d.sL;
                const double* rp = r0 + static_cast<std::size_t>(d.b) * d.sR;
                for (int j = d.b; j < d.e; ++j, lp += d.sL, rp += d.sR) acc += (*lp) * (*rp);
            }
            return acc;
        }
        case 3: {
            double acc = 0.0;
            for (int i = cd[0].b; i < cd[0].e; ++i)
                for (int j = cd[1].b; j < cd[1].e; ++j) {
                    const double* l0 = Lbase + static_cast<std::size_t>(i) * cd[0].sL +
                                       static_cast<std::size_t>(j) * cd[1].sL;
                    const double* r0 = Rbase + static_cast<std::size_t>(i) * cd[0].sR +
                                       static_cast<std::size_t>(j) * cd[1].sR;
                    const auto& d = cd[2];
                    const double* lp = l0 + static_cast<std::size_t>(d.b) * d.sL;
                    const double* rp = r0 + static_cast<std::size_t>(d.b) * d.sR;
                    for (int k = d.b; k < d.e; ++k, lp += d.sL, rp += d.sR) acc += (*lp) * (*rp);
                }
            return acc;
        }
        default: {
            double acc = 0.0;
            for (int i = cd[0].b; i < cd[0].e; ++i)
                for (int j = cd[1].b; j < cd[1].e; ++j)
                    for (int k = cd[2].b; k < cd[2].e; ++k) {
                        const double* l0 = Lbase + static_cast<std::size_t>(i) * cd[0].sL +
                                           static_cast<std::size_t>(j) * cd[1].sL +
                                           static_cast<std::size_t>(k) * cd[2].sL;
                        const double* r0 = Rbase + static_cast<std::size_t>(i) * cd[0].sR +
                                           static_cast<std::size_t>(j) * cd[1].sR +
                                           static_cast<std::size_t>(k) * cd[2].sR;
                        const auto& d = cd[3];
                        const double* lp = l0 + static_cast<std::size_t>(d.b) * d.sL;
                        const double* rp = r0 + static_cast<std::size_t>(d.b) * d.sR;
                        for (int l = d.b; l < d.e; ++l, lp += d.sL, rp += d.sR)
                            acc += (*lp) * (*rp);
                    }
            return acc;
        }
    }
}

/// Evaluates one pattern of L x R (one product direction) and accumulates
/// coeff * pattern into `out` (compact over out_list).
void eval_pattern(const Tensor& L, const Tensor& R, const Pattern& pat, double coeff,
                  const WickContext& ctx, const std::vector<SupportBlock>& Lblocks,
                  const std::vector<SupportBlock>& Rblocks, Tensor& out,
                  const std::vector<int>& out_list) {
    const int kL = pat.kL, kR = pat.kR, h = pat.h, p = pat.p;
    const int ua = kL - h, ub = kR - p, la = kL - p, lb = kR - h;
    const int k = ua + ub;
    const double pref = coeff * pattern_prefactor(pat);

    // raw slot -> tensor slot maps
    std::array<int, 3> upL{}, upR{}, loL{}, loR{};
    for (int s = 0; s < ua; ++s) upL[s] = s;
    for (int s = 0; s < ub; ++s) upR[s] = p + s;
    for (int s = 0; s < la; ++s) loL[s] = kL + s;
    for (int s = 0; s < lb; ++s) loR[s] = kR + h + s;

    const auto ushuf = make_shuffles(ua, ub);
    const auto lshuf = make_shuffles(la, lb);

    const int nlist = static_cast<int>(out_list.size());
    const std::size_t total = out.size();
    const double* Ld = L.data();
    const double* Rd = R.data();

    for (const auto& Lb : Lblocks) {
        for (const auto& Rb : Rblocks) {
            // contracted dims with ranges restricted by the contraction type
            // and both endpoint supports
            ConDim cds[4];
            int nc = 0;
            bool empty = false;
            for (int t = 0; t < h; ++t) {
                int ls = kL - h + t;          // L upper slot
                int rs = kR + t;              // R lower slot position
                auto r = intersect(ctx.range(SlotRange::Occ),
                                   intersect(ctx.range(Lb.slots[ls]), ctx.range(Rb.slots[rs])));
                if (r.first >= r.second) { empty = true; break; }
                cds[nc++] = ConDim{L.stride(ls), R.stride(rs), r.first, r.second};
            }
            if (!empty)
                for (int t = 0; t < p; ++t) {
                    int ls = kL + (kL - p + t);  // L lower slot position
                    int rs = t;                  // R upper slot
                    auto r = intersect(ctx.range(SlotRange::Virt),
                                       intersect(ctx.range(Lb.slots[ls]), ctx.range(Rb.slots[rs])));
                    if (r.first >= r.second) { empty = true; break; }
                    cds[nc++] = ConDim{L.stride(ls), R.stride(rs), r.first, r.second};
                }
            if (empty) continue;

            // allowed global ranges for the raw free slots
            std::array<std::pair<int, int>, 3> up_rng{}, lo_rng{};
            for (int s = 0; s < ua; ++s) up_rng[s] = ctx.range(Lb.slots[upL[s]]);
            for (int s = 0; s < ub; ++s) up_rng[ua + s] = ctx.range(Rb.slots[upR[s]]);
            for (int s = 0; s < la; ++s) lo_rng[s] = ctx.range(Lb.slots[loL[s]]);
            for (int s = 0; s < lb; ++s) lo_rng[la + s] = ctx.range(Rb.slots[loR[s]]);

            if (k == 0) {
                // scalar output
                double acc = inner_contract(Ld, Rd, cds, nc);
                out.data()[0] += pref * acc;
                continue;
            }

#pragma omp parallel for schedule(dynamic, 64)
            for (std::int64_t flat = 0; flat < static_cast<std::int64_t>(total); ++flat) {
                // decode output positions: upper k dims then lower k dims
                std::array<int, 6> pos{};
                std::size_t rem = static_cast<std::size_t>(flat);
                for (int d = 2 * k - 1; d >= 0; --d) {
                    pos[d] = static_cast<int>(rem % nlist);
                    rem /= nlist;
                }
                std::array<int, 3> gu{}, gl{};
                for (int d = 0; d < k; ++d) gu[d] = out_list[pos[d]];
                for (int d = 0; d < k; ++d) gl[d] = out_list[pos[k + d]];

                double acc = 0.0;
                for (const auto& su : ushuf) {
                    // raw upper slot s holds gu[pos_of_raw[s]]
                    std::array<int, 3> guraw{};
                    bool ok = true;
                    for (int q = 0; q < k && ok; ++q) {
                        int s = su.raw_at_pos[q];
                        guraw[s] = gu[q];
                        if (gu[q] < up_rng[s].first || gu[q] >= up_rng[s].second) ok = false;
                    }
                    if (!ok) continue;
                    for (const auto& sl : lshuf) {
                        std::array<int, 3> glraw{};
                        bool ok2 = true;
                        for (int q = 0; q < k && ok2; ++q) {
                            int s = sl.raw_at_pos[q];
                            glraw[s] = gl[q];
                            if (gl[q] < lo_rng[s].first || gl[q] >= lo_rng[s].second) ok2 = false;
                        }
                        if (!ok2) continue;
                        std::size_t offL = 0, offR = 0;
                        for (int s = 0; s < ua; ++s)
                            offL += static_cast<std::size_t>(guraw[s]) * L.stride(upL[s]);
                        for (int s = 0; s < la; ++s)
                            offL += static_cast<std::size_t>(glraw[s]) * L.stride(loL[s]);
                        for (int s = 0; s < ub; ++s)
                            offR += static_cast<std::size_t>(guraw[ua + s]) * R.stride(upR[s]);
                        for (int s = 0; s < lb; ++s)
                            offR += static_cast<std::size_t>(glraw[la + s]) * R.stride(loR[s]);
                        acc += su.sign * sl.sign * inner_contract(Ld + offL, Rd + offR, cds, nc);
                    }
                }
                out.data()[flat] += pref * acc;
            }
        }
    }
}

std::vector<int> identity_list(int m) {
    std::vector<int> v(m);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

OperatorSymmetry commutator_symmetry(OperatorSymmetry a, OperatorSymmetry b) {
    if (a == OperatorSymmetry::None || b == OperatorSymmetry::None)
        return OperatorSymmetry::None;
    // [H,H] -> A, [H,A] -> H, [A,A] -> A
    return (a == b) ? OperatorSymmetry::AntiHermitian
                    : OperatorSymmetry::Hermitian;
}

NormalOrderedOperator commutator_impl(const NormalOrderedOperator& A,
                                      const NormalOrderedOperator& B, int max_rank,
                                      const WickContext& ctx, const std::vector<int>& out_list) {
    if (max_rank > 3) throw UnsupportedError("commutator: max_rank > 3 not supported");
    if (max_rank < 0) throw DomainError("commutator: negative max_rank");
    if (A.m != B.m) throw DomainError("commutator: operand dimension mismatch");
    if (B.max_rank() > 2 && A.max_rank() > 2)
        throw UnsupportedError("commutator: one operand must have rank <= 2");

    bool want3 = false;
    for (const auto& pat : kPatterns) {
        int kout = pat.kL + pat.kR - pat.h - pat.p;
        if (kout == 3 && max_rank >= 3 && A.has_rank(pat.kL) && B.has_rank(pat.kR)) want3 = true;
        if (kout == 3 && max_rank >= 3 && B.has_rank(pat.kL) && A.has_rank(pat.kR)) want3 = true;
    }
    if (want3 && A.m > ctx.rank3_materialize_cap)
        throw UnsupportedError(
            "commutator: rank-3 output requested beyond the dense materialization cap");

    NormalOrderedOperator out;
    out.m = A.m;
    const auto n = out_list.size();
    out.c1.reshape({n, n});
    if (max_rank >= 2) out.c2.reshape({n, n, n, n});
    if (want3) out.c3.reshape({n, n, n, n, n, n});
    out.sym = commutator_symmetry(A.sym, B.sym);
    if (A.order_grade && B.order_grade) out.order_grade = *A.order_grade + *B.order_grade;

    Tensor scalar_t(std::vector<std::size_t>{});  // rank-0

    std::vector<SupportBlock> scratchL, scratchR;
    for (int dir = 0; dir < 2; ++dir) {
        const NormalOrderedOperator& L = dir == 0 ? A : B;
        const NormalOrderedOperator& R = dir == 0 ? B : A;
        const double s = dir == 0 ? 1.0 : -1.0;
        for (const auto& pat : kPatterns) {
            const int kout = pat.kL + pat.kR - pat.h - pat.p;
            if (kout > max_rank) continue;
            if (!L.has_rank(pat.kL) || !R.has_rank(pat.kR)) continue;
            const auto& Lb = blocks_of(L, pat.kL, scratchL);
            const auto& Rb = blocks_of(R, pat.kR, scratchR);
            Tensor& tgt = kout == 0 ? scalar_t : out.rank_tensor(kout);
            eval_pattern(L.rank_tensor(pat.kL), R.rank_tensor(pat.kR), pat, s, ctx, Lb, Rb, tgt,
                         out_list);
        }
    }
    out.scalar = scalar_t.data()[0];
    return out;
}

}  // namespace

NormalOrderedOperator NormalOrderedOperator::zero(int m, int max_rank) {
    NormalOrderedOperator op;
    op.m = m;
    auto n = static_cast<std::size_t>(m);
    if (max_rank >= 1) op.c1.reshape({n, n});
    if (max_rank >= 2) op.c2.reshape({n, n, n, n});
    return op;
}

NormalOrderedOperator normal_order(const SpinOrbitalHamiltonian& H, const ReferenceFrame& ref) {
    NormalOrderedOperator op;
    op.m = H.m;
    op.scalar = ref.e_ref;
    op.c1 = ref.fock;
    op.c2 = H.v;
    op.sym = OperatorSymmetry::Hermitian;
    return op;
}

NormalOrderedOperator commutator(const NormalOrderedOperator& A, const NormalOrderedOperator& B,
                                 int max_rank, const WickContext& ctx) {
    return commutator_impl(A, B, max_rank, ctx, identity_list(A.m));
}

NormalOrderedOperator commutator_restricted(const NormalOrderedOperator& A,
                                            const NormalOrderedOperator& B, int max_rank,
                                            const WickContext& ctx,
                                            const std::vector<int>& out_indices) {
    if (max_rank > 2)
        throw UnsupportedError("commutator_restricted: rank-3 restricted output not supported");
    return commutator_impl(A, B, max_rank, ctx, out_indices);
}

NormalOrderedOperator scale_add(
    const std::vector<std::pair<double, const NormalOrderedOperator*>>& terms) {
    if (terms.empty()) throw DomainError("scale_add: empty term list");
    const int m = terms[0].second->m;
    int max_rank = 1;
    for (auto& [c, op] : terms) {
        if (op->m != m) throw DomainError("scale_add: dimension mismatch");
        max_rank = std::max(max_rank, op->max_rank());
    }
    NormalOrderedOperator out = NormalOrderedOperator::zero(m, std::min(max_rank, 2));
    if (max_rank >= 3) {
        auto n = static_cast<std::size_t>(m);
        out.c3.reshape({n, n, n, n, n, n});
    }
    bool all_h = true, all_a = true;
    for (auto& [c, op] : terms) {
        out.scalar += c * op->scalar;
        for (int k = 1; k <= 3; ++k)
            if (op->has_rank(k)) {
                if (!out.has_rank(k)) out.rank_tensor(k).reshape(
                    std::vector<std::size_t>(2 * k, static_cast<std::size_t>(m)));
                if (op->rank_tensor(k).size() != out.rank_tensor(k).size())
                    throw DomainError("scale_add: tensor dimension mismatch");
                out.rank_tensor(k).axpy(c, op->rank_tensor(k));
            }
        all_h = all_h && op->sym == OperatorSymmetry::Hermitian;
        all_a = all_a && op->sym == OperatorSymmetry::AntiHermitian;
    }
    out.sym = all_h ? OperatorSymmetry::Hermitian
                    : (all_a ? OperatorSymmetry::AntiHermitian : OperatorSymmetry::None);
    return out;
}

NormalOrderedOperator NormalOrderedOperator::adjoint() const {
    NormalOrderedOperator out = *this;
    const int n = m;
    if (has_rank(1))
        for (int p = 0; p < n; ++p)
            for (int q = 0; q < n; ++q) out.c1(p, q) = c1(q, p);
    if (has_rank(2))
        for (int p = 0; p < n; ++p)
            for (int q = 0; q < n; ++q)
                for (int r = 0; r < n; ++r)
                    for (int s = 0; s < n; ++s) out.c2(p, q, r, s) = c2(r, s, p, q);
    if (has_rank(3)) {
        std::size_t idx[6];
        for (idx[0] = 0; idx[0] < static_cast<std::size_t>(n); ++idx[0])
            for (idx[1] = 0; idx[1] < static_cast<std::size_t>(n); ++idx[1])
                for (idx[2] = 0; idx[2] < static_cast<std::size_t>(n); ++idx[2])
                    for (idx[3] = 0; idx[3] < static_cast<std::size_t>(n); ++idx[3])
                        for (idx[4] = 0; idx[4] < static_cast<std::size_t>(n); ++idx[4])
                            for (idx[5] = 0; idx[5] < static_cast<std::size_t>(n); ++idx[5]) {
                                std::size_t t[6] = {idx[3], idx[4], idx[5],
                                                    idx[0], idx[1], idx[2]};
                                out.c3.at_index(idx) = c3.at_index(t);
                            }
    }
    // support blocks: swap upper/lower tags
    auto swap_support = [](std::vector<SupportBlock>& blocks, int k) {
        for (auto& b : blocks)
            for (int s = 0; s < k; ++s) std::swap(b.slots[s], b.slots[k + s]);
    };
    swap_support(out.support1, 1);
    swap_support(out.support2, 2);
    swap_support(out.support3, 3);
    return out;
}

double NormalOrderedOperator::hermiticity_defect() const {
    NormalOrderedOperator adj = *this;
    adj.sym = OperatorSymmetry::None;
    adj = adj.adjoint();
    double d = 0.0;
    for (int k = 1; k <= 3; ++k)
        if (has_rank(k)) {
            const Tensor& a = rank_tensor(k);
            const Tensor& b = adj.rank_tensor(k);
            for (std::size_t i = 0; i < a.size(); ++i)
                d = std::max(d, std::abs(a.data()[i] - b.data()[i]));
        }
    return d;
}

double NormalOrderedOperator::antihermiticity_defect() const {
    NormalOrderedOperator adj = *this;
    adj.sym = OperatorSymmetry::None;
    adj = adj.adjoint();
    double d = std::abs(2.0 * scalar);
    for (int k = 1; k <= 3; ++k)
        if (has_rank(k)) {
            const Tensor& a = rank_tensor(k);
            const Tensor& b = adj.rank_tensor(k);
            for (std::size_t i = 0; i < a.size(); ++i)
                d = std::max(d, std::abs(a.data()[i] + b.data()[i]));
        }
    return d;
}

PhysicalVacuumOperator ph_to_physical_vacuum(const NormalOrderedOperator& A,
                                             const ReferenceFrame& ref) {
    if (A.has_rank(3)) throw UnsupportedError("ph_to_physical_vacuum: rank-3 input unsupported");
    const int m = A.m;
    PhysicalVacuumOperator out;
    out.m = m;
    out.two_body = A.has_rank(2) ? A.c2 : Tensor({static_cast<std::size_t>(m),
                                                  static_cast<std::size_t>(m),
                                                  static_cast<std::size_t>(m),
                                                  static_cast<std::size_t>(m)});
    out.one_body.reshape({static_cast<std::size_t>(m), static_cast<std::size_t>(m)});
    for (int p = 0; p < m; ++p)
        for (int q = 0; q < m; ++q) {
            double x = A.has_rank(1) ? A.c1(p, q) : 0.0;
            if (A.has_rank(2))
                for (int i : ref.occupied) x -= A.c2(p, i, q, i);
            out.one_body(p, q) = x;
        }
    double s = A.scalar;
    if (A.has_rank(1))
        for (int i : ref.occupied) s -= A.c1(i, i);
    if (A.has_rank(2))
        for (int i : ref.occupied)
            for (int j : ref.occupied) s += 0.5 * A.c2(i, j, i, j);
    out.scalar = s;
    return out;
}

GradedOperator graded_commutator(const GradedOperator& A, const GradedOperator& B, int max_rank,
                                 int max_order, const WickContext& ctx) {
    GradedOperator out;
    for (const auto& a : A)
        for (const auto& b : B) {
            const int grade = a.grade + b.grade;
            if (grade > max_order) continue;
            GradedComponent c;
            c.grade = grade;
            c.op = commutator(a.op, b.op, max_rank, ctx);
            c.op.order_grade = grade;
            out.push_back(std::move(c));
        }
    return out;
}

GradedOperator perturbative_filter(const GradedOperator& stream, int max_order) {
    GradedOperator out;
    for (const auto& c : stream) {
        if (!c.op.order_grade) throw DomainError("perturbative_filter: ungraded component");
        if (c.grade <= max_order) out.push_back(c);
    }
    return out;
}

NormalOrderedOperator graded_sum(const GradedOperator& g) {
    if (g.empty()) throw DomainError("graded_sum: empty stream");
    std::vector<std::pair<double, const NormalOrderedOperator*>> terms;
    for (const auto& c : g) terms.emplace_back(1.0, &c.op);
    return scale_add(terms);
}

void dump_operator(const NormalOrderedOperator& op, std::ostream& os, double tol) {
    os << "scalar " << op.scalar << "\n";
    for (int k = 1; k <= 3; ++k) {
        if (!op.has_rank(k)) continue;
        const Tensor& t = op.rank_tensor(k);
        std::array<std::size_t, 6> idx{};
        const std::size_t n = t.dim(0);
        std::size_t total = t.size();
        for (std::size_t flat = 0; flat < total; ++flat) {
            std::size_t rem = flat;
            for (int d = 2 * k - 1; d >= 0; --d) {
                idx[d] = rem % n;
                rem /= n;
            }
            double v = t.data()[flat];
            if (std::abs(v) <= tol) continue;
            os << k;
            for (int d = 0; d < 2 * k; ++d) os << " " << idx[d];
            os << " " << v << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// Fused rank-3 channel: coeff * [[A,B]_3, C]_(<=2) without materializing the
// rank-3 intermediate. Each contribution composes one rank-3-producing
// pattern (P1, between A and B) with one rank-3-consuming pattern (P2,
// between the intermediate and C); the intermediate's subgroup shuffle
// antisymmetrization is expanded into the composition. Every composed term
// is a three-tensor contraction evaluated in two stages through a dense
// intermediate whose dimensions are chosen to stay small.
// ---------------------------------------------------------------------------
namespace {

struct SlotRef {
    int tensor;  // 0 = A, 1 = B, 2 = C
    int slot;
};

struct TernaryEdge {
    SlotRef x, y;
    SlotRange type;  // Occ for hole contractions, Virt for particle
};

struct TernaryTerm {
    double pref = 0.0;
    int kout = 0;
    int kC = 0;
    std::vector<TernaryEdge> edges;
    std::vector<SlotRef> out_slots;  // uppers then lowers
};

// One loop dimension of a composed term: an edge (summed) or an output slot.
struct TermDim {
    std::vector<int> globals;
    std::vector<int> positions;              // parallel to globals, free dims only
    bool free = false;
    int out_slot = -1;
    std::array<int, 3> slot_of{-1, -1, -1};  // tensor slot fed by this dim
};

std::vector<TernaryTerm> build_rank3_channel_terms(double coeff, bool c_has_rank1,
                                                   bool c_has_rank2) {
    std::vector<TernaryTerm> terms;
    std::vector<Pattern> p1s, p2L, p2R;
    for (const auto& pat : kPatterns) {
        if (pat.kL == 2 && pat.kR == 2 && pat.kL + pat.kR - pat.h - pat.p == 3)
            p1s.push_back(pat);
        if (pat.kL == 3 && pat.kL + pat.kR - pat.h - pat.p <= 2) p2L.push_back(pat);
        if (pat.kR == 3 && pat.kL + pat.kR - pat.h - pat.p <= 2) p2R.push_back(pat);
    }
    for (int dir1 = 0; dir1 < 2; ++dir1) {
        const int tL = dir1 == 0 ? 0 : 1;
        const int tR = 1 - tL;
        const double s1 = dir1 == 0 ? 1.0 : -1.0;
        for (const auto& P1 : p1s) {
            const int kL = 2, kR = 2, h1 = P1.h, q1 = P1.p;
            const int ua = kL - h1, ub = kR - q1, la = kL - q1, lb = kR - h1;
            const double pref1 = pattern_prefactor(P1);
            std::vector<SlotRef> up_origin, lo_origin;
            for (int s = 0; s < ua; ++s) up_origin.push_back({tL, s});
            for (int s = 0; s < ub; ++s) up_origin.push_back({tR, q1 + s});
            for (int s = 0; s < la; ++s) lo_origin.push_back({tL, kL + s});
            for (int s = 0; s < lb; ++s) lo_origin.push_back({tR, kR + h1 + s});
            const TernaryEdge p1_edge =
                (h1 == 1) ? TernaryEdge{{tL, kL - 1}, {tR, kR}, SlotRange::Occ}
                          : TernaryEdge{{tL, kL + (kL - 1)}, {tR, 0}, SlotRange::Virt};

            for (const auto& su : make_shuffles(ua, ub)) {
                for (const auto& sl : make_shuffles(la, lb)) {
                    std::array<SlotRef, 6> w_origin{};
                    for (int q = 0; q < 3; ++q) w_origin[q] = up_origin[su.raw_at_pos[q]];
                    for (int q = 0; q < 3; ++q) w_origin[3 + q] = lo_origin[sl.raw_at_pos[q]];
                    const double prefW = coeff * s1 * pref1 * su.sign * sl.sign;

                    for (int dir2 = 0; dir2 < 2; ++dir2) {
                        const double s2 = dir2 == 0 ? 1.0 : -1.0;
                        const auto& plist = dir2 == 0 ? p2L : p2R;
                        for (const auto& P2 : plist) {
                            const int kC = dir2 == 0 ? P2.kR : P2.kL;
                            if (kC == 1 && !c_has_rank1) continue;
                            if (kC == 2 && !c_has_rank2) continue;
                            const int h2 = P2.h, q2 = P2.p;
                            TernaryTerm term;
                            term.kC = kC;
                            term.pref = prefW * s2 * pattern_prefactor(P2);
                            term.edges.push_back(p1_edge);
                            if (dir2 == 0) {
                                for (int t = 0; t < h2; ++t)
                                    term.edges.push_back(
                                        {w_origin[3 - h2 + t], {2, kC + t}, SlotRange::Occ});
                                for (int t = 0; t < q2; ++t)
                                    term.edges.push_back(
                                        {w_origin[3 + (3 - q2 + t)], {2, t}, SlotRange::Virt});
                                for (int s = 0; s < 3 - h2; ++s)
                                    term.out_slots.push_back(w_origin[s]);
                                for (int s = q2; s < kC; ++s) term.out_slots.push_back({2, s});
                                for (int s = 0; s < 3 - q2; ++s)
                                    term.out_slots.push_back(w_origin[3 + s]);
                                for (int s = h2; s < kC; ++s)
                                    term.out_slots.push_back({2, kC + s});
                            } else {
                                for (int t = 0; t < h2; ++t)
                                    term.edges.push_back(
                                        {{2, kC - h2 + t}, w_origin[3 + t], SlotRange::Occ});
                                for (int t = 0; t < q2; ++t)
                                    term.edges.push_back(
                                        {{2, kC + (kC - q2 + t)}, w_origin[t], SlotRange::Virt});
                                for (int s = 0; s < kC - h2; ++s) term.out_slots.push_back({2, s});
                                for (int s = q2; s < 3; ++s) term.out_slots.push_back(w_origin[s]);
                                for (int s = 0; s < kC - q2; ++s)
                                    term.out_slots.push_back({2, kC + s});
                                for (int s = h2; s < 3; ++s)
                                    term.out_slots.push_back(w_origin[3 + s]);
                            }
                            term.kout = static_cast<int>(term.out_slots.size()) / 2;
                            terms.push_back(std::move(term));
                        }
                    }
                }
            }
        }
    }
    return terms;
}

void eval_ternary_term(const TernaryTerm& term, const Tensor* tens[3],
                       const SupportBlock* blocks[3], const WickContext& ctx,
                       const std::vector<int>& olist, NormalOrderedOperator& out) {
    // resolve dims
    std::vector<TermDim> dims;
    bool empty = false;
    for (const auto& e : term.edges) {
        auto r = intersect(ctx.range(e.type),
                           intersect(ctx.range(blocks[e.x.tensor]->slots[e.x.slot]),
                                     ctx.range(blocks[e.y.tensor]->slots[e.y.slot])));
        if (r.first >= r.second) return;
        TermDim d;
        for (int g = r.first; g < r.second; ++g) d.globals.push_back(g);
        d.slot_of[e.x.tensor] = e.x.slot;
        d.slot_of[e.y.tensor] = e.y.slot;
        dims.push_back(std::move(d));
    }
    for (std::size_t os = 0; os < term.out_slots.size(); ++os) {
        const auto& sr = term.out_slots[os];
        auto r = ctx.range(blocks[sr.tensor]->slots[sr.slot]);
        TermDim d;
        d.free = true;
        d.out_slot = static_cast<int>(os);
        for (std::size_t pos = 0; pos < olist.size(); ++pos) {
            const int g = olist[pos];
            if (g >= r.first && g < r.second) {
                d.globals.push_back(g);
                d.positions.push_back(static_cast<int>(pos));
            }
        }
        if (d.globals.empty()) empty = true;
        d.slot_of[sr.tensor] = sr.slot;
        dims.push_back(std::move(d));
    }
    if (empty) return;

    // choose the tensor pair whose intermediate is smallest
    auto touches = [&](const TermDim& d, int t) { return d.slot_of[t] >= 0; };
    auto inter_dims = [&](int a, int b) {
        std::vector<int> ids;
        for (std::size_t i = 0; i < dims.size(); ++i) {
            const bool ta = touches(dims[i], a), tb = touches(dims[i], b);
            if ((ta || tb) && !(ta && tb)) ids.push_back(static_cast<int>(i));
        }
        return ids;
    };
    int bestA = 0, bestB = 1;
    double best_size = 1e300;
    for (auto [a, b] : {std::pair{0, 1}, std::pair{0, 2}, std::pair{1, 2}}) {
        bool has_edge = false;
        for (const auto& d : dims)
            if (!d.free && touches(d, a) && touches(d, b)) has_edge = true;
        if (!has_edge) continue;  // avoid outer-product intermediates
        double sz = 1.0;
        for (int id : inter_dims(a, b)) sz *= static_cast<double>(dims[id].globals.size());
        if (sz < best_size) {
            best_size = sz;
            bestA = a;
            bestB = b;
        }
    }
    const int tc = 3 - bestA - bestB;

    std::vector<int> xdims = inter_dims(bestA, bestB);  // dims of the intermediate
    std::vector<int> sumdims;                           // contracted now
    for (std::size_t i = 0; i < dims.size(); ++i)
        if (touches(dims[i], bestA) && touches(dims[i], bestB)) sumdims.push_back(static_cast<int>(i));

    // stage 1: X[xdims] = sum_{sumdims} TA * TB
    std::vector<std::size_t> xstride(xdims.size(), 1);
    std::size_t xtotal = 1;
    for (int i = static_cast<int>(xdims.size()) - 1; i >= 0; --i) {
        xstride[i] = xtotal;
        xtotal *= dims[xdims[i]].globals.size();
    }
    if (xtotal > (std::size_t{1} << 28))
        throw UnsupportedError("rank-3 channel: intermediate too large");
    std::vector<double> X(xtotal, 0.0);
    const Tensor& TA = *tens[bestA];
    const Tensor& TB = *tens[bestB];
    const int nx = static_cast<int>(xdims.size());
    const int ns = static_cast<int>(sumdims.size());

#pragma omp parallel for schedule(dynamic, 16)
    for (std::int64_t flat = 0; flat < static_cast<std::int64_t>(xtotal); ++flat) {
        std::size_t rem = static_cast<std::size_t>(flat);
        std::size_t offA = 0, offB = 0;
        for (int i = 0; i < nx; ++i) {
            const TermDim& d = dims[xdims[i]];
            const int it = static_cast<int>(rem / xstride[i]);
            rem %= xstride[i];
            const int g = d.globals[it];
            if (d.slot_of[bestA] >= 0) offA += static_cast<std::size_t>(g) * TA.stride(d.slot_of[bestA]);
            if (d.slot_of[bestB] >= 0) offB += static_cast<std::size_t>(g) * TB.stride(d.slot_of[bestB]);
        }
        // nested sums over the pair edges (at most 4)
        double acc = 0.0;
        const TermDim* sd[4] = {nullptr, nullptr, nullptr, nullptr};
        for (int i = 0; i < ns; ++i) sd[i] = &dims[sumdims[i]];
        auto offs = [&](const TermDim& d, int g, std::size_t& oa, std::size_t& ob) {
            if (d.slot_of[bestA] >= 0) oa += static_cast<std::size_t>(g) * TA.stride(d.slot_of[bestA]);
            if (d.slot_of[bestB] >= 0) ob += static_cast<std::size_t>(g) * TB.stride(d.slot_of[bestB]);
        };
        switch (ns) {
            case 1:
                for (int g0 : sd[0]->globals) {
                    std::size_t oa = offA, ob = offB;
                    offs(*sd[0], g0, oa, ob);
                    acc += TA.data()[oa] * TB.data()[ob];
                }
                break;
            case 2:
                for (int g0 : sd[0]->globals)
                    for (int g1 : sd[1]->globals) {
                        std::size_t oa = offA, ob = offB;
                        offs(*sd[0], g0, oa, ob);
                        offs(*sd[1], g1, oa, ob);
                        acc += TA.data()[oa] * TB.data()[ob];
                    }
                break;
            case 3:
                for (int g0 : sd[0]->globals)
                    for (int g1 : sd[1]->globals)
                        for (int g2 : sd[2]->globals) {
                            std::size_t oa = offA, ob = offB;
                            offs(*sd[0], g0, oa, ob);
                            offs(*sd[1], g1, oa, ob);
                            offs(*sd[2], g2, oa, ob);
                            acc += TA.data()[oa] * TB.data()[ob];
                        }
                break;
            case 4:
                for (int g0 : sd[0]->globals)
                    for (int g1 : sd[1]->globals)
                        for (int g2 : sd[2]->globals)
                            for (int g3 : sd[3]->globals) {
                                std::size_t oa = offA, ob = offB;
                                offs(*sd[0], g0, oa, ob);
                                offs(*sd[1], g1, oa, ob);
                                offs(*sd[2], g2, oa, ob);
                                offs(*sd[3], g3, oa, ob);
                                acc += TA.data()[oa] * TB.data()[ob];
                            }
                break;
            default:
                acc = TA.data()[offA] * TB.data()[offB];
        }
        X[flat] = acc;
    }

    // stage 2: out[free positions] += pref * sum_{pending} X * TC
    // free dims: subset of xdims with d.free, plus dims touching only tc
    // pending dims: xdims entries that touch tc (edges to the third tensor)
    std::vector<int> free_ids, pend_ids;
    std::vector<std::size_t> xstride_of(dims.size(), 0);
    for (int i = 0; i < nx; ++i) xstride_of[xdims[i]] = xstride[i];
    for (std::size_t i = 0; i < dims.size(); ++i) {
        const TermDim& d = dims[i];
        const bool in_x = std::find(xdims.begin(), xdims.end(), static_cast<int>(i)) != xdims.end();
        if (d.free) {
            free_ids.push_back(static_cast<int>(i));
            if (!in_x && !touches(d, tc)) return;  // cannot happen
        } else if (in_x && touches(d, tc)) {
            pend_ids.push_back(static_cast<int>(i));
        }
    }
    const Tensor& TC = *tens[tc];

    const int nf = static_cast<int>(free_ids.size());
    std::size_t ftotal = 1;
    std::vector<std::size_t> fsizes(nf);
    for (int i = 0; i < nf; ++i) {
        fsizes[i] = dims[free_ids[i]].globals.size();
        ftotal *= fsizes[i];
    }
    const int npend = static_cast<int>(pend_ids.size());

    Tensor& tgt = term.kout == 0 ? out.c1 /*unused*/ : out.rank_tensor(term.kout);
    double* tgt_scalar = term.kout == 0 ? &out.scalar : nullptr;
    const int kout = term.kout;
    const int nlist = static_cast<int>(olist.size());

    double scalar_acc = 0.0;
#pragma omp parallel for schedule(dynamic, 16) reduction(+ : scalar_acc)
    for (std::int64_t flat = 0; flat < static_cast<std::int64_t>(ftotal); ++flat) {
        std::size_t rem = static_cast<std::size_t>(flat);
        std::size_t offX = 0, offC = 0;
        std::array<int, 6> outpos{};
        for (int i = nf - 1; i >= 0; --i) {
            const TermDim& d = dims[free_ids[i]];
            const int it = static_cast<int>(rem % fsizes[i]);
            rem /= fsizes[i];
            const int g = d.globals[it];
            // a free dim lives in X (touches the pair) and/or on the third tensor
            const bool in_x = std::find(xdims.begin(), xdims.end(), free_ids[i]) != xdims.end();
            if (in_x) offX += static_cast<std::size_t>(it) * xstride_of[free_ids[i]];
            if (d.slot_of[tc] >= 0) offC += static_cast<std::size_t>(g) * TC.stride(d.slot_of[tc]);
            outpos[d.out_slot] = d.positions[it];
        }
        double acc = 0.0;
        if (npend == 0) {
            acc = X[offX] * TC.data()[offC];
        } else if (npend == 1) {
            const TermDim& d = dims[pend_ids[0]];
            const std::size_t xs = xstride_of[pend_ids[0]];
            const std::size_t cs = TC.stride(d.slot_of[tc]);
            for (std::size_t it = 0; it < d.globals.size(); ++it)
                acc += X[offX + it * xs] * TC.data()[offC + static_cast<std::size_t>(d.globals[it]) * cs];
        } else if (npend == 2) {
            const TermDim& d0 = dims[pend_ids[0]];
            const TermDim& d1 = dims[pend_ids[1]];
            const std::size_t xs0 = xstride_of[pend_ids[0]], xs1 = xstride_of[pend_ids[1]];
            const std::size_t cs0 = TC.stride(d0.slot_of[tc]), cs1 = TC.stride(d1.slot_of[tc]);
            for (std::size_t i0 = 0; i0 < d0.globals.size(); ++i0)
                for (std::size_t i1 = 0; i1 < d1.globals.size(); ++i1)
                    acc += X[offX + i0 * xs0 + i1 * xs1] *
                           TC.data()[offC + static_cast<std::size_t>(d0.globals[i0]) * cs0 +
                                     static_cast<std::size_t>(d1.globals[i1]) * cs1];
        } else {
            // up to 4 pending edges
            std::array<std::size_t, 4> xs{}, cs{};
            std::array<const TermDim*, 4> pd{};
            for (int j = 0; j < npend; ++j) {
                pd[j] = &dims[pend_ids[j]];
                xs[j] = xstride_of[pend_ids[j]];
                cs[j] = TC.stride(pd[j]->slot_of[tc]);
            }
            const std::size_t n3 = npend > 3 ? pd[3]->globals.size() : 1;
            for (std::size_t i0 = 0; i0 < pd[0]->globals.size(); ++i0)
                for (std::size_t i1 = 0; i1 < pd[1]->globals.size(); ++i1)
                    for (std::size_t i2 = 0; i2 < pd[2]->globals.size(); ++i2)
                        for (std::size_t i3 = 0; i3 < n3; ++i3) {
                            std::size_t ox = offX + i0 * xs[0] + i1 * xs[1] + i2 * xs[2];
                            std::size_t oc = offC +
                                             static_cast<std::size_t>(pd[0]->globals[i0]) * cs[0] +
                                             static_cast<std::size_t>(pd[1]->globals[i1]) * cs[1] +
                                             static_cast<std::size_t>(pd[2]->globals[i2]) * cs[2];
                            if (npend > 3) {
                                ox += i3 * xs[3];
                                oc += static_cast<std::size_t>(pd[3]->globals[i3]) * cs[3];
                            }
                            acc += X[ox] * TC.data()[oc];
                        }
        }
        if (kout == 0) {
            scalar_acc += term.pref * acc;
        } else {
            std::size_t off = 0;
            for (int s = 0; s < 2 * kout; ++s)
                off = off * static_cast<std::size_t>(nlist) + static_cast<std::size_t>(outpos[s]);
            // distinct free dims map to distinct out slots: no write races
            tgt.data()[off] += term.pref * acc;
        }
    }
    if (tgt_scalar) *tgt_scalar += scalar_acc;
}

}  // namespace

void accumulate_rank3_channel(const NormalOrderedOperator& A, const NormalOrderedOperator& B,
                              const NormalOrderedOperator& C, double coeff,
                              NormalOrderedOperator& out, const WickContext& ctx,
                              const std::vector<int>* out_indices) {
    if (!A.has_rank(2) || !B.has_rank(2)) return;  // no rank-3 intermediate arises
    std::vector<int> ident;
    if (!out_indices) {
        ident = identity_list(A.m);
        out_indices = &ident;
    }
    const std::vector<int>& olist = *out_indices;
    if (out.c1.empty() || out.c2.empty() || out.c1.dim(0) != olist.size())
        throw DomainError("rank-3 channel: output operator not allocated for the index list");

    const auto terms = build_rank3_channel_terms(coeff, C.has_rank(1), C.has_rank(2));

    std::vector<SupportBlock> sA, sB, sC;
    const auto& bA = blocks_of(A, 2, sA);
    const auto& bB = blocks_of(B, 2, sB);
    for (const auto& term : terms) {
        const Tensor* tens[3] = {&A.c2, &B.c2, &C.rank_tensor(term.kC)};
        const auto& bC = blocks_of(C, term.kC, sC);
        for (const auto& blkA : bA)
            for (const auto& blkB : bB)
                for (const auto& blkC : bC) {
                    const SupportBlock* blocks[3] = {&blkA, &blkB, &blkC};
                    eval_ternary_term(term, tens, blocks, ctx, olist, out);
                }
    }
}

}  // namespace ccdf
