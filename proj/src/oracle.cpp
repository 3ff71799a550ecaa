#include "ccdf/oracle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>

#include "ccdf/errors.hpp"

namespace ccdf::oracle {

namespace {

constexpr int kMaxOrbitals = 12;

void check_size(int m) {
    if (m > kMaxOrbitals)
        throw UnsupportedError("fock oracle: sector exceeds the 12-spin-orbital ceiling");
}

int popcount(std::uint64_t x) { return std::popcount(x); }

/// applies ops right-to-left; ops as (creation?, index); returns sign or 0
int apply_string(std::uint64_t& state, const std::pair<bool, int>* ops, int nops) {
    int sign = 1;
    for (int i = nops - 1; i >= 0; --i) {
        const auto [cre, idx] = ops[i];
        const std::uint64_t bit = 1ull << idx;
        const std::uint64_t below = state & (bit - 1);
        if (cre) {
            if (state & bit) return 0;
            if (popcount(below) & 1) sign = -sign;
            state |= bit;
        } else {
            if (!(state & bit)) return 0;
            if (popcount(below) & 1) sign = -sign;
            state &= ~bit;
        }
    }
    return sign;
}

/// Adds c * {normal-ordered string} for a strictly ordered index tuple.
/// uppers/lowers ascending; the string is [c(u0)..c(uk-1), a(l(k-1))..a(l0)],
/// reordered so quasi-creations precede quasi-annihilations.
void add_normal_string(Eigen::MatrixXd& M, const SectorBasis& basis, int no, double c,
                       const int* up, const int* lo, int k) {
    std::pair<bool, int> ops[6];
    int n = 0;
    for (int i = 0; i < k; ++i) ops[n++] = {true, up[i]};
    for (int i = k - 1; i >= 0; --i) ops[n++] = {false, lo[i]};
    // stable partition by quasi-character, tracking parity
    auto quasi_cre = [no](const std::pair<bool, int>& op) {
        return op.first ? (op.second >= no) : (op.second < no);
    };
    std::pair<bool, int> sorted[6];
    int ns = 0;
    int sign = 1;
    // insertion of quasi-creations first, preserving relative order
    int positions[6];
    int np = 0;
    for (int i = 0; i < n; ++i)
        if (quasi_cre(ops[i])) positions[np++] = i;
    for (int i = 0; i < n; ++i)
        if (!quasi_cre(ops[i])) positions[np++] = i;
    // parity of this permutation
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b)
            if (positions[a] > positions[b]) sign = -sign;
    for (int i = 0; i < n; ++i) sorted[ns++] = ops[positions[i]];

    for (int col = 0; col < basis.dim(); ++col) {
        std::uint64_t st = basis.dets[col];
        int s = apply_string(st, sorted, n);
        if (s == 0) continue;
        auto it = basis.index.find(st);
        if (it == basis.index.end()) continue;  // leaves the sector (cannot happen for number-conserving strings)
        M(it->second, col) += c * s * sign;
    }
}

void add_rank(Eigen::MatrixXd& M, const SectorBasis& basis, int no, const Tensor& t, int k) {
    const int m = basis.m;
    int up[3], lo[3];
    std::size_t idx[6];
    auto rec_lo = [&](auto&& self, int d, int start) -> void {
        if (d == k) {
            for (int i = 0; i < k; ++i) idx[i] = static_cast<std::size_t>(up[i]);
            for (int i = 0; i < k; ++i) idx[k + i] = static_cast<std::size_t>(lo[i]);
            double c = t.at_index(idx);
            if (c != 0.0) add_normal_string(M, basis, no, c, up, lo, k);
            return;
        }
        for (int v = start; v < m; ++v) {
            lo[d] = v;
            self(self, d + 1, v + 1);
        }
    };
    auto rec_up = [&](auto&& self, int d, int start) -> void {
        if (d == k) {
            rec_lo(rec_lo, 0, 0);
            return;
        }
        for (int v = start; v < m; ++v) {
            up[d] = v;
            self(self, d + 1, v + 1);
        }
    };
    rec_up(rec_up, 0, 0);
}

}  // namespace

SectorBasis make_sector(int m, int n_alpha, int n_beta) {
    check_size(m);
    SectorBasis b;
    b.m = m;
    const int nsp = m / 2;
    std::vector<std::uint64_t> alphas, betas;
    for (std::uint64_t mask = 0; mask < (1ull << nsp); ++mask) {
        if (popcount(mask) != n_alpha && popcount(mask) != n_beta) continue;
        std::uint64_t spread = 0;
        for (int i = 0; i < nsp; ++i)
            if (mask >> i & 1) spread |= 1ull << (2 * i);
        if (popcount(mask) == n_alpha) alphas.push_back(spread);
        if (popcount(mask) == n_beta) betas.push_back(spread << 1);
    }
    for (auto a : alphas)
        for (auto bb : betas) b.dets.push_back(a | bb);
    std::sort(b.dets.begin(), b.dets.end());
    for (int i = 0; i < b.dim(); ++i) b.index[b.dets[i]] = i;
    return b;
}

SectorBasis make_sector_nelec(int m, int n) {
    check_size(m);
    SectorBasis b;
    b.m = m;
    for (std::uint64_t mask = 0; mask < (1ull << m); ++mask)
        if (popcount(mask) == n) b.dets.push_back(mask);
    for (int i = 0; i < b.dim(); ++i) b.index[b.dets[i]] = i;
    return b;
}

DenseOperator materialize(const NormalOrderedOperator& op, const ReferenceFrame& ref,
                          const SectorBasis& sector) {
    check_size(op.m);
    DenseOperator out;
    out.basis = sector;
    out.matrix = Eigen::MatrixXd::Identity(sector.dim(), sector.dim()) * op.scalar;
    const int no = ref.n_occ();
    for (int k = 1; k <= 3; ++k)
        if (op.has_rank(k)) add_rank(out.matrix, sector, no, op.rank_tensor(k), k);
    return out;
}

DenseOperator materialize(const PhysicalVacuumOperator& op, const SectorBasis& sector) {
    check_size(op.m);
    // physical vacuum: every annihilation is a quasi-annihilation, which is
    // the no = 0 special case of the particle-hole machinery
    DenseOperator out;
    out.basis = sector;
    out.matrix = Eigen::MatrixXd::Identity(sector.dim(), sector.dim()) * op.scalar;
    if (!op.one_body.empty()) add_rank(out.matrix, sector, 0, op.one_body, 1);
    if (!op.two_body.empty()) add_rank(out.matrix, sector, 0, op.two_body, 2);
    return out;
}

DenseOperator materialize(const SpinOrbitalHamiltonian& H, const SectorBasis& sector) {
    PhysicalVacuumOperator op;
    op.m = H.m;
    op.scalar = H.scalar;
    op.one_body = H.h;
    op.two_body = H.v;
    return materialize(op, sector);
}

Eigen::MatrixXd matrix_exponential_antisymmetric(const Eigen::MatrixXd& S) {
    if ((S + S.transpose()).cwiseAbs().maxCoeff() > 1e-10)
        throw DomainError("matrix_exponential_antisymmetric: matrix is not antisymmetric");
    const std::complex<double> im(0.0, 1.0);
    Eigen::MatrixXcd iS = im * S;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(iS);
    Eigen::VectorXcd phases(S.rows());
    for (int i = 0; i < S.rows(); ++i) phases(i) = std::exp(-im * es.eigenvalues()(i));
    Eigen::MatrixXcd U =
        es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
    return U.real();
}

DenseOperator exact_transform(const SpinOrbitalHamiltonian& H, const NormalOrderedOperator& sigma,
                              const ReferenceFrame& ref, const SectorBasis& sector) {
    DenseOperator MH = materialize(H, sector);
    DenseOperator MS = materialize(sigma, ref, sector);
    Eigen::MatrixXd U = matrix_exponential_antisymmetric(MS.matrix);
    DenseOperator out;
    out.basis = sector;
    out.matrix = U.transpose() * MH.matrix * U;
    return out;
}

Eigen::MatrixXd matrix_commutator(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return a * b - b * a;
}

Eigen::MatrixXd commutator_series(const Eigen::MatrixXd& H, const Eigen::MatrixXd& HN,
                                  const Eigen::MatrixXd& FN, const Eigen::MatrixXd& S,
                                  int depth) {
    Eigen::MatrixXd out = H;
    if (depth >= 1) out += matrix_commutator(HN, S);
    if (depth >= 2) out += 0.5 * matrix_commutator(matrix_commutator(HN, S), S);
    if (depth >= 3)
        out += (1.0 / 6.0) *
               matrix_commutator(matrix_commutator(matrix_commutator(FN, S), S), S);
    return out;
}

double lowest_eigenvalue(const Eigen::MatrixXd& M) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()));
    return es.eigenvalues()(0);
}

double lowest_eigenvalue_in_active_block(const DenseOperator& M,
                                         const std::vector<int>& active_spin) {
    std::uint64_t active_mask = 0;
    for (int s : active_spin) active_mask |= 1ull << s;
    std::vector<int> keep;
    for (int i = 0; i < M.basis.dim(); ++i)
        if ((M.basis.dets[i] & ~active_mask) == 0) keep.push_back(i);
    if (keep.empty()) throw DomainError("no determinants inside the active block");
    Eigen::MatrixXd block(keep.size(), keep.size());
    for (std::size_t a = 0; a < keep.size(); ++a)
        for (std::size_t b = 0; b < keep.size(); ++b) block(a, b) = M.matrix(keep[a], keep[b]);
    return lowest_eigenvalue(block);
}

}  // namespace ccdf::oracle
