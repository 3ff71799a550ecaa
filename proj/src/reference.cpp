#include "ccdf/reference.hpp"

#include <algorithm>
#include <cmath>

#include "ccdf/errors.hpp"

namespace ccdf {

double ReferenceFrame::max_offdiagonal_fock() const {
    double mx = 0.0;
    for (int p = 0; p < m; ++p)
        for (int q = 0; q < m; ++q)
            if (p != q) mx = std::max(mx, std::abs(fock(p, q)));
    return mx;
}

ReferenceFrame build_reference(const SpinOrbitalHamiltonian& H, int n_electrons) {
    if (n_electrons > H.m) throw DomainError("build_reference: more electrons than spin orbitals");
    if (n_electrons < 0) throw DomainError("build_reference: negative electron count");
    ReferenceFrame ref;
    ref.m = H.m;
    for (int p = 0; p < n_electrons; ++p) ref.occupied.push_back(p);
    for (int p = n_electrons; p < H.m; ++p) ref.virtuals.push_back(p);

    ref.fock.reshape({static_cast<std::size_t>(H.m), static_cast<std::size_t>(H.m)});
    for (int p = 0; p < H.m; ++p)
        for (int q = 0; q < H.m; ++q) {
            double f = H.h(p, q);
            for (int i : ref.occupied) f += H.v(p, i, q, i);
            ref.fock(p, q) = f;
        }
    ref.epsilon.resize(H.m);
    for (int p = 0; p < H.m; ++p) ref.epsilon[p] = ref.fock(p, p);

    double e = H.scalar;
    for (int i : ref.occupied) e += H.h(i, i);
    for (int i : ref.occupied)
        for (int j : ref.occupied) e += 0.5 * H.v(i, j, i, j);
    ref.e_ref = e;
    return ref;
}

Mbpt2Result mbpt2(const SpinOrbitalHamiltonian& H, const ReferenceFrame& ref) {
    if (ref.max_offdiagonal_fock() > 1e-8)
        throw DomainError("mbpt2: reference is not canonical (off-diagonal fock too large)");
    const int no = ref.n_occ();
    const int nv = ref.n_virt();
    const int m = H.m;
    Mbpt2Result res;
    res.t2_first_order.reshape({static_cast<std::size_t>(nv), static_cast<std::size_t>(nv),
                                static_cast<std::size_t>(no), static_cast<std::size_t>(no)});
    double e2 = 0.0;
    for (int a = 0; a < nv; ++a)
        for (int b = 0; b < nv; ++b)
            for (int i = 0; i < no; ++i)
                for (int j = 0; j < no; ++j) {
                    double vab = H.v(no + a, no + b, i, j);
                    if (vab == 0.0) {
                        res.t2_first_order(a, b, i, j) = 0.0;
                        continue;
                    }
                    double den = ref.epsilon[i] + ref.epsilon[j] - ref.epsilon[no + a] -
                                 ref.epsilon[no + b];
                    if (std::abs(den) < 1e-8)
                        throw DegeneracyError("mbpt2: vanishing denominator");
                    double t = vab / den;
                    res.t2_first_order(a, b, i, j) = t;
                    e2 += 0.25 * vab * t;
                }
    res.e2 = e2;

    // unrelaxed singles-free correlated density over spin orbitals
    Tensor dso({static_cast<std::size_t>(m), static_cast<std::size_t>(m)});
    for (int i = 0; i < no; ++i) dso(i, i) = 1.0;
    const Tensor& t2 = res.t2_first_order;
    for (int i = 0; i < no; ++i)
        for (int j = 0; j < no; ++j) {
            double acc = 0.0;
            for (int k = 0; k < no; ++k)
                for (int a = 0; a < nv; ++a)
                    for (int b = 0; b < nv; ++b) acc += t2(a, b, i, k) * t2(a, b, j, k);
            dso(i, j) -= 0.5 * acc;
        }
    for (int a = 0; a < nv; ++a)
        for (int b = 0; b < nv; ++b) {
            double acc = 0.0;
            for (int i = 0; i < no; ++i)
                for (int j = 0; j < no; ++j)
                    for (int c = 0; c < nv; ++c) acc += t2(a, c, i, j) * t2(b, c, i, j);
            dso(no + a, no + b) += 0.5 * acc;
        }

    const int n = m / 2;
    res.density.resize(n, n);
    for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q)
            res.density(p, q) = dso(2 * p, 2 * q) + dso(2 * p + 1, 2 * q + 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (res.density + res.density.transpose()));
    // descending occupations
    res.natural_occupations.resize(n);
    res.natural_orbital_coefficients.resize(n, n);
    for (int k = 0; k < n; ++k) {
        res.natural_occupations[k] = es.eigenvalues()(n - 1 - k);
        res.natural_orbital_coefficients.col(k) = es.eigenvectors().col(n - 1 - k);
    }
    return res;
}

}  // namespace ccdf
