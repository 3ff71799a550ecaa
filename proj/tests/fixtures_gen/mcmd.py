"""Minimal McMurchie-Davidson integral engine over contracted GTOs.

Produces AO-basis overlap, kinetic, nuclear-attraction and two-electron
integrals for shells read from a Gaussian94-format basis file. Cartesian
primitives are assembled into real solid-harmonic components for l >= 2,
so the AO space matches the spherical-harmonic convention.
"""

import numpy as np
from scipy.special import gammainc, gamma

ANGMOM = {"S": 0, "P": 1, "D": 2, "F": 3, "G": 4}


def boys(n, x):
    x = np.asarray(x, dtype=float)
    out = np.empty(np.broadcast(x, np.empty(n + 1)[:, None] if False else x).shape + (n + 1,))
    small = x < 1e-12
    xs = np.where(small, 1.0, x)
    for m in range(n + 1):
        val = 0.5 * gamma(m + 0.5) * gammainc(m + 0.5, xs) * xs ** (-(m + 0.5))
        ser = 1.0 / (2 * m + 1) - x / (2 * m + 3) + x * x / (2 * (2 * m + 5))
        out[..., m] = np.where(small, ser, val)
    return out


def hermite_e(l1, l2, pa, pb, one_over_2p, mu_ab2):
    """E^{ij}_t coefficients, returned as array [l1+1, l2+1, l1+l2+1]."""
    E = np.zeros((l1 + 1, l2 + 1, l1 + l2 + 2))
    E[0, 0, 0] = np.exp(-mu_ab2)
    for i in range(1, l1 + 1):
        for t in range(i + 1):
            E[i, 0, t] = (one_over_2p * (E[i - 1, 0, t - 1] if t > 0 else 0.0)
                          + pa * E[i - 1, 0, t]
                          + (t + 1) * E[i - 1, 0, t + 1])
    for j in range(1, l2 + 1):
        for i in range(l1 + 1):
            for t in range(i + j + 1):
                E[i, j, t] = (one_over_2p * (E[i, j - 1, t - 1] if t > 0 else 0.0)
                              + pb * E[i, j - 1, t]
                              + (t + 1) * E[i, j - 1, t + 1])
    return E[:, :, :l1 + l2 + 1]


def hermite_coulomb(tmax, umax, vmax, p, PC):
    """R_{tuv} tensor for Hermite charge distributions."""
    n = tmax + umax + vmax
    x = p * (PC[0] ** 2 + PC[1] ** 2 + PC[2] ** 2)
    F = boys(n, np.array(x))
    R = np.zeros((n + 1, tmax + 1, umax + 1, vmax + 1))
    for m in range(n + 1):
        R[m, 0, 0, 0] = (-2.0 * p) ** m * F[m]
    for t in range(1, tmax + 1):
        for m in range(n - t + 1):
            R[m, t, 0, 0] = (t - 1) * (R[m + 1, t - 2, 0, 0] if t > 1 else 0.0) + PC[0] * R[m + 1, t - 1, 0, 0]
    for u in range(1, umax + 1):
        for t in range(tmax + 1):
            for m in range(n - t - u + 1):
                R[m, t, u, 0] = (u - 1) * (R[m + 1, t, u - 2, 0] if u > 1 else 0.0) + PC[1] * R[m + 1, t, u - 1, 0]
    for v in range(1, vmax + 1):
        for t in range(tmax + 1):
            for u in range(umax + 1):
                for m in range(n - t - u - v + 1):
                    R[m, t, u, v] = (v - 1) * (R[m + 1, t, u, v - 2] if v > 1 else 0.0) + PC[2] * R[m + 1, t, u, v - 1]
    return R[0]


def cart_list(l):
    return [(lx, l - lx - lz, lz) for lx in range(l, -1, -1) for lz in range(l - lx + 1)]


def dfact(n):
    r = 1.0
    while n > 1:
        r *= n
        n -= 2
    return r


def prim_norm(alpha, l):
    # norm of the (l,0,0) cartesian component, the convention used by
    # Gaussian94 contraction coefficients
    return (2 * alpha / np.pi) ** 0.75 * (4 * alpha) ** (l / 2.0) / np.sqrt(dfact(2 * l - 1))


def solid_harmonics(l):
    """Rows: spherical components; columns: cart_list(l) monomial weights."""
    carts = cart_list(l)

    def row(terms):
        r = np.zeros(len(carts))
        for (mono, c) in terms:
            r[carts.index(mono)] = c
        return r

    if l == 0:
        return np.array([[1.0]])
    if l == 1:
        return np.array([row([((1, 0, 0), 1.0)]), row([((0, 1, 0), 1.0)]), row([((0, 0, 1), 1.0)])])
    if l == 2:
        return np.array([
            row([((1, 1, 0), 1.0)]),                                    # xy
            row([((0, 1, 1), 1.0)]),                                    # yz
            row([((0, 0, 2), 1.0), ((2, 0, 0), -0.5), ((0, 2, 0), -0.5)]),  # 3z^2-r^2 (scaled)
            row([((1, 0, 1), 1.0)]),                                    # xz
            row([((2, 0, 0), 1.0), ((0, 2, 0), -1.0)]),                 # x^2-y^2
        ])
    if l == 3:
        return np.array([
            row([((2, 1, 0), 3.0), ((0, 3, 0), -1.0)]),                 # y(3x^2-y^2)
            row([((1, 1, 1), 1.0)]),                                    # xyz
            row([((0, 1, 2), 4.0), ((2, 1, 0), -1.0), ((0, 3, 0), -1.0)]),
            row([((0, 0, 3), 2.0), ((2, 0, 1), -3.0), ((0, 2, 1), -3.0)]),
            row([((1, 0, 2), 4.0), ((3, 0, 0), -1.0), ((1, 2, 0), -1.0)]),
            row([((2, 0, 1), 1.0), ((0, 2, 1), -1.0)]),                 # z(x^2-y^2)
            row([((3, 0, 0), 1.0), ((1, 2, 0), -3.0)]),                 # x(x^2-3y^2)
        ])
    raise ValueError("l > 3 not supported")


class Shell:
    def __init__(self, l, exps, coefs, center):
        self.l = l
        self.exps = np.asarray(exps, dtype=float)
        self.coefs = np.asarray(coefs, dtype=float) * np.array([prim_norm(a, l) for a in exps])
        self.center = np.asarray(center, dtype=float)
        self.ncart = (l + 1) * (l + 2) // 2
        self.nsph = 2 * l + 1


def parse_g94(text):
    """Parse a Gaussian94 basis block -> {element: [(l, exps, coefs), ...]}."""
    basis = {}
    lines = [ln.split("!")[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and ln != "****"]
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        elem = parts[0].capitalize()
        i += 1
        shells = basis.setdefault(elem, [])
        while i < len(lines):
            parts = lines[i].split()
            if parts[0].upper() in ANGMOM or parts[0].upper() == "SP":
                ltag = parts[0].upper()
                nprim = int(parts[1])
                rows = [lines[i + 1 + k].replace("D", "E").replace("d", "E").split() for k in range(nprim)]
                i += 1 + nprim
                if ltag == "SP":
                    shells.append((0, [float(r[0]) for r in rows], [float(r[1]) for r in rows]))
                    shells.append((1, [float(r[0]) for r in rows], [float(r[2]) for r in rows]))
                else:
                    shells.append((ANGMOM[ltag], [float(r[0]) for r in rows], [float(r[1]) for r in rows]))
            else:
                break
    return basis


def build_shells(atoms, basis):
    shells = []
    for (elem, Z, xyz) in atoms:
        for (l, e, c) in basis[elem]:
            shells.append(Shell(l, e, c, xyz))
    return shells


def shell_pair_1e(sa, sb, atoms):
    """Cartesian S, T, V blocks for a contracted shell pair."""
    la, lb = sa.l, sb.l
    ca, cb = cart_list(la), cart_list(lb)
    S = np.zeros((len(ca), len(cb))); T = np.zeros_like(S); V = np.zeros_like(S)
    AB = sa.center - sb.center
    for ia, a in enumerate(sa.exps):
        for ib, b in enumerate(sb.exps):
            p = a + b
            mu = a * b / p
            P = (a * sa.center + b * sb.center) / p
            PA, PB = P - sa.center, P - sb.center
            cc = sa.coefs[ia] * sb.coefs[ib]
            # per-dimension E tables with extended l2 for the kinetic pieces
            E = [hermite_e(la, lb + 2, PA[d], PB[d], 1.0 / (2 * p), mu * AB[d] ** 2) for d in range(3)]
            pref = (np.pi / p) ** 1.5
            Rt = {}
            for (iA, (ax, ay, az)) in enumerate(ca):
                for (iB, (bx, by, bz)) in enumerate(cb):
                    s3 = (E[0][ax, bx, 0], E[1][ay, by, 0], E[2][az, bz, 0])
                    S[iA, iB] += cc * pref * s3[0] * s3[1] * s3[2]

                    def s1(d, l2off):
                        ll = [(ax, bx), (ay, by), (az, bz)][d]
                        j = ll[1] + l2off
                        if j < 0:
                            return 0.0
                        return E[d][ll[0], j, 0]

                    tkin = 0.0
                    for d in range(3):
                        j = [bx, by, bz][d]
                        term = -2.0 * b * b * s1(d, 2) + b * (2 * j + 1) * s1(d, 0) - 0.5 * j * (j - 1) * s1(d, -2)
                        oth = [s1(e, 0) for e in range(3) if e != d]
                        tkin += term * oth[0] * oth[1]
                    T[iA, iB] += cc * pref * tkin

                    for (elem, Z, C) in atoms:
                        key = tuple(C)
                        if key not in Rt:
                            Rt[key] = hermite_coulomb(la + lb + 2, la + lb + 2, la + lb + 2, p, P - np.asarray(C))
                        R = Rt[key]
                        v = 0.0
                        for t in range(ax + bx + 1):
                            Et = E[0][ax, bx, t]
                            if Et == 0.0:
                                continue
                            for u in range(ay + by + 1):
                                Eu = E[1][ay, by, u]
                                if Eu == 0.0:
                                    continue
                                for w in range(az + bz + 1):
                                    Ev = E[2][az, bz, w]
                                    if Ev != 0.0:
                                        v += Et * Eu * Ev * R[t, u, w]
                        V[iA, iB] += -Z * cc * (2 * np.pi / p) * v
    return S, T, V


def pair_hermite(sa, sb):
    """Hermite expansion of a contracted pair: list of (p, P, Etensor).

    Etensor[t,u,v, iA, iB] maps Hermite charges to cartesian pairs.
    """
    la, lb = sa.l, sb.l
    ca, cb = cart_list(la), cart_list(lb)
    AB = sa.center - sb.center
    out = []
    for ia, a in enumerate(sa.exps):
        for ib, b in enumerate(sb.exps):
            p = a + b
            mu = a * b / p
            P = (a * sa.center + b * sb.center) / p
            PA, PB = P - sa.center, P - sb.center
            cc = sa.coefs[ia] * sb.coefs[ib]
            E = [hermite_e(la, lb, PA[d], PB[d], 1.0 / (2 * p), mu * AB[d] ** 2) for d in range(3)]
            L = la + lb
            Et = np.zeros((L + 1, L + 1, L + 1, len(ca), len(cb)))
            for (iA, (ax, ay, az)) in enumerate(ca):
                for (iB, (bx, by, bz)) in enumerate(cb):
                    Et[:ax + bx + 1, :ay + by + 1, :az + bz + 1, iA, iB] = cc * np.einsum(
                        "t,u,v->tuv", E[0][ax, bx, :ax + bx + 1], E[1][ay, by, :ay + by + 1],
                        E[2][az, bz, :az + bz + 1])
            out.append((p, P, Et))
    return out


def eri_shell_quartet(sa, sb, sc, sd):
    ha, hc = pair_hermite(sa, sb), pair_hermite(sc, sd)
    na, nb = len(cart_list(sa.l)), len(cart_list(sb.l))
    nc, nd = len(cart_list(sc.l)), len(cart_list(sd.l))
    out = np.zeros((na, nb, nc, nd))
    L1, L2 = sa.l + sb.l, sc.l + sd.l
    sign = np.fromfunction(lambda t, u, v: (-1.0) ** (t + u + v), (L2 + 1, L2 + 1, L2 + 1))
    for (p, P, E1) in ha:
        for (q, Q, E2) in hc:
            alpha = p * q / (p + q)
            R = hermite_coulomb(L1 + L2, L1 + L2, L1 + L2, alpha, P - Q)
            pref = 2 * np.pi ** 2.5 / (p * q * np.sqrt(p + q))
            # contract R with bra and signed ket Hermite weights
            Rk = np.einsum("tuvxyz,xyz,xyzcd->tuvcd", _slice_R(R, L1, L2), sign, E2)
            out += pref * np.einsum("tuvab,tuvcd->abcd", E1, Rk)
    return out


def _slice_R(R, L1, L2):
    """R[t+x, u+y, v+z] as a 6-index array [t,u,v,x,y,z]."""
    out = np.zeros((L1 + 1, L1 + 1, L1 + 1, L2 + 1, L2 + 1, L2 + 1))
    for t in range(L1 + 1):
        for u in range(L1 + 1):
            for v in range(L1 + 1):
                out[t, u, v] = R[t:t + L2 + 1, u:u + L2 + 1, v:v + L2 + 1]
    return out


def sph_transform(shells):
    """Block-diagonal cart->spherical matrix columns=cart rows=sph, plus offsets."""
    blocks = []
    for s in shells:
        W = solid_harmonics(s.l)
        blocks.append(W)
    return blocks


def compute_ao_integrals(atoms, shells):
    nsph = sum(s.nsph for s in shells)
    offs = np.cumsum([0] + [s.nsph for s in shells])
    W = sph_transform(shells)
    S = np.zeros((nsph, nsph)); T = np.zeros_like(S); V = np.zeros_like(S)
    for i, sa in enumerate(shells):
        for j, sb in enumerate(shells):
            if j < i:
                continue
            Sc, Tc, Vc = shell_pair_1e(sa, sb, atoms)
            Sb = W[i] @ Sc @ W[j].T
            Tb = W[i] @ Tc @ W[j].T
            Vb = W[i] @ Vc @ W[j].T
            S[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] = Sb
            T[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] = Tb
            V[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] = Vb
            if j != i:
                S[offs[j]:offs[j + 1], offs[i]:offs[i + 1]] = Sb.T
                T[offs[j]:offs[j + 1], offs[i]:offs[i + 1]] = Tb.T
                V[offs[j]:offs[j + 1], offs[i]:offs[i + 1]] = Vb.T
    # normalize spherical AOs to unit self-overlap
    d = 1.0 / np.sqrt(np.diag(S))
    S = d[:, None] * S * d[None, :]
    T = d[:, None] * T * d[None, :]
    V = d[:, None] * V * d[None, :]

    eri = np.zeros((nsph,) * 4)
    ns = len(shells)
    for i in range(ns):
        for j in range(i + 1):
            for k in range(ns):
                for l in range(k + 1):
                    if (k, l) > (i, j):
                        continue
                    blk = eri_shell_quartet(shells[i], shells[j], shells[k], shells[l])
                    blk = np.einsum("pa,qb,rc,sd,abcd->pqrs", W[i], W[j], W[k], W[l], blk)
                    si, sj, sk, sl = (slice(offs[x], offs[x + 1]) for x in (i, j, k, l))
                    eri[si, sj, sk, sl] = blk
                    eri[sj, si, sk, sl] = blk.transpose(1, 0, 2, 3)
                    eri[si, sj, sl, sk] = blk.transpose(0, 1, 3, 2)
                    eri[sj, si, sl, sk] = blk.transpose(1, 0, 3, 2)
                    eri[sk, sl, si, sj] = blk.transpose(2, 3, 0, 1)
                    eri[sl, sk, si, sj] = blk.transpose(3, 2, 0, 1)
                    eri[sk, sl, sj, si] = blk.transpose(2, 3, 1, 0)
                    eri[sl, sk, sj, si] = blk.transpose(3, 2, 1, 0)
    eri = np.einsum("p,q,r,s,pqrs->pqrs", d, d, d, d, eri)
    enuc = 0.0
    for x in range(len(atoms)):
        for y in range(x):
            rxy = np.linalg.norm(np.asarray(atoms[x][2]) - np.asarray(atoms[y][2]))
            enuc += atoms[x][1] * atoms[y][1] / rxy
    return S, T, V, eri, enuc


def rhf(S, hcore, eri, nelec, max_iter=200, tol=1e-11):
    n = S.shape[0]
    nocc = nelec // 2
    se, sv = np.linalg.eigh(S)
    X = sv @ np.diag(se ** -0.5) @ sv.T
    F = hcore.copy()
    E_old = 0.0
    diis_F, diis_e = [], []
    D = np.zeros_like(S)
    for it in range(max_iter):
        Fp = X.T @ F @ X
        eps, Cp = np.linalg.eigh(Fp)
        C = X @ Cp
        Cocc = C[:, :nocc]
        D = Cocc @ Cocc.T
        J = np.einsum("pqrs,rs->pq", eri, D)
        K = np.einsum("prqs,rs->pq", eri, D)
        F = hcore + 2 * J - K
        E = np.einsum("pq,pq->", D, hcore + F)
        err = F @ D @ S - S @ D @ F
        diis_F.append(F.copy()); diis_e.append(err.copy())
        if len(diis_F) > 8:
            diis_F.pop(0); diis_e.pop(0)
        if len(diis_F) > 1:
            m = len(diis_F)
            B = -np.ones((m + 1, m + 1)); B[m, m] = 0.0
            for a in range(m):
                for b in range(m):
                    B[a, b] = np.sum(diis_e[a] * diis_e[b])
            rhs = np.zeros(m + 1); rhs[m] = -1.0
            try:
                w = np.linalg.solve(B, rhs)[:m]
                F = sum(wi * Fi for wi, Fi in zip(w, diis_F))
            except np.linalg.LinAlgError:
                pass
        if abs(E - E_old) < tol and np.max(np.abs(err)) < 1e-8:
            break
        E_old = E
    Fp = X.T @ F @ X
    eps, Cp = np.linalg.eigh(Fp)
    C = X @ Cp
    return E, eps, C


def mo_integrals(hcore, eri, C):
    h = C.T @ hcore @ C
    tmp = np.einsum("pqrs,pi->iqrs", eri, C, optimize=True)
    tmp = np.einsum("iqrs,qj->ijrs", tmp, C, optimize=True)
    tmp = np.einsum("ijrs,rk->ijks", tmp, C, optimize=True)
    mo = np.einsum("ijks,sl->ijkl", tmp, C, optimize=True)
    return h, mo


def write_fcidump(path, h, eri, enuc, nelec, ms2=0, tol=1e-12):
    n = h.shape[0]
    with open(path, "w") as f:
        f.write("&FCI NORB=%d,NELEC=%d,MS2=%d,\n" % (n, nelec, ms2))
        f.write(" ORBSYM=" + ",".join(["1"] * n) + ",\n")
        f.write(" ISYM=1,\n")
        f.write("&END\n")
        for i in range(n):
            for j in range(i + 1):
                for k in range(i + 1):
                    lmax = j + 1 if k == i else k + 1
                    for l in range(lmax):
                        v = eri[i, j, k, l]
                        if abs(v) > tol:
                            f.write("%23.16E %3d %3d %3d %3d\n" % (v, i + 1, j + 1, k + 1, l + 1))
        for i in range(n):
            for j in range(i + 1):
                if abs(h[i, j]) > tol:
                    f.write("%23.16E %3d %3d %3d %3d\n" % (h[i, j], i + 1, j + 1, 0, 0))
        f.write("%23.16E %3d %3d %3d %3d\n" % (enuc, 0, 0, 0, 0))
