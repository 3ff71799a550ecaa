#include "ccdf/integrals.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ccdf/errors.hpp"

namespace ccdf {

namespace {

// the 8 chemist-convention images of (i,j,k,l)
std::array<std::array<int, 4>, 8> perm_images(int i, int j, int k, int l) {
    return {{{i, j, k, l},
             {j, i, k, l},
             {i, j, l, k},
             {j, i, l, k},
             {k, l, i, j},
             {l, k, i, j},
             {k, l, j, i},
             {l, k, j, i}}};
}

struct HeaderInfo {
    int norb = -1, nelec = -1, ms2 = 0, permsym = 8;
    std::vector<int> orbsym;
};

HeaderInfo parse_header(std::istream& in, std::string& rest_first_line) {
    HeaderInfo info;
    std::string header;
    std::string line;
    bool done = false;
    while (std::getline(in, line)) {
        std::string upper;
        for (char c : line) upper.push_back(static_cast<char>(std::toupper(c)));
        auto endpos = upper.find("&END");
        auto slashpos = upper.find('/');
        if (endpos != std::string::npos) {
            header += line.substr(0, endpos);
            rest_first_line = line.substr(endpos + 4);
            done = true;
            break;
        }
        if (slashpos != std::string::npos) {
            header += line.substr(0, slashpos);
            rest_first_line = line.substr(slashpos + 1);
            done = true;
            break;
        }
        header += line + " ";
    }
    if (!done) throw ParseError("FCIDUMP header not terminated by &END or /");

    auto amp = header.find('&');
    if (amp == std::string::npos) throw ParseError("FCIDUMP header missing &FCI namelist");
    header = header.substr(amp);
    // normalize: drop the &FCI tag, split on commas/whitespace into key=value
    std::string upper;
    for (char c : header) upper.push_back(static_cast<char>(std::toupper(c)));
    auto tag_end = upper.find_first_of(" \t,", 0);
    std::string body = (tag_end == std::string::npos) ? "" : header.substr(tag_end);
    for (char& c : body)
        if (c == ',' || c == '\t' || c == '\n' || c == '\r') c = ' ';
    // a key's value list may contain spaces after '='; re-join "KEY =" forms
    std::string key;
    std::istringstream toks(body);
    std::string tok;
    std::vector<std::string> parts;
    while (toks >> tok) parts.push_back(tok);
    std::vector<std::pair<std::string, std::string>> kv;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        auto eq = parts[i].find('=');
        if (eq != std::string::npos) {
            std::string k = parts[i].substr(0, eq);
            std::string v = parts[i].substr(eq + 1);
            std::transform(k.begin(), k.end(), k.begin(), ::toupper);
            kv.emplace_back(k, v);
        } else if (!kv.empty()) {
            kv.back().second += parts[i];  // continuation of a value list
        }
    }
    auto to_int = [](const std::string& s, const char* what) {
        try {
            return std::stoi(s);
        } catch (...) {
            throw ParseError(std::string("FCIDUMP header: bad integer for ") + what);
        }
    };
    for (auto& [k, v] : kv) {
        if (k == "NORB") info.norb = to_int(v, "NORB");
        else if (k == "NELEC") info.nelec = to_int(v, "NELEC");
        else if (k == "MS2") info.ms2 = to_int(v, "MS2");
        else if (k == "PERMSYM") info.permsym = to_int(v, "PERMSYM");
        else if (k == "ORBSYM") {
            std::istringstream vs(v);
            std::string item;
            while (std::getline(vs, item, ','))
                if (!item.empty()) info.orbsym.push_back(to_int(item, "ORBSYM"));
        }
        // ISYM and other keys are accepted and ignored
    }
    if (info.norb <= 0) throw ParseError("FCIDUMP header missing or invalid NORB");
    if (info.nelec < 0) throw ParseError("FCIDUMP header missing or invalid NELEC");
    if (info.permsym != 8 && info.permsym != 4 && info.permsym != 1)
        throw ParseError("FCIDUMP header: PERMSYM must be 8, 4 or 1");
    return info;
}

}  // namespace

IntegralSet parse_fcidump(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open FCIDUMP file: " + path);
    std::string rest;
    HeaderInfo hdr = parse_header(in, rest);

    const int n = hdr.norb;
    IntegralSet out;
    out.n_orbitals = n;
    out.n_electrons = hdr.nelec;
    out.ms2 = hdr.ms2;
    out.point_group_irreps = hdr.orbsym;
    out.h_spatial.reshape({static_cast<std::size_t>(n), static_cast<std::size_t>(n)});
    out.eri_spatial.reshape({static_cast<std::size_t>(n), static_cast<std::size_t>(n),
                             static_cast<std::size_t>(n), static_cast<std::size_t>(n)});
    Tensor seen_h({static_cast<std::size_t>(n), static_cast<std::size_t>(n)});
    Tensor seen_v({static_cast<std::size_t>(n), static_cast<std::size_t>(n),
                   static_cast<std::size_t>(n), static_cast<std::size_t>(n)});

    const double conflict_tol = 1e-10;
    std::string body(rest);
    {
        std::stringstream ss;
        ss << in.rdbuf();
        body += "\n" + ss.str();
    }
    std::istringstream lines(body);
    double value;
    int i, j, k, l;
    std::string entry_line;
    long lineno = 0;
    while (std::getline(lines, entry_line)) {
        ++lineno;
        if (entry_line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        std::istringstream es(entry_line);
        if (!(es >> value >> i >> j >> k >> l)) {
            throw ParseError("FCIDUMP: malformed record: '" + entry_line + "'");
        }
        std::string trailing;
        if (es >> trailing) throw ParseError("FCIDUMP: trailing tokens in record: '" + entry_line + "'");
        auto in_range = [n](int x) { return x >= 0 && x <= n; };
        if (!in_range(i) || !in_range(j) || !in_range(k) || !in_range(l))
            throw ParseError("FCIDUMP: orbital index out of range in record: '" + entry_line + "'");

        if (i == 0 && j == 0 && k == 0 && l == 0) {
            out.core_energy = value;
        } else if (k == 0 && l == 0) {
            if (i == 0 || j == 0) throw ParseError("FCIDUMP: bad one-electron record: '" + entry_line + "'");
            int a = i - 1, b = j - 1;
            for (auto [p, q] : {std::pair{a, b}, std::pair{b, a}}) {
                if (seen_h(p, q) != 0.0 && std::abs(out.h_spatial(p, q) - value) > conflict_tol)
                    throw ParseError("FCIDUMP: conflicting duplicate one-electron entry");
                out.h_spatial(p, q) = value;
                seen_h(p, q) = 1.0;
            }
        } else {
            if (i == 0 || j == 0 || k == 0 || l == 0)
                throw ParseError("FCIDUMP: bad two-electron record: '" + entry_line + "'");
            int a = i - 1, b = j - 1, c = k - 1, d = l - 1;
            std::vector<std::array<int, 4>> images;
            if (hdr.permsym == 8) {
                auto im = perm_images(a, b, c, d);
                images.assign(im.begin(), im.end());
            } else if (hdr.permsym == 4) {
                images = {{a, b, c, d}, {b, a, d, c}, {c, d, a, b}, {d, c, b, a}};
            } else {
                images = {{a, b, c, d}};
            }
            for (auto& t : images) {
                double& slot = out.eri_spatial(t[0], t[1], t[2], t[3]);
                double& mark = seen_v(t[0], t[1], t[2], t[3]);
                if (mark != 0.0 && std::abs(slot - value) > conflict_tol)
                    throw ParseError("FCIDUMP: conflicting duplicate two-electron entry");
                slot = value;
                mark = 1.0;
            }
        }
    }
    return out;
}

void write_fcidump(const std::string& path, const Tensor& h, const Tensor& eri,
                   double core_energy, int n_electrons, int ms2, double drop_tol) {
    const int n = static_cast<int>(h.dim(0));
    // detect the permutational symmetry actually present
    auto sym8 = [&](double tol) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < n; ++k)
                    for (int l = 0; l < n; ++l) {
                        double r = eri(i, j, k, l);
                        if (std::abs(eri(j, i, k, l) - r) > tol) return false;
                    }
        return true;
    };
    auto sym4 = [&](double tol) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < n; ++k)
                    for (int l = 0; l < n; ++l) {
                        double r = eri(i, j, k, l);
                        if (std::abs(eri(j, i, l, k) - r) > tol) return false;
                        if (std::abs(eri(k, l, i, j) - r) > tol) return false;
                    }
        return true;
    };
    int permsym = 1;
    if (sym4(1e-11)) permsym = sym8(1e-11) ? 8 : 4;

    std::ofstream out(path);
    if (!out) throw ExportError("cannot open output file: " + path);
    out << "&FCI NORB=" << n << ",NELEC=" << n_electrons << ",MS2=" << ms2 << ",\n";
    out << " ORBSYM=";
    for (int i = 0; i < n; ++i) out << "1,";
    out << "\n ISYM=1,\n";
    if (permsym != 8) out << " PERMSYM=" << permsym << ",\n";
    out << "&END\n";
    char buf[96];

    Tensor done({static_cast<std::size_t>(n), static_cast<std::size_t>(n),
                 static_cast<std::size_t>(n), static_cast<std::size_t>(n)});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k)
                for (int l = 0; l < n; ++l) {
                    if (done(i, j, k, l) != 0.0) continue;
                    double v = eri(i, j, k, l);
                    std::vector<std::array<int, 4>> images;
                    if (permsym == 8) {
                        auto im = perm_images(i, j, k, l);
                        images.assign(im.begin(), im.end());
                    } else if (permsym == 4) {
                        images = {{i, j, k, l}, {j, i, l, k}, {k, l, i, j}, {l, k, j, i}};
                    } else {
                        images = {{i, j, k, l}};
                    }
                    for (auto& t : images) done(t[0], t[1], t[2], t[3]) = 1.0;
                    if (std::abs(v) <= drop_tol) continue;
                    std::snprintf(buf, sizeof(buf), "%23.16E %3d %3d %3d %3d\n", v, i + 1,
                                  j + 1, k + 1, l + 1);
                    out << buf;
                }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            if (std::abs(h(i, j)) <= drop_tol) continue;
            std::snprintf(buf, sizeof(buf), "%23.16E %3d %3d %3d %3d\n", h(i, j), i + 1,
                          j + 1, 0, 0);
            out << buf;
        }
    std::snprintf(buf, sizeof(buf), "%23.16E %3d %3d %3d %3d\n", core_energy, 0, 0, 0, 0);
    out << buf;
}

void IntegralSet::check_invariants(double tol) const {
    const int n = n_orbitals;
    for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q)
            if (std::abs(h_spatial(p, q) - h_spatial(q, p)) > tol)
                throw DomainError("IntegralSet: h not symmetric");
    for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q)
            for (int r = 0; r < n; ++r)
                for (int s = 0; s < n; ++s) {
                    double x = eri_spatial(p, q, r, s);
                    if (std::abs(eri_spatial(q, p, r, s) - x) > tol ||
                        std::abs(eri_spatial(p, q, s, r) - x) > tol ||
                        std::abs(eri_spatial(r, s, p, q) - x) > tol)
                        throw DomainError("IntegralSet: eri lacks 8-fold symmetry");
                }
}

SpinOrbitalHamiltonian to_spin_orbitals(const IntegralSet& ints) {
    const int n = ints.n_orbitals;
    const int m = 2 * n;
    SpinOrbitalHamiltonian H;
    H.m = m;
    H.scalar = ints.core_energy;
    H.h.reshape({static_cast<std::size_t>(m), static_cast<std::size_t>(m)});
    H.v.reshape({static_cast<std::size_t>(m), static_cast<std::size_t>(m),
                 static_cast<std::size_t>(m), static_cast<std::size_t>(m)});
    for (int p = 0; p < m; ++p)
        for (int q = 0; q < m; ++q)
            if ((p & 1) == (q & 1)) H.h(p, q) = ints.h_spatial(p / 2, q / 2);

    // <pq|rs> = (pr|qs) d(sp_p,sp_r) d(sp_q,sp_s);  v = <pq|rs> - <pq|sr>
    for (int p = 0; p < m; ++p)
        for (int q = 0; q < m; ++q)
            for (int r = 0; r < m; ++r)
                for (int s = 0; s < m; ++s) {
                    double coul = ((p & 1) == (r & 1) && (q & 1) == (s & 1))
                                      ? ints.eri_spatial(p / 2, r / 2, q / 2, s / 2)
                                      : 0.0;
                    double exch = ((p & 1) == (s & 1) && (q & 1) == (r & 1))
                                      ? ints.eri_spatial(p / 2, s / 2, q / 2, r / 2)
                                      : 0.0;
                    H.v(p, q, r, s) = coul - exch;
                }
    return H;
}

void SpinOrbitalHamiltonian::check_invariants(double tol) const {
    for (int p = 0; p < m; ++p)
        for (int q = 0; q < m; ++q)
            if (std::abs(h(p, q) - h(q, p)) > tol)
                throw DomainError("SpinOrbitalHamiltonian: h not Hermitian");
    for (int p = 0; p < m; ++p)
        for (int q = 0; q < m; ++q)
            for (int r = 0; r < m; ++r)
                for (int s = 0; s < m; ++s) {
                    double x = v(p, q, r, s);
                    if (std::abs(v(q, p, r, s) + x) > tol || std::abs(v(p, q, s, r) + x) > tol)
                        throw DomainError("SpinOrbitalHamiltonian: v not antisymmetric");
                    if (std::abs(v(r, s, p, q) - x) > tol)
                        throw DomainError("SpinOrbitalHamiltonian: v not Hermitian");
                }
}

void spin_trace(const SpinOrbitalHamiltonian& H, Tensor& h_out, Tensor& eri_out, double tol) {
    const int n = H.m / 2;
    h_out.reshape({static_cast<std::size_t>(n), static_cast<std::size_t>(n)});
    eri_out.reshape({static_cast<std::size_t>(n), static_cast<std::size_t>(n),
                     static_cast<std::size_t>(n), static_cast<std::size_t>(n)});
    for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q) {
            double a = H.h(2 * p, 2 * q), b = H.h(2 * p + 1, 2 * q + 1);
            if (std::abs(a - b) > tol)
                throw ExportError("spin_trace: alpha/beta one-body blocks differ");
            h_out(p, q) = a;
        }
    // chemist (ij|kl) = <ik|jl> from the alpha-beta block (no exchange there)
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k)
                for (int l = 0; l < n; ++l) {
                    double ab = H.v(2 * i, 2 * k + 1, 2 * j, 2 * l + 1);
                    double ba = H.v(2 * i + 1, 2 * k, 2 * j + 1, 2 * l);
                    if (std::abs(ab - ba) > tol)
                        throw ExportError("spin_trace: alpha-beta / beta-alpha blocks differ");
                    eri_out(i, j, k, l) = ab;
                }
    // consistency of the same-spin block with the extracted integrals
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k)
                for (int l = 0; l < n; ++l) {
                    double expect = eri_out(i, j, k, l) - eri_out(i, l, k, j);
                    if (std::abs(H.v(2 * i, 2 * k, 2 * j, 2 * l) - expect) > tol)
                        throw ExportError("spin_trace: same-spin block inconsistent with integrals");
                }
}

SpinOrbitalHamiltonian rotate_basis(const SpinOrbitalHamiltonian& H, const Eigen::MatrixXd& C) {
    const int n = H.m / 2;
    if (C.rows() != n || C.cols() != n) throw BasisError("rotate_basis: dimension mismatch");
    Eigen::MatrixXd err = C.transpose() * C - Eigen::MatrixXd::Identity(n, n);
    if (err.cwiseAbs().maxCoeff() > 1e-10) throw BasisError("rotate_basis: C is not orthogonal");

    Tensor h_sp, eri;
    spin_trace(H, h_sp, eri, 1e-8);

    Eigen::MatrixXd hm(n, n);
    for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q) hm(p, q) = h_sp(p, q);
    hm = C.transpose() * hm * C;

    // four successive one-index transforms of (pq|rs)
    auto nn = static_cast<std::size_t>(n);
    Tensor t1({nn, nn, nn, nn}), t2({nn, nn, nn, nn});
    for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q)
            for (int r = 0; r < n; ++r)
                for (int s = 0; s < n; ++s) {
                    double acc = 0.0;
                    for (int mu = 0; mu < n; ++mu) acc += C(mu, p) * eri(mu, q, r, s);
                    t1(p, q, r, s) = acc;
                }
    for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q)
            for (int r = 0; r < n; ++r)
                for (int s = 0; s < n; ++s) {
                    double acc = 0.0;
                    for (int mu = 0; mu < n; ++mu) acc += C(mu, q) * t1(p, mu, r, s);
                    t2(p, q, r, s) = acc;
                }
    for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q)
            for (int r = 0; r < n; ++r)
                for (int s = 0; s < n; ++s) {
                    double acc = 0.0;
                    for (int mu = 0; mu < n; ++mu) acc += C(mu, r) * t2(p, q, mu, s);
                    t1(p, q, r, s) = acc;
                }
    for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q)
            for (int r = 0; r < n; ++r)
                for (int s = 0; s < n; ++s) {
                    double acc = 0.0;
                    for (int mu = 0; mu < n; ++mu) acc += C(mu, s) * t1(p, q, r, mu);
                    t2(p, q, r, s) = acc;
                }

    IntegralSet rotated;
    rotated.n_orbitals = n;
    rotated.core_energy = H.scalar;
    rotated.h_spatial.reshape({nn, nn});
    for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q) rotated.h_spatial(p, q) = hm(p, q);
    rotated.eri_spatial = t2;
    return to_spin_orbitals(rotated);
}

}  // namespace ccdf
