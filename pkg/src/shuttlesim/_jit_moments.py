"""Compiled right-hand sides of the moment tiers.

Mirrors :mod:`shuttlesim.moments` (the numpy path is the reference used in
tests); this version exists only for speed inside the fixed-step integrator.
"""
import numpy as np
from numba import njit

from .tunneling import SERIES_SWITCH, _DERIV_SWITCH, _bose_polys, _series_matrix


def kernel_tables(order):
    """Series matrix and Bose polynomials padded into dense arrays."""
    S = _series_matrix(order)
    polys = _bose_polys(order)
    width = max(len(p) for p in polys)
    Pm = np.zeros((order + 1, width))
    for l, p in enumerate(polys):
        Pm[l, : len(p)] = p
    return S, Pm


@njit(cache=True)
def phi_scalar(U, kT):
    u = U / kT
    if abs(u) < SERIES_SWITCH:
        return kT * (1.0 + u / 2.0 + u * u / 12.0 - u ** 4 / 720.0)
    if u > 0:
        return U / -np.expm1(-u)
    return -U * np.exp(u) / -np.expm1(u)


@njit(cache=True)
def _polyval(c, x):
    acc = 0.0
    for i in range(c.shape[0] - 1, -1, -1):
        acc = acc * x + c[i]
    return acc


@njit(cache=True)
def kernel_derivs(U, kT, beta, order, S, Pm, out):
    """out[l] = d^l/dU^l [Phi(U)(1 + beta U^2)], l = 0..order."""
    u = U / kT
    psi = np.empty(order + 1)
    if abs(u) < _DERIV_SWITCH:
        for l in range(order + 1):
            psi[l] = _polyval(S[l], u)
    else:
        um = -abs(u)
        p = np.exp(um) / np.expm1(um)
        prev = _polyval(Pm[0], p)
        psi[0] = um * prev
        for l in range(1, order + 1):
            cur = _polyval(Pm[l], p)
            psi[l] = um * cur + l * prev
            prev = cur
        if u > 0:
            for l in range(order + 1):
                if l % 2 == 1:
                    psi[l] = -psi[l]
            psi[0] += u
            psi[1] += 1.0
    scale = kT
    y = np.empty(order + 1)
    for l in range(order + 1):
        y[l] = psi[l] * scale
        scale /= kT
    y[0] = phi_scalar(U, kT)
    if beta != 0.0:
        for l in range(order + 1):
            v = y[l] * (1.0 + beta * U * U)
            if l >= 1:
                v += 2.0 * l * beta * U * y[l - 1]
            if l >= 2:
                v += l * (l - 1) * beta * y[l - 2]
            out[l] = v
    else:
        for l in range(order + 1):
            out[l] = y[l]


@njit(cache=True)
def moment_table_nb(order, D11, D22, D12, idx, coef, pw, M):
    for i in range(M.shape[0]):
        for k in range(M.shape[1]):
            M[i, k] = 0.0
    w = order + 1
    for r in range(idx.shape[0]):
        val = coef[r] * D11 ** pw[r, 0] * D22 ** pw[r, 1] * D12 ** pw[r, 2]
        M[idx[r] // w, idx[r] % w] += val


@njit(cache=True)
def rate_moments_nb(n, x, V, D11, D22, D12, order, perturbed, E0, Eth, kappa, nGB, q, F0T, aT, gT,
                    R0, kT, beta, S, Pm, midx, mcoef, mpw, l1s, l2s, inv,
                    mean, cov, grad):
    """Fill mean[2,3], cov[2,3,2], grad[2,3,2] (no position factor)."""
    M = np.empty((order + 2, order + 2))
    moment_table_nb(order + 1, D11, D22, D12, midx, mcoef, mpw, M)
    y = np.empty(order + 2)
    dn0 = n[0] - nGB[0]
    dn1 = n[1] - nGB[1]
    for j in range(3):
        lin = Eth[j, 0] * dn0 + Eth[j, 1] * dn1
        e0 = Eth[j, 0]
        e1 = Eth[j, 1]
        delta = 0.0
        if perturbed:
            for s in range(2):
                delta += x[s] * (q * V * aT[j, s] + n[0] * F0T[j, s, 0] + n[1] * F0T[j, s, 1] + gT[j, s])
                e0 += F0T[j, s, 0] * x[s]
                e1 += F0T[j, s, 1] * x[s]
        pref = 1.0 / (q * q * R0[j])
        for d in range(2):
            sgn = -1.0 if d == 0 else 1.0
            U = -E0[j] + sgn * lin - sgn * q * kappa[j] * V + sgn * delta
            kernel_derivs(U, kT, beta[j], order + 1, S, Pm, y)
            g0 = sgn * e0
            g1 = sgn * e1
            m0 = 0.0
            c1 = 0.0
            c2 = 0.0
            gr = 0.0
            for p in range(l1s.shape[0]):
                a = l1s[p]
                b = l2s[p]
                cf = g0 ** a * g1 ** b * inv[p]
                cy = cf * y[a + b]
                m0 += cy * M[a, b]
                c1 += cy * M[a + 1, b]
                c2 += cy * M[a, b + 1]
                gr += cf * y[a + b + 1] * M[a, b]
            mean[d, j] = pref * m0
            cov[d, j, 0] = pref * c1
            cov[d, j, 1] = pref * c2
            grad[d, j, 0] = pref * gr * g0
            grad[d, j, 1] = pref * gr * g1


T_NB = np.array([[1.0, 0.0], [-1.0, 1.0], [0.0, -1.0]])


@njit(cache=True)
def moments_rhs_nb(y, V, full, order, perturbed, neutral, E0, Eth, kappa, nGB, q, F0T, aT, gT,
                   R0, kT, beta, lam, F0, fg, fgg, ag, alpha, dC0, w2, gam, m, k2, k3,
                   S, Pm, midx, mcoef, mpw, l1s, l2s, inv, out, rates_out):
    T = T_NB
    n = y[0:2]
    x = y[2:4]
    v = y[4:6]
    D11 = y[6]
    D22 = y[7]
    D12 = y[8]
    mean = np.empty((2, 3))
    cov = np.empty((2, 3, 2))
    grad = np.empty((2, 3, 2))
    rate_moments_nb(n, x, V, D11, D22, D12, order, perturbed, E0, Eth, kappa, nGB, q, F0T, aT, gT,
                    R0, kT, beta, S, Pm, midx, mcoef, mpw, l1s, l2s, inv, mean, cov, grad)
    Lam0 = y[9] if full else 0.0
    Lam1 = y[10] if full else 0.0
    X0 = y[15] if full else 0.0
    X1 = y[16] if full else 0.0
    K = np.empty(3)
    G = np.empty(3)
    Gs = np.empty(3)
    cv = np.empty((3, 2))
    g = np.empty((3, 2))
    for j in range(3):
        K[j] = np.exp(-(x[0] * T[j, 0] + x[1] * T[j, 1]) / lam[j])
        net = mean[0, j] - mean[1, j]
        star = mean[0, j] + mean[1, j]
        for s in range(2):
            g[j, s] = grad[0, j, s] - grad[1, j, s]
        if full:
            K[j] *= np.exp((T[j, 0] ** 2 * Lam0 + T[j, 1] ** 2 * Lam1) / (2.0 * lam[j] * lam[j]))
            tx0 = T[j, 0] * X0 / lam[j]
            tx1 = T[j, 1] * X1 / lam[j]
            G[j] = net - g[j, 0] * tx0 - g[j, 1] * tx1
            gs0 = grad[0, j, 0] + grad[1, j, 0]
            gs1 = grad[0, j, 1] + grad[1, j, 1]
            Gs[j] = star - gs0 * tx0 - gs1 * tx1
            cv[j, 0] = K[j] * (cov[0, j, 0] - cov[1, j, 0]) - K[j] * net * tx0
            cv[j, 1] = K[j] * (cov[0, j, 1] - cov[1, j, 1]) - K[j] * net * tx1
        else:
            G[j] = net
            Gs[j] = star
            cv[j, 0] = K[j] * (cov[0, j, 0] - cov[1, j, 0])
            cv[j, 1] = K[j] * (cov[0, j, 1] - cov[1, j, 1])
        rates_out[j] = K[j] * G[j]
    for i in range(out.shape[0]):
        out[i] = 0.0
    for s in range(2):
        acc = 0.0
        for j in range(3):
            acc += T[j, s] * K[j] * G[j]
        out[s] = acc
    d11 = 0.0
    d22 = 0.0
    d12 = 0.0
    for j in range(3):
        ks = K[j] * Gs[j]
        d11 += 2.0 * T[j, 0] * cv[j, 0] + T[j, 0] ** 2 * ks
        d22 += 2.0 * T[j, 1] * cv[j, 1] + T[j, 1] ** 2 * ks
        d12 += T[j, 0] * cv[j, 1] + T[j, 1] * cv[j, 0] + T[j, 0] * T[j, 1] * ks
    out[6] = d11
    out[7] = d22
    out[8] = d12
    for s in range(2):
        # exact Gaussian mean of the quadratic force
        F = (n[0] * (F0[s, 0, 0] * n[0] + F0[s, 0, 1] * n[1]) + n[1] * (F0[s, 1, 0] * n[0] + F0[s, 1, 1] * n[1])
             + F0[s, 0, 0] * D11 + F0[s, 1, 1] * D22 + (F0[s, 0, 1] + F0[s, 1, 0]) * D12
             + fg[s, 0] * n[0] + fg[s, 1] * n[1] + fgg[s] + q * (alpha[s, 0] * n[0] + alpha[s, 1] * n[1] + ag[s]) * V)
        if neutral:
            F += 0.5 * dC0[s] * V * V
        Ls = y[9 + s] if full else 0.0
        out[2 + s] = v[s]
        out[4 + s] = (-gam[s] * v[s] - w2[s] * x[s] - k2[s] * (x[s] * x[s] + Ls)
                      - k3[s] * (x[s] ** 3 + 3.0 * x[s] * Ls) + F / m[s])
    if not full:
        return
    for s in range(2):
        Ls = y[9 + s]
        Ws = y[11 + s]
        Ss = y[13 + s]
        Xs = y[15 + s]
        Ys = y[17 + s]
        o = 1 - s
        sym_ss = 2.0 * F0[s, s, s]
        sym_so = F0[s, s, o] + F0[s, o, s]
        f = sym_ss * n[s] + sym_so * n[o] + fg[s, s] + q * V * alpha[s, s]
        grad_s = sym_ss * n[s] + sym_so * n[o] + fg[s, s] + q * V * alpha[s, s]
        grad_o = (F0[s, o, o] * 2.0) * n[o] + sym_so * n[s] + fg[s, o] + q * V * alpha[s, o]
        Dss = D11 if s == 0 else D22
        covF = Dss * grad_s + D12 * grad_o
        w2e = w2[s] + 2.0 * k2[s] * x[s] + 3.0 * k3[s] * (x[s] * x[s] + Ls)
        out[9 + s] = 2.0 * Ss
        out[11 + s] = 2.0 * (-gam[s] * Ws - w2e * Ss + Ys * f / m[s])
        out[13 + s] = Ws - gam[s] * Ss - w2e * Ls + Xs * f / m[s]
        ax = 0.0
        ay = 0.0
        for j in range(3):
            tk = T[j, s] * K[j]
            tg = T[j, s] * G[j] / lam[j]
            ax += tk * (g[j, s] * Xs - tg * Ls)
            ay += tk * (g[j, s] * Ys - tg * Ss)
        out[15 + s] = ax + Ys
        out[17 + s] = ay - gam[s] * Ys - w2e * Xs + covF / m[s]


@njit(cache=True)
def circuit_rhs_nb(y, V, neutral, Eth, kappa, nGB, q, R0, lam, F0, fg, fgg, ag, alpha, dC0, w2, gam, m, k2, k3,
                   out, rates_out):
    T = T_NB
    n = y[0:2]
    x = y[2:4]
    v = y[4:6]
    for i in range(out.shape[0]):
        out[i] = 0.0
    dn0 = n[0] - nGB[0]
    dn1 = n[1] - nGB[1]
    for j in range(3):
        U = q * kappa[j] * V - (Eth[j, 0] * dn0 + Eth[j, 1] * dn1)
        K = np.exp(-(x[0] * T[j, 0] + x[1] * T[j, 1]) / lam[j])
        rates_out[j] = K * U / (q * q * R0[j])
    for s in range(2):
        out[s] = T[0, s] * rates_out[0] + T[1, s] * rates_out[1] + T[2, s] * rates_out[2]
        F = (n[0] * (F0[s, 0, 0] * n[0] + F0[s, 0, 1] * n[1]) + n[1] * (F0[s, 1, 0] * n[0] + F0[s, 1, 1] * n[1])
             + fg[s, 0] * n[0] + fg[s, 1] * n[1] + fgg[s] + q * (alpha[s, 0] * n[0] + alpha[s, 1] * n[1] + ag[s]) * V)
        if neutral:
            F += 0.5 * dC0[s] * V * V
        out[2 + s] = v[s]
        out[4 + s] = -gam[s] * v[s] - w2[s] * x[s] - k2[s] * x[s] ** 2 - k3[s] * x[s] ** 3 + F / m[s]


@njit(cache=True)
def _rhs(tier, y, V, prm, out, rates_out):
    (order, perturbed, neutral, E0, Eth, kappa, nGB, q, F0T, aT, gT, R0, kT, beta, lam, F0, fg, fgg, ag,
     alpha, dC0, w2, gam, m, k2, k3, S, Pm, midx, mcoef, mpw, l1s, l2s, inv) = prm
    if tier == 0:
        circuit_rhs_nb(y, V, neutral, Eth, kappa, nGB, q, R0, lam, F0, fg, fgg, ag, alpha, dC0, w2, gam, m,
                       k2, k3, out, rates_out)
    else:
        moments_rhs_nb(y, V, tier == 2, order, perturbed, neutral, E0, Eth, kappa, nGB, q, F0T, aT, gT,
                       R0, kT, beta, lam, F0, fg, fgg, ag, alpha, dC0, w2, gam, m, k2, k3,
                       S, Pm, midx, mcoef, mpw, l1s, l2s, inv, out, rates_out)


@njit(cache=True)
def rhs_nb(tier, y, V, prm):
    out = np.empty(y.shape[0])
    r = np.empty(3)
    _rhs(tier, y, V, prm, out, r)
    return out, r


@njit(cache=True)
def integrate_nb(tier, method, y0, Vh, h, nsteps, prm, ys, rates):
    """Fixed-step integration; Vh holds V on the half-step grid (2*nsteps+1 points).

    ys[k] is the state after k steps; rates[:, k] the <Gamma_j> at that state.
    """
    dim = y0.shape[0]
    y = y0.copy()
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    tmp = np.empty(dim)
    r = np.empty(3)
    ys[0] = y
    for k in range(nsteps):
        _rhs(tier, y, Vh[2 * k], prm, k1, r)
        rates[:, k] = r
        if method == 0:
            for i in range(dim):
                y[i] += h * k1[i]
        elif method == 1:
            for i in range(dim):
                tmp[i] = y[i] + h * k1[i]
            _rhs(tier, tmp, Vh[2 * k + 2], prm, k2, r)
            for i in range(dim):
                y[i] += 0.5 * h * (k1[i] + k2[i])
        else:
            for i in range(dim):
                tmp[i] = y[i] + 0.5 * h * k1[i]
            _rhs(tier, tmp, Vh[2 * k + 1], prm, k2, r)
            for i in range(dim):
                tmp[i] = y[i] + 0.5 * h * k2[i]
            _rhs(tier, tmp, Vh[2 * k + 1], prm, k3, r)
            for i in range(dim):
                tmp[i] = y[i] + h * k3[i]
            _rhs(tier, tmp, Vh[2 * k + 2], prm, k4, r)
            for i in range(dim):
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        ys[k + 1] = y
    _rhs(tier, y, Vh[2 * nsteps], prm, k1, r)
    rates[:, nsteps] = r
