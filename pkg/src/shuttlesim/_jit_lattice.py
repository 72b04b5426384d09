"""Compiled method-of-lines kernel for the truncated marginal master equation."""
import numpy as np
from numba import njit

from ._jit_mc import T_NB, _force, _rates

NOBS = 14  # n1 n2 n1^2 n2^2 n1n2 G1 G2 G3 x1 x2 v1 v2 mass edge_mass


@njit(cache=True)
def deriv(P, x, v, V, frozen, perturbed, neutral, lo, dev, mech, dP, dxv, obs):
    """dP/dt on the lattice and the mean mechanics; fills obs with the current state's observables.

    A forward event at junction j moves probability from n to n + T_j; flux
    that would leave the lattice is dropped (the loss term stays).
    """
    (E0, Eth, kappa, nGB, q, F0T, aT, gT, pref, kT, beta, lam, F0, fg, fgg, ag, alpha, dC0) = dev
    (w2, gam, m, k2, k3, sig) = mech
    T = T_NB
    N1, N2 = P.shape
    n = np.empty(2)
    gp = np.empty(3)
    gm = np.empty(3)
    F = np.zeros(2)
    obs[:] = 0.0
    dP[:, :] = 0.0
    for i in range(N1):
        for k in range(N2):
            p = P[i, k]
            n[0] = lo[0] + i
            n[1] = lo[1] + k
            _rates(n, x, V, frozen, perturbed, E0, Eth, kappa, nGB, q, F0T, aT, gT, pref, kT, beta, lam, gp, gm)
            for j in range(3):
                dP[i, k] -= (gp[j] + gm[j]) * p
                a = i + int(T[j, 0])
                b = k + int(T[j, 1])
                if 0 <= a < N1 and 0 <= b < N2:
                    dP[a, b] += gp[j] * p
                a = i - int(T[j, 0])
                b = k - int(T[j, 1])
                if 0 <= a < N1 and 0 <= b < N2:
                    dP[a, b] += gm[j] * p
                obs[5 + j] += (gp[j] - gm[j]) * p
            if not frozen:
                for s in range(2):
                    F[s] += p * _force(s, n, V, neutral, q, F0, fg, fgg, ag, alpha, dC0)
            obs[0] += p * n[0]
            obs[1] += p * n[1]
            obs[2] += p * n[0] * n[0]
            obs[3] += p * n[1] * n[1]
            obs[4] += p * n[0] * n[1]
            obs[12] += p
            if i == 0 or k == 0 or i == N1 - 1 or k == N2 - 1:
                obs[13] += p
    for s in range(2):
        if frozen:
            dxv[s] = 0.0
            dxv[2 + s] = 0.0
        else:
            xs = x[s]
            dxv[s] = v[s]
            dxv[2 + s] = -gam[s] * v[s] - xs * (w2[s] + xs * (k2[s] + k3[s] * xs)) + F[s] / m[s]
        obs[8 + s] = x[s]
        obs[10 + s] = v[s]


@njit(cache=True)
def steps(P, xv, Vh, h, nsteps, frozen, perturbed, neutral, lo, dev, mech, obs, snap_at, snaps):
    """RK4 over nsteps; obs[k] holds the observables at step k (0..nsteps).

    P and xv are advanced in place. ``snap_at`` lists step indices whose P is
    copied into ``snaps`` (in order).
    """
    N1, N2 = P.shape
    k1 = np.empty((N1, N2))
    k2 = np.empty((N1, N2))
    k3 = np.empty((N1, N2))
    k4 = np.empty((N1, N2))
    m1 = np.empty(4)
    m2 = np.empty(4)
    m3 = np.empty(4)
    m4 = np.empty(4)
    Pt = np.empty((N1, N2))
    xt = np.empty(4)
    junk = np.empty(obs.shape[1])
    isnap = 0
    for st in range(nsteps + 1):
        if isnap < snap_at.shape[0] and snap_at[isnap] == st:
            snaps[isnap] = P
            isnap += 1
        deriv(P, xv[:2], xv[2:], Vh[2 * st], frozen, perturbed, neutral, lo, dev, mech, k1, m1, obs[st])
        if st == nsteps:
            break
        Pt[:, :] = P + 0.5 * h * k1
        xt[:] = xv + 0.5 * h * m1
        deriv(Pt, xt[:2], xt[2:], Vh[2 * st + 1], frozen, perturbed, neutral, lo, dev, mech, k2, m2, junk)
        Pt[:, :] = P + 0.5 * h * k2
        xt[:] = xv + 0.5 * h * m2
        deriv(Pt, xt[:2], xt[2:], Vh[2 * st + 1], frozen, perturbed, neutral, lo, dev, mech, k3, m3, junk)
        Pt[:, :] = P + h * k3
        xt[:] = xv + h * m3
        deriv(Pt, xt[:2], xt[2:], Vh[2 * st + 2], frozen, perturbed, neutral, lo, dev, mech, k4, m4, junk)
        P += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        xv += (h / 6.0) * (m1 + 2.0 * m2 + 2.0 * m3 + m4)
