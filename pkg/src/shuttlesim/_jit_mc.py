"""Compiled sample loop for the ensemble Monte Carlo."""
import numpy as np
from numba import njit

NQ = 22  # per-step quantities accumulated in every phase bin
T_NB = np.array([[1.0, 0.0], [-1.0, 1.0], [0.0, -1.0]])


@njit(cache=True, inline="always")
def _phi(U, kT):
    u = U / kT
    if abs(u) < 1e-3:
        return kT * (1.0 + u / 2.0 + u * u / 12.0 - u ** 4 / 720.0)
    # U / (1 - e^-u) is cancellation-free on both sides; expm1 -> inf gives +0
    return U / -np.expm1(-u)


@njit(cache=True, inline="always")
def _rates(n, x, V, frozen, perturbed, E0, Eth, kappa, nGB, q, F0T, aT, gT, pref, kT, beta, lam,
           gp, gm):
    """Forward/backward rates of the three junctions into gp, gm."""
    T = T_NB
    dn0 = n[0] - nGB[0]
    dn1 = n[1] - nGB[1]
    for j in range(3):
        lin = Eth[j, 0] * dn0 + Eth[j, 1] * dn1
        pump = q * kappa[j] * V
        d = 0.0
        if perturbed and not frozen:
            for s in range(2):
                d += x[s] * (q * V * aT[j, s] + n[0] * F0T[j, s, 0] + n[1] * F0T[j, s, 1] + gT[j, s])
        up = -E0[j] - lin + pump - d
        um = -E0[j] + lin - pump + d
        a = _phi(up, kT) * pref[j]
        b = _phi(um, kT) * pref[j]
        if beta[j] != 0.0:
            a *= 1.0 + beta[j] * up * up
            b *= 1.0 + beta[j] * um * um
        if not frozen:
            K = np.exp(-(x[0] * T[j, 0] + x[1] * T[j, 1]) / lam[j])
            a *= K
            b *= K
        gp[j] = a
        gm[j] = b


@njit(cache=True, inline="always")
def _force(s, n, V, neutral, q, F0, fg, fgg, ag, alpha, dC0):
    F = (n[0] * (F0[s, 0, 0] * n[0] + F0[s, 0, 1] * n[1]) + n[1] * (F0[s, 1, 0] * n[0] + F0[s, 1, 1] * n[1])
         + fg[s, 0] * n[0] + fg[s, 1] * n[1] + fgg[s] + q * (alpha[s, 0] * n[0] + alpha[s, 1] * n[1] + ag[s]) * V)
    if neutral:
        F += 0.5 * dC0[s] * V * V
    return F


@njit(cache=True, inline="always")
def _apply(rng, n, x, v, V, dt, frozen, thermal, neutral, q, F0, fg, fgg, ag, alpha, dC0,
           w2, gam, m, k2, k3, sig, gp, gm, mu):
    """Draw one Bernoulli event per junction from the rates in gp/gm, then move the shuttles.

    The caller checks the event budget first (an early return in here costs
    more than the whole step).
    """
    for j in range(3):
        u = rng.random()
        if u < gp[j] * dt:
            mu[j] = 1
        elif u < (gp[j] + gm[j]) * dt:
            mu[j] = -1
        else:
            mu[j] = 0
    n[0] += mu[0] - mu[1]
    n[1] += mu[1] - mu[2]
    if not frozen:
        for s in range(2):
            F = _force(s, n, V, neutral, q, F0, fg, fgg, ag, alpha, dC0)
            xs = x[s]
            rest = -xs * (w2[s] + xs * (k2[s] + k3[s] * xs)) + F / m[s]
            vn = (v[s] + dt * rest) / (1.0 + gam[s] * dt)
            if thermal:
                vn += sig[s] * rng.standard_normal()
            v[s] = vn
            x[s] += dt * vn


@njit(cache=True, inline="always")
def _periods(rng, n, x, v, a, cc, Vk, nb, spb, n_burn, total, dt, budget, frozen, perturbed, thermal, neutral,
             dev, mech, hist_lo, hist, overflow, events, status, gp, gm, mu):
    """All periods of one sample; False on abort (status filled)."""
    # unpack once: pulling arrays out of the tuples inside the step loop is costly
    (E0, Eth, kappa, nGB, q, F0T, aT, gT, pref, kT, beta, lam, F0, fg, fgg, ag, alpha, dC0) = dev
    (w2, gam, m, k2, k3, sig) = mech
    S = nb * spb
    W = hist.shape[1]
    ok = True
    for p in range(total):
        meas = p >= n_burn
        for i in range(S):
            V = Vk[i]
            b = i // spb
            _rates(n, x, V, frozen, perturbed, E0, Eth, kappa, nGB, q, F0T, aT, gT, pref, kT, beta, lam, gp, gm)
            if meas:
                # statistics of the state at the start of the step
                ab = a[b]
                ab[0] += n[0]
                ab[1] += n[1]
                ab[2] += x[0]
                ab[3] += x[1]
                ab[4] += v[0]
                ab[5] += v[1]
                ab[6] += n[0] * n[0]
                ab[7] += n[1] * n[1]
                ab[8] += n[0] * n[1]
                ab[9] += x[0] * x[0]
                ab[10] += x[1] * x[1]
                ab[11] += v[0] * v[0]
                ab[12] += v[1] * v[1]
                ab[13] += x[0] * v[0]
                ab[14] += x[1] * v[1]
                ab[15] += x[0] * n[0]
                ab[16] += x[1] * n[1]
                ab[17] += v[0] * n[0]
                ab[18] += v[1] * n[1]
                for j in range(3):
                    ab[19 + j] += gp[j] - gm[j]
                if i % spb == 0:
                    if p == total - 1:
                        i1 = int(n[0]) - hist_lo[0]
                        i2 = int(n[1]) - hist_lo[1]
                        if 0 <= i1 < W and 0 <= i2 < W:
                            hist[b, i1, i2] += 1
                        else:
                            overflow[b] += 1
                    if p >= total - 2:
                        base = ((p - (total - 2)) * nb + b) * 2
                        cc[base] = n[0]
                        cc[base + 1] = n[1]
            tot = (gp[0] + gm[0] + gp[1] + gm[1] + gp[2] + gm[2]) * dt
            if tot > budget:
                status[0] = 1.0
                status[1] = (p * S + i) * dt
                status[2] = tot / dt
                ok = False
                break
            # same as _apply, written out: the call costs ~2x the whole step here
            for j in range(3):
                u = rng.random()
                if u < gp[j] * dt:
                    mu[j] = 1
                elif u < (gp[j] + gm[j]) * dt:
                    mu[j] = -1
                else:
                    mu[j] = 0
            n[0] += mu[0] - mu[1]
            n[1] += mu[1] - mu[2]
            if not frozen:
                for s in range(2):
                    F = _force(s, n, V, neutral, q, F0, fg, fgg, ag, alpha, dC0)
                    xs = x[s]
                    rest = -xs * (w2[s] + xs * (k2[s] + k3[s] * xs)) + F / m[s]
                    vn = (v[s] + dt * rest) / (1.0 + gam[s] * dt)
                    if thermal:
                        vn += sig[s] * rng.standard_normal()
                    v[s] = vn
                    x[s] += dt * vn
            if meas:
                for j in range(3):
                    if mu[j] == 1:
                        events[j, 0] += 1
                    elif mu[j] == -1:
                        events[j, 1] += 1
        if not ok:
            break
        if not (np.isfinite(x[0]) and np.isfinite(x[1]) and np.isfinite(v[0]) and np.isfinite(v[1])):
            status[0] = 2.0
            status[1] = (p + 1) * S * dt
            ok = False
            break
    return ok


@njit(cache=True, nogil=True)
def run_chunk(rng, nsamp, n0, Vk, nb, spb, n_burn, n_meas, dt, budget, frozen, perturbed, thermal, neutral,
              dev, mech, hist_lo, acc1, acc2, r1, r2, c1, c2, hist, overflow, events, status):
    """Simulate ``nsamp`` samples and add their statistics to the accumulators.

    Vk holds V at the step times of one period (nb*spb steps). Per sample the
    phase-bin averages a[b, :] (over the measure periods) feed acc1/acc2, the
    bin-averaged net rates feed r1/r2, and the n snapshots at bin starts of the
    last two periods feed c1/c2. ``status`` = (code, t, rate sum); code 1 means
    the event budget was exceeded, 2 a non-finite state.
    """
    total = n_burn + n_meas
    nc = c1.shape[0]
    n = np.empty(2)
    x = np.empty(2)
    v = np.empty(2)
    gp = np.empty(3)
    gm = np.empty(3)
    mu = np.zeros(3, dtype=np.int64)
    a = np.empty((nb, NQ))
    cc = np.empty(nc)
    rr = np.empty(nb * 3)
    norm = 1.0 / (spb * n_meas)
    for smp in range(nsamp):
        n[0] = n0[0]
        n[1] = n0[1]
        for s in range(2):
            x[s] = 0.0
            v[s] = 0.0
        a[:, :] = 0.0
        cc[:] = 0.0
        # literal flags let the compiler fold the mode branches out of the step loop
        if frozen:
            ok = _periods(rng, n, x, v, a, cc, Vk, nb, spb, n_burn, total, dt, budget, True, False, thermal,
                          neutral, dev, mech, hist_lo, hist, overflow, events, status, gp, gm, mu)
        elif perturbed:
            ok = _periods(rng, n, x, v, a, cc, Vk, nb, spb, n_burn, total, dt, budget, False, True, thermal,
                          neutral, dev, mech, hist_lo, hist, overflow, events, status, gp, gm, mu)
        else:
            ok = _periods(rng, n, x, v, a, cc, Vk, nb, spb, n_burn, total, dt, budget, False, False, thermal,
                          neutral, dev, mech, hist_lo, hist, overflow, events, status, gp, gm, mu)
        if not ok:
            return
        for b in range(nb):
            for k in range(NQ):
                a[b, k] *= norm
            for k in range(NQ):
                acc1[b, k] += a[b, k]
                ak = a[b, k]
                for l in range(NQ):
                    acc2[b, k, l] += ak * a[b, l]
            for j in range(3):
                rr[b * 3 + j] = a[b, 19 + j]
        for k in range(nb * 3):
            r1[k] += rr[k]
            rk = rr[k]
            for l in range(nb * 3):
                r2[k, l] += rk * rr[l]
        for k in range(nc):
            c1[k] += cc[k]
            ck = cc[k]
            for l in range(nc):
                c2[k, l] += ck * cc[l]


@njit(cache=True)
def trace(rng, n0, Vk, nsteps, dt, budget, frozen, perturbed, thermal, neutral, dev, mech,
          ns, xs, vs, mus, status):
    """Single sample, every step recorded (n, x, v after the step; events of the step)."""
    (E0, Eth, kappa, nGB, q, F0T, aT, gT, pref, kT, beta, lam, F0, fg, fgg, ag, alpha, dC0) = dev
    (w2, gam, m, k2, k3, sig) = mech
    S = Vk.shape[0]
    n = n0.copy()
    x = np.zeros(2)
    v = np.zeros(2)
    gp = np.empty(3)
    gm = np.empty(3)
    mu = np.zeros(3, dtype=np.int64)
    for k in range(nsteps):
        V = Vk[k % S]
        _rates(n, x, V, frozen, perturbed, E0, Eth, kappa, nGB, q, F0T, aT, gT, pref, kT, beta, lam, gp, gm)
        tot = (gp[0] + gm[0] + gp[1] + gm[1] + gp[2] + gm[2]) * dt
        if tot > budget:
            status[0] = 1.0
            status[1] = k * dt
            status[2] = tot / dt
            return
        _apply(rng, n, x, v, V, dt, frozen, thermal, neutral, q, F0, fg, fgg, ag, alpha, dC0,
               w2, gam, m, k2, k3, sig, gp, gm, mu)
        ns[k] = n
        xs[k] = x
        vs[k] = v
        mus[k] = mu
