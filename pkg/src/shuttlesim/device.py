"""Electrostatics of the two-shuttle device.

Node ordering of the full capacitance matrix is ``[S1, S2, G1..Gg, D]`` where
``D`` is the driven electrode (electrode 0). With that ordering the charges
obey ``Q = V @ C_all``. Everything downstream (rates, forces, moment models)
consumes the :class:`DeviceConstants` produced by :func:`derive_constants`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import K_B, Q_E, T_MAT, THETA

_SYM_RTOL = 1e-10


def _arr(a, shape=None, name="value"):
    out = np.array(a, dtype=float)
    if shape is not None:
        try:
            out = out.reshape(shape)
        except ValueError:
            raise ValueError(f"{name}: expected shape {shape}, got {np.shape(a)}") from None
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name}: non-finite entries")
    return out


def _check_sym(a, name):
    if a.size == 0:
        return
    scale = max(np.max(np.abs(a)), 1e-300)
    if np.max(np.abs(a - np.swapaxes(a, -1, -2))) > _SYM_RTOL * scale:
        raise ValueError(f"{name} is not symmetric")


@dataclass(frozen=True)
class CapacitanceInput:
    """Partial-capacitance blocks (farads) and their x-derivatives (F/m).

    Derivative arrays carry a leading axis of length 2: index 0 is d/dx1,
    index 1 is d/dx2. Omitted derivatives are zero.
    """

    C_SS: np.ndarray
    c_GS: np.ndarray
    C_GG: np.ndarray
    c_S: np.ndarray
    c_G: np.ndarray
    C00: float
    dC_SS: np.ndarray | None = None
    dc_GS: np.ndarray | None = None
    dC_GG: np.ndarray | None = None
    dc_S: np.ndarray | None = None
    dc_G: np.ndarray | None = None
    dC00: np.ndarray | None = None

    def __post_init__(self):
        g = np.size(self.c_G)
        spec = {
            "C_SS": (2, 2), "c_GS": (g, 2), "C_GG": (g, g), "c_S": (2,), "c_G": (g,),
            "dC_SS": (2, 2, 2), "dc_GS": (2, g, 2), "dC_GG": (2, g, g),
            "dc_S": (2, 2), "dc_G": (2, g), "dC00": (2,),
        }
        for name, shape in spec.items():
            val = getattr(self, name)
            val = np.zeros(shape) if val is None else _arr(val, shape, name)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "C00", float(self.C00))
        for name in ("C_SS", "C_GG", "dC_SS", "dC_GG"):
            _check_sym(getattr(self, name), name)
        c_all = self.full_matrix()
        try:
            np.linalg.cholesky(c_all)
        except np.linalg.LinAlgError:
            # name the smallest offending principal block
            for name, blk in (("C_SS", self.C_SS), ("C_GG", self.C_GG)):
                if blk.size and np.min(np.linalg.eigvalsh(blk)) <= 0:
                    raise ValueError(f"{name} is not positive definite") from None
            raise ValueError("assembled C_all is not positive definite") from None

    @property
    def g(self) -> int:
        return self.c_G.size

    def full_matrix(self) -> np.ndarray:
        return _assemble(self.C_SS, self.c_GS, self.C_GG, self.c_S, self.c_G, self.C00)

    def full_derivative(self) -> np.ndarray:
        return np.stack([
            _assemble(self.dC_SS[s], self.dc_GS[s], self.dC_GG[s], self.dc_S[s], self.dc_G[s], self.dC00[s])
            for s in range(2)
        ])

    @classmethod
    def from_full(cls, c_all, dc_all=None) -> "CapacitanceInput":
        """Split an assembled ``[S1, S2, G.., D]`` matrix back into blocks."""
        c_all = np.asarray(c_all, dtype=float)
        n = c_all.shape[0]
        g = n - 3
        if dc_all is None:
            dc_all = np.zeros((2, n, n))
        dc_all = np.asarray(dc_all, dtype=float)

        def split(m):
            return dict(
                C_SS=m[..., :2, :2], c_GS=m[..., 2:2 + g, :2], C_GG=m[..., 2:2 + g, 2:2 + g],
                c_S=m[..., -1, :2], c_G=m[..., -1, 2:2 + g], C00=m[..., -1, -1],
            )

        base = split(c_all)
        der = {"d" + k: v for k, v in split(dc_all).items()}
        return cls(**base, **der)


def _assemble(C_SS, c_GS, C_GG, c_S, c_G, C00):
    g = c_G.size
    n = 3 + g
    out = np.empty((n, n))
    out[:2, :2] = C_SS
    out[2:2 + g, :2] = c_GS
    out[:2, 2:2 + g] = c_GS.T
    out[2:2 + g, 2:2 + g] = C_GG
    out[-1, :2] = c_S
    out[:2, -1] = c_S
    out[-1, 2:2 + g] = c_G
    out[2:2 + g, -1] = c_G
    out[-1, -1] = C00
    return out


@dataclass(frozen=True)
class DeviceConstants:
    T_mat: np.ndarray
    Theta: np.ndarray
    Cs_inv: np.ndarray
    B: np.ndarray  # g x 2
    Cg_inv: np.ndarray
    CGG_inv: np.ndarray
    E0: np.ndarray
    E_theta: np.ndarray  # row j = E0 @ Theta_j
    kappa: np.ndarray
    zeta: np.ndarray
    w_G: np.ndarray  # gate part of c C^-1, enters Q0
    C0: float
    F0: np.ndarray  # (2, 2, 2) indexed [s]
    FG: np.ndarray  # (2, 2, g)
    FGG: np.ndarray  # (2, g, g)
    alpha: np.ndarray  # (2, 2) row s = alpha_s
    alphaG: np.ndarray  # (2, g)
    dC0: np.ndarray  # (2,)

    @property
    def g(self) -> int:
        return self.B.shape[0]


def derive_constants(cap: CapacitanceInput) -> DeviceConstants:
    q = Q_E
    c_all = cap.full_matrix()
    dc_all = cap.full_derivative()
    C = c_all[:-1, :-1]
    c = c_all[-1, :-1]
    Cinv = np.linalg.inv(C)
    Cinv = 0.5 * (Cinv + Cinv.T)
    g = cap.g

    B = np.linalg.solve(cap.C_GG, cap.c_GS) if g else np.zeros((0, 2))
    CGG_inv = np.linalg.inv(cap.C_GG) if g else np.zeros((0, 0))
    Cs_inv = Cinv[:2, :2]
    Cg_inv = Cinv[2:, 2:]
    w = c @ Cinv
    C0 = float(cap.C00 - w @ c)
    zeta = w[:2].copy()
    kappa = np.array([-zeta[0], zeta[0] - zeta[1], zeta[1] + 1.0])

    E0 = 0.5 * q * q * np.einsum("ja,ab,jb->j", T_MAT, Cs_inv, T_MAT)
    E_theta = np.einsum("i,jia->ja", E0, THETA)

    F0 = np.empty((2, 2, 2))
    FG = np.empty((2, 2, g))
    FGG = np.empty((2, g, g))
    alpha = np.empty((2, 2))
    alphaG = np.empty((2, g))
    dC0 = np.empty(2)
    for s in range(2):
        dC = dc_all[s, :-1, :-1]
        dc = dc_all[s, -1, :-1]
        dCinv = -Cinv @ dC @ Cinv
        F0[s] = -0.5 * q * q * dCinv[:2, :2]
        FG[s] = -q * q * dCinv[:2, 2:]
        FGG[s] = -0.5 * q * q * dCinv[2:, 2:]
        dw = dc @ Cinv + c @ dCinv
        alpha[s] = -dw[:2]
        alphaG[s] = -dw[2:]
        dC0[s] = dc_all[s, -1, -1] - 2.0 * dc @ Cinv @ c - c @ dCinv @ c

    return DeviceConstants(
        T_mat=T_MAT, Theta=THETA, Cs_inv=Cs_inv, B=B, Cg_inv=Cg_inv, CGG_inv=CGG_inv,
        E0=E0, E_theta=E_theta, kappa=kappa, zeta=zeta, w_G=w[2:].copy(), C0=C0,
        F0=F0, FG=FG, FGG=FGG, alpha=alpha, alphaG=alphaG, dC0=dC0,
    )


@dataclass(frozen=True)
class ShuttleParams:
    omega_s: np.ndarray
    m_s: np.ndarray
    lambda_j: np.ndarray
    R0_j: np.ndarray
    temperature: float
    Q: float | None = None
    gamma_s: np.ndarray | None = None
    beta_j: np.ndarray = field(default_factory=lambda: np.zeros(3))
    k2: np.ndarray = field(default_factory=lambda: np.zeros(2))
    k3: np.ndarray = field(default_factory=lambda: np.zeros(2))
    n_G: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        put = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        put("omega_s", _arr(np.broadcast_to(self.omega_s, 2), (2,), "omega_s"))
        put("m_s", _arr(np.broadcast_to(self.m_s, 2), (2,), "m_s"))
        put("lambda_j", _arr(np.broadcast_to(self.lambda_j, 3), (3,), "lambda_j"))
        put("R0_j", _arr(np.broadcast_to(self.R0_j, 3), (3,), "R0_j"))
        put("beta_j", _arr(np.broadcast_to(self.beta_j, 3), (3,), "beta_j"))
        put("k2", _arr(np.broadcast_to(self.k2, 2), (2,), "k2"))
        put("k3", _arr(np.broadcast_to(self.k3, 2), (2,), "k3"))
        put("temperature", float(self.temperature))
        n_G = np.atleast_1d(np.asarray(self.n_G, dtype=float))
        if np.any(n_G != np.round(n_G)):
            raise ValueError("n_G must hold integers")
        put("n_G", n_G)
        for name in ("omega_s", "m_s", "lambda_j", "R0_j"):
            if np.any(getattr(self, name) <= 0):
                raise ValueError(f"{name} must be strictly positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be strictly positive")
        if self.gamma_s is None:
            if self.Q is None:
                raise ValueError("give either Q or gamma_s")
            if self.Q <= 0:
                raise ValueError("Q must be strictly positive")
            put("gamma_s", self.omega_s / float(self.Q))
        else:
            gam = _arr(np.broadcast_to(self.gamma_s, 2), (2,), "gamma_s")
            if np.any(gam < 0):
                raise ValueError("gamma_s must be non-negative")
            if self.Q is not None and not np.allclose(gam, self.omega_s / self.Q, rtol=1e-12):
                raise ValueError("gamma_s inconsistent with omega_s/Q")
            put("gamma_s", gam)

    @property
    def kT(self) -> float:
        return K_B * self.temperature

    def replace(self, **kw) -> "ShuttleParams":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if "gamma_s" in kw:
            d["Q"] = None
        elif d["Q"] is not None or "Q" in kw:
            d["gamma_s"] = None
        d.update(kw)
        return ShuttleParams(**d)


@dataclass(frozen=True)
class DriveWaveform:
    """V(t) = V0 sin(wt) + sum_k A_k sin(k w t + phi_k)."""

    V0: float
    omega: float
    harmonics: tuple = ()

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError("omega must be strictly positive")
        harm = []
        for h in self.harmonics:
            order, amp, phase = h
            if int(order) != order or order < 1:
                raise ValueError("harmonic order must be an integer >= 1")
            harm.append((int(order), float(amp), float(phase)))
        object.__setattr__(self, "harmonics", tuple(harm))
        object.__setattr__(self, "V0", float(self.V0))
        object.__setattr__(self, "omega", float(self.omega))

    @property
    def period(self) -> float:
        return 2.0 * np.pi / self.omega

    @property
    def half_wave_antisymmetric(self) -> bool:
        return all(o % 2 == 1 or a == 0.0 for o, a, _ in self.harmonics)

    @property
    def peak_bound(self) -> float:
        return abs(self.V0) + sum(abs(a) for _, a, _ in self.harmonics)

    def voltage(self, t):
        t = np.asarray(t, dtype=float)
        wt = self.omega * t
        v = self.V0 * np.sin(wt)
        for order, amp, phase in self.harmonics:
            v = v + amp * np.sin(order * wt + phase)
        return v

    def dvdt(self, t):
        t = np.asarray(t, dtype=float)
        wt = self.omega * t
        v = self.V0 * self.omega * np.cos(wt)
        for order, amp, phase in self.harmonics:
            v = v + amp * order * self.omega * np.cos(order * wt + phase)
        return v

    def with_harmonic(self, order, amp, phase=0.0) -> "DriveWaveform":
        return DriveWaveform(self.V0, self.omega, self.harmonics + ((order, amp, phase),))


# -- charge-dependent quantities -------------------------------------------

def gate_offset(const: DeviceConstants, params: ShuttleParams) -> np.ndarray:
    """n_G B, the shuttle electron numbers induced by the gates."""
    if const.g == 0:
        return np.zeros(2)
    if params.n_G.size != const.g:
        raise ValueError(f"n_G has {params.n_G.size} entries, device has {const.g} gates")
    return params.n_G @ const.B


def _n_G(const, params):
    if const.g == 0:
        return np.zeros(0)
    if params.n_G.size != const.g:
        raise ValueError(f"n_G has {params.n_G.size} entries, device has {const.g} gates")
    return params.n_G


def force_terms(const: DeviceConstants, params: ShuttleParams):
    """Charge-independent pieces of the force, per shuttle.

    Returns ``(fg, fgg, ag)`` with ``fg[s] = FG_s n_G``, ``fgg[s] = n_G FGG_s n_G``,
    ``ag[s] = n_G . alphaG_s``.
    """
    nG = _n_G(const, params)
    fg = np.einsum("sag,g->sa", const.FG, nG)
    fgg = np.einsum("g,sgh,h->s", nG, const.FGG, nG)
    ag = const.alphaG @ nG
    return fg, fgg, ag


def force_at_voltage(const, params, n, V, include_neutral_term=False):
    n = np.asarray(n, dtype=float)
    V = np.asarray(V, dtype=float)[..., None]
    fg, fgg, ag = force_terms(const, params)
    F = (
        np.einsum("...a,sab,...b->...s", n, const.F0, n)
        + n @ fg.T
        + fgg
        + Q_E * (n @ const.alpha.T + ag) * V
    )
    if include_neutral_term:
        F = F + 0.5 * const.dC0 * V * V
    return F


def force(const, params, n, t, drive, include_neutral_term=False):
    """Force on each shuttle (N) for electron numbers ``n`` at time ``t``."""
    return force_at_voltage(const, params, n, drive.voltage(t), include_neutral_term)


def force_slope_at_voltage(const, params, n, V):
    n = np.asarray(n, dtype=float)
    V = np.asarray(V, dtype=float)[..., None]
    fg, _, _ = force_terms(const, params)
    sym = const.F0 + np.swapaxes(const.F0, 1, 2)
    diag_idx = np.arange(2)
    lin = np.einsum("sb,...b->...s", sym[diag_idx, diag_idx, :], n)
    return lin + fg[diag_idx, diag_idx] + Q_E * const.alpha[diag_idx, diag_idx] * V


def force_slope(const, params, n, t, drive):
    """f_s = dF_s/dn_s, linear in n."""
    return force_slope_at_voltage(const, params, n, drive.voltage(t))


def perturbation(const, params, n, x, V):
    """First-order x-shift of the free-energy change, one entry per junction."""
    n = np.asarray(n, dtype=float)
    x = np.asarray(x, dtype=float)
    V = np.asarray(V, dtype=float)[..., None, None]
    fg, _, _ = force_terms(const, params)
    T = T_MAT.astype(float)
    aT = T @ const.alpha.T  # [j, s'] = T_j . alpha_s'
    F0T = np.einsum("sab,jb->jsa", const.F0, T)  # [j, s', :] = F0_s' T_j
    gT = T @ fg.T  # [j, s'] = T_j . FG_s' n_G
    per = Q_E * V * aT + np.einsum("...a,jsa->...js", n, F0T) + gT  # (..., j, s')
    return np.einsum("...js,...s->...j", per, x)


def free_energies_at_voltage(const, params, n, x, V, perturbed=True):
    """(U+, U-) for all junctions, each of shape (..., 3)."""
    n = np.asarray(n, dtype=float)
    V = np.asarray(V, dtype=float)
    dn = n - gate_offset(const, params)
    lin = dn @ const.E_theta.T
    pump = Q_E * const.kappa * V[..., None]
    u_plus = -const.E0 - lin + pump
    u_minus = -const.E0 + lin - pump
    if perturbed:
        d = perturbation(const, params, n, x, V)
        u_plus = u_plus - d
        u_minus = u_minus + d
    return u_plus, u_minus


def free_energies(const, params, n, x, t, drive, perturbed=True):
    return free_energies_at_voltage(const, params, n, x, drive.voltage(t), perturbed)


def free_energy(const, params, n, x, t, drive, j, direction, perturbed=True):
    """Free-energy change U_j^± (J). ``j`` in 1..3, ``direction`` +1 or -1."""
    if j not in (1, 2, 3):
        raise ValueError("junction index must be 1, 2 or 3")
    if direction not in (1, -1, "+", "-"):
        raise ValueError("direction must be +1 or -1")
    up, um = free_energies(const, params, n, x, t, drive, perturbed)
    sign = direction if isinstance(direction, int) else (1 if direction == "+" else -1)
    return (up if sign > 0 else um)[..., j - 1]


def stored_energy(const, Q_S, Q_G, V):
    """Electrostatic energy of the device for given island charges and drive voltage."""
    Q_S = np.asarray(Q_S, dtype=float)
    Q_G = np.asarray(Q_G, dtype=float).reshape(-1)
    r = Q_S - (Q_G @ const.B if const.g else 0.0)
    e = 0.5 * r @ const.Cs_inv @ r + 0.5 * const.C0 * V * V
    if const.g:
        e = e + 0.5 * Q_G @ const.CGG_inv @ Q_G
    return float(e)


def energy_change(const, params, n, j, direction):
    """Closed-form electrostatic energy change of one tunneling event at fixed V."""
    dn = np.asarray(n, dtype=float) - gate_offset(const, params)
    sign = 1 if direction in (1, "+") else -1
    return const.E0[j - 1] + sign * (const.E_theta[j - 1] @ dn)


def source_charge(const, Q_S, Q_G, V):
    """Charge on the driven electrode."""
    Q_S = np.asarray(Q_S, dtype=float)
    Q_G = np.asarray(Q_G, dtype=float).reshape(-1)
    q0 = Q_S @ const.zeta + const.C0 * V
    if const.g:
        q0 = q0 + Q_G @ const.w_G
    return float(q0)
