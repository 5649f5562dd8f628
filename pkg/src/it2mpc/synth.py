"""Online LMI synthesis of fuzzy state-feedback gains for the delayed IT2 plant.

Decision variables per step: Y_l (one per rule), a common M, H_i (one per
controller rule), Z and the scalar cost bound zeta. Gains are K_i = H_i M^-1
and the terminal ellipsoids are P_l = zeta * Y_l^-1.

Two vertex sets are supported:

``vertex``
    the decrease LMI is imposed for every (plant rule l, controller rule i,
    successor rule t), so the certificate holds for any membership weights.
``online``
    the plant matrices and the current-step Y are blended with the firing
    strengths at x(k), which are known when the step is solved; the LMI is
    imposed for every (controller rule i, successor rule t).

The cost rows of the decrease LMI are posed as [Q^1/2 M, -zeta I] and
[R^1/2 H, -zeta I]. This is congruent to the [Q M, -zeta Q], [R H, -zeta R]
layout through diag(I, I, I, Q^-1/2, R^-1/2) and keeps the blocks well scaled
when Q and R are tiny.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import sqrtm

from . import lmi
from .it2 import blend, blend_gains, controller_strengths, firing_strengths
from .lmi import NEGATIVE_DEFINITE, POSITIVE_SEMIDEFINITE, Infeasible, NoCertificate
from .matkernel import BlockSpec, StructureError, as_matrix, invert, min_eig, sym

log = logging.getLogger(__name__)

MODES = ("vertex", "online")
CERT_TOL = 1e-7


@dataclass
class SynthConfig:
    Q: np.ndarray
    R: np.ndarray
    u_max: np.ndarray
    rho: float = 0.8
    rho_d: float = 0.2
    h: int = 10
    j: int = 10
    mode: str = "online"
    eps_strict: float = lmi.STRICT_EPS

    def __post_init__(self):
        self.Q = sym(self.Q)
        self.R = sym(self.R)
        self.u_max = np.atleast_1d(np.asarray(self.u_max, dtype=float))
        if not (0 < self.rho < 1 and 0 < self.rho_d < 1):
            raise ValueError("rho and rho_d must lie in (0, 1)")
        if abs(self.rho + self.rho_d - 1.0) > 1e-12:
            raise ValueError(f"rho + rho_d must equal 1, got {self.rho + self.rho_d:g}")
        if min_eig(self.Q) < -1e-14:
            raise ValueError("Q must be positive semidefinite")
        if min_eig(self.R) <= 0:
            raise ValueError("R must be positive definite")
        if self.R.shape[0] != len(self.u_max) or np.any(self.u_max <= 0):
            raise ValueError("u_max needs one positive bound per input")
        if int(self.h) < 1 or int(self.j) < 1:
            raise ValueError("delay bounds must be positive integers")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @property
    def Q_half(self):
        return np.real(sqrtm(self.Q))

    @property
    def R_half(self):
        return np.real(sqrtm(self.R))


@dataclass
class HistoryWindow:
    """x(k-h), ..., x(k) (oldest first) and u(k-j), ..., u(k-1)."""
    states: list
    inputs: list

    @classmethod
    def constant(cls, x0, h, j, w):
        x0 = np.asarray(x0, dtype=float).ravel()
        return cls([x0.copy() for _ in range(h + 1)], [np.zeros(w) for _ in range(j)])

    @property
    def current(self):
        return self.states[-1]

    def check(self, h, j):
        if len(self.states) != h + 1 or len(self.inputs) != j:
            raise StructureError(
                f"history has {len(self.states)} states / {len(self.inputs)} inputs, "
                f"expected {h + 1} / {j}")


@dataclass
class SynthesisSolution:
    Y: list
    M: np.ndarray
    H: list
    Z: np.ndarray
    zeta: float
    gains: list
    mode: str
    weights: np.ndarray = None  # plant weights frozen into an online step
    iterations: int = 0
    margin: float = np.nan
    report: object = field(default=None, repr=False)

    def P(self, l):
        return self.zeta * invert(self.Y[l])

    def P_blend(self, w):
        return sum(wl * self.P(l) for l, wl in enumerate(w))


def vertices(r, mode):
    """Index tuples (l, i, t); l is None when the plant is blended online."""
    if mode == "vertex":
        return [(l, i, t) for l in range(r) for i in range(r) for t in range(r)]
    return [(None, i, t) for i in range(r) for t in range(r)]


def decrease_blocks(cfg, a, ad, b, bd, y_cur, y_next, m, hi, zeta, qh=None, rh=None):
    """Block layout of the decrease LMI. Arguments may be arrays or affine expressions."""
    n, w = a.shape[0], b.shape[1]
    qh = cfg.Q_half if qh is None else qh
    rh = cfg.R_half if rh is None else rh
    lam = y_cur - m - m.T
    chi = a @ m + b @ hi
    chi_d = ad @ m + bd @ hi
    spec = BlockSpec([n, n, n, n, w])
    spec[0, 0] = cfg.rho * lam
    spec[0, 2] = chi.T
    spec[0, 3] = (qh @ m).T
    spec[0, 4] = (rh @ hi).T
    spec[1, 1] = cfg.rho_d * lam
    spec[1, 2] = chi_d.T
    spec[2, 2] = -y_next
    spec[3, 3] = zeta * -np.eye(n)
    spec[4, 4] = zeta * -np.eye(w)
    return spec


def build_step_lmis(plant, cfg, hist, weights=None):
    hist.check(cfg.h, cfg.j)
    r, n, w = plant.r, plant.n, plant.w
    if cfg.Q.shape != (n, n) or cfg.R.shape != (w, w):
        raise StructureError("Q/R dimensions do not match the plant")
    p = lmi.LmiProblem()
    Y = [p.symmetric(f"Y{l + 1}", n) for l in range(r)]
    M = p.general("M", n, n)
    H = [p.general(f"H{i + 1}", w, n) for i in range(r)]
    Z = p.symmetric("Z", w)
    zeta = p.scalar("zeta")

    if cfg.mode == "online":
        if weights is None:
            weights = firing_strengths(plant, hist.current)
        weights = np.asarray(weights, dtype=float)
        a_mu, ad_mu, b_mu, bd_mu = blend(plant, weights)
        y_mu = sum(float(wl) * y for wl, y in zip(weights, Y))

    for l, i, t in vertices(r, cfg.mode):
        if l is None:
            a, ad, b, bd, y_cur = a_mu, ad_mu, b_mu, bd_mu, y_mu
            label = f"decrease[mu,{i + 1},{t + 1}]"
        else:
            rule = plant.rules[l]
            a, ad, b, bd, y_cur = rule.A, rule.Ad, rule.B, rule.Bd, Y[l]
            label = f"decrease[{l + 1},{i + 1},{t + 1}]"
        spec = decrease_blocks(cfg, a, ad, b, bd, y_cur, Y[t], M, H[i], zeta)
        p.add(spec, NEGATIVE_DEFINITE, label)

    for i in range(r):
        for l in range(r):
            spec = BlockSpec([w, n])
            spec[0, 0] = Z
            spec[0, 1] = H[i]
            spec[1, 1] = M.T + M - Y[l]
            p.add(spec, POSITIVE_SEMIDEFINITE, f"input[{i + 1},{l + 1}]")
    for m_ in range(w):
        e = np.zeros((w, 1))
        e[m_] = 1.0
        p.add_bound(e.T @ Z @ e, cfg.u_max[m_] ** 2, f"Z[{m_ + 1},{m_ + 1}]")

    for jj, x in enumerate(hist.states):
        xv = np.asarray(x, dtype=float).reshape(n, 1)
        for l in range(r):
            spec = BlockSpec([1, n])
            spec[0, 0] = np.ones((1, 1))
            spec[0, 1] = xv.T
            spec[1, 1] = Y[l]
            p.add(spec, POSITIVE_SEMIDEFINITE, f"contain[{jj - cfg.h},{l + 1}]")

    p.minimize(zeta)
    p.weights = weights
    return p


def extract(p, a, mode, weights=None):
    r = sum(1 for name in p.variables if name.startswith("Y"))
    Y = [sym(a[f"Y{l + 1}"]) for l in range(r)]
    M = as_matrix(a["M"])
    H = [as_matrix(a[f"H{i + 1}"]) for i in range(r)]
    Minv = invert(M)
    gains = [hi @ Minv for hi in H]
    zeta = float(np.asarray(a["zeta"]).ravel()[0])
    return SynthesisSolution(Y, M, H, sym(a["Z"]), zeta, gains, mode,
                             None if weights is None else np.asarray(weights), a.iterations)


build_theorem1_lmis = build_step_lmis


def solve_step(plant, cfg, hist, weights=None, method="ipm"):
    p = build_step_lmis(plant, cfg, hist, weights)
    if method == "ipm":
        try:
            a = lmi.solve(p, eps_strict=cfg.eps_strict)
        except NoCertificate as exc:
            log.warning("interior point gave no certificate (%s); bisecting instead", exc)
            a = lmi.solve_bisection(p, 0.0, bisection_upper(p, cfg), eps_strict=cfg.eps_strict)
    elif method == "bisection":
        a = lmi.solve_bisection(p, 0.0, bisection_upper(p, cfg), eps_strict=cfg.eps_strict)
    else:
        raise ValueError(f"unknown method {method!r}")
    sol = extract(p, a, cfg.mode, p.weights)
    rep = lmi.check_feasible(p, a, CERT_TOL)
    sol.report = rep
    sol.margin = rep.worst_margin
    if not rep.ok:
        raise NoCertificate(f"returned point violates {rep.violated[:3]} at tol {CERT_TOL:g}")
    return sol


def bisection_upper(p, cfg, start=1.0, limit=1e8):
    """Grow an upper bracket for zeta until the fixed-zeta problem is feasible."""
    comp = lmi._Compiled(p, cfg.eps_strict)
    hi = start
    while hi <= limit:
        s, _, _ = lmi._max_margin(comp.with_fixed(p.objective, hi))
        if s > 0:
            return hi
        hi *= 10.0
    raise Infeasible(f"no feasible zeta up to {limit:g}")


def control_input(sol, ctrl, x, u_max=None):
    x = np.asarray(x, dtype=float).ravel()
    u = blend_gains(sol.gains, controller_strengths(ctrl, x)) @ x
    if u_max is not None:
        u_max = np.asarray(u_max, dtype=float)
        over = np.abs(u) - u_max
        # clip only round-off sized excursions; larger ones are real violations
        small = (over > 0) & (over < 1e-9)
        u = np.where(small, np.sign(u) * u_max, u)
    return u


def terminal_set_value(sol, plant, x):
    x = np.asarray(x, dtype=float).ravel()
    P = sol.P_blend(firing_strengths(plant, x))
    return float(x @ P @ x)
