"""Independent certification checks for synthesized controllers and closed-loop runs.

Each check returns a CertReport. A failing report carries a witness dict with
the raw numbers needed to recompute the failing margin on its own.
"""
from dataclasses import dataclass, field

import numpy as np

from .it2 import blend, firing_strengths
from .matkernel import (StructureError, assemble_symmetric, block_diag, congruence, invert,
                        is_nd, is_pd, max_eig, min_eig, schur_complement, symmetrize)
from . import synth

TOL = 1e-7
SANDWICH_TOL = 1e-9


@dataclass
class CertReport:
    name: str
    ok: bool
    margin: float
    witness: dict = None
    detail: str = ""
    notes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_text(self):
        lines = [f"[{self.name}] {'PASS' if self.ok else 'FAIL'} worst_margin={self.margin:.6e}"]
        if self.detail:
            lines.append(f"  {self.detail}")
        for k, v in self.extra.items():
            lines.append(f"  {k} = {v:.6e}" if isinstance(v, float) else f"  {k} = {v}")
        for n in self.notes:
            lines.append(f"  note: {n}")
        if self.witness:
            for k, v in self.witness.items():
                lines.append(f"  witness.{k} = {np.array2string(np.asarray(v), precision=17, separator=', ')}"
                             if not isinstance(v, str) else f"  witness.{k} = {v}")
        return "\n".join(lines)


# --- bound: Y - M - M^T >= -M^T Y^-1 M for Y > 0 ------------------------------

def bilinear_bound_margin(m, y):
    m, y = np.asarray(m, float), np.asarray(y, float)
    return min_eig(y - m - m.T + m.T @ invert(y) @ m)


# --- decrease along a trajectory ----------------------------------------------

def lrf_margin(x, xd, x_next, p_k, p_next, q):
    """V_{k+1}(x+) - max(V_k(x), V_k(x_d)) + x^T Q x; negative means decrease."""
    x, xd, x_next = (np.asarray(v, float).ravel() for v in (x, xd, x_next))
    v_next = x_next @ p_next @ x_next
    v_bar = max(x @ p_k @ x, xd @ p_k @ xd)
    return float(v_next - v_bar + x @ q @ x)


def check_lrf_trajectory(traj, sols, plant, Q, tol=TOL):
    """Razumikhin decrease at every step with V_k built from step k's solution.

    The successor value uses step k+1's solution; at the final step no later
    solution exists and V_k is used for the successor too.
    """
    Q = np.asarray(Q, float)
    states = traj.states
    if len(sols) != traj.steps:
        raise StructureError(f"{len(sols)} solutions for {traj.steps} steps")
    worst, witness, worst_rel = -np.inf, None, -np.inf
    notes = ["disturbance branch of the Razumikhin condition not exercised (no exogenous input)"]
    for k in range(traj.steps):
        x, xd, x_next = states[k], traj.xd[k], states[k + 1]
        p_k = sols[k].P_blend(firing_strengths(plant, x))
        nxt = sols[k + 1] if k + 1 < len(sols) else sols[k]
        p_next = nxt.P_blend(firing_strengths(plant, x_next))
        m = lrf_margin(x, xd, x_next, p_k, p_next, Q)
        v_bar = max(x @ p_k @ x, xd @ p_k @ xd)
        if v_bar > 0:
            worst_rel = max(worst_rel, m / v_bar)
        if m > worst:
            worst = m
            witness = {"k": k, "x": x, "xd": xd, "x_next": x_next, "P_k": p_k,
                       "P_next": p_next, "Q": Q}
    if traj.steps == 0:
        worst = 0.0
    ok = bool(worst < tol)
    # decrease relative to max(V_k(x), V_k(x_d)); scale free, so it stays
    # informative as the state approaches the origin
    extra = {"worst_relative_margin": float(worst_rel) if np.isfinite(worst_rel) else 0.0}
    return CertReport("lrf_decrease", ok, float(worst), None if ok else witness,
                      f"{traj.steps} steps, tol {tol:g}", notes, extra)


# --- eigenvalue sandwich ------------------------------------------------------

def check_eigen_sandwich(sols, plant=None, n_samples=1000, seed=0, tol=SANDWICH_TOL):
    if not sols:
        raise StructureError("no solutions to check")
    mats = [[s.P(l) for l in range(len(s.Y))] for s in sols]
    eigs = np.array([np.linalg.eigvalsh(symmetrize(p)) for ps in mats for p in ps])
    psi_min, psi_max = float(eigs[:, 0].min()), float(eigs[:, -1].max())
    rng = np.random.default_rng(seed)
    worst, witness = np.inf, None
    n = mats[0][0].shape[0]
    seen = set()
    for k, s in enumerate(sols):
        if id(s) in seen:
            continue
        seen.add(id(s))
        xs = rng.standard_normal((n_samples, n)) * rng.uniform(0.01, 10.0, (n_samples, 1))
        for x in xs:
            w = firing_strengths(plant, x) if plant is not None else rng.dirichlet(np.ones(len(s.Y)))
            p = sum(wl * pl for wl, pl in zip(w, mats[k]))
            v, nx = float(x @ p @ x), float(x @ x)
            m = min(v - psi_min * nx, psi_max * nx - v) / max(1.0, nx)
            if m < worst:
                worst, witness = m, {"k": k, "x": x, "P": p, "psi_min": psi_min, "psi_max": psi_max}
    ok = bool(worst >= -tol)
    return CertReport("eigen_sandwich", ok, float(worst), None if ok else witness,
                      f"psi_min={psi_min:.6e} psi_max={psi_max:.6e}")


# --- invariance of the terminal set by sampling -------------------------------

def _frozen_system(plant, sol, x):
    w = sol.weights if sol.weights is not None else firing_strengths(plant, x)
    return w, blend(plant, w)


def check_rpi_sampling(plant, ctrl, sol, n_samples=2000, all_delays=True, h=10, seed=0, tol=TOL):
    """Sample histories inside Omega_s and check every one-step successor stays inside.

    Omega_s is max over the history of x^T P_mu x <= zeta, with P_mu at the
    weights the step was solved for. Radii are biased toward the boundary.
    The successor value is the largest over rule matrices P_t and every
    controller vertex gain is applied, which bounds any convex blend of either.
    ``ctrl`` is accepted for interface symmetry with the simulator.
    """
    rng = np.random.default_rng(seed)
    n, zeta = plant.n, sol.zeta
    w0 = sol.weights if sol.weights is not None else None
    delays = list(range(1, h + 1)) if all_delays else [int(rng.integers(1, h + 1))]
    ps = [sol.P(l) for l in range(len(sol.Y))]
    gains = sol.gains
    worst, witness = -np.inf, None
    for s in range(n_samples):
        x_dir = rng.standard_normal(n)
        w = w0 if w0 is not None else firing_strengths(plant, x_dir)
        p = sum(wl * pl for wl, pl in zip(w, ps))
        hist = []
        for _ in range(h + 1):
            d = rng.standard_normal(n)
            on_edge = d * np.sqrt(zeta / float(d @ p @ d))
            # half the states sit on the level set, the rest are pulled toward it
            frac = 1.0 if rng.random() < 0.5 else 1.0 - rng.random() ** 4
            hist.append(np.zeros(n) if s == 0 else on_edge * frac)
        x = hist[-1]
        _, (a, ad, b, bd) = _frozen_system(plant, sol, x)
        for i, k in enumerate(gains):
            for d in delays:
                xd = hist[-1 - d]
                x_next = (a + b @ k) @ x + (ad + bd @ k) @ xd
                val = max(float(x_next @ pt @ x_next) for pt in ps)
                m = val - zeta
                if m > worst:
                    worst = m
                    witness = {"sample": s, "delay": d, "gain": i, "x": x, "xd": xd,
                               "x_next": x_next, "zeta": zeta, "value": val}
    ok = bool(worst <= tol)
    return CertReport("rpi_sampling", ok, float(worst), None if ok else witness,
                      f"{n_samples} samples x {len(delays)} delays, tol {tol:g}")


# --- derivation-chain replay --------------------------------------------------

def _vertex_data(sol, plant, vertex):
    l, i, t = vertex
    if l is None:
        if sol.weights is None:
            raise StructureError("blended vertex needs the solution's plant weights")
        a, ad, b, bd = blend(plant, sol.weights)
        y_cur = sum(wl * y for wl, y in zip(sol.weights, sol.Y))
    else:
        r = plant.rules[l]
        a, ad, b, bd, y_cur = r.A, r.Ad, r.B, r.Bd, sol.Y[l]
    return a, ad, b, bd, symmetrize(y_cur), symmetrize(sol.Y[t]), sol.H[i]


STAGES = ("lmi", "bounded", "scaled", "cost_schur", "state_schur")


def derivation_stages(sol, plant, cfg, vertex):
    """Matrices of each stage of the proof chain, in order.

    lmi: the synthesis LMI at the solved point
    bounded: congruence by diag(M^-1, M^-1, I, I, I) after Y - M - M^T -> -M^T Y^-1 M
    scaled: scaling by diag(sqrt(zeta) I, sqrt(zeta) I, I/sqrt(zeta), ...), P = zeta Y^-1
    cost_schur: Schur complement of the cost blocks
    state_schur: Schur complement of the -P_t^-1 block
    """
    a, ad, b, bd, y_cur, y_next, hi = _vertex_data(sol, plant, vertex)
    m, zeta = sol.M, sol.zeta
    n, w = a.shape[0], b.shape[1]
    s_lmi = assemble_symmetric(synth.decrease_blocks(cfg, a, ad, b, bd, y_cur, y_next, m, hi, zeta))

    minv = invert(m)
    k = hi @ minv
    bounded = s_lmi.copy()
    bound = -m.T @ invert(y_cur) @ m
    bounded[:n, :n] = cfg.rho * bound
    bounded[n:2 * n, n:2 * n] = cfg.rho_d * bound
    t_bounded = block_diag(minv, minv, np.eye(n), np.eye(n), np.eye(w))
    s_bounded = congruence(bounded, t_bounded)

    rz = np.sqrt(zeta)
    t_scaled = block_diag(rz * np.eye(2 * n), np.eye(2 * n + w) / rz)
    s_scaled = congruence(s_bounded, t_scaled)

    s_cost = schur_complement(s_scaled, n + w)
    s_state = schur_complement(s_cost, n)
    p = zeta * invert(y_cur)
    p_t = zeta * invert(y_next)
    theta, theta_d = a + b @ k, ad + bd @ k
    return {"lmi": s_lmi, "bounded": s_bounded, "scaled": s_scaled,
            "cost_schur": s_cost, "state_schur": s_state,
            "P": p, "P_t": p_t, "K": k, "theta": theta, "theta_d": theta_d}


def scalar_decrease_value(x, xd, st, cfg):
    x, xd = np.asarray(x, float), np.asarray(xd, float)
    x_next = st["theta"] @ x + st["theta_d"] @ xd
    u = st["K"] @ x
    return float(x_next @ st["P_t"] @ x_next + x @ cfg.Q @ x + u @ cfg.R @ u
                 - cfg.rho * x @ st["P"] @ x - cfg.rho_d * xd @ st["P"] @ xd)


def replay_derivation(sol, plant, cfg, vertex, n_pairs=500, seed=0, tol=TOL):
    st = derivation_stages(sol, plant, cfg, vertex)
    worst, witness = -np.inf, None
    for name in STAGES:
        e = max_eig(st[name])
        if e > worst:
            worst = e
            witness = {"stage": name, "max_eig": e, "matrix": st[name]}
        if e >= tol:
            return CertReport(f"replay{vertex}", False, float(e), witness,
                              f"stage {name} is not negative definite (max eig {e:.3e})")
    rng = np.random.default_rng(seed)
    n = plant.n
    for s in range(n_pairs):
        x, xd = rng.standard_normal(n), rng.standard_normal(n)
        # the quadratic form is homogeneous, so compare on the unit scale
        scale = max(x @ x + xd @ xd, 1e-300)
        v = scalar_decrease_value(x, xd, st, cfg) / scale
        if v >= 0:
            return CertReport(f"replay{vertex}", False, float(v),
                              {"stage": "scalar", "x": x, "xd": xd, "value": v},
                              "scalar decrease inequality violated")
        worst = max(worst, v)
    return CertReport(f"replay{vertex}", True, float(worst), None,
                      f"stages {','.join(STAGES)} and {n_pairs} scalar pairs")


# --- Schur complement equivalence ---------------------------------------------

def schur_oracle(full, split):
    """Check full < 0 iff (pivot < 0 and complement < 0), and the > 0 analogue.

    ``split`` is the size of the leading block; the trailing block is the pivot.
    """
    m = symmetrize(full)
    d = m[split:, split:]
    pivot_nd, pivot_pd = is_nd(d), is_pd(d)
    if not (pivot_nd or pivot_pd):
        return CertReport("schur", False, float(min_eig(d)), {"pivot": d},
                          "inapplicable: pivot block is indefinite or singular")
    s = schur_complement(m, m.shape[0] - split)
    nd_full, nd_split = is_nd(m), pivot_nd and is_nd(s)
    pd_full, pd_split = is_pd(m), pivot_pd and is_pd(s)
    ok = nd_full == nd_split and pd_full == pd_split
    return CertReport("schur", bool(ok), float(max_eig(m)),
                      None if ok else {"full": m, "complement": s},
                      f"nd {nd_full}/{nd_split} pd {pd_full}/{pd_split}")
