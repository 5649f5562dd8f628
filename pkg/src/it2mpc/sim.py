"""Closed-loop simulation of the delayed IT2 plant under online synthesis."""
import csv
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import synth
from .it2 import blend, firing_strengths
from .lmi import Infeasible, NoCertificate
from .matkernel import StructureError

log = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e6
DELAY_KINDS = ("none", "constant", "uniform")


class InitialInfeasible(Infeasible):
    pass


@dataclass(frozen=True)
class DelayProcess:
    """Realizes d(k) in [1, bound]; kind ``none`` realizes 0 (read current values)."""
    kind: str = "none"
    bound: int = 10
    value: int = 1

    def __post_init__(self):
        if self.kind not in DELAY_KINDS:
            raise ValueError(f"delay kind must be one of {DELAY_KINDS}")
        if int(self.bound) < 1:
            raise ValueError("delay bound must be a positive integer")
        if self.kind == "constant" and not 1 <= self.value <= self.bound:
            raise ValueError(f"constant delay {self.value} outside [1, {self.bound}]")

    def draw(self, rng):
        if self.kind == "none":
            return 0
        if self.kind == "constant":
            return int(self.value)
        return int(rng.integers(1, self.bound + 1))


def worst_case_sweep(bound):
    """Constant-delay processes 1..bound, one per run."""
    return [DelayProcess("constant", bound, d) for d in range(1, bound + 1)]


@dataclass
class SimConfig:
    steps: int
    x0: np.ndarray
    Ts: float = 0.2
    state_delay: DelayProcess = field(default_factory=DelayProcess)
    input_delay: DelayProcess = field(default_factory=DelayProcess)
    resynthesize_every: int = 1
    seed: int = 0
    shared_delay: bool = False

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        if int(self.steps) < 1:
            raise ValueError("steps must be >= 1")
        if not self.Ts > 0:
            raise ValueError("Ts must be positive")
        if int(self.resynthesize_every) < 1:
            raise ValueError("resynthesize_every must be >= 1")


@dataclass
class Trajectory:
    Ts: float
    x: np.ndarray           # x(k), k = 0..steps-1
    u: np.ndarray
    dx: np.ndarray
    du: np.ndarray
    xd: np.ndarray          # delayed state actually used at step k
    ud: np.ndarray
    zeta: np.ndarray
    V: np.ndarray           # V_k(x(k)) with that step's P
    feasible: np.ndarray
    x_end: np.ndarray       # x(steps)
    solutions: list = field(default_factory=list, repr=False)
    log_rows: list = field(default_factory=list, repr=False)
    diverged: bool = False

    @property
    def steps(self):
        return len(self.x)

    @property
    def states(self):
        """x(0) .. x(steps)."""
        return np.vstack([self.x, self.x_end[None, :]])

    @property
    def infeasible_steps(self):
        return int(np.sum(~self.feasible))

    @property
    def peak_input(self):
        return float(np.abs(self.u).max()) if self.u.size else 0.0

    def convergence_step(self, radius=0.01, hold=10):
        """First k with ||x(k..k+hold-1)|| < radius and staying there to the end."""
        norms = np.linalg.norm(self.states, axis=1)
        inside = norms < radius
        if not inside[-1]:
            return None
        outside = np.flatnonzero(~inside)
        k = int(outside[-1]) + 1 if outside.size else 0
        if len(norms) - k < hold:
            return None
        return k

    def csv_header(self):
        n, w = self.x.shape[1], self.u.shape[1]
        return (["k", "t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(w)]
                + ["d_x", "d_u", "zeta", "feasible"])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.csv_header())
            for k in range(self.steps):
                wr.writerow([k, repr(k * self.Ts)] + [repr(float(v)) for v in self.x[k]]
                            + [repr(float(v)) for v in self.u[k]]
                            + [int(self.dx[k]), int(self.du[k]), repr(float(self.zeta[k])),
                               int(bool(self.feasible[k]))])


SYNTH_LOG_HEADER = ["step", "zeta", "feasible", "iterations", "margin"]


def write_synth_log(rows, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(SYNTH_LOG_HEADER)
        for r in rows:
            wr.writerow([r["step"], repr(float(r["zeta"])), int(r["feasible"]), r["iterations"],
                         repr(float(r["margin"]))])


def step(plant, sol, ctrl, hist, dx, du, u=None):
    """Advance one step. Returns (x_next, u, x_d, u_d).

    ``dx``/``du`` of 0 mean the delayed terms read the current state/input.
    """
    states, inputs = hist.states, hist.inputs
    if not states:
        raise StructureError("empty state history")
    x = np.asarray(states[-1], dtype=float)
    if dx > len(states) - 1 or (du > 0 and du > len(inputs)):
        raise StructureError(f"history underflow for delays ({dx}, {du})")
    if u is None:
        u = synth.control_input(sol, ctrl, x) if sol is not None else np.zeros(plant.w)
    xd = np.asarray(states[-1 - dx], dtype=float)
    ud = u if du == 0 else np.asarray(inputs[-du], dtype=float)
    a, ad, b, bd = blend(plant, firing_strengths(plant, x))
    return a @ x + b @ u + ad @ xd + bd @ ud, u, xd, ud


def _delays(sim_cfg, rng):
    dx = sim_cfg.state_delay.draw(rng)
    if sim_cfg.shared_delay and sim_cfg.input_delay.kind != "none" and dx > 0:
        du = min(dx, sim_cfg.input_delay.bound)
    else:
        du = sim_cfg.input_delay.draw(rng)
    return dx, du


def _loop(plant, ctrl, synth_cfg, sim_cfg, controlled):
    n, w = plant.n, plant.w
    h = synth_cfg.h if synth_cfg is not None else sim_cfg.state_delay.bound
    j = synth_cfg.j if synth_cfg is not None else sim_cfg.input_delay.bound
    if sim_cfg.state_delay.kind != "none" and sim_cfg.state_delay.bound > h:
        raise ValueError("state delay bound exceeds the synthesis bound h")
    if sim_cfg.input_delay.kind != "none" and sim_cfg.input_delay.bound > j:
        raise ValueError("input delay bound exceeds the synthesis bound j")
    rng = np.random.default_rng(sim_cfg.seed)
    states = deque([sim_cfg.x0.copy() for _ in range(h + 1)], maxlen=h + 1)
    inputs = deque([np.zeros(w) for _ in range(j)], maxlen=j)

    rows = {k: [] for k in ("x", "u", "dx", "du", "xd", "ud", "zeta", "V", "feasible")}
    sols, log_rows = [], []
    sol = None
    diverged = False
    x = sim_cfg.x0.copy()
    for k in range(sim_cfg.steps):
        feasible = True
        if controlled and k % sim_cfg.resynthesize_every == 0:
            hist = synth.HistoryWindow(list(states), list(inputs))
            try:
                sol = synth.solve_step(plant, synth_cfg, hist)
                log_rows.append({"step": k, "zeta": sol.zeta, "feasible": True,
                                 "iterations": sol.iterations, "margin": sol.margin})
            except (Infeasible, NoCertificate) as exc:
                if sol is None:
                    raise InitialInfeasible(f"step {k}: {exc}") from exc
                feasible = False
                log.warning("step %d: synthesis failed (%s); reusing previous gains", k, exc)
                log_rows.append({"step": k, "zeta": sol.zeta, "feasible": False,
                                 "iterations": 0, "margin": np.nan})
        dx, du = _delays(sim_cfg, rng)
        hist = synth.HistoryWindow(list(states), list(inputs))
        u = None if controlled else np.zeros(w)
        x_next, u, xd, ud = step(plant, sol, ctrl, hist, dx, du, u=u)

        rows["x"].append(x)
        rows["u"].append(u)
        rows["dx"].append(dx)
        rows["du"].append(du)
        rows["xd"].append(xd)
        rows["ud"].append(ud)
        rows["feasible"].append(feasible)
        if controlled:
            rows["zeta"].append(sol.zeta)
            rows["V"].append(synth.terminal_set_value(sol, plant, x))
            sols.append(sol)
        else:
            rows["zeta"].append(np.nan)
            rows["V"].append(np.nan)

        states.append(x_next)
        inputs.append(u)
        x = x_next
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
            diverged = True
            break

    return Trajectory(
        Ts=sim_cfg.Ts,
        x=np.array(rows["x"]).reshape(-1, n),
        u=np.array(rows["u"]).reshape(-1, w),
        dx=np.array(rows["dx"], dtype=int),
        du=np.array(rows["du"], dtype=int),
        xd=np.array(rows["xd"]).reshape(-1, n),
        ud=np.array(rows["ud"]).reshape(-1, w),
        zeta=np.array(rows["zeta"], dtype=float),
        V=np.array(rows["V"], dtype=float),
        feasible=np.array(rows["feasible"], dtype=bool),
        x_end=x,
        solutions=sols,
        log_rows=log_rows,
        diverged=diverged,
    )


def run(plant, ctrl, synth_cfg, sim_cfg):
    return _loop(plant, ctrl, synth_cfg, sim_cfg, controlled=True)


def uncontrolled_run(plant, sim_cfg, synth_cfg=None):
    return _loop(plant, None, synth_cfg, sim_cfg, controlled=False)
