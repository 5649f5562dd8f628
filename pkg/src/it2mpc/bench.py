"""Benchmark runner: YAML configs in, trajectory CSVs, certification reports and plot scripts out.

    python -m it2mpc.bench run --config cstr.yaml --case nodelay --seed 1
    python -m it2mpc.bench sweep --case bothdelay --seeds 1 2 3

Exit codes: 0 success, 1 certification failure or infeasible steps,
2 infeasible at step 0, 3 configuration error.
"""
import argparse
import csv
import logging
import os
import sys
import time
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import lmi, sim, synth, verify
from .it2 import (GRADES, WEIGHTS, FuzzyRule, It2ControllerShape, It2MembershipFn, It2Plant,
                  Premise)

log = logging.getLogger(__name__)

CASES = ("uncontrolled", "nodelay", "statedelay", "bothdelay")
OUT_ENV = "IT2MPC_OUT"
EXIT_OK, EXIT_CERT, EXIT_INFEASIBLE, EXIT_CONFIG = 0, 1, 2, 3
SWEEP_HEADER = ["seed", "converged_at", "peak_u", "infeasible_steps", "certified"]


class ConfigError(ValueError):
    pass


def bundled_config():
    return Path(str(resources.files("it2mpc") / "configs" / "cstr.yaml"))


@dataclass
class BenchConfig:
    path: Path
    plant_path: Path
    controller_path: Path
    plant: It2Plant
    ctrl: It2ControllerShape
    synth: synth.SynthConfig
    steps: int
    x0: np.ndarray
    Ts: float
    case: str
    seed: int
    resynthesize_every: int = 1
    shared_delay: bool = False
    out_dir: Path = Path("out")

    def sim_config(self, seed=None):
        h, j = self.synth.h, self.synth.j
        none = sim.DelayProcess("none", max(h, j))
        xd = sim.DelayProcess("uniform", h) if self.case in ("statedelay", "bothdelay", "uncontrolled") else none
        ud = sim.DelayProcess("uniform", j) if self.case == "bothdelay" else none
        return sim.SimConfig(self.steps, self.x0, self.Ts, xd, ud, self.resynthesize_every,
                             self.seed if seed is None else seed, self.shared_delay)


# --- loading ------------------------------------------------------------------

def _read_yaml(path):
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: file not found") from exc
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ConfigError(f"{path}:{mark.line + 1}:{mark.column + 1}: {exc.problem}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _field(d, key, where, default=KeyError):
    if key not in d:
        if default is KeyError:
            raise ConfigError(f"{where}: missing field '{key}'")
        return default
    return d[key]


def _matrix(value, shape, where):
    try:
        m = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: not a numeric array") from exc
    if m.ndim == 1 and len(shape) == 1:
        pass
    elif m.ndim != len(shape):
        raise ConfigError(f"{where}: expected a {len(shape)}-d array of shape {shape}, got {m.shape}")
    if m.shape != tuple(shape):
        raise ConfigError(f"{where}: expected shape {tuple(shape)}, got {m.shape}")
    return m


def _memberships(block, r, where):
    fam = _field(block, "family", where)
    if fam not in GRADES:
        raise ConfigError(f"{where}.family: unknown family '{fam}' (have {sorted(GRADES)})")
    lw = dict(_field(block, "lower_weight", where, {"kind": "sin2", "index": 1}))
    kind = lw.pop("kind", "sin2")
    if kind not in WEIGHTS:
        raise ConfigError(f"{where}.lower_weight.kind: unknown '{kind}' (have {sorted(WEIGHTS)})")
    weight = WEIGHTS[kind](**lw)
    try:
        if fam == "gaussian":
            centers = list(_field(block, "centers", where))
            if len(centers) != r:
                raise ConfigError(f"{where}.centers: {len(centers)} centers for {r} rules")
            params = {k: float(block[k]) for k in ("sigma_upper", "sigma_lower", "lower_scale")
                      if k in block}
            grades = [GRADES[fam](float(c), **params) for c in centers]
        else:
            tris = list(_field(block, "triangles", where))
            if len(tris) != r:
                raise ConfigError(f"{where}.triangles: {len(tris)} entries for {r} rules")
            grades = [GRADES[fam](*map(float, t)) for t in tris]
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc
    return [It2MembershipFn(g, weight) for g in grades]


def _premise(block, n, where):
    idx = int(_field(block, "index", where, 1))
    if not 0 <= idx < n:
        raise ConfigError(f"{where}.index: {idx} outside state dimension {n}")
    return Premise(idx, float(_field(block, "offset", where, 0.0)))


def load_plant(path):
    d = _read_yaml(path)
    n, w = int(_field(d, "n", path)), int(_field(d, "w", path))
    rules = []
    raw = _field(d, "rules", path)
    if not raw:
        raise ConfigError(f"{path}.rules: need at least one rule")
    for k, rd in enumerate(raw):
        where = f"{path}.rules[{k}]"
        rules.append(FuzzyRule(_matrix(_field(rd, "A", where), (n, n), where + ".A"),
                               _matrix(_field(rd, "Ad", where), (n, n), where + ".Ad"),
                               _matrix(_field(rd, "B", where), (n, w), where + ".B"),
                               _matrix(_field(rd, "Bd", where), (n, w), where + ".Bd")))
    mfs = _memberships(_field(d, "membership", path), len(rules), f"{path}.membership")
    prem = _premise(_field(d, "premise", path, {}), n, f"{path}.premise")
    return It2Plant(rules, mfs, prem)


def load_controller(path, plant):
    d = _read_yaml(path)
    mfs = _memberships(_field(d, "membership", path), plant.r, f"{path}.membership")
    prem = _premise(_field(d, "premise", path, {}), plant.n, f"{path}.premise")
    return It2ControllerShape(mfs, prem)


def load_config(path):
    path = Path(path)
    d = _read_yaml(path)
    base = path.parent
    plant_path = base / _field(d, "plant", path)
    ctrl_path = base / _field(d, "controller", path)
    plant = load_plant(plant_path)
    ctrl = load_controller(ctrl_path, plant)
    n, w = plant.n, plant.w

    sd = _field(d, "synth", path)
    where = f"{path}.synth"
    try:
        scfg = synth.SynthConfig(
            Q=_matrix(_field(sd, "Q", where), (n, n), where + ".Q"),
            R=_matrix(_field(sd, "R", where), (w, w), where + ".R"),
            u_max=_matrix(_field(sd, "u_max", where), (w,), where + ".u_max"),
            rho=float(_field(sd, "rho", where, 0.8)),
            rho_d=float(_field(sd, "rho_d", where, 0.2)),
            h=int(_field(sd, "h", where, 10)),
            j=int(_field(sd, "j", where, 10)),
            mode=str(_field(sd, "mode", where, "online")))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc

    md = _field(d, "sim", path)
    where = f"{path}.sim"
    case = str(_field(md, "case", where, "nodelay"))
    if case not in CASES:
        raise ConfigError(f"{where}.case: '{case}' not in {CASES}")
    steps = int(_field(md, "steps", where))
    Ts = float(_field(md, "Ts", where, 0.2))
    if steps < 1 or Ts <= 0:
        raise ConfigError(f"{where}: need steps >= 1 and Ts > 0")
    every = int(_field(md, "resynthesize_every", where, 1))
    if every < 1:
        raise ConfigError(f"{where}.resynthesize_every: must be >= 1")
    return BenchConfig(
        path=path, plant_path=plant_path, controller_path=ctrl_path, plant=plant, ctrl=ctrl,
        synth=scfg, steps=steps, x0=_matrix(_field(md, "x0", where), (n,), where + ".x0"),
        Ts=Ts, case=case, seed=int(_field(md, "seed", where, 0)), resynthesize_every=every,
        shared_delay=bool(_field(md, "shared_delay", where, False)),
        out_dir=Path(_field(d, "output", path, "out")))


# --- certification ------------------------------------------------------------

def certify(cfg, traj, rpi_samples=2000):
    """All checks for a controlled run. Step-0 checks use the first solution."""
    sols = traj.solutions
    reports = [verify.check_lrf_trajectory(traj, sols, cfg.plant, cfg.synth.Q),
               verify.check_eigen_sandwich(sols, cfg.plant, n_samples=200)]
    s0 = sols[0]
    reports.append(verify.check_rpi_sampling(cfg.plant, cfg.ctrl, s0, rpi_samples, True,
                                             cfg.synth.h))
    for v in synth.vertices(cfg.plant.r, cfg.synth.mode):
        reports.append(verify.replay_derivation(s0, cfg.plant, cfg.synth, v))
    return reports


# --- artifacts ----------------------------------------------------------------

PLOT_TEMPLATE = '''"""Plots for {stem}. Reads the trajectory CSV next to this script."""
import csv
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np

here = Path(__file__).parent
with open(here / "{stem}_trajectory.csv") as fh:
    rows = list(csv.DictReader(fh))
t = np.array([float(r["t"]) for r in rows])
xs = [np.array([float(r[k]) for r in rows]) for k in {xcols!r}]
us = [np.array([float(r[k]) for r in rows]) for k in {ucols!r}]

fig, ax = plt.subplots(2, 1, sharex=True)
for k, x in zip({xcols!r}, xs):
    ax[0].plot(t, x, label=k)
for k, u in zip({ucols!r}, us):
    ax[1].step(t, u, where="post", label=k)
ax[0].set_ylabel("state")
ax[1].set_ylabel("input")
ax[1].set_xlabel("time [s]")
for a in ax:
    a.legend()
fig.savefig(here / "{stem}_time.png", dpi=150)

fig, ax = plt.subplots()
ax.plot(xs[0], xs[1], ".-", ms=3)
P = np.array({P!r})
zeta = {zeta!r}
if zeta > 0:
    th = np.linspace(0, 2 * np.pi, 400)
    L = np.linalg.cholesky(P / zeta)
    pts = np.linalg.solve(L.T, np.vstack([np.cos(th), np.sin(th)]))
    ax.plot(pts[0], pts[1], "--", label="terminal set at k=0")
    ax.legend()
ax.set_xlabel("x_1")
ax.set_ylabel("x_2")
fig.savefig(here / "{stem}_phase.png", dpi=150)
'''


def write_plot_script(path, stem, traj, sol, plant):
    n, w = traj.x.shape[1], traj.u.shape[1]
    if sol is not None and n == 2:
        from .it2 import firing_strengths
        P = sol.P_blend(firing_strengths(plant, traj.x[0])).tolist()
        zeta = float(sol.zeta)
    else:
        P, zeta = np.eye(n).tolist(), 0.0
    Path(path).write_text(PLOT_TEMPLATE.format(
        stem=stem, xcols=[f"x_{i + 1}" for i in range(n)], ucols=[f"u_{i + 1}" for i in range(w)],
        P=P, zeta=zeta))


@dataclass
class CaseResult:
    traj: sim.Trajectory
    reports: list
    exit_code: int
    files: dict
    elapsed: float

    @property
    def certified(self):
        return all(r.ok for r in self.reports)


def run_case(cfg, out_dir=None, seed=None, dump_lmi=False, rpi_samples=2000, write=True):
    out = Path(out_dir if out_dir is not None else os.environ.get(OUT_ENV, cfg.out_dir))
    seed = cfg.seed if seed is None else seed
    scfg = cfg.sim_config(seed)
    stem = f"{cfg.case}_s{seed}"
    files = {}
    if write:
        out.mkdir(parents=True, exist_ok=True)
    if dump_lmi and cfg.case != "uncontrolled" and write:
        hist = synth.HistoryWindow.constant(cfg.x0, cfg.synth.h, cfg.synth.j, cfg.plant.w)
        p = synth.build_step_lmis(cfg.plant, cfg.synth, hist)
        files["lmi"] = out / f"{stem}_lmi_k0.txt"
        files["lmi"].write_text(lmi.dump(p))

    t0 = time.perf_counter()
    if cfg.case == "uncontrolled":
        traj = sim.uncontrolled_run(cfg.plant, scfg, cfg.synth)
        elapsed = time.perf_counter() - t0
        reports = []
    else:
        traj = sim.run(cfg.plant, cfg.ctrl, cfg.synth, scfg)
        elapsed = time.perf_counter() - t0
        reports = certify(cfg, traj, rpi_samples)
    cert_time = time.perf_counter() - t0 - elapsed

    code = EXIT_OK
    if reports and not all(r.ok for r in reports):
        code = EXIT_CERT
    if cfg.case != "uncontrolled" and traj.infeasible_steps:
        code = EXIT_CERT

    if write:
        files["trajectory"] = out / f"{stem}_trajectory.csv"
        traj.write_csv(files["trajectory"])
        if cfg.case != "uncontrolled":
            files["synthesis"] = out / f"{stem}_synthesis.csv"
            sim.write_synth_log(traj.log_rows, files["synthesis"])
        files["plot"] = out / f"{stem}_plot.py"
        write_plot_script(files["plot"], stem, traj, traj.solutions[0] if traj.solutions else None,
                          cfg.plant)
        files["report"] = out / f"{stem}_report.txt"
        conv = traj.convergence_step()
        head = [f"case={cfg.case} seed={seed} steps={traj.steps} run={elapsed:.2f}s "
                f"certify={cert_time:.2f}s",
                f"converged_at={conv} peak_u={traj.peak_input:.6g} "
                f"infeasible_steps={traj.infeasible_steps} diverged={traj.diverged}"]
        files["report"].write_text("\n".join(head + [r.to_text() for r in reports]) + "\n")
    return CaseResult(traj, reports, code, files, elapsed)


def sweep(cfg, seeds, out_dir=None, write=True, rpi_samples=2000):
    if not seeds:
        raise ValueError("sweep needs at least one seed")
    rows = []
    for s in seeds:
        res = run_case(cfg, out_dir, seed=s, rpi_samples=rpi_samples, write=write)
        rows.append({"seed": s, "converged_at": res.traj.convergence_step(),
                     "peak_u": res.traj.peak_input, "infeasible_steps": res.traj.infeasible_steps,
                     "certified": res.certified if res.reports else None})
    summary = {}
    for key in ("converged_at", "peak_u", "infeasible_steps"):
        vals = [r[key] for r in rows if r[key] is not None]
        summary[key] = (min(vals), float(np.median(vals)), max(vals)) if vals else (None,) * 3
    if write:
        out = Path(out_dir if out_dir is not None else os.environ.get(OUT_ENV, cfg.out_dir))
        with open(out / f"{cfg.case}_sweep.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(SWEEP_HEADER)
            for r in rows:
                wr.writerow([r[k] for k in SWEEP_HEADER])
            for i, name in enumerate(("min", "median", "max")):
                wr.writerow([name] + [summary[k][i] for k in ("converged_at", "peak_u",
                                                               "infeasible_steps")] + [""])
    return rows, summary


def format_table(rows, summary):
    lines = [f"{'seed':>6} {'conv':>6} {'peak|u|':>10} {'infeas':>7} {'cert':>6}"]
    for r in rows:
        lines.append(f"{r['seed']:>6} {str(r['converged_at']):>6} {r['peak_u']:>10.4f} "
                     f"{r['infeasible_steps']:>7} {str(r['certified']):>6}")
    for i, name in enumerate(("min", "median", "max")):
        c, p, f = (summary[k][i] for k in ("converged_at", "peak_u", "infeasible_steps"))
        lines.append(f"{name:>6} {str(c):>6} {p if p is None else format(p, '10.4f'):>10} {str(f):>7}")
    return "\n".join(lines)


def _parser():
    ap = argparse.ArgumentParser(prog="it2mpc-bench", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name in ("run", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="YAML config (default: bundled CSTR)")
        sp.add_argument("--case", choices=CASES)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--out", help=f"output directory (env {OUT_ENV} overrides the config)")
        sp.add_argument("--resynth-every", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "run":
            sp.add_argument("--seed", type=int)
            sp.add_argument("--dump-lmi", action="store_true")
        else:
            sp.add_argument("--seeds", type=int, nargs="+", required=True)
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config or bundled_config())
        upd = {}
        if args.case:
            upd["case"] = args.case
        if args.steps is not None:
            if args.steps < 1:
                raise ConfigError("--steps must be >= 1")
            upd["steps"] = args.steps
        if args.resynth_every is not None:
            if args.resynth_every < 1:
                raise ConfigError("--resynth-every must be >= 1")
            upd["resynthesize_every"] = args.resynth_every
        cfg = replace(cfg, **upd)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.cmd == "run":
            res = run_case(cfg, args.out, args.seed, args.dump_lmi)
            for r in res.reports:
                print(r.to_text())
            print(f"converged_at={res.traj.convergence_step()} peak_u={res.traj.peak_input:.4f} "
                  f"infeasible_steps={res.traj.infeasible_steps} elapsed={res.elapsed:.1f}s")
            for k, p in res.files.items():
                print(f"{k}: {p}")
            return res.exit_code
        rows, summary = sweep(cfg, args.seeds, args.out)
        print(format_table(rows, summary))
        bad = any(r["certified"] is False or r["infeasible_steps"] for r in rows
                  if cfg.case != "uncontrolled")
        return EXIT_CERT if bad else EXIT_OK
    except sim.InitialInfeasible as exc:
        print(f"infeasible at step 0: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
