"""Affine LMI modeling and a small dense SDP front end.

Decision variables are named matrices (symmetric, general, or scalar). An
:class:`Affine` is ``const + sum_k L_k V_k R_k`` where ``V_k`` is a variable
(or its transpose); a scalar variable ``z`` acts as ``z * I`` in the middle so
``z * Q`` is expressible. Constraints are block matrices of affine entries,
mirrored below the diagonal, required to be negative definite or positive
semidefinite.

:func:`solve` runs a primal-dual interior-point method (cvxopt, Nesterov-Todd
scaling) on the vectorized problem. :func:`solve_bisection` is an independent
route for single-scalar objectives: it bisects on the objective value using
max-margin feasibility problems only.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from cvxopt import matrix as cvxmat
from cvxopt import solvers

from .matkernel import BlockSpec, StructureError, as_matrix, eigvalsh, symmetrize

log = logging.getLogger(__name__)

SOLVER_TOL = 1e-8
STRICT_EPS = 1e-6
MAX_ITERS = 200

NEGATIVE_DEFINITE = "negative_definite"
POSITIVE_SEMIDEFINITE = "positive_semidefinite"


class Infeasible(Exception):
    """The problem has no point with non-negative max-margin."""


class NoCertificate(Exception):
    """The solver stopped without either an optimum or an infeasibility verdict."""


class AssignmentError(KeyError):
    pass


@dataclass(frozen=True)
class Var:
    name: str
    kind: str
    shape: tuple

    def __post_init__(self):
        if self.kind not in ("symmetric", "general", "scalar"):
            raise StructureError(f"unknown variable kind {self.kind!r}")
        if self.kind == "symmetric" and self.shape[0] != self.shape[1]:
            raise StructureError(f"symmetric variable {self.name} must be square")
        if self.kind == "scalar" and tuple(self.shape) != (1, 1):
            raise StructureError("scalar variables have shape (1, 1)")

    @property
    def size(self):
        r, c = self.shape
        if self.kind == "symmetric":
            return r * (r + 1) // 2
        return r * c

    def basis(self):
        r, c = self.shape
        out = []
        if self.kind == "symmetric":
            for i in range(r):
                for j in range(i, r):
                    e = np.zeros((r, r))
                    e[i, j] = e[j, i] = 1.0
                    out.append(e)
        else:
            # column-major, so general values round-trip through ravel(order="F")
            for j in range(c):
                for i in range(r):
                    e = np.zeros((r, c))
                    e[i, j] = 1.0
                    out.append(e)
        return out

    def pack(self, value):
        v = as_matrix(value)
        if v.shape != tuple(self.shape):
            raise AssignmentError(f"{self.name}: expected shape {self.shape}, got {v.shape}")
        if self.kind == "symmetric":
            return v[np.triu_indices(self.shape[0])]
        return v.ravel(order="F")

    def unpack(self, vec):
        r, c = self.shape
        vec = np.asarray(vec, dtype=float)
        if self.kind == "symmetric":
            m = np.zeros((r, r))
            m[np.triu_indices(r)] = vec
            return m + np.triu(m, 1).T
        return vec.reshape((r, c), order="F")


@dataclass(frozen=True)
class Term:
    left: np.ndarray
    var: Var
    right: np.ndarray
    transposed: bool = False

    def value(self, v):
        if self.var.kind == "scalar":
            return float(np.asarray(v).reshape(-1)[0]) * (self.left @ self.right)
        mid = v.T if self.transposed else v
        return self.left @ mid @ self.right

    def coefficient(self, basis_elem):
        if self.var.kind == "scalar":
            return self.left @ self.right
        mid = basis_elem.T if self.transposed else basis_elem
        return self.left @ mid @ self.right


class Affine:
    """Matrix-valued affine function of the decision variables."""

    # make numpy defer to the reflected operators (ndarray @ Affine)
    __array_ufunc__ = None

    def __init__(self, const, terms=()):
        self.const = as_matrix(const)
        self.terms = list(terms)

    @property
    def shape(self):
        return self.const.shape

    @property
    def T(self):
        return Affine(self.const.T, [
            Term(t.right.T, t.var, t.left.T, not t.transposed) for t in self.terms])

    def variables(self):
        return {t.var.name: t.var for t in self.terms}

    def _coerce(self, other):
        if isinstance(other, Affine):
            return other
        o = np.asarray(other, dtype=float)
        if o.ndim == 0:
            o = o * np.ones(self.shape) if self.shape == (1, 1) else o * np.eye(self.shape[0])
        return Affine(o)

    def __add__(self, other):
        other = self._coerce(other)
        if other.shape != self.shape:
            raise StructureError(f"cannot add shapes {self.shape} and {other.shape}")
        return Affine(self.const + other.const, self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.const, [Term(-t.left, t.var, t.right, t.transposed) for t in self.terms])

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        o = np.asarray(other, dtype=float)
        if o.ndim == 0:
            return Affine(float(o) * self.const,
                          [Term(float(o) * t.left, t.var, t.right, t.transposed) for t in self.terms])
        if self.shape != (1, 1):
            raise StructureError("only 1x1 expressions can scale a matrix")
        o = as_matrix(o)
        terms = []
        for t in self.terms:
            if t.var.kind != "scalar":
                raise StructureError("matrix scaling is only supported for scalar variables")
            a = float((t.left @ t.right)[0, 0])
            terms.append(Term(a * o, t.var, np.eye(o.shape[1])))
        return Affine(self.const[0, 0] * o, terms)

    __rmul__ = __mul__

    def __matmul__(self, other):
        o = as_matrix(other)
        return Affine(self.const @ o, [Term(t.left, t.var, t.right @ o, t.transposed) for t in self.terms])

    def __rmatmul__(self, other):
        o = as_matrix(other)
        return Affine(o @ self.const, [Term(o @ t.left, t.var, t.right, t.transposed) for t in self.terms])

    def value(self, assignment):
        out = self.const.copy()
        for t in self.terms:
            try:
                v = assignment[t.var.name]
            except KeyError:
                raise AssignmentError(f"variable {t.var.name!r} is not assigned") from None
            out = out + t.value(as_matrix(v))
        return out

    def embed(self, row, col, total):
        """Place this expression at offset (row, col) of a zero ``total``-shaped matrix."""
        p, q = self.shape
        er = np.zeros((total[0], p))
        er[row:row + p, :] = np.eye(p)
        ec = np.zeros((q, total[1]))
        ec[:, col:col + q] = np.eye(q)
        return er @ self @ ec


def expr(var):
    r, c = var.shape
    if var.kind == "scalar":
        return Affine(np.zeros((1, 1)), [Term(np.eye(1), var, np.eye(1))])
    return Affine(np.zeros((r, c)), [Term(np.eye(r), var, np.eye(c))])


def _as_affine(x):
    return x if isinstance(x, Affine) else Affine(x)


@dataclass
class LmiConstraint:
    blocks: BlockSpec
    sense: str
    label: str

    def __post_init__(self):
        if self.sense not in (NEGATIVE_DEFINITE, POSITIVE_SEMIDEFINITE):
            raise StructureError(f"unknown sense {self.sense!r}")

    @property
    def dim(self):
        return self.blocks.dim

    def assembled(self):
        """The full symmetric affine matrix (lower blocks mirrored)."""
        sizes = list(self.blocks.sizes)
        off = self.blocks.offsets()
        total = (off[-1], off[-1])
        full = Affine(np.zeros(total))
        for (i, j), blk in self.blocks.blocks.items():
            a = _as_affine(blk)
            if a.shape != (sizes[i], sizes[j]):
                raise StructureError(
                    f"{self.label}: block ({i},{j}) has shape {a.shape}, "
                    f"expected {(sizes[i], sizes[j])}")
            full = full + a.embed(off[i], off[j], total)
            if i != j:
                full = full + a.T.embed(off[j], off[i], total)
        return full

    def variables(self):
        out = {}
        for blk in self.blocks.blocks.values():
            if isinstance(blk, Affine):
                out.update(blk.variables())
        return out


@dataclass
class Assignment:
    values: dict
    objective: float = None
    iterations: int = 0
    method: str = ""

    def __getitem__(self, name):
        return self.values[name]

    def __contains__(self, name):
        return name in self.values


@dataclass
class ConstraintCheck:
    label: str
    sense: str
    min_eig: float
    max_eig: float
    ok: bool

    @property
    def margin(self):
        """Positive when satisfied: -max_eig for ND, min_eig for PSD."""
        return -self.max_eig if self.sense == NEGATIVE_DEFINITE else self.min_eig


@dataclass
class FeasibilityReport:
    checks: list
    bounds: list
    tol: float

    @property
    def ok(self):
        return all(c.ok for c in self.checks) and all(b[2] for b in self.bounds)

    @property
    def violated(self):
        return [c.label for c in self.checks if not c.ok] + [b[0] for b in self.bounds if not b[2]]

    @property
    def worst_margin(self):
        ms = [c.margin for c in self.checks] + [b[1] for b in self.bounds]
        return min(ms) if ms else np.inf


@dataclass
class LmiProblem:
    variables: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)
    objective: Var = None
    scalar_bounds: list = field(default_factory=list)

    def _new(self, name, kind, shape):
        if name in self.variables:
            raise StructureError(f"duplicate variable name {name!r}")
        v = Var(name, kind, tuple(shape))
        self.variables[name] = v
        return expr(v)

    def symmetric(self, name, n):
        return self._new(name, "symmetric", (n, n))

    def general(self, name, rows, cols):
        return self._new(name, "general", (rows, cols))

    def scalar(self, name):
        return self._new(name, "scalar", (1, 1))

    def add(self, blocks, sense, label):
        if not isinstance(blocks, BlockSpec):
            a = _as_affine(blocks)
            blocks = BlockSpec([a.shape[0]], {(0, 0): a})
        c = LmiConstraint(blocks, sense, label)
        c.assembled()
        self.constraints.append(c)
        return c

    def add_bound(self, e, upper, label):
        """Scalar linear constraint ``e <= upper`` for a 1x1 affine ``e``."""
        e = _as_affine(e)
        if e.shape != (1, 1):
            raise StructureError("bounds take 1x1 expressions")
        self.scalar_bounds.append((e, float(upper), label))

    def minimize(self, e):
        vs = list(_as_affine(e).variables().values())
        if len(vs) != 1 or vs[0].kind != "scalar":
            raise StructureError("the objective must be a single scalar variable")
        self.objective = vs[0]

    def size(self):
        return sum(v.size for v in self.variables.values())


def evaluate(c, a):
    return symmetrize(c.assembled().value(a))


def check_feasible(p, a, tol):
    if tol <= 0:
        raise ValueError("tol must be positive")
    checks = []
    for c in p.constraints:
        ev = eigvalsh(evaluate(c, a))
        lo, hi = float(ev[0]), float(ev[-1])
        ok = hi < -tol if c.sense == NEGATIVE_DEFINITE else lo > -tol
        checks.append(ConstraintCheck(c.label, c.sense, lo, hi, ok))
    bounds = []
    for e, upper, label in p.scalar_bounds:
        slack = upper - float(e.value(a)[0, 0])
        bounds.append((label, slack, slack > -tol))
    return FeasibilityReport(checks, bounds, tol)


def dump(p):
    """Human-readable listing of a problem: variables, then each constraint's layout."""
    lines = ["variables:"]
    for v in p.variables.values():
        lines.append(f"  {v.name}: {v.kind} {v.shape[0]}x{v.shape[1]}")
    if p.objective is not None:
        lines.append(f"minimize {p.objective.name}")
    for c in p.constraints:
        lines.append(f"constraint {c.label} [{c.sense}] blocks={list(c.blocks.sizes)}")
        for (i, j), blk in sorted(c.blocks.blocks.items()):
            if isinstance(blk, Affine):
                names = ",".join(sorted(blk.variables())) or "-"
                lines.append(f"  ({i},{j}) affine in {names}")
            else:
                lines.append(f"  ({i},{j}) const {np.array2string(as_matrix(blk), precision=4)}")
    for e, upper, label in p.scalar_bounds:
        lines.append(f"bound {label}: <= {upper:g}")
    return "\n".join(lines)


# --- numeric form -----------------------------------------------------------

@dataclass
class _Block:
    label: str
    sense: str
    f0: np.ndarray
    fk: np.ndarray  # (nvars, m, m)
    eps: float


class _Compiled:
    def __init__(self, p, eps_strict=STRICT_EPS):
        self.vars = list(p.variables.values())
        self.offsets = {}
        k = 0
        for v in self.vars:
            self.offsets[v.name] = k
            k += v.size
        self.n = k
        self.blocks = []
        for c in p.constraints:
            full = c.assembled()
            f0 = symmetrize(full.const)
            fk = np.zeros((self.n,) + f0.shape)
            for t in full.terms:
                base = self.offsets[t.var.name]
                if t.var.kind == "scalar":
                    fk[base] += t.coefficient(None)
                else:
                    for b, e in enumerate(t.var.basis()):
                        fk[base + b] += t.coefficient(e)
            fk = 0.5 * (fk + np.transpose(fk, (0, 2, 1)))
            eps = SOLVER_TOL
            if c.sense == NEGATIVE_DEFINITE:
                eps = eps_strict * (1.0 + np.abs(np.linalg.eigvalsh(f0)).max())
            self.blocks.append(_Block(c.label, c.sense, f0, fk, eps))
        rows, rhs = [], []
        for e, upper, _ in p.scalar_bounds:
            row = np.zeros(self.n)
            for t in e.terms:
                base = self.offsets[t.var.name]
                if t.var.kind == "scalar":
                    row[base] += float(t.coefficient(None)[0, 0])
                else:
                    for b, el in enumerate(t.var.basis()):
                        row[base + b] += float(t.coefficient(el)[0, 0])
            rows.append(row)
            rhs.append(upper - float(e.const[0, 0]))
        self.bound_rows = np.array(rows).reshape(-1, self.n)
        self.bound_rhs = np.array(rhs)
        self.fixed = {}

    def index(self, var):
        return self.offsets[var.name]

    def with_fixed(self, var, value):
        """Copy with a scalar variable frozen to ``value`` (its column is kept but pinned)."""
        out = object.__new__(_Compiled)
        out.__dict__.update(self.__dict__)
        out.fixed = dict(self.fixed)
        out.fixed[self.index(var)] = float(value)
        return out

    def assignment(self, x):
        vals = {}
        for v in self.vars:
            k = self.offsets[v.name]
            vals[v.name] = v.unpack(x[k:k + v.size])
        return vals

    def cone_data(self, margin_var=False):
        """cvxopt G/h lists; with ``margin_var`` a trailing unknown s enters every block."""
        n = self.n + (1 if margin_var else 0)
        gs, hs = [], []
        for b in self.blocks:
            m = b.f0.shape[0]
            g = np.zeros((m * m, n))
            fk = b.fk.reshape(self.n, m * m).T
            eye = np.eye(m)
            if b.sense == NEGATIVE_DEFINITE:
                # -F0 - eps I - sum x_k F_k (- s I) >= 0
                g[:, :self.n] = fk
                h = -b.f0 - b.eps * eye
                if margin_var:
                    g[:, -1] = eye.ravel()
            else:
                # F0 + sum x_k F_k - eps I (- s I) >= 0
                g[:, :self.n] = -fk
                h = b.f0 - b.eps * eye
                if margin_var:
                    g[:, -1] = eye.ravel()
            gs.append(g)
            hs.append(h)
        gl = np.zeros((0, n))
        hl = np.zeros(0)
        if len(self.bound_rhs):
            gl = np.zeros((len(self.bound_rhs), n))
            gl[:, :self.n] = self.bound_rows
            if margin_var:
                gl[:, -1] = 1.0
            hl = self.bound_rhs.copy()
        return gs, hs, gl, hl

    def equalities(self, n):
        if not self.fixed:
            return None, None
        a = np.zeros((len(self.fixed), n))
        b = np.zeros(len(self.fixed))
        for r, (k, v) in enumerate(sorted(self.fixed.items())):
            a[r, k] = 1.0
            b[r] = v
        return a, b


# cvxopt settings tried in order; the default KKT solver occasionally breaks
# down on these problems and a different refinement/KKT choice recovers it
_ATTEMPTS = ({"refinement": 1}, {"refinement": 1, "kktsolver": "ldl"},
             {"refinement": 2}, {"refinement": 3, "kktsolver": "ldl"})


def _run_sdp(c, gs, hs, gl, hl, a=None, b=None, maxiters=MAX_ITERS):
    args = dict(Gs=[cvxmat(g) for g in gs], hs=[cvxmat(h) for h in hs])
    if len(hl):
        args.update(Gl=cvxmat(gl), hl=cvxmat(hl))
    if a is not None:
        args.update(A=cvxmat(a), b=cvxmat(b))
    fallback = {"status": "error", "x": None, "iterations": 0}
    total = 0
    for attempt in _ATTEMPTS:
        opts = {"show_progress": False, "maxiters": maxiters,
                "abstol": 1e-7, "reltol": 1e-6, "feastol": 1e-7,
                "refinement": attempt["refinement"]}
        try:
            sol = solvers.sdp(cvxmat(c), options=opts, kktsolver=attempt.get("kktsolver"), **args)
        except (ArithmeticError, ValueError) as exc:
            log.debug("cvxopt failed with %s: %s", attempt, exc)
            continue
        total += sol["iterations"]
        sol = dict(sol)
        sol["iterations"] = total
        if sol["status"] in ("optimal", "primal infeasible", "dual infeasible"):
            return sol
        if fallback["x"] is None and sol["x"] is not None:
            fallback = sol
    fallback["iterations"] = max(total, fallback["iterations"])
    return fallback


_RESCUE_BUMPS = (1e-6, 1e-5, 1e-4)


def _max_margin(comp, cap=1.0, maxiters=MAX_ITERS):
    """Largest s (capped) with every constraint satisfied at extra margin s."""
    n = comp.n + 1
    gs, hs, gl, hl = comp.cone_data(margin_var=True)
    row = np.zeros((1, n))
    row[0, -1] = 1.0
    gl = np.vstack([gl, row])
    hl = np.concatenate([hl, [cap]])
    c = np.zeros(n)
    c[-1] = -1.0
    a, b = comp.equalities(n)
    sol = _run_sdp(c, gs, hs, gl, hl, a, b, maxiters=maxiters)
    if sol["x"] is None:
        return -np.inf, None, sol
    x = np.array(sol["x"]).ravel()
    return float(x[-1]), x[:-1], sol


def feasibility_margin(p, eps_strict=STRICT_EPS):
    """Phase-I value: positive iff the problem is strictly feasible."""
    s, _, _ = _max_margin(_Compiled(p, eps_strict))
    return s


def solve(p, eps_strict=STRICT_EPS, maxiters=MAX_ITERS):
    comp = _Compiled(p, eps_strict)
    if comp.n == 0:
        raise StructureError("problem has no variables")
    if p.objective is None:
        s, x, sol = _max_margin(comp, maxiters=maxiters)
        if x is None or s < 0:
            raise Infeasible(f"max-margin phase-I value {s:.3g}")
        return Assignment(comp.assignment(x), None, sol["iterations"], "phase1")
    c = np.zeros(comp.n)
    c[comp.index(p.objective)] = 1.0
    gs, hs, gl, hl = comp.cone_data()
    sol = _run_sdp(c, gs, hs, gl, hl, maxiters=maxiters)
    status = sol["status"]
    if status == "optimal" or (status == "unknown" and sol["x"] is not None
                                and _accept_unknown(comp, np.array(sol["x"]).ravel())):
        x = np.array(sol["x"]).ravel()
        vals = comp.assignment(x)
        return Assignment(vals, float(x[comp.index(p.objective)]), sol["iterations"], "ipm")
    if sol["x"] is not None:
        # the iterate usually has the right objective but a large primal
        # residual; pin the objective just above it and find a feasible point
        z = float(np.array(sol["x"]).ravel()[comp.index(p.objective)])
        for bump in _RESCUE_BUMPS:
            zb = z + bump * max(abs(z), 1e-12)
            s, xf, fsol = _max_margin(comp.with_fixed(p.objective, zb), maxiters=maxiters)
            if xf is not None and s > 0:
                log.info("ipm status %r; feasible point at objective %.9g (+%g rel)", status, zb, bump)
                return Assignment(comp.assignment(xf), zb,
                                  sol["iterations"] + fsol["iterations"], "ipm+phase1")
    s, _, _ = _max_margin(comp, maxiters=maxiters)
    if s < 0:
        raise Infeasible(f"solver status {status!r}, max-margin phase-I value {s:.3g}")
    raise NoCertificate(f"solver status {status!r} after {sol['iterations']} iterations "
                        f"(phase-I margin {s:.3g})")


def _accept_unknown(comp, x):
    # cvxopt stops with 'unknown' when it cannot reach the tight tolerances;
    # the iterate is still usable when it is feasible at the solver tolerance
    for b in comp.blocks:
        f = b.f0 + np.tensordot(x, b.fk, axes=1)
        ev = np.linalg.eigvalsh(symmetrize(f))
        if b.sense == NEGATIVE_DEFINITE and ev[-1] > -0.5 * b.eps:
            return False
        if b.sense == POSITIVE_SEMIDEFINITE and ev[0] < -SOLVER_TOL:
            return False
    if len(comp.bound_rhs) and np.any(comp.bound_rows @ x > comp.bound_rhs + SOLVER_TOL):
        return False
    return True


def solve_bisection(p, lo, hi, eps_strict=STRICT_EPS, maxiters=MAX_ITERS, bits=32):
    """Minimize the scalar objective by bisection over feasibility problems."""
    if p.objective is None:
        raise StructureError("bisection needs a scalar objective")
    if not hi > lo:
        raise ValueError("need lo < hi")
    comp = _Compiled(p, eps_strict)
    var = p.objective

    def feasible(v):
        s, x, _ = _max_margin(comp.with_fixed(var, v), maxiters=maxiters)
        return (s > 0, x)

    ok, x = feasible(hi)
    if not ok:
        raise Infeasible(f"infeasible at objective {hi:g}")
    best = x
    width = (hi - lo) * 2.0 ** -bits
    steps = 0
    a, b = lo, hi
    while b - a > width:
        mid = 0.5 * (a + b)
        ok, x = feasible(mid)
        steps += 1
        if ok:
            b, best = mid, x
        else:
            a = mid
    vals = comp.assignment(best)
    return Assignment(vals, b, steps, "bisection")
