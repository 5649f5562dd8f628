"""Interval type-2 Takagi-Sugeno plant and controller descriptions.

Each rule carries lower/upper membership grades of a scalar premise variable.
The effective grade of rule ``l`` is ``upper * (1 - rho(x)) + lower * rho(x)``
where ``rho`` is a state-dependent lower weight in [0, 1]; weights are then
normalized across rules so blended matrices are convex combinations.
"""
from dataclasses import dataclass, field

import numpy as np

from .matkernel import StructureError, as_matrix


class DegenerateMembership(ValueError):
    pass


@dataclass(frozen=True)
class FuzzyRule:
    A: np.ndarray
    Ad: np.ndarray
    B: np.ndarray
    Bd: np.ndarray

    def __post_init__(self):
        for name in ("A", "Ad", "B", "Bd"):
            object.__setattr__(self, name, as_matrix(getattr(self, name)))
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.Ad.shape != (n, n):
            raise StructureError(f"A and Ad must be {n}x{n}, got {self.A.shape}, {self.Ad.shape}")
        if self.B.shape[0] != n or self.Bd.shape != self.B.shape:
            raise StructureError(f"B and Bd must be {n}xw and equal, got {self.B.shape}, {self.Bd.shape}")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def w(self):
        return self.B.shape[1]


# --- membership grades -------------------------------------------------------

@dataclass(frozen=True)
class GaussianGrade:
    """Upper exp(-(z-c)^2 / 2 su^2), lower scale * exp(-(z-c)^2 / 2 sl^2)."""
    center: float
    sigma_upper: float = 1.2
    sigma_lower: float = 0.8
    lower_scale: float = 0.8

    def __post_init__(self):
        if self.sigma_lower > self.sigma_upper or not 0 < self.lower_scale <= 1:
            raise StructureError("need sigma_lower <= sigma_upper and 0 < lower_scale <= 1")

    def upper(self, z):
        return float(np.exp(-(z - self.center) ** 2 / (2 * self.sigma_upper ** 2)))

    def lower(self, z):
        return float(self.lower_scale * np.exp(-(z - self.center) ** 2 / (2 * self.sigma_lower ** 2)))


@dataclass(frozen=True)
class TriangularGrade:
    """Triangle on [a, c] peaking at b; the lower grade is a scaled, narrower triangle."""
    a: float
    b: float
    c: float
    shrink: float = 0.5
    lower_scale: float = 0.8

    def _tri(self, z, a, b, c):
        if z <= a or z >= c:
            return 1.0 if z == b else 0.0
        return (z - a) / (b - a) if z <= b else (c - z) / (c - b)

    def upper(self, z):
        return self._tri(z, self.a, self.b, self.c)

    def lower(self, z):
        a = self.b - self.shrink * (self.b - self.a)
        c = self.b + self.shrink * (self.c - self.b)
        return self.lower_scale * self._tri(z, a, self.b, c)


GRADES = {"gaussian": GaussianGrade, "triangular": TriangularGrade}


# --- lower/upper weighting functions -----------------------------------------

@dataclass(frozen=True)
class SinSquaredWeight:
    """rho_lower(x) = sin^2(x[index])."""
    index: int = 1

    def __call__(self, x):
        return float(np.sin(x[self.index]) ** 2)


@dataclass(frozen=True)
class ConstantWeight:
    value: float = 0.5

    def __call__(self, x):
        return float(self.value)


WEIGHTS = {"sin2": SinSquaredWeight, "constant": ConstantWeight}


@dataclass(frozen=True)
class It2MembershipFn:
    grade: object
    lower_weight: object = field(default_factory=SinSquaredWeight)

    def lower(self, z):
        return self.grade.lower(z)

    def upper(self, z):
        return self.grade.upper(z)

    def weight_lower(self, x):
        return self.lower_weight(x)

    def weight_upper(self, x):
        return 1.0 - self.lower_weight(x)

    def effective(self, z, x):
        rl = self.weight_lower(x)
        return self.upper(z) * (1.0 - rl) + self.lower(z) * rl


@dataclass(frozen=True)
class Premise:
    """Premise variable z = x[index] + offset."""
    index: int = 1
    offset: float = 0.0

    def __call__(self, x):
        return float(x[self.index]) + self.offset


def _normalized(memberships, premise, x):
    x = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("state has non-finite entries")
    z = premise(x)
    raw = np.array([mf.effective(z, x) for mf in memberships])
    total = raw.sum()
    if not total > 0:
        raise DegenerateMembership(f"all rule strengths vanish at premise {z:g}")
    return raw / total


def _check_weight_indices(memberships, n):
    for k, mf in enumerate(memberships):
        idx = getattr(mf.lower_weight, "index", None)
        if idx is not None and not 0 <= idx < n:
            raise StructureError(f"membership {k + 1} weights on x[{idx}], state dim is {n}")


@dataclass(frozen=True)
class It2Plant:
    rules: tuple
    memberships: tuple
    premise: Premise = field(default_factory=Premise)

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        object.__setattr__(self, "memberships", tuple(self.memberships))
        if not self.rules:
            raise StructureError("a plant needs at least one rule")
        if len(self.memberships) != len(self.rules):
            raise StructureError(
                f"{len(self.rules)} rules but {len(self.memberships)} membership functions")
        n, w = self.rules[0].n, self.rules[0].w
        for k, r in enumerate(self.rules):
            if (r.n, r.w) != (n, w):
                raise StructureError(f"rule {k + 1} has dims {(r.n, r.w)}, expected {(n, w)}")
        if not 0 <= self.premise.index < n:
            raise StructureError(f"premise index {self.premise.index} outside state dim {n}")
        _check_weight_indices(self.memberships, n)

    @property
    def r(self):
        return len(self.rules)

    @property
    def n(self):
        return self.rules[0].n

    @property
    def w(self):
        return self.rules[0].w


@dataclass(frozen=True)
class It2ControllerShape:
    memberships: tuple
    premise: Premise = field(default_factory=Premise)

    def __post_init__(self):
        object.__setattr__(self, "memberships", tuple(self.memberships))

    @property
    def r(self):
        return len(self.memberships)

    @classmethod
    def matching(cls, plant):
        return cls(plant.memberships, plant.premise)


def firing_strengths(plant, x):
    return _normalized(plant.memberships, plant.premise, x)


def controller_strengths(ctrl, x):
    return _normalized(ctrl.memberships, ctrl.premise, x)


def _check_weights(w, r):
    w = np.asarray(w, dtype=float).ravel()
    if w.shape != (r,):
        raise StructureError(f"expected {r} weights, got {w.shape[0]}")
    return w


def blend(plant, w):
    """Convex combinations (A_mu, Ad_mu, B_mu, Bd_mu) of the rule matrices."""
    w = _check_weights(w, plant.r)
    out = []
    for name in ("A", "Ad", "B", "Bd"):
        out.append(sum(wl * getattr(rule, name) for wl, rule in zip(w, plant.rules)))
    return tuple(out)


def blend_gains(gains, h):
    h = _check_weights(h, len(gains))
    return sum(hl * np.asarray(k) for hl, k in zip(h, gains))


def closed_loop_matrices(plant, w, h, gains):
    """(Phi, Phi_d) = sum_l sum_m w_l h_m (A_l + B_l K_m, Ad_l + Bd_l K_m)."""
    w = _check_weights(w, plant.r)
    h = _check_weights(h, len(gains))
    for k in gains:
        if np.shape(k) != (plant.w, plant.n):
            raise StructureError(f"gain shape {np.shape(k)}, expected {(plant.w, plant.n)}")
    a, ad, b, bd = blend(plant, w)
    k = blend_gains(gains, h)
    return a + b @ k, ad + bd @ k
