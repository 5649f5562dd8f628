"""Dense small-matrix helpers shared by the LMI, synthesis and verification code.

Matrices are plain ``numpy.ndarray`` values. Symmetric matrices are built from
their upper triangle, which is treated as authoritative.
"""
from dataclasses import dataclass, field

import numpy as np

# strict definiteness margin, relative to max(1, ||m||)
TOL_PD = 1e-8
COND_MAX = 1e12


class StructureError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class SingularMatrixError(NumericError):
    pass


def as_matrix(a):
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2:
        raise StructureError(f"expected a 2-d array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix has non-finite entries")
    return m


def sym(a):
    """Symmetric copy of ``a`` taking the upper triangle as authoritative."""
    m = as_matrix(a)
    if m.shape[0] != m.shape[1]:
        raise StructureError(f"symmetric matrix must be square, got {m.shape}")
    up = np.triu(m)
    return up + np.triu(m, 1).T


def symmetrize(a):
    m = as_matrix(a)
    return 0.5 * (m + m.T)


@dataclass
class BlockSpec:
    """Block layout of a symmetric matrix.

    ``blocks`` maps ``(i, j)`` with ``i <= j`` to an array; missing entries are
    zero. Lower blocks are mirrored from the upper ones when assembled, which
    is the ``*`` convention of starred block LMIs.
    """
    sizes: list
    blocks: dict = field(default_factory=dict)

    def __setitem__(self, key, value):
        i, j = key
        if i > j:
            i, j = j, i
            value = np.asarray(value, dtype=float).T
        self.blocks[(i, j)] = value

    def __getitem__(self, key):
        return self.blocks.get(key)

    @property
    def dim(self):
        return int(sum(self.sizes))

    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)


def assemble_symmetric(spec):
    sizes = list(spec.sizes)
    if not sizes or any(int(s) < 1 for s in sizes):
        raise StructureError(f"block sizes must be positive, got {sizes}")
    off = spec.offsets()
    out = np.zeros((off[-1], off[-1]))
    for (i, j), blk in spec.blocks.items():
        if not (0 <= i < len(sizes) and 0 <= j < len(sizes)):
            raise StructureError(f"block ({i},{j}) outside a {len(sizes)}-block layout")
        if i > j:
            raise StructureError(f"block ({i},{j}) is below the diagonal; give the upper block")
        b = as_matrix(blk)
        if b.shape != (sizes[i], sizes[j]):
            raise StructureError(
                f"block ({i},{j}) has shape {b.shape}, expected {(sizes[i], sizes[j])}")
        if i == j and not np.allclose(b, b.T, rtol=0, atol=1e-12 * (1 + np.abs(b).max())):
            raise StructureError(f"diagonal block ({i},{i}) is not symmetric")
        out[off[i]:off[i + 1], off[j]:off[j + 1]] = b
        if i != j:
            out[off[j]:off[j + 1], off[i]:off[i + 1]] = b.T
    return sym(out)


def eigvalsh(m):
    m = as_matrix(m)
    return np.linalg.eigvalsh(symmetrize(m))


def min_eig(m):
    return float(eigvalsh(m)[0])


def max_eig(m):
    return float(eigvalsh(m)[-1])


def is_pd(m, tol=0.0):
    if tol < 0:
        raise ValueError("tol must be non-negative")
    return min_eig(m) > tol


def is_nd(m, tol=0.0):
    if tol < 0:
        raise ValueError("tol must be non-negative")
    return max_eig(m) < -tol


def pd_margin(m):
    """Scale used with TOL_PD: strict tests compare against TOL_PD * pd_margin(m)."""
    return max(1.0, float(np.abs(as_matrix(m)).max()))


def invert(m):
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise StructureError(f"cannot invert a {m.shape} matrix")
    c = np.linalg.cond(m)
    if not np.isfinite(c) or c > COND_MAX:
        raise SingularMatrixError(f"condition number {c:.3g} exceeds {COND_MAX:.0e}")
    return np.linalg.solve(m, np.eye(m.shape[0]))


def congruence(m, t):
    """Return ``t.T @ m @ t`` (symmetrized)."""
    m = as_matrix(m)
    t = as_matrix(t)
    if m.shape[0] != m.shape[1]:
        raise StructureError(f"congruence needs a square matrix, got {m.shape}")
    if t.shape[0] != m.shape[0]:
        raise StructureError(f"transform has {t.shape[0]} rows, matrix has dim {m.shape[0]}")
    return symmetrize(t.T @ m @ t)


def block_diag(*mats):
    mats = [as_matrix(a) for a in mats]
    rows = sum(a.shape[0] for a in mats)
    cols = sum(a.shape[1] for a in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for a in mats:
        out[r:r + a.shape[0], c:c + a.shape[1]] = a
        r += a.shape[0]
        c += a.shape[1]
    return out


def schur_complement(m, pivot):
    """Complement of the trailing ``pivot``-sized block: A - B D^{-1} B^T."""
    m = symmetrize(m)
    k = m.shape[0] - pivot
    a, b, d = m[:k, :k], m[:k, k:], m[k:, k:]
    return symmetrize(a - b @ invert(d) @ b.T)
