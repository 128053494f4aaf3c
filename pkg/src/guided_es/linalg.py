"""Vector helpers and uniform sampling of orthonormal direction sets.

Directions are stored row-wise: an :class:`OrthoSet` of ``p`` directions in
``R^n`` wraps a read-only ``(p, n)`` float64 array.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

ORTHO_TOL = 1e-10
UNIT_TOL = 1e-12
DROP_TOL = 1e-10
MAX_REDRAWS = 8


class DimensionError(ValueError):
    pass


class DegenerateVectorError(ValueError):
    pass


def _vec(a) -> np.ndarray:
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-d vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class OrthoSet:
    """Ordered set of pairwise-orthonormal unit directions (rows)."""

    directions: np.ndarray
    ambient_dim: int

    def __post_init__(self):
        d = np.array(self.directions, dtype=np.float64).reshape(-1, self.ambient_dim)
        d.setflags(write=False)
        object.__setattr__(self, "directions", d)
        if d.shape[0] > self.ambient_dim:
            raise DimensionError(f"{d.shape[0]} directions exceed ambient dim {self.ambient_dim}")

    @classmethod
    def empty(cls, n: int) -> "OrthoSet":
        return cls(np.zeros((0, n)), n)

    @classmethod
    def from_rows(cls, rows, check: bool = True) -> "OrthoSet":
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        out = cls(rows, rows.shape[1])
        if check:
            out.check()
        return out

    @property
    def count(self) -> int:
        return self.directions.shape[0]

    def __len__(self) -> int:
        return self.count

    def __iter__(self):
        return iter(self.directions)

    def gram_error(self) -> tuple[float, float]:
        """Largest off-diagonal |<d_i, d_j>| and largest | |d_i| - 1 |."""
        if self.count == 0:
            return 0.0, 0.0
        g = self.directions @ self.directions.T
        off = np.abs(g - np.diag(np.diag(g)))
        norms = np.linalg.norm(self.directions, axis=1)
        return float(off.max()), float(np.abs(norms - 1.0).max())

    def check(self, ortho_tol: float = ORTHO_TOL, unit_tol: float = UNIT_TOL) -> None:
        off, unit = self.gram_error()
        if off > ortho_tol or unit > unit_tol:
            raise DegenerateVectorError(
                f"not orthonormal: max |<d_i,d_j>| = {off:.3g}, max | |d|-1 | = {unit:.3g}")

    def concat(self, other: "OrthoSet") -> "OrthoSet":
        if other.ambient_dim != self.ambient_dim:
            raise DimensionError("ambient dimensions differ")
        return OrthoSet(np.vstack([self.directions, other.directions]), self.ambient_dim)


def dot(a, b) -> float:
    a, b = _vec(a), _vec(b)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(a @ b)


def norm(a) -> float:
    return float(np.linalg.norm(_vec(a)))


def cosine(a, b) -> float:
    a, b = _vec(a), _vec(b)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("cosine of a zero-norm vector is undefined")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def project_onto_span(v, basis: OrthoSet) -> np.ndarray:
    v = _vec(v)
    if basis.count == 0:
        raise DimensionError("empty basis")
    if v.shape[0] != basis.ambient_dim:
        raise DimensionError(f"vector of length {v.shape[0]} vs basis dim {basis.ambient_dim}")
    d = basis.directions
    return (d @ v) @ d


def _remove_span(m: np.ndarray, d: np.ndarray) -> np.ndarray:
    # Two passes of classical Gram-Schmidt against the rows of d.
    for _ in range(2):
        m = m - (m @ d.T) @ d
    return m


def gram_schmidt(vectors: Sequence, tol: float = DROP_TOL) -> tuple[OrthoSet, int]:
    """Orthonormalize ``vectors`` in order.

    A vector whose residual after removing the span of its predecessors is
    below ``tol`` times its own norm is dropped. Returns the set and the
    number of dropped inputs.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rows = [_vec(v) for v in vectors]
    if not rows:
        raise DimensionError("no vectors given; use OrthoSet.empty(n)")
    n = rows[0].shape[0]
    kept: list[np.ndarray] = []
    dropped = 0
    for v in rows:
        if v.shape[0] != n:
            raise DimensionError("vectors of differing lengths")
        scale = np.linalg.norm(v)
        r = v.copy()
        if kept:
            r = _remove_span(r[None, :], np.array(kept))[0]
        rn = np.linalg.norm(r)
        if scale == 0.0 or rn < tol * scale:
            dropped += 1
            continue
        kept.append(r / rn)
    return OrthoSet(np.array(kept).reshape(-1, n), n), dropped


def _haar_frames(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR of stacked Gaussian ``(..., n, p)`` blocks with sign fix.

    Multiplying each column of Q by sign(R_ii) makes the frame Haar
    distributed. Returns frames as ``(..., p, n)`` and |R_ii|.
    """
    q, r = np.linalg.qr(g)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    signs = np.where(diag < 0, -1.0, 1.0)
    q = q * signs[..., None, :]
    return np.swapaxes(q, -1, -2), np.abs(diag)


def _orthonormal_rows(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormalize the rows of a ``(p, n)`` block in order, positive pivots.

    Tall blocks use Cholesky QR applied twice; the positive-pivot factor is
    unique, so this matches Householder QR with the sign fix up to rounding.
    """
    p, n = rows.shape
    if n >= 4 * p:
        try:
            q = rows
            pivots = None
            for _ in range(2):
                chol = np.linalg.cholesky(q @ q.T)
                q = solve_triangular(chol, q, lower=True)
                pivots = np.diag(chol) if pivots is None else pivots * np.diag(chol)
            return q, pivots
        except np.linalg.LinAlgError:
            pass
    frames, pivots = _haar_frames(rows.T)
    return frames, pivots


def _sample_frame(n: int, p: int, rng: np.random.Generator, constraint: np.ndarray | None) -> np.ndarray:
    for _ in range(MAX_REDRAWS + 1):
        g = rng.standard_normal((p, n))
        if constraint is not None and constraint.shape[0]:
            g = _remove_span(g, constraint)
        frame, pivots = _orthonormal_rows(g)
        if pivots.min() >= DROP_TOL * np.sqrt(n):
            if constraint is not None and constraint.shape[0]:
                frame = _remove_span(frame, constraint)
                frame /= np.linalg.norm(frame, axis=1, keepdims=True)
            return frame
    raise DegenerateVectorError(f"degenerate Gaussian draw persisted after {MAX_REDRAWS} redraws")


def sample_orthonormal(n: int, p: int, rng=None) -> OrthoSet:
    """``p`` pairwise-orthonormal directions, each marginally uniform on the sphere."""
    if not 1 <= p <= n:
        raise DimensionError(f"need 1 <= p <= n, got p={p}, n={n}")
    rng = np.random.default_rng(rng)
    return OrthoSet(_sample_frame(n, p, rng, None), n)


def sample_orthonormal_stack(n: int, p: int, size: int, rng=None) -> np.ndarray:
    """``size`` independent frames as a ``(size, p, n)`` array.

    Same construction as :func:`sample_orthonormal`, vectorized for Monte-Carlo work.
    """
    if not 1 <= p <= n:
        raise DimensionError(f"need 1 <= p <= n, got p={p}, n={n}")
    rng = np.random.default_rng(rng)
    frames, pivots = _haar_frames(rng.standard_normal((size, n, p)))
    bad = np.flatnonzero(pivots.min(axis=1) < DROP_TOL * np.sqrt(n))
    for i in bad:
        frames[i] = _sample_frame(n, p, rng, None)
    return frames


def sample_orthogonal_complement(basis: OrthoSet, p: int, rng=None) -> OrthoSet:
    """``p`` orthonormal directions drawn uniformly from the complement of ``basis``."""
    n = basis.ambient_dim
    if p < 0 or p + basis.count > n:
        raise DimensionError(f"cannot fit {p} directions beside {basis.count} in dimension {n}")
    if p == 0:
        return OrthoSet.empty(n)
    rng = np.random.default_rng(rng)
    return OrthoSet(_sample_frame(n, p, rng, basis.directions), n)
