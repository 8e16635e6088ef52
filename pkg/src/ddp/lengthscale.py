"""Dimensionless length-scale roots of the symmetrized conservation balance.

Each observation point gets 2**D root vectors, one per sign pattern over
the D dimensions.  The guaranteed base is the diagonal closed form

    |x_d| = sqrt(|R_d / dH_d|)

which solves the decoupled balance x**2 * dH = R per dimension; a ratio
below zero keeps its magnitude and carries a flag, and |dH| below the
sentinel threshold means no rank movement at all, which maps to an
unbounded length scale (the +inf sentinel).

Cross-dimension coupling is restored by a damped fixed point on the
symmetrized balance.  For dimension d the update is

    x_d  <-  (4 * R_d) / (dh_sum * g_d),    dh_sum = (4 / D) * sum_k dH_k

where g_d is the geometric mean of the other dimensions' |x| (the
dimension's own |x| when it has no finite partner).  The iteration is
damped by 0.5 and runs per sign branch; only the 2**(D-1) branches with a
positive first dimension are iterated and each converged vector is paired
with its exact negation, which keeps the root set closed under a global
sign flip (the balance is quadratic, so roots come in +/- pairs).
Branches that fail to converge fall back to the signed diagonal closed
form and are labeled as such.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig

# |dH| below this has no measurable rank movement: unbounded length scale.
SENTINEL_THRESHOLD = 1e-12

_MAG_HIGH = 1e150
_MAG_LOW = 1e-150


class Convergence(enum.IntEnum):
    CLOSED_FORM = 0  # refinement not applicable; diagonal root used directly
    REFINED = 1      # damped fixed point converged
    FALLBACK = 2     # refinement diverged; diagonal root restored


@dataclass(frozen=True)
class DiagonalRoot:
    magnitude: float  # +inf for the sentinel
    negative_ratio: bool

    @property
    def sentinel(self) -> bool:
        return math.isinf(self.magnitude)


def diagonal_roots(r_value: float, dh_value: float) -> DiagonalRoot:
    """Closed-form per-dimension root magnitude with singularity flags."""
    if abs(dh_value) < SENTINEL_THRESHOLD:
        return DiagonalRoot(magnitude=math.inf, negative_ratio=False)
    ratio = r_value / dh_value
    return DiagonalRoot(magnitude=math.sqrt(abs(ratio)), negative_ratio=ratio < 0.0)


@dataclass
class PointRoots:
    """All 2**D root vectors of one observation point."""

    vectors: np.ndarray        # (2**D, D); +inf on sentinel dimensions
    sentinel: np.ndarray       # (D,) bool
    negative_ratio: np.ndarray # (D,) bool
    convergence: np.ndarray    # (2**D,) Convergence values


@dataclass
class LengthScaleRoots:
    """Root vectors for a whole frame pair, point-major."""

    roots: np.ndarray          # (N, 2**D, D)
    sentinel: np.ndarray       # (N, D) bool
    negative_ratio: np.ndarray # (N, D) bool
    convergence: np.ndarray    # (N, 2**D) uint8

    @property
    def n_points(self) -> int:
        return self.roots.shape[0]

    @property
    def n_dims(self) -> int:
        return self.roots.shape[2]

    def point(self, index: int) -> PointRoots:
        return PointRoots(
            vectors=self.roots[index],
            sentinel=self.sentinel[index],
            negative_ratio=self.negative_ratio[index],
            convergence=self.convergence[index],
        )

    def slice_points(self, start: int, stop: int) -> "LengthScaleRoots":
        return LengthScaleRoots(
            roots=self.roots[start:stop],
            sentinel=self.sentinel[start:stop],
            negative_ratio=self.negative_ratio[start:stop],
            convergence=self.convergence[start:stop],
        )

    def fallback_fraction(self) -> float:
        if self.convergence.size == 0:
            return 0.0
        return float(np.mean(self.convergence == Convergence.FALLBACK))


def _refine_branches(c_signed, z0, finite, max_iter, tol):
    """Damped signed fixed point over a flat batch of branch rows.

    c_signed, z0, finite: (K, D).  Rows are independent.  Returns the final
    state (K, D) and a (K,) convergence mask.  Rows whose iterate leaves
    [1e-150, 1e150] in magnitude or stops being finite are abandoned.
    """
    k, _ = z0.shape
    z = z0.copy()
    converged = np.zeros(k, dtype=bool)
    f_count = finite.sum(axis=1)
    active = np.nonzero(f_count > 0)[0]
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        for _ in range(max_iter):
            if active.size == 0:
                break
            za = z[active]
            fa = finite[active]
            fc = f_count[active][:, None]
            absz = np.abs(za)
            logz = np.where(fa, np.log(np.where(fa, absz, 1.0)), 0.0)
            total = logz.sum(axis=1, keepdims=True)
            partner_log = np.where(fc == 1, logz, (total - logz) / np.maximum(fc - 1, 1))
            update = c_signed[active] / np.exp(partner_log)
            z_new = np.where(fa, 0.5 * za + 0.5 * update, za)
            rel = np.where(fa, np.abs(z_new - za) / (np.abs(za) + 1e-300), 0.0)
            small_step = rel.max(axis=1) < tol
            bad = (
                (~np.isfinite(z_new) | (np.abs(z_new) > _MAG_HIGH) | (np.abs(z_new) < _MAG_LOW))
                & fa
            ).any(axis=1)
            z[active] = z_new
            converged[active[small_step & ~bad]] = True
            active = active[~(small_step | bad)]
    return z, converged


def _sign_table(d: int):
    """Sign patterns per root index: sigma_d = +1 when bit d of the index is 0."""
    idx = np.arange(2 ** d)
    bits = (idx[:, None] >> np.arange(d)[None, :]) & 1
    return idx, 1.0 - 2.0 * bits


def solve_roots(r_matrix, dh_matrix, config: PipelineConfig) -> LengthScaleRoots:
    """Enumerate and refine the 2**D root vectors of every point in a frame.

    r_matrix, dh_matrix: (D, N) rank and Borda-change matrices.
    """
    r_pts = np.asarray(r_matrix, dtype=float).T   # (N, D)
    dh_pts = np.asarray(dh_matrix, dtype=float).T
    if r_pts.shape != dh_pts.shape:
        raise ValueError("rank and Borda-change matrices must share a shape")
    n, d = r_pts.shape
    nroots = 2 ** d

    sentinel = np.abs(dh_pts) < SENTINEL_THRESHOLD
    safe_dh = np.where(sentinel, 1.0, dh_pts)
    ratio = r_pts / safe_dh
    magnitude = np.where(sentinel, np.inf, np.sqrt(np.abs(ratio)))
    negative = ~sentinel & (ratio < 0.0)
    finite = ~sentinel

    idx, sigma_all = _sign_table(d)
    rep_idx = idx[(idx & 1) == 0]           # branches with sigma_0 = +1
    anti_idx = rep_idx ^ (nroots - 1)
    sigma_rep = sigma_all[rep_idx]
    n_rep = rep_idx.size

    roots = sigma_all[None, :, :] * magnitude[:, None, :]
    convergence = np.full((n, nroots), int(Convergence.CLOSED_FORM), dtype=np.uint8)

    dh_sum = (4.0 / d) * dh_pts.sum(axis=1)
    refinable = (np.abs(dh_sum) >= SENTINEL_THRESHOLD) & finite.any(axis=1)
    pts = np.nonzero(refinable)[0]
    if pts.size:
        n_p = pts.size
        coeff = 4.0 * r_pts[pts] / dh_sum[pts][:, None]           # (P, D) signed
        z0 = (sigma_rep[None, :, :] * magnitude[pts][:, None, :]).reshape(n_p * n_rep, d)
        fin = np.broadcast_to(
            finite[pts][:, None, :], (n_p, n_rep, d)
        ).reshape(n_p * n_rep, d)
        c_rows = np.broadcast_to(
            coeff[:, None, :], (n_p, n_rep, d)
        ).reshape(n_p * n_rep, d)
        z, conv = _refine_branches(
            c_rows, z0, fin, config.refinement_max_iter, config.refinement_tol
        )
        z = z.reshape(n_p, n_rep, d)
        conv = conv.reshape(n_p, n_rep)
        for b in range(n_rep):
            ri, ai = int(rep_idx[b]), int(anti_idx[b])
            good = pts[conv[:, b]]
            roots[good, ri] = z[conv[:, b], b]
            roots[good, ai] = -z[conv[:, b], b]
            convergence[good, ri] = Convergence.REFINED
            convergence[good, ai] = Convergence.REFINED
            failed = pts[~conv[:, b]]
            convergence[failed, ri] = Convergence.FALLBACK
            convergence[failed, ai] = Convergence.FALLBACK

    # sentinel dimensions carry a sign-free +inf in every vector
    roots = np.where(sentinel[:, None, :], np.inf, roots)
    return LengthScaleRoots(
        roots=roots,
        sentinel=sentinel,
        negative_ratio=negative,
        convergence=convergence,
    )


def enumerate_roots(r_vector, dh_vector, config: PipelineConfig) -> PointRoots:
    """All 2**D root vectors of a single observation point."""
    r_vector = np.atleast_1d(np.asarray(r_vector, dtype=float))
    dh_vector = np.atleast_1d(np.asarray(dh_vector, dtype=float))
    batch = solve_roots(r_vector[:, None], dh_vector[:, None], config)
    return batch.point(0)
