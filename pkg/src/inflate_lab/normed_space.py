"""Norms on R^n and their geometric queries.

A :class:`Norm` is a symmetric convex gauge described by one of four
kinds: ``euclidean``, ``lp`` (any p in [1, inf]), ``polytopal`` (the
gauge of the convex hull of a finite symmetric spanning vertex set) and
``transformed`` (a base norm pushed forward through an invertible
linear map W, so that |x|_{W(a)} = |W^-1 x|_a and W(B_a) = B_{W(a)}).

The queries answered here: evaluation, Lebesgue volume of the unit
ball, the normalizing factor 2^n / H^n(B) that converts the
Euclidean-induced Hausdorff measure into the norm-induced one, and
extremal / strongly-extremal analysis of boundary points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, PreconditionError
from .seeding import rng_for

BOUNDARY_RTOL = 1e-9  # relative tolerance deciding "u lies on the unit sphere"

_QMC_MIN_POINTS = 2 ** 16
_QMC_REPLICATES = 8
_Z99 = 2.5758293035489004  # two-sided 99% normal quantile


@dataclass(frozen=True)
class Norm:
    """A norm on R^dim.  Instances are immutable; all queries are pure."""

    dim: int
    kind: str  # euclidean | lp | polytopal | transformed
    p: Optional[float] = None
    vertices: Optional[np.ndarray] = None
    base: Optional["Norm"] = None
    W: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dim < 1:
            raise PreconditionError("norm dimension must be >= 1")
        if self.kind == "euclidean":
            pass
        elif self.kind == "lp":
            if self.p is None or (self.p != math.inf and not self.p >= 1):
                raise PreconditionError("lp norm requires p in [1, inf]")
        elif self.kind == "polytopal":
            verts = np.asarray(self.vertices, dtype=float)
            if verts.ndim != 2 or verts.shape[1] != self.dim:
                raise PreconditionError("polytopal vertices must be a (k, dim) array")
            if not np.all(np.isfinite(verts)):
                raise PreconditionError("polytopal vertices must be finite")
            _check_symmetric_spanning(verts)
            object.__setattr__(self, "vertices", verts)
        elif self.kind == "transformed":
            if self.base is None or self.base.dim != self.dim:
                raise PreconditionError("transformed norm needs a base norm of the same dim")
            W = np.asarray(self.W, dtype=float)
            if W.shape != (self.dim, self.dim):
                raise PreconditionError("W must be a square dim x dim matrix")
            if abs(np.linalg.det(W)) < 1e-12:
                raise PreconditionError("W must be invertible")
            object.__setattr__(self, "W", W)
        else:
            raise PreconditionError(f"unknown norm kind {self.kind!r}")

    # -- internal cached geometry ------------------------------------

    @cached_property
    def _W_inv(self) -> np.ndarray:
        return np.linalg.inv(self.W)

    @cached_property
    def _facets(self) -> tuple:
        """Facet description (A, c) of the polytopal unit ball: B = {x : A x <= c}."""
        verts = self.vertices
        if self.dim == 1:
            a = float(np.max(np.abs(verts)))
            return np.array([[1.0], [-1.0]]), np.array([a, a])
        from scipy.spatial import ConvexHull

        hull = ConvexHull(verts)
        eq = hull.equations  # rows [normal, offset] with normal.x + offset <= 0 inside
        A = eq[:, :-1]
        c = -eq[:, -1]
        if np.any(c <= 1e-12):
            raise PreconditionError("polytopal vertex hull does not contain 0 in its interior")
        return A, c

    @cached_property
    def _extreme_points(self) -> np.ndarray:
        """True vertex set of the polytopal ball (redundant list entries dropped)."""
        verts = self.vertices
        if self.dim == 1:
            a = float(np.max(np.abs(verts)))
            return np.array([[a], [-a]])
        from scipy.spatial import ConvexHull

        hull = ConvexHull(verts)
        return verts[hull.vertices]


def _check_symmetric_spanning(verts: np.ndarray) -> None:
    n = verts.shape[1]
    if np.linalg.matrix_rank(verts, tol=1e-10) < n:
        raise PreconditionError("polytopal vertices do not span R^n")
    scale = max(1.0, float(np.max(np.abs(verts))))
    for v in verts:
        d = np.min(np.linalg.norm(verts + v, axis=1))
        if d > 1e-9 * scale:
            raise PreconditionError("polytopal vertex list is not symmetric (missing -v)")


# -- constructors ------------------------------------------------------


def euclidean(dim: int) -> Norm:
    return Norm(dim, "euclidean")


def lp(dim: int, p: float) -> Norm:
    return Norm(dim, "lp", p=float(p))


def linf(dim: int) -> Norm:
    return lp(dim, math.inf)


def l1(dim: int) -> Norm:
    return lp(dim, 1.0)


def polytopal(vertices) -> Norm:
    verts = np.asarray(vertices, dtype=float)
    return Norm(verts.shape[1], "polytopal", vertices=verts)


def transformed(base: Norm, W) -> Norm:
    return Norm(base.dim, "transformed", base=base, W=np.asarray(W, dtype=float))


# -- evaluation --------------------------------------------------------


def norm_eval(norm: Norm, x) -> float:
    """Evaluate |x| under the norm.  Exact for every supported kind."""
    x = np.asarray(x, dtype=float)
    if x.shape != (norm.dim,):
        raise DimensionMismatch(f"expected a vector of dim {norm.dim}, got shape {x.shape}")
    return float(_eval_many(norm, x[None, :])[0])


def _eval_many(norm: Norm, xs: np.ndarray) -> np.ndarray:
    """Vectorized evaluation on an (k, dim) array."""
    if norm.kind == "euclidean":
        return np.linalg.norm(xs, axis=1)
    if norm.kind == "lp":
        if norm.p == math.inf:
            return np.max(np.abs(xs), axis=1)
        if norm.p == 1:
            return np.sum(np.abs(xs), axis=1)
        if norm.p == 2:
            return np.linalg.norm(xs, axis=1)
        return np.sum(np.abs(xs) ** norm.p, axis=1) ** (1.0 / norm.p)
    if norm.kind == "polytopal":
        A, c = norm._facets
        return np.max((xs @ A.T) / c, axis=1).clip(min=0.0)
    if norm.kind == "transformed":
        return _eval_many(norm.base, xs @ norm._W_inv.T)
    raise PreconditionError(f"unknown norm kind {norm.kind!r}")


def eval_many(norm: Norm, xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 2 or xs.shape[1] != norm.dim:
        raise DimensionMismatch(f"expected shape (k, {norm.dim}), got {xs.shape}")
    return _eval_many(norm, xs)


def ball_vertices(norm: Norm) -> Optional[np.ndarray]:
    """Extreme points of the unit ball when it is a polytope, else None.

    Used for exact operator norms: a convex function on the ball attains
    its maximum at an extreme point.
    """
    if norm.kind == "polytopal":
        return norm._extreme_points
    if norm.kind == "lp":
        n = norm.dim
        if norm.p == 1:
            eye = np.eye(n)
            return np.concatenate([eye, -eye], axis=0)
        if norm.p == math.inf:
            if n > 20:
                raise PreconditionError("cube vertex enumeration guard: dim > 20")
            from itertools import product

            return np.array(list(product((-1.0, 1.0), repeat=n)))
        return None
    if norm.kind == "transformed":
        base = ball_vertices(norm.base)
        return None if base is None else base @ norm.W.T
    return None


# -- volumes -----------------------------------------------------------


@dataclass(frozen=True)
class VolumeReport:
    value: float
    error_bound: float  # 0 when the value is exact
    method: str


def _euclidean_ball_volume(n: int) -> float:
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


def ball_volume_report(norm: Norm) -> VolumeReport:
    """Lebesgue volume of the unit ball with a quality tag.

    Closed form for euclidean and lp with p in {1, 2, inf}; exact hull
    triangulation for polytopal; |det W| scaling for transformed.  Any
    other lp falls back to scrambled-Sobol quasi-Monte-Carlo with a 99%
    confidence radius.
    """
    n = norm.dim
    if norm.kind == "euclidean":
        return VolumeReport(_euclidean_ball_volume(n), 0.0, "closed-form")
    if norm.kind == "lp":
        if norm.p == math.inf:
            return VolumeReport(2.0 ** n, 0.0, "closed-form")
        if norm.p == 1:
            return VolumeReport(2.0 ** n / math.factorial(n), 0.0, "closed-form")
        if norm.p == 2:
            return VolumeReport(_euclidean_ball_volume(n), 0.0, "closed-form")
        return _qmc_ball_volume(norm)
    if norm.kind == "polytopal":
        if n == 1:
            return VolumeReport(2.0 * float(np.max(np.abs(norm.vertices))), 0.0, "triangulation")
        from scipy.spatial import ConvexHull

        return VolumeReport(float(ConvexHull(norm.vertices).volume), 0.0, "triangulation")
    if norm.kind == "transformed":
        inner = ball_volume_report(norm.base)
        det = abs(float(np.linalg.det(norm.W)))
        return VolumeReport(inner.value * det, inner.error_bound * det, inner.method)
    raise PreconditionError(f"unknown norm kind {norm.kind!r}")


def _qmc_ball_volume(norm: Norm) -> VolumeReport:
    # The ball sits inside [-1, 1]^n for p >= 1, so integrate the indicator there.
    from scipy.stats import qmc

    n = norm.dim
    estimates = []
    for rep in range(_QMC_REPLICATES):
        sampler = qmc.Sobol(d=n, scramble=True, seed=rng_for(20_000_101, rep))
        pts = 2.0 * sampler.random(_QMC_MIN_POINTS) - 1.0
        inside = _eval_many(norm, pts) <= 1.0
        estimates.append(2.0 ** n * float(np.mean(inside)))
    value = float(np.mean(estimates))
    spread = float(np.std(estimates, ddof=1)) if len(estimates) > 1 else 0.0
    radius = _Z99 * spread / math.sqrt(len(estimates))
    return VolumeReport(value, radius, "qmc")


def ball_volume(norm: Norm) -> float:
    return ball_volume_report(norm).value


def vol_of_norm(norm: Norm) -> float:
    """2^n / H^n(B): converts H^n into the norm-induced Hausdorff measure."""
    return 2.0 ** norm.dim / ball_volume(norm)


# -- extremal analysis -------------------------------------------------


@dataclass(frozen=True)
class ExtremalReport:
    point: np.ndarray
    is_boundary: bool
    is_extremal: bool
    is_strongly_extremal: bool
    witness_projection: Optional[np.ndarray] = field(default=None)


def analyze_extremal(norm: Norm, u, boundary_rtol: float = BOUNDARY_RTOL) -> ExtremalReport:
    """Classify a unit-sphere point of the ball.

    A point is extremal when it is not the midpoint of a nondegenerate
    segment contained in the ball, and strongly extremal when some
    supporting functional touches the ball only there.  For the
    supported kinds both can be decided exactly; when the point is
    strongly extremal the returned witness is a rank-one projection P
    onto span{u} with the property that P(w) -> u over the ball forces
    w -> u.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (norm.dim,):
        raise DimensionMismatch(f"expected a vector of dim {norm.dim}, got {u.shape}")
    value = norm_eval(norm, u)
    if abs(value - 1.0) > boundary_rtol:
        raise PreconditionError(f"|u| = {value} is not on the unit sphere (rtol {boundary_rtol})")

    extremal, strongly, functional = _classify(norm, u, boundary_rtol)
    witness = None
    if strongly:
        witness = np.outer(u, functional)  # P w = <x*, w> u, with <x*, u> = 1
    return ExtremalReport(u, True, extremal, strongly, witness)


def _classify(norm: Norm, u: np.ndarray, tol: float):
    """Return (is_extremal, is_strongly_extremal, supporting functional or None)."""
    n = norm.dim
    if norm.kind == "euclidean" or (norm.kind == "lp" and norm.p == 2):
        return True, True, u / float(u @ u)
    if norm.kind == "lp" and 1 < norm.p < math.inf:
        # smooth strictly convex ball: every boundary point is exposed
        x_star = np.sign(u) * np.abs(u) ** (norm.p - 1.0)
        return True, True, x_star / float(x_star @ u)
    if norm.kind == "lp" and norm.p == math.inf:
        at_one = np.abs(np.abs(u) - 1.0) <= 10 * tol
        if np.all(at_one):  # cube vertex
            x_star = np.sign(u) / n
            return True, True, x_star
        return False, False, None  # interior point of a face: a segment midpoint
    if norm.kind == "lp" and norm.p == 1:
        support = np.abs(u) > 10 * tol
        if np.count_nonzero(support) == 1:
            x_star = np.sign(u)  # e.g. e_k for u = e_k
            return True, True, x_star
        return False, False, None
    if norm.kind == "polytopal":
        ext = norm._extreme_points
        scale = float(np.max(np.linalg.norm(ext, axis=1)))
        if np.min(np.linalg.norm(ext - u, axis=1)) <= 1e-8 * scale:
            # every polytope vertex is exposed: average the active facet normals
            A, c = norm._facets
            active = np.abs(A @ u - c) <= 1e-9 * np.maximum(c, 1.0)
            x_star = np.sum(A[active] / c[active, None], axis=0)
            return True, True, x_star / float(x_star @ u)
        return False, False, None
    if norm.kind == "transformed":
        extremal, strongly, functional = _classify(norm.base, norm._W_inv @ u, tol)
        if functional is None:
            return extremal, strongly, None
        return extremal, strongly, norm._W_inv.T @ functional
    raise PreconditionError(f"unknown norm kind {norm.kind!r}")


# -- serialization -----------------------------------------------------


def norm_to_json(norm: Norm) -> dict:
    if norm.kind == "euclidean":
        kind = "euclidean"
    elif norm.kind == "lp":
        kind = {"lp": "inf" if norm.p == math.inf else norm.p}
    elif norm.kind == "polytopal":
        kind = {"polytopal": norm.vertices.tolist()}
    elif norm.kind == "transformed":
        kind = {"transformed": {"base": norm_to_json(norm.base), "W": norm.W.tolist()}}
    else:
        raise PreconditionError(f"unknown norm kind {norm.kind!r}")
    return {"dim": norm.dim, "kind": kind}


def norm_from_json(data: dict) -> Norm:
    try:
        dim = int(data["dim"])
        kind = data["kind"]
    except (KeyError, TypeError) as exc:
        raise PreconditionError(f"invalid norm JSON: {exc}") from exc
    if kind == "euclidean":
        return euclidean(dim)
    if not isinstance(kind, dict):
        raise PreconditionError(f"invalid norm kind {kind!r}")
    if "lp" in kind:
        p = kind["lp"]
        return lp(dim, math.inf if p == "inf" else float(p))
    if "polytopal" in kind:
        verts = np.asarray(kind["polytopal"], dtype=float)
        if verts.ndim != 2 or verts.shape[1] != dim:
            raise PreconditionError("polytopal vertices do not match dim")
        return polytopal(verts)
    if "transformed" in kind:
        body = kind["transformed"]
        return transformed(norm_from_json(body["base"]), np.asarray(body["W"], dtype=float))
    raise PreconditionError(f"invalid norm kind {kind!r}")
