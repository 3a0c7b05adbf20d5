"""Constructive approximators: zigzags, inflated affine maps, gluing.

The pieces assembled here:

* zigzag curves: piecewise-affine curves with derivative exactly +-u
  per segment that uniformly track a straight line of shorter velocity;
* inflate_affine: turn an affine map plus an inflation certificate into
  a piecewise-affine map whose every cell differential is a sign
  permutation of the inflated map, so the cell operator norms and cell
  volumes are known exactly;
* glue_patches: the bump-function extension that merges local patch
  maps into the base map at the cost of + 4 delta on the Lipschitz
  constant;
* inflate_on_set: the grid-scale pipeline (local affine fit, generic
  position nudge, per-cell certificate, per-cell inflation, glue) that
  pushes the Jacobian integral of a 1-Lipschitz map up to a target
  fraction of the domain measure while staying uniformly close to it;
* the two quantitative margins: the lower semi-continuity radius
  delta = (1 - eta^(1/n)) / (2 ||A^-1||) and the averaging threshold
  eps = delta / (K N).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from . import normed_space as ns
from .errors import DimensionMismatch, NumericalFailure, PreconditionError
from .geometry import (GridSubset, as_box, box_overlap, domain_box,
                       domain_measure, sample_box, shrink_box)
from .linear_analysis import (LinearMap, InflationCertificate, is_full_rank,
                              operator_norm, verify_certificate, vol_matrix,
                              euclidean_inflation, inflation_search, _is_euclidean)
from .seeding import rng_for

_MAX_SEGMENTS = 2_000_000
_MAX_LINEAR_COMBOS = 65_536


# -- zigzag curves -----------------------------------------------------------


@dataclass(frozen=True)
class ZigzagCurve:
    """Piecewise-affine curve with derivative exactly +-direction per segment.

    Between consecutive breakpoints t_k < t_{k+1} the curve moves with
    constant derivative ``segment_directions[k] * direction_vector``;
    the nondifferentiability set is the finite interior breakpoint set.
    """

    breakpoints: np.ndarray        # (K+1,) strictly increasing
    segment_directions: np.ndarray  # (K,) values in {+1, -1}
    direction_vector: np.ndarray   # u in R^m
    anchor: np.ndarray             # value at breakpoints[0]

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        s = np.asarray(self.segment_directions, dtype=float)
        if b.ndim != 1 or b.shape[0] < 2 or np.any(np.diff(b) <= 0):
            raise PreconditionError("breakpoints must be strictly increasing, length >= 2")
        if s.shape != (b.shape[0] - 1,) or not np.all(np.isin(s, (-1.0, 1.0))):
            raise PreconditionError("segment_directions must be +-1 per segment")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "segment_directions", s)
        object.__setattr__(self, "direction_vector", np.asarray(self.direction_vector, dtype=float))
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float))

    @cached_property
    def _coefficients(self) -> np.ndarray:
        """Scalar coefficient of direction_vector at each breakpoint."""
        steps = self.segment_directions * np.diff(self.breakpoints)
        return np.concatenate([[0.0], np.cumsum(steps)])

    def eval_many(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        idx = np.clip(np.searchsorted(self.breakpoints, ts, side="right") - 1,
                      0, self.segment_directions.shape[0] - 1)
        coef = self._coefficients[idx] + self.segment_directions[idx] * (ts - self.breakpoints[idx])
        return self.anchor[None, :] + coef[:, None] * self.direction_vector[None, :]

    def __call__(self, t: float) -> np.ndarray:
        return self.eval_many(np.array([t]))[0]

    def derivative(self, t: float) -> np.ndarray:
        idx = int(np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1,
                          0, self.segment_directions.shape[0] - 1))
        return self.segment_directions[idx] * self.direction_vector

    def as_coordinate_curve(self) -> "CoordinateCurve":
        slopes = self.segment_directions[:, None] * self.direction_vector[None, :]
        return CoordinateCurve(self.breakpoints, slopes, self.anchor)


def zigzag_curve(a_vec, u, eps: float, interval,
                 vec_len: Callable[[np.ndarray], float] = None) -> ZigzagCurve:
    """Zigzag with derivative +-u tracking the line t -> t * a_vec within eps.

    Requires u parallel to a_vec with |u| >= |a_vec| (speed never below
    the target's), or a_vec = 0, in which case the curve is a triangle
    wave of amplitude below eps in span{u}.  ``vec_len`` measures the
    deviation (Euclidean by default; pass a norm evaluation to budget
    deviations in a different norm).
    """
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    a_vec = np.asarray(a_vec, dtype=float)
    u = np.asarray(u, dtype=float)
    if a_vec.shape != u.shape:
        raise DimensionMismatch("direction and line vector dims differ")
    lo, hi = float(interval[0]), float(interval[1])
    if hi <= lo:
        raise PreconditionError("interval must be nondegenerate")
    length = vec_len if vec_len is not None else (lambda v: float(np.linalg.norm(v)))

    len_a = length(a_vec)
    len_u = length(u)
    span = hi - lo
    if len_u == 0.0:
        raise PreconditionError("direction not admissible: u = 0")

    if len_a == 0.0:
        # A = 0: triangle wave; each half-mesh climbs half * |u| <= 0.9 eps
        h = 0.9 * eps / len_u
        meshes = max(1, math.ceil(span / (2.0 * h)))
        _guard_segments(2 * meshes)
        half = span / (2.0 * meshes)
        breaks = lo + np.arange(2 * meshes + 1) * half
        breaks[-1] = hi
        signs = np.tile([1.0, -1.0], meshes)
        return ZigzagCurve(breaks, signs, u, np.zeros_like(u))

    cos = float(a_vec @ u) / (np.linalg.norm(a_vec) * np.linalg.norm(u))
    if abs(abs(cos) - 1.0) > 1e-9:
        raise PreconditionError("direction not admissible: u is not parallel to A(1)")
    kappa = math.copysign(len_u / len_a, cos)
    if abs(kappa) < 1.0 - 1e-12:
        raise PreconditionError(f"direction not admissible: |kappa| = {abs(kappa)} < 1")

    anchor = lo * a_vec
    if abs(kappa) <= 1.0 + 1e-12 or span * (kappa * kappa - 1.0) * len_a / (2.0 * abs(kappa)) <= 0.9 * eps:
        # single affine segment already stays within budget
        sign = 1.0 if kappa > 0 else -1.0
        return ZigzagCurve(np.array([lo, hi]), np.array([sign]), u, anchor)

    h = 1.8 * eps * abs(kappa) / ((kappa * kappa - 1.0) * len_a)
    meshes = max(1, math.ceil(span / h))
    _guard_segments(2 * meshes)
    h = span / meshes
    alpha = h * (kappa + 1.0) / (2.0 * kappa)
    breaks = [lo]
    signs = []
    for j in range(meshes):
        start = lo + j * h
        end = hi if j == meshes - 1 else start + h
        turn = start + alpha
        if turn > start + 1e-15 and turn < end - 1e-15:
            breaks.extend([turn, end])
            signs.extend([1.0, -1.0])
        else:
            breaks.append(end)
            signs.append(1.0 if alpha >= h / 2 else -1.0)
    return ZigzagCurve(np.asarray(breaks), np.asarray(signs), u, anchor)


def _guard_segments(count: int) -> None:
    if count > _MAX_SEGMENTS:
        raise NumericalFailure(f"zigzag resolution guard: {count} segments requested")


# -- piecewise-affine maps ---------------------------------------------------


@dataclass(frozen=True)
class CoordinateCurve:
    """Continuous piecewise-affine curve R -> R^m with arbitrary per-segment slopes."""

    breakpoints: np.ndarray  # (K+1,)
    slopes: np.ndarray       # (K, m)
    anchor: np.ndarray       # value at breakpoints[0]

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        s = np.asarray(self.slopes, dtype=float)
        if b.ndim != 1 or b.shape[0] < 2 or np.any(np.diff(b) <= 0):
            raise PreconditionError("breakpoints must be strictly increasing")
        if s.ndim != 2 or s.shape[0] != b.shape[0] - 1:
            raise PreconditionError("need one slope vector per segment")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "slopes", s)
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float))

    @cached_property
    def _values(self) -> np.ndarray:
        steps = self.slopes * np.diff(self.breakpoints)[:, None]
        return np.concatenate([self.anchor[None, :],
                               self.anchor[None, :] + np.cumsum(steps, axis=0)], axis=0)

    @cached_property
    def _unique_slopes(self):
        uniq, inverse = np.unique(self.slopes, axis=0, return_inverse=True)
        return uniq, inverse.ravel()

    @property
    def segment_count(self) -> int:
        return self.slopes.shape[0]

    def segment_index(self, ts: np.ndarray) -> np.ndarray:
        return np.clip(np.searchsorted(self.breakpoints, ts, side="right") - 1,
                       0, self.segment_count - 1)

    def eval_many(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        idx = self.segment_index(ts)
        return self._values[idx] + self.slopes[idx] * (ts - self.breakpoints[idx])[:, None]


@dataclass(frozen=True)
class PiecewiseAffineMap:
    """Continuous map g(x) = anchor + sum_d curve_d(t_d(x)) on a box.

    ``t`` are the coordinates of x in the construction basis (columns of
    ``basis``); the cell partition is the product of the per-direction
    segment grids, so the map is affine on every cell and continuous by
    construction.  The differential on the cell with segment indices
    (i_1..i_n) is the matrix with columns slope_d(i_d) composed with the
    coordinate map, hence there are only as many distinct differentials
    as distinct slope combinations.
    """

    curves: tuple
    basis: np.ndarray              # (n, n) invertible; t(x) = basis^-1 x
    anchor_value: np.ndarray       # constant offset in R^m
    domain: np.ndarray             # (n, 2) box
    domain_norm: ns.Norm
    codomain_norm: ns.Norm
    declared_lip: float = math.inf
    constant_cell_vol: Optional[float] = None
    affine_ref: Optional[tuple] = None  # (matrix, offset, sup deviation bound)

    def __post_init__(self):
        object.__setattr__(self, "basis", np.asarray(self.basis, dtype=float))
        object.__setattr__(self, "anchor_value", np.asarray(self.anchor_value, dtype=float))
        object.__setattr__(self, "domain", as_box(self.domain))
        object.__setattr__(self, "curves", tuple(self.curves))
        if len(self.curves) != self.n:
            raise DimensionMismatch("one coordinate curve per domain dimension required")

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def m(self) -> int:
        return self.anchor_value.shape[0]

    @cached_property
    def coord_map(self) -> np.ndarray:
        return np.linalg.inv(self.basis)

    @cached_property
    def _det_coord(self) -> float:
        return abs(float(np.linalg.det(self.coord_map)))

    @property
    def identity_basis(self) -> bool:
        return bool(np.allclose(self.basis, np.eye(self.n), atol=1e-14))

    def t_coords(self, xs: np.ndarray) -> np.ndarray:
        return xs @ self.coord_map.T

    def eval_many(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        if xs.ndim != 2 or xs.shape[1] != self.n:
            raise DimensionMismatch(f"expected (N, {self.n}) points")
        ts = self.t_coords(xs)
        out = np.tile(self.anchor_value, (xs.shape[0], 1))
        for d, curve in enumerate(self.curves):
            out += curve.eval_many(ts[:, d])
        return out

    def __call__(self, x) -> np.ndarray:
        return self.eval_many(np.asarray(x, dtype=float)[None, :])[0]

    def cell_shape(self) -> tuple:
        return tuple(c.segment_count for c in self.curves)

    def cell_linear(self, index) -> np.ndarray:
        cols = np.stack([self.curves[d].slopes[index[d]] for d in range(self.n)], axis=1)
        return cols @ self.coord_map

    def distinct_linears(self) -> np.ndarray:
        """All distinct cell differentials, shape (k, m, n)."""
        uniques = [c._unique_slopes[0] for c in self.curves]
        count = int(np.prod([u.shape[0] for u in uniques]))
        if count > _MAX_LINEAR_COMBOS:
            raise NumericalFailure("too many distinct cell differentials to enumerate")
        grids = np.meshgrid(*[np.arange(u.shape[0]) for u in uniques], indexing="ij")
        combos = np.stack([g.ravel() for g in grids], axis=1)
        out = np.empty((combos.shape[0], self.m, self.n))
        for row, combo in enumerate(combos):
            cols = np.stack([uniques[d][combo[d]] for d in range(self.n)], axis=1)
            out[row] = cols @ self.coord_map
        return out

    def exact_lipschitz(self) -> float:
        """Largest cell operator norm: the exact Lipschitz constant of the map."""
        return max(
            operator_norm(LinearMap(M, self.domain_norm, self.codomain_norm))
            for M in self.distinct_linears()
        )

    def cell_vol_table(self):
        """(vols, axis slope index arrays) with vols indexed by unique-slope combos."""
        uniq = [c._unique_slopes for c in self.curves]
        shapes = [u[0].shape[0] for u in uniq]
        if int(np.prod(shapes)) > _MAX_LINEAR_COMBOS:
            raise NumericalFailure("cell volume table too large")
        vols = np.empty(shapes)
        it = np.nditer(vols, flags=["multi_index"], op_flags=["writeonly"])
        while not it.finished:
            combo = it.multi_index
            cols = np.stack([uniq[d][0][combo[d]] for d in range(self.n)], axis=1)
            it[0] = vol_matrix(cols) * self._det_coord
            it.iternext()
        return vols, [u[1] for u in uniq]

    def continuity_defect(self, samples: int = 64, seed: int = 0) -> float:
        """Largest jump across interior facets, probed at paired points."""
        rng = rng_for(seed, 404)
        worst = 0.0
        for d, curve in enumerate(self.curves):
            interior = curve.breakpoints[1:-1]
            if interior.size == 0:
                continue
            picks = rng.choice(interior, size=min(samples, interior.size), replace=False)
            for t_star in picks:
                ts = rng.random(self.n)
                base = np.array([c.breakpoints[0] * (1 - s) + c.breakpoints[-1] * s
                                 for c, s in zip(self.curves, ts)])
                base[d] = t_star
                x = self.basis @ base
                h = 1e-9 * max(1.0, abs(t_star))
                lo = base.copy()
                lo[d] = t_star - h
                hi = base.copy()
                hi[d] = t_star + h
                v_lo = self.eval_many((self.basis @ lo)[None, :])[0]
                v_hi = self.eval_many((self.basis @ hi)[None, :])[0]
                worst = max(worst, float(np.max(np.abs(v_hi - v_lo))) )
                _ = x
        return worst

    def to_json(self) -> dict:
        return {
            "basis": self.basis.tolist(),
            "anchor_value": self.anchor_value.tolist(),
            "domain": self.domain.tolist(),
            "domain_norm": ns.norm_to_json(self.domain_norm),
            "codomain_norm": ns.norm_to_json(self.codomain_norm),
            "declared_lip": self.declared_lip,
            "constant_cell_vol": self.constant_cell_vol,
            "affine_ref": None if self.affine_ref is None else {
                "matrix": self.affine_ref[0].tolist(),
                "offset": self.affine_ref[1].tolist(),
                "deviation": self.affine_ref[2],
            },
            "curves": [
                {
                    "breakpoints": c.breakpoints.tolist(),
                    "slopes": c.slopes.tolist(),
                    "anchor": c.anchor.tolist(),
                }
                for c in self.curves
            ],
        }

    @staticmethod
    def from_json(data: dict) -> "PiecewiseAffineMap":
        curves = tuple(
            CoordinateCurve(np.asarray(c["breakpoints"], dtype=float),
                            np.asarray(c["slopes"], dtype=float),
                            np.asarray(c["anchor"], dtype=float))
            for c in data["curves"]
        )
        ref = data.get("affine_ref")
        return PiecewiseAffineMap(
            curves=curves,
            basis=np.asarray(data["basis"], dtype=float),
            anchor_value=np.asarray(data["anchor_value"], dtype=float),
            domain=np.asarray(data["domain"], dtype=float),
            domain_norm=ns.norm_from_json(data["domain_norm"]),
            codomain_norm=ns.norm_from_json(data["codomain_norm"]),
            declared_lip=float(data["declared_lip"]),
            constant_cell_vol=data.get("constant_cell_vol"),
            affine_ref=None if ref is None else (
                np.asarray(ref["matrix"], dtype=float),
                np.asarray(ref["offset"], dtype=float),
                float(ref["deviation"]),
            ),
        )

    def cell_records(self, max_cells: int = 100_000):
        """Yield (index, t_box, linear, offset) per cell, for CSV export."""
        shape = self.cell_shape()
        if int(np.prod(shape)) > max_cells:
            raise NumericalFailure(f"cell export guard: {int(np.prod(shape))} cells > {max_cells}")
        from itertools import product as iproduct

        for index in iproduct(*[range(k) for k in shape]):
            t_box = np.array([[self.curves[d].breakpoints[index[d]],
                               self.curves[d].breakpoints[index[d] + 1]] for d in range(self.n)])
            linear = self.cell_linear(index)
            corner_t = t_box[:, 0]
            corner_x = self.basis @ corner_t
            value = self.eval_many(corner_x[None, :])[0]
            offset = value - linear @ corner_x
            yield index, t_box, linear, offset


def pa_cells_to_csv(pam: PiecewiseAffineMap, path: str, max_cells: int = 100_000) -> None:
    """Flat CSV of cell records (one row per cell) for external plotting."""
    import csv

    n, m = pam.n, pam.m
    header = (["index"]
              + [f"t{d}_{end}" for d in range(n) for end in ("lo", "hi")]
              + [f"linear_{i}_{j}" for i in range(m) for j in range(n)]
              + [f"offset_{i}" for i in range(m)]
              + ["vol"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for index, t_box, linear, offset in pam.cell_records(max_cells):
            row = ["x".join(str(i) for i in index)]
            row += [repr(float(v)) for v in t_box.ravel()]
            row += [repr(float(v)) for v in linear.ravel()]
            row += [repr(float(v)) for v in offset]
            row.append(repr(vol_matrix(linear)))
            writer.writerow(row)


def pa_from_axis_slopes(box, axis_breakpoints: Sequence, axis_slopes: Sequence,
                        anchors: Sequence, const, a: ns.Norm, b: ns.Norm,
                        basis=None) -> PiecewiseAffineMap:
    """Assemble a separable piecewise-affine map from per-axis slope data."""
    box = as_box(box)
    n = box.shape[0]
    basis = np.eye(n) if basis is None else np.asarray(basis, dtype=float)
    curves = tuple(
        CoordinateCurve(np.asarray(bp, dtype=float), np.asarray(sl, dtype=float),
                        np.asarray(an, dtype=float))
        for bp, sl, an in zip(axis_breakpoints, axis_slopes, anchors)
    )
    pam = PiecewiseAffineMap(curves, basis, np.asarray(const, dtype=float), box, a, b)
    lip = pam.exact_lipschitz()
    return PiecewiseAffineMap(curves, basis, pam.anchor_value, box, a, b, declared_lip=lip)


# -- inflate an affine map ---------------------------------------------------


def inflate_affine(map: LinearMap, cert: InflationCertificate, E, eps: float,
                   offset=None, lip_scale: float = 1.0) -> PiecewiseAffineMap:
    """Piecewise-affine inflation g of the affine map x -> A x + offset.

    ``cert`` must verify for A / lip_scale (lip_scale = 1 means the
    certificate is for A itself).  Every cell differential of g equals a
    sign permutation of the inflated map composed with A, so per cell
    the operator norm is at most lip_scale and the volume is exactly
    vol(A) * prod |eigenvalues|; the sup distance to the affine map
    stays below eps.
    """
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    if not (0 < lip_scale <= 1.0 + 1e-12):
        raise PreconditionError("lip_scale must lie in (0, 1]")
    if not cert.verified:
        raise NumericalFailure("certificate is not verified")
    A = map.matrix
    n, m = map.n, map.m
    box = as_box(E) if not isinstance(E, GridSubset) else E.box
    if box.shape[0] != n:
        raise DimensionMismatch("domain box dimension mismatch")
    if not is_full_rank(A):
        raise PreconditionError("affine map must have a full-rank linear part")
    scaled = LinearMap(A / lip_scale, map.domain_norm, map.codomain_norm)
    report = verify_certificate(scaled, cert)
    if not report.verified:
        raise NumericalFailure(f"certificate does not verify for the given map: {report.message}")
    offset = np.zeros(m) if offset is None else np.asarray(offset, dtype=float)

    X = cert.preimages
    T = np.linalg.inv(X)
    U = A @ X                      # columns lip_scale * u_i with u_i = (A/lip_scale) x_i
    kappa = cert.eigenvalues

    blen = lambda v: ns.norm_eval(map.codomain_norm, v)
    budget = 0.9 * eps / n
    curves = []
    for i in range(n):
        row = T[i, :]
        t_lo = float(np.minimum(row * box[:, 0], row * box[:, 1]).sum())
        t_hi = float(np.maximum(row * box[:, 0], row * box[:, 1]).sum())
        if t_hi - t_lo < 1e-300:
            t_hi = t_lo + 1.0
        zig = zigzag_curve(U[:, i], kappa[i] * U[:, i], budget, (t_lo, t_hi), vec_len=blen)
        curves.append(zig.as_coordinate_curve())

    cell_vol = vol_matrix(A) * float(np.prod(np.abs(kappa)))
    pam = PiecewiseAffineMap(
        curves=tuple(curves),
        basis=X,
        anchor_value=offset,
        domain=box,
        domain_norm=map.domain_norm,
        codomain_norm=map.codomain_norm,
        declared_lip=lip_scale * max(report.worst_sign_norm, 1.0),
        constant_cell_vol=cell_vol,
        affine_ref=(A.copy(), offset.copy(), float(eps)),
    )
    return pam


def batch_call(g, xs: np.ndarray) -> np.ndarray:
    """Evaluate a batch callable or an object exposing eval_many."""
    if hasattr(g, "eval_many"):
        return np.asarray(g.eval_many(xs), dtype=float)
    return np.asarray(g(xs), dtype=float)


# -- gluing ------------------------------------------------------------------


def _dist_to_set(xs: np.ndarray, patch_set, norm: ns.Norm) -> np.ndarray:
    """Distance from each row of xs to a box or point cloud, in the given norm."""
    arr = np.asarray(patch_set, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 2 and arr.shape[0] == norm.dim:
        # axis-aligned box: nearest point by clamping (valid for lp-family norms)
        if norm.kind not in ("euclidean", "lp"):
            raise PreconditionError("box patch sets require an lp-family domain norm")
        closest = np.clip(xs, arr[:, 0], arr[:, 1])
        return ns._eval_many(norm, xs - closest)
    if arr.ndim == 1:
        arr = arr[None, :]
    dists = np.empty((xs.shape[0], arr.shape[0]))
    for j, p in enumerate(arr):
        dists[:, j] = ns._eval_many(norm, xs - p[None, :])
    return np.min(dists, axis=1)


def _set_to_set_distance(set_a, set_b, norm: ns.Norm) -> float:
    a = np.asarray(set_a, dtype=float)
    b = np.asarray(set_b, dtype=float)
    if a.ndim == 2 and a.shape[1] == 2 and a.shape[0] == norm.dim:
        if b.ndim == 2 and b.shape[1] == 2 and b.shape[0] == norm.dim:
            gap = np.maximum(0.0, np.maximum(b[:, 0] - a[:, 1], a[:, 0] - b[:, 1]))
            return float(ns.norm_eval(norm, gap))
        pts = b if b.ndim == 2 else b[None, :]
        return float(np.min(_dist_to_set(pts, a, norm)))
    pts = a if a.ndim == 2 else a[None, :]
    return float(np.min(_dist_to_set(pts, b, norm)))


@dataclass(frozen=True)
class PatchSpec:
    """Input bundle for glue_patches.

    ``patch_sets`` are boxes ((n, 2) arrays) or point clouds ((k, n)
    arrays); ``radii`` their neighborhood radii in (0, 1]; ``patch_maps``
    batch callables defined on the neighborhoods; ``base_map`` the
    global batch callable f; ``delta`` the patch closeness scale
    (||g_i - f|| <= delta * rho_i on each neighborhood).
    """

    patch_sets: tuple
    radii: tuple
    patch_maps: tuple
    base_map: Callable
    delta: float
    domain_norm: ns.Norm
    codomain_norm: ns.Norm
    domain: np.ndarray = field(default=None)

    def __post_init__(self):
        if not (len(self.patch_sets) == len(self.radii) == len(self.patch_maps)):
            raise PreconditionError("patch lists must have equal length")
        if self.delta <= 0:
            raise PreconditionError("delta must be positive")
        for rho in self.radii:
            if not (0 < rho <= 1):
                raise PreconditionError("radii must lie in (0, 1]")


class GluedMap:
    """g = f + sum_i chi_i (g_i - f), with chi_i a clipped-distance bump.

    chi_i(x) = max(rho_i/2 - dist(x, S_i), 0) / (rho_i/2), so g agrees
    with g_i exactly on S_i, with f exactly outside the union of the
    rho_i-neighborhoods, and the Lipschitz constant grows by at most
    4 * delta over the common bound of f and the patches.
    """

    def __init__(self, spec: PatchSpec, lip_base: float):
        self.spec = spec
        self.lip_base = float(lip_base)
        self.lip_bound = float(lip_base) + 4.0 * spec.delta

    def chi(self, xs: np.ndarray, i: int) -> np.ndarray:
        rho = self.spec.radii[i]
        d = _dist_to_set(xs, self.spec.patch_sets[i], self.spec.domain_norm)
        return np.maximum(0.5 * rho - d, 0.0) / (0.5 * rho)

    def eval_many(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        out = batch_call(self.spec.base_map, xs).copy()
        for i, g_i in enumerate(self.spec.patch_maps):
            w = self.chi(xs, i)
            active = w > 0.0
            if np.any(active):
                diff = batch_call(g_i, xs[active]) - out[active]
                out[active] += w[active, None] * diff
        return out

    def __call__(self, x) -> np.ndarray:
        return self.eval_many(np.asarray(x, dtype=float)[None, :])[0]

    def pieces(self):
        """(core set, patch map) pairs; on each core the glued map equals the patch."""
        return list(zip(self.spec.patch_sets, self.spec.patch_maps))


def glue_patches(spec: PatchSpec, L: float, check_samples: int = 160,
                 seed: int = 0) -> GluedMap:
    """Merge patch maps into the base map; result is (L + 4 delta)-Lipschitz.

    Validates the hypotheses the bound depends on: the rho_i-neighborhoods of the
    patch sets are pairwise disjoint, and each patch stays delta*rho_i
    close to the base map on its neighborhood (checked on samples).
    """
    k = len(spec.patch_sets)
    for i in range(k):
        for j in range(i + 1, k):
            gap = _set_to_set_distance(spec.patch_sets[i], spec.patch_sets[j], spec.domain_norm)
            if gap <= spec.radii[i] + spec.radii[j]:
                raise PreconditionError(
                    f"patch neighborhoods {i} and {j} overlap (gap {gap:.3g})")
    rng = rng_for(seed, 606)
    for i, (patch_set, rho, g_i) in enumerate(zip(spec.patch_sets, spec.radii, spec.patch_maps)):
        pts = _sample_neighborhood(patch_set, rho, check_samples, rng, spec.domain_norm)
        if pts.shape[0] == 0:
            continue
        dev = ns._eval_many(spec.codomain_norm,
                            batch_call(g_i, pts) - batch_call(spec.base_map, pts))
        if float(np.max(dev)) > spec.delta * rho * (1 + 1e-9) + 1e-12:
            raise PreconditionError(
                f"patch {i} deviates {float(np.max(dev)):.3g} > delta*rho = {spec.delta * rho:.3g}")
    return GluedMap(spec, L)


def _sample_neighborhood(patch_set, rho, count, rng, norm) -> np.ndarray:
    arr = np.asarray(patch_set, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 2 and arr.shape[0] == norm.dim:
        hull = np.stack([arr[:, 0] - rho, arr[:, 1] + rho], axis=1)
        pts = sample_box(hull, 4 * count, rng)
    else:
        pts_base = arr if arr.ndim == 2 else arr[None, :]
        idx = rng.integers(0, pts_base.shape[0], size=4 * count)
        pts = pts_base[idx] + rng.standard_normal((4 * count, pts_base.shape[1])) * rho
    dist = _dist_to_set(pts, patch_set, norm)
    return pts[dist <= rho][:count]


# -- quantitative margins ----------------------------------------------------


def lsc_margin(A, eta: float) -> float:
    """Stability radius delta = (1 - eta^(1/n)) / (2 ||A^-1||).

    Any continuous g within delta * r of a map differentiable at x with
    full-rank differential A covers, in measure, an eta fraction of the
    image of the r-ball around x (via the degree/coverage argument).
    Requires eta in (2^-n, 1).
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise PreconditionError("A must be a matrix")
    m, n = A.shape
    if n > m:
        raise PreconditionError("A must map into dimension >= n")
    if not (2.0 ** (-n) < eta < 1.0):
        raise PreconditionError(f"eta must lie in (2^-{n}, 1)")
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 1e-12 * max(s[0], 1e-300):
        raise PreconditionError("A must be full rank")
    inv_norm = 1.0 / float(s[-1])
    return (1.0 - eta ** (1.0 / n)) / (2.0 * inv_norm)


def balls_epsilon(K: float, delta: float, N: int) -> float:
    """Largest eps with (-K eps + delta)/delta >= 1 - 1/N, i.e. delta/(K N).

    If psi <= K a.e. and its mean is at least K(1 - eps), then the
    superlevel set {psi >= K - delta} fills at least a (1 - 1/N)
    fraction of the space.
    """
    if K <= 0 or delta <= 0 or N <= 0:
        raise PreconditionError("all arguments must be positive")
    return delta / (K * float(N))


# -- the grid-scale pipeline -------------------------------------------------


@dataclass(frozen=True)
class InflateReport:
    achieved_integral: float
    target_integral: float
    domain_measure: float
    sup_distance: float          # sampled ||g - f||_inf
    lip_cells_exact: float       # max exact cell operator norm over all patches
    lip_glue_bound: float        # L0 + 4 delta bound covering the blend bands
    cell_grid: tuple
    sigma: float
    lip_scale: float
    lam: float
    eta: float
    eps: float
    seed: int
    prescaled: bool
    patch_count: int


def inflate_on_set(f: Callable, E, a: ns.Norm, b: ns.Norm, lam: float, eps: float,
                   eta: float, seed: int, sigma: float = 0.9, f_lip: Optional[float] = None,
                   base_cells: int = 2, max_cells: int = 64,
                   search_restarts: int = 16, search_steps: int = 120):
    """Push the Jacobian integral of f over E up to eta * lam * H^n(E).

    Pipeline: partition the domain box into a uniform grid; fit an
    affine map to f on each cell (least squares on a 5^n stencil),
    nudge it to full rank and generic position, certify an inflation of
    the rescaled fit, inflate it with per-cell exactness, and glue the
    patches back into f.  Returns (glued map, report); the achieved
    integral counts the inflated cores exactly and ignores the blend
    bands, so it is a certified lower bound.
    """
    if not (0 <= eta < 1):
        raise PreconditionError("eta must lie in [0, 1)")
    if eps <= 0 or lam < 0:
        raise PreconditionError("eps and lam must be positive")
    if a.dim > b.dim:
        raise PreconditionError("requires n <= m")
    n, m = a.dim, b.dim

    subset = E if isinstance(E, GridSubset) else None
    box = domain_box(E)
    measure_E = domain_measure(E)
    target = eta * lam * measure_E
    if measure_E == 0.0:
        report = InflateReport(0.0, target, 0.0, 0.0, 0.0, 0.0, (0,) * n, sigma, 1.0,
                               lam, eta, eps, seed, False, 0)
        return None, report

    fbatch = _as_batch(f, n)
    est_lip = f_lip if f_lip is not None else _sampled_lip(fbatch, box, a, b, seed)
    if est_lip > 1.0 + 1e-6:
        raise PreconditionError(f"Lip(f) ~ {est_lip} >= 1")

    # Split the core-measure requirement between the Lipschitz headroom
    # L0 < 1 of the rescaled fits and the shrink factor sigma of the
    # cores: the counted integral is at least (L0 * sigma)^n * lam * H(E).
    # f itself is pre-scaled to Lipschitz constant L0, charging
    # (1 - scale) * sup|f| against the eps budget.
    rng0 = rng_for(seed, 31)
    sup_f = float(np.max(ns._eval_many(b, np.asarray(fbatch(sample_box(box, 512, rng0)), dtype=float))))
    target_core = min(eta + 0.35 * (1.0 - eta), 0.995)
    L0 = max(target_core ** (1.0 / (2.0 * n)), 0.3)
    if est_lip > L0 and sup_f > 1e-12:
        L0 = max(L0, min(1.0 - 1e-4, 1.0 - 0.45 * eps / sup_f))
    work_scale = min(1.0, L0 / max(est_lip, 1e-12))
    prescaled = work_scale < 1.0
    if prescaled:
        inner = fbatch
        fbatch = lambda xs: work_scale * inner(xs)
    sigma_eff = max(min(sigma, 0.995), target_core ** (1.0 / n) / L0)
    if sigma_eff >= 1.0:
        sigma_eff = 0.999
    delta_glue = min(0.45 * eps, 0.245 * (1.0 - L0))

    k = base_cells
    if subset is not None:
        k = max(k, *subset.shape)
    fbatch_orig = _as_batch(f, n)
    while True:
        try:
            return _inflate_on_grid(fbatch, box, subset, a, b, lam, eps, eta, seed,
                                    sigma_eff, L0, delta_glue, k, min(est_lip, L0),
                                    prescaled, target, measure_E,
                                    search_restarts, search_steps, fbatch_orig)
        except _FitTooCoarse:
            if 2 * k > max_cells:
                raise NumericalFailure(
                    f"affine fits do not converge at {k} cells per axis")
            k *= 2


class _FitTooCoarse(Exception):
    pass


def _as_batch(f: Callable, n: int) -> Callable:
    """Accept either a batch callable or a single-point callable."""
    if isinstance(f, (PiecewiseAffineMap, GluedMap)):
        return f.eval_many
    probe = np.zeros((2, n))
    try:
        out = np.asarray(f(probe), dtype=float)
        if out.ndim == 2 and out.shape[0] == 2:
            return f
    except Exception:
        pass
    return lambda xs: np.stack([np.asarray(f(x), dtype=float) for x in xs], axis=0)


def _sampled_lip(fbatch, box, a, b, seed, pairs: int = 400) -> float:
    rng = rng_for(seed, 777)
    xs = sample_box(box, pairs, rng)
    ys = sample_box(box, pairs, rng)
    near = xs + (ys - xs) * 1e-4
    ys = np.concatenate([ys, near], axis=0)
    xs = np.concatenate([xs, xs], axis=0)
    da = ns._eval_many(a, xs - ys)
    ok = da > 1e-14
    db = ns._eval_many(b, np.asarray(fbatch(xs[ok]), dtype=float) - np.asarray(fbatch(ys[ok]), dtype=float))
    return float(np.max(db / da[ok])) if np.any(ok) else 0.0


def _inflate_on_grid(fbatch, box, subset, a, b, lam, eps, eta, seed, sigma, L0,
                     delta_glue, k, est_lip, prescaled, target, measure_E,
                     search_restarts, search_steps, fbatch_orig=None):
    if fbatch_orig is None:
        fbatch_orig = fbatch
    n, m = a.dim, b.dim
    widths = (box[:, 1] - box[:, 0]) / k
    euclid_pair = _is_euclidean(a) and _is_euclidean(b)

    patch_sets = []
    patch_maps = []
    radii = []
    achieved = 0.0
    lip_cells = 0.0
    from itertools import product as iproduct

    cells = list(iproduct(*[range(k) for _ in range(n)]))
    for lin_idx, idx in enumerate(cells):
        lo = box[:, 0] + np.asarray(idx) * widths
        cell = np.stack([lo, lo + widths], axis=1)
        if subset is not None and subset.overlap(cell) <= 0.0:
            continue
        core = shrink_box(cell, sigma)
        rho = min(1.0, 0.9 * float(np.min((1.0 - sigma) * 0.5 * widths)))
        if rho <= 0:
            raise NumericalFailure("cell too small for a positive glue radius")
        budget = delta_glue * rho

        stencil = _stencil(cell, 5)
        values = np.asarray(fbatch(stencil), dtype=float)
        M_fit, c_fit = _affine_fit(stencil, values)
        fit_err = float(np.max(ns._eval_many(b, values - stencil @ M_fit.T - c_fit)))
        if fit_err > 0.30 * budget:
            raise _FitTooCoarse()

        nudge_budget = 0.20 * budget
        rng = rng_for(seed, 4242, lin_idx)
        M_i = _nudged(M_fit, nudge_budget, cell, a, b, L0, rng)

        if euclid_pair:
            cert = euclidean_inflation(LinearMap(M_i / L0, a, b))
        else:
            cert = inflation_search(LinearMap(M_i / L0, a, b), lam,
                                    restarts=search_restarts, steps=search_steps,
                                    seed=seed + 101 * lin_idx)
            if cert is None:
                raise NumericalFailure(f"no inflation certificate for cell {idx}")
        if cert.lam < lam - 1e-9:
            raise NumericalFailure(f"certificate lambda {cert.lam} below target at cell {idx}")

        zig_eps = 0.45 * budget
        g_i = inflate_affine(LinearMap(M_i, a, b), cert, cell, zig_eps,
                             offset=c_fit, lip_scale=L0)
        patch_sets.append(core)
        patch_maps.append(g_i)
        radii.append(rho)
        lip_cells = max(lip_cells, g_i.declared_lip)
        core_measure = subset.overlap(core) if subset is not None else box_overlap(core, box)
        achieved += g_i.constant_cell_vol * core_measure

    if not patch_sets:
        raise NumericalFailure("no cells intersect the target set")

    spec = PatchSpec(tuple(patch_sets), tuple(radii), tuple(patch_maps),
                     fbatch, delta_glue, a, b, domain=box)
    glued = glue_patches(spec, max(L0, est_lip), seed=seed)

    rng = rng_for(seed, 9090)
    probes = sample_box(box, 10_000, rng)
    sup_dist = float(np.max(ns._eval_many(
        b, glued.eval_many(probes) - np.asarray(fbatch_orig(probes), dtype=float))))

    report = InflateReport(
        achieved_integral=float(achieved),
        target_integral=float(target),
        domain_measure=float(measure_E),
        sup_distance=sup_dist,
        lip_cells_exact=float(lip_cells),
        lip_glue_bound=float(max(L0, est_lip) + 4.0 * delta_glue),
        cell_grid=(k,) * n,
        sigma=float(sigma),
        lip_scale=float(L0),
        lam=float(lam),
        eta=float(eta),
        eps=float(eps),
        seed=int(seed),
        prescaled=bool(prescaled),
        patch_count=len(patch_sets),
    )
    if achieved < target - 1e-9:
        raise NumericalFailure(
            f"achieved integral {achieved} below target {target}")
    return glued, report


def _stencil(cell, per_axis: int) -> np.ndarray:
    from .geometry import grid_points

    inner = shrink_box(cell, 0.999)
    return grid_points(inner, per_axis)


def _affine_fit(points: np.ndarray, values: np.ndarray):
    design = np.concatenate([points, np.ones((points.shape[0], 1))], axis=1)
    sol, *_ = np.linalg.lstsq(design, values, rcond=None)
    M = sol[:-1, :].T
    c = sol[-1, :]
    return M, c


def _nudged(M, budget, cell, a, b, L0, rng) -> np.ndarray:
    """Full-rank lift + small random image rotation, within the sup budget.

    The nudge changes values by (M' - M) x over the cell, so the budget
    is divided by the largest absolute coordinate norm over the cell,
    not by the cell half-width.
    """
    m, n = M.shape
    from itertools import product as iproduct

    corners = np.array([[cell[d, e] for d, e in enumerate(combo)]
                        for combo in iproduct((0, 1), repeat=n)])
    rad = float(np.max(np.linalg.norm(corners, axis=1)))
    zeta_cap = 0.5 * budget / max(rad, 1e-12)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    zeta = min(max(zeta_cap, 1e-12), 0.05 * L0, 0.5 * L0)
    s_lift = np.maximum(s, zeta)
    M1 = (U * s_lift) @ Vt
    # generic position: rotate the image plane by a tiny seeded rotation
    angle = min(1e-3, 0.25 * budget / max(rad * max(np.max(s_lift), 1e-12), 1e-12))
    S = rng.standard_normal((m, m))
    S = 0.5 * (S - S.T)
    from scipy.linalg import expm

    R = expm(angle * S / max(np.linalg.norm(S, 2), 1e-12))
    M2 = R @ M1
    nrm = operator_norm(LinearMap(M2, a, b))
    if nrm > L0:
        M2 = M2 * (L0 / nrm)
    if not is_full_rank(M2):
        raise NumericalFailure("full-rank nudge failed")
    return M2
