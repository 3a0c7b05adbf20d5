"""The maximal volume mv(u) and its upper semi-continuity probe.

mv_{a->b}(u) is the supremum of vol(u|V) over completions V of the
first column u that keep the operator norm of (u|V) at most 1.  The
optimizer here approximates it from below by multi-start ascent; the
one case the theory computes exactly (maximum-norm domain, Euclidean
codomain, Euclidean-unit u, where feasibility forces V = 0) is
short-circuited to the analytic value 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import normed_space as ns
from .errors import DimensionMismatch, PreconditionError
from .linear_analysis import LinearMap, operator_norm, vol_matrix
from .seeding import rng_for

FD_STEP = 1e-5          # central-difference step for the vol gradient
FEAS_TOL = 1e-9


def column_augment(u, V, domain_norm: Optional[ns.Norm] = None,
                   codomain_norm: Optional[ns.Norm] = None) -> LinearMap:
    """The map (u|V): e_1 -> u, e_j -> v_j, with Euclidean norms by default."""
    u = np.asarray(u, dtype=float)
    V = np.asarray(V, dtype=float)
    if u.ndim != 1:
        raise DimensionMismatch("u must be a vector")
    m = u.shape[0]
    if V.size == 0:
        V = V.reshape(m, 0)
    if V.ndim != 2 or V.shape[0] != m:
        raise DimensionMismatch(f"V must be (m, n-1) with m = {m}, got {V.shape}")
    n = V.shape[1] + 1
    if n < 2:
        raise PreconditionError("column augmentation needs n >= 2")
    matrix = np.concatenate([u[:, None], V], axis=1)
    a = domain_norm if domain_norm is not None else ns.euclidean(n)
    b = codomain_norm if codomain_norm is not None else ns.euclidean(m)
    return LinearMap(matrix, a, b)


@dataclass(frozen=True)
class MvResult:
    value: float
    best_V: np.ndarray
    feasibility_gap: float  # operator norm excess of (u|best_V); <= 0 means feasible
    restarts_used: int
    analytic: bool = False


# -- feasibility scaling -----------------------------------------------------


def _norm_of(u: np.ndarray, V: np.ndarray, a: ns.Norm, b: ns.Norm) -> float:
    return operator_norm(LinearMap(np.concatenate([u[:, None], V], axis=1), a, b))


def _max_feasible_scale(u: np.ndarray, V: np.ndarray, a: ns.Norm, b: ns.Norm) -> float:
    """Largest t >= 0 with ||(u|tV)|| <= 1.

    t -> ||(u|tV)|| is convex and <= 1 at t = 0, so the feasible set is
    an interval.  For a vertex-described domain ball and a Euclidean
    codomain the boundary solves a quadratic per vertex exactly;
    otherwise bisection.
    """
    if not np.any(V):
        return 1.0
    verts = ns.ball_vertices(a)
    if verts is not None and (b.kind == "euclidean" or (b.kind == "lp" and b.p == 2)):
        t_best = math.inf
        for x in verts:
            w = V @ x[1:]
            aa = float(w @ w)
            base = x[0] * u
            cc = float(base @ base)
            bb = 2.0 * float(base @ w)
            if aa < 1e-300:
                continue
            if cc > 1.0 + 1e-15:
                return 0.0
            disc = bb * bb - 4.0 * aa * (cc - 1.0)
            t_v = (-bb + math.sqrt(max(disc, 0.0))) / (2.0 * aa)
            t_best = min(t_best, max(t_v, 0.0))
        return 1.0 if t_best is math.inf else float(t_best)
    # generic: expand then bisect; the tiny slack absorbs float noise when
    # ||(u|0)|| sits exactly on the boundary
    slack = 1.0 + 1e-12
    lo, hi = 0.0, 1.0
    if _norm_of(u, hi * V, a, b) <= slack:
        while hi < 1e6 and _norm_of(u, 2.0 * hi * V, a, b) <= slack:
            hi *= 2.0
        lo = hi
        hi *= 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _norm_of(u, mid * V, a, b) <= slack:
            lo = mid
        else:
            hi = mid
    return lo


def _rescaled_vol(u: np.ndarray, V: np.ndarray, a: ns.Norm, b: ns.Norm):
    t = _max_feasible_scale(u, V, a, b)
    Vt = t * V
    return vol_matrix(np.concatenate([u[:, None], Vt], axis=1)), Vt


# -- the optimizer -----------------------------------------------------------


def max_volume(u, a: ns.Norm, b: ns.Norm, restarts: int = 32, seed: int = 0,
               analytic: bool = True, iters: int = 400) -> MvResult:
    """Lower bound for mv(u) by multi-start projected ascent.

    Each iterate takes a finite-difference gradient step on vol and is
    pulled back to the feasibility boundary by scaling V (the u column
    stays fixed).  The returned value is the volume of the best feasible
    candidate found: a lower bound on the supremum.  With ``analytic``
    enabled, the maximum-norm -> Euclidean case with |u|_2 = 1 returns
    its exact value 0 directly.
    """
    u = np.asarray(u, dtype=float)
    n, m = a.dim, b.dim
    if u.shape != (m,):
        raise DimensionMismatch(f"u must have dim {m}")
    if n < 2:
        raise PreconditionError("maximal volume needs n >= 2")
    if n > m:
        raise PreconditionError("requires n <= m")
    base_norm = _norm_of(u, np.zeros((m, n - 1)), a, b)
    if base_norm > 1.0 + FEAS_TOL:
        raise PreconditionError(f"||(u|0)|| = {base_norm} exceeds 1")

    if not np.any(u):
        return MvResult(0.0, np.zeros((m, n - 1)), base_norm - 1.0, 0, analytic=False)

    if analytic and a.kind == "lp" and a.p == math.inf and \
            (b.kind == "euclidean" or (b.kind == "lp" and b.p == 2)) and \
            abs(float(np.linalg.norm(u)) - 1.0) <= FEAS_TOL:
        # feasibility forces V = 0 here, so the supremum is exactly 0
        return MvResult(0.0, np.zeros((m, n - 1)), base_norm - 1.0, 0, analytic=True)

    best_val = 0.0
    best_V = np.zeros((m, n - 1))
    shape = (m, n - 1)
    for r in range(restarts):
        rng = rng_for(seed, 911, r)
        V = rng.standard_normal(shape)
        val, V = _rescaled_vol(u, V, a, b)
        step = 0.25
        for _ in range(iters):
            grad = _vol_gradient(u, V)
            gn = float(np.linalg.norm(grad))
            if gn < 1e-14 or step < 1e-9:
                break
            cand = V + step * grad / gn
            cand_val, cand_V = _rescaled_vol(u, cand, a, b)
            if cand_val > val + 1e-15:
                V, val = cand_V, cand_val
                step = min(step * 1.6, 1.0)
            else:
                step *= 0.5
        if val > best_val + 1e-15:
            best_val, best_V = val, V
    gap = _norm_of(u, best_V, a, b) - 1.0
    value = vol_matrix(np.concatenate([u[:, None], best_V], axis=1))
    return MvResult(float(value), best_V, float(gap), restarts, analytic=False)


def _vol_gradient(u: np.ndarray, V: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(V)
    for j in range(V.shape[1]):
        for i in range(V.shape[0]):
            Vp = V.copy()
            Vp[i, j] += FD_STEP
            Vm = V.copy()
            Vm[i, j] -= FD_STEP
            fp = vol_matrix(np.concatenate([u[:, None], Vp], axis=1))
            fm = vol_matrix(np.concatenate([u[:, None], Vm], axis=1))
            grad[i, j] = (fp - fm) / (2.0 * FD_STEP)
    return grad


# -- upper semi-continuity probe ---------------------------------------------


@dataclass(frozen=True)
class UscProbeReport:
    passing_eps: Optional[float]
    mv_value: float
    delta: float
    schedule: tuple
    violations: tuple  # (eps, trial index, achieved vol) triples
    under_converged: bool
    seed: int


def usc_probe(u, a: ns.Norm, b: ns.Norm, delta: float, trials: int = 12,
              seed: int = 0, schedule: Optional[list] = None,
              restarts: int = 4, iters: int = 150) -> UscProbeReport:
    """Find an eps ball around u on which feasible volumes stay below
    mv(u) + delta.

    Walks a decreasing eps schedule; for each eps it perturbs u inside
    the codomain-norm ball of radius eps and ascends vol over feasible
    completions of the perturbed column.  The largest eps with no
    violation is reported; a violation at every eps points at an
    under-converged reference value and is flagged as such.
    """
    if delta <= 0:
        raise PreconditionError("delta must be positive")
    u = np.asarray(u, dtype=float)
    mv0 = max_volume(u, a, b, restarts=max(8, restarts), seed=seed).value
    sched = [0.5 * 2.0 ** (-k) for k in range(8)] if schedule is None else sorted(
        (float(e) for e in schedule), reverse=True)
    violations = []
    passing = None
    for eps in sched:
        ok = True
        for t in range(trials):
            rng = rng_for(seed, 1203, int(eps * 2 ** 30) & 0xFFFFFFFF, t)
            g = rng.standard_normal(b.dim)
            g_len = ns.norm_eval(b, g)
            if g_len == 0.0:
                continue
            radius = eps * rng.random() ** (1.0 / b.dim)
            u_tilde = u + radius * g / g_len
            if _norm_of(u_tilde, np.zeros((b.dim, a.dim - 1)), a, b) > 1.0 + FEAS_TOL:
                continue  # no feasible completion is reachable by scaling: vacuous
            res = max_volume(u_tilde, a, b, restarts=restarts, seed=seed + 31 * t,
                             analytic=False, iters=iters)
            if res.value > mv0 + delta + 1e-12:
                ok = False
                violations.append((eps, t, res.value))
        if ok:
            passing = eps
            break
    return UscProbeReport(
        passing_eps=passing,
        mv_value=mv0,
        delta=delta,
        schedule=tuple(sched),
        violations=tuple(violations),
        under_converged=passing is None,
        seed=seed,
    )
