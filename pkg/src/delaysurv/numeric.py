"""Deterministic numerical primitives: quadrature, concave maximization,
bracketed root finding, finite differences and seeded random streams."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import (
    BadBracket,
    BudgetExceeded,
    LineSearchFailure,
    MaxIterations,
    NonFinite,
)

# Gauss-Kronrod 7/15 abscissae (nonnegative half) and weights.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])  # 15 nodes on [-1, 1]
_KWEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GWEIGHTS = np.zeros(15)
# Gauss nodes are the odd-indexed Kronrod nodes (x = xgk[1], xgk[3], xgk[5], 0)
_GWEIGHTS[[1, 3, 5]] = _WG[:3]
_GWEIGHTS[[9, 11, 13]] = _WG[2::-1]
_GWEIGHTS[7] = _WG[3]


@dataclass(frozen=True)
class QuadratureSpec:
    absolute_tolerance: float = 1e-10
    relative_tolerance: float = 1e-9
    max_subdivisions: int = 200

    def __post_init__(self):
        if not (self.absolute_tolerance > 0 and self.relative_tolerance > 0):
            raise ValueError("quadrature tolerances must be strictly positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


DEFAULT_QUADRATURE = QuadratureSpec()


def _gk15(f, a, b):
    center = 0.5 * (a + b)
    half = 0.5 * (b - a)
    vals = np.asarray(f(center + half * _NODES), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NonFinite(f"integrand is not finite on [{a}, {b}]")
    # vals has shape (15,) or (15, k) for vector-valued integrands
    kron = half * np.tensordot(_KWEIGHTS, vals, axes=(0, 0))
    gauss = half * np.tensordot(_GWEIGHTS, vals, axes=(0, 0))
    err = float(np.max(np.abs(kron - gauss)))
    return kron, err


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    spec: QuadratureSpec | None = None,
    breakpoints: Sequence[float] = (),
) -> float | np.ndarray:
    """Adaptive Gauss-Kronrod (7/15) quadrature of ``f`` over ``[a, b]``.

    ``f`` must be vectorized: it receives a 1-d array of nodes and returns an
    array of shape ``(len(nodes),)`` or ``(len(nodes), k)``. Vector-valued
    integrands are refined on the worst component. Interior ``breakpoints``
    are always used as panel edges, which keeps kinked integrands (piecewise
    constant hazards) within tolerance.

    Raises
    ------
    NonFinite
        If ``f`` returns NaN or infinity at any node.
    BudgetExceeded
        If ``spec.max_subdivisions`` panels are used before the tolerance
        ``max(abs_tol, rel_tol * |I|)`` is met.
    """
    spec = spec or DEFAULT_QUADRATURE
    if not a <= b:
        raise ValueError(f"integration bounds out of order: a={a}, b={b}")
    if a == b:
        probe = np.asarray(f(np.array([a])), dtype=float)
        return np.zeros(probe.shape[1:]) if probe.ndim > 1 else 0.0

    edges = [a] + sorted(p for p in set(breakpoints) if a < p < b) + [b]
    heap = []
    total = None
    total_err = 0.0
    counter = 0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, err = _gk15(f, lo, hi)
        heapq.heappush(heap, (-err, counter, lo, hi, val))
        counter += 1
        total = val if total is None else total + val
        total_err += err

    n_panels = len(heap)
    while True:
        scale = float(np.max(np.abs(total)))
        if total_err <= max(spec.absolute_tolerance, spec.relative_tolerance * scale):
            break
        if n_panels >= spec.max_subdivisions:
            raise BudgetExceeded(
                f"quadrature on [{a}, {b}] did not reach tolerance in "
                f"{spec.max_subdivisions} panels (error estimate {total_err:.3g})"
            )
        neg_err, _, lo, hi, val = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            # panel below floating-point resolution; accept it as is
            heapq.heappush(heap, (0.0, counter, lo, hi, val))
            counter += 1
            total_err += neg_err
            continue
        left, err_l = _gk15(f, lo, mid)
        right, err_r = _gk15(f, mid, hi)
        total = total - val + left + right
        total_err = total_err + neg_err + err_l + err_r
        heapq.heappush(heap, (-err_l, counter, lo, mid, left))
        heapq.heappush(heap, (-err_r, counter + 1, mid, hi, right))
        counter += 2
        n_panels += 1

    # recompute the total in a fixed order for bit-reproducibility
    panels = sorted((item[2], item[4]) for item in heap)
    result = panels[0][1]
    for _, val in panels[1:]:
        result = result + val
    if np.ndim(result) == 0:
        return float(result)
    return np.asarray(result)


@dataclass(frozen=True)
class OptimizerReport:
    argmax: np.ndarray
    objective_at_argmax: float
    iterations: int
    converged: bool
    gradient_norm: float


def _projected_gradient(x, g, lower, upper):
    pg = g.copy()
    pg[(x <= lower) & (g < 0)] = 0.0
    pg[(x >= upper) & (g > 0)] = 0.0
    return pg


def _fd_hessian(gradient, x, lower, upper, h=1e-6):
    k = x.size
    hess = np.empty((k, k))
    for j in range(k):
        step = h * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] = min(x[j] + step, upper[j])
        xm[j] = max(x[j] - step, lower[j])
        hess[:, j] = (gradient(xp) - gradient(xm)) / (xp[j] - xm[j])
    return 0.5 * (hess + hess.T)


def maximize_concave(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    init,
    bounds: Sequence[tuple[float, float]] | None = None,
    hessian: Callable[[np.ndarray], np.ndarray] | None = None,
    gtol: float = 1e-8,
    max_iter: int = 200,
) -> OptimizerReport:
    """Projected Newton ascent with backtracking for a concave objective on a box.

    Coordinates pinned at a bound with an outward-pointing gradient are held
    fixed; the Newton system is solved on the remaining free set. If the
    Newton direction fails the Armijo test, steepest ascent is tried before
    giving up. The returned point never has a lower objective than ``init``.
    Without ``hessian`` a central-difference Hessian of ``gradient`` is used.
    """
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    k = x.size
    if bounds is None:
        lower = np.full(k, -np.inf)
        upper = np.full(k, np.inf)
    else:
        lower = np.array([b[0] for b in bounds], dtype=float)
        upper = np.array([b[1] for b in bounds], dtype=float)
    if np.any(x < lower) or np.any(x > upper):
        raise ValueError("init lies outside the bounds")

    f = float(objective(x))
    if not np.isfinite(f):
        raise NonFinite("objective is not finite at init")
    f_init = f
    g = np.asarray(gradient(x), dtype=float)
    for it in range(max_iter):
        pg = _projected_gradient(x, g, lower, upper)
        gnorm = float(np.linalg.norm(pg))
        if gnorm <= gtol:
            return OptimizerReport(x, f, it, True, gnorm)

        free = pg != 0.0
        hess = hessian(x) if hessian is not None else _fd_hessian(gradient, x, lower, upper)
        direction = np.zeros(k)
        try:
            h_ff = hess[np.ix_(free, free)]
            direction[free] = np.linalg.solve(-h_ff, g[free])
        except np.linalg.LinAlgError:
            direction[free] = g[free]
        if not np.all(np.isfinite(direction)) or direction @ g <= 0:
            direction = pg.copy()

        accepted = False
        for candidate in (direction, pg):
            step = 1.0
            for _ in range(60):
                x_new = np.clip(x + step * candidate, lower, upper)
                f_new = float(objective(x_new))
                gain = g @ (x_new - x)
                if np.isfinite(f_new):
                    tiny = abs(gain) <= 1e-13 * (1.0 + abs(f))
                    # near the optimum the gain drowns in rounding; accept any
                    # step that stays above the starting objective
                    if f_new >= f + 1e-4 * gain or (tiny and f_new >= f_init):
                        accepted = True
                        break
                step *= 0.5
            if accepted:
                break
        if not accepted:
            raise LineSearchFailure(
                f"no ascent step found at iteration {it} (projected gradient norm {gnorm:.3g})"
            )
        x, f = x_new, f_new
        g = np.asarray(gradient(x), dtype=float)

    pg = _projected_gradient(x, g, lower, upper)
    raise MaxIterations(
        f"maximize_concave stopped after {max_iter} iterations "
        f"(projected gradient norm {np.linalg.norm(pg):.3g})"
    )


def find_root_increasing(g: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12) -> float:
    """Bisection for a nondecreasing ``g`` with ``g(lo) <= 0 <= g(hi)``."""
    g_lo, g_hi = g(lo), g(hi)
    if not (g_lo <= 0.0 <= g_hi):
        raise BadBracket(f"g(lo)={g_lo:.6g} and g(hi)={g_hi:.6g} do not bracket a root")
    if g_lo == 0.0:
        return lo
    if g_hi == 0.0:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        g_mid = g(mid)
        if g_mid == 0.0:
            return mid
        if g_mid < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def finite_diff_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient, one coordinate at a time."""
    if not h > 0:
        raise ValueError("step h must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    grad = np.empty_like(x)
    for k in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        fp, fm = f(xp), f(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFinite(f"objective not finite near coordinate {k}")
        grad[k] = (fp - fm) / (2.0 * h)
    return grad


@dataclass(frozen=True)
class RngStream:
    """Splittable seeded stream.

    A stream is identified by ``(master_seed, stream_index)`` plus an optional
    path of child indices; equal identities produce identical generators and
    distinct identities are independent (numpy ``SeedSequence`` spawn keys).
    """

    master_seed: int
    stream_index: int = 0
    path: tuple[int, ...] = field(default=())

    def substream(self, *index: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_index, self.path + tuple(int(i) for i in index))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(
            int(self.master_seed) % 2**64, spawn_key=(int(self.stream_index),) + self.path
        )
        return np.random.Generator(np.random.Philox(seq))


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a Generator, an int seed or None."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
