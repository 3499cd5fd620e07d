"""Minimizers of the Tikhonov functional ``|F(x) - y|_Y^nu + kappa |x|^m``.

Three branches are shipped:

* :func:`solve_diagonal_quadratic` - closed form for the linear diagonal
  model with ``nu = m = 2``;
* :func:`solve_l1_sup` - exact one-dimensional reduction for the identity
  embedding into a weighted sup-norm with the ``l1`` penalty (``nu = m = 1``);
* :func:`solve_projected_gradient` - projected (or proximal) descent for
  differentiable models, with either a Barzilai-Borwein Euclidean metric or
  a projected Newton metric built from the exact misfit Hessian.

:func:`solve` picks the branch from the problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .forward import ForwardModel, L1Embedding, LinearDiagonal, box_samples

__all__ = [
    "SUPPORTED_EXPONENTS",
    "TikhonovProblem",
    "SolverOptions",
    "Solution",
    "solve_diagonal_quadratic",
    "solve_l1_sup",
    "solve_projected_gradient",
    "solve",
    "soft_threshold",
]

SUPPORTED_EXPONENTS = frozenset({(2, 2), (1, 1), (2, 1)})
PENALTIES = ("V", "l1")
_ROUNDOFF_SLACK = 16 * np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class TikhonovProblem:
    """One instance of the regularized problem.

    Parameters
    ----------
    model : ForwardModel
    y_delta : ndarray
        Noisy data.
    delta : float
        Noise level in the ``Y``-norm.
    kappa : float
        Regularization parameter, strictly positive.
    nu, m : int
        Misfit and penalty exponents; ``(nu, m)`` must be one of
        :data:`SUPPORTED_EXPONENTS`.
    penalty : {"V", "l1"}
        ``"V"`` penalizes the model's ``V``-norm; ``"l1"`` the plain
        coordinate ``l1`` norm (used by the proximal branch on models whose
        ``V``-norm is Hilbertian).
    """

    model: ForwardModel
    y_delta: np.ndarray
    delta: float
    kappa: float
    nu: int = 2
    m: int = 2
    penalty: str = "V"

    def __post_init__(self):
        y = np.array(self.y_delta, dtype=float)
        if y.shape != (self.model.n,):
            raise ValueError(f"data must have length {self.model.n}")
        if not np.all(np.isfinite(y)):
            raise ValueError("data has non-finite entries")
        y.setflags(write=False)
        object.__setattr__(self, "y_delta", y)
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise ValueError("kappa must be a positive finite number")
        if not self.delta >= 0:
            raise ValueError("delta must be nonnegative")
        if (self.nu, self.m) not in SUPPORTED_EXPONENTS:
            raise ValueError(
                f"exponents (nu, m) = ({self.nu}, {self.m}) are not supported; "
                f"choose one of {sorted(SUPPORTED_EXPONENTS)}")
        if self.penalty not in PENALTIES:
            raise ValueError(f"penalty must be one of {PENALTIES}")
        if self.m == 2 and self.model.penalty_kind != "quadratic":
            raise ValueError("m = 2 needs a Hilbertian penalty norm")
        if self.m == 2 and self.penalty != "V":
            raise ValueError("the l1 penalty is only used with m = 1")
        if self.nu == 2 and isinstance(self.model, L1Embedding):
            raise ValueError("the sup-norm misfit is not differentiable; use (nu, m) = (1, 1)")

    def with_kappa(self, kappa: float) -> "TikhonovProblem":
        return replace(self, kappa=float(kappa))

    def residual(self, x) -> float:
        return self.model.y_norm(self.model.apply(x) - self.y_delta)

    def penalty_norm(self, x) -> float:
        if self.penalty == "l1":
            return math.fsum(np.abs(x))
        return self.model.v_norm(x)

    def objective(self, x) -> float:
        return self.residual(x) ** self.nu + self.kappa * self.penalty_norm(x) ** self.m


@dataclass(frozen=True)
class SolverOptions:
    """Iteration controls.

    ``gtol`` is relative to the projected-gradient norm at the start point.
    ``metric`` chooses between Barzilai-Borwein steps (``"euclidean"``) and
    projected Newton steps (``"newton"``); ``"auto"`` uses Newton for
    quadratic penalties and Euclidean (proximal) steps for the ``l1`` one.
    """

    max_iters: int = 20000
    newton_max_iters: int = 200
    gtol: float = 1e-11
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-20
    restarts: int = 1
    spread_tol: float = 1e-8
    metric: str = "auto"
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1 or self.newton_max_iters < 1:
            raise ValueError("iteration limits must be positive")
        if not (self.gtol > 0 and self.spread_tol > 0 and self.min_step > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.armijo < 1 or not 0 < self.backtrack < 1:
            raise ValueError("line-search parameters must lie in (0, 1)")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.metric not in ("auto", "euclidean", "newton"):
            raise ValueError("metric must be 'auto', 'euclidean' or 'newton'")


@dataclass
class Solution:
    """Solver output with the metadata written into reports."""

    x: np.ndarray
    objective: float
    residual: float
    penalty: float
    iterations: int = 0
    pg_norm: float = 0.0
    converged: bool = True
    method: str = ""
    warnings: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def _finish(problem: TikhonovProblem, x, method, **kwargs) -> Solution:
    return Solution(x=x, objective=problem.objective(x), residual=problem.residual(x),
                    penalty=problem.penalty_norm(x), method=method, **kwargs)


# ---------------------------------------------------------------------------
# Closed form
# ---------------------------------------------------------------------------
def solve_diagonal_quadratic(problem: TikhonovProblem) -> Solution:
    """Coordinatewise minimizer ``x_n = s_n y_n / (s_n^2 + kappa lam_n^2)``, ``s_n = lam_n^{-a}``."""
    model = problem.model
    if not isinstance(model, LinearDiagonal):
        raise ValueError("the closed form needs a LinearDiagonal model")
    if (problem.nu, problem.m) != (2, 2) or problem.penalty != "V":
        raise ValueError("the closed form needs nu = m = 2 with the V penalty")
    if model.box is not None:
        raise ValueError("the closed form ignores constraints; use solve_projected_gradient")
    s = model.smoothing
    lam = model.scale.lam
    x = s * problem.y_delta / (s * s + problem.kappa * lam * lam)
    return _finish(problem, x, "closed_form")


# ---------------------------------------------------------------------------
# l1 penalty with weighted sup-norm misfit
# ---------------------------------------------------------------------------
def _l1_candidate_levels(y, w):
    """Residual levels where the outer objective can attain its minimum.

    For a residual level ``r`` the best element is the soft clamp
    ``x_n(r) = sign(y_n) max(|y_n| - r w_n, 0)``; the outer objective
    ``phi(r) = r + kappa * sum_n max(|y_n| - r w_n, 0)`` is convex and
    piecewise linear with kinks at ``|y_n| / w_n``, so its minimum is
    attained at ``0`` or at a kink.
    """
    return np.unique(np.concatenate(([0.0], np.abs(y) / w)))


def _l1_phi(y, w, kappa, level):
    return level + kappa * math.fsum(np.maximum(np.abs(y) - level * w, 0.0))


def soft_threshold(v, threshold):
    """``sign(v) max(|v| - threshold, 0)`` (threshold may be an array)."""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


def solve_l1_sup(problem: TikhonovProblem, level: float | None = None, tie_rtol: float = 1e-12) -> Solution:
    """Global minimizer for ``nu = m = 1`` on the weighted-``l1`` embedding.

    Ties between minimizing levels go to the largest level (smallest ``l1``
    norm).  If ``level`` is given and the objective there is within
    ``tie_rtol`` of the minimum, the element at that level is returned
    instead; the discrepancy module uses this to pick a point on a flat
    stretch of the residual map.
    """
    model = problem.model
    if not isinstance(model, L1Embedding):
        raise ValueError("the level reduction needs an L1Embedding model")
    if (problem.nu, problem.m) != (1, 1):
        raise ValueError("the level reduction needs nu = m = 1")
    y = problem.y_delta
    w = model.scale.lam
    levels = _l1_candidate_levels(y, w)
    exact = np.array([_l1_phi(y, w, problem.kappa, r) for r in levels])
    phi_min = float(np.min(exact))
    slack = tie_rtol * max(abs(phi_min), 1e-300)
    chosen = float(levels[np.flatnonzero(exact <= phi_min + slack)[-1]])
    notes = []
    if level is not None:
        if level < 0:
            raise ValueError("level must be nonnegative")
        if _l1_phi(y, w, problem.kappa, level) <= phi_min + slack:
            chosen = float(level)
        else:
            notes.append("requested level is not optimal; tie rule used")
    x = soft_threshold(y, chosen * w)
    if model.box is not None:
        x = model.project(x)
        notes.append("box projection applied to the unconstrained minimizer")
    sol = _finish(problem, x, "l1_level", warnings=notes)
    sol.metadata["level"] = chosen
    sol.metadata["profile_min"] = phi_min
    return sol


# ---------------------------------------------------------------------------
# Projected descent
# ---------------------------------------------------------------------------
def _smooth_value_grad(problem: TikhonovProblem, x):
    """Smooth part of the objective, its gradient and the data residual norm."""
    model = problem.model
    r = model.apply(x) - problem.y_delta
    res = model.y_norm(r)
    g = 2.0 * model.gradient(x, r)
    value = res * res
    if problem.m == 2:
        pen = model.v_norm(x)
        value += problem.kappa * pen * pen
        g = g + 2.0 * problem.kappa * model.v_gram(x)
    return value, g, res


def _nonsmooth(problem, x):
    if problem.m == 1:
        return problem.kappa * math.fsum(np.abs(x))
    return 0.0


def _bounds(model):
    if model.box is None:
        return -np.inf, np.inf
    return model.box


def _prox(problem, v, step):
    """Projection onto the box, preceded by soft thresholding when ``m = 1``."""
    if problem.m == 1:
        v = soft_threshold(v, step * problem.kappa)
    lo, hi = _bounds(problem.model)
    return np.clip(v, lo, hi)


def _descend_euclidean(problem: TikhonovProblem, options: SolverOptions, x0):
    x = _prox(problem, x0, 0.0)
    f, g, _ = _smooth_value_grad(problem, x)
    total = f + _nonsmooth(problem, x)
    if not math.isfinite(total):
        raise ValueError("objective is not finite at the start point")
    notes = []
    pgn0 = float(np.linalg.norm(x - _prox(problem, x - g, 1.0)))
    pgn = pgn0
    step = 1.0 / max(1.0, float(np.linalg.norm(g)))
    it = 0
    converged = pgn0 == 0.0
    while not converged and it < options.max_iters:
        it += 1
        eta = step
        while True:
            xn = _prox(problem, x - eta * g, eta)
            d = xn - x
            fn, gn, _ = _smooth_value_grad(problem, xn)
            totn = fn + _nonsmooth(problem, xn)
            # Near the minimizer the objective decrease drops below the
            # rounding error of f itself; the allowance keeps BB steps going
            # there instead of shrinking them to nothing.
            slack = _ROUNDOFF_SLACK * abs(total)
            if problem.m == 1:
                ok = fn <= f + g @ d + (d @ d) / (2.0 * eta) + slack and totn <= total + slack
            else:
                ok = fn <= f + options.armijo * (g @ d) + slack
            if ok:
                break
            eta *= options.backtrack
            if eta < options.min_step:
                break
        if eta < options.min_step:
            notes.append("line search step underflow")
            break
        s = d
        yv = gn - g
        sy = float(s @ yv)
        step = float(s @ s) / sy if sy > 0 else 2.0 * eta
        step = min(max(step, 1e-12), 1e12)
        x, f, g, total = xn, fn, gn, totn
        pgn = float(np.linalg.norm(x - _prox(problem, x - g, 1.0)))
        if pgn <= options.gtol * pgn0:
            converged = True
        elif not np.any(d):
            notes.append("iterate stagnated before the gradient tolerance")
            break
    return x, it, pgn, converged, notes


def _descend_newton(problem: TikhonovProblem, options: SolverOptions, x0):
    """Projected Newton with an epsilon-active set.

    Free coordinates take a Newton step with the exact Hessian (Gauss-Newton
    when the exact Hessian is not positive definite on the free block);
    active coordinates take a diagonally scaled gradient step.  Iteration
    stops once the Newton decrement drops to round-off level, after one
    final full step.
    """
    model = problem.model
    if problem.m != 2:
        raise ValueError("the Newton metric needs m = 2")
    lo, hi = _bounds(model)
    kappa = problem.kappa
    x = np.clip(x0, lo, hi)
    f, g, _ = _smooth_value_grad(problem, x)
    if not math.isfinite(f):
        raise ValueError("objective is not finite at the start point")
    notes = []
    pgn = float(np.linalg.norm(x - np.clip(x - g, lo, hi)))
    converged = pgn == 0.0
    it = 0
    while not converged and it < options.newton_max_iters:
        it += 1
        eps = min(1e-8, pgn)
        active = ((x <= lo + eps) & (g > 0)) | ((x >= hi - eps) & (g < 0))
        free = ~active
        r = model.apply(x) - problem.y_delta
        gn_part, curv_part, gram_v = model.hessian_parts(x, r)
        hess = 2.0 * gn_part + 2.0 * kappa * gram_v
        full = hess + 2.0 * curv_part
        d = np.zeros_like(x)
        if hess.ndim == 1:
            # diagonal Hessian: fall back to Gauss-Newton where the exact entry is not positive
            diag = np.where(full > 0, full, hess)
            d = -g / diag
        else:
            block = np.ix_(free, free)
            try:
                np.linalg.cholesky(full[block])
                hess = full
            except np.linalg.LinAlgError:
                pass
            if np.any(free):
                d[free] = -np.linalg.solve(hess[block], g[free])
            diag = np.diag(hess)
            d[active] = -g[active] / diag[active]
        decrement = -float(g[free] @ d[free])
        if decrement <= 1e-13 * abs(f):
            x = np.clip(x + d, lo, hi)
            f, g, _ = _smooth_value_grad(problem, x)
            converged = True
            break
        eta = 1.0
        while True:
            xn = np.clip(x + eta * d, lo, hi)
            fn, gn, _ = _smooth_value_grad(problem, xn)
            dec = eta * decrement + float(g[active] @ (x[active] - xn[active]))
            if fn <= f - options.armijo * dec:
                break
            if eta == 1.0 and abs(fn - f) <= 1e-13 * abs(f):
                break
            eta *= options.backtrack
            if eta < 1e-10:
                break
        if eta < 1e-10:
            notes.append("line search step underflow")
            break
        x, f, g = xn, fn, gn
        pgn = float(np.linalg.norm(x - np.clip(x - g, lo, hi)))
    pgn = float(np.linalg.norm(x - np.clip(x - g, lo, hi)))
    return x, it, pgn, converged, notes


def _extra_starts(problem, options, first, count):
    rng = np.random.default_rng(options.seed)
    model = problem.model
    if model.box is not None:
        return list(box_samples(model, count, rng))
    scale = max(1.0, float(np.max(np.abs(first))))
    return [scale * rng.standard_normal(model.n) for _ in range(count)]


def solve_projected_gradient(problem: TikhonovProblem, options: SolverOptions | None = None,
                             x0=None) -> Solution:
    """Stationary point of the objective over the model's box.

    With ``options.restarts > 1`` additional seeded starts are run and the
    best objective is returned; the spread of the final objectives is
    recorded and flagged when it exceeds ``options.spread_tol``.
    """
    options = options or SolverOptions()
    model = problem.model
    if problem.nu != 2:
        raise ValueError("projected descent needs nu = 2")
    metric = options.metric
    if metric == "auto":
        metric = "newton" if problem.m == 2 else "euclidean"
    descend = _descend_newton if metric == "newton" else _descend_euclidean
    start = model.project(np.zeros(model.n)) if x0 is None else model.project(model.check(x0))
    starts = [start]
    if options.restarts > 1:
        starts += _extra_starts(problem, options, start, options.restarts - 1)
    runs = []
    for s in starts:
        x, it, pgn, conv, notes = descend(problem, options, s)
        runs.append((problem.objective(x), x, it, pgn, conv, notes))
    objectives = [r[0] for r in runs]
    best = int(np.argmin(objectives))
    obj, x, it, pgn, conv, notes = runs[best]
    notes = list(notes)
    if not conv:
        notes.append("iteration limit reached before the gradient tolerance")
    spread = float(max(objectives) - min(objectives))
    disagree = spread > options.spread_tol * max(1.0, abs(obj))
    if disagree:
        notes.append(f"multi-start objectives disagree (spread {spread:.3e})")
    sol = _finish(problem, x, f"projected_{metric}", iterations=it, pg_norm=pgn,
                  converged=conv, warnings=notes)
    sol.metadata.update(armijo=options.armijo, backtrack=options.backtrack,
                        restarts=options.restarts, spread=spread,
                        multistart_disagreement=disagree,
                        global_optimality="not certified")
    return sol


def solve(problem: TikhonovProblem, options: SolverOptions | None = None, x0=None) -> Solution:
    """Dispatch to the branch that fits the problem."""
    model = problem.model
    if isinstance(model, L1Embedding):
        return solve_l1_sup(problem)
    if (isinstance(model, LinearDiagonal) and model.box is None
            and (problem.nu, problem.m) == (2, 2) and problem.penalty == "V"):
        return solve_diagonal_quadratic(problem)
    return solve_projected_gradient(problem, options, x0)
