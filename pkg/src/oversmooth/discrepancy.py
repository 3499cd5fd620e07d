"""Parameter choice by the discrepancy equality and the auxiliary smoothing level.

:func:`find_kappa_dp` finds ``kappa`` with ``|F(x_kappa) - y_delta|_Y = C_DP delta``;
:func:`find_t_aux` finds the smoothing level ``t`` at which the smoothed
truth has image misfit ``(C_DP - 1) delta``.  Both work in log coordinates
with Brent's method.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .forward import L1Embedding, LinearDiagonal, NonlinearDiagonal
from .solver import Solution, SolverOptions, TikhonovProblem, solve, solve_l1_sup

__all__ = [
    "DPStatus",
    "DiscrepancyConfig",
    "DiscrepancyResult",
    "DiscrepancyEvaluationError",
    "AuxUnreachable",
    "AuxResult",
    "find_kappa_dp",
    "find_t_aux",
]


class DPStatus(str, enum.Enum):
    EXACT = "Exact"
    BRACKET_FAILURE = "BracketFailure"
    NON_MONOTONE_RESOLVED = "NonMonotoneResolved"
    NO_SOLUTION = "NoSolution"


@dataclass(frozen=True)
class DiscrepancyConfig:
    """Controls for the ``kappa`` search.

    ``rtol`` is the relative tolerance on the residual equality; the search
    stops as soon as ``|residual - target| <= rtol * target``.
    """

    c_dp: float = 2.0
    kappa_lo: float = 1e-12
    kappa_hi: float = 1e6
    rtol: float = 1e-9
    max_steps: int = 200
    scan_per_decade: int = 32

    def __post_init__(self):
        if not self.c_dp > 1:
            raise ValueError("C_DP must exceed 1")
        if not 0 < self.kappa_lo < self.kappa_hi:
            raise ValueError("need 0 < kappa_lo < kappa_hi")
        if not self.rtol > 0:
            raise ValueError("rtol must be positive")
        if self.max_steps < 1 or self.scan_per_decade < 1:
            raise ValueError("max_steps and scan_per_decade must be positive")


@dataclass
class DiscrepancyResult:
    kappa_dp: float
    x_dp: np.ndarray
    residual: float
    status: DPStatus
    target: float
    solution: Solution | None = None
    evaluations: int = 0
    jump: float = math.nan
    message: str = ""

    @property
    def exact(self) -> bool:
        return self.status is DPStatus.EXACT

    @property
    def relative_gap(self) -> float:
        return abs(self.residual - self.target) / self.target


class DiscrepancyEvaluationError(RuntimeError):
    """A solver call failed while evaluating the residual map."""

    def __init__(self, kappa: float, cause: Exception):
        super().__init__(f"solver failed at kappa = {kappa:.6e}: {cause}")
        self.kappa = kappa


class _Hit(Exception):
    def __init__(self, log_kappa):
        self.log_kappa = log_kappa


class _ResidualMap:
    """Cached, warm-started evaluations of ``log kappa -> residual - target``."""

    def __init__(self, problem, target, rtol, options, x0):
        self.problem = problem
        self.target = target
        self.rtol = rtol
        self.options = options
        self.warm = x0
        self.cache = {}
        self.count = 0
        # last evaluated points strictly below and above the target
        self.below = None
        self.above = None

    def solve_at(self, log_kappa):
        if log_kappa in self.cache:
            return self.cache[log_kappa]
        kappa = math.exp(log_kappa)
        try:
            sol = solve(self.problem.with_kappa(kappa), self.options, self.warm)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            raise DiscrepancyEvaluationError(kappa, exc) from exc
        self.count += 1
        if sol.method.startswith("projected"):
            self.warm = sol.x
        self.cache[log_kappa] = sol
        return sol

    def __call__(self, log_kappa, stop_on_hit=True):
        gap = self.solve_at(log_kappa).residual - self.target
        if gap < 0:
            self.below = (log_kappa, gap)
        elif gap > 0:
            self.above = (log_kappa, gap)
        if stop_on_hit and abs(gap) <= self.rtol * self.target:
            raise _Hit(log_kappa)
        return gap


def _root(fun, lo, hi, config):
    try:
        brentq(fun, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=config.max_steps)
    except _Hit as hit:
        return hit.log_kappa
    except RuntimeError:
        pass
    candidates = [p for p in (fun.below, fun.above) if p is not None]
    return min(candidates, key=lambda p: abs(p[1]))[0]


def _result(fun, log_kappa, status, jump=math.nan, message=""):
    sol = fun.cache[log_kappa]
    return DiscrepancyResult(kappa_dp=math.exp(log_kappa), x_dp=sol.x, residual=sol.residual,
                             status=status, target=fun.target, solution=sol,
                             evaluations=fun.count, jump=jump, message=message)


def _l1_plateau(problem, target, config):
    """Exact solution of the equality for the weighted-``l1`` embedding.

    The residual map is a step function of ``kappa``; the target level is
    attained on the flat piece of the level objective, at
    ``kappa = 1 / sum{w_n : |y_n| / w_n > target}``.
    """
    y = problem.y_delta
    w = problem.model.scale.lam
    mass = math.fsum(w[np.abs(y) / w > target])
    if mass == 0.0:
        return None
    kappa = 1.0 / mass
    if not config.kappa_lo <= kappa <= config.kappa_hi:
        return None
    sol = solve_l1_sup(problem.with_kappa(kappa), level=target)
    status = DPStatus.EXACT if abs(sol.residual - target) <= config.rtol * target else DPStatus.BRACKET_FAILURE
    return DiscrepancyResult(kappa_dp=kappa, x_dp=sol.x, residual=sol.residual, status=status,
                             target=target, solution=sol, evaluations=1)


def find_kappa_dp(problem: TikhonovProblem, config: DiscrepancyConfig | None = None,
                  options: SolverOptions | None = None, x0=None) -> DiscrepancyResult:
    """Solve ``residual(kappa) = C_DP * delta`` over the configured bracket.

    ``problem.kappa`` is ignored; every other field defines the family.
    Returns status ``Exact`` when the endpoints bracket the target and the
    root meets the tolerance, ``NonMonotoneResolved`` when a scan was needed
    to find a sign change, ``BracketFailure`` when the residual jumps over
    the target, and ``NoSolution`` when no sign change exists.
    """
    config = config or DiscrepancyConfig()
    model = problem.model
    target = config.c_dp * problem.delta
    if not target > 0:
        raise ValueError("the discrepancy equality needs delta > 0")
    if isinstance(model, (LinearDiagonal, NonlinearDiagonal, L1Embedding)):
        data_norm = model.y_norm(problem.y_delta)
        if data_norm <= target:
            warnings.warn(f"|y_delta| = {data_norm:.3e} does not exceed C_DP*delta = {target:.3e}; "
                          "the equality may have no solution", RuntimeWarning, stacklevel=2)

    if isinstance(model, L1Embedding) and (problem.nu, problem.m) == (1, 1):
        found = _l1_plateau(problem, target, config)
        if found is not None:
            return found

    fun = _ResidualMap(problem, target, config.rtol, options, x0)
    lo, hi = math.log(config.kappa_lo), math.log(config.kappa_hi)
    try:
        g_lo = fun(lo)
        g_hi = fun(hi)
    except _Hit as hit:
        return _result(fun, hit.log_kappa, DPStatus.EXACT)

    if g_lo < 0 < g_hi:
        status = DPStatus.EXACT
    else:
        count = max(2, int(math.ceil((hi - lo) / math.log(10.0) * config.scan_per_decade)) + 1)
        grid = np.linspace(lo, hi, count)
        values = []
        try:
            for lk in grid:
                values.append(fun(float(lk)))
        except _Hit as hit:
            return _result(fun, hit.log_kappa, DPStatus.NON_MONOTONE_RESOLVED)
        values = np.array(values)
        change = np.flatnonzero(np.sign(values[:-1]) * np.sign(values[1:]) < 0)
        if change.size == 0:
            best = float(grid[int(np.argmin(np.abs(values)))])
            return _result(fun, best, DPStatus.NO_SOLUTION,
                           message="the residual never crosses C_DP*delta on the bracket")
        lo, hi = float(grid[change[0]]), float(grid[change[0] + 1])
        status = DPStatus.NON_MONOTONE_RESOLVED
        fun.below = fun.above = None
        fun(lo, stop_on_hit=False)
        fun(hi, stop_on_hit=False)

    log_kappa = _root(fun, lo, hi, config)
    sol = fun.cache[log_kappa]
    if abs(sol.residual - target) <= config.rtol * target:
        return _result(fun, log_kappa, status)
    jump = abs(fun.above[1] - fun.below[1]) if fun.above and fun.below else math.nan
    return _result(fun, log_kappa, DPStatus.BRACKET_FAILURE, jump=jump,
                   message=f"residual jumps by {jump:.3e} across the target")


# ---------------------------------------------------------------------------
# Auxiliary smoothing level
# ---------------------------------------------------------------------------
class AuxUnreachable(ValueError):
    """The misfit of the smoothed truth never reaches ``(C_DP - 1) delta``; reduce delta."""


@dataclass
class AuxResult:
    t_aux: float
    x_aux: np.ndarray
    misfit: float
    in_domain: bool
    u_error: float
    u_bound: float
    v_norm: float
    v_bound: float = math.nan
    details: dict = field(default_factory=dict)


def find_t_aux(model, family, x_true, delta: float, c_dp: float = 2.0, *, c_u: float | None = None,
               theta: float | None = None, E: float | None = None, c_ap: float | None = None,
               a: float | None = None, C_u: float | None = None) -> AuxResult:
    """Smoothing level with ``|F(P_t x_true) - F(x_true)|_Y = (C_DP - 1) delta``.

    ``family`` is anything with ``apply(t, x)`` and an upper level ``t0``
    (``inf`` allowed).  The weak-norm bound ``(C_DP - 1) delta / c_U`` is
    always attached; the ``V``-norm bound
    ``(c_ap E)^{(a+1)/(a+theta)} ((C_DP - 1) delta / C_U)^{(theta-1)/(a+theta)}``
    is attached when ``theta``, ``E``, ``c_ap`` and ``a`` are supplied.
    """
    if not c_dp > 1:
        raise ValueError("C_DP must exceed 1")
    if not delta > 0:
        raise ValueError("delta must be positive")
    x_true = np.asarray(x_true, dtype=float)
    y_true = model.apply(x_true)
    target = (c_dp - 1.0) * delta

    def gap(log_t):
        return model.y_norm(model.apply(family.apply(math.exp(log_t), x_true)) - y_true) - target

    t0 = float(family.t0)
    if math.isfinite(t0):
        hi = math.log(t0)
        if gap(hi) < 0:
            raise AuxUnreachable(f"misfit at t0 = {t0:.3e} stays below (C_DP-1)*delta; reduce delta")
    else:
        hi = 0.0
        while gap(hi) < 0:
            hi += math.log(4.0)
            if hi > math.log(1e12):
                raise AuxUnreachable("misfit of the smoothed truth stays below (C_DP-1)*delta; reduce delta")
    lo = hi - math.log(4.0)
    while gap(lo) > 0:
        lo -= math.log(4.0)
        if lo < math.log(1e-300):
            raise AuxUnreachable("no smoothing level below the target misfit was found")
    log_t = brentq(gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    t_aux = math.exp(log_t)
    x_aux = family.apply(t_aux, x_true)
    c_u = model.c_U if c_u is None else c_u
    C_u = model.C_U if C_u is None else C_u
    v_bound = math.nan
    if None not in (theta, E, c_ap, a, C_u):
        v_bound = (c_ap * E) ** ((a + 1) / (a + theta)) * (target / C_u) ** ((theta - 1) / (a + theta))
    return AuxResult(
        t_aux=t_aux,
        x_aux=x_aux,
        misfit=model.y_norm(model.apply(x_aux) - y_true),
        in_domain=model.in_domain(x_aux),
        u_error=model.u_norm(x_aux - x_true),
        u_bound=target / c_u if c_u else math.nan,
        v_norm=model.v_norm(x_aux),
        v_bound=v_bound,
    )
