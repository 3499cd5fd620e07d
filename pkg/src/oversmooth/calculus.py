"""Functional calculus for diagonal operators and decomposition families.

For a diagonal operator every function of the operator is a coordinatewise
multiplier, so fractional powers, smoothing operators ``f(tA)`` and the
weighted-sequence decomposition ``(P_t x)_n = f(t^{a+1} w_n) x_n`` are
exact at truncation.  The module also provides empirical checks of the
operator-norm bounds these families satisfy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spaces import U, V, FracDomain, ScaleKind, ScaleModel, WeightSequence, Xs, norms

__all__ = [
    "SmoothingFn",
    "DecompositionFamily",
    "apply_fractional_power",
    "apply_smoothing",
    "log_grid",
    "refine_log_grid",
    "GrowthEstimate",
    "growth_condition_estimate",
    "BoundRow",
    "BoundReport",
    "decomposition_bounds_report",
    "moment_inequality_check",
]

SMOOTHING_KINDS = ("exp", "exp2", "rational", "hat")


@dataclass(frozen=True)
class SmoothingFn:
    """A nonincreasing function ``f`` on ``[0, inf)`` with ``f(0) = 1``.

    ============  ===========================  =======================
    kind          f(z)                         order of ``1 - f`` at 0
    ============  ===========================  =======================
    ``exp``       ``exp(-z)``                  1
    ``exp2``      ``exp(-z**2)``               2
    ``rational``  ``1 / (1 + z**(a+1))``       ``a + 1``
    ``hat``       1, then ``2 - z``, then 0    infinite
    ============  ===========================  =======================

    The order matters: ``|1 - f(z)| <= C z^k`` near zero holds exactly for
    ``k`` up to the order, so spectral approximation bounds of weak-norm
    order ``theta + a`` need ``order >= theta + a``.
    """

    kind: str = "exp2"
    a: float = 1.0

    def __post_init__(self):
        if self.kind not in SMOOTHING_KINDS:
            raise ValueError(f"smoothing must be one of {SMOOTHING_KINDS}, got {self.kind!r}")
        if self.kind == "rational" and self.a < 0:
            raise ValueError("rational smoothing needs a >= 0")

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if np.any(z < 0):
            raise ValueError("smoothing functions are evaluated on [0, inf)")
        if self.kind == "exp":
            return np.exp(-z)
        if self.kind == "exp2":
            return np.exp(-z * z)
        if self.kind == "rational":
            return 1.0 / (1.0 + z ** (self.a + 1.0))
        return np.clip(2.0 - z, 0.0, 1.0)

    def one_minus(self, z):
        """``1 - f(z)`` without cancellation for small ``z``."""
        z = np.asarray(z, dtype=float)
        if np.any(z < 0):
            raise ValueError("smoothing functions are evaluated on [0, inf)")
        if self.kind == "exp":
            return -np.expm1(-z)
        if self.kind == "exp2":
            return -np.expm1(-z * z)
        if self.kind == "rational":
            zk = z ** (self.a + 1.0)
            return zk / (1.0 + zk)
        return np.clip(z - 1.0, 0.0, 1.0)

    @property
    def order(self) -> float:
        return {"exp": 1.0, "exp2": 2.0, "rational": self.a + 1.0, "hat": math.inf}[self.kind]

    @property
    def sup(self) -> float:
        """``sup |f|`` on ``[0, inf)``; every shipped kind attains 1 at 0."""
        return 1.0


def log_grid(lo: float, hi: float, per_decade: int = 64) -> np.ndarray:
    """Log-uniform grid from ``lo`` to ``hi`` inclusive."""
    if not 0 < lo < hi:
        raise ValueError("need 0 < lo < hi")
    n = max(2, int(round(per_decade * math.log10(hi / lo))) + 1)
    return np.geomspace(lo, hi, n)


def refine_log_grid(grid: np.ndarray) -> np.ndarray:
    """Insert the geometric midpoint between neighbours (2x refinement)."""
    grid = np.asarray(grid, dtype=float)
    mids = np.sqrt(grid[:-1] * grid[1:])
    out = np.empty(grid.size + mids.size)
    out[0::2] = grid
    out[1::2] = mids
    return out


def apply_fractional_power(model: ScaleModel, s: float, x) -> np.ndarray:
    """``A^s x`` for a spectral model: ``(lam_n^s x_n)_n``."""
    if model.kind is not ScaleKind.SPECTRAL:
        raise ValueError("fractional powers need a spectral model")
    x = model.check(x)
    if s == 0:
        return x.copy()
    return model.lam ** s * x


@dataclass(frozen=True, eq=False)
class DecompositionFamily:
    """The family ``t -> P_t`` attached to a scale model.

    ``mode="spectral"`` gives ``P_t = f(tA)``; ``mode="l1"`` gives
    ``(P_t x)_n = f(t^{a+1} w_n) x_n`` for ``0 < t <= t0``.  By default
    ``t0 = inf`` for the spectral mode and ``tau0^{1/(1+a)}`` for the
    sequence mode, where ``tau0`` bounds the range on which the growth
    condition was certified.
    """

    model: ScaleModel
    f: SmoothingFn
    t0: float | None = None
    mode: str | None = None
    tau0: float = 1.0

    def __post_init__(self):
        mode = self.mode
        if mode is None:
            mode = "spectral" if self.model.kind is ScaleKind.SPECTRAL else "l1"
        if mode not in ("spectral", "l1"):
            raise ValueError("mode must be 'spectral' or 'l1'")
        object.__setattr__(self, "mode", mode)
        t0 = self.t0
        if t0 is None:
            t0 = math.inf if mode == "spectral" else self.tau0 ** (1.0 / (1.0 + self.model.a))
        if not t0 > 0:
            raise ValueError("t0 must be positive")
        object.__setattr__(self, "t0", float(t0))

    def argument(self, t: float) -> np.ndarray:
        self._check_t(t)
        if self.mode == "spectral":
            return t * self.model.lam
        return t ** (self.model.a + 1.0) * self.model.lam

    def multiplier(self, t: float) -> np.ndarray:
        return self.f(self.argument(t))

    def defect_multiplier(self, t: float) -> np.ndarray:
        """Coordinates of ``id - P_t``."""
        return self.f.one_minus(self.argument(t))

    def apply(self, t: float, x) -> np.ndarray:
        return self.multiplier(t) * self.model.check(x)

    def _check_t(self, t):
        if not t > 0:
            raise ValueError("t must be positive; request the identity explicitly for t = 0")
        if t > self.t0 * (1.0 + 1e-12):
            raise ValueError(f"t={t:g} exceeds the admissible bound t0={self.t0:g}")


def apply_smoothing(family: DecompositionFamily, t: float, x) -> np.ndarray:
    """``P_t x``; contracts every coordinate because ``0 <= f <= 1``."""
    return family.apply(t, x)


# ---------------------------------------------------------------------------
# Growth condition
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class GrowthEstimate:
    """Result of :func:`growth_condition_estimate`.

    ``value`` is ``sup_tau tau * sum_n w_n f(tau w_n)`` over the grid.
    ``tail_ok`` is False when the last retained term is not negligible,
    i.e. the truncated sum may be missing mass.  ``weight_diverges``
    records whether the weights grow enough to be a divergent generator.
    """

    value: float
    argmax_tau: float
    tail_ratio: float
    tail_ok: bool
    weight_diverges: bool

    def __float__(self):
        return self.value


def growth_condition_estimate(w, f: SmoothingFn, tau_grid, tail_tol: float = 1e-8,
                              divergence_ratio: float = 10.0) -> GrowthEstimate:
    """Empirical constant of the growth bound ``sum w f(tau w) <= C / tau``."""
    ws = w if isinstance(w, WeightSequence) else WeightSequence(np.asarray(w, dtype=float))
    vals = ws.values
    taus = np.asarray(tau_grid, dtype=float)
    if taus.size == 0 or np.any(taus <= 0):
        raise ValueError("tau grid must be nonempty and positive")
    terms = vals[None, :] * f(taus[:, None] * vals[None, :])
    sums = np.array([math.fsum(row) for row in terms])
    scaled = taus * sums
    k = int(np.argmax(scaled))
    with np.errstate(invalid="ignore", divide="ignore"):
        tail = np.where(sums > 0, terms[:, -1] / sums, 0.0)
    tail_ratio = float(tail.max())
    return GrowthEstimate(
        value=float(scaled[k]),
        argmax_tau=float(taus[k]),
        tail_ratio=tail_ratio,
        tail_ok=tail_ratio <= tail_tol,
        weight_diverges=ws.diverges(divergence_ratio),
    )


# ---------------------------------------------------------------------------
# Decomposition bound reports
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class BoundRow:
    name: str
    constant: float
    constant_refined: float
    drift: float
    passed: bool


@dataclass(frozen=True)
class BoundReport:
    s: float
    rows: tuple
    passed: bool
    details: dict = field(default_factory=dict)

    def constant(self, name: str) -> float:
        for row in self.rows:
            if row.name == name:
                return row.constant
        raise KeyError(name)


def _bound_constants(family: DecompositionFamily, s: float, samples: np.ndarray, t_grid) -> dict:
    model = family.model
    a = model.a
    base = norms(model, Xs(s), samples)
    if np.any(base == 0):
        raise ValueError("samples must be nonzero")
    out = {"Xs_to_Xs": 0.0, "Xs_to_U_defect": 0.0, "Xs_to_V": 0.0}
    for t in t_grid:
        mult = family.multiplier(t)
        defect = family.defect_multiplier(t)
        smoothed = samples * mult
        out["Xs_to_Xs"] = max(out["Xs_to_Xs"], float(np.max(norms(model, Xs(s), smoothed) / base)))
        out["Xs_to_U_defect"] = max(
            out["Xs_to_U_defect"],
            float(np.max(norms(model, U, samples * defect) / (t ** (a + s) * base))),
        )
        out["Xs_to_V"] = max(
            out["Xs_to_V"], float(np.max(norms(model, V, smoothed) / (t ** (s - 1.0) * base)))
        )
    return out


def decomposition_bounds_report(family: DecompositionFamily, s: float, samples, t_grid,
                                max_drift: float = 0.05) -> BoundReport:
    """Empirical constants of the three decomposition bounds on ``X_s``.

    The inequalities are ``|P_t x|_{X_s} <= C |x|_{X_s}``,
    ``|(P_t - id) x|_U <= C t^{a+s} |x|_{X_s}`` and
    ``|P_t x|_V <= C t^{s-1} |x|_{X_s}``.  Each constant is the supremum of
    the ratio over samples and ``t``; it passes when finite and when a 2x
    refinement of the log grid moves it by at most ``max_drift``.
    """
    if not 0.0 < s < 1.0:
        raise ValueError("s must lie in (0, 1)")
    samples = np.atleast_2d(family.model.check(samples))
    if samples.shape[0] == 0:
        raise ValueError("empty sample set")
    t_grid = np.asarray(t_grid, dtype=float)
    coarse = _bound_constants(family, s, samples, t_grid)
    fine = _bound_constants(family, s, samples, refine_log_grid(t_grid))
    rows = []
    for name, c in coarse.items():
        cf = fine[name]
        finite = math.isfinite(c) and math.isfinite(cf)
        drift = abs(cf - c) / c if finite and c > 0 else math.inf
        rows.append(BoundRow(name, c, cf, drift, finite and drift <= max_drift))
    return BoundReport(s, tuple(rows), all(r.passed for r in rows),
                       {"t_min": float(t_grid[0]), "t_max": float(t_grid[-1]),
                        "samples": int(samples.shape[0])})


def moment_inequality_check(model: ScaleModel, a: float, r: float, s: float, samples) -> float:
    """Largest ratio ``|A^r x| / (|A^s x|^{(r+a)/(a+s)} |A^{-a} x|^{(s-r)/(a+s)})``.

    For a diagonal Hilbert model the ratio is at most one (Hoelder).
    """
    if model.kind is not ScaleKind.SPECTRAL:
        raise ValueError("the moment inequality check needs a spectral model")
    if not (a >= 0 and 0 < r <= s):
        raise ValueError("need a >= 0 and 0 < r <= s")
    xs = np.atleast_2d(model.check(samples))
    nr = norms(model, FracDomain(r), xs)
    ns = norms(model, FracDomain(s), xs)
    na = norms(model, FracDomain(-a), xs)
    if np.any(nr == 0):
        raise ValueError("samples must be nonzero")
    ratios = nr / (ns ** ((r + a) / (a + s)) * na ** ((s - r) / (a + s)))
    return float(np.max(ratios))
