"""End-to-end rate experiments.

A run draws a truth of prescribed smoothness, perturbs its data by noise of
exact size ``delta``, picks ``kappa`` by the discrepancy equality and
records the errors.  The observed errors are fitted against ``delta`` on a
log-log scale and compared with the exponent ``theta / (a + theta)``.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .discrepancy import DiscrepancyConfig, DPStatus, find_kappa_dp
from .forward import (EllipticConfig, EllipticRadiative, ForwardModel, L1Embedding, LinearDiagonal,
                      NonlinearDiagonal, box_samples, two_sided_constants_estimate)
from .solver import SolverOptions, TikhonovProblem
from .spaces import V, ScaleKind, ScaleModel, WeightSequence, Xs, norm

__all__ = [
    "TruthSpec",
    "Truth",
    "generate_truth",
    "oversmoothing_witness",
    "add_noise",
    "RateFit",
    "fit_rate",
    "ModelSpec",
    "ExperimentConfig",
    "ExperimentReport",
    "run_rate_experiment",
    "DEFAULT_DELTAS",
    "ELLIPTIC_DELTAS",
    "preset_experiment",
    "write_grid_csv",
    "estimate_c_u",
]

DEFAULT_DELTAS = tuple(10.0 ** (-k / 2.0) for k in range(4, 11))


# ---------------------------------------------------------------------------
# Truth generation
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TruthSpec:
    """Smoothness class and shape of the generated truth.

    ``mode="deterministic"`` uses positive coordinates; ``mode="seeded"``
    attaches random signs drawn from ``seed`` to the same envelope.
    """

    theta: float = 0.5
    E: float = 1.0
    mu: float = 0.01
    mode: str = "deterministic"
    require_oversmoothing: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if not self.E > 0:
            raise ValueError("E must be positive")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.mode not in ("deterministic", "seeded"):
            raise ValueError("mode must be 'deterministic' or 'seeded'")


@dataclass
class Truth:
    x: np.ndarray
    regime: str  # "oversmoothing" or "classical"
    smoothness_norm: float
    witness: dict = field(default_factory=dict)


def _signs(spec: TruthSpec, n: int) -> np.ndarray:
    if spec.mode == "deterministic":
        return np.ones(n)
    return np.random.default_rng(spec.seed).choice([-1.0, 1.0], size=n)


def _envelope(scale: ScaleModel, spec: TruthSpec) -> np.ndarray:
    """Unnormalized truth coordinates for a sequence model."""
    idx = np.arange(1, scale.N + 1, dtype=float)
    lam = scale.lam
    if scale.kind is ScaleKind.SPECTRAL:
        return lam ** (-spec.theta) * idx ** (-0.5 - spec.mu)
    p_theta = scale.p_s(spec.theta)
    return lam ** ((p_theta - 1.0) / p_theta) * idx ** (-(1.0 + 2.0 * spec.mu) / p_theta)


def _smoothness_tag(scale: ScaleModel, theta: float):
    return Xs(theta)


def _divergence_rule(scale: ScaleModel, spec: TruthSpec):
    """Whether the penalty norm of the infinite envelope diverges, by generator.

    Returns ``(diverges or None, admissible range text)``; ``None`` means the
    generator gives no closed-form answer.
    """
    gen = scale.weights.generator
    beta = scale.weights.param
    theta, mu = spec.theta, spec.mu
    if gen == "geometric":
        return True, "every mu > 0 (geometric weights)"
    if gen != "polynomial":
        return None, "no closed-form rule for explicit weights"
    if scale.kind is ScaleKind.SPECTRAL:
        # |A x|^2 has terms n^{beta (2 - 2 theta) - 1 - 2 mu}
        return beta * (1.0 - theta) >= mu, f"mu <= beta (1 - theta) = {beta * (1.0 - theta):.6g}"
    p_theta = scale.p_s(theta)
    # |x|_1 has terms n^{beta (1 - 1/p_theta) - (1 + 2 mu)/p_theta}
    limit = (beta * (p_theta - 1.0) + p_theta - 1.0) / 2.0
    return mu <= limit, f"mu <= (beta + 1)(p_theta - 1)/2 = {limit:.6g}"


def oversmoothing_witness(scale: ScaleModel, spec: TruthSpec) -> dict:
    """Penalty norm of the truth under doubling of the truncation ``N``.

    The truth for ``2N`` keeps the normalization factor of the ``N`` truth,
    so the two vectors agree on the first ``N`` coordinates.  ``growth`` is
    the ratio of penalty norms; ``growth_squared`` its square.
    """
    if scale.weights.generator == "explicit":
        raise ValueError("doubling needs a weight generator")
    env = _envelope(scale, spec)
    factor = spec.E / norm(scale, _smoothness_tag(scale, spec.theta), env)
    big = scale.resized(2 * scale.N)
    env_big = _envelope(big, spec) * factor
    v_small = norm(scale, V, env * factor)
    v_big = norm(big, V, env_big)
    diverges, admissible = _divergence_rule(scale, spec)
    growth = v_big / v_small
    return {
        "N": scale.N,
        "penalty_N": v_small,
        "penalty_2N": v_big,
        "growth": growth,
        "growth_squared": growth * growth,
        "diverges_analytic": diverges,
        "admissible": admissible,
    }


def _elliptic_truth(model: EllipticRadiative, spec: TruthSpec) -> Truth:
    lam, phi = model.sine_basis()
    k = np.arange(1, model.n + 1, dtype=float)
    coef = lam ** (-spec.theta) * k ** (-0.5 - spec.mu) * _signs(spec, model.n)
    coef *= spec.E / math.sqrt(math.fsum((lam ** spec.theta * coef) ** 2))
    chi = phi @ coef
    if not model.in_domain(chi):
        raise ValueError(f"truth leaves the box [0, {model.config.R}]; lower E or raise R")
    diverges = (1.0 - spec.theta) >= spec.mu
    if spec.require_oversmoothing and not diverges:
        raise ValueError(f"envelope has finite penalty norm; need mu <= 1 - theta = {1.0 - spec.theta:.6g}")
    witness = {"diverges_analytic": diverges, "penalty_M": model.v_norm(chi)}
    return Truth(chi, "oversmoothing" if diverges else "classical", model.frac_norm(chi, spec.theta), witness)


def generate_truth(model, spec: TruthSpec) -> Truth:
    """Truth with exact smoothness norm ``E``.

    ``model`` is a :class:`ScaleModel` (sequence truth) or an
    :class:`EllipticRadiative` model (sine-series truth with
    ``|A^theta chi| = E``).  With ``spec.require_oversmoothing`` the envelope
    must have infinite penalty norm, otherwise a ``ValueError`` names the
    admissible range of ``mu``.
    """
    if isinstance(model, EllipticRadiative):
        return _elliptic_truth(model, spec)
    scale = model.scale if isinstance(model, ForwardModel) else model
    env = _envelope(scale, spec) * _signs(spec, scale.N)
    tag = _smoothness_tag(scale, spec.theta)
    x = env * (spec.E / norm(scale, tag, env))
    diverges, admissible = _divergence_rule(scale, spec)
    if spec.require_oversmoothing and diverges is False:
        raise ValueError(f"envelope lies in V for these parameters; oversmoothing needs {admissible}")
    witness = oversmoothing_witness(scale, spec) if scale.weights.generator != "explicit" else {}
    if diverges is None:
        regime = "oversmoothing" if witness.get("growth", 0.0) >= 1.5 else "classical"
    else:
        regime = "oversmoothing" if diverges else "classical"
    return Truth(x, regime, norm(scale, tag, x), witness)


# ---------------------------------------------------------------------------
# Noise and fitting
# ---------------------------------------------------------------------------
def add_noise(model: ForwardModel, y, delta: float, seed) -> np.ndarray:
    """``y + eta`` with a seeded direction ``eta`` scaled so ``|eta|_Y = delta``.

    ``seed`` may be an integer, a ``SeedSequence`` or a ``Generator``.
    """
    y = np.asarray(y, dtype=float)
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if delta == 0:
        return y.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    while True:
        eta = rng.standard_normal(y.shape)
        size = model.y_norm(eta)
        if size > 0:
            return y + eta * (delta / size)


@dataclass(frozen=True)
class RateFit:
    slope: float
    stderr: float
    intercept: float
    points: int


def fit_rate(deltas, errors) -> RateFit:
    """Least-squares slope of ``log error`` against ``log delta``."""
    d = np.asarray(deltas, dtype=float)
    e = np.asarray(errors, dtype=float)
    if d.shape != e.shape:
        raise ValueError("deltas and errors must have the same length")
    keep = np.isfinite(d) & np.isfinite(e) & (d > 0) & (e > 0)
    if np.count_nonzero(keep) < 3:
        raise ValueError("need at least 3 positive points to fit a rate")
    lx, ly = np.log(d[keep]), np.log(e[keep])
    if np.ptp(ly) == 0.0:
        return RateFit(0.0, 0.0, float(ly[0]), int(keep.sum()))
    fit = stats.linregress(lx, ly)
    return RateFit(float(fit.slope), float(fit.stderr), float(fit.intercept), int(keep.sum()))


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------
MODEL_KINDS = ("linear", "nonlinear", "l1", "elliptic")


@dataclass(frozen=True)
class ModelSpec:
    """Recipe for a forward model.

    Sequence kinds use ``N``, ``generator`` and ``param`` for the weights,
    ``a`` (spectral) or ``p`` (``l1``) for the scale and ``eps`` for the
    nonlinear perturbation.  The elliptic kind uses ``preset``, ``M``, ``R``
    and ``c0``.
    """

    kind: str = "linear"
    N: int = 2048
    generator: str = "polynomial"
    param: float = 1.0
    a: float = 1.0
    p: float = 2.0
    eps: float = 0.1
    preset: str = "constant"
    M: int = 200
    R: float = 4.0
    c0: float = 1.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"model kind must be one of {MODEL_KINDS}")

    @property
    def smoothing_index(self) -> float:
        """The index ``a`` of the weak space."""
        if self.kind == "l1":
            return 1.0 / (self.p - 1.0)
        return 1.0 if self.kind == "elliptic" else self.a

    def scale(self) -> ScaleModel:
        weights = WeightSequence.from_generator(self.generator, self.N, self.param)
        if self.kind == "l1":
            return ScaleModel.weighted_l1(weights, self.p)
        return ScaleModel.spectral(weights, self.a)

    def build(self) -> ForwardModel:
        if self.kind == "elliptic":
            return EllipticRadiative(EllipticConfig.preset_config(self.preset, self.M, self.R, self.c0))
        scale = self.scale()
        if self.kind == "linear":
            return LinearDiagonal(scale)
        if self.kind == "nonlinear":
            return NonlinearDiagonal(scale, self.eps)
        return L1Embedding(scale)


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec = ModelSpec()
    truth: TruthSpec = TruthSpec()
    dp: DiscrepancyConfig = DiscrepancyConfig()
    deltas: tuple = DEFAULT_DELTAS
    seeds: int = 3
    seed: int = 0
    slope_tolerance: float = 0.08
    c_u_samples: int = 100

    def __post_init__(self):
        if len(self.deltas) < 3 or any(not d > 0 for d in self.deltas):
            raise ValueError("need at least 3 positive noise levels")
        if self.seeds < 1:
            raise ValueError("seeds must be at least 1")
        if not self.slope_tolerance > 0:
            raise ValueError("slope_tolerance must be positive")


@dataclass
class ExperimentReport:
    rows: list
    fit: RateFit | None
    theoretical_slope: float
    slope_tolerance: float
    inconclusive: bool
    lemma_violations: int
    c_u: float
    truth_regime: str
    witness: dict
    config: dict
    seed: int
    stable_delta_max: float = math.nan
    notes: list = field(default_factory=list)

    @property
    def slope_ok(self) -> bool:
        return self.fit is not None and abs(self.fit.slope - self.theoretical_slope) <= self.slope_tolerance

    @property
    def passed(self) -> bool:
        return self.slope_ok and not self.inconclusive and self.lemma_violations == 0

    def exact_rows(self) -> list:
        return [r for r in self.rows if r["status"] == DPStatus.EXACT.value]

    def medians(self):
        """Per-delta median of ``error_X`` over Exact rows, deltas descending."""
        out = []
        for delta in sorted({r["delta"] for r in self.rows}, reverse=True):
            errs = [r["error_X"] for r in self.exact_rows() if r["delta"] == delta]
            if errs:
                out.append((delta, float(np.median(errs))))
        return out

    def summary(self) -> dict:
        return {
            "fitted_slope": None if self.fit is None else self.fit.slope,
            "stderr": None if self.fit is None else self.fit.stderr,
            "theoretical_slope": self.theoretical_slope,
            "slope_tolerance": self.slope_tolerance,
            "pass": self.passed,
            "inconclusive": self.inconclusive,
            "lemma_violations": self.lemma_violations,
            "c_u": self.c_u,
            "truth_regime": self.truth_regime,
            "witness": self.witness,
            "stable_delta_max": self.stable_delta_max,
            "notes": self.notes,
            "seed": self.seed,
            "config": self.config,
        }

    def write(self, out_dir) -> list:
        """Write the row CSV, the summary JSON and the log-log plot data."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        columns = ["delta", "seed", "kappa_dp", "residual", "status", "error_X", "error_U",
                   "penalty_V", "iterations"]
        with open(out / "report.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        with open(out / "summary.json", "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True, default=_json_default)
        with open(out / "plot.dat", "w") as fh:
            fh.write("# log10(delta) log10(median error_X)\n")
            for delta, err in self.medians():
                fh.write(f"{math.log10(delta)!r} {math.log10(err)!r}\n")
        return [out / "report.csv", out / "summary.json", out / "plot.dat"]


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_grid_csv(path, nodes, values) -> None:
    """Two-column ``x,value`` export of a grid function."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "value"])
        for xv, v in zip(nodes, values):
            writer.writerow([repr(float(xv)), repr(float(v))])


def _errors(model, x, x_true):
    diff = x - x_true
    return model.x_norm(diff), model.u_norm(diff)


def _single_run(task):
    model, x_true, y_true, delta, seed_seq, dp, c_u = task
    y = add_noise(model, y_true, delta, np.random.default_rng(seed_seq))
    problem = TikhonovProblem(model, y, delta, 1.0, *((1, 1) if isinstance(model, L1Embedding) else (2, 2)))
    options = SolverOptions()
    result = find_kappa_dp(problem, dp, options)
    err_x, err_u = _errors(model, result.x_dp, x_true)
    return {
        "delta": float(delta),
        "kappa_dp": result.kappa_dp,
        "residual": result.residual,
        "status": result.status.value,
        "error_X": err_x,
        "error_U": err_u,
        "penalty_V": model.v_norm(result.x_dp),
        "iterations": int(result.evaluations),
        "relative_gap": result.relative_gap,
        "lemma_bound": (dp.c_dp + 1.0) * delta / c_u,
        "jump": result.jump,
    }


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("OVERSMOOTH_THREADS", "1")))
    except ValueError:
        return 1


def _stable_prefix(medians, theory, tol):
    """Largest delta such that the fit over all levels up to it stays within ``tol``."""
    pts = sorted(medians)
    best = math.nan
    for j in range(3, len(pts) + 1):
        sub = pts[:j]
        fit = fit_rate([p[0] for p in sub], [p[1] for p in sub])
        if abs(fit.slope - theory) <= tol:
            best = sub[-1][0]
    return best


def estimate_c_u(model: ForwardModel, x_ref, count: int, seed: int) -> float:
    """Lower two-sided constant from ``count`` seeded box samples around ``x_ref``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    low, _ = two_sided_constants_estimate(model, x_ref, box_samples(model, count, rng))
    return low


def run_rate_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Discrepancy-principle runs over the noise grid and a log-log fit.

    Runs are independent per ``(delta, seed)`` and use seed sequences
    derived from ``config.seed``, so the report is a pure function of the
    configuration.  With ``OVERSMOOTH_THREADS > 1`` the runs are spread
    over worker processes; the row order does not depend on scheduling.
    """
    model = config.model.build()
    truth = generate_truth(model, config.truth)
    x_true = truth.x
    y_true = model.apply(x_true)
    notes = []
    if model.c_U is not None:
        c_u = model.c_U
    else:
        c_u = estimate_c_u(model, x_true, config.c_u_samples, config.seed)
        notes.append(f"c_U estimated from {config.c_u_samples} box samples")
    deltas = sorted((float(d) for d in config.deltas), reverse=True)
    tasks, keys = [], []
    for i, delta in enumerate(deltas):
        for s in range(config.seeds):
            seq = np.random.SeedSequence([config.seed, i, s])
            tasks.append((model, x_true, y_true, delta, seq, config.dp, c_u))
            keys.append(s)
    workers = min(_workers(), len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_single_run, tasks))
    else:
        results = [_single_run(t) for t in tasks]
    rows = []
    for s, row in zip(keys, results):
        row["seed"] = s
        rows.append(row)
    exact = [r for r in rows if r["status"] == DPStatus.EXACT.value]
    lemma_violations = sum(1 for r in exact if not r["error_U"] <= r["lemma_bound"] + 1e-10)
    no_solution = sum(1 for r in rows if r["status"] == DPStatus.NO_SOLUTION.value)
    inconclusive = no_solution > 0.5 * len(rows)
    a = config.model.smoothing_index
    theory = config.truth.theta / (a + config.truth.theta)
    report = ExperimentReport(
        rows=rows, fit=None, theoretical_slope=theory, slope_tolerance=config.slope_tolerance,
        inconclusive=inconclusive, lemma_violations=lemma_violations, c_u=c_u,
        truth_regime=truth.regime, witness=truth.witness, config=config_to_dict(config),
        seed=config.seed, notes=notes)
    medians = report.medians()
    if len(medians) >= 3:
        report.fit = fit_rate([m[0] for m in medians], [m[1] for m in medians])
        report.stable_delta_max = _stable_prefix(medians, theory, config.slope_tolerance)
    else:
        report.inconclusive = True
        notes.append("fewer than 3 noise levels with Exact runs")
    if inconclusive:
        notes.append("more than half of the runs found no discrepancy solution")
    return report


def config_to_dict(config: ExperimentConfig) -> dict:
    out = asdict(config)
    out["deltas"] = list(config.deltas)
    return out


ELLIPTIC_DELTAS = tuple(10.0 ** (-k / 2.0) for k in range(4, 9))


def preset_experiment(name: str, seed: int = 0) -> ExperimentConfig:
    """Named experiment setups.

    ``spectral``: linear diagonal model, ``lam_n = n + 1``, ``a = 1``,
    ``N = 2048``.  ``l1``: weighted ``l1`` embedding with ``w_n = 2^n``,
    ``N = 40``, ``p = 2``.  ``elliptic``: radiative model with ``M = 200``
    on the noise levels ``1e-2 .. 1e-4`` (below that the discretisation of
    the truth, not the noise, dominates the error).
    """
    if name == "spectral":
        return ExperimentConfig(model=ModelSpec(kind="linear", N=2048), seed=seed, slope_tolerance=0.08)
    if name == "l1":
        return ExperimentConfig(model=ModelSpec(kind="l1", N=40, generator="geometric", param=2.0, p=2.0),
                                seed=seed, slope_tolerance=0.10)
    if name == "elliptic":
        return ExperimentConfig(model=ModelSpec(kind="elliptic", M=200), deltas=ELLIPTIC_DELTAS,
                                dp=DiscrepancyConfig(kappa_lo=1e-11, kappa_hi=1e-1), seed=seed,
                                slope_tolerance=0.15)
    raise ValueError(f"unknown preset {name!r}; use 'spectral', 'l1' or 'elliptic'")
