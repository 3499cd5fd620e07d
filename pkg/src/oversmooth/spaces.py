"""Truncated Banach-scale models and exact norm evaluation.

Two model families are supported:

* ``spectral``: a Hilbert scale generated by a positive diagonal operator
  ``A = diag(lam)``.  ``X = l2``, ``V = D(A)``, ``U = D(A^{-a})`` and the
  intermediate spaces are the fractional-power domains ``D(A^s)``.
* ``weighted_l1``: weighted sequence spaces ``l^q(w)`` with norm
  ``(sum w^{1-q} |x|^q)^{1/q}``.  ``X = l^p(w)``, ``V = l1``,
  ``U = l^inf(w)`` with norm ``sup |x_n| / w_n`` and
  ``X_s = l^{p_s}(w)`` with ``p_s = p / (1 + s (p - 1))``.

Elements are plain one-dimensional float arrays; :meth:`ScaleModel.check`
validates length and finiteness.  All norms accumulate with
:func:`math.fsum` so that residuals near ``1e-5`` keep ten or more
significant digits.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ScaleKind",
    "WeightSequence",
    "ScaleModel",
    "SpaceTag",
    "X",
    "V",
    "U",
    "Xs",
    "FracDomain",
    "fsum_pow",
    "norm",
    "norms",
    "weighted_lq_norm",
    "interpolation_inequality_ratio",
    "lq_monotonicity_constant",
    "embedding_constants",
]


class ScaleKind(str, enum.Enum):
    SPECTRAL = "spectral"
    WEIGHTED_L1 = "weighted_l1"


# ---------------------------------------------------------------------------
# Weight sequences
# ---------------------------------------------------------------------------
_GENERATORS = ("polynomial", "geometric", "explicit")


@dataclass(frozen=True, eq=False)
class WeightSequence:
    """Strictly positive, nondecreasing weights indexed by ``n = 0..N-1``.

    Parameters
    ----------
    values : array_like
        The weights.  Copied and made read-only.
    generator : {"polynomial", "geometric", "explicit"}
        How the values were produced.  Kept so the sequence can be
        regenerated at a different truncation (see :meth:`resized`).
    param : float
        Generator parameter: the exponent ``beta`` of ``(n+1)**beta`` or the
        ratio ``rho`` of ``rho**n``.
    """

    values: np.ndarray
    generator: str = "explicit"
    param: float = float("nan")

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).ravel()
        if vals.size == 0:
            raise ValueError("weight sequence must be nonempty")
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ValueError("weights must be finite and strictly positive")
        if np.any(np.diff(vals) < 0):
            raise ValueError("weights must be nondecreasing")
        if self.generator not in _GENERATORS:
            raise ValueError(f"unknown weight generator {self.generator!r}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def polynomial(cls, N: int, beta: float = 1.0) -> "WeightSequence":
        """``lam_n = (n + 1) ** beta``."""
        if N < 1:
            raise ValueError("N must be positive")
        if beta <= 0:
            raise ValueError("polynomial exponent must be positive")
        return cls(np.arange(1, N + 1, dtype=float) ** beta, "polynomial", float(beta))

    @classmethod
    def geometric(cls, N: int, rho: float = 2.0) -> "WeightSequence":
        """``w_n = rho ** n``."""
        if N < 1:
            raise ValueError("N must be positive")
        if rho <= 1:
            raise ValueError("geometric ratio must exceed 1")
        return cls(float(rho) ** np.arange(N, dtype=float), "geometric", float(rho))

    @classmethod
    def from_generator(cls, name: str, N: int, param: float) -> "WeightSequence":
        if name == "polynomial":
            return cls.polynomial(N, param)
        if name == "geometric":
            return cls.geometric(N, param)
        raise ValueError(f"weight generator must be 'polynomial' or 'geometric', got {name!r}")

    @property
    def N(self) -> int:
        return int(self.values.size)

    def resized(self, N: int) -> "WeightSequence":
        """Regenerate the same sequence at truncation ``N``."""
        if self.generator == "explicit":
            if N <= self.N:
                return WeightSequence(self.values[:N])
            raise ValueError("an explicit weight sequence cannot be extended")
        return WeightSequence.from_generator(self.generator, N, self.param)

    def divergence_ratio(self) -> float:
        return float(self.values[-1] / self.values[0])

    def diverges(self, min_ratio: float = 10.0) -> bool:
        """Finite-truncation witness that the weights grow without bound."""
        return self.divergence_ratio() >= min_ratio


# ---------------------------------------------------------------------------
# Space tags
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SpaceTag:
    """Names one space of a scale model.

    ``role`` is one of ``"X"``, ``"V"``, ``"U"``, ``"Xs"`` or ``"Frac"``; the
    last two carry the index ``s``.  ``Xs(0)`` and ``Xs(1)`` normalise to
    ``X`` and ``V``.
    """

    role: str
    s: float | None = None

    def __post_init__(self):
        if self.role not in ("X", "V", "U", "Xs", "Frac"):
            raise ValueError(f"unknown space role {self.role!r}")
        if self.role in ("Xs", "Frac"):
            if self.s is None or not math.isfinite(self.s):
                raise ValueError(f"{self.role} needs a finite index s")
        elif self.s is not None:
            raise ValueError(f"{self.role} takes no index")

    def __str__(self):
        return self.role if self.s is None else f"{self.role}({self.s:g})"

    @classmethod
    def parse(cls, text: str) -> "SpaceTag":
        """Parse ``"X"``, ``"V"``, ``"U"``, ``"Xs(0.5)"`` or ``"Frac(-1)"``."""
        text = text.strip()
        if text in ("X", "V", "U"):
            return cls(text)
        for role in ("Xs", "Frac"):
            if text.startswith(role + "(") and text.endswith(")"):
                return cls(role, float(text[len(role) + 1:-1]))
        raise ValueError(f"cannot parse space tag {text!r}")


X = SpaceTag("X")
V = SpaceTag("V")
U = SpaceTag("U")


def Xs(s: float) -> SpaceTag:
    """Intermediate space of index ``s`` in ``[0, 1]``."""
    if not 0.0 <= s <= 1.0:
        raise ValueError("Xs index must lie in [0, 1]")
    if s == 0.0:
        return X
    if s == 1.0:
        return V
    return SpaceTag("Xs", float(s))


def FracDomain(s: float) -> SpaceTag:
    """Fractional-power domain ``D(A^s)`` (spectral models only)."""
    return SpaceTag("Frac", float(s))


# ---------------------------------------------------------------------------
# Scale model
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ScaleModel:
    """A computable realisation of the spaces ``(X, V, U, X_s)``.

    Use :meth:`spectral` or :meth:`weighted_l1` rather than the raw
    constructor; they fill in the exponents consistently.
    """

    kind: ScaleKind
    weights: WeightSequence
    p: float = 2.0
    a: float = 1.0
    lam_min: float = 1e-12

    def __post_init__(self):
        kind = ScaleKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is ScaleKind.SPECTRAL:
            if self.p != 2.0:
                raise ValueError("spectral models are Hilbertian: p must be 2")
            if self.a < 0:
                raise ValueError("smoothing exponent a must be nonnegative")
            if self.weights.values[0] < self.lam_min:
                raise ValueError("smallest eigenvalue below lam_min: A is not boundedly invertible")
        else:
            if not 1.0 < self.p < math.inf:
                raise ValueError("weighted_l1 models need 1 < p < inf")
            if abs(self.a * (self.p - 1.0) - 1.0) > 1e-12:
                raise ValueError("weighted_l1 models need a = 1/(p-1)")

    @classmethod
    def spectral(cls, weights: WeightSequence, a: float = 1.0) -> "ScaleModel":
        return cls(ScaleKind.SPECTRAL, weights, 2.0, float(a))

    @classmethod
    def weighted_l1(cls, weights: WeightSequence, p: float = 2.0) -> "ScaleModel":
        return cls(ScaleKind.WEIGHTED_L1, weights, float(p), 1.0 / (float(p) - 1.0))

    @property
    def N(self) -> int:
        return self.weights.N

    @property
    def lam(self) -> np.ndarray:
        """Eigenvalues (spectral) or weights (weighted_l1)."""
        return self.weights.values

    def resized(self, N: int) -> "ScaleModel":
        return ScaleModel(self.kind, self.weights.resized(N), self.p, self.a, self.lam_min)

    def p_s(self, s: float) -> float:
        """Integrability exponent of ``X_s`` for weighted models."""
        return self.p / (1.0 + s * (self.p - 1.0))

    def check(self, x) -> np.ndarray:
        """Return ``x`` as a float array after validating it as an element."""
        arr = np.asarray(x, dtype=float)
        if arr.shape[-1:] != (self.N,):
            raise ValueError(f"element has trailing length {arr.shape[-1:]} but the model has N={self.N}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("element has non-finite entries")
        return arr


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------
def fsum_pow(values: np.ndarray, q: float) -> float:
    """``(sum |values|^q)^{1/q}`` with compensated summation and rescaling."""
    v = np.abs(np.asarray(values, dtype=float)).ravel()
    if v.size == 0:
        return 0.0
    top = float(v.max())
    if top == 0.0:
        return 0.0
    return top * math.fsum((v / top) ** q) ** (1.0 / q)


def weighted_lq_norm(w: np.ndarray, x: np.ndarray, q: float) -> float:
    """Norm of ``l^q(w)``: ``(sum w^{1-q} |x|^q)^{1/q}``; ``q = inf`` gives ``sup |x|/w``."""
    z = np.abs(x) / w
    if math.isinf(q):
        return float(z.max()) if z.size else 0.0
    # sum w |x/w|^q, rescaled by max |x/w| to avoid under/overflow
    top = float(z.max()) if z.size else 0.0
    if top == 0.0:
        return 0.0
    return top * math.fsum(w * (z / top) ** q) ** (1.0 / q)


def norm(model: ScaleModel, tag: SpaceTag, x) -> float:
    """Norm of ``x`` in the space named by ``tag``.

    Raises
    ------
    ValueError
        On a dimension mismatch, a tag the model kind does not provide, or an
        index outside the admissible range.
    """
    x = model.check(x)
    if x.ndim != 1:
        raise ValueError("norm expects a single element; use a loop for batches")
    lam = model.lam
    if model.kind is ScaleKind.SPECTRAL:
        if tag.role == "X":
            s = 0.0
        elif tag.role == "V":
            s = 1.0
        elif tag.role == "U":
            s = -model.a
        elif tag.role == "Xs":
            if not 0.0 <= tag.s <= 1.0:
                raise ValueError("Xs index must lie in [0, 1]")
            s = tag.s
        else:
            s = tag.s
        return fsum_pow(lam ** s * x if s != 0.0 else x, 2.0)
    # weighted l1 scale
    if tag.role == "Frac":
        raise ValueError("fractional-power domains are only defined for spectral models")
    if tag.role == "U":
        return weighted_lq_norm(lam, x, math.inf)
    if tag.role == "V":
        return fsum_pow(x, 1.0)
    s = 0.0 if tag.role == "X" else tag.s
    if not 0.0 <= s <= 1.0:
        raise ValueError("Xs index must lie in [0, 1]")
    return weighted_lq_norm(lam, x, model.p_s(s))


def norms(model: ScaleModel, tag: SpaceTag, xs) -> np.ndarray:
    """Row-wise norms of a batch ``xs`` of shape ``(k, N)``.

    Vectorised counterpart of :func:`norm` for diagnostics over many
    samples.  It uses numpy's pairwise summation instead of ``fsum``.
    """
    xs = np.atleast_2d(model.check(xs))
    lam = model.lam
    if model.kind is ScaleKind.SPECTRAL:
        s = {"X": 0.0, "V": 1.0, "U": -model.a}.get(tag.role, tag.s)
        if tag.role == "Xs" and not 0.0 <= s <= 1.0:
            raise ValueError("Xs index must lie in [0, 1]")
        z = np.abs(xs * lam ** s)
        q = 2.0
        w = None
    else:
        if tag.role == "Frac":
            raise ValueError("fractional-power domains are only defined for spectral models")
        if tag.role == "U":
            return np.max(np.abs(xs) / lam, axis=1)
        if tag.role == "V":
            return np.sum(np.abs(xs), axis=1)
        s = 0.0 if tag.role == "X" else tag.s
        if not 0.0 <= s <= 1.0:
            raise ValueError("Xs index must lie in [0, 1]")
        q = model.p_s(s)
        z = np.abs(xs) / lam
        w = lam
    top = z.max(axis=1, keepdims=True)
    safe = np.where(top > 0, top, 1.0)
    terms = (z / safe) ** q
    if w is not None:
        terms = terms * w
    return top[:, 0] * np.sum(terms, axis=1) ** (1.0 / q)


def interpolation_inequality_ratio(model: ScaleModel, x, s: float, r: float) -> float:
    """Ratio ``|x|_{X_r} / (|x|_{X_s}^{(a+r)/(a+s)} |x|_U^{(s-r)/(a+s)})``.

    Both shipped model kinds satisfy the interpolation inequality with
    constant one, so the ratio never exceeds 1 up to round-off.
    """
    if not (0.0 < s <= 1.0 and 0.0 <= r < s):
        raise ValueError("need 0 < s <= 1 and 0 <= r < s")
    x = model.check(x)
    if not np.any(x):
        raise ValueError("the ratio is undefined for the zero element")
    a = model.a
    nr = norm(model, Xs(r), x)
    ns = norm(model, Xs(s), x)
    nu = norm(model, U, x)
    return nr / (ns ** ((a + r) / (a + s)) * nu ** ((s - r) / (a + s)))


def lq_monotonicity_constant(w0: float, q1: float, q2: float) -> float:
    """Sharp constant ``C`` in ``|x|_{l^{q2}(w)} <= C |x|_{l^{q1}(w)}`` for ``q1 <= q2``.

    With smallest weight ``w0`` the constant is ``w0^{1/q2 - 1/q1}``; it
    is attained at the first unit vector.
    """
    if not 1.0 <= q1 <= q2:
        raise ValueError("need 1 <= q1 <= q2")
    inv2 = 0.0 if math.isinf(q2) else 1.0 / q2
    return float(w0) ** (inv2 - 1.0 / q1)


@dataclass(frozen=True)
class EmbeddingConstants:
    """Constants of the chain ``|x|_U <= c_ux |x|_X`` and ``|x|_X <= c_xv |x|_V``."""

    c_ux: float
    c_xv: float
    details: dict = field(default_factory=dict)


def embedding_constants(model: ScaleModel) -> EmbeddingConstants:
    """Embedding constants of ``V -> X -> U`` computed from the model."""
    lam0 = float(model.lam[0])
    if model.kind is ScaleKind.SPECTRAL:
        return EmbeddingConstants(lam0 ** (-model.a), 1.0 / lam0)
    p = model.p
    # U = l^inf(w), X = l^p(w), V = l^1(w) = l1
    return EmbeddingConstants(
        lq_monotonicity_constant(lam0, p, math.inf),
        lq_monotonicity_constant(lam0, 1.0, p),
    )
