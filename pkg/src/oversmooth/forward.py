"""Forward operators with two-sided stability estimates.

Every model maps an element ``x`` to data ``F(x)`` and knows the norms of
its data space ``Y``, its weak space ``U``, the base space ``X`` and the
penalty space ``V``.  The bracket

    c_U |x - x'|_U <= |F(x) - F(x')|_Y <= C_U |x - x'|_U

holds with analytic constants for the diagonal models; for the elliptic
model the constants are estimated from samples.
"""

from __future__ import annotations

import abc
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg.lapack import dptsv

from .spaces import U as U_TAG
from .spaces import V as V_TAG
from .spaces import X as X_TAG
from .spaces import ScaleKind, ScaleModel, fsum_pow, norm, weighted_lq_norm

__all__ = [
    "DOMAIN_TOL",
    "ForwardModel",
    "LinearDiagonal",
    "NonlinearDiagonal",
    "L1Embedding",
    "EllipticConfig",
    "EllipticRadiative",
    "EllipticSmoothing",
    "forward_apply",
    "forward_gradient",
    "two_sided_constants_estimate",
    "box_samples",
]

DOMAIN_TOL = 1e-12


class ForwardModel(abc.ABC):
    """Common interface of the forward operators.

    Subclasses set ``n`` (dimension), ``box`` (``None`` or a ``(lo, hi)``
    pair of arrays), ``c_U`` and ``C_U`` (``None`` when only empirical
    constants exist) and ``penalty_kind`` (``"quadratic"`` or ``"l1"``).
    """

    n: int
    box: tuple | None = None
    c_U: float | None = None
    C_U: float | None = None
    penalty_kind: str = "quadratic"
    kind: str = "abstract"

    # -- evaluation --------------------------------------------------------
    @abc.abstractmethod
    def apply(self, x) -> np.ndarray:
        """``F(x)``."""

    @abc.abstractmethod
    def gradient(self, x, r) -> np.ndarray:
        """Gradient of ``x -> 0.5 |F(x) - y|_Y^2`` given ``r = F(x) - y``."""

    def gauss_newton_matrix(self, x) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} provides no dense derivative")

    def curvature_matrix(self, x, r) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} provides no dense derivative")

    def hessian_parts(self, x, r):
        """Gauss-Newton part, curvature part and penalty Gram of the misfit Hessian.

        Returns dense matrices by default; diagonal models return the
        diagonals as vectors so Newton steps cost ``O(n)``.
        """
        return self.gauss_newton_matrix(x), self.curvature_matrix(x, r), self.v_gram_matrix()

    # -- norms -------------------------------------------------------------
    @abc.abstractmethod
    def y_norm(self, v) -> float: ...

    @abc.abstractmethod
    def u_norm(self, v) -> float: ...

    @abc.abstractmethod
    def x_norm(self, v) -> float: ...

    @abc.abstractmethod
    def v_norm(self, v) -> float: ...

    def v_gram(self, x) -> np.ndarray:
        """Gradient of ``0.5 |x|_V^2`` (only for quadratic penalties)."""
        raise NotImplementedError(f"{type(self).__name__} has no Hilbert penalty")

    def v_gram_matrix(self) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} provides no dense penalty matrix")

    # -- domain ------------------------------------------------------------
    def check(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=float)
        if arr.shape != (self.n,):
            raise ValueError(f"expected an element of length {self.n}, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("element has non-finite entries")
        return arr

    def in_domain(self, x, tol: float = DOMAIN_TOL) -> bool:
        if self.box is None:
            return True
        lo, hi = self.box
        return bool(np.all(x >= lo - tol) and np.all(x <= hi + tol))

    def project(self, x) -> np.ndarray:
        if self.box is None:
            return np.array(x, dtype=float)
        lo, hi = self.box
        return np.clip(x, lo, hi)


def _as_box(box, n):
    if box is None:
        return None
    lo, hi = box
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
    if np.any(lo > hi):
        raise ValueError("box lower bound exceeds upper bound")
    return lo, hi


class _DiagonalBase(ForwardModel):
    def __init__(self, scale: ScaleModel, box=None):
        self.scale = scale
        self.n = scale.N
        self.box = _as_box(box, self.n)

    def x_norm(self, v):
        return norm(self.scale, X_TAG, v)

    def v_norm(self, v):
        return norm(self.scale, V_TAG, v)

    def u_norm(self, v):
        return norm(self.scale, U_TAG, v)


class LinearDiagonal(_DiagonalBase):
    """``F(x) = A^{-a} x`` into ``Y = l2``; an isometry from ``U`` onto ``Y``."""

    kind = "linear"

    def __init__(self, scale: ScaleModel, box=None):
        if scale.kind is not ScaleKind.SPECTRAL:
            raise ValueError("LinearDiagonal needs a spectral scale model")
        super().__init__(scale, box)
        self.c_U = 1.0
        self.C_U = 1.0
        self.smoothing = scale.lam ** (-scale.a)

    def apply(self, x):
        return self.smoothing * np.asarray(x, dtype=float)

    def gradient(self, x, r):
        return self.smoothing * np.asarray(r, dtype=float)

    def gauss_newton_matrix(self, x):
        return np.diag(self.smoothing ** 2)

    def curvature_matrix(self, x, r):
        return np.zeros((self.n, self.n))

    def y_norm(self, v):
        return fsum_pow(v, 2.0)

    def v_gram(self, x):
        return self.scale.lam ** 2 * x

    def v_gram_matrix(self):
        return np.diag(self.scale.lam ** 2)

    def hessian_parts(self, x, r):
        return self.smoothing ** 2, np.zeros(self.n), self.scale.lam ** 2


class NonlinearDiagonal(_DiagonalBase):
    """``F(x) = A^{-a} (x + eps sin(x))`` with ``0 <= eps < 1``.

    The map ``x -> x + eps sin x`` is bi-Lipschitz with constants
    ``1 - eps`` and ``1 + eps`` coordinatewise, which gives the bracket
    ``c_U = 1 - eps`` and ``C_U = 1 + eps``.
    """

    kind = "nonlinear"

    def __init__(self, scale: ScaleModel, eps: float = 0.1, box=None):
        if scale.kind is not ScaleKind.SPECTRAL:
            raise ValueError("NonlinearDiagonal needs a spectral scale model")
        if not 0.0 <= eps < 1.0:
            raise ValueError("eps must lie in [0, 1)")
        super().__init__(scale, box)
        self.eps = float(eps)
        self.c_U = 1.0 - self.eps
        self.C_U = 1.0 + self.eps
        self.smoothing = scale.lam ** (-scale.a)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        return self.smoothing * (x + self.eps * np.sin(x))

    def gradient(self, x, r):
        x = np.asarray(x, dtype=float)
        return self.smoothing * (1.0 + self.eps * np.cos(x)) * np.asarray(r, dtype=float)

    def gauss_newton_matrix(self, x):
        d = self.smoothing * (1.0 + self.eps * np.cos(x))
        return np.diag(d * d)

    def curvature_matrix(self, x, r):
        return np.diag(-self.smoothing * self.eps * np.sin(x) * r)

    def y_norm(self, v):
        return fsum_pow(v, 2.0)

    def v_gram(self, x):
        return self.scale.lam ** 2 * x

    def v_gram_matrix(self):
        return np.diag(self.scale.lam ** 2)

    def hessian_parts(self, x, r):
        x = np.asarray(x, dtype=float)
        d = self.smoothing * (1.0 + self.eps * np.cos(x))
        return d * d, -self.smoothing * self.eps * np.sin(x) * r, self.scale.lam ** 2


class L1Embedding(_DiagonalBase):
    """``F(x) = x`` into ``Y = U = l^inf(w)`` with the ``l1`` penalty."""

    kind = "embedding"
    penalty_kind = "l1"

    def __init__(self, scale: ScaleModel, box=None):
        if scale.kind is not ScaleKind.WEIGHTED_L1:
            raise ValueError("L1Embedding needs a weighted_l1 scale model")
        super().__init__(scale, box)
        self.c_U = 1.0
        self.C_U = 1.0

    def apply(self, x):
        return np.array(x, dtype=float)

    def gradient(self, x, r):
        """A subgradient of ``0.5 |r|_Y^2``; the sup-norm is not smooth."""
        r = np.asarray(r, dtype=float)
        w = self.scale.lam
        z = np.abs(r) / w
        k = int(np.argmax(z))
        g = np.zeros_like(r)
        g[k] = z[k] * np.sign(r[k]) / w[k]
        return g

    def y_norm(self, v):
        return weighted_lq_norm(self.scale.lam, np.asarray(v, dtype=float), math.inf)


# ---------------------------------------------------------------------------
# One-dimensional radiative model
# ---------------------------------------------------------------------------
def _manufactured_state(x):
    return 2.0 + np.sin(np.pi * x)


def _manufactured_coefficient(x):
    return 1.0 + x * x


def _manufactured_absorption(x):
    return 1.0 + x


def _manufactured_source(x):
    # -(a u')' + chi0 u with a = 1 + x^2, u = 2 + sin(pi x), chi = 0
    du = np.pi * np.cos(np.pi * x)
    d2u = -np.pi ** 2 * np.sin(np.pi * x)
    return -(2.0 * x * du + (1.0 + x * x) * d2u) + _manufactured_absorption(x) * _manufactured_state(x)


@dataclass(frozen=True, eq=False)
class EllipticConfig:
    """Discretisation data of ``-(a u')' + (chi0 + chi) u = f`` on ``(0, 1)``.

    ``a_mid`` holds the diffusion coefficient at the ``M + 1`` cell
    midpoints; ``chi0`` and ``source`` are given at the ``M`` interior
    nodes ``x_i = i h`` with ``h = 1 / (M + 1)``.
    """

    M: int
    a_mid: np.ndarray
    chi0: np.ndarray
    source: np.ndarray
    g0: float
    g1: float
    R: float = 4.0
    c0: float = 1.0
    preset: str = "custom"

    def __post_init__(self):
        if self.M < 8:
            raise ValueError("the elliptic model needs M >= 8")
        for name, size in (("a_mid", self.M + 1), ("chi0", self.M), ("source", self.M)):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (size,):
                raise ValueError(f"{name} must have length {size}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.min(self.a_mid) <= 0:
            raise ValueError("the diffusion coefficient must be positive")
        if np.min(self.chi0) < 0:
            raise ValueError("chi0 must be nonnegative")
        if self.R <= 0:
            raise ValueError("R must be positive")

    @property
    def h(self) -> float:
        return 1.0 / (self.M + 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(1, self.M + 1) * self.h

    @classmethod
    def preset_config(cls, name: str = "constant", M: int = 200, R: float = 4.0,
                      c0: float = 1.0) -> "EllipticConfig":
        """Named configurations.

        ``constant``: ``a = 1``, ``chi0 = 1``, ``f = 4``, ``g0 = g1 = 2``;
        with ``chi = 1`` the exact discrete state is ``u = 2``.
        ``manufactured``: ``a = 1 + x^2``, ``chi0 = 1 + x`` and a source
        making ``u = 2 + sin(pi x)`` the exact state at ``chi = 0``.
        """
        h = 1.0 / (M + 1)
        nodes = np.arange(1, M + 1) * h
        mids = (np.arange(M + 1) + 0.5) * h
        if name == "constant":
            return cls(M, np.ones(M + 1), np.ones(M), np.full(M, 4.0), 2.0, 2.0, R, c0, name)
        if name == "manufactured":
            return cls(M, _manufactured_coefficient(mids), _manufactured_absorption(nodes),
                       _manufactured_source(nodes), 2.0, 2.0, R, c0, name)
        raise ValueError(f"unknown elliptic preset {name!r}; use 'constant' or 'manufactured'")

    def exact_state(self) -> np.ndarray | None:
        """Exact continuous state at ``chi = 0`` for presets that have one."""
        if self.preset == "manufactured":
            return _manufactured_state(self.nodes)
        return None

    def resized(self, M: int) -> "EllipticConfig":
        if self.preset == "custom":
            raise ValueError("a custom configuration cannot be regridded")
        return EllipticConfig.preset_config(self.preset, M, self.R, self.c0)


def _dsq(v: np.ndarray, h: float) -> float:
    """``h * sum ((v_{i+1} - v_i) / h)^2`` with zero boundary values."""
    dv = np.diff(np.concatenate(([0.0], v, [0.0])))
    return math.fsum(dv * dv) / h


class EllipticRadiative(ForwardModel):
    """Finite-difference map ``chi -> u(chi)`` for the radiative equation.

    Norms: ``X`` is the grid ``L2`` norm, ``V`` the ``H1_0`` seminorm
    (``|A chi|`` with ``A = L0^{1/2}`` and ``L0`` the Dirichlet Laplacian),
    ``U`` the dual norm ``|A^{-1} chi|`` realised by one Poisson solve, and
    ``Y`` the full discrete ``H1`` norm.  The admissible set is the box
    ``0 <= chi <= R``.
    """

    kind = "elliptic"

    def __init__(self, config: EllipticConfig):
        self.config = config
        self.n = config.M
        self.h = config.h
        self.box = _as_box((0.0, config.R), self.n)
        a = config.a_mid
        self._d0 = (a[:-1] + a[1:]) / self.h ** 2 + config.chi0
        self._e = -a[1:-1] / self.h ** 2
        self._rhs = np.array(config.source, dtype=float)
        self._rhs[0] += a[0] * config.g0 / self.h ** 2
        self._rhs[-1] += a[-1] * config.g1 / self.h ** 2
        self._lap_d = np.full(self.n, 2.0 / self.h ** 2)
        self._lap_e = np.full(self.n - 1, -1.0 / self.h ** 2)
        self._basis = None

    # -- linear algebra helpers -------------------------------------------
    def solve(self, chi, rhs) -> np.ndarray:
        """``B_chi^{-1} rhs`` for the symmetric tridiagonal operator."""
        d = self._d0 + chi
        if np.any(self.config.chi0 + chi < -DOMAIN_TOL):
            raise ValueError("chi0 + chi must be nonnegative for a well-posed state equation")
        _, _, sol, info = dptsv(d, self._e, rhs)
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal solve failed (info={info})")
        return sol

    def laplacian(self, v) -> np.ndarray:
        """``L0 v`` for the Dirichlet Laplacian (batched over columns)."""
        v = np.asarray(v, dtype=float)
        out = 2.0 * v
        out[1:] -= v[:-1]
        out[:-1] -= v[1:]
        return out / self.h ** 2

    def poisson_solve(self, v) -> np.ndarray:
        _, _, sol, info = dptsv(self._lap_d, self._lap_e, np.asarray(v, dtype=float))
        if info != 0:
            raise np.linalg.LinAlgError("Poisson solve failed")
        return sol

    def y_gram(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self.h * (v + self.laplacian(v))

    # -- ForwardModel interface ----------------------------------------------
    def apply(self, chi):
        return self.solve(np.asarray(chi, dtype=float), self._rhs)

    def jacobian(self, chi, state=None) -> np.ndarray:
        """Dense ``dF/dchi = -B_chi^{-1} diag(u)``."""
        u = self.apply(chi) if state is None else state
        return -self.solve(chi, np.eye(self.n)) * u[None, :]

    def gradient(self, chi, r):
        """Adjoint-state gradient ``-u * B_chi^{-1} (G_Y r)``."""
        chi = np.asarray(chi, dtype=float)
        u = self.apply(chi)
        return -u * self.solve(chi, self.y_gram(r))

    def gauss_newton_matrix(self, chi, jac=None):
        J = self.jacobian(chi) if jac is None else jac
        return J.T @ (self.h * (J + self.laplacian(J)))

    def curvature_matrix(self, chi, r, jac=None):
        """Second-order part of the Hessian of ``0.5 |F - y|_Y^2``."""
        J = self.jacobian(chi) if jac is None else jac
        z = self.solve(chi, self.y_gram(r))
        C = z[:, None] * J
        return -(C + C.T)

    def hessian_parts(self, chi, r):
        jac = self.jacobian(chi)
        return (self.gauss_newton_matrix(chi, jac=jac), self.curvature_matrix(chi, r, jac=jac),
                self.v_gram_matrix())

    def y_norm(self, v):
        v = np.asarray(v, dtype=float)
        return math.sqrt(self.h * math.fsum(v * v) + _dsq(v, self.h))

    def x_norm(self, v):
        v = np.asarray(v, dtype=float)
        return math.sqrt(self.h * math.fsum(v * v))

    def v_norm(self, v):
        return math.sqrt(_dsq(np.asarray(v, dtype=float), self.h))

    def u_norm(self, v):
        return math.sqrt(_dsq(self.poisson_solve(v), self.h))

    def v_gram(self, x):
        return self.h * self.laplacian(x)

    def v_gram_matrix(self):
        return self.h * self.laplacian(np.eye(self.n))

    # -- spectral data -------------------------------------------------------
    def sine_basis(self):
        """Eigenpairs of ``A = L0^{1/2}``: ``lam_k = (2/h) sin(k pi h / 2)``.

        The columns ``phi_k(x_i) = sqrt(2) sin(k pi x_i)`` are orthonormal in
        the grid ``L2`` inner product ``h * sum``.
        """
        if self._basis is None:
            k = np.arange(1, self.n + 1)
            lam = 2.0 / self.h * np.sin(k * np.pi * self.h / 2.0)
            phi = math.sqrt(2.0) * np.sin(np.pi * np.outer(self.config.nodes, k))
            self._basis = (lam, phi)
        return self._basis

    def frac_norm(self, v, s: float) -> float:
        """``|A^s v|`` in the grid ``L2`` norm."""
        lam, phi = self.sine_basis()
        coef = self.h * (phi.T @ np.asarray(v, dtype=float))
        return math.sqrt(math.fsum((lam ** s * coef) ** 2))


class EllipticSmoothing:
    """``f(tA)`` on grid functions of an :class:`EllipticRadiative` model.

    With ``f(z) = exp(-z^2)`` this is the discrete heat semigroup
    ``exp(-t^2 L0)``, which maps the box ``[0, R]`` into itself.
    """

    def __init__(self, model: EllipticRadiative, f):
        self.model = model
        self.f = f
        self.t0 = math.inf

    def apply(self, t: float, x) -> np.ndarray:
        if not t > 0:
            raise ValueError("t must be positive")
        lam, phi = self.model.sine_basis()
        coef = self.model.h * (phi.T @ np.asarray(x, dtype=float))
        return phi @ (self.f(t * lam) * coef)


# ---------------------------------------------------------------------------
# Free functions
# ---------------------------------------------------------------------------
def forward_apply(model: ForwardModel, x) -> np.ndarray:
    """``F(x)`` after validating the element and its domain membership."""
    x = model.check(x)
    if not model.in_domain(x):
        raise ValueError("element violates the domain constraints")
    return model.apply(x)


def forward_gradient(model: ForwardModel, x, residual_direction) -> np.ndarray:
    """Gradient of ``0.5 |F(x) - y|_Y^2`` for ``residual_direction = F(x) - y``."""
    x = model.check(x)
    if not model.in_domain(x):
        raise ValueError("element violates the domain constraints")
    return model.gradient(x, np.asarray(residual_direction, dtype=float))


def two_sided_constants_estimate(model: ForwardModel, x_ref, samples) -> tuple[float, float]:
    """Smallest and largest ``|F(x) - F(x_ref)|_Y / |x - x_ref|_U`` over samples."""
    x_ref = model.check(x_ref)
    f_ref = model.apply(x_ref)
    ratios = []
    skipped = 0
    for x in np.atleast_2d(samples):
        x = model.check(x)
        du = model.u_norm(x - x_ref)
        if du == 0.0:
            skipped += 1
            continue
        ratios.append(model.y_norm(model.apply(x) - f_ref) / du)
    if skipped:
        warnings.warn(f"skipped {skipped} sample(s) equal to the reference element", stacklevel=2)
    if not ratios:
        raise ValueError("no usable samples")
    return float(min(ratios)), float(max(ratios))


def box_samples(model: ForwardModel, count: int, rng: np.random.Generator) -> np.ndarray:
    """Random elements of the model's box: uniform, smooth and constant kinds.

    Smooth samples are random low-frequency sine sums rescaled into the box;
    constants probe the lowest mode.  Unconstrained models draw from a
    standard normal instead.
    """
    n = model.n
    if model.box is None:
        return rng.standard_normal((count, n))
    lo, hi = model.box
    out = np.empty((count, n))
    grid = np.linspace(0.0, 1.0, n + 2)[1:-1]
    for i in range(count):
        kind = i % 3
        if kind == 0:
            out[i] = lo + (hi - lo) * rng.random(n)
        elif kind == 1:
            modes = rng.integers(1, 9)
            coef = rng.standard_normal(modes) / np.arange(1, modes + 1)
            shape = np.sin(np.pi * np.outer(grid, np.arange(1, modes + 1))) @ coef
            span = shape.max() - shape.min()
            shape = (shape - shape.min()) / (span if span > 0 else 1.0)
            out[i] = lo + (hi - lo) * shape * rng.random()
        else:
            out[i] = lo + (hi - lo) * rng.random()
    return out
