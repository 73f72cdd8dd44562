"""Kernel mathematics behind the spectral dynamics embedding.

The transition density of ``s' = f(s, a) + eps`` with ``eps ~ N(0, sigma^2 I)``
is a Gaussian kernel in ``(s', f(s, a))``. Splitting it with a parameter
``alpha`` in ``[0, 1)`` gives

    exp(-|s' - f|^2 / 2 sigma^2)
        = exp(-|alpha s'|^2 / 2 sigma^2)                          (density in s')
        * exp(-|(1 - alpha^2) s' - f|^2 / (2 sigma^2 (1 - alpha^2)))  (kernel k_alpha)
        * exp(alpha^2 |f|^2 / (2 (1 - alpha^2) sigma^2))            (g_alpha(f))

and the middle factor is truncated to finitely many features either by random
Fourier features (Monte-Carlo over the Bochner spectral measure) or by the
Nystrom method (empirical Mercer eigenfunctions of a Gram matrix).

All evaluation functions accept points with shape ``(..., d)`` and broadcast
over the leading axes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DomainError, InsufficientDataError, RankDeficiencyError

logger = logging.getLogger(__name__)

PAIRED_TRIG = "paired-trig"
PHASE_SHIFTED = "phase-shifted"
RF_VARIANTS = (PAIRED_TRIG, PHASE_SHIFTED)

GAUSSIAN_P_ALPHA = "gaussian-p-alpha"
UNIFORM_BOX = "uniform-box"
NYSTROM_MEASURES = (GAUSSIAN_P_ALPHA, UNIFORM_BOX)

RANK_TOL = 1e-12


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class KernelParams:
    """Noise scale ``sigma``, split parameter ``alpha`` and state dimension ``d``."""

    sigma: float
    alpha: float
    d: int

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ContractError(f"sigma must be positive and finite, got {self.sigma}")
        if not (0.0 <= self.alpha < 1.0):
            raise ContractError(f"alpha must lie in [0, 1), got {self.alpha}")
        if int(self.d) != self.d or self.d < 1:
            raise ContractError(f"d must be a positive integer, got {self.d}")

    @property
    def bandwidth(self) -> float:
        """Length scale of ``k_alpha``: ``sigma / sqrt(1 - alpha^2)``."""
        return self.sigma / math.sqrt(1.0 - self.alpha**2)


def _points(params: KernelParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != params.d:
        raise ContractError(f"expected trailing dimension {params.d}, got shape {x.shape}")
    return x


def _require_open_alpha(params: KernelParams, what: str):
    if not (0.0 < params.alpha < 1.0):
        raise DomainError(
            f"{what} needs alpha in (0, 1), got alpha={params.alpha}; "
            "use transition_density_estimate for the combined alpha=0 form"
        )


def _sqnorm(x: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", x, x)


def k_alpha(params: KernelParams, x, y):
    """Gaussian kernel ``exp(-(1 - alpha^2) |x - y|^2 / (2 sigma^2))``."""
    x = _points(params, x)
    y = _points(params, y)
    diff = x - y
    out = np.exp(-(1.0 - params.alpha**2) * _sqnorm(diff) / (2.0 * params.sigma**2))
    return out[()] if np.ndim(out) == 0 else out


def g_alpha(params: KernelParams, v):
    """Feature amplitude ``exp(alpha^2 |v|^2 / (2 (1 - alpha^2) sigma^2))``, always >= 1."""
    v = _points(params, v)
    a2 = params.alpha**2
    out = np.exp(a2 * _sqnorm(v) / (2.0 * (1.0 - a2) * params.sigma**2))
    return out[()] if np.ndim(out) == 0 else out


def p_alpha(params: KernelParams, s_prime):
    """Gaussian density in ``s'`` with per-coordinate standard deviation ``sigma / alpha``."""
    _require_open_alpha(params, "p_alpha")
    s_prime = _points(params, s_prime)
    a, s, d = params.alpha, params.sigma, params.d
    norm = a**d * (2.0 * math.pi * s**2) ** (-d / 2.0)
    out = norm * np.exp(-(a**2) * _sqnorm(s_prime) / (2.0 * s**2))
    return out[()] if np.ndim(out) == 0 else out


def rf_prefactor(params: KernelParams, f_val):
    """``g_alpha(f) / alpha^d``; at ``alpha = 0`` the ``alpha^d`` is moved to the density side and 1 is returned."""
    if params.alpha == 0.0:
        f_val = _points(params, f_val)
        return np.ones(f_val.shape[:-1])[()]
    return g_alpha(params, f_val) / params.alpha**params.d


def g_tilde(params: KernelParams, c_f: float) -> float:
    """Upper bound of ``g_alpha(f) / alpha^d`` over ``|f| <= c_f``."""
    if params.alpha == 0.0:
        return 1.0
    a2 = params.alpha**2
    return math.exp(a2 * c_f**2 / (2.0 * (1.0 - a2) * params.sigma**2)) / params.alpha**params.d


def factorization_factors(params: KernelParams, f_val, s_prime):
    """The three factors whose product is ``exp(-|s' - f|^2 / (2 sigma^2))``.

    Returns
    -------
    (density_part, kernel_part, amplitude_part)
        ``exp(-|alpha s'|^2 / 2 sigma^2)``,
        ``exp(-|(1 - alpha^2) s' - f|^2 / (2 sigma^2 (1 - alpha^2)))`` and
        ``exp(alpha^2 |f|^2 / (2 (1 - alpha^2) sigma^2))``.
    """
    _require_open_alpha(params, "factorization_factors")
    f_val = _points(params, f_val)
    s_prime = _points(params, s_prime)
    a2, s2 = params.alpha**2, params.sigma**2
    first = np.exp(-a2 * _sqnorm(s_prime) / (2.0 * s2))
    second = np.exp(-_sqnorm((1.0 - a2) * s_prime - f_val) / (2.0 * s2 * (1.0 - a2)))
    third = np.exp(a2 * _sqnorm(f_val) / (2.0 * (1.0 - a2) * s2))
    return tuple(v[()] if np.ndim(v) == 0 else v for v in (first, second, third))


# ---------------------------------------------------------------------------
# Random Fourier features
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RandomFeatureMap:
    """Frozen frequency sample defining a random Fourier feature map.

    ``paired-trig`` maps evaluate to ``2m`` interleaved (sin, cos) entries,
    ``phase-shifted`` maps to ``m`` entries ``sqrt(2/m) cos(w.x + b)``.
    """

    variant: str
    omega: np.ndarray
    params: KernelParams
    phases: np.ndarray | None = None
    bandwidth: float = 1.0

    @property
    def m(self) -> int:
        return self.omega.shape[0]

    @property
    def dim(self) -> int:
        return 2 * self.m if self.variant == PAIRED_TRIG else self.m

    def transform(self, f_val) -> np.ndarray:
        if self.variant == PAIRED_TRIG:
            return eval_psi_rf(self, f_val)
        return eval_psi_phase(self, f_val)


def sample_random_features(params: KernelParams, m: int, variant: str = PAIRED_TRIG,
                           bandwidth: float = 1.0, rng=None) -> RandomFeatureMap:
    """Draw ``m`` frequencies.

    ``paired-trig`` frequencies follow ``N(0, sigma^-2 I_d)``; ``phase-shifted``
    frequencies follow ``N(0, bandwidth^2 I_d)`` with phases ``U[0, 2 pi)``.
    """
    if int(m) != m or m < 1:
        raise ContractError(f"m must be a positive integer, got {m}")
    if variant not in RF_VARIANTS:
        raise ContractError(f"unknown random-feature variant {variant!r}")
    if not bandwidth > 0:
        raise ContractError(f"bandwidth must be positive, got {bandwidth}")
    rng = np.random.default_rng(rng)
    z = rng.standard_normal((int(m), params.d))
    if variant == PAIRED_TRIG:
        return RandomFeatureMap(variant, _frozen(z / params.sigma), params)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=int(m))
    return RandomFeatureMap(variant, _frozen(z * bandwidth), params, _frozen(phases), float(bandwidth))


def _require_variant(fmap: RandomFeatureMap, variant: str):
    if fmap.variant != variant:
        raise ContractError(f"operation needs a {variant} map, got {fmap.variant}")


def eval_psi_rf(fmap: RandomFeatureMap, f_val) -> np.ndarray:
    """Paired-trig features of the mean next state ``f_val``.

    Entry pair ``i`` is ``c(f) [sin(w_i.f / sqrt(1-alpha^2)), cos(w_i.f / sqrt(1-alpha^2))] / sqrt(m)``
    with ``c(f) = g_alpha(f) / alpha^d`` (``c = 1`` at ``alpha = 0``).
    """
    _require_variant(fmap, PAIRED_TRIG)
    params = fmap.params
    f_val = _points(params, f_val)
    z = (f_val @ fmap.omega.T) / math.sqrt(1.0 - params.alpha**2)
    pref = np.asarray(rf_prefactor(params, f_val))[..., None] / math.sqrt(fmap.m)
    out = np.stack([np.sin(z), np.cos(z)], axis=-1) * pref[..., None]
    return out.reshape(*z.shape[:-1], 2 * fmap.m)


def eval_psi_phase(fmap: RandomFeatureMap, f_val) -> np.ndarray:
    """Phase-shifted cosine features ``sqrt(2/m) cos(w_i.f + b_i)``."""
    _require_variant(fmap, PHASE_SHIFTED)
    f_val = _points(fmap.params, f_val)
    return math.sqrt(2.0 / fmap.m) * np.cos(f_val @ fmap.omega.T + fmap.phases)


def rf_kernel_estimate(fmap: RandomFeatureMap, x, y):
    """Monte-Carlo estimate ``mean_i cos(w_i.(x - y) sqrt(1 - alpha^2))`` of ``k_alpha(x, y)``."""
    _require_variant(fmap, PAIRED_TRIG)
    params = fmap.params
    diff = _points(params, x) - _points(params, y)
    out = np.cos((diff @ fmap.omega.T) * math.sqrt(1.0 - params.alpha**2)).mean(axis=-1)
    return out[()] if np.ndim(out) == 0 else out


def mu_rf(fmap: RandomFeatureMap, s_prime) -> np.ndarray:
    """Per-frequency next-state factors ``p_alpha(s') [cos(sqrt(1-alpha^2) w.s'), sin(...)]``.

    Shape ``(..., m, 2)``. Requires ``alpha`` in (0, 1).
    """
    _require_variant(fmap, PAIRED_TRIG)
    params = fmap.params
    _require_open_alpha(params, "mu_rf")
    s_prime = _points(params, s_prime)
    z = math.sqrt(1.0 - params.alpha**2) * (s_prime @ fmap.omega.T)
    dens = np.asarray(p_alpha(params, s_prime))[..., None, None]
    return dens * np.stack([np.cos(z), np.sin(z)], axis=-1)


def transition_density_estimate(fmap: RandomFeatureMap, params: KernelParams, f_val, s_prime):
    """Finite-``m`` estimate of the Gaussian transition density ``P(s' | s, a)``.

    For ``alpha`` in (0, 1) this is ``(1/m) sum_i psi_i(f) . mu_i(s')`` with the
    per-frequency factors written out separately. At ``alpha = 0`` the
    ``1/alpha^d`` and ``alpha^d`` factors are cancelled analytically and the
    combined prefactor ``(2 pi sigma^2)^(-d/2)`` is used. The estimate can be
    negative for small ``m``.
    """
    _require_variant(fmap, PAIRED_TRIG)
    f_val = _points(params, f_val)
    s_prime = _points(params, s_prime)
    if params.alpha == 0.0:
        z = (f_val - s_prime) @ fmap.omega.T
        out = (2.0 * math.pi * params.sigma**2) ** (-params.d / 2.0) * np.cos(z).mean(axis=-1)
        return out[()] if np.ndim(out) == 0 else out
    z = (f_val @ fmap.omega.T) / math.sqrt(1.0 - params.alpha**2)
    psi = np.asarray(rf_prefactor(params, f_val))[..., None, None] * np.stack([np.cos(z), np.sin(z)], axis=-1)
    mu = mu_rf(fmap, s_prime)
    out = np.einsum("...ij,...ij->...", psi, mu) / fmap.m
    return out[()] if np.ndim(out) == 0 else out


def exp_family_features(fmap: RandomFeatureMap, f_val, A_val) -> np.ndarray:
    """Random features for ``P(s'|s,a) ~ p(s') exp(f(s,a).zeta(s'))``.

    Returns ``h [cos(w_i.f), sin(w_i.f)]_i / sqrt(m)`` (interleaved pairs) with
    ``h = exp(A_val) exp(|f|^2 / 2)``. The frequencies must be standard normal,
    i.e. the map must have been sampled with ``sigma = 1``.
    """
    _require_variant(fmap, PAIRED_TRIG)
    if fmap.params.sigma != 1.0:
        raise ContractError("exponential-family features need identity-covariance frequencies (sigma=1)")
    f_val = _points(fmap.params, f_val)
    z = f_val @ fmap.omega.T
    h = np.exp(np.asarray(A_val, dtype=float) + 0.5 * _sqnorm(f_val))
    out = np.stack([np.cos(z), np.sin(z)], axis=-1) * (h / math.sqrt(fmap.m))[..., None, None]
    return out.reshape(*z.shape[:-1], 2 * fmap.m)


def exp_family_mu(fmap: RandomFeatureMap, zeta_val, g_val=1.0) -> np.ndarray:
    """Next-state side ``g(s') [cos(w_i.zeta), sin(w_i.zeta)]_i / sqrt(m)`` matching :func:`exp_family_features`."""
    zeta_val = _points(fmap.params, zeta_val)
    z = zeta_val @ fmap.omega.T
    out = np.stack([np.cos(z), np.sin(z)], axis=-1) * (np.asarray(g_val, dtype=float) / math.sqrt(fmap.m))[..., None, None]
    return out.reshape(*z.shape[:-1], 2 * fmap.m)


# ---------------------------------------------------------------------------
# Nystrom features
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GramEigen:
    """Descending eigenvalues (negatives clamped to 0) and orthonormal eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]


@dataclass(frozen=True, eq=False)
class NystromFeatureMap:
    """Landmarks plus the retained top-``m`` eigenpairs of their Gram matrix."""

    landmarks: np.ndarray
    U: np.ndarray
    lam: np.ndarray
    params: KernelParams
    requested_m: int = field(default=0)

    @property
    def m(self) -> int:
        return self.lam.shape[0]

    @property
    def n_nys(self) -> int:
        return self.landmarks.shape[0]

    @property
    def dim(self) -> int:
        return self.m

    def transform(self, f_val) -> np.ndarray:
        return eval_psi_nys(self, f_val)


def gram_matrix(params: KernelParams, X) -> np.ndarray:
    X = _points(params, X)
    n = X.shape[0]
    K = np.empty((n, n))
    step = max(1, 2**22 // max(1, n * params.d))
    for lo in range(0, n, step):
        K[lo:lo + step] = k_alpha(params, X[lo:lo + step, None, :], X[None, :, :])
    return K


def gram_eigen(K: np.ndarray) -> GramEigen:
    """Symmetric eigendecomposition sorted descending, ties kept in index order.

    Eigenvalues below ``-1e-8 n`` mean the input was not positive semidefinite;
    smaller negative values are round-off and are clamped to zero. Eigenvector
    signs are fixed so that each column's largest-magnitude entry is positive.
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    if K.ndim != 2 or K.shape[1] != n:
        raise ContractError(f"Gram matrix must be square, got shape {K.shape}")
    w, V = np.linalg.eigh(0.5 * (K + K.T))
    if w.min() < -1e-8 * n:
        raise ContractError(f"matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
    order = np.argsort(-w, kind="stable")
    w = np.maximum(w[order], 0.0)
    V = V[:, order]
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(n)])
    signs[signs == 0] = 1.0
    return GramEigen(_frozen(w), _frozen(V * signs))


def effective_rank(eigenvalues: np.ndarray, rank_tol: float = RANK_TOL) -> int:
    lam = np.asarray(eigenvalues)
    if lam.size == 0 or lam[0] <= 0:
        return 0
    return int(np.count_nonzero(lam >= rank_tol * lam[0]))


def build_nystrom(params: KernelParams, landmarks, m: int, rank_tol: float = RANK_TOL):
    """Gram matrix on ``landmarks``, its eigendecomposition and the top-``m`` Nystrom map.

    Eigenpairs with ``lambda_i < rank_tol * lambda_1`` are dropped and ``m``
    shrinks with a warning. Duplicate landmarks that make the requested ``m``
    unreachable raise :class:`RankDeficiencyError`.
    """
    X = _points(params, landmarks)
    if X.ndim != 2:
        raise ContractError("landmarks must be an (n_nys, d) matrix")
    n = X.shape[0]
    if int(m) != m or not 1 <= m <= n:
        raise ContractError(f"need 1 <= m <= n_nys={n}, got m={m}")
    K = gram_matrix(params, X)
    eig = gram_eigen(K)
    rank = effective_rank(eig.eigenvalues, rank_tol)
    if m > rank:
        has_duplicates = n > 1 and np.unique(X, axis=0).shape[0] < n
        if has_duplicates:
            raise RankDeficiencyError(
                f"duplicate landmarks: effective rank {rank} < requested m={m}", effective_rank=rank
            )
        logger.warning("Nystrom rank truncated: requested m=%d, effective rank %d", m, rank)
    keep = min(int(m), rank)
    fmap = NystromFeatureMap(
        landmarks=_frozen(X),
        U=_frozen(eig.eigenvectors[:, :keep]),
        lam=_frozen(eig.eigenvalues[:keep]),
        params=params,
        requested_m=int(m),
    )
    return fmap, eig


def sample_landmarks(params: KernelParams, n: int, measure: str = GAUSSIAN_P_ALPHA, rng=None,
                     low=None, high=None) -> np.ndarray:
    """Draw ``n`` landmark states from ``p_alpha`` or uniformly from a box."""
    rng = np.random.default_rng(rng)
    if measure == GAUSSIAN_P_ALPHA:
        _require_open_alpha(params, "the p_alpha sampling measure")
        return rng.normal(0.0, params.sigma / params.alpha, size=(int(n), params.d))
    if measure == UNIFORM_BOX:
        if low is None or high is None:
            raise ContractError("uniform-box sampling needs low and high")
        low = np.broadcast_to(np.asarray(low, float), (params.d,))
        high = np.broadcast_to(np.asarray(high, float), (params.d,))
        return rng.uniform(low, high, size=(int(n), params.d))
    raise ContractError(f"unknown Nystrom sampling measure {measure!r}")


def eval_varphi_nys(fmap: NystromFeatureMap, x) -> np.ndarray:
    """``varphi_i(x) = lambda_i^-1/2 sum_l U[l, i] k_alpha(x_l, x)``."""
    x = _points(fmap.params, x)
    kx = k_alpha(fmap.params, x[..., None, :], fmap.landmarks)
    return (kx @ fmap.U) / np.sqrt(fmap.lam)


def eval_psi_nys(fmap: NystromFeatureMap, f_val) -> np.ndarray:
    """Nystrom features ``(g_alpha(f) / alpha^d) varphi(f / (1 - alpha^2))``."""
    params = fmap.params
    _require_open_alpha(params, "eval_psi_nys")
    f_val = _points(params, f_val)
    pref = np.asarray(g_alpha(params, f_val))[..., None] / params.alpha**params.d
    return pref * eval_varphi_nys(fmap, f_val / (1.0 - params.alpha**2))


def nystrom_kernel_estimate(fmap: NystromFeatureMap, x, y):
    """``varphi(x) . varphi(y)``, the rank-``m`` Nystrom kernel."""
    out = np.einsum("...i,...i->...", eval_varphi_nys(fmap, x), eval_varphi_nys(fmap, y))
    return out[()] if np.ndim(out) == 0 else out


def _estimator(estimate) -> Callable:
    if isinstance(estimate, NystromFeatureMap):
        return lambda x, y: nystrom_kernel_estimate(estimate, x, y)
    if isinstance(estimate, RandomFeatureMap):
        return lambda x, y: rf_kernel_estimate(estimate, x, y)
    if callable(estimate):
        return estimate
    raise ContractError("estimate must be a feature map or a callable (x, y) -> k_hat")


def kernel_approx_error(estimate, params: KernelParams, eval_points) -> float:
    """Mean over ``eval_points`` of ``sqrt(max(0, k_alpha(x, x) - k_hat(x, x)))``."""
    X = _points(params, eval_points)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[0] == 0:
        raise ContractError("eval_points is empty")
    k_hat = np.asarray(_estimator(estimate)(X, X), dtype=float)
    defect = np.maximum(np.asarray(k_alpha(params, X, X)) - k_hat, 0.0)
    return float(np.mean(np.sqrt(defect)))


def pairwise_kernel_error(estimate, params: KernelParams, xs, ys) -> float:
    """Mean ``|k_hat(x, y) - k_alpha(x, y)|`` over paired rows of ``xs`` and ``ys``.

    Random Fourier estimates are exact on the diagonal, so their error is
    measured off-diagonal with this function instead.
    """
    xs = _points(params, xs)
    ys = _points(params, ys)
    if xs.shape != ys.shape or xs.ndim != 2 or xs.shape[0] == 0:
        raise ContractError("xs and ys must be matching non-empty (n, d) arrays")
    k_hat = np.asarray(_estimator(estimate)(xs, ys), dtype=float)
    return float(np.mean(np.abs(k_hat - k_alpha(params, xs, ys))))


# ---------------------------------------------------------------------------
# Eigen-decay diagnostics
# ---------------------------------------------------------------------------

STRETCHED_EXP = "stretched-exponential"
POWER_LAW = "power-law"


@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit of the normalised Gram spectrum.

    For the stretched-exponential model ``log(lambda_j / n) ~ intercept - slope * j^(1/h)``
    (so ``slope`` estimates the decay rate ``beta``); for the power law
    ``log(lambda_j / n) ~ intercept - slope * log j``.
    """

    slope: float
    intercept: float
    r_squared: float
    model: str
    h: float | None = None
    n_used: int = 0


def _linfit(x: np.ndarray, y: np.ndarray):
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ yc) / sxx
    intercept = float(y.mean() - slope * x.mean())
    ss_tot = float(yc @ yc)
    resid = y - (intercept + slope * x)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(resid @ resid) / ss_tot
    return slope, intercept, min(max(r2, 0.0), 1.0)


def eigendecay_fit(eigen, n: int, h_grid: Sequence[float] = (1.0, 2.0, 3.0),
                   model: str = STRETCHED_EXP, rel_floor: float = RANK_TOL) -> DecayFit:
    """Fit the decay of ``lambda_j / n`` and return the best fit over ``h_grid``.

    Only eigenvalues that are strictly positive and at least ``rel_floor * lambda_1``
    enter the fit; the tail below that is round-off, not spectrum.
    """
    lam = np.asarray(eigen.eigenvalues if isinstance(eigen, GramEigen) else eigen, dtype=float)
    lam = np.sort(lam)[::-1]
    keep = lam > 0
    if keep.any():
        keep &= lam >= rel_floor * lam[0]
    j = np.arange(1, lam.size + 1, dtype=float)[keep]
    if j.size < 4:
        raise InsufficientDataError(f"need at least 4 positive eigenvalues, got {j.size}")
    y = np.log(lam[keep] / n)
    if model == POWER_LAW:
        slope, intercept, r2 = _linfit(-np.log(j), y)
        return DecayFit(slope, intercept, r2, POWER_LAW, None, int(j.size))
    if model != STRETCHED_EXP:
        raise ContractError(f"unknown decay model {model!r}")
    best = None
    for h in h_grid:
        slope, intercept, r2 = _linfit(-(j ** (1.0 / h)), y)
        if best is None or r2 > best.r_squared:
            best = DecayFit(slope, intercept, r2, STRETCHED_EXP, float(h), int(j.size))
    return best
