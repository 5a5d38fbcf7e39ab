"""Generator, spectral decomposition and the semigroups built from it.

All fields are numpy arrays whose last axis runs over the points of the
space; leading axes are batch axes and are carried through unchanged.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .exceptions import InvalidParameter, NumericalFailure
from .space import Space

# eigenvalues within this multiple of max(1, lambda_max) of zero are snapped to 0
ZERO_RTOL = 1e-9
RESIDUAL_RTOL = 1e-8

_CACHE: "weakref.WeakKeyDictionary[Space, SpectralDecomposition]" = weakref.WeakKeyDictionary()


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigenpairs of ``L``, orthonormal in the ``mu``-weighted inner product.

    ``eigenvectors[:, k]`` is the eigenfunction for ``eigenvalues[k]``;
    eigenvalues are nondecreasing and the null modes are exactly zero.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    measure: np.ndarray

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def zero_modes(self) -> np.ndarray:
        return self.eigenvalues == 0.0

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def spectral_gap(self) -> float:
        """Smallest nonzero eigenvalue, or ``inf`` when ``L`` vanishes."""
        nz = self.eigenvalues[~self.zero_modes]
        return float(nz[0]) if nz.size else float("inf")

    def coefficients(self, f) -> np.ndarray:
        """Expansion coefficients ``<f, phi_k>``."""
        return (np.asarray(f, dtype=float) * self.measure) @ self.eigenvectors

    def synthesize(self, c) -> np.ndarray:
        return np.asarray(c) @ self.eigenvectors.T

    def apply(self, f, multiplier) -> np.ndarray:
        """Spectral multiplier ``sum_k multiplier[k] <f, phi_k> phi_k``."""
        return self.synthesize(self.coefficients(f) * multiplier)


def generator_matrix(space: Space) -> np.ndarray:
    """Matrix of ``(Lf)_i = sum_j (f_i - f_j) J_ij m_j``."""
    w = space.weights
    return np.diag(w.sum(axis=1)) - w


def _check_field(space: Space, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.ndim == 0 or f.shape[-1] != space.n:
        raise InvalidParameter(f"field has {f.shape[-1] if f.ndim else 0} entries, space has {space.n}")
    if not np.all(np.isfinite(f)):
        raise InvalidParameter("field has non-finite entries")
    return f


def generator_apply(space: Space, f) -> np.ndarray:
    f = _check_field(space, f)
    w = space.weights
    return f * w.sum(axis=1) - f @ w.T


def decompose(space: Space) -> SpectralDecomposition:
    """Cached eigendecomposition of the generator of ``space``.

    ``L`` is self-adjoint for the ``mu``-weighted inner product, so
    ``S = M^{1/2} L M^{-1/2}`` is symmetric and ``eigh`` applies.
    """
    cached = _CACHE.get(space)
    if cached is not None:
        return cached
    m = space.measure
    r = np.sqrt(m)
    q = space.rates
    S = np.diag(q) - r[:, None] * space.kernel * r[None, :]
    try:
        lam, v = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("symmetric eigensolver did not converge", {"n": space.n}) from exc
    phi = v / r[:, None]
    scale = max(1.0, float(np.abs(lam).max()))
    lam = np.where(np.abs(lam) <= ZERO_RTOL * scale, 0.0, lam)

    residual = np.abs(generator_matrix(space) @ phi - phi * lam).max()
    if residual > RESIDUAL_RTOL * scale or lam[0] < -ZERO_RTOL * scale:
        raise NumericalFailure(
            "eigendecomposition failed its residual check",
            {"residual": float(residual), "lambda_min": float(lam[0]), "scale": scale},
        )
    lam.setflags(write=False)
    phi.setflags(write=False)
    dec = SpectralDecomposition(eigenvalues=lam, eigenvectors=phi, measure=space.measure)
    _CACHE[space] = dec
    return dec


def _decomp(space, decomp):
    return decompose(space) if decomp is None else decomp


def heat(space: Space, decomp, f, t: float) -> np.ndarray:
    """Heat semigroup ``P_t f = e^{-tL} f``."""
    f = _check_field(space, f)
    if not t >= 0:
        raise InvalidParameter(f"time must be nonnegative, got {t}")
    if t == 0:
        return f.copy()
    dec = _decomp(space, decomp)
    return dec.apply(f, np.exp(-dec.eigenvalues * t))


def poisson(space: Space, decomp, f, t: float) -> np.ndarray:
    """Poisson semigroup ``e^{-t sqrt(L)} f``."""
    f = _check_field(space, f)
    if not t >= 0:
        raise InvalidParameter(f"time must be nonnegative, got {t}")
    if t == 0:
        return f.copy()
    dec = _decomp(space, decomp)
    return dec.apply(f, np.exp(-np.sqrt(dec.eigenvalues) * t))


def subordination_factor(lam: float, t: float) -> float:
    """``(1/sqrt(pi)) int_0^inf exp(-t^2 lam / (4u)) e^{-u} u^{-1/2} du``.

    Equals ``exp(-t sqrt(lam))``; evaluated by adaptive quadrature so it can
    serve as an independent check of :func:`poisson`.
    """
    if lam == 0 or t == 0:
        return 1.0
    a = t * t * lam / 4.0

    # u = v^2 removes the u^{-1/2} endpoint singularity
    def integrand(v):
        return 2.0 * np.exp(-a / (v * v) - v * v) if v > 0 else 0.0

    val, _ = integrate.quad(integrand, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val / np.sqrt(np.pi)


def poisson_subordinated(space: Space, decomp, f, t: float) -> np.ndarray:
    """Poisson semigroup through the subordination integral, mode by mode."""
    f = _check_field(space, f)
    if not t >= 0:
        raise InvalidParameter(f"time must be nonnegative, got {t}")
    dec = _decomp(space, decomp)
    mult = np.array([subordination_factor(lam, t) for lam in dec.eigenvalues])
    return dec.apply(f, mult)


def heat_kernel(space: Space, decomp, t: float) -> np.ndarray:
    """Transition density ``p_t(i, j)`` with respect to ``mu``.

    ``P(X_t = j | X_0 = i) = p_t(i, j) m_j``.
    """
    if not t > 0:
        raise InvalidParameter(f"time must be positive, got {t}")
    dec = _decomp(space, decomp)
    phi = dec.eigenvectors
    return (phi * np.exp(-dec.eigenvalues * t)) @ phi.T


def transition_matrix(space: Space, decomp, t: float) -> np.ndarray:
    """Row-stochastic matrix ``P(X_t = j | X_0 = i)``, clamped at zero."""
    return np.clip(heat_kernel(space, decomp, t), 0.0, None) * space.measure[None, :]


def null_projection(space: Space, decomp, f) -> np.ndarray:
    """Projection onto the kernel of ``L`` (the ``t -> inf`` limit of ``P_t f``)."""
    f = _check_field(space, f)
    dec = _decomp(space, decomp)
    return dec.apply(f, dec.zero_modes.astype(float))


def maximal_time_grid(decomp: SpectralDecomposition, grid_size: int) -> np.ndarray:
    """Log grid from ``1e-3 / lambda_max`` to ``20 / lambda_2``."""
    lo = 1e-3 / decomp.lambda_max
    hi = 20.0 / decomp.spectral_gap
    return np.geomspace(lo, max(hi, lo), grid_size)


def maximal_function(space: Space, decomp, f, grid_size: int = 64) -> np.ndarray:
    """Semigroup maximal function ``f*(i) = sup_{t>0} |P_t f(i)|`` on a log grid.

    The endpoint limits ``|f|`` and ``|Pi_0 f|`` are always included.
    """
    f = _check_field(space, f)
    if grid_size < 16:
        raise InvalidParameter(f"grid_size must be at least 16, got {grid_size}")
    dec = _decomp(space, decomp)
    out = np.abs(f)
    if dec.lambda_max == 0:
        return out
    ts = maximal_time_grid(dec, grid_size)
    c = dec.coefficients(f)
    decay = np.exp(-np.outer(ts, dec.eigenvalues))
    traj = (c[..., None, :] * decay) @ dec.eigenvectors.T
    out = np.maximum(out, np.abs(traj).max(axis=-2))
    return np.maximum(out, np.abs(null_projection(space, dec, f)))
