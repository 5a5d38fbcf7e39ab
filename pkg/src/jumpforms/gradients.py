"""Pointwise gradient moduli and the pseudo-gradient of a field.

``nabla``/``tilde_nabla*`` return the moduli themselves; pass
``squared=True`` to get the squared quantities that the inequalities are
stated in. Leading axes of ``f`` are batch axes.
"""
from __future__ import annotations

import numpy as np

from .exceptions import InvalidParameter, PreconditionViolation
from .semigroup import _check_field, generator_apply
from .space import Space

# |a - b| / a below which I(a, b; p) switches to its power series in b/a - 1
SERIES_CUTOFF = 0.05
SERIES_TERMS = 24


def _pair_terms(space: Space, f):
    f = _check_field(space, f)
    diff = f[..., :, None] - f[..., None, :]
    return f, diff * diff * space.weights


def carre_du_champ(space: Space, f) -> np.ndarray:
    """``Gamma(f)(i) = 1/2 sum_j (f_i - f_j)^2 J_ij m_j``."""
    _, terms = _pair_terms(space, f)
    return 0.5 * terms.sum(axis=-1)


def gamma2(space: Space, f) -> np.ndarray:
    """``Gamma_2(f) = 2 Gamma(f)``, the full second-order jump energy."""
    _, terms = _pair_terms(space, f)
    return terms.sum(axis=-1)


def nabla(space: Space, f, squared: bool = False) -> np.ndarray:
    g = carre_du_champ(space, f)
    return g if squared else np.sqrt(g)


def tilde_nabla_star(space: Space, f, squared: bool = False) -> np.ndarray:
    """One-sided gradient over targets with ``f_j <= f_i`` (ties included)."""
    f, terms = _pair_terms(space, f)
    mask = f[..., :, None] >= f[..., None, :]
    g = np.where(mask, terms, 0.0).sum(axis=-1)
    return g if squared else np.sqrt(g)


def tilde_nabla(space: Space, f, squared: bool = False) -> np.ndarray:
    """Gradient over targets with ``|f_j| <= |f_i|`` (ties included)."""
    f, terms = _pair_terms(space, f)
    a = np.abs(f)
    mask = a[..., :, None] >= a[..., None, :]
    g = np.where(mask, terms, 0.0).sum(axis=-1)
    return g if squared else np.sqrt(g)


def _check_p(p):
    if not 1 < p <= 2:
        raise InvalidParameter(f"p must lie in (1, 2], got {p}")


def i_integral(a, b, p: float):
    """``I(a, b; p) = int_0^1 (1-u) a^{2-p} / ((1-u) a + u b)^{2-p} du``.

    Closed form from the antiderivative of ``(b - v) v^{p-2}``; a power
    series in ``b/a - 1`` takes over when ``a`` and ``b`` are close. Uses
    ``0^0 = 1``. Broadcasts over ``a`` and ``b``.
    """
    _check_p(p)
    a_arr, b_arr = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    if np.any(a_arr < 0) or np.any(b_arr < 0):
        raise InvalidParameter("I(a, b; p) needs a, b >= 0")
    out = np.full(a_arr.shape, 0.5)
    if p == 2:
        return out if out.ndim else float(out)

    general = (a_arr > 0) & (b_arr > 0) & (a_arr != b_arr)
    out[(a_arr == 0) & (b_arr > 0)] = 0.0
    out[(a_arr > 0) & (b_arr == 0)] = 1.0 / p

    with np.errstate(over="ignore"):
        r = np.where(general, b_arr / np.where(a_arr > 0, a_arr, 1.0), 2.0)
    x = r - 1.0
    near = general & (np.abs(x) < SERIES_CUTOFF)
    far = general & ~near

    if np.any(far):
        rf, xf = r[far], x[far]
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            lr = np.log(rf)
            bracket = rf * np.expm1((p - 1) * lr) / (p - 1) - np.expm1(p * lr) / p
            low = bracket / (xf * xf)
            # for r > 1 scale by r^{-2} so huge ratios cannot overflow
            s = np.exp(-lr)
            high = np.exp((p - 2) * lr) * (-np.expm1(-(p - 1) * lr) / (p - 1) + np.expm1(-p * lr) / p) / (1 - s) ** 2
        out[far] = np.where(rf > 1, high, low)
    if np.any(near):
        xn = x[near]
        coef, total, power = 1.0, np.zeros_like(xn), np.ones_like(xn)
        for k in range(SERIES_TERMS):
            total += coef * power / ((k + 1) * (k + 2))
            coef *= (p - 2 - k) / (k + 1)
            power = power * xn
        out[near] = total
    return out if out.ndim else float(out)


def gamma_p_definitional(space: Space, decomp, f, p: float) -> np.ndarray:
    """Pseudo-gradient ``p f Lf - |f|^{2-p} L(|f|^p)`` for signed fields.

    ``|0|^{2-p}`` is 0 for ``p < 2`` and 1 at ``p = 2``. ``decomp`` is
    accepted for signature symmetry; ``L`` is applied directly.
    """
    _check_p(p)
    f = _check_field(space, f)
    a = np.abs(f)
    return p * f * generator_apply(space, f) - a ** (2 - p) * generator_apply(space, a**p)


def gamma_p_explicit(space: Space, f, p: float) -> np.ndarray:
    """Pseudo-gradient of a nonnegative field through the integral ``I``.

    ``p(p-1) sum_{j: f_j != f_i} (f_i - f_j)^2 I(f_i, f_j; p) J_ij m_j``.
    """
    _check_p(p)
    f = _check_field(space, f)
    if np.any(f < 0):
        raise PreconditionViolation("explicit pseudo-gradient needs a nonnegative field")
    fi = np.broadcast_to(f[..., :, None], f.shape + (space.n,))
    fj = np.broadcast_to(f[..., None, :], f.shape + (space.n,))
    diff = fi - fj
    terms = np.where(diff != 0, diff * diff * i_integral(fi, fj, p), 0.0) * space.weights
    return p * (p - 1) * terms.sum(axis=-1)


def sign_split_slack(f) -> np.ndarray:
    """Worst slack of the positive/negative-part domination per field.

    For each pair ``(i, j)`` compares
    ``1{|f_i| >= |f_j|} (f_i - f_j)^2`` with
    ``4 1{f+_i >= f+_j} (f+_i - f+_j)^2 + 4 1{f-_i >= f-_j} (f-_i - f-_j)^2``
    and returns the minimum of right minus left over all pairs.
    """
    f = np.asarray(f, dtype=float)
    a, fp, fm = np.abs(f), np.maximum(f, 0.0), np.maximum(-f, 0.0)

    def term(g):
        d = g[..., :, None] - g[..., None, :]
        return np.where(g[..., :, None] >= g[..., None, :], d * d, 0.0)

    d = f[..., :, None] - f[..., None, :]
    lhs = np.where(a[..., :, None] >= a[..., None, :], d * d, 0.0)
    rhs = 4.0 * term(fp) + 4.0 * term(fm)
    return (rhs - lhs).min(axis=(-2, -1))
