"""Vertical Littlewood-Paley square functions.

Every square function here is ``(int_0^inf h(t)(i) dt)^{1/2}`` for some
nonnegative pointwise integrand ``h``. ``H_nabla`` and ``G`` have closed
spectral forms. ``H_tilde`` and ``G_tilde`` are integrated exactly between
indicator switches, ``H_p`` adaptively; all three stop at ``t_cut`` and bound
the remainder on ``[t_cut, inf)`` by an exactly computable spectral expression.

Tolerances are absolute and refer to the time integral, i.e. to the squared
square function: ``tail_bound + est_error <= tol``.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .exceptions import InvalidParameter, NumericalFailure
from .gradients import _check_p, carre_du_champ, gamma_p_definitional, tilde_nabla
from .semigroup import SpectralDecomposition, _check_field, _decomp, heat_kernel
from .space import Space, lp_norm

QUAD_LIMIT = 20000
MAX_DOUBLINGS = 200
# sums below this fraction of their absolute coefficient mass count as zero at t = 0
ZERO_RTOL = 1e-13

_TENSORS: "weakref.WeakKeyDictionary[SpectralDecomposition, np.ndarray]" = weakref.WeakKeyDictionary()


@dataclass
class SquareFunctionResult:
    """Values of one square function at every point (batched like the input).

    ``squared`` is the time integral itself; ``values`` is its square root.
    ``quadrature_report`` has ``t_cut``, ``tail_bound``, ``evaluations`` and
    ``est_error`` (all zero for closed forms).
    """

    kind: str
    squared: np.ndarray
    quadrature_report: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return np.sqrt(np.clip(self.squared, 0.0, None))

    @property
    def error_bound(self) -> float:
        """Bound on ``|squared - exact|`` from tail plus quadrature error."""
        r = self.quadrature_report
        return float(r.get("tail_bound", 0.0) + r.get("est_error", 0.0))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "values": self.values.tolist(),
            "squared": self.squared.tolist(),
            "quadrature_report": dict(self.quadrature_report),
        }


def _centered_coefficients(dec: SpectralDecomposition, f) -> np.ndarray:
    # null modes never contribute to differences along kernel edges
    c = dec.coefficients(f)
    return np.where(dec.zero_modes, 0.0, c)


def _mode_quadratic(space: Space, dec: SpectralDecomposition, c, K) -> np.ndarray:
    """``1/2 sum_j W_ij sum_kl c_k c_l K_kl (phi_k(i)-phi_k(j))(phi_l(i)-phi_l(j))``.

    With ``Q = Phi (c c^T * K) Phi^T`` this is
    ``1/2 (q_i Q_ii - 2 (W Q)_ii + (W diag Q)_i)``.
    """
    phi = dec.eigenvectors
    w = space.weights
    inner = c[..., :, None] * c[..., None, :] * K
    Q = phi @ inner @ phi.T
    diag = np.diagonal(Q, axis1=-2, axis2=-1)
    wq = np.einsum("ij,...ji->...i", w, Q)
    return 0.5 * (space.rates * diag - 2.0 * wq + diag @ w.T)


def _pair_rates(lam_k, lam_l):
    s = lam_k[:, None] + lam_l[None, :]
    return s, s > 0


def heat_gradient_tail(space: Space, dec: SpectralDecomposition, c, T: float) -> np.ndarray:
    """Exact ``int_T^inf |nabla P_t f|^2 dt`` at every point."""
    s, pos = _pair_rates(dec.eigenvalues, dec.eigenvalues)
    K = np.where(pos, np.exp(-np.where(pos, s, 0.0) * T) / np.where(pos, s, 1.0), 0.0)
    return np.clip(_mode_quadratic(space, dec, c, K), 0.0, None)


def poisson_gradient_tail(space: Space, dec: SpectralDecomposition, c, T: float) -> np.ndarray:
    """Exact ``int_T^inf t |nabla e^{-t sqrt(L)} f|^2 dt`` at every point."""
    r = np.sqrt(dec.eigenvalues)
    s, pos = _pair_rates(r, r)
    ss = np.where(pos, s, 1.0)
    K = np.where(pos, np.exp(-np.where(pos, s, 0.0) * T) * (T / ss + 1.0 / ss**2), 0.0)
    return np.clip(_mode_quadratic(space, dec, c, K), 0.0, None)


def energy_tail_bound(space: Space, dec: SpectralDecomposition, c, T: float) -> np.ndarray:
    """Upper bound on ``int_T^inf P_t(2 Gamma(P_t f))(x) dt`` at every point.

    For ``t >= T``, ``p_t(x, z) <= sqrt(p_T(x, x) max_w p_T(w, w))`` and
    ``int_T^inf 2 D(P_t f) dt = sum_k c_k^2 e^{-2 lam_k T}``.
    """
    if T <= 0:
        return np.full(c.shape, np.inf)
    diag = np.diagonal(heat_kernel(space, dec, T)).clip(0.0, None)
    energy = (c * c * np.exp(-2.0 * dec.eigenvalues * T)).sum(axis=-1)
    return np.sqrt(diag * diag.max()) * energy[..., None]


def h_nabla(space: Space, decomp, f, method: str = "closed", tol: float = 1e-8) -> SquareFunctionResult:
    """``H_nabla f = (int_0^inf |nabla P_t f|^2 dt)^{1/2}``.

    ``method="closed"`` evaluates the spectral double sum exactly;
    ``method="quadrature"`` runs the generic adaptive path instead.
    """
    f = _check_field(space, f)
    dec = _decomp(space, decomp)
    if method == "closed":
        c = _centered_coefficients(dec, f)
        sq = heat_gradient_tail(space, dec, c, 0.0)
        return SquareFunctionResult("H_nabla", sq, _closed_report())
    if method != "quadrature":
        raise InvalidParameter(f"unknown method {method!r}")
    return _square_function(
        "H_nabla",
        space,
        dec,
        f,
        tol,
        integrand=lambda g, t: carre_du_champ(space, g),
        evolve="heat",
        tail=lambda c, T: heat_gradient_tail(space, dec, c, T),
    )


def h_tilde(space: Space, decomp, f, tol: float = 1e-8, method: str = "piecewise") -> SquareFunctionResult:
    """``H_tilde f = (int_0^inf |tilde-nabla P_t f|^2 dt)^{1/2}``.

    ``method="piecewise"`` integrates exactly between the times at which the
    indicator ``|P_t f(i)| >= |P_t f(j)|`` switches; ``method="adaptive"``
    re-evaluates the indicator at every node of an adaptive rule.
    Tail: ``|tilde-nabla g|^2 <= 2 |nabla g|^2``.
    """
    dec = _decomp(space, decomp)
    if method == "piecewise":
        return _piecewise("H_tilde", space, dec, f, tol, evolve="heat")
    if method != "adaptive":
        raise InvalidParameter(f"unknown method {method!r}")
    return _square_function(
        "H_tilde",
        space,
        dec,
        f,
        tol,
        integrand=lambda g, t: tilde_nabla(space, g, squared=True),
        evolve="heat",
        tail=lambda c, T: 2.0 * heat_gradient_tail(space, dec, c, T),
    )


def h_p(space: Space, decomp, f, p: float, tol: float = 1e-8) -> SquareFunctionResult:
    """``H_p f = (int_0^inf Gamma_p(P_t f) dt)^{1/2}``.

    Tail: ``Gamma_p(g) <= (3p - 2) |nabla g|^2`` for signed ``g``, from
    ``Gamma_p(g) = p(g Lg - |g| L|g|) + Gamma_p(|g|)`` with the first part at
    most ``p |nabla g|^2`` and the second at most ``2(p-1) |nabla g|^2``.
    """
    _check_p(p)
    dec = _decomp(space, decomp)
    return _square_function(
        "H_p",
        space,
        dec,
        f,
        tol,
        integrand=lambda g, t: gamma_p_definitional(space, dec, g, p),
        evolve="heat",
        tail=lambda c, T: (3.0 * p - 2.0) * heat_gradient_tail(space, dec, c, T),
        extra={"p": p, "tail_constant": 3.0 * p - 2.0},
    )


def g_tilde(space: Space, decomp, f, tol: float = 1e-8, method: str = "piecewise") -> SquareFunctionResult:
    """``G_tilde f = (int_0^inf t |tilde-nabla e^{-t sqrt(L)} f|^2 dt)^{1/2}``.

    Methods as for :func:`h_tilde`.
    """
    dec = _decomp(space, decomp)
    if method == "piecewise":
        return _piecewise("G_tilde", space, dec, f, tol, evolve="poisson")
    if method != "adaptive":
        raise InvalidParameter(f"unknown method {method!r}")
    return _square_function(
        "G_tilde",
        space,
        dec,
        f,
        tol,
        integrand=lambda g, t: t * tilde_nabla(space, g, squared=True),
        evolve="poisson",
        tail=lambda c, T: 2.0 * poisson_gradient_tail(space, dec, c, T),
    )


def _energy_tensor(space: Space, dec: SpectralDecomposition) -> np.ndarray:
    """``T[k, l, m] = <B_kl, phi_m>`` with ``B_kl(z) = sum_j W_zj dphi_k dphi_l``.

    ``dphi_k = phi_k(z) - phi_k(j)``, so ``2 Gamma(P_t f)(z)`` is
    ``sum_kl c_k c_l e^{-(lam_k + lam_l) t} B_kl(z)``.
    """
    cached = _TENSORS.get(dec)
    if cached is not None:
        return cached
    phi, w, m = dec.eigenvectors, space.weights, dec.measure
    diff = phi[:, None, :] - phi[None, :, :]  # z, j, k
    B = np.einsum("zj,zjk,zjl->zkl", w, diff, diff)
    T = np.einsum("z,zm,zkl->klm", m, phi, B)
    _TENSORS[dec] = T
    return T


def g_function(
    space: Space, decomp, f, T: float = np.inf, tol: float = 1e-8, method: str = "closed"
) -> SquareFunctionResult:
    """``G_T f = (int_0^T P_t(2 Gamma(P_t f)) dt)^{1/2}``; ``T = inf`` gives ``G``.

    This is the jump-representation double integral collapsed on a finite
    space: integrating over the jump marks gives ``2 Gamma`` and integrating
    against ``p_t(x, z) mu(dz)`` gives ``P_t``. ``method="closed"`` integrates
    the triple spectral sum exactly; ``method="quadrature"`` integrates in time.
    """
    if not T > 0:
        raise InvalidParameter(f"horizon must be positive, got {T}")
    f = _check_field(space, f)
    dec = _decomp(space, decomp)
    phi, lam = dec.eigenvectors, dec.eigenvalues
    kind = "G" if np.isinf(T) else "G_T"
    extra = {"T": None if np.isinf(T) else float(T)}
    if method == "closed":
        c = _centered_coefficients(dec, f)
        rate = lam[:, None, None] + lam[None, :, None] + lam[None, None, :]
        pos = rate > 0
        safe = np.where(pos, rate, 1.0)
        if np.isinf(T):
            weight = np.where(pos, 1.0 / safe, 0.0)
        else:
            weight = np.where(pos, -np.expm1(-safe * T) / safe, 0.0)
        K = (_energy_tensor(space, dec) * weight).reshape(dec.n * dec.n, dec.n)
        cc = (c[..., :, None] * c[..., None, :]).reshape(c.shape[:-1] + (dec.n * dec.n,))
        sq = np.clip((cc @ K) @ phi.T, 0.0, None)
        report = _closed_report()
        report.update(extra)
        return SquareFunctionResult(kind, sq, report)
    if method != "quadrature":
        raise InvalidParameter(f"unknown method {method!r}")

    def integrand(g, t):
        h = 2.0 * carre_du_champ(space, g)
        return ((h * dec.measure) @ phi * np.exp(-lam * t)) @ phi.T

    return _square_function(
        kind,
        space,
        dec,
        f,
        tol,
        integrand=integrand,
        evolve="heat",
        tail=lambda c, Tc: energy_tail_bound(space, dec, c, Tc),
        horizon=T,
        extra=extra,
    )


def _closed_report():
    return {"t_cut": None, "tail_bound": 0.0, "evaluations": 0, "est_error": 0.0}


def _choose_cut(tail: Callable, c, t0: float, budget: float, horizon: float):
    T = t0
    for _ in range(MAX_DOUBLINGS):
        if T >= horizon:
            return horizon, 0.0
        bound = float(np.max(tail(c, T), initial=0.0))
        if bound <= budget:
            return T, bound
        T *= 2.0
    raise NumericalFailure("could not find a time cut-off meeting the tail budget", {"t": T, "budget": budget})


def _square_function(
    kind: str,
    space: Space,
    dec: SpectralDecomposition,
    f,
    tol: float,
    integrand: Callable,
    evolve: str,
    tail: Callable,
    horizon: float = np.inf,
    extra: Optional[dict] = None,
) -> SquareFunctionResult:
    if not tol > 0:
        raise InvalidParameter(f"tol must be positive, got {tol}")
    f = _check_field(space, f)
    c_full = dec.coefficients(f)
    c = np.where(dec.zero_modes, 0.0, c_full)
    report = dict(extra or {})
    if not np.any(c) or dec.lambda_max == 0:
        report.update(_closed_report())
        return SquareFunctionResult(kind, np.zeros(f.shape), report)

    rates = dec.eigenvalues if evolve == "heat" else np.sqrt(dec.eigenvalues)
    phi = dec.eigenvectors
    t_fast = 1.0 / rates[-1]
    t_cut, tail_bound = _choose_cut(tail, c, 1.0 / rates[~dec.zero_modes][0], tol / 2, horizon)

    def h(t):
        g = (c_full * np.exp(-rates * t)) @ phi.T
        return integrand(g, t)

    # breakpoints resolve the fast initial transient
    points = [t_fast * 2.0**k for k in range(64) if t_fast * 2.0**k < t_cut]
    value, err, info = integrate.quad_vec(
        h,
        0.0,
        t_cut,
        epsabs=tol / 2,
        epsrel=0.0,
        norm="max",
        limit=QUAD_LIMIT,
        points=points or None,
        full_output=True,
    )
    report.update(
        {
            "t_cut": float(t_cut),
            "tail_bound": float(tail_bound),
            "evaluations": int(info.neval),
            "est_error": float(err),
        }
    )
    if not info.success:
        raise NumericalFailure(f"{kind} quadrature did not converge", report)
    return SquareFunctionResult(kind, np.asarray(value), report)


def _sum_values(A, rates, t):
    """Rows of ``A`` as exponential sums ``sum_k A_k e^{-r_k t}``, one time per row."""
    return (A * np.exp(-np.outer(t, rates))).sum(axis=1)


def _find_roots(A, rates, lo, hi, v_lo, v_hi, steps=10):
    """Roots of the exponential sums ``A`` bracketed by sign changes on ``[lo, hi]``.

    Safeguarded Newton from the secant point: each step shrinks the bracket
    by the sign of the current value and falls back to bisection when the
    Newton point leaves it. Converged rows drop out of the iteration.
    Returns the roots and their remaining uncertainty.
    """
    span = hi - lo
    denom = v_lo - v_hi
    t = np.where(denom != 0, lo + span * v_lo / np.where(denom != 0, denom, 1.0), lo + 0.5 * span)
    t = np.clip(t, lo, hi)
    lo, hi = lo.copy(), hi.copy()
    s_lo = np.sign(v_lo)
    Ar = A * rates
    unc = span.copy()
    act = np.arange(t.size)
    for _ in range(steps):
        if act.size == 0:
            break
        ta, la, ha = t[act], lo[act], hi[act]
        e = np.exp(-np.outer(ta, rates))
        val, slope = (A[act] * e).sum(axis=1), -(Ar[act] * e).sum(axis=1)
        same = np.sign(val) == s_lo[act]
        la, ha = np.where(same, ta, la), np.where(same, ha, ta)
        mid = 0.5 * (la + ha)
        ok = slope != 0
        new = np.where(ok, ta - val / np.where(ok, slope, 1.0), mid)
        new = np.where((new >= la) & (new <= ha), new, mid)
        new = np.where(val == 0, ta, new)
        step = np.minimum(np.abs(new - ta), ha - la)
        t[act], lo[act], hi[act], unc[act] = new, la, ha, step
        act = act[step > 4e-16 * np.maximum(new, 1e-300)]
    return t, unc


def _chord_gap(x):
    """``max_{s in [0, 1]} ((1 - s) + s e^{-x} - e^{-x s})`` for ``x >= 0``.

    The largest distance between ``e^{-x s}`` and its chord; ``x^2 / 8`` for
    small ``x`` and below 1 always.
    """
    x = np.asarray(x, dtype=float)
    small = x < 1e-3
    xs = np.where(small, 1.0, x)
    one_minus = -np.expm1(-xs)
    ratio = one_minus / xs
    s_star = -np.log(ratio) / xs
    gap = 1.0 - s_star * one_minus - ratio
    return np.where(small, x * x / 8.0, np.maximum(gap, 0.0))


def _merge_rates(rates, rtol=1e-11):
    """Group numerically equal rates; returns group rates and the column map.

    Degenerate eigenvalues make sums cancel within a group while each
    coefficient stays large, which hides identical vanishing from root
    exclusion. Summing the columns of a group restores it.
    """
    gaps = np.diff(rates) > rtol * max(float(rates[-1]), 1e-300)
    labels = np.concatenate([[0], np.cumsum(gaps)])
    counts = np.bincount(labels)
    merged = np.bincount(labels, weights=rates) / counts
    onehot = np.zeros((rates.size, counts.size))
    onehot[np.arange(rates.size), labels] = 1.0
    return merged, onehot


def _scan_roots(A, D, rates, grid, budget, depth=6, split=4, max_cells=200_000):
    """Bracket the roots of the exponential sums ``A`` on ``grid``.

    ``D`` holds, row by row, the sum whose square is integrated while the
    indicator driven by ``A`` is uncertain. A term ``A_k e^{-r_k t}`` strays
    from its chord on ``[a, a + w]`` by at most ``|A_k| e^{-r_k a} h(r_k w)``
    (:func:`_chord_gap`). A cell is settled when its endpoint values share a
    sign and exceed that gap (no root), or change sign while the derivative
    passes the same test (exactly one root). Unsettled cells are split up to
    ``depth`` times while ``(|D(a)| + M w)^2 w``, ``M = sum_k |D_k| r_k
    e^{-r_k a}``, exceeds ``budget * w``; what is left is reported with that
    bound, as are cells beyond ``max_cells`` at one level. Returns root brackets ``(row, lo, hi, v_lo, v_hi)`` and unsettled
    cells ``(row, a, b, bound)``.
    """
    absA, Ar = np.abs(A), A * rates
    absAr, absDr = absA * rates, np.abs(D) * rates
    E = np.exp(-np.outer(rates, grid))
    w0 = np.diff(grid)
    # widths at refinement level l are w0 / split**l; tabulate per column and level
    widths = w0[None, :] / float(split) ** np.arange(depth + 1)[:, None]
    H = _chord_gap(widths[:, :, None] * rates[None, None, :])
    step = np.exp(-widths[:, :, None] * rates[None, None, :])

    V = A @ E
    if grid[0] == 0:
        # equal entries of f give sums that vanish at t = 0 up to rounding;
        # an exact zero lets the cell settle as a root at the left end
        V[np.abs(V[:, 0]) <= ZERO_RTOL * absA.sum(axis=1), 0] = 0.0
    EH = E[:, :-1] * H[0].T
    G = absA @ EH
    absV, neg = np.abs(V), np.signbit(V)
    # same sign and both ends clear of the chord gap (which forces them nonzero)
    excluded = (neg[:, :-1] == neg[:, 1:]) & (np.minimum(absV[:, :-1], absV[:, 1:]) > G)
    Va, Vb = V[:, :-1], V[:, 1:]
    rows, cols = np.nonzero(~excluded)
    # only cells that may hold a root are flattened and examined further
    va, vb, gap = Va[rows, cols], Vb[rows, cols], G[rows, cols]
    ea, eb = E[:, cols].T, E[:, cols + 1].T
    a = grid[cols]

    brackets, unsettled = [], []
    for level in range(depth + 1):
        w = widths[level, cols]
        change = (va * vb < 0) | ((va == 0) != (vb == 0))
        excl = ~change & (va * vb > 0) & (np.minimum(np.abs(va), np.abs(vb)) > gap)
        single = np.zeros_like(change)
        ch = np.flatnonzero(change)
        if ch.size:
            rc, cc = rows[ch], cols[ch]
            dva = -np.einsum("ck,ck->c", Ar[rc], ea[ch])
            dvb = -np.einsum("ck,ck->c", Ar[rc], eb[ch])
            dgap = np.einsum("ck,ck->c", absAr[rc] * H[level, cc], ea[ch])
            single[ch] = (dva * dvb > 0) & (np.minimum(np.abs(dva), np.abs(dvb)) > dgap)
        settled = excl | single
        cost = np.zeros(settled.shape)
        op = np.flatnonzero(~settled)
        if op.size:
            ro = rows[op]
            reach = np.abs(np.einsum("ck,ck->c", D[ro], ea[op])) + np.einsum("ck,ck->c", absDr[ro], ea[op]) * w[op]
            cost[op] = reach * reach * w[op]
        split_ = ~settled & (cost > budget * w) if level < depth else np.zeros_like(settled)
        if split * np.count_nonzero(split_) > max_cells:
            # refine only the costliest cells; the rest are charged their cost
            idx = np.flatnonzero(split_)
            keep = idx[np.argsort(-cost[idx], kind="stable")[: max_cells // split]]
            split_ = np.zeros_like(split_)
            split_[keep] = True
        left = ~settled & ~split_
        take = single | (left & change)
        brackets.append((rows[take], a[take], a[take] + w[take], va[take], vb[take]))
        unsettled.append((rows[left], a[left], (a + w)[left], cost[left]))
        if not np.any(split_):
            break
        rows, cols, a, va, vb, ea = rows[split_], cols[split_], a[split_], va[split_], vb[split_], ea[split_]
        sub = step[level + 1, cols]
        # exponentials at the subcell edges, by repeated multiplication
        e = np.empty((rows.size, split + 1, rates.size))
        e[:, 0] = ea
        for k in range(1, split + 1):
            e[:, k] = e[:, k - 1] * sub
        vals = np.einsum("ck,cjk->cj", A[rows], e[:, 1:split])
        starts = np.concatenate([va[:, None], vals], axis=1)
        ends = np.concatenate([vals, vb[:, None]], axis=1)
        gap = np.einsum("ck,cjk->cj", absA[rows] * H[level + 1, cols], e[:, :split]).ravel()
        sub_w = widths[level + 1, cols]
        a = (a[:, None] + sub_w[:, None] * np.arange(split)[None, :]).ravel()
        rows, cols = np.repeat(rows, split), np.repeat(cols, split)
        va, vb = starts.ravel(), ends.ravel()
        ea = e[:, :split].reshape(-1, rates.size)
        eb = e[:, 1:].reshape(-1, rates.size)

    def cat(parts, k):
        return np.concatenate([p[k] for p in parts])

    return (
        tuple(cat(brackets, k).astype(int) if k == 0 else cat(brackets, k) for k in range(5)),
        tuple(cat(unsettled, k).astype(int) if k == 0 else cat(unsettled, k) for k in range(4)),
    )


def _piecewise(kind, space, dec, f, tol, evolve, grid_size=96, tie_rtol=1e-12):
    """Exact time integration between indicator switches, field by field.

    For a kernel edge ``(i, j)`` the indicator ``|g_i| >= |g_j|`` can only
    switch at roots of ``d = g_i - g_j`` or ``s = g_i + g_j``; between switches
    ``int (g_i - g_j)^2`` (times ``t`` for the Poisson kind) has a closed form.
    """
    if not tol > 0:
        raise InvalidParameter(f"tol must be positive, got {tol}")
    f = _check_field(space, f)
    flat = f.reshape(-1, space.n)
    rates = dec.eigenvalues if evolve == "heat" else np.sqrt(dec.eigenvalues)
    tail = heat_gradient_tail if evolve == "heat" else poisson_gradient_tail
    c_full = dec.coefficients(flat)
    c_cent = np.where(dec.zero_modes, 0.0, c_full)
    out = np.zeros(flat.shape)
    report = {"t_cut": 0.0, "tail_bound": 0.0, "evaluations": 0, "est_error": 0.0, "crossings": 0}
    if dec.lambda_max == 0 or not np.any(c_cent):
        return SquareFunctionResult(kind, out.reshape(f.shape), report)

    w = space.weights
    iu, ju = np.nonzero(np.triu(w > 0, k=1))
    n_pairs = iu.size
    w_pair = w[iu, ju]
    phi = dec.eigenvectors
    m_rates, onehot = _merge_rates(rates)
    # the Cauchy weights depend on rates only, so merged columns give the same form
    s = m_rates[:, None] + m_rates[None, :]
    cauchy = np.where(s > 0, 1.0 / np.where(s > 0, s, 1.0), 0.0)
    cauchy_sq = cauchy * cauchy
    t_fast = 1.0 / rates[-1]
    t_slow = 1.0 / rates[~dec.zero_modes][0]
    edges_per_point = max(1, int(np.bincount(np.concatenate([iu, ju]), minlength=space.n).max()))

    def antiderivative(U, t):
        v = U * np.exp(-np.outer(t, m_rates))
        F = ((v @ cauchy) * v).sum(axis=1)
        if evolve == "poisson":
            F = F * t + ((v @ cauchy_sq) * v).sum(axis=1)
        return F

    for b in range(flat.shape[0]):
        c, cc = c_full[b], c_cent[b]
        if not np.any(cc):
            continue
        t_cut, tail_bound = _choose_cut(lambda c_, T: 2.0 * tail(space, dec, c_, T), cc, t_slow, tol / 2, np.inf)
        grid = np.concatenate([[0.0], np.geomspace(1e-3 * t_fast, t_cut, grid_size)])
        U = cc * (phi[iu] - phi[ju])
        S = c * (phi[iu] + phi[ju])
        scale = np.abs(c).max()
        # sums that vanish identically (symmetric fields) never switch: a permanent tie
        Um, Sm = U @ onehot, S @ onehot
        live = np.concatenate([np.abs(Um).max(axis=1), np.abs(Sm).max(axis=1)]) > tie_rtol * scale
        s_dead = ~live[n_pairs:]
        A = np.concatenate([Um, Sm])[live]
        D = np.concatenate([Um, Um])[live]
        pair_of = np.concatenate([np.arange(n_pairs), np.arange(n_pairs)])[live]
        time_weight = 1.0 if evolve == "heat" else t_cut
        budget = tol / (8.0 * t_cut * edges_per_point * w_pair.max() * time_weight)
        (r_row, r_lo, r_hi, r_vlo, r_vhi), (u_row, u_a, u_b, u_bound) = _scan_roots(A, D, m_rates, grid, budget)
        tau, width = _find_roots(A[r_row], m_rates, r_lo, r_hi, r_vlo, r_vhi)
        r_pair = pair_of[r_row]

        pts_pair = np.concatenate([np.arange(n_pairs), np.arange(n_pairs), r_pair])
        pts_t = np.concatenate([np.zeros(n_pairs), np.full(n_pairs, t_cut), tau])
        order = np.lexsort((pts_t, pts_pair))
        pts_pair, pts_t = pts_pair[order], pts_t[order]
        F = antiderivative(Um[pts_pair], pts_t)
        seg = pts_pair[:-1] == pts_pair[1:]
        sp = pts_pair[:-1][seg]
        mid = 0.5 * (pts_t[:-1][seg] + pts_t[1:][seg])
        dv, sv = _sum_values(Um[sp], m_rates, mid), _sum_values(Sm[sp], m_rates, mid)
        prod, band = dv * sv, tie_rtol * (dv * dv + sv * sv)
        # on a permanent or rounding-level tie both endpoints count the edge;
        # a vanishing sum is a permanent tie however small the values get
        tie = s_dead[sp]
        on_i, on_j = (prod >= -band) | tie, (prod <= band) | tie
        piece = F[:-1][seg] - F[1:][seg]
        acc_i = np.bincount(sp, weights=on_i * piece, minlength=n_pairs)
        acc_j = np.bincount(sp, weights=on_j * piece, minlength=n_pairs)

        vals = np.bincount(iu, weights=w_pair * acc_i, minlength=space.n)
        vals += np.bincount(ju, weights=w_pair * acc_j, minlength=space.n)
        out[b] = vals

        # misplaced switches cost at most the integrand over the uncertain window
        d_tau = _sum_values(Um[r_pair], m_rates, tau)
        tw = tau if evolve == "poisson" else 1.0
        root_err = d_tau * d_tau * w_pair[r_pair] * width * tw
        u_pair = pair_of[u_row]
        cell_err = u_bound * w_pair[u_pair] * (u_b if evolve == "poisson" else 1.0)
        err_pt = np.bincount(np.concatenate([iu[r_pair], ju[r_pair], iu[u_pair], ju[u_pair]]),
                             weights=np.concatenate([root_err, root_err, cell_err, cell_err]),
                             minlength=space.n)
        report["t_cut"] = max(report["t_cut"], float(t_cut))
        report["tail_bound"] = max(report["tail_bound"], float(tail_bound))
        report["est_error"] = max(report["est_error"], float(err_pt.max()))
        report["evaluations"] += int(A.shape[0] * grid.size + 16 * tau.size)
        report["crossings"] += int(tau.size)
    return SquareFunctionResult(kind, out.reshape(f.shape), report)


def decay_profile(space: Space, decomp, f, p: float, t_grid) -> dict:
    """Scaled gradient decay ratios along a time grid.

    Returns ``t``, ``gamma_ratio = t^{1/2} ||Gamma_p^{1/2}(P_t f)||_p / ||f||_p``
    and ``tilde_ratio = t^{1/2} || |tilde-nabla P_t f| ||_p / ||f||_p``.
    """
    _check_p(p)
    f = _check_field(space, f)
    ts = np.asarray(t_grid, dtype=float)
    if ts.ndim != 1 or np.any(ts <= 0) or not np.all(np.isfinite(ts)):
        raise InvalidParameter("t_grid must be positive and finite")
    norm = lp_norm(space, f, p)
    if np.any(norm == 0):
        raise InvalidParameter("decay ratio is undefined for the zero field")
    dec = _decomp(space, decomp)
    c = dec.coefficients(f)
    g = (c[..., None, :] * np.exp(-np.outer(ts, dec.eigenvalues))) @ dec.eigenvectors.T
    gp = np.clip(gamma_p_definitional(space, dec, g, p), 0.0, None)
    tn = tilde_nabla(space, g, squared=False)
    root_t = np.sqrt(ts)
    return {
        "t": ts,
        "gamma_ratio": root_t * lp_norm(space, np.sqrt(gp), p) / norm[..., None],
        "tilde_ratio": root_t * lp_norm(space, tn, p) / norm[..., None],
    }
