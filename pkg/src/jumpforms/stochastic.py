"""Jump-process simulation and Monte Carlo checks of the bracket identities.

The process jumps from ``i`` to ``j`` at rate ``J(i, j) m_j``. Uniformization
runs one Poisson clock of rate ``Q = max_i q_i`` and moves through the mark
map ``k(i, z)``, ``z`` uniform on ``[0, Q)``; the direct sampler draws
holding times of rate ``q_i`` instead. Along each path we carry the
martingale ``H_t = P_{T-t} f(X_t) - P_T f(X_0)``, its jump bracket
``sum (Delta H)^2`` and its compensator ``int_0^T 2 Gamma(P_{T-u} f)(X_u) du``,
the latter integrated exactly between events.

Random streams are tied to fixed-size chunks of paths, so results depend
only on ``(seed, n_paths, mode)`` and never on the number of threads.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import InvalidParameter
from .semigroup import SpectralDecomposition, _check_field, _decomp, heat, transition_matrix
from .space import Space
from .squarefn import g_function

CHUNK = 4096
MODES = ("uniformized", "direct")
SE_BAND = 4.0
ROUNDING = 1e-12


@dataclass(frozen=True, eq=False)
class JumpRepresentation:
    """Mark map ``k(i, z)`` on ``U = [0, Q)`` with Lebesgue marks.

    ``boundaries[i, j]`` is the right end of the segment sending ``i`` to
    ``j``; segments follow the target order, have length ``J(i, j) m_j``
    and end at ``q_i``. Marks in ``[q_i, Q)`` are fictitious self-jumps.
    """

    Q: float
    rates: np.ndarray
    boundaries: np.ndarray

    @property
    def n(self) -> int:
        return self.rates.shape[0]

    def segment_lengths(self, i: int) -> np.ndarray:
        return np.diff(self.boundaries[i], prepend=0.0)

    def target(self, states, z) -> np.ndarray:
        """``k(state, z)``, vectorized over paired ``states`` and marks ``z``."""
        states = np.asarray(states)
        z = np.asarray(z, dtype=float)
        j = (self.boundaries[states] <= z[..., None]).sum(axis=-1)
        return np.where(j >= self.n, states, j)

    def preimage_measure(self, i: int, j: int) -> float:
        """Lebesgue measure of ``{z : k(i, z) = j}``."""
        length = self.segment_lengths(i)
        if j == i:
            return float(self.Q - self.rates[i] + length[i])
        return float(length[j])


def build_representation(space: Space) -> JumpRepresentation:
    w = space.weights
    q = space.rates
    Q = float(q.max())
    if not Q > 0:
        raise InvalidParameter("the kernel vanishes; the process never jumps")
    b = np.cumsum(w, axis=1)
    # the last boundary is q_i by construction; pin it against rounding
    b[:, -1] = q
    b.setflags(write=False)
    return JumpRepresentation(Q=Q, rates=q.copy(), boundaries=b)


@dataclass
class PathRecord:
    x0: int
    T: float
    events: List[Tuple[float, int, int]]
    terminal: int
    H_values: np.ndarray
    qv_jump: float
    qv_compensator: float


@dataclass
class _Field:
    """Spectral data of ``u(tau, x) = P_tau f(x)`` and the compensator antiderivative."""

    c: np.ndarray
    centered: np.ndarray
    lam: np.ndarray
    phi: np.ndarray
    N: np.ndarray

    def u(self, tau, states) -> np.ndarray:
        e = np.exp(-np.multiply.outer(tau, self.lam))
        return (self.c * e * self.phi[states]).sum(axis=-1)

    def jump(self, tau, pre, post) -> np.ndarray:
        # only nonconstant modes enter a difference; equal states give exact zeros
        e = np.exp(-np.multiply.outer(tau, self.lam))
        return (self.centered * e * (self.phi[post] - self.phi[pre])).sum(axis=-1)

    def antiderivative(self, tau, states) -> np.ndarray:
        """``F_x(tau)`` with ``int_{tau_0}^{tau_1} 2 Gamma(P_s f)(x) ds = F_x(tau_0) - F_x(tau_1)``."""
        e = np.exp(-np.multiply.outer(tau, self.lam))
        return np.einsum("pk,pkl,pl->p", e, self.N[states], e)


def _prepare(space: Space, dec: SpectralDecomposition, f) -> _Field:
    f = _check_field(space, f)
    if f.ndim != 1:
        raise InvalidParameter("simulation takes a single field")
    c = dec.coefficients(f)
    centered = np.where(dec.zero_modes, 0.0, c)
    if np.all(f == f[0]):
        centered = np.zeros_like(c)
    phi, lam, w = dec.eigenvectors, dec.eigenvalues, space.weights
    diff = phi[:, None, :] - phi[None, :, :]
    B = np.einsum("xj,xjk,xjl->xkl", w, diff, diff)
    s = lam[:, None] + lam[None, :]
    inv = np.where(s > 0, 1.0 / np.where(s > 0, s, 1.0), 0.0)
    N = B * (centered[:, None] * centered[None, :] * inv)[None]
    return _Field(c=c, centered=centered, lam=lam, phi=phi, N=N)


def _check_run(space: Space, T: float, mode: str, n_paths: int):
    if not T > 0 or not np.isfinite(T):
        raise InvalidParameter(f"horizon must be positive and finite, got {T}")
    if mode not in MODES:
        raise InvalidParameter(f"mode must be one of {MODES}, got {mode!r}")
    if int(n_paths) != n_paths or n_paths < 1:
        raise InvalidParameter(f"n_paths must be a positive integer, got {n_paths}")


def _check_state(space: Space, x) -> int:
    if int(x) != x or not 0 <= x < space.n:
        raise InvalidParameter(f"state must be an index in [0, {space.n}), got {x}")
    return int(x)


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(chunk,))))


def _run_chunk(rep, fld: _Field, space: Space, x0, T, mode, rng, s_grid, record):
    """Simulate one chunk of paths; ``x0`` is an array of start states."""
    P = x0.size
    state = x0.copy()
    time = np.zeros(P)
    qv_jump = np.zeros(P)
    qv_comp = np.zeros(P)
    n_events = np.zeros(P, dtype=np.int64)
    at_s = np.full((len(s_grid), P), -1, dtype=np.int64)
    events: List[Tuple[float, int, int]] = []
    h_values: List[float] = []
    base = fld.u(np.full(P, T), x0)
    rates = rep.rates
    act = np.arange(P)
    while act.size:
        st, t0 = state[act], time[act]
        hold = rng.standard_exponential(act.size)
        z = rng.random(act.size)
        if mode == "uniformized":
            t1 = t0 + hold / rep.Q
            post = rep.target(st, z * rep.Q)
        else:
            q = rates[st]
            with np.errstate(divide="ignore"):
                t1 = t0 + np.where(q > 0, hold / np.where(q > 0, q, 1.0), np.inf)
            post = rep.target(st, z * q)
        end = np.minimum(t1, T)
        for g, s in enumerate(s_grid):
            hit = (t0 <= s) & (s < end)
            at_s[g, act[hit]] = st[hit]
        qv_comp[act] += fld.antiderivative(T - end, st) - fld.antiderivative(T - t0, st)
        jumped = t1 < T
        ja = act[jumped]
        dH = fld.jump(T - t1[jumped], st[jumped], post[jumped])
        qv_jump[ja] += dH * dH
        n_events[ja] += 1
        if record and ja.size:
            events.append((float(t1[jumped][0]), int(st[jumped][0]), int(post[jumped][0])))
            h_values.append(float(fld.u(np.array([T - t1[jumped][0]]), post[jumped][:1])[0] - base[0]))
        state[ja] = post[jumped]
        time[ja] = t1[jumped]
        act = ja
    H_T = fld.u(np.zeros(P), state) - base
    out = {
        "x0": x0,
        "terminal": state,
        "H_T": H_T,
        "qv_jump": qv_jump,
        "qv_compensator": qv_comp,
        "n_events": n_events,
        "state_at_s": at_s,
    }
    if record:
        out["events"] = events
        out["H_values"] = np.array(h_values)
    return out


def simulate_paths(
    space: Space,
    decomp,
    f,
    x0,
    T: float,
    n_paths: int,
    seed: int,
    mode: str = "uniformized",
    s_grid: Sequence[float] = (),
    threads: int = 1,
    rep: Optional[JumpRepresentation] = None,
) -> dict:
    """Simulate ``n_paths`` independent paths and return per-path arrays.

    ``x0`` is a state index or the string ``"uniform"`` for starts drawn from
    ``mu / mu(M)``. Chunk ``k`` of :data:`CHUNK` paths draws from the stream
    ``SeedSequence(seed, spawn_key=(k,))``; chunks are concatenated in order.
    """
    _check_run(space, T, mode, n_paths)
    dec = _decomp(space, decomp)
    rep = build_representation(space) if rep is None else rep
    fld = _prepare(space, dec, f)
    s_grid = [float(s) for s in s_grid]
    if any(not 0 < s < T for s in s_grid):
        raise InvalidParameter("s_grid must lie inside (0, T)")
    uniform = isinstance(x0, str)
    if uniform and x0 != "uniform":
        raise InvalidParameter(f"unknown start {x0!r}")
    start = None if uniform else _check_state(space, x0)
    probs = space.measure / space.total_mass

    def job(k):
        rng = _chunk_rng(seed, k)
        size = min(CHUNK, n_paths - k * CHUNK)
        if uniform:
            starts = rng.choice(space.n, size=size, p=probs)
        else:
            starts = np.full(size, start, dtype=np.int64)
        return _run_chunk(rep, fld, space, starts, T, mode, rng, s_grid, record=False)

    n_chunks = -(-int(n_paths) // CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, range(n_chunks)))
    else:
        parts = [job(k) for k in range(n_chunks)]
    keys = parts[0].keys()
    out = {k: np.concatenate([p[k] for p in parts], axis=-1) for k in keys}
    out["base"] = float(fld.u(np.array([T]), np.array([start]))[0]) if not uniform else None
    out["s_grid"] = s_grid
    return out


def simulate(rep: JumpRepresentation, space: Space, decomp, f, x0, T: float, seed: int, mode: str = "uniformized") -> PathRecord:
    """One trajectory with its full event list, fictitious self-jumps included."""
    _check_run(space, T, mode, 1)
    x0 = _check_state(space, x0)
    dec = _decomp(space, decomp)
    fld = _prepare(space, dec, f)
    out = _run_chunk(rep, fld, space, np.array([x0]), T, mode, _chunk_rng(seed, 0), [], record=True)
    return PathRecord(
        x0=x0,
        T=float(T),
        events=out["events"],
        terminal=int(out["terminal"][0]),
        H_values=out["H_values"],
        qv_jump=float(out["qv_jump"][0]),
        qv_compensator=float(out["qv_compensator"][0]),
    )


def _mean_se(x) -> Tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()) if x.size else float("nan"), float("inf")
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def _within(estimate, target, se) -> bool:
    # rounding slack covers deterministic quantities whose spread is ~0
    return bool(abs(estimate - target) <= SE_BAND * se + ROUNDING * (1.0 + abs(target)))


def _exact_bracket(space, dec, f, x0, T) -> float:
    f = np.asarray(f, dtype=float)
    return float(heat(space, dec, f * f, T)[x0] - heat(space, dec, f, T)[x0] ** 2)


def _meta(n_paths, seed, mode, **extra) -> dict:
    return {"n_paths": int(n_paths), "seed": int(seed), "mode": mode, **extra}


def estimate_report(estimate, std_error, exact_target, n_paths, seed, mode, **extra) -> dict:
    return {
        "estimate": float(estimate),
        "std_error": float(std_error),
        "exact_target": None if exact_target is None else float(exact_target),
        "n_paths": int(n_paths),
        "seed": int(seed),
        "mode": mode,
        **extra,
    }


def expected_square(space, decomp, f, x0, T, n_paths, seed, mode="uniformized", threads=1) -> dict:
    """``E^x H_T^2`` against its exact value ``P_T f^2(x) - (P_T f)^2(x)``."""
    dec = _decomp(space, decomp)
    x0 = _check_state(space, x0)
    paths = simulate_paths(space, dec, f, x0, T, n_paths, seed, mode, threads=threads)
    est, se = _mean_se(paths["H_T"] ** 2)
    target = _exact_bracket(space, dec, f, x0, T)
    return estimate_report(est, se, target, n_paths, seed, mode, passed=_within(est, target, se))


def martingale_check(space, decomp, f, x0, T, s_grid, n_paths, seed, mode="uniformized", min_hits=200, threads=1) -> dict:
    """Conditional means of ``H_T - H_s`` given ``X_s`` vanish bin by bin."""
    dec = _decomp(space, decomp)
    x0 = _check_state(space, x0)
    paths = simulate_paths(space, dec, f, x0, T, n_paths, seed, mode, s_grid=s_grid, threads=threads)
    fld = _prepare(space, dec, f)
    H_T = paths["H_T"]
    overall, overall_se = _mean_se(H_T)
    bins = []
    ok = _within(overall, 0.0, overall_se)
    for g, s in enumerate(paths["s_grid"]):
        xs = paths["state_at_s"][g]
        H_s = fld.u(np.full(xs.size, T - s), xs) - paths["base"]
        for j in range(space.n):
            sel = xs == j
            hits = int(sel.sum())
            mean, se = _mean_se((H_T - H_s)[sel]) if hits else (float("nan"), float("inf"))
            # the Markov property pins E[H_T | X_s = j] to the spectral value of H_s there
            predicted = float(fld.u(np.array([T - s]), np.array([j]))[0] - paths["base"])
            mean_T, se_T = _mean_se(H_T[sel]) if hits else (float("nan"), float("inf"))
            powered = hits >= min_hits
            passed = (not powered) or (_within(mean, 0.0, se) and _within(mean_T, predicted, se_T))
            ok &= passed
            bins.append(
                {
                    "s": s,
                    "state": j,
                    "hits": hits,
                    "underpowered": not powered,
                    "mean_increment": mean,
                    "std_error": se,
                    "mean_H_T": mean_T,
                    "predicted_H_T": predicted,
                    "passed": bool(passed),
                }
            )
    rep = estimate_report(overall, overall_se, 0.0, n_paths, seed, mode, bins=bins, passed=bool(ok))
    return rep


def bracket_check(space, decomp, f, x0, T, n_paths, seed, mode="uniformized", threads=1) -> dict:
    """Both brackets in mean against ``E^x <H>_T = P_T f^2(x) - (P_T f)^2(x)``."""
    if n_paths < 10_000:
        raise InvalidParameter("bracket_check needs at least 10^4 paths")
    dec = _decomp(space, decomp)
    x0 = _check_state(space, x0)
    paths = simulate_paths(space, dec, f, x0, T, n_paths, seed, mode, threads=threads)
    jump, comp, H2 = paths["qv_jump"], paths["qv_compensator"], paths["H_T"] ** 2
    target = _exact_bracket(space, dec, f, x0, T)
    mj, sej = _mean_se(jump)
    mc, sec = _mean_se(comp)
    mh, seh = _mean_se(H2)
    md, sed = _mean_se(jump - comp)
    comp_ok = _within(mc, target, sec)
    diff_ok = _within(md, 0.0, sed)
    conditional = []
    for x in range(space.n):
        sel = paths["terminal"] == x
        m, se = _mean_se((jump - comp)[sel]) if sel.any() else (float("nan"), float("inf"))
        conditional.append({"terminal": x, "hits": int(sel.sum()), "mean_difference": m, "std_error": se})
    return estimate_report(
        mc,
        sec,
        target,
        n_paths,
        seed,
        mode,
        qv_jump={"mean": mj, "std_error": sej},
        qv_compensator={"mean": mc, "std_error": sec},
        H_T_squared={"mean": mh, "std_error": seh},
        difference={"mean": md, "std_error": sed},
        conditional_difference=conditional,
        compensator_passed=bool(comp_ok),
        difference_passed=bool(diff_ok),
        passed=bool(comp_ok and diff_ok),
    )


def conditional_g_check(
    space, decomp, f, T, n_paths, seed, tol=1e-8, mode="uniformized", min_hits=500, threads=1
) -> dict:
    """Terminal-bin estimates of ``(G_T f)^2`` from paths started at ``mu / mu(M)``.

    In bin ``x`` the estimator is ``mu(M) mean(qv_compensator 1{X_T = x}) / m_x``;
    the jump bracket is reported alongside without assertion.
    """
    if n_paths < 100_000:
        raise InvalidParameter("conditional_g_check needs at least 10^5 paths")
    dec = _decomp(space, decomp)
    paths = simulate_paths(space, dec, f, "uniform", T, n_paths, seed, mode, threads=threads)
    exact = g_function(space, dec, f, T=T, tol=tol)
    target = exact.squared
    scale = space.total_mass / space.measure
    bins, ok = [], True
    for x in range(space.n):
        sel = paths["terminal"] == x
        hits = int(sel.sum())
        m, se = _mean_se(scale[x] * paths["qv_compensator"] * sel)
        mj, sej = _mean_se(scale[x] * paths["qv_jump"] * sel)
        powered = hits >= min_hits
        passed = (not powered) or _within(m, float(target[x]), se)
        ok &= passed
        bins.append(
            {
                "terminal": x,
                "hits": hits,
                "underpowered": not powered,
                "estimate": m,
                "std_error": se,
                "jump_estimate": mj,
                "jump_std_error": sej,
                "exact_target": float(target[x]),
                "passed": bool(passed),
            }
        )
    worst = max(bins, key=lambda b: abs(b["estimate"] - b["exact_target"]) / max(b["std_error"], 1e-300))
    return estimate_report(
        worst["estimate"], worst["std_error"], worst["exact_target"], n_paths, seed, mode,
        T=float(T), bins=bins, passed=bool(ok),
    )


def terminal_law_check(space, decomp, x0, T, n_paths, seed, threads=1) -> dict:
    """Terminal frequencies of both samplers against ``p_T(x0, .) m``."""
    dec = _decomp(space, decomp)
    x0 = _check_state(space, x0)
    exact = transition_matrix(space, dec, T)[x0]
    zero = np.zeros(space.n)
    out, ok = {}, True
    for mode in MODES:
        term = simulate_paths(space, dec, zero, x0, T, n_paths, seed, mode, threads=threads)["terminal"]
        freq = np.bincount(term, minlength=space.n) / term.size
        se = np.sqrt(np.maximum(exact * (1 - exact), 1e-300) / term.size)
        passed = np.abs(freq - exact) <= SE_BAND * se
        ok &= bool(passed.all())
        out[mode] = {"frequency": freq.tolist(), "std_error": se.tolist(), "passed": passed.tolist()}
    return {"exact": exact.tolist(), "n_paths": int(n_paths), "seed": int(seed), "modes": out, "passed": bool(ok)}


def bdg_ratio(space, decomp, f, p, T, n_paths, seed, x0=0, mode="uniformized", threads=1) -> dict:
    """Empirical ratio ``E [H]_T^{p/2} / E |H_T|^p`` and the moment chain.

    Reports ``E |H_T|^p <= 2^p P_T |f|^p(x0)``; the final bound is
    ``E [H]_T^{p/2} <= C 2^p P_T |f|^p(x0)`` with ``C`` the empirical ratio.
    At ``p = 2`` the target ratio is 1 (bracket isometry).
    """
    if not p >= 2:
        raise InvalidParameter(f"p must be at least 2, got {p}")
    dec = _decomp(space, decomp)
    x0 = _check_state(space, x0)
    paths = simulate_paths(space, dec, f, x0, T, n_paths, seed, mode, threads=threads)
    A = paths["qv_jump"] ** (p / 2)
    Ac = paths["qv_compensator"] ** (p / 2)
    B = np.abs(paths["H_T"]) ** p
    mA, seA = _mean_se(A)
    mAc, seAc = _mean_se(Ac)
    mB, seB = _mean_se(B)
    ratio = mA / mB if mB > 0 else float("nan")
    if mB > 0 and A.size > 1:
        cov = np.cov(A, B)
        var = (cov[0, 0] / mB**2 - 2 * mA * cov[0, 1] / mB**3 + mA**2 * cov[1, 1] / mB**4) / A.size
        se_ratio = float(np.sqrt(max(var, 0.0)))
    else:
        se_ratio = float("inf")
    moment_bound = float(2.0**p * heat(space, dec, np.abs(np.asarray(f, dtype=float)) ** p, T)[x0])
    chain_ok = mB <= moment_bound + SE_BAND * seB
    final_ok = (not np.isfinite(ratio)) or mA <= ratio * moment_bound + SE_BAND * seA
    exact_ratio = 1.0 if p == 2 else None
    passed = chain_ok and final_ok
    if p == 2 and np.isfinite(ratio):
        passed = passed and _within(ratio, 1.0, se_ratio)
    if not np.isfinite(ratio):
        ratio, se_ratio = 0.0, 0.0
    return estimate_report(
        ratio,
        se_ratio,
        exact_ratio,
        n_paths,
        seed,
        mode,
        p=float(p),
        T=float(T),
        bracket_moment={"mean": mA, "std_error": seA},
        compensator_moment={"mean": mAc, "std_error": seAc},
        terminal_moment={"mean": mB, "std_error": seB},
        moment_bound=moment_bound,
        chain_passed=bool(chain_ok),
        passed=bool(passed),
    )
