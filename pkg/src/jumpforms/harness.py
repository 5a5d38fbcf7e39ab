"""Random field families, empirical operator constants and the inequality suite.

Every quantity here is a deterministic function of the configuration and the
master seed: field ``index`` of a run is drawn from the stream
``SeedSequence(seed, spawn_key=(index,))`` and all reductions run in index
order.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .exceptions import InvalidParameter
from .gradients import (
    carre_du_champ,
    gamma2,
    gamma_p_definitional,
    nabla,
    sign_split_slack,
    tilde_nabla,
    tilde_nabla_star,
)
from .semigroup import decompose, maximal_function
from .space import Space, build_space, lp_norm
from .squarefn import decay_profile, g_function, g_tilde, h_nabla, h_p, h_tilde

__all__ = [
    "FAMILIES",
    "OPERATORS",
    "TrialConfig",
    "ConstantReport",
    "lp_norm",
    "sample_field",
    "sample_fields",
    "estimate_constants",
    "estimate_constant",
    "stability_sweep",
    "run_inequality_suite",
    "resolve_seed",
    "write_report",
    "dumps",
]

SCHEMA_VERSION = 1
SEED_ENV = "JUMPFORMS_SEED"
FAMILIES = ("gaussian", "spikes", "low_mode", "nonneg_exp", "signed_mix")
OPERATORS = ("H_nabla", "H_tilde", "H_p", "G_tilde", "G", "maximal", "decay")
DEFAULT_P_GRID = (1.1, 1.25, 1.5, 1.75, 2.0)
MAX_REFINE_STEPS = 500
MAX_RESAMPLES = 100
DECAY_GRID = np.geomspace(1e-3, 50.0, 40)


@dataclass
class TrialConfig:
    space_spec: dict
    field_family: Union[str, List[str]] = "gaussian"
    p_values: List[float] = field(default_factory=lambda: list(DEFAULT_P_GRID))
    n_trials: int = 100
    seed: int = 0
    tolerances: Dict[str, float] = field(default_factory=lambda: {"quadrature": 1e-8, "slack": 1e-9})

    def __post_init__(self):
        if not isinstance(self.space_spec, dict) or "builder" not in self.space_spec:
            raise InvalidParameter("space_spec needs a 'builder' entry")
        for fam in self.families:
            if fam not in FAMILIES:
                raise InvalidParameter(f"unknown field family {fam!r}")
        self.p_values = [float(p) for p in self.p_values]
        if not self.p_values or any(not p > 1 for p in self.p_values):
            raise InvalidParameter("p_values must be a non-empty list of reals > 1")
        if int(self.n_trials) != self.n_trials or self.n_trials < 1:
            raise InvalidParameter(f"n_trials must be a positive integer, got {self.n_trials}")
        self.n_trials = int(self.n_trials)
        if int(self.seed) != self.seed:
            raise InvalidParameter(f"seed must be an integer, got {self.seed}")
        self.seed = int(self.seed)
        tol = {"quadrature": 1e-8, "slack": 1e-9}
        tol.update(self.tolerances or {})
        if any(not v > 0 for v in tol.values()):
            raise InvalidParameter("tolerances must be positive")
        self.tolerances = {k: float(v) for k, v in tol.items()}

    @property
    def families(self) -> List[str]:
        fam = self.field_family
        return [fam] if isinstance(fam, str) else list(fam)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrialConfig":
        known = {"space_spec", "field_family", "p_values", "n_trials", "seed", "tolerances"}
        if "space_spec" not in doc:
            raise InvalidParameter("config lacks 'space_spec'")
        return cls(**{k: doc[k] for k in known if k in doc})

    def to_dict(self) -> dict:
        return asdict(self)

    def build_space(self) -> Space:
        return build_space(self.space_spec)


@dataclass
class ConstantReport:
    """Largest observed ``||Op f||_p / ||f||_p``; a lower bound on the operator norm."""

    operator: str
    p: float
    empirical_constant: float
    per_family: Dict[str, float]
    n_trials: int
    argmax: dict
    in_theorem_range: bool
    refinement_trace: List[dict] = field(default_factory=list)
    label: str = "max observed ratio"

    def to_dict(self) -> dict:
        return asdict(self)


def _field_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def sample_field(space: Space, family: str, seed: int, index: int) -> np.ndarray:
    """Field number ``index`` of ``family``; a pure function of ``(seed, index)``."""
    rng = _field_rng(seed, index)
    n = space.n
    if family == "gaussian":
        return rng.standard_normal(n)
    if family == "spikes":
        k = int(rng.integers(1, max(1, n // 4) + 1))
        f = np.zeros(n)
        f[rng.choice(n, size=k, replace=False)] = rng.choice([-1.0, 1.0], size=k)
        return f
    if family == "low_mode":
        dec = decompose(space)
        modes = np.flatnonzero(~dec.zero_modes)[:3]
        return rng.standard_normal(modes.size) @ dec.eigenvectors[:, modes].T
    if family == "nonneg_exp":
        return np.exp(rng.standard_normal(n))
    if family == "signed_mix":
        g = rng.standard_normal(n)
        return g - (g @ space.measure) / space.total_mass
    raise InvalidParameter(f"unknown field family {family!r}")


def sample_fields(space: Space, family: str, seed: int, n_trials: int, p: float = 2.0) -> np.ndarray:
    """``n_trials`` fields of ``family``; degenerate draws are replaced by later indices.

    Field ``t`` is index ``t`` unless that draw has zero norm, in which case
    indices past ``n_trials`` are used in order.
    """
    out = np.empty((n_trials, space.n))
    spare = n_trials
    for t in range(n_trials):
        f = sample_field(space, family, seed, t)
        tries = 0
        while not lp_norm(space, f, p) > 0:
            if tries >= MAX_RESAMPLES:
                raise InvalidParameter(f"family {family!r} keeps producing zero fields")
            f = sample_field(space, family, seed, spare)
            spare += 1
            tries += 1
        out[t] = f
    return out


def _family_seed(seed: int, family: str) -> int:
    # distinct, stable seeds per family so families never share streams
    return int(seed) * len(FAMILIES) + FAMILIES.index(family)


def in_theorem_range(operator: str, p: float) -> bool:
    if operator in ("H_tilde", "H_p", "G_tilde", "decay"):
        return 1 < p <= 2
    if operator in ("H_nabla", "G"):
        return p >= 2
    return p > 1


def _operator_values(space: Space, operator: str, fields: np.ndarray, p: float, tol: float) -> np.ndarray:
    """Pointwise values of the operator (not squared), one row per field."""
    dec = decompose(space)
    if operator == "H_nabla":
        return h_nabla(space, dec, fields).values
    if operator == "H_tilde":
        return h_tilde(space, dec, fields, tol=tol).values
    if operator == "G_tilde":
        return g_tilde(space, dec, fields, tol=tol).values
    if operator == "G":
        return g_function(space, dec, fields).values
    if operator == "H_p":
        if not 1 < p <= 2:
            raise InvalidParameter("H_p is defined for p in (1, 2]")
        return h_p(space, dec, fields, p, tol=tol).values
    if operator == "maximal":
        return maximal_function(space, dec, fields)
    raise InvalidParameter(f"unknown operator {operator!r}")


def _ratios(space: Space, operator: str, fields: np.ndarray, p_values: Sequence[float], tol: float) -> np.ndarray:
    """Ratios ``||Op f||_p / ||f||_p``, shape ``(len(p_values), n_fields)``."""
    norms = np.array([lp_norm(space, fields, p) for p in p_values])
    if operator == "decay":
        dec = decompose(space)
        out = np.empty((len(p_values), fields.shape[0]))
        for a, p in enumerate(p_values):
            if not 1 < p <= 2:
                raise InvalidParameter("decay ratios are defined for p in (1, 2]")
            prof = decay_profile(space, dec, fields, p, DECAY_GRID)
            out[a] = prof["gamma_ratio"].max(axis=-1)
        return out
    # operators independent of p are evaluated once and normed for every p
    if operator == "H_p":
        return np.array([lp_norm(space, _operator_values(space, operator, fields, p, tol), p) for p in p_values]) / norms
    vals = _operator_values(space, operator, fields, 2.0, tol)
    return np.array([lp_norm(space, vals, p) for p in p_values]) / norms


def _hill_climb(space, operator, f, p, tol, steps, rng) -> tuple:
    best = f.copy()
    best_ratio = float(_ratios(space, operator, best[None], [p], tol)[0, 0])
    scale = float(np.abs(f).max()) or 1.0
    trace = [{"step": 0, "ratio": best_ratio}]
    for step in range(1, steps + 1):
        cand = best.copy()
        i = int(rng.integers(space.n))
        cand[i] += 0.25 * scale * rng.standard_normal()
        if not lp_norm(space, cand, p) > 0:
            continue
        r = float(_ratios(space, operator, cand[None], [p], tol)[0, 0])
        if r > best_ratio:
            best, best_ratio = cand, r
            trace.append({"step": step, "ratio": r})
    return best_ratio, trace


def estimate_constants(config: TrialConfig, operator: str, refine_steps: int = 0) -> List[ConstantReport]:
    """One report per ``p`` in ``config.p_values``; random search plus optional hill climbing."""
    if operator not in OPERATORS:
        raise InvalidParameter(f"unknown operator {operator!r}")
    if not 0 <= refine_steps <= MAX_REFINE_STEPS:
        raise InvalidParameter(f"refine_steps must lie in [0, {MAX_REFINE_STEPS}]")
    space = config.build_space()
    tol = config.tolerances["quadrature"]
    ps = config.p_values
    best = {p: (-np.inf, None) for p in ps}
    per_family: Dict[float, Dict[str, float]] = {p: {} for p in ps}
    fields_by_family = {}
    for fam in config.families:
        fields = sample_fields(space, fam, _family_seed(config.seed, fam), config.n_trials)
        fields_by_family[fam] = fields
        ratios = _ratios(space, operator, fields, ps, tol)
        for a, p in enumerate(ps):
            k = int(np.argmax(ratios[a]))
            per_family[p][fam] = float(ratios[a, k])
            if ratios[a, k] > best[p][0]:
                best[p] = (float(ratios[a, k]), {"family": fam, "trial": k})
    reports = []
    for p in ps:
        value, arg = best[p]
        trace: List[dict] = []
        if refine_steps:
            rng = _field_rng(config.seed, 2**31 + int(round(1000 * p)))
            start = fields_by_family[arg["family"]][arg["trial"]]
            refined, trace = _hill_climb(space, operator, start, p, tol, refine_steps, rng)
            value = max(value, refined)
        reports.append(
            ConstantReport(
                operator=operator,
                p=p,
                empirical_constant=float(value),
                per_family=per_family[p],
                n_trials=config.n_trials,
                argmax=arg,
                in_theorem_range=in_theorem_range(operator, p),
                refinement_trace=trace,
            )
        )
    return reports


def estimate_constant(config: TrialConfig, operator: str, p: Optional[float] = None, refine_steps: int = 0) -> ConstantReport:
    if p is not None:
        config = TrialConfig(**{**config.to_dict(), "p_values": [p]})
    return estimate_constants(config, operator, refine_steps)[0]


def stability_sweep(config: TrialConfig, operator: str, n_values: Sequence[int], max_spread: float = 0.25) -> dict:
    """Empirical constants across space sizes ``n`` with their relative spread."""
    per_n = {}
    for n in n_values:
        spec = {**config.space_spec, "params": {**config.space_spec.get("params", {}), "n": int(n)}}
        cfg = TrialConfig(**{**config.to_dict(), "space_spec": spec})
        per_n[int(n)] = {r.p: r.empirical_constant for r in estimate_constants(cfg, operator)}
    rows, ok = [], True
    for p in config.p_values:
        vals = np.array([per_n[n][p] for n in per_n])
        finite = bool(np.all(np.isfinite(vals)))
        spread = float(vals.max() / vals.min() - 1.0) if finite and vals.min() > 0 else float("inf")
        stable = finite and spread <= max_spread
        ok &= stable
        rows.append({"operator": operator, "p": p, "by_n": {str(n): per_n[n][p] for n in per_n}, "spread": spread, "stable": stable})
    return {"operator": operator, "rows": rows, "max_spread": max_spread, "passed": bool(ok)}


class _Checks:
    """Accumulates entrywise slacks for named inequalities."""

    def __init__(self, max_failures: int = 100):
        self.stats: Dict[str, dict] = {}
        self.failures: List[dict] = []
        self.max_failures = max_failures

    def add(self, name: str, slack, threshold, family: str, seed: int, p: Optional[float] = None):
        slack = np.atleast_2d(np.asarray(slack, dtype=float))
        threshold = np.broadcast_to(np.asarray(threshold, dtype=float), slack.shape)
        st = self.stats.setdefault((name, family), {"checked": 0, "violations": 0, "worst_slack": np.inf, "worst_margin": np.inf})
        st["checked"] += slack.size
        bad = slack < threshold
        st["violations"] += int(bad.sum())
        st["worst_slack"] = min(st["worst_slack"], float(slack.min()))
        st["worst_margin"] = min(st["worst_margin"], float((slack - threshold).min()))
        for t, i in zip(*np.nonzero(bad)):
            if len(self.failures) >= self.max_failures:
                break
            self.failures.append(
                {
                    "inequality": name,
                    "family": family,
                    "field_seed": seed,
                    "trial": int(t),
                    "point": int(i),
                    "p": p,
                    "slack": float(slack[t, i]),
                    "threshold": float(threshold[t, i]),
                }
            )


def run_inequality_suite(config: TrialConfig, square_functions: bool = True, hp_trials: int = 0) -> dict:
    """All entrywise inequalities over the configured families and p-grid.

    Analytic slacks must stay above ``-tolerances["slack"]``; slacks of
    quadrature-based square functions above minus their combined error
    bounds. ``hp_trials`` fields per family also check
    ``(p(p-1)/2) H_tilde^2 <= H_p^2`` (adaptive, hence opt-in).
    """
    space = config.build_space()
    dec = decompose(space)
    eps = config.tolerances["slack"]
    tol = config.tolerances["quadrature"]
    ps = [p for p in config.p_values if 1 < p <= 2]
    checks = _Checks()
    for fam in config.families:
        seed = _family_seed(config.seed, fam)
        f = sample_fields(space, fam, seed, config.n_trials)
        grad2 = nabla(space, f, squared=True)
        tn2 = tilde_nabla(space, f, squared=True)
        star = tilde_nabla_star(space, f)
        checks.add("tilde_star_le_sqrt2_nabla", np.sqrt(2.0) * np.sqrt(grad2) - star, -eps, fam, seed)
        checks.add("tilde_star_nonnegative", star, 0.0, fam, seed)
        checks.add("sign_split_domination", sign_split_slack(f)[:, None], -eps, fam, seed)
        nonneg = np.abs(f)
        g2 = gamma2(space, nonneg)
        grad2_abs = carre_du_champ(space, nonneg)
        for p in ps:
            gp = gamma_p_definitional(space, dec, f, p)
            checks.add("gamma_p_lower_bound", 2.0 / (p * (p - 1)) * gp - tn2, -eps, fam, seed, p)
            gpa = gamma_p_definitional(space, dec, nonneg, p)
            checks.add("gamma_p_nonnegative", gpa, -eps, fam, seed, p)
            checks.add("gamma_p_upper_bound", 2.0 * (p - 1) * grad2_abs - gpa, -eps, fam, seed, p)
            checks.add("gamma_p_le_p_minus_1_gamma_2", (p - 1) * g2 - gpa, -eps, fam, seed, p)
        if square_functions:
            hn = h_nabla(space, dec, f)
            gg = g_function(space, dec, f)
            checks.add("h_nabla_le_g", gg.squared - hn.squared, -eps, fam, seed)
            ht = h_tilde(space, dec, f, tol=tol)
            gt = g_tilde(space, dec, f, tol=tol)
            checks.add("g_tilde_le_h_tilde", ht.squared - gt.squared, -(ht.error_bound + gt.error_bound), fam, seed)
            if hp_trials:
                sub = f[:hp_trials]
                for p in ps:
                    hp = h_p(space, dec, sub, p, tol=tol)
                    bound = hp.error_bound + p * (p - 1) / 2 * ht.error_bound
                    checks.add(
                        "h_p_dominates_h_tilde",
                        hp.squared - p * (p - 1) / 2 * ht.squared[:hp_trials],
                        -bound,
                        fam,
                        seed,
                        p,
                    )
    table = [
        {"inequality": name, "family": fam, **v, "passed": v["violations"] == 0}
        for (name, fam), v in sorted(checks.stats.items())
    ]
    summary = {}
    for row in table:
        summary[row["inequality"]] = summary.get(row["inequality"], True) and row["passed"]
    return {
        "checks": table,
        "summary": summary,
        "failures": checks.failures,
        "n_trials": config.n_trials,
        "families": config.families,
        "p_values": ps,
        "passed": all(row["passed"] for row in table),
    }


def resolve_seed(config_seed: int, cli_seed: Optional[int] = None) -> dict:
    """Master seed with its source: command line, then environment, then config."""
    if cli_seed is not None:
        return {"seed": int(cli_seed), "seed_source": "cli"}
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return {"seed": int(env), "seed_source": "env"}
        except ValueError:
            raise InvalidParameter(f"{SEED_ENV}={env!r} is not an integer") from None
    return {"seed": int(config_seed), "seed_source": "config"}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else None
    return obj


def dumps(doc: dict) -> str:
    """Canonical JSON text: sorted keys, fixed indentation, non-finite as null."""
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report(doc: dict, out_dir, command: str, seed: int) -> Path:
    """Write ``doc`` to ``<out_dir>/<command>/<timestamp>-<seed>.json``.

    The timestamp only names the file; the document itself carries no clock
    data, so reruns produce byte-identical files.
    """
    folder = Path(out_dir) / command
    folder.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    path = folder / f"{stamp}-{seed}.json"
    k = 1
    while path.exists():
        path = folder / f"{stamp}-{seed}.{k}.json"
        k += 1
    path.write_text(dumps({"schema_version": SCHEMA_VERSION, **doc}))
    return path
