"""Finite metric measure spaces carrying a symmetric jump kernel.

A :class:`Space` holds ``n`` points with a metric ``dist``, strictly positive
measure weights ``m`` and a symmetric kernel ``J`` with zero diagonal, so the
jump measure from ``i`` is ``J(i, dj) = J[i, j] * m[j]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .exceptions import InvalidParameter

# relative slack for the triangle inequality; arc distances are sums of k/n
TRIANGLE_RTOL = 1e-12


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Space:
    """Immutable finite metric measure space with a jump kernel.

    Every invariant (metric axioms, positive weights, exact kernel symmetry,
    zero diagonal) is checked at construction, so any ``Space`` instance that
    exists is valid.
    """

    dist: np.ndarray
    measure: np.ndarray
    kernel: np.ndarray
    coords: Optional[np.ndarray] = None
    n: int = field(init=False)

    def __post_init__(self):
        dist = _readonly(self.dist)
        measure = _readonly(self.measure)
        kernel = _readonly(self.kernel)
        coords = None if self.coords is None else _readonly(self.coords)
        object.__setattr__(self, "dist", dist)
        object.__setattr__(self, "measure", measure)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "n", int(measure.shape[0]) if measure.ndim == 1 else -1)
        _validate(self)

    @property
    def rates(self) -> np.ndarray:
        """Total jump rate ``q_i = sum_j J[i, j] m[j]`` of every point."""
        return self.weights.sum(axis=1)

    @property
    def weights(self) -> np.ndarray:
        """Jump measure matrix ``W[i, j] = J[i, j] * m[j]``."""
        return self.kernel * self.measure[None, :]

    @property
    def total_mass(self) -> float:
        return float(self.measure.sum())

    def with_kernel(self, kernel) -> "Space":
        return Space(dist=self.dist, measure=self.measure, kernel=kernel, coords=self.coords)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "coords": None if self.coords is None else self.coords.tolist(),
            "dist": self.dist.tolist(),
            "measure": self.measure.tolist(),
            "kernel": self.kernel.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "Space":
        try:
            space = cls(
                dist=doc["dist"],
                measure=doc["measure"],
                kernel=doc["kernel"],
                coords=doc.get("coords"),
            )
        except KeyError as exc:
            raise InvalidParameter(f"space document lacks field {exc.args[0]!r}") from None
        if "n" in doc and doc["n"] != space.n:
            raise InvalidParameter(f"declared n={doc['n']} but arrays have {space.n} points")
        return space

    @classmethod
    def from_json(cls, text: str) -> "Space":
        return cls.from_dict(json.loads(text))


def _validate(space: Space) -> None:
    m, d, J = space.measure, space.dist, space.kernel
    if m.ndim != 1 or m.shape[0] < 1:
        raise InvalidParameter("measure must be a non-empty vector")
    n = m.shape[0]
    if d.shape != (n, n) or J.shape != (n, n):
        raise InvalidParameter(f"dist and kernel must be {n}x{n}")
    for name, a in (("measure", m), ("dist", d), ("kernel", J)):
        if not np.all(np.isfinite(a)):
            raise InvalidParameter(f"{name} has non-finite entries")
    if np.any(m <= 0):
        raise InvalidParameter("measure weights must be strictly positive")

    if not np.array_equal(d, d.T):
        raise InvalidParameter("dist is not symmetric")
    off = ~np.eye(n, dtype=bool)
    if np.any(np.diag(d) != 0) or np.any(d[off] <= 0):
        raise InvalidParameter("dist must vanish exactly on the diagonal and only there")
    # d[i, j] <= d[i, k] + d[k, j] for every triple
    for k in range(n):
        bound = d[:, k, None] + d[None, k, :]
        if np.any(d > bound * (1 + TRIANGLE_RTOL)):
            raise InvalidParameter("dist violates the triangle inequality")

    if np.any(J < 0):
        raise InvalidParameter("kernel entries must be nonnegative")
    if not np.array_equal(J, J.T):
        raise InvalidParameter("kernel is not exactly symmetric")
    if np.any(np.diag(J) != 0):
        raise InvalidParameter("kernel must have zero diagonal")

    if space.coords is not None and space.coords.shape[0] != n:
        raise InvalidParameter("coords length does not match n")


def _mirror(upper: np.ndarray) -> np.ndarray:
    """Symmetric matrix from the strict upper triangle of ``upper``."""
    u = np.triu(upper, k=1)
    return u + u.T


def dirichlet_form(space: Space, f, g=None) -> np.ndarray:
    """Dirichlet form ``D(f, g) = 1/2 sum_ij (f_i-f_j)(g_i-g_j) J_ij m_i m_j``.

    Fields may be stacked along leading axes; the result has their batch shape.
    """
    f = np.asarray(f, dtype=float)
    g = f if g is None else np.asarray(g, dtype=float)
    df = f[..., :, None] - f[..., None, :]
    dg = df if g is f else g[..., :, None] - g[..., None, :]
    w = space.kernel * np.outer(space.measure, space.measure)
    return 0.5 * np.einsum("...ij,...ij,ij->...", df, dg, w)


def lp_norm(space: Space, f, p: float) -> np.ndarray:
    """Weighted norm ``(sum_i m_i |f_i|^p)^{1/p}``; ``max_i |f_i|`` for ``p = inf``."""
    if not p >= 1:
        raise InvalidParameter(f"p must be >= 1 or inf, got {p}")
    a = np.abs(np.asarray(f, dtype=float))
    if np.isinf(p):
        return a.max(axis=-1)
    return (a**p @ space.measure) ** (1.0 / p)


def torus_distance(n: int) -> np.ndarray:
    """Arc-length distance matrix of the grid ``i/n`` on the unit circle."""
    idx = np.arange(n)
    k = np.abs(idx[:, None] - idx[None, :])
    return np.minimum(k, n - k) / n


def build_two_state(beta: float) -> Space:
    if not beta > 0:
        raise InvalidParameter(f"beta must be positive, got {beta}")
    return Space(
        dist=[[0.0, 1.0], [1.0, 0.0]],
        measure=[1.0, 1.0],
        kernel=[[0.0, beta], [beta, 0.0]],
        coords=[0.0, 1.0],
    )


def _check_grid(n) -> int:
    if int(n) != n or n < 2:
        raise InvalidParameter(f"n must be an integer >= 2, got {n}")
    return int(n)


def build_torus_stable(n: int, alpha: float) -> Space:
    """Unit-circle grid with the stable-type kernel ``d(i, j)^(-1-alpha)``."""
    n = _check_grid(n)
    if not 0 < alpha < 2:
        raise InvalidParameter(f"alpha must lie in (0, 2), got {alpha}")
    d = torus_distance(n)
    with np.errstate(divide="ignore"):
        J = np.where(d > 0, d ** (-1.0 - alpha), 0.0)
    return Space(dist=d, measure=np.full(n, 1.0 / n), kernel=_mirror(J), coords=np.arange(n) / n)


def build_variable_order(
    n: int,
    s: Union[Callable[[np.ndarray], np.ndarray], Sequence[float]],
    convention: str = "max",
) -> Space:
    """Torus grid whose kernel exponent ``e(i, j)`` varies with the points.

    ``s`` is either a callable evaluated at the grid coordinates or a sequence
    of per-point orders. ``convention`` picks ``e(i, j) = max(s_i, s_j)`` or the
    mean ``(s_i + s_j) / 2``; both are symmetric.
    """
    n = _check_grid(n)
    x = np.arange(n) / n
    orders = np.asarray(s(x) if callable(s) else s, dtype=float)
    if orders.shape != (n,):
        raise InvalidParameter(f"order profile must have {n} entries")
    if not np.all((orders > 0) & (orders < 2)):
        raise InvalidParameter("variable orders must lie in (0, 2)")
    if convention == "max":
        e = np.maximum(orders[:, None], orders[None, :])
    elif convention == "mean":
        e = 0.5 * (orders[:, None] + orders[None, :])
    else:
        raise InvalidParameter(f"unknown convention {convention!r}")
    d = torus_distance(n)
    with np.errstate(divide="ignore"):
        J = np.where(d > 0, d ** (-1.0 - e), 0.0)
    return Space(dist=d, measure=np.full(n, 1.0 / n), kernel=_mirror(J), coords=x)


def build_random_kernel(n: int, density: float, seed: int) -> Space:
    """Random symmetric kernel on random points of the unit interval.

    Each off-diagonal pair is connected with probability ``density`` and gets
    a rate drawn uniformly from ``[0.5, 1.5)``. Weights are uniform ``1/n`` and
    the metric is the distance between the embedded points.
    """
    n = _check_grid(n)
    if not 0 < density <= 1:
        raise InvalidParameter(f"density must lie in (0, 1], got {density}")
    rng = np.random.default_rng(seed)
    x = np.sort(rng.random(n))
    while np.any(np.diff(x) == 0):
        x = np.sort(rng.random(n))
    rates = rng.uniform(0.5, 1.5, size=(n, n))
    mask = rng.random((n, n)) < density if density < 1 else np.ones((n, n), dtype=bool)
    d = np.abs(x[:, None] - x[None, :])
    return Space(dist=d, measure=np.full(n, 1.0 / n), kernel=_mirror(rates * mask), coords=x)


BUILDERS = {
    "two_state": build_two_state,
    "torus_stable": build_torus_stable,
    "variable_order": build_variable_order,
    "random_kernel": build_random_kernel,
}


def build_space(spec: dict) -> Space:
    """Build a space from ``{"builder": name, "params": {...}}``.

    The ``from_json`` builder takes ``{"path": ...}`` or an inline ``"space"``
    document.
    """
    name = spec.get("builder")
    params = dict(spec.get("params", {}))
    if name == "from_json":
        if "space" in params:
            return Space.from_dict(params["space"])
        with open(params["path"]) as fh:
            return Space.from_json(fh.read())
    if name not in BUILDERS:
        raise InvalidParameter(f"unknown space builder {name!r}")
    if name == "variable_order" and isinstance(params.get("s"), (int, float)):
        params["s"] = [float(params["s"])] * int(params["n"])
    try:
        return BUILDERS[name](**params)
    except TypeError as exc:
        raise InvalidParameter(f"bad parameters for {name}: {exc}") from None
