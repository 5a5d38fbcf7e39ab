import csv
import io

import numpy as np
import pytest

from jumpforms.exceptions import InvalidParameter
from jumpforms.mosco import (
    SWEEP_COLUMNS,
    build_truncation,
    default_radii,
    form_convergence,
    refine_and_truncate,
    rows_to_csv,
    semigroup_convergence,
    sweep,
    truncate,
)
from jumpforms.space import build_torus_stable, dirichlet_form


@pytest.fixture
def torus16():
    return build_torus_stable(16, 0.75)


def spike(n, at=3):
    f = np.zeros(n)
    f[at] = 1.0
    return f


def test_radius_beyond_diameter_kills_kernel(torus16):
    assert np.all(truncate(torus16, 0.6).kernel == 0.0)
    assert dirichlet_form(truncate(torus16, 0.6), spike(16)) == 0.0


def test_radius_below_spacing_is_identity(torus16):
    t = truncate(torus16, 0.5 / 16)
    assert np.array_equal(t.kernel, torus16.kernel)
    fam = build_truncation(torus16, [0.5 / 16])
    assert semigroup_convergence(fam, spike(16), 1.0)[0][1] <= 1e-12


def test_forms_increase_as_radius_shrinks(torus16):
    f = spike(16)
    radii = default_radii(torus16, 12)
    forms = form_convergence(build_truncation(torus16, radii), f)
    values = [v for _, v in forms]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert values[-1] == pytest.approx(dirichlet_form(torus16, f), rel=1e-14)


def test_spike_sweep(torus16):
    out = sweep(torus16, default_radii(torus16, 12), spike(16), 1.0)
    assert out["monotone"]
    assert out["liminf_slack"] >= 0.0
    assert out["final_error"] <= 1e-12
    errors = [r["semigroup_error"] for r in out["rows"]]
    assert errors[0] > errors[-1]
    assert out["full_form"] == pytest.approx(out["rows"][-1]["form_value"], rel=1e-14)
    assert [r["n"] for r in out["rows"]] == [16] * 12


def test_invalid_radii(torus16):
    with pytest.raises(InvalidParameter):
        build_truncation(torus16, [])
    with pytest.raises(InvalidParameter):
        build_truncation(torus16, [0.2, 0.3])
    with pytest.raises(InvalidParameter):
        build_truncation(torus16, [0.2, 0.0])
    with pytest.raises(InvalidParameter):
        semigroup_convergence(build_truncation(torus16, [0.2]), spike(16), 0.0)


def test_refine_and_truncate_error_shrinks():
    rows = refine_and_truncate([8, 16, 32, 64], 1.0, lambda n: 2.0 / n)
    errors = [r["semigroup_error"] for r in rows]
    assert all(b < a for a, b in zip(errors, errors[1:]))
    with pytest.raises(InvalidParameter):
        refine_and_truncate([16, 8], 1.0, lambda n: 1.0 / n)
    with pytest.raises(InvalidParameter):
        refine_and_truncate([8], 1.0, lambda n: 0.0)


def test_rows_to_csv_round_trip(torus16):
    out = sweep(torus16, [0.4, 0.1, 0.01], spike(16), 0.5)
    text = rows_to_csv(out["rows"])
    parsed = list(csv.DictReader(io.StringIO(text)))
    assert tuple(parsed[0]) == SWEEP_COLUMNS
    assert len(parsed) == 3
    assert float(parsed[1]["form_value"]) == out["rows"][1]["form_value"]
