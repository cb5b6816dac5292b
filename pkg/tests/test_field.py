import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from randac.errors import ConfigurationError, DomainError
from randac.field import (DistributionSpec, LexAfter, OutsideBox, eval_g1, negate, redraw, resample_sites,
                          sample_field, translate, with_site_value)

seeds = st.integers(0, 2**63 - 1)


def test_sample_is_deterministic_and_bounded():
    a = sample_field(1, 4, DistributionSpec(), 42)
    b = sample_field(1, 4, DistributionSpec(), 42)
    assert a.values.tobytes() == b.values.tobytes()
    assert np.all(np.abs(a.values) <= 1.0)
    # n even: sites -2..2
    assert a.values.shape == (5,)
    assert not np.array_equal(a.values, sample_field(1, 4, seed=43).values)


def test_values_are_read_only():
    f = sample_field(2, 4, seed=1)
    with pytest.raises(ValueError):
        f.values[0, 0] = 0.0


@pytest.mark.parametrize("dim,n", [(0, 4), (4, 4), (1, 0), (2, -3)])
def test_bad_dimensions_rejected(dim, n):
    with pytest.raises(ConfigurationError):
        sample_field(dim, n)


def test_distribution_moments():
    d = DistributionSpec(gmax=2.0)
    assert d.mean == 0.0
    assert d.variance == pytest.approx(4.0 / 3.0)
    with pytest.raises(ConfigurationError):
        DistributionSpec(gmax=0.0)
    with pytest.raises(ConfigurationError):
        DistributionSpec(kind="gaussian")


def test_site_mean_vanishes_and_variance_is_one_third():
    vals = np.concatenate([sample_field(2, 2, seed=s).values.ravel() for s in range(4000)])
    assert abs(vals.mean()) < 4 * np.sqrt(1 / 3 / vals.size)
    assert vals.var() == pytest.approx(1 / 3, rel=0.03)
    assert stats.kstest(vals, "uniform", args=(-1, 2)).pvalue > 1e-3


def test_negation_has_same_law():
    vals = np.concatenate([sample_field(1, 8, seed=s).values for s in range(500)])
    neg = np.concatenate([negate(sample_field(1, 8, seed=s)).values for s in range(500, 1000)])
    assert stats.ks_2samp(vals, neg).statistic < 0.05


def test_resample_keeps_other_sites():
    f = sample_field(1, 4, seed=42)
    g = resample_sites(f, [(2,)], aux_seed=7)
    assert g.value_at((2,)) != f.value_at((2,))
    for z in (-2, -1, 0, 1):
        assert g.value_at((z,)) == f.value_at((z,))
    assert resample_sites(f, [], 7).values.tobytes() == f.values.tobytes()
    with pytest.raises(DomainError):
        resample_sites(f, [(3,)], 7)


def test_resample_all_is_deterministic_and_in_support():
    f = sample_field(2, 4, seed=3)
    sites = [tuple(z) for z in f.sites]
    a, b = resample_sites(f, sites, 11), resample_sites(f, sites, 11)
    assert a.values.tobytes() == b.values.tobytes()
    assert np.all(np.abs(a.values) <= 1.0)
    assert not np.any(a.values == f.values)


@given(seeds, st.integers(-50, 50), st.integers(-50, 50))
def test_translation_identity(seed, y0, y1):
    f = sample_field(2, 6, seed=seed)
    g = translate(f, (y0, y1))
    wide = f.window(6 + 2 * max(abs(y0), abs(y1)) + 2)
    for z in g.sites[::5]:
        z = tuple(int(c) for c in z)
        assert g.value_at(z) == wide.value_at((z[0] + y0, z[1] + y1))


@given(seeds, st.integers(-20, 20))
def test_translation_group_action(seed, y):
    f = sample_field(1, 8, seed=seed)
    assert translate(f, (0,)) is f
    back = translate(translate(f, (y,)), (-y,))
    assert back.values.tobytes() == f.values.tobytes()


def test_shift_along_first_axis_matches_window():
    f = sample_field(2, 4, seed=5)
    g = translate(f, (1, 0))
    assert np.array_equal(g.values[:-1], f.values[1:])


@given(seeds)
def test_negation_involution(seed):
    f = sample_field(1, 6, seed=seed)
    assert np.array_equal(negate(f).values, -f.values)
    assert negate(negate(f)).values.tobytes() == f.values.tobytes()
    assert "neg" in negate(f).provenance


@given(seeds, st.integers(0, 2**31))
def test_redraw_locality(seed, aux):
    f = sample_field(2, 6, seed=seed)
    g = redraw(f, LexAfter((0, 0), inclusive=False), aux)
    after = np.array([tuple(z) > (0, 0) for z in map(tuple, f.sites)]).reshape(f.values.shape)
    assert np.array_equal(g.values[~after], f.values[~after])
    assert np.all(g.values[after] != f.values[after])


def test_outside_box_selector():
    f = sample_field(1, 10, seed=2)
    g = redraw(f, OutsideBox((0,), 2), 9)
    z = f.axes[0]
    inside = np.abs(z) <= 2
    assert np.array_equal(g.values[inside], f.values[inside])
    assert np.all(g.values[~inside] != f.values[~inside])


def test_eval_g1_cells():
    f = sample_field(1, 4, seed=42)
    assert eval_g1(f, 1.0) == f.value_at((1,))
    assert eval_g1(f, 0.5) == f.value_at((1,))  # lower face belongs to the cell
    assert eval_g1(f, 0.4999) == f.value_at((0,))
    assert eval_g1(f, 2.0) == f.value_at((2,))
    with pytest.raises(DomainError):
        eval_g1(f, 2.01)


def test_unit_cell_midpoint_quadrature():
    f = sample_field(1, 6, seed=8)
    for z in (-2, 0, 1):
        xs = z - 0.5 + (np.arange(64) + 0.5) / 64
        assert np.mean([eval_g1(f, x) for x in xs]) == f.value_at((z,))


def test_with_site_value_and_csv(tmp_path):
    f = sample_field(1, 4, seed=1)
    g = with_site_value(f, (0,), 0.25)
    assert g.value_at((0,)) == 0.25 and g.value_at((1,)) == f.value_at((1,))
    f.to_csv(tmp_path / "f.csv")
    rows = (tmp_path / "f.csv").read_text().splitlines()
    assert rows[0] == "z0,value" and len(rows) == 6
    assert float(rows[1].split(",")[1]) == f.value_at((-2,))


def test_fingerprint_tracks_values():
    f = sample_field(1, 4, seed=1)
    assert f.fingerprint() == sample_field(1, 4, seed=1).fingerprint()
    assert f.fingerprint() != negate(f).fingerprint()
