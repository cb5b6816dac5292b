import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randac.errors import ConfigurationError
from randac.field import negate, sample_field
from randac.grid_energy import GridSpec
from randac.potential import PotentialSpec
from randac.solver import SolverOptions, boundary_level
from randac.stats import (CSV_COLUMNS, AggregateReport, CellFailure, CellTask, Model, antithetic_mean,
                          blend_cost, clt_check, conditional_gap, default_margin, derive_seed, energy_density,
                          field_monotonicity_check, loglog_slope, mean_se, raw_gap, record_row, run_cell,
                          trend_decreasing, u_hat, uniqueness_diagnostic, v_hat, variance_suite, w0_increment,
                          y_increments)

SCHEMA = ["seed", "n", "dim", "theta", "D_n", "F_hat", "m_plus_hat", "m_minus_hat", "e_hat_plus", "e_hat_minus",
          "W0_hat", "linfty_max", "lipschitz_seminorm"]


def test_seed_derivation():
    a = derive_seed(1, 2)
    assert a == derive_seed(1, 2) and a != derive_seed(2, 1) and a != derive_seed(1, 3)
    assert 0 <= a < 2**64
    assert default_margin(1.0) == 15


def test_mean_se_and_slope():
    est = mean_se([1.0, 2.0, 3.0, float("nan")])
    assert est.count == 3 and est.mean == 2.0 and est.se == pytest.approx(1 / math.sqrt(3))
    assert est.within(2.5) and not est.within(5.0)
    assert math.isnan(mean_se([]).mean)
    assert loglog_slope([8, 16, 32], [3 * 8**0.7, 3 * 16**0.7, 3 * 32**0.7]) == pytest.approx(0.7)


def test_trend_rule():
    assert trend_decreasing([3, 2, 1])
    assert not trend_decreasing([3, 3.1, 1])
    assert trend_decreasing([3, 3.1, 1], [0.2, 0.2, 0.2])
    assert not trend_decreasing([3, 3.5, 1], [0.2, 0.2, 0.2])
    assert not trend_decreasing([3, 3.1, 3.2, 1], [1, 1, 1, 1])
    assert not trend_decreasing([1, 0.9, 1.2], [1, 1, 1])


def test_raw_gap_trivial_and_antisymmetric():
    g = GridSpec(1, 16, 8)
    f = sample_field(1, 16, seed=3)
    assert raw_gap(f, 0.0, g) == 0.0
    for seed in range(5):
        f = sample_field(1, 16, seed=seed)
        assert raw_gap(negate(f), 0.5, g) == -raw_gap(f, 0.5, g)
        flow = SolverOptions(extremal="flow")
        assert raw_gap(negate(f), 0.5, g, flow) == pytest.approx(-raw_gap(f, 0.5, g, flow), abs=2e-8)


def test_gap_surface_order_constant_is_stable():
    # |D_n| / n^(d-1) stays bounded in d = 1
    means = []
    for n in (8, 16, 32):
        task = CellTask(1, n, 0.5, 5)
        means.append(np.mean([abs(task.record(i).D_n) for i in range(20)]))
    assert max(means) / min(means) < 2.5


def test_conditional_gap_degenerate_cases():
    f = sample_field(1, 8, seed=2)
    model = Model(0.5)
    assert conditional_gap(f, 0.5, 8, m_extra=0, K=4, model=model) == raw_gap(f, 0.5, GridSpec(1, 8, 8))
    assert conditional_gap(f, 0.0, 8, m_extra=3, K=3) == 0.0
    with pytest.raises(ConfigurationError):
        conditional_gap(f, 0.5, 8, K=0)


def test_w0_zero_without_disorder_and_bounded():
    f = sample_field(1, 8, seed=4)
    assert w0_increment(f, 0.0, 8, K=2, m_extra=2) == 0.0
    S = boundary_level(PotentialSpec(), 0.5, 1.0)
    for seed in range(3):
        w0 = w0_increment(sample_field(1, 8, seed=seed), 0.5, 8, K=4, aux_seed=seed, m_extra=4)
        assert abs(w0) <= 2 * 2 * 0.5 * S


def test_increments_telescope():
    f = sample_field(1, 6, seed=9)
    inc = y_increments(f, 0.5, 6, K=3, aux_seed=77, m_extra=3)
    assert len(inc.Y) == 7
    assert math.fsum(inc.Y) == pytest.approx(inc.F_hat - inc.phi_empty, abs=1e-12)
    assert inc.F_hat == pytest.approx(conditional_gap(f, 0.5, 6, m_extra=3, K=3, aux_seed=77), abs=1e-12)
    assert u_hat(inc.Y, 0.0) == pytest.approx(v_hat(inc.Y))
    assert u_hat(inc.Y, 10.0) <= u_hat(inc.Y, 0.1) <= v_hat(inc.Y)


def test_monotonicity_report():
    f = sample_field(1, 8, seed=1)
    g = GridSpec(1, 8, 8)
    rep = field_monotonicity_check(f, 0.5, g, (0,), [0.0])
    assert rep.delta_G == [0.0] and rep.upper == [0.0] and rep.lower == [0.0]
    rep0 = field_monotonicity_check(f, 0.0, g, (0,), [0.1])
    assert rep0.delta_G == [0.0]
    rep = field_monotonicity_check(f, 0.5, g, (0,), [0.1])
    assert rep.sandwich_ok and rep.monotone_ok
    with pytest.raises(ConfigurationError):
        field_monotonicity_check(f, 0.5, g, (0,), [-0.1])


@settings(max_examples=8)
@given(st.integers(0, 10**6), st.sampled_from([0.05, 0.1, 0.2]))
def test_monotonicity_sandwich_random(seed, h):
    f = sample_field(1, 8, seed=seed)
    rep = field_monotonicity_check(f, 0.5, GridSpec(1, 8, 8), (1,), [h])
    assert rep.sandwich_ok and rep.monotone_ok


def test_antithetic_pairs_cancel_exactly():
    mean, recs = antithetic_mean(1, 8, 0.5, 5, master_seed=3)
    assert mean == 0.0
    assert recs[0].seed == recs[1].seed and recs[1].negated
    assert recs[0].D_n == -recs[1].D_n


def test_record_schema_and_aggregate():
    for col in SCHEMA:
        assert col in CSV_COLUMNS
    task = CellTask(1, 8, 0.5, 1)
    recs = run_cell(task, 4)
    row = record_row(recs[0])
    assert len(row) == len(CSV_COLUMNS) and row[0] == str(task.seed(0))
    assert all(math.isfinite(getattr(r, c)) for r in recs for c in ("D_n", "linfty_max", "lipschitz_seminorm"))
    rep = AggregateReport.from_records(recs, 5)
    assert rep.count == 4 and rep.warnings
    assert rep.row()["D_n_mean"] == pytest.approx(np.mean([r.D_n for r in recs]))


def test_records_are_pure_functions_of_index():
    task = CellTask(1, 8, 0.5, 11, K_F=2, K_W=2, m_extra=2)
    a, b = task.record(3), task.record(3)
    assert record_row(a) == record_row(b)
    assert math.isfinite(a.F_hat) and math.isfinite(a.W0_hat)


def test_failure_budget(monkeypatch):
    import randac.stats as st_mod
    from randac.errors import NonConvergenceError

    real = st_mod.extremal_pair

    def flaky(field, *a, **kw):
        if field.seed % 2:
            raise NonConvergenceError("forced")
        return real(field, *a, **kw)

    monkeypatch.setattr(st_mod, "extremal_pair", flaky)
    task = CellTask(1, 8, 0.5, 1)
    odd = sum(task.seed(i) % 2 for i in range(6))
    assert odd > 0
    with pytest.raises(CellFailure):
        run_cell(task, 6)
    kept = run_cell(CellTask(1, 8, 0.5, 1, failure_budget=odd), 6)
    assert len(kept) == 6 - odd


def test_degenerate_disorder_suites():
    reps, verdicts = uniqueness_diagnostic(1, 0.0, [8, 16], 2)
    assert reps[0].estimates["gap_integral"].mean == 2.0
    assert verdicts[0].passed and "degenerate" in verdicts[0].detail
    rows, _ = energy_density(1, 0.0, [8], 2)
    assert rows[0]["e_plus"] == 0.0 and rows[0]["e_minus"] == 0.0
    vr = variance_suite(1, 0.0, [4], 2, K=2, K_W=2, m_extra=1)[0]
    assert vr.b_sq_hat.mean == 0.0 and all(u.mean == 0.0 for u in vr.U_hat.values())
    clt = clt_check(0.0, 4, 3, K=2, m_extra=1)
    assert clt.variance == 0.0 and clt.mean.mean == 0.0


def test_uniqueness_requires_low_dimension():
    with pytest.raises(ConfigurationError):
        uniqueness_diagnostic(3, 0.5, [2], 1)


def test_variance_sandwich_small():
    vr = variance_suite(1, 0.5, [4], 6, K=2, K_W=2, m_extra=2, with_increments=False)[0]
    assert vr.b_sq_upper == pytest.approx(4 * 0.25 * 1.5**2)
    assert vr.b_sq_hat.mean <= vr.b_sq_upper


def test_blend_cost_finite():
    c = blend_cost(sample_field(1, 8, seed=1), 0.5, GridSpec(1, 8, 8))
    assert math.isfinite(c)
