import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randac import kernels
from randac.errors import ConfigurationError, NonConvergenceError, PreconditionError
from randac.field import negate, sample_field, translate
from randac.grid_energy import DiscreteProfile, GridSpec, el_residual, energy, nodal_field, cell_field
from randac.potential import PotentialSpec
from randac.solver import (SolverOptions, boundary_level, extremal_max, extremal_min, extremal_pair,
                           flow_extremal_pair, global_minimizer, linfty, lipschitz_bound, lipschitz_seminorm,
                           minimize, multistart_inits, multistart_minimize, neumann_minimizer, ordered_bc_solve,
                           ordered_flow_check, solve)

from oracles import brute_chain, constant_field

seeds = st.integers(0, 10**9)


def test_wells_are_attractors():
    f = sample_field(1, 8, seed=1)
    g = GridSpec(1, 8, 8)
    up = minimize(f, 0.0, g, DiscreteProfile.constant(g, 0.9))
    dn = minimize(f, 0.0, g, DiscreteProfile.constant(g, -0.9))
    assert np.max(np.abs(up.values - 1)) < 1e-8
    assert np.max(np.abs(dn.values + 1)) < 1e-8


def test_flow_descends_energy():
    f = sample_field(1, 8, seed=2)
    g = GridSpec(1, 8, 8)
    init = DiscreteProfile(g, np.random.default_rng(0).uniform(-2, 2, g.shape))
    r = solve(f, 0.7, g, init, trace=True)
    e = np.asarray(r.energy_trace)
    assert np.all(np.diff(e) <= 1e-12 * (1 + np.abs(e[1:])))
    assert r.energy.total <= energy(init, f, 0.7).total
    assert r.residual < 1e-8 and el_residual(r.profile, f, 0.7) < 1e-8


def test_nonconvergence_carries_last_iterate():
    f = sample_field(1, 8, seed=2)
    g = GridSpec(1, 8, 8)
    with pytest.raises(NonConvergenceError) as exc:
        minimize(f, 0.7, g, DiscreteProfile.constant(g, 0.0), SolverOptions(max_iters=3))
    assert exc.value.iterations == 3 and exc.value.last_iterate is not None
    assert exc.value.residual > 0


def test_init_must_match_grid():
    f = sample_field(1, 8, seed=2)
    g = GridSpec(1, 8, 8)
    with pytest.raises(PreconditionError):
        minimize(f, 0.5, g, DiscreteProfile.constant(g.with_bc("dirichlet_plus", 1.0), 1.0))


def test_options_validation():
    pot = PotentialSpec()
    ro = SolverOptions().resolve(pot, 0.5, 1.0, 1)
    assert ro.monotone_shift == pytest.approx(0.5) and ro.time_step == pytest.approx(1.0)
    assert ro.residual_tol == 1e-8
    assert SolverOptions().resolve(pot, 0.5, 1.0, 2).residual_tol == 1e-6
    for bad in (SolverOptions(time_step=1.5), SolverOptions(time_step=-1.0), SolverOptions(monotone_shift=0.1),
                SolverOptions(scheme="newton"), SolverOptions(extremal="best"), SolverOptions(levels=1),
                SolverOptions(residual_tol=0.0)):
        with pytest.raises(ConfigurationError):
            bad.resolve(pot, 0.5, 1.0, 1)


def test_deterministic_extremals():
    for d, n in ((1, 16), (2, 8)):
        f = sample_field(d, n, seed=3)
        g = GridSpec(d, n, 4)
        for mode in ("flow", "minimizer"):
            pair = extremal_pair(f, 0.0, g, SolverOptions(extremal=mode))
            assert np.max(np.abs(pair.v_plus.values - 1)) < 1e-6
            assert np.max(np.abs(pair.v_minus.values + 1)) < 1e-6
            assert abs(pair.energy_plus.total) < 1e-8 and abs(pair.energy_minus.total) < 1e-8


def test_uniform_field_extremal_is_constant():
    f = constant_field(1, 6, 1.0, sample_field(1, 6, seed=5))
    g = GridSpec(1, 6, 8)
    assert boundary_level(PotentialSpec(), 0.2, f.gmax) == pytest.approx(1.2)
    assert np.allclose(extremal_max(f, 0.2, g).values, 1.2, atol=1e-12)
    assert np.allclose(extremal_pair(f, 0.2, g).v_plus.values, 1.2, atol=1e-9)


def test_extremals_monotone_and_bounded():
    f = sample_field(1, 16, seed=4)
    g = GridSpec(1, 16, 8)
    S = boundary_level(PotentialSpec(), 0.5, 1.0)
    vp, vm = extremal_max(f, 0.5, g), extremal_min(f, 0.5, g)
    assert vp.values.max() <= S + 1e-12 and vm.values.min() >= -S - 1e-12
    assert np.all(vm.values <= vp.values + 1e-8)
    assert vp.grid.bc_kind == "dirichlet_plus" and vm.grid.bc_value == -S


@settings(max_examples=10)
@given(seeds, st.sampled_from([0.2, 0.5, 1.0]))
def test_sandwich_of_neumann_critical_points(seed, theta):
    f = sample_field(1, 16, seed=seed)
    g = GridSpec(1, 16, 4)
    pair = flow_extremal_pair(f, theta, g)
    rng = np.random.default_rng(seed)
    inits = multistart_inits(f, g) + [DiscreteProfile(g, rng.uniform(-1.5, 1.5, g.shape)) for _ in range(5)]
    _, results = multistart_minimize(f, theta, g, inits=inits, global_search=True)
    for r in results:
        assert np.all(r.profile.values <= pair.v_plus.values + 1e-6)
        assert np.all(r.profile.values >= pair.v_minus.values - 1e-6)


def test_sandwich_in_two_dimensions():
    f = sample_field(2, 6, seed=7)
    g = GridSpec(2, 6, 2)
    pair = flow_extremal_pair(f, 0.5, g)
    _, results = multistart_minimize(f, 0.5, g)
    for r in results:
        assert np.all(pair.v_minus.values - 1e-6 <= r.profile.values)
        assert np.all(r.profile.values <= pair.v_plus.values + 1e-6)


@settings(max_examples=10)
@given(seeds)
def test_sign_flip_symmetry(seed):
    f = sample_field(1, 16, seed=seed)
    g = GridSpec(1, 16, 8)
    tol = 1e-8
    a = extremal_max(negate(f), 0.5, g).values
    b = extremal_min(f, 0.5, g).values
    assert np.max(np.abs(a + b)) <= 2 * tol
    p, q = extremal_pair(f, 0.5, g), extremal_pair(negate(f), 0.5, g)
    assert np.array_equal(p.v_minus.values, -q.v_plus.values)
    assert p.energy_minus.total == pytest.approx(q.energy_plus.total, abs=1e-12)


@pytest.mark.parametrize("dim,shift", [(1, (3,)), (2, (2, -1))])
def test_translation_covariance(dim, shift):
    n = 8
    f = sample_field(dim, n, seed=11)
    g0 = GridSpec(dim, n, 4)
    moved = f.window(n, center=shift)
    a = flow_extremal_pair(moved, 0.5, GridSpec(dim, n, 4, center=shift))
    b = flow_extremal_pair(translate(f, shift), 0.5, g0)
    assert a.v_plus.values.tobytes() == b.v_plus.values.tobytes()
    assert a.v_minus.values.tobytes() == b.v_minus.values.tobytes()


def test_ordered_traces():
    f = sample_field(1, 32, seed=6)
    g = GridSpec(1, 32, 8)
    a, b = ordered_bc_solve(f, 0.5, g, 1.0, 1.0)
    assert np.array_equal(a.values, b.values)
    lo, hi = ordered_bc_solve(f, 0.5, g, 0.9, 1.0)
    assert np.all(hi.values[1:-1] > lo.values[1:-1])
    with pytest.raises(PreconditionError):
        ordered_bc_solve(f, 0.5, g, 1.0, 0.9)


def test_extremal_traces_reproduce_flow_pair():
    f = sample_field(1, 8, seed=8)
    g = GridSpec(1, 8, 8)
    S = boundary_level(PotentialSpec(), 0.5, 1.0)
    lo, hi = ordered_bc_solve(f, 0.5, g, -S, S)
    pair = flow_extremal_pair(f, 0.5, g)
    assert np.max(np.abs(hi.values - pair.v_plus.values)) < 1e-9
    assert np.max(np.abs(lo.values - pair.v_minus.values)) < 1e-9


@settings(max_examples=10)
@given(seeds)
def test_order_preserved_along_flow(seed):
    f = sample_field(1, 8, seed=seed)
    g = GridSpec(1, 8, 4, "dirichlet")
    rng = np.random.default_rng(seed)
    low = rng.uniform(-2, 1, g.shape)
    high = low + rng.uniform(0, 1, g.shape)
    worst = ordered_flow_check(f, 0.8, DiscreteProfile(g, low), DiscreteProfile(g, high), 30,
                               SolverOptions(debug_order=True))
    assert worst <= 0


def test_monotone_iteration_scheme_agrees():
    f = sample_field(1, 8, seed=9)
    g = GridSpec(1, 8, 8)
    a = extremal_max(f, 0.5, g)
    b = extremal_max(f, 0.5, g, SolverOptions(scheme="monotone_iteration", monotone_shift=2.0))
    assert np.max(np.abs(a.values - b.values)) < 1e-7


def test_chain_min_against_exhaustive_search():
    f = sample_field(1, 2, seed=13)
    g = GridSpec(1, 2, 2, "dirichlet_plus", 1.5)
    gbar = nodal_field(g, cell_field(g, f))
    m, S = 3, 1.5
    levels = [(j - m) * S / m for j in range(2 * m + 1)]
    for fix in (False, True):
        v = kernels.run_chain_min(gbar, g.h, 0.5, PotentialSpec(), S, m, S, S, fix, fix)
        e_ref, v_ref = brute_chain(gbar, g.h, 0.5, levels, S if fix else None, S if fix else None)
        assert np.allclose(v, v_ref)


@settings(max_examples=15)
@given(seeds, st.sampled_from([0.3, 0.5, 1.0]))
def test_global_minimizer_beats_every_descent(seed, theta):
    f = sample_field(1, 16, seed=seed)
    g = GridSpec(1, 16, 8)
    best = global_minimizer(f, theta, g)
    rng = np.random.default_rng(seed)
    inits = multistart_inits(f, g) + [DiscreteProfile(g, rng.uniform(-1.5, 1.5, g.shape)) for _ in range(3)]
    _, results = multistart_minimize(f, theta, g, inits=inits)
    assert best.energy.total <= min(r.energy.total for r in results) + 1e-9
    assert best.residual < 1e-8


def test_minimizer_pair_never_above_flow_pair():
    for seed in range(6):
        f = sample_field(1, 32, seed=seed)
        g = GridSpec(1, 32, 8)
        p = extremal_pair(f, 0.5, g, crosscheck=True)
        assert p.diagnostics["flow_excess_plus"] >= -1e-8
        assert p.diagnostics["flow_excess_minus"] >= -1e-8
        assert p.diagnostics["order_violation"] <= 1e-8
        assert p.gap == pytest.approx(p.energy_plus.total - p.energy_minus.total)


def test_minimizer_pair_two_dimensions():
    f = sample_field(2, 6, seed=4)
    g = GridSpec(2, 6, 2)
    p = extremal_pair(f, 0.5, g)
    q = extremal_pair(negate(f), 0.5, g)
    assert np.array_equal(p.v_minus.values, -q.v_plus.values)
    fp = flow_extremal_pair(f, 0.5, g)
    assert p.energy_plus.total <= fp.energy_plus.total + 1e-8


def test_neumann_minimizer_and_norms():
    f = sample_field(1, 16, seed=21)
    g = GridSpec(1, 16, 8)
    u = neumann_minimizer(f, 0.5, g)
    assert u.grid.bc_kind == "neumann"
    assert linfty(u) <= boundary_level(PotentialSpec(), 0.5, 1.0) + 1e-6
    assert 0 < lipschitz_seminorm(u) <= lipschitz_bound(PotentialSpec(), 0.5, 1.0)
    ramp = DiscreteProfile(GridSpec(1, 2, 2), np.linspace(0, 1, 5))
    assert lipschitz_seminorm(ramp) == pytest.approx(0.5)
