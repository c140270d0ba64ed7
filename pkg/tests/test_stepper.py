import csv

import numpy as np
import pytest

from strainedfilm import (
    Anisotropy,
    FilmElasticity,
    FlowParams,
    InvalidInputError,
    OptimizerStall,
    Profile,
    evolve,
    free_energy,
    incremental_step,
    volume,
)
from strainedfilm.stepper import TRACE_COLUMNS
from strainedfilm.surface_pde import mm_penalty

B = 2 * np.pi


def test_flat_stays_flat_without_elasticity():
    flat = Profile.flat(1.0, 32, B, 1)
    res = incremental_step(flat, FlowParams(epsilon=0.1), Anisotropy.isotropic(2))
    assert np.array_equal(res.profile_next.values, flat.values)
    assert res.penalty_value == 0.0 and res.iterations == 0


def test_flat_with_elasticity_is_kept(lame):
    flat = Profile.flat(0.5, 64, B, 1)
    res = incremental_step(flat, FlowParams(epsilon=0.1), Anisotropy.isotropic(2), FilmElasticity(lame, ny=8))
    assert np.max(np.abs(res.profile_next.values - 0.5)) < 1e-12
    assert res.converged


def test_step_decreases_energy_and_keeps_volume(wavy_curve):
    fp = FlowParams(epsilon=0.1)
    psi = Anisotropy.elliptic([[1.4, 0.1], [0.1, 1.0]])
    res = incremental_step(wavy_curve, fp, psi)
    e0 = free_energy(wavy_curve, fp, psi).total
    assert res.energy.total + res.penalty_value <= e0
    assert res.energy.total < e0
    assert abs(volume(res.profile_next) - volume(wavy_curve)) <= 1e-12 * volume(wavy_curve)
    assert res.slope_max < fp.resolved_Lambda0(wavy_curve)
    # the reported penalty is the incremental metric term
    pen = mm_penalty(wavy_curve, res.profile_next, wavy_curve) / fp.resolved_tau(B)
    assert res.penalty_value == pytest.approx(pen, rel=1e-8)


def test_surface_step_with_potential(wavy_surface):
    from strainedfilm.energy import uniform_potential

    fp = FlowParams.default_for(2, 0.05)
    psi = Anisotropy.cubic(0.1, 3)
    res = incremental_step(wavy_surface, fp, psi, uniform_potential(0.3))
    assert res.converged
    assert res.energy.total < free_energy(wavy_surface, fp, psi, uniform_potential(0.3)).total
    assert abs(volume(res.profile_next) / volume(wavy_surface) - 1) < 1e-12


def test_plain_descent_matches_quasi_newton(wavy_curve):
    fp = FlowParams(epsilon=0.1)
    psi = Anisotropy.isotropic(2)
    a = incremental_step(wavy_curve, fp, psi, gtol=1e-11)
    b = incremental_step(wavy_curve, fp, psi, gtol=1e-11, quasi_newton=False, max_iter=5000)
    assert np.max(np.abs(a.profile_next.values - b.profile_next.values)) < 1e-8


def test_frozen_elastic_refresh_policy(wavy_curve, lame):
    fp = FlowParams(epsilon=0.1)
    psi = Anisotropy.isotropic(2)
    every = incremental_step(wavy_curve, fp, psi, FilmElasticity(lame, ny=8))
    lazy = incremental_step(wavy_curve, fp, psi, FilmElasticity(lame, ny=8), elastic_refresh=3)
    assert np.max(np.abs(every.profile_next.values - lazy.profile_next.values)) < 1e-6


def test_stall_reports_best_iterate(wavy_curve):
    with pytest.raises(OptimizerStall) as info:
        incremental_step(wavy_curve, FlowParams(epsilon=0.1), Anisotropy.isotropic(2), gtol=1e-14, max_iter=1)
    best = info.value.best
    assert best is not None and best.iterations == 1
    assert info.value.residual == best.optimality_residual


def test_lambda0_must_exceed_initial_slope(wavy_curve):
    with pytest.raises(InvalidInputError):
        evolve(wavy_curve, FlowParams(epsilon=0.1, Lambda0=0.1), Anisotropy.isotropic(2), t_end=0.1)


def test_slope_activation_is_a_terminal_event(lame):
    prof = Profile.from_function(lambda x: 1.2 + 0.02 * np.cos(x), 64, B, 1)
    fp = FlowParams(epsilon=0.01, Lambda0=0.021)
    trace = evolve(prof, fp, Anisotropy.isotropic(2), FilmElasticity(lame, ny=8), t_end=3.0)
    assert trace.reason == "slope_constraint"
    assert trace.T0 == pytest.approx(trace.times[-1])
    assert trace.steps[-1].constraint_active
    assert np.all(trace.column("max_slope") <= 0.021 + 1e-12)


def test_flat_trace_is_constant():
    flat = Profile.flat(1.0, 16, B, 2)
    trace = evolve(flat, FlowParams.default_for(2, 0.1), Anisotropy.isotropic(3), t_end=0.2)
    assert trace.reason == "t_end"
    assert np.all(trace.energies() == trace.energies()[0])
    assert all(np.array_equal(p, flat.values) for p in trace.profiles)


def test_trace_interpolation_and_serialization(tmp_path, wavy_curve):
    fp = FlowParams(epsilon=0.1, tau=0.01)
    trace = evolve(wavy_curve, fp, Anisotropy.isotropic(2), t_end=0.05)
    assert len(trace.profiles) == 6
    mid = trace.at(0.015)
    assert np.allclose(mid, 0.5 * (trace.profiles[1] + trace.profiles[2]))
    assert np.array_equal(trace.at(0.0), trace.profiles[0])
    e = trace.energies()
    assert np.all(np.diff(e) <= 0)
    assert trace.penalty_sum <= e[0] - e[-1] + 1e-12
    assert trace.dissipation <= trace.dissipation_constant * e[0]

    path = tmp_path / "trace.csv"
    trace.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# strainedfilm trace v")
    rows = list(csv.DictReader(lines[1:]))
    assert tuple(rows[0].keys()) == TRACE_COLUMNS
    assert len(rows) == 6
    prof_path = tmp_path / "profiles.csv"
    trace.write_profiles(prof_path, stride=2)
    body = [ln for ln in prof_path.read_text().splitlines() if not ln.startswith("#")]
    assert [int(ln.split(",")[0]) for ln in body] == [0, 2, 4, 5]


def test_runs_are_deterministic(wavy_curve, lame):
    fp = FlowParams(epsilon=0.05)
    psi = Anisotropy.isotropic(2)
    a = evolve(wavy_curve, fp, psi, FilmElasticity(lame, ny=8), t_end=0.1)
    b = evolve(wavy_curve, fp, psi, FilmElasticity(lame, ny=8), t_end=0.1)
    assert all(np.array_equal(x, y) for x, y in zip(a.profiles, b.profiles))


def test_callback_can_stop_run(wavy_curve):
    seen = []

    def cb(trace, step):
        seen.append(step)
        return len(seen) == 2

    trace = evolve(wavy_curve, FlowParams(epsilon=0.1), Anisotropy.isotropic(2), t_end=1.0, callbacks=[cb])
    assert trace.reason == "callback" and len(trace.steps) == 2


def test_fd_backend_evolution(lame):
    prof = Profile.from_function(lambda x: 1 + 0.1 * np.cos(x), 64, B, 1, backend="fd")
    trace = evolve(prof, FlowParams(epsilon=0.05), Anisotropy.isotropic(2), FilmElasticity(lame, ny=8), t_end=0.2)
    assert np.all(np.diff(trace.energies()) <= 1e-12 * abs(trace.energies()[0]))
    assert np.max(np.abs(trace.column("volume") / volume(prof) - 1)) < 1e-12
