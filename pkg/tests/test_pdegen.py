
import numpy as np
import pandas as pd
import pytest
from scipy.integrate import solve_ivp

from datamodel.dm_types import Grid2D, rd_grid
from pdegen.pde_elliptic import apply_helmholtz, apply_poisson, relative_residual, solve_helmholtz, solve_poisson
from pdegen.pde_generate import (
    CostReport,
    GenerationSettings,
    append_cost_row,
    build_helmholtz_sample,
    build_poisson_sample,
    generate,
)
from pdegen.pde_grf import GrfSpec, grf_variance, sample_grf
from pdegen.pde_ns import SpectralOps, simulate_ns
from pdegen.pde_params import HelmholtzParams, NsParams, PoissonParams, RdParams, sample_params
from pdegen.pde_rd import fixed_point, reaction, simulate_rd
from utils.constant import PARAM_RANGES
from utils.errors import ConfigError, SolverError
from utils.utils import derive_seed


# --- Gaussian random fields ---

def test_grf_is_seeded_and_zero_mean():
    grid = Grid2D(32, 32)
    a = sample_grf(GrfSpec(), grid, 5).values
    b = sample_grf(GrfSpec(), grid, 5).values
    assert np.array_equal(a, b)
    assert abs(a.mean()) < 1e-12
    assert not np.array_equal(a, sample_grf(GrfSpec(), grid, 6).values)


def test_grf_variance_matches_spectral_sum():
    grid = Grid2D(32, 32)
    spec = GrfSpec(sigma0=2.0)
    draws = np.stack([sample_grf(spec, grid, s).values[0] for s in range(500)])
    assert abs(np.mean(draws ** 2) / grf_variance(spec, grid) - 1) < 0.1


def test_grf_rejects_bad_hyperparameters():
    with pytest.raises(ConfigError):
        GrfSpec(alpha=0.5)


# --- parameter sampling ---

def test_parameter_ranges_per_stage():
    assert PARAM_RANGES["poisson"] == {"pretrain": [1, 20], "train": [5, 15], "ood": [15, 50]}
    assert PARAM_RANGES["helmholtz"] == {"pretrain": [1, 20], "train": [5, 15], "ood": [15, 20]}
    assert PARAM_RANGES["ns"] == {"pretrain": [100, 300, 500, 800, 1000], "train": [300], "ood": [10000]}


def test_degenerate_range_gives_isotropic_eigenvalues():
    for seed in range(20):
        p = sample_params("poisson", [5, 5], seed)
        assert p.eigenvalues == (5.0, 5.0)
        assert np.isclose(p.k11, 5.0) and np.isclose(p.k22, 5.0) and abs(p.k12) < 1e-12


def test_every_integer_in_range_is_drawn():
    seen = set()
    for seed in range(10_000):
        seen.update(sample_params("poisson", [5, 15], seed).eigenvalues)
    assert seen == {float(v) for v in range(5, 16)}


def test_helmholtz_and_ns_sampling():
    omegas = {sample_params("helmholtz", [15, 20], s).omega for s in range(200)}
    assert omegas <= {float(v) for v in range(15, 21)}
    assert sample_params("ns", [300], 0).reynolds == 300.0
    assert {sample_params("ns", [100, 300], s).reynolds for s in range(50)} == {100.0, 300.0}


def test_sample_params_errors():
    with pytest.raises(ConfigError):
        sample_params("poisson", [6, 5], 0)
    with pytest.raises(ConfigError):
        sample_params("ns", [], 0)
    with pytest.raises(ConfigError):
        sample_params("heat", [1, 2], 0)


def test_non_spd_tensor_is_rejected():
    with pytest.raises(SolverError):
        PoissonParams(1.0, 1.0, 2.0)
    with pytest.raises(SolverError):
        HelmholtzParams(0.0)


# --- elliptic solvers ---

def test_poisson_eigenfunction():
    grid = Grid2D(64, 64)
    Y, X = grid.coordinates()
    f = np.sin(2 * np.pi * X)
    u = solve_poisson(PoissonParams(1.0, 1.0, 0.0), f, grid)
    assert np.max(np.abs(u - f / (4 * np.pi ** 2))) < 1e-10
    assert np.array_equal(solve_poisson(PoissonParams(1.0, 1.0, 0.0), np.zeros((64, 64))), np.zeros((64, 64)))


def test_poisson_residual_on_random_problems():
    grid = Grid2D(64, 64)
    for seed in range(10):
        params = sample_params("poisson", [1, 20], seed)
        f = sample_grf(GrfSpec(), grid, derive_seed(seed, "f")).values[0]
        u = solve_poisson(params, f, grid)
        assert relative_residual(apply_poisson(params, u, grid), f) < 1e-8


def test_helmholtz_eigenfunction_and_constant():
    grid = Grid2D(64, 64)
    Y, X = grid.coordinates()
    params = HelmholtzParams(5.0)
    f = np.cos(2 * np.pi * Y)
    u = solve_helmholtz(params, f, grid)
    assert np.max(np.abs(u - f / (4 * np.pi ** 2 + 5))) < 1e-10
    assert np.allclose(solve_helmholtz(params, np.full((64, 64), 3.0)), 3.0 / 5.0, atol=1e-14)
    assert np.array_equal(solve_helmholtz(params, np.zeros((64, 64))), np.zeros((64, 64)))
    assert relative_residual(apply_helmholtz(params, u, grid), f) < 1e-12


def test_labeled_elliptic_samples_satisfy_residual():
    settings = GenerationSettings(resolution=32)
    for i in range(20):
        params = sample_params("poisson", [5, 15], i)
        inputs, solution, _ = build_poisson_sample(params, settings, i, True)
        assert relative_residual(apply_poisson(params, solution[0, 0]), inputs[0, 0]) < 1e-8
        hparams = sample_params("helmholtz", [5, 15], i)
        inputs, solution, _ = build_helmholtz_sample(hparams, settings, i, True)
        assert relative_residual(apply_helmholtz(hparams, solution[0, 0]), inputs[0, 0]) < 1e-8


# --- reaction-diffusion ---

def test_rd_fixed_point_is_stationary():
    params = RdParams()
    c = fixed_point(params.k)
    u0 = np.full((16, 16), c)
    traj = simulate_rd(u0, u0.copy(), params)
    assert traj.T == 101
    assert np.max(np.abs(traj.frames - c)) < 1e-10
    ru, rv = reaction(np.array(c), np.array(c), params.k)
    assert abs(ru) < 1e-15 and abs(rv) < 1e-15


def test_rd_without_diffusion_matches_ode_reference():
    params = RdParams(du=0.0, dv=0.0, dt=0.005, record_stride=20, t_final=1.0)
    u0, v0 = np.full((8, 8), 0.5), np.full((8, 8), 0.1)
    traj = simulate_rd(u0, v0, params)
    times = np.arange(traj.T) * traj.dt_record

    def rhs(t, y):
        ru, rv = reaction(y[0], y[1], params.k)
        return [ru, rv]

    ref = solve_ivp(rhs, (0.0, 1.0), [0.5, 0.1], method="DOP853", t_eval=times, rtol=1e-13, atol=1e-13)
    assert np.max(np.abs(traj.frames[:, 0, 0, 0] - ref.y[0])) < 1e-8
    assert np.max(np.abs(traj.frames[:, 1, 0, 0] - ref.y[1])) < 1e-8
    assert np.ptp(traj.frames[-1, 0]) == 0.0


def test_rd_time_stepping_is_fourth_order():
    grid = rd_grid(8)
    Y, X = grid.coordinates()
    u0, v0 = 0.5 * np.cos(np.pi * X) * np.cos(np.pi * Y), 0.2 * np.sin(np.pi * X)
    finals = []
    for dt in (0.04, 0.02, 0.01):
        params = RdParams(du=0.0, dv=0.0, dt=dt, record_stride=1, t_final=2.0)
        finals.append(simulate_rd(u0, v0, params, grid=grid).frames[-1])
    order = np.log2(np.max(np.abs(finals[0] - finals[1])) / np.max(np.abs(finals[1] - finals[2])))
    assert order >= 3.5


def test_rd_stays_bounded_on_defaults():
    grid = rd_grid(16)
    u0 = sample_grf(GrfSpec(), grid, 1).values[0]
    v0 = sample_grf(GrfSpec(), grid, 2).values[0]
    traj = simulate_rd(u0, v0, RdParams(), grid=grid)
    assert np.max(np.abs(traj.frames)) < 10


def test_rd_rejects_unstable_step():
    with pytest.raises(SolverError):
        simulate_rd(np.zeros((64, 64)), np.zeros((64, 64)), RdParams(du=1.0, dv=1.0, dt=0.01))


# --- Navier-Stokes ---

def test_ns_zero_state_stays_zero():
    traj = simulate_ns(np.zeros((16, 16)), NsParams(100.0), t_final=0.25, forcing=np.zeros((16, 16)))
    assert np.array_equal(traj.frames, np.zeros_like(traj.frames))


def test_ns_single_mode_decays_viscously():
    grid = Grid2D(64, 64)
    Y, X = grid.coordinates()
    w0 = np.sin(2 * np.pi * (X + Y))
    params = NsParams(reynolds=100.0)
    traj = simulate_ns(w0, params, t_final=0.5, grid=grid, forcing=np.zeros((64, 64)))
    expected = np.exp(-params.nu * 8 * np.pi ** 2 * 0.5) * w0
    assert np.linalg.norm(traj.frames[-1, 0] - expected) / np.linalg.norm(expected) < 1e-4


def test_ns_conserves_mean_and_dissipates_energy():
    grid = Grid2D(32, 32)
    for seed in range(3):
        w0 = sample_grf(GrfSpec(), grid, seed).values[0] + 0.3
        traj = simulate_ns(w0, NsParams(reynolds=100.0), t_final=0.5, grid=grid, forcing=np.zeros((32, 32)))
        means = traj.frames[:, 0].mean(axis=(-2, -1))
        assert np.max(np.abs(means - means[0])) < 1e-12
        ops = SpectralOps(grid)
        energy = [ops.energy(ops.to_spectral(frame[0])) for frame in traj.frames]
        assert all(b <= a * (1 + 1e-10) for a, b in zip(energy, energy[1:]))


def test_ns_records_the_configured_frames():
    params = NsParams(reynolds=300.0, record_dt=0.125, frames=5)
    traj = simulate_ns(sample_grf(GrfSpec(), Grid2D(16, 16), 0).values[0], params)
    assert traj.frames.shape == (5, 1, 16, 16)


# --- generation ---

def test_generate_poisson_layout():
    ds, report = generate("poisson", 4, [5, 15], True, 1, GenerationSettings(resolution=16))
    assert ds.inputs.shape == (4, 1, 4, 16, 16)
    assert ds.solutions.shape == (4, 1, 1, 16, 16)
    assert [c.name for c in ds.channels] == ["f", "K11", "K22", "K12"]
    assert report.labeled_secs >= report.unlabeled_secs >= 0


def test_generate_helmholtz_layout():
    ds, _ = generate("helmholtz", 2, [5, 15], True, 1, GenerationSettings(resolution=16))
    assert ds.C == 2 and ds.solutions.shape[2] == 1
    assert np.all(ds.inputs[:, 0, 1] == ds.inputs[:, 0, 1, :1, :1])


def test_generate_unlabeled_rd_snapshots():
    ds, report = generate("rd", 3, [], False, 1, GenerationSettings(resolution=16))
    assert ds.inputs.shape == (3, 1, 2, 16, 16)
    assert not ds.labeled
    assert report.labeled_secs == 0.0


def test_generate_unlabeled_ns_snapshots():
    ds, _ = generate("ns", 3, [100, 300], False, 2, GenerationSettings(resolution=16))
    assert ds.inputs.shape == (3, 1, 1, 16, 16) and not ds.labeled
    assert sorted(ds.provenance) == [f"ns:2:{i}" for i in range(3)]


def test_generate_is_independent_of_worker_count():
    settings = GenerationSettings(resolution=16)
    one, _ = generate("poisson", 6, [5, 15], True, 3, settings, max_workers=1)
    many, _ = generate("poisson", 6, [5, 15], True, 3, settings, max_workers=8)
    assert one.inputs.tobytes() == many.inputs.tobytes()
    assert one.solutions.tobytes() == many.solutions.tobytes()


def test_generate_empty_and_unknown():
    ds, _ = generate("poisson", 0, [5, 15], True, 1, GenerationSettings(resolution=16))
    assert ds.n == 0
    with pytest.raises(ConfigError):
        generate("heat", 1, [1, 2], True, 1)


def test_cost_rows_share_one_header(tmp_path):
    path = tmp_path / "cost.csv"
    append_cost_row(CostReport("rd", 50, 10.0, 0.5, host="h"), path)
    append_cost_row(CostReport("ns", 5, 3.0, 1.0, host="h"), path)
    rows = pd.read_csv(path)
    assert rows["pde"].tolist() == ["rd", "ns"]
    assert rows.loc[0, "unlabeled_secs"] < rows.loc[0, "labeled_secs"]
