import numpy as np
import pytest

from porechem.errors import ConfigError
from porechem.geometry import build_unit_cell, tile_domain
from porechem.homogenize import (
    ConvergenceReport,
    eps_cell_fluid_mean,
    extend,
    isometry_residual,
    oscillation_check,
    sweep,
    two_scale_errors,
    unfold,
)
from porechem.macro_sim import MacroConfig
from porechem.macro_sim import run as macro_run
from porechem.micro_sim import MicroConfig
from porechem.micro_sim import run as micro_run


@pytest.fixture(scope="module")
def cell():
    return build_unit_cell(0.5, (0.5, 0.5), 8)


@pytest.fixture(scope="module")
def grid(cell):
    return tile_domain(cell, 0.25)


def test_extend_constant_and_zero(grid):
    u = np.where(grid.fluid_mask, 2.5, 0.0)
    assert np.max(np.abs(extend(u, grid) - 2.5)) == 0.0
    assert np.max(np.abs(extend(np.zeros_like(u), grid))) == 0.0


def test_extend_restriction_identity(grid):
    rng = np.random.default_rng(5)
    u = np.where(grid.fluid_mask, rng.random(grid.fluid_mask.shape), 0.0)
    e = extend(u, grid)
    assert np.array_equal(e[grid.fluid_mask], u[grid.fluid_mask])


def test_extend_linear_field(grid):
    # solid fill equals the per-cell fluid mean of x1, within h of the
    # eps-cell center coordinate
    ng = grid.n_global
    xs = (np.arange(ng) + 0.5) * grid.h
    u = np.where(grid.fluid_mask, xs[:, None] * np.ones((1, ng)), 0.0)
    e = extend(u, grid)
    means = eps_cell_fluid_mean(u, grid)
    N, n = grid.cells_per_edge, grid.cell.n
    for kx in range(N):
        centers = (kx + 0.5) * grid.eps
        assert abs(means[kx, 0] - centers) <= grid.h
        block = e[kx * n : (kx + 1) * n, 0:n]
        assert np.allclose(block[grid.cell.solid], means[kx, 0], atol=1e-14)


def test_unfold_constant(grid):
    f = np.ones(grid.faces.count)
    tr = unfold(f, grid)
    assert np.max(np.abs(tr.values - 1.0)) == 0.0
    assert tr.norm_sq() == pytest.approx(grid.cell.surface_measure, abs=1e-14)


def test_unfold_single_cell_indicator(grid):
    faces = grid.faces
    target = (2, 1)
    f = ((faces.kx == target[0]) & (faces.ky == target[1])).astype(float)
    tr = unfold(f, grid)
    N = grid.cells_per_edge
    flat = target[0] * N + target[1]
    support = np.flatnonzero(np.abs(tr.values).sum(axis=1))
    assert list(support) == [flat]


def test_unfold_separable_factorization(grid):
    # f(x, y) = g(cell) * p(local face): L2 norm factorizes exactly
    rng = np.random.default_rng(11)
    N = grid.cells_per_edge
    nf = grid.cell.n_grain_faces
    g = rng.random(N * N)
    p = rng.random(nf)
    f = (g[:, None] * p[None, :]).ravel()
    tr = unfold(f, grid)
    lhs = tr.norm_sq()
    rhs = (grid.eps**2 * np.sum(g**2)) * (np.sum(p**2) / grid.cell.n)
    assert lhs == pytest.approx(rhs, rel=1e-14)


def test_isometry_random_fields(cell):
    rng = np.random.default_rng(3)
    for eps in (0.5, 0.25, 0.125):
        g = tile_domain(cell, eps)
        f = rng.standard_normal(g.faces.count)
        assert isometry_residual(f, g) <= 1e-12


def test_oscillation_constant_exact(cell):
    rows = oscillation_check(cell, lambda x1, x2, y1, y2: np.ones_like(x1), [0.5, 0.25, 0.125])
    for r in rows:
        assert r["error"] == 0.0
        assert r["product"] == pytest.approx(cell.surface_measure, rel=1e-12)


def test_oscillation_x1_off_center_decreases():
    c = build_unit_cell(0.25, (0.375, 0.5), 8)
    rows = oscillation_check(c, lambda x1, x2, y1, y2: x1, [0.5, 0.25, 0.125],
                             exact=c.surface_measure * 0.5)
    errs = [r["error"] for r in rows]
    assert errs[0] > errs[1] > errs[2] > 0.0
    # first-order in eps
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.2)


def test_oscillation_separable_decreases():
    c = build_unit_cell(0.25, (0.375, 0.5), 8)
    rows = oscillation_check(c, lambda x1, x2, y1, y2: x1 * y2, [0.5, 0.25, 0.125])
    errs = [r["error"] for r in rows]
    assert errs[0] > errs[1] > errs[2]


def _matched_runs(cell, eps, m=16, t_end=0.2):
    grid = tile_domain(cell, eps)
    micro_cfg = MicroConfig(dt=0.002, t_end=t_end, output_every=20, dirichlet_edges=(),
                            D=50.0, u_init=0.0, v_init=0.05)
    macro_cfg = MacroConfig(dt=0.002, t_end=t_end, output_every=20, dirichlet_edges=(),
                            S=np.eye(2) * 50.0 * 0.768, resolution_cells=m,
                            pore_area=cell.pore_area, surface_density=cell.surface_measure,
                            u_init=0.0, v_init=0.05)
    return micro_run(micro_cfg, grid), macro_run(macro_cfg)


def test_two_scale_errors_well_mixed_floor(cell):
    micro, macro = _matched_runs(cell, 0.25)
    row = two_scale_errors(micro, macro)
    # both solvers ride the same lumped dynamics: errors at the mixing floor
    assert row["err_u_L2"] <= 2e-3
    assert row["err_v_unfolded_L2"] <= 2e-3
    assert row["err_r_L2"] <= 2e-3


def test_two_scale_errors_equal_constant_states(cell):
    # constant equilibrium data: micro and macro fields are identical
    grid = tile_domain(cell, 0.25)
    micro_cfg = MicroConfig(dt=0.01, t_end=0.1, output_every=5, dirichlet_edges=(),
                            u_init=1.0, v_init=0.2)
    macro_cfg = MacroConfig(dt=0.01, t_end=0.1, output_every=5, dirichlet_edges=(),
                            S=np.eye(2) * 0.768, resolution_cells=16,
                            pore_area=cell.pore_area, surface_density=cell.surface_measure,
                            u_init=1.0, v_init=0.2)
    row = two_scale_errors(micro_run(micro_cfg, grid), macro_run(macro_cfg))
    assert row["err_u_L2"] <= 1e-13
    assert row["err_v_unfolded_L2"] <= 1e-13


def test_two_scale_errors_time_mismatch(cell):
    grid = tile_domain(cell, 0.25)
    micro_cfg = MicroConfig(dt=0.01, t_end=0.1, output_every=5, dirichlet_edges=(), u_init=0.1)
    macro_cfg = MacroConfig(dt=0.01, t_end=0.2, output_every=5, dirichlet_edges=(),
                            S=np.eye(2) * 0.768, resolution_cells=16,
                            pore_area=cell.pore_area, surface_density=cell.surface_measure,
                            u_init=0.1)
    with pytest.raises(ConfigError):
        two_scale_errors(micro_run(micro_cfg, grid), macro_run(macro_cfg))


def test_sweep_single_eps(cell):
    micro_cfg = MicroConfig(dt=0.01, t_end=0.1, output_every=5, dirichlet_edges=(),
                            u_init=0.0, v_init=0.05)
    macro_cfg = MacroConfig(dt=0.01, t_end=0.1, output_every=5, dirichlet_edges=(),
                            S=np.eye(2) * 0.768, resolution_cells=16,
                            pore_area=cell.pore_area, surface_density=cell.surface_measure,
                            u_init=0.0, v_init=0.05)
    report = sweep(cell, [0.5], micro_cfg, macro_cfg)
    assert len(report.rows) == 1
    assert report.rows[0]["order_u"] is None


def test_sweep_requires_decreasing(cell):
    micro_cfg = MicroConfig(dt=0.01, t_end=0.1, dirichlet_edges=())
    macro_cfg = MacroConfig(dt=0.01, t_end=0.1, dirichlet_edges=(), S=np.eye(2) * 0.768,
                            resolution_cells=16, pore_area=cell.pore_area,
                            surface_density=cell.surface_measure)
    with pytest.raises(ConfigError):
        sweep(cell, [0.25, 0.5], micro_cfg, macro_cfg)


def test_report_csv(tmp_path):
    rows = [
        dict(eps=0.5, err_u_L2=0.1, err_v_unfolded_L2=0.01, err_r_L2=0.02, order_u=None, order_v=None),
        dict(eps=0.25, err_u_L2=0.05, err_v_unfolded_L2=0.004, err_r_L2=0.01, order_u=1.0, order_v=1.3),
    ]
    path = tmp_path / "report.csv"
    ConvergenceReport(rows).write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "eps,err_u_L2,err_v_unfolded_L2,err_r_L2,order_u,order_v"
    assert lines[1].endswith(",,")
    assert len(lines) == 3
