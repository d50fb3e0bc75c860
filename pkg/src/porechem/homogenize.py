"""Numerical two-scale machinery: extension, boundary unfolding, oscillating
surface quadrature, and the micro-to-macro error sweep.

The unfolding operator maps a grain-face field to the product domain
(eps-cell) x (reference boundary),  T f(x, y) = f(eps [x/eps] + eps y).
On the aligned geometry this is a pure reindexing, so the L2 isometry

    integral over Omega x Gamma of |T f|^2  =  eps * integral over
    Gamma^eps of |f|^2

is the same finite sum reweighted (eps^2 * 1/n per unfolded sample versus
eps * h per face, with h = eps/n) and holds to round-off.

Micro fields are extended into the grain by the per-cell fluid mean before
being compared against macro fields averaged onto the eps-cell partition;
this keeps the comparison free of interpolation bias at the grain walls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geometry import PerforatedGrid, UnitCell, tile_domain
from .kinetics import RateLaw
from .macro_sim import MacroConfig, MacroRun
from .macro_sim import run as macro_run_fn
from .micro_sim import MicroConfig, MicroRun, difference_quotient_norm
from .micro_sim import run as micro_run_fn


# ---------------------------------------------------------------------------
# extension and unfolding
# ---------------------------------------------------------------------------

def eps_cell_fluid_mean(u: np.ndarray, grid: PerforatedGrid) -> np.ndarray:
    """Mean of u over the fluid cells of each eps-cell, shape (N, N)."""
    N, n = grid.cells_per_edge, grid.cell.n
    blocks = u.reshape(N, n, N, n)
    count = int(grid.cell.fluid.sum())
    return blocks.sum(axis=(1, 3)) / count  # u is zero on solid cells


def extend(u: np.ndarray, grid: PerforatedGrid) -> np.ndarray:
    """Fill the grain cells of each eps-cell with that cell's fluid mean.

    The restriction to fluid cells is the input field, exactly.
    """
    N, n = grid.cells_per_edge, grid.cell.n
    mean = eps_cell_fluid_mean(u, grid)
    blocks = u.reshape(N, n, N, n).copy()
    fluid = grid.cell.fluid[None, :, None, :]
    blocks = np.where(fluid, blocks, mean[:, None, :, None])
    return blocks.reshape(N * n, N * n)


@dataclass(frozen=True)
class UnfoldedTrace:
    """Grain-face field reindexed as (eps-cell, reference face)."""

    values: np.ndarray      # (N*N, faces per cell), eps-cell kx-major
    eps: float
    y_measure: float        # reference face length, 1/n
    t: float = 0.0

    def norm_sq(self) -> float:
        """Squared L2 norm over Omega x Gamma."""
        return float(self.eps**2 * self.y_measure * np.sum(self.values**2))


def unfold(f: np.ndarray, grid: PerforatedGrid, t: float = 0.0) -> UnfoldedTrace:
    """Unfold a per-face field; verifies the isometry against the eps-scaled
    surface norm as a construction check."""
    nf_loc = grid.cell.n_grain_faces
    N = grid.cells_per_edge
    if f.shape != (N * N * nf_loc,):
        raise ValueError(f"face field has wrong length {f.shape}")
    tr = UnfoldedTrace(
        values=f.reshape(N * N, nf_loc).copy(),
        eps=grid.eps,
        y_measure=1.0 / grid.cell.n,
        t=t,
    )
    surface = grid.eps * grid.h * float(np.sum(f**2))
    if abs(tr.norm_sq() - surface) > 1e-12 * max(surface, 1.0):
        raise AssertionError("unfolding isometry violated; face enumeration is broken")
    return tr


def isometry_residual(f: np.ndarray, grid: PerforatedGrid) -> float:
    """|unfolded norm^2 - eps * surface norm^2| for a face field."""
    tr = unfold(f, grid)
    surface = grid.eps * grid.h * float(np.sum(f**2))
    return abs(tr.norm_sq() - surface)


# ---------------------------------------------------------------------------
# oscillation quadrature
# ---------------------------------------------------------------------------

def oscillation_check(cell: UnitCell, f, eps_list, exact: float | None = None, x_quad: int = 512):
    """Oscillating surface quadrature  eps * sum f(x, x/eps) h  against the
    product integral over Omega x Gamma.

    ``f(x1, x2, y1, y2)`` must accept arrays.  When ``exact`` is omitted the
    product integral is evaluated by midpoint quadrature on an x_quad^2 grid
    times the reference faces.  Returns rows of (eps, oscillating, product,
    error).
    """
    _, _, _, _, y_ref = cell.grain_faces
    if y_ref.shape[0] == 0:
        raise ConfigError("oscillation quadrature needs a nonempty grain boundary")
    if exact is None:
        xs = (np.arange(x_quad) + 0.5) / x_quad
        X1, X2 = np.meshgrid(xs, xs, indexing="ij")
        total = 0.0
        for y1, y2 in y_ref:
            total += np.sum(f(X1, X2, y1, y2))
        exact = float(total / (x_quad * x_quad) / cell.n)
    rows = []
    for eps in eps_list:
        grid = tile_domain(cell, eps)
        fc = grid.faces.centers
        yy = y_ref[grid.faces.local]
        vals = f(fc[:, 0], fc[:, 1], yy[:, 0], yy[:, 1])
        osc = float(eps * grid.h * np.sum(vals))
        rows.append({"eps": eps, "oscillating": osc, "product": exact, "error": abs(osc - exact)})
    return rows


# ---------------------------------------------------------------------------
# two-scale error norms and the sweep
# ---------------------------------------------------------------------------

def _macro_on_eps_cells(u_macro: np.ndarray, N: int) -> np.ndarray:
    m = u_macro.shape[0]
    if m % N != 0:
        raise ConfigError(f"macro resolution {m} is not a multiple of 1/eps = {N}")
    b = m // N
    return u_macro.reshape(N, b, N, b).mean(axis=(1, 3))


def _check_times(t1, t2):
    if len(t1) != len(t2) or np.max(np.abs(np.asarray(t1) - np.asarray(t2))) > 1e-9:
        raise ConfigError("micro and macro output times do not match")


def two_scale_errors(micro: MicroRun, macro: MacroRun, law: RateLaw | None = None) -> dict:
    """Space-time errors between one micro run and the macro run.

    Volume error: L2(Omega x (0,T)) distance between the grain-filled
    extension of the micro solute and the macro solute averaged per eps-cell.
    Boundary error: L2(Omega x Gamma x (0,T)) distance between the unfolded
    precipitate trace and the (y-independent) eps-cell average of the macro
    precipitate.  The rate error applies r(.) before the volume norm.
    """
    _check_times(micro.times, macro.times)
    grid = micro.grid
    N, n = grid.cells_per_edge, grid.cell.n
    h2 = grid.h**2
    law = law if law is not None else micro.cfg.rate_law
    e_u = np.empty(len(micro.times))
    e_v = np.empty(len(micro.times))
    e_r = np.empty(len(micro.times))
    y_meas = 1.0 / n
    for i, (ms, Ms) in enumerate(zip(micro.states, macro.states)):
        u_ext = extend(ms.u, grid)
        U = _macro_on_eps_cells(Ms.u, N)
        U_fine = np.repeat(np.repeat(U, n, axis=0), n, axis=1)
        e_u[i] = np.sum((u_ext - U_fine) ** 2) * h2
        e_r[i] = np.sum((law.rate(u_ext) - law.rate(U_fine)) ** 2) * h2
        tr = ms.v.reshape(N * N, grid.cell.n_grain_faces)
        V = _macro_on_eps_cells(Ms.v, N).reshape(N * N)  # kx-major, matching faces
        e_v[i] = grid.eps**2 * y_meas * np.sum((tr - V[:, None]) ** 2)
    times = np.asarray(micro.times, dtype=float)
    dt_w = np.zeros_like(times)  # trapezoid weights on the time axis
    if len(times) > 1:
        gaps = np.diff(times)
        dt_w[:-1] += 0.5 * gaps
        dt_w[1:] += 0.5 * gaps
    return {
        "eps": grid.eps,
        "err_u_L2": float(np.sqrt(np.sum(e_u * dt_w))),
        "err_v_unfolded_L2": float(np.sqrt(np.sum(e_v * dt_w))),
        "err_r_L2": float(np.sqrt(np.sum(e_r * dt_w))),
    }


@dataclass
class ConvergenceReport:
    rows: list

    def write_csv(self, path):
        cols = ["eps", "err_u_L2", "err_v_unfolded_L2", "err_r_L2", "order_u", "order_v"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                fh.write(
                    ",".join(
                        format(r[c], ".17g") if r.get(c) is not None else "" for c in cols
                    )
                    + "\n"
                )


def sweep(
    cell: UnitCell,
    eps_list,
    micro_cfg: MicroConfig,
    macro_cfg: MacroConfig,
    stokes=None,
) -> ConvergenceReport:
    """Run the macro problem once and the micro problem per eps, and report
    the two-scale errors with observed orders between consecutive eps."""
    eps_list = list(eps_list)
    if any(e2 >= e1 for e1, e2 in zip(eps_list, eps_list[1:])):
        raise ConfigError("eps_list must be strictly decreasing")
    macro = macro_run_fn(macro_cfg)
    rows = []
    dq_rows = []
    for eps in eps_list:
        grid = tile_domain(cell, eps)
        micro = micro_run_fn(micro_cfg, grid, stokes)
        row = two_scale_errors(micro, macro)
        if len(micro.times) > 1:
            dq = difference_quotient_norm(micro, micro.times[1] - micro.times[0])
            dq_rows.append(float(np.max(dq)))
        else:
            dq_rows.append(0.0)
        rows.append(row)
    for i, row in enumerate(rows):
        if i == 0:
            row["order_u"] = None
            row["order_v"] = None
        else:
            span = np.log(rows[i - 1]["eps"] / row["eps"])
            row["order_u"] = _order(rows[i - 1]["err_u_L2"], row["err_u_L2"], span)
            row["order_v"] = _order(rows[i - 1]["err_v_unfolded_L2"], row["err_v_unfolded_L2"], span)
        row["dq_max"] = dq_rows[i]
    return ConvergenceReport(rows=rows)


def _order(e_prev, e_next, log_span):
    if e_prev <= 0.0 or e_next <= 0.0:
        return None
    return float(np.log(e_prev / e_next) / log_span)
