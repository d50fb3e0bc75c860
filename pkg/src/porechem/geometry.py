"""Periodic perforated geometry on structured Cartesian grids.

The unit cell ``Z = (0,1)^2`` contains a single axis-aligned square grain
(the perforation) whose edges coincide with grid lines, so the grain
boundary is exactly a union of grid faces.  The computational domain
``(0,1)^2`` is tiled with ``1/eps`` scaled copies of the cell per edge.
All geometric measures (pore area, grain perimeter) are therefore exact,
which the rest of the package relies on for its conservation identities.

Index convention: arrays are indexed ``[ix, iy]`` with x varying along the
first axis.  Cell ``(ix, iy)`` covers ``[ix*h, (ix+1)*h] x [iy*h, (iy+1)*h]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import GeometryError

_ALIGN_TOL = 1e-9


def _aligned_int(x, what):
    """Round x to an integer, raising when it is not one (grid alignment)."""
    k = int(round(x))
    if abs(x - k) > _ALIGN_TOL:
        raise GeometryError(f"{what} = {x} is not an integer; perforation is off-grid")
    return k


@dataclass(frozen=True)
class UnitCell:
    """Reference cell: unit square with a grid-aligned square grain.

    Parameters
    ----------
    n : grid cells per cell edge.
    hole_side : side length of the square grain, ``0 <= hole_side < 1``.
        ``hole_side = 0`` is the degenerate no-perforation cell (empty
        grain boundary); downstream solvers treat it as a special case.
    hole_center : grain center, strictly inside ``(0,1)^2``.
    """

    n: int
    hole_side: float
    hole_center: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        if self.n < 1 or int(self.n) != self.n:
            raise GeometryError(f"resolution n must be a positive integer, got {self.n}")
        a = self.hole_side
        if a < 0.0:
            raise GeometryError(f"hole_side must be nonnegative, got {a}")
        if a == 0.0:
            return
        for c in self.hole_center:
            if not (c - a / 2.0 > 0.0 and c + a / 2.0 < 1.0):
                raise GeometryError(
                    f"grain [{c - a / 2.0}, {c + a / 2.0}] touches the cell boundary; "
                    "its closure must lie strictly inside (0,1)^2"
                )
        _aligned_int(self.n * a, "n*hole_side")
        for c in self.hole_center:
            _aligned_int(self.n * (c - a / 2.0), "n*(hole_center - hole_side/2)")

    @property
    def dim(self) -> int:
        return 2

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def hole_cells(self) -> int:
        """Grain side length in grid cells."""
        return _aligned_int(self.n * self.hole_side, "n*hole_side") if self.hole_side else 0

    @property
    def pore_area(self) -> float:
        """|Y| = 1 - hole_side^2, exact for the aligned square grain."""
        return 1.0 - self.hole_side * self.hole_side

    @property
    def surface_measure(self) -> float:
        """Grain perimeter |Gamma| = 4*hole_side."""
        return 4.0 * self.hole_side

    @cached_property
    def solid(self) -> np.ndarray:
        """Boolean (n, n) mask of solid cells."""
        mask = np.zeros((self.n, self.n), dtype=bool)
        if self.hole_side == 0.0:
            return mask
        na = self.hole_cells
        i0 = _aligned_int(self.n * (self.hole_center[0] - self.hole_side / 2.0), "corner")
        j0 = _aligned_int(self.n * (self.hole_center[1] - self.hole_side / 2.0), "corner")
        mask[i0 : i0 + na, j0 : j0 + na] = True
        return mask

    @cached_property
    def fluid(self) -> np.ndarray:
        return ~self.solid

    @cached_property
    def grain_faces(self):
        """Reference grain faces as a struct of arrays.

        Returns ``(owner_i, owner_j, axis, sign, y_ref)`` where the owner is
        the fluid cell, ``axis`` is the face normal axis, ``sign`` is +1 when
        the solid neighbour sits on the positive side (so the normal
        ``sign * e_axis`` points from the fluid into the grain), and
        ``y_ref`` (nf, 2) holds face centers in unit-cell coordinates.
        Enumeration order is fixed (vertical faces first, lexicographic),
        so tiled grids share it and unfolding is a plain reshape.
        """
        solid = self.solid
        n = self.n
        owner_i, owner_j, axis, sign, yx, yy = [], [], [], [], [], []
        # vertical faces: between (i-1, j) and (i, j), normal along x
        for i in range(n):
            for j in range(n):
                left, right = solid[(i - 1) % n, j], solid[i, j]
                if left == right:
                    continue
                if right:  # fluid owner on the left, normal +x into the grain
                    owner_i.append((i - 1) % n)
                    owner_j.append(j)
                    sign.append(1)
                else:
                    owner_i.append(i)
                    owner_j.append(j)
                    sign.append(-1)
                axis.append(0)
                yx.append(i / n)
                yy.append((j + 0.5) / n)
        # horizontal faces: between (i, j-1) and (i, j), normal along y
        for i in range(n):
            for j in range(n):
                below, above = solid[i, (j - 1) % n], solid[i, j]
                if below == above:
                    continue
                if above:
                    owner_i.append(i)
                    owner_j.append((j - 1) % n)
                    sign.append(1)
                else:
                    owner_i.append(i)
                    owner_j.append(j)
                    sign.append(-1)
                axis.append(1)
                yx.append((i + 0.5) / n)
                yy.append(j / n)
        y_ref = np.column_stack([np.asarray(yx), np.asarray(yy)]) if yx else np.zeros((0, 2))
        return (
            np.asarray(owner_i, dtype=np.intp),
            np.asarray(owner_j, dtype=np.intp),
            np.asarray(axis, dtype=np.int8),
            np.asarray(sign, dtype=np.int8),
            y_ref,
        )

    @property
    def n_grain_faces(self) -> int:
        return self.grain_faces[0].size


def build_unit_cell(hole_side: float, center=(0.5, 0.5), n: int = 8) -> UnitCell:
    """Validate and build a unit cell; raises GeometryError when misaligned."""
    return UnitCell(n=n, hole_side=hole_side, hole_center=tuple(center))


@dataclass(frozen=True)
class BoundaryFaces:
    """All grain faces of a tiled grid, as parallel arrays.

    ``owner_ix/owner_iy`` index the fluid cell owning the face on the global
    grid; ``sign * e_axis`` is the unit normal pointing into the grain;
    ``kx/ky`` index the parent eps-cell; ``local`` indexes the matching
    reference face on the unit cell; ``centers`` are global face midpoints
    computed as ``eps * (k + y_ref)`` so the unfolding identity is exact.
    """

    owner_ix: np.ndarray
    owner_iy: np.ndarray
    axis: np.ndarray
    sign: np.ndarray
    kx: np.ndarray
    ky: np.ndarray
    local: np.ndarray
    centers: np.ndarray
    measure: float

    @property
    def count(self) -> int:
        return self.owner_ix.size


@dataclass(frozen=True)
class PerforatedGrid:
    """eps-periodic tiling of the unit cell over the unit square."""

    cell: UnitCell
    cells_per_edge: int  # 1/eps

    def __post_init__(self):
        if self.cells_per_edge < 1:
            raise GeometryError(f"1/eps must be a positive integer, got {self.cells_per_edge}")
        # reject geometries whose pore space is not connected
        if self.cell.hole_side > 0.0:
            labels, num = ndimage.label(self.fluid_mask)
            if num != 1:
                raise GeometryError(f"fluid region is disconnected ({num} components)")

    @property
    def eps(self) -> float:
        return 1.0 / self.cells_per_edge

    @property
    def n_global(self) -> int:
        return self.cells_per_edge * self.cell.n

    @property
    def h(self) -> float:
        return 1.0 / self.n_global

    @cached_property
    def fluid_mask(self) -> np.ndarray:
        """Boolean (n_global, n_global) mask of fluid cells."""
        N = self.cells_per_edge
        return np.tile(self.cell.fluid, (N, N))

    @cached_property
    def fluid_index(self) -> np.ndarray:
        """Map (ix, iy) -> flat fluid-cell index, -1 on solid cells."""
        idx = -np.ones(self.fluid_mask.shape, dtype=np.intp)
        idx[self.fluid_mask] = np.arange(self.n_fluid_cells)
        return idx

    @property
    def n_fluid_cells(self) -> int:
        return int(np.count_nonzero(self.fluid_mask))

    @cached_property
    def faces(self) -> BoundaryFaces:
        N, n = self.cells_per_edge, self.cell.n
        oi, oj, axis, sign, y_ref = self.cell.grain_faces
        nf_loc = oi.size
        kx = np.repeat(np.arange(N), N)  # eps-cell order: kx-major
        ky = np.tile(np.arange(N), N)
        kx_all = np.repeat(kx, nf_loc)
        ky_all = np.repeat(ky, nf_loc)
        local = np.tile(np.arange(nf_loc, dtype=np.intp), N * N)
        owner_ix = kx_all * n + np.tile(oi, N * N)
        owner_iy = ky_all * n + np.tile(oj, N * N)
        centers = self.eps * (np.column_stack([kx_all, ky_all]) + y_ref[local])
        return BoundaryFaces(
            owner_ix=owner_ix,
            owner_iy=owner_iy,
            axis=np.tile(axis, N * N),
            sign=np.tile(sign, N * N),
            kx=kx_all,
            ky=ky_all,
            local=local,
            centers=centers,
            measure=self.h,
        )

    def eps_cell_of(self, ix, iy):
        """eps-cell index (kx, ky) and local cell index of global cell (ix, iy)."""
        n = self.cell.n
        return (ix // n, iy // n), (ix % n, iy % n)


@dataclass(frozen=True)
class Measures:
    porosity: float          # |Y|
    surface_density: float   # |Gamma| per unit cell
    fluid_volume: float      # |Omega^eps|
    surface_measure: float   # |Gamma^eps|


def tile_domain(cell: UnitCell, eps: float) -> PerforatedGrid:
    """Tile the unit square with eps-scaled cells; requires 1/eps integer."""
    inv = 1.0 / eps
    N = int(round(inv))
    if N < 1 or abs(inv - N) > _ALIGN_TOL * max(1.0, inv):
        raise GeometryError(f"1/eps must be a positive integer, got 1/eps = {inv}")
    return PerforatedGrid(cell=cell, cells_per_edge=N)


def measures(grid: PerforatedGrid) -> Measures:
    """Exact measures of the perforated domain (grid-aligned geometry)."""
    cell = grid.cell
    h2 = grid.h * grid.h
    return Measures(
        porosity=cell.pore_area,
        surface_density=cell.surface_measure,
        fluid_volume=grid.n_fluid_cells * h2,
        surface_measure=grid.faces.count * grid.h,
    )


def write_classification(grid: PerforatedGrid, path):
    """Dump the fluid/solid classification as a structured-grid text file.

    Header: ``nx ny`` then ``h``; body: ny rows of nx integers (1 fluid,
    0 solid), row iy increasing, x along each row.
    """
    ng = grid.n_global
    with open(path, "w") as f:
        f.write(f"{ng} {ng}\n{grid.h!r}\n")
        mask = grid.fluid_mask
        for iy in range(ng):
            f.write(" ".join("1" if mask[ix, iy] else "0" for ix in range(ng)) + "\n")
