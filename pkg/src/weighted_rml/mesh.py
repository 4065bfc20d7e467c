"""Uniform triangulated grids on the unit square and P1 finite-element assembly.

Nodes are numbered row by row, ``k = j * nx + i`` with ``i`` along x and
``j`` along y.  Each grid cell is split into two triangles along the diagonal
from its lower-left to its upper-right corner.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

EDGES = ("bottom", "right", "top", "left")


@dataclass(frozen=True)
class GridSpec:
    """Node layout of a uniform ``nx`` by ``ny`` grid on [0, 1]^2.

    ``boundary_tags`` maps each edge name to ``"dirichlet"`` or ``"neumann"``.
    The tags are informational for the prior (which treats every edge the same)
    and define the pressure boundary conditions for the Darcy model.
    """

    nx: int
    ny: int
    boundary_tags: dict = field(
        default_factory=lambda: {
            "bottom": "dirichlet",
            "right": "neumann",
            "top": "neumann",
            "left": "neumann",
        },
        compare=False,
    )

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs at least 3x3 nodes, got {self.nx}x{self.ny}")
        unknown = set(self.boundary_tags) - set(EDGES)
        if unknown:
            raise ValueError(f"unknown boundary edges: {sorted(unknown)}")

    @property
    def hx(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def hy(self) -> float:
        return 1.0 / (self.ny - 1)

    @property
    def spacing(self) -> float:
        """Cell width along x (equal to ``hy`` on square grids)."""
        return self.hx

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @cached_property
    def coords(self) -> np.ndarray:
        """(n_nodes, 2) array of node coordinates."""
        x = np.linspace(0.0, 1.0, self.nx)
        y = np.linspace(0.0, 1.0, self.ny)
        xx, yy = np.meshgrid(x, y)
        return np.column_stack([xx.ravel(), yy.ravel()])

    @cached_property
    def triangles(self) -> np.ndarray:
        """(n_tri, 3) vertex indices, counter-clockwise."""
        i, j = np.meshgrid(np.arange(self.nx - 1), np.arange(self.ny - 1))
        i, j = i.ravel(), j.ravel()
        ll = j * self.nx + i
        lr = ll + 1
        ul = ll + self.nx
        ur = ul + 1
        lower = np.column_stack([ll, lr, ur])
        upper = np.column_stack([ll, ur, ul])
        return np.vstack([lower, upper])

    def edge_nodes(self, edge: str) -> np.ndarray:
        """Node indices along one edge, ordered by increasing arc coordinate."""
        nx, ny = self.nx, self.ny
        if edge == "bottom":
            return np.arange(nx)
        if edge == "top":
            return (ny - 1) * nx + np.arange(nx)
        if edge == "left":
            return np.arange(ny) * nx
        if edge == "right":
            return np.arange(ny) * nx + nx - 1
        raise ValueError(f"unknown edge {edge!r}")

    def boundary_nodes(self, tag: str) -> np.ndarray:
        nodes = [self.edge_nodes(e) for e, t in self.boundary_tags.items() if t == tag]
        if not nodes:
            return np.empty(0, dtype=int)
        return np.unique(np.concatenate(nodes))


def element_gradients(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Basis-function gradients and areas for every triangle.

    Returns ``grads`` with shape (n_tri, 3, 2) and ``areas`` with shape (n_tri,).
    """
    xy = grid.coords[grid.triangles]  # (n_tri, 3, 2)
    x, y = xy[..., 0], xy[..., 1]
    # gradient of the barycentric coordinate attached to vertex a is
    # (y_b - y_c, x_c - x_b) / (2 * area) for the cyclic order (a, b, c)
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    twice_area = x[:, 0] * b[:, 0] + x[:, 1] * b[:, 1] + x[:, 2] * b[:, 2]
    grads = np.stack([b, c], axis=2) / twice_area[:, None, None]
    return grads, 0.5 * twice_area


def local_stiffness(grid: GridSpec) -> np.ndarray:
    """Per-triangle unit-coefficient stiffness blocks, shape (n_tri, 3, 3)."""
    grads, areas = element_gradients(grid)
    return areas[:, None, None] * np.einsum("eik,ejk->eij", grads, grads)


def assemble(grid: GridSpec, blocks: np.ndarray) -> sp.csr_matrix:
    """Scatter per-triangle 3x3 blocks into a global sparse matrix."""
    tri = grid.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = grid.n_nodes
    return sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def stiffness_matrix(grid: GridSpec, coefficient: np.ndarray | None = None) -> sp.csr_matrix:
    """P1 stiffness matrix for ``-div(k grad u)`` with one coefficient per triangle."""
    blocks = local_stiffness(grid)
    if coefficient is not None:
        blocks = blocks * np.asarray(coefficient)[:, None, None]
    return assemble(grid, blocks)


def lumped_mass(grid: GridSpec) -> np.ndarray:
    """Diagonal of the row-sum lumped P1 mass matrix."""
    _, areas = element_gradients(grid)
    diag = np.zeros(grid.n_nodes)
    np.add.at(diag, grid.triangles.ravel(), np.repeat(areas / 3.0, 3))
    return diag


def lumped_boundary_mass(grid: GridSpec, edges=EDGES) -> np.ndarray:
    """Diagonal of the lumped 1-D mass matrix over the given boundary edges."""
    diag = np.zeros(grid.n_nodes)
    for edge in edges:
        nodes = grid.edge_nodes(edge)
        h = grid.hx if edge in ("bottom", "top") else grid.hy
        w = np.full(len(nodes), h)
        w[[0, -1]] = 0.5 * h
        np.add.at(diag, nodes, w)
    return diag
