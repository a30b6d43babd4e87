"""Structured quadrilateral meshes on rectangles with nested uniform refinement.

Node ordering is row-major with y as the outer loop: node (i, j) has index
``j * (nx + 1) + i``.  Element (i, j) has index ``j * nx + i`` and its
connectivity is counterclockwise starting from the lower-left node.  All
elements of a mesh are congruent axis-aligned rectangles, so every mesh in a
refinement family is quasi-uniform with constant 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SIDES = ("left", "right", "bottom", "top")

_TOL = 1e-12


@dataclass(frozen=True)
class BoundarySegment:
    """Parametric interval on one side of the rectangle.

    ``start``/``end`` are fractions of the side length in [0, 1].  The
    parameter runs with increasing x on the bottom/top sides and with
    increasing y on the left/right sides.  ``components`` restricts which
    displacement components a Dirichlet segment constrains.
    """

    side: str
    start: float = 0.0
    end: float = 1.0
    components: str = "both"  # "both" | "x" | "y"

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"unknown side {self.side!r}, expected one of {SIDES}")
        if not (0.0 <= self.start <= self.end <= 1.0):
            raise ValueError(f"segment interval [{self.start}, {self.end}] not in [0, 1]")
        if self.components not in ("both", "x", "y"):
            raise ValueError(f"components must be 'both', 'x' or 'y', got {self.components!r}")


@dataclass(frozen=True)
class Domain:
    """Rectangle [0, width] x [0, height] with tagged boundary segments."""

    width: float
    height: float
    dirichlet_segments: tuple[BoundarySegment, ...] = ()
    neumann_segments: tuple[BoundarySegment, ...] = ()

    def __post_init__(self):
        if self.width <= 0.0 or self.height <= 0.0:
            raise ValueError("domain extents must be positive")
        object.__setattr__(self, "dirichlet_segments", tuple(self.dirichlet_segments))
        object.__setattr__(self, "neumann_segments", tuple(self.neumann_segments))
        measure = sum(self._side_length(s.side) * (s.end - s.start)
                      for s in self.dirichlet_segments)
        if measure <= 0.0:
            raise ValueError("Dirichlet boundary must have nonzero length")
        for d in self.dirichlet_segments:
            for n in self.neumann_segments:
                if d.side == n.side:
                    overlap = min(d.end, n.end) - max(d.start, n.start)
                    if overlap > _TOL:
                        raise ValueError(
                            f"Dirichlet and Neumann segments overlap on side {d.side!r}")

    def _side_length(self, side: str) -> float:
        return self.width if side in ("bottom", "top") else self.height

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(eq=False)
class Mesh:
    """Immutable structured quad mesh.  Built via build_mesh / refine."""

    domain: Domain
    nx: int
    ny: int
    xs: np.ndarray              # (nx+1,) node x-coordinates
    ys: np.ndarray              # (ny+1,) node y-coordinates
    node_coords: np.ndarray     # (n_nodes, 2)
    elements: np.ndarray        # (n_elements, 4) CCW connectivity
    dirichlet_nodes: np.ndarray  # nodes with at least one constrained dof
    dirichlet_dof_mask: np.ndarray  # bool (2*n_nodes,)
    neumann_edges: list         # [(element, local_edge), ...]
    parent: Optional["Mesh"] = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def dx(self) -> float:
        return self.domain.width / self.nx

    @property
    def dy(self) -> float:
        return self.domain.height / self.ny

    @property
    def h(self) -> float:
        return float(np.hypot(self.dx, self.dy))

    @property
    def element_area(self) -> float:
        return self.dx * self.dy

    def node_index(self, i, j):
        return j * (self.nx + 1) + i

    def element_index(self, i, j):
        return j * self.nx + i

    def element_centers(self) -> np.ndarray:
        """(n_elements, 2) midpoints, element-index order."""
        cx = 0.5 * (self.xs[:-1] + self.xs[1:])
        cy = 0.5 * (self.ys[:-1] + self.ys[1:])
        gx, gy = np.meshgrid(cx, cy)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def ancestors(self):
        m = self.parent
        while m is not None:
            yield m
            m = m.parent


# local edge a of an element connects local nodes a and (a+1) % 4:
# edge 0 = bottom, 1 = right, 2 = top, 3 = left
_EDGE_OF_SIDE = {"bottom": 0, "right": 1, "top": 2, "left": 3}


def _segment_param(domain: Domain, side: str, xy: np.ndarray) -> np.ndarray:
    if side in ("bottom", "top"):
        return xy[:, 0] / domain.width
    return xy[:, 1] / domain.height


def _nodes_on_side(mesh_xs, mesh_ys, nx, ny, side):
    """Node indices along one side, in increasing parameter order."""
    if side == "bottom":
        return np.arange(nx + 1)
    if side == "top":
        return ny * (nx + 1) + np.arange(nx + 1)
    if side == "left":
        return np.arange(ny + 1) * (nx + 1)
    return np.arange(ny + 1) * (nx + 1) + nx


def build_mesh(domain: Domain, nx: int, ny: int) -> Mesh:
    """Build a structured nx-by-ny quad mesh of the domain."""
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")

    xs = np.linspace(0.0, domain.width, nx + 1)
    ys = np.linspace(0.0, domain.height, ny + 1)
    return _assemble_mesh(domain, nx, ny, xs, ys, parent=None)


def _assemble_mesh(domain, nx, ny, xs, ys, parent) -> Mesh:
    gx, gy = np.meshgrid(xs, ys)
    node_coords = np.column_stack([gx.ravel(), gy.ravel()])

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    ii = ii.ravel()
    jj = jj.ravel()
    n0 = jj * (nx + 1) + ii
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])

    # Dirichlet tagging: a node is constrained iff it lies on a closed segment
    dof_mask = np.zeros(2 * node_coords.shape[0], dtype=bool)
    for seg in domain.dirichlet_segments:
        side_nodes = _nodes_on_side(xs, ys, nx, ny, seg.side)
        t = _segment_param(domain, seg.side, node_coords[side_nodes])
        on = (t >= seg.start - _TOL) & (t <= seg.end + _TOL)
        nodes = side_nodes[on]
        if seg.components in ("both", "x"):
            dof_mask[2 * nodes] = True
        if seg.components in ("both", "y"):
            dof_mask[2 * nodes + 1] = True
    if not dof_mask.any():
        raise ValueError("Dirichlet boundary is empty after discretization")
    dirichlet_nodes = np.unique(np.flatnonzero(dof_mask) // 2)

    # Neumann tagging: an element edge is tagged iff it lies entirely inside a segment
    neumann_edges = []
    n_per_side = {"bottom": nx, "top": nx, "left": ny, "right": ny}
    for seg in domain.neumann_segments:
        edge = _EDGE_OF_SIDE[seg.side]
        count = n_per_side[seg.side]
        # parameter interval covered by boundary edge k on this side
        t_lo = np.arange(count) / count
        t_hi = (np.arange(count) + 1) / count
        inside = (t_lo >= seg.start - _TOL) & (t_hi <= seg.end + _TOL)
        for k in np.flatnonzero(inside):
            if seg.side == "bottom":
                e = k
            elif seg.side == "top":
                e = (ny - 1) * nx + k
            elif seg.side == "left":
                e = k * nx
            else:
                e = k * nx + nx - 1
            neumann_edges.append((int(e), edge))

    return Mesh(domain=domain, nx=nx, ny=ny, xs=xs, ys=ys,
                node_coords=node_coords, elements=elements,
                dirichlet_nodes=dirichlet_nodes, dirichlet_dof_mask=dof_mask,
                neumann_edges=neumann_edges, parent=parent)


def refine(mesh: Mesh) -> Mesh:
    """Uniform 4-to-1 refinement; shared node coordinates are bit-identical."""
    xs = np.empty(2 * mesh.nx + 1)
    xs[0::2] = mesh.xs
    xs[1::2] = 0.5 * (mesh.xs[:-1] + mesh.xs[1:])
    ys = np.empty(2 * mesh.ny + 1)
    ys[0::2] = mesh.ys
    ys[1::2] = 0.5 * (mesh.ys[:-1] + mesh.ys[1:])
    return _assemble_mesh(mesh.domain, 2 * mesh.nx, 2 * mesh.ny, xs, ys, parent=mesh)


def refinement_chain(source: Mesh, target: Mesh) -> list[Mesh]:
    """Meshes from source to target (inclusive) along parent links."""
    chain = [target]
    for m in target.ancestors():
        chain.append(m)
        if m is source:
            break
    if chain[-1] is not source:
        raise ValueError("target mesh is not a refinement of the source mesh")
    chain.reverse()
    return chain


def _prolong_dg0_once(coarse: Mesh, values: np.ndarray) -> np.ndarray:
    grid = values.reshape(coarse.ny, coarse.nx)
    fine = np.repeat(np.repeat(grid, 2, axis=0), 2, axis=1)
    return fine.ravel()


def _prolong_q1_once(coarse: Mesh, values: np.ndarray) -> np.ndarray:
    v = values.reshape(coarse.ny + 1, coarse.nx + 1, -1)
    fy, fx = 2 * coarse.ny + 1, 2 * coarse.nx + 1
    out = np.empty((fy, fx, v.shape[2]), dtype=values.dtype)
    out[0::2, 0::2] = v
    out[0::2, 1::2] = 0.5 * (v[:, :-1] + v[:, 1:])
    out[1::2, 0::2] = 0.5 * (v[:-1, :] + v[1:, :])
    out[1::2, 1::2] = 0.25 * (v[:-1, :-1] + v[:-1, 1:] + v[1:, :-1] + v[1:, 1:])
    return out.reshape(fy * fx, v.shape[2]).squeeze(axis=-1) if values.ndim == 1 \
        else out.reshape(fy * fx, v.shape[2])


def prolong_scalar(source: Mesh, values: np.ndarray, space: str, target: Mesh) -> np.ndarray:
    """Exact representation of a DG0 or Q1 field on a nested finer mesh."""
    if space not in ("DG0", "Q1"):
        raise ValueError(f"unknown space {space!r}")
    expected = source.n_elements if space == "DG0" else source.n_nodes
    if values.shape[0] != expected:
        raise ValueError("field size does not match the source mesh")
    chain = refinement_chain(source, target)
    out = np.asarray(values, dtype=float)
    for coarse in chain[:-1]:
        out = _prolong_dg0_once(coarse, out) if space == "DG0" else _prolong_q1_once(coarse, out)
    return out


def prolong_vector(source: Mesh, values: np.ndarray, target: Mesh) -> np.ndarray:
    """Prolong a vector-Q1 field given as a flat dof vector (2 dofs per node)."""
    chain = refinement_chain(source, target)
    out = np.asarray(values, dtype=float).reshape(-1, 2)
    for coarse in chain[:-1]:
        out = _prolong_q1_once(coarse, out)
    return out.ravel()
