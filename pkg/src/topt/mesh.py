"""Structured quadrilateral meshes over rectangular domains with region masks.

Conventions used throughout the package:

* Nodes are numbered row-major over the structured grid (x fastest), then
  compacted so that only nodes referenced by at least one element remain.
* Each element stores its 4 node indices counter-clockwise starting at the
  bottom-left corner.
* A degree of freedom (DOF) is ``2 * node + d`` with ``d = 0`` for x and
  ``d = 1`` for y.
* All elements are squares of side ``h``; the optimizer relies on the
  one-value-per-element layout for volume bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

X, Y = 0, 1


class MeshError(ValueError):
    """Invalid domain description or degenerate mesh request."""


class TopologyError(RuntimeError):
    """A topology state cannot carry the applied loads."""


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise MeshError(f"non-finite point ({self.x}, {self.y})")


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, used for masked (removed) regions."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax


@dataclass(frozen=True)
class DomainSpec:
    """Rectangular design domain discretized into nx-by-ny square elements."""

    width: float
    height: float
    nx: int
    ny: int
    masked_regions: tuple[Rect, ...] = ()

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise MeshError(f"element counts must be >= 1, got nx={self.nx} ny={self.ny}")
        if self.width <= 0 or self.height <= 0:
            raise MeshError("domain dimensions must be positive")
        hx = self.width / self.nx
        hy = self.height / self.ny
        if abs(hx - hy) > 1e-12 * max(hx, hy):
            raise MeshError(f"elements must be square: width/nx={hx} != height/ny={hy}")
        for r in self.masked_regions:
            if r.xmin >= r.xmax or r.ymin >= r.ymax:
                raise MeshError(f"degenerate masked region {r}")
            if r.xmin < -1e-12 or r.ymin < -1e-12 or r.xmax > self.width + 1e-12 or r.ymax > self.height + 1e-12:
                raise MeshError(f"masked region {r} outside the domain bounding box")

    @property
    def element_size(self) -> float:
        return self.width / self.nx


@dataclass(frozen=True)
class PointLoad:
    case: int
    node: int
    direction: tuple[float, float]  # unit 2-vector
    magnitude: float


@dataclass
class BoundarySpec:
    """Fixed DOFs, point loads, and monitored (constraint-point) nodes."""

    fixed_dofs: set[tuple[int, int]] = field(default_factory=set)  # (node, X|Y)
    point_loads: list[PointLoad] = field(default_factory=list)
    monitor_nodes: set[int] = field(default_factory=set)

    def fix_node(self, node: int, directions: str = "xy") -> None:
        for d in directions:
            self.fixed_dofs.add((node, X if d == "x" else Y))

    def load_cases(self) -> list[int]:
        return sorted({p.case for p in self.point_loads})

    def loaded_nodes(self) -> set[int]:
        return {p.node for p in self.point_loads}

    def validate(self, n_nodes: int) -> None:
        if len(self.fixed_dofs) < 3:
            raise MeshError("need at least 3 fixed DOFs to remove rigid-body modes")
        for node, d in self.fixed_dofs:
            if not 0 <= node < n_nodes:
                raise MeshError(f"fixed node {node} out of range")
        for p in self.point_loads:
            if not 0 <= p.node < n_nodes:
                raise MeshError(f"load node {p.node} out of range")
            nx_, ny_ = p.direction
            if abs(np.hypot(nx_, ny_) - 1.0) > 1e-9:
                raise MeshError(f"load direction {p.direction} is not a unit vector")
            if (p.node, X) in self.fixed_dofs and (p.node, Y) in self.fixed_dofs:
                raise MeshError(f"load applied to fully fixed node {p.node}")


class Mesh:
    """Immutable structured quad mesh (possibly with masked regions removed).

    Attributes
    ----------
    nodes : (n_nodes, 2) float array of coordinates.
    elements : (n_elements, 4) int array, CCW node indices.
    element_grid : (n_elements, 2) int array of (column i, row j) grid cells.
    grid_shape : (nx, ny) of the underlying structured grid.
    h : element side length; element_area = h**2.
    """

    def __init__(self, nodes, elements, element_grid, grid_shape, h):
        self.nodes = np.asarray(nodes, dtype=float)
        self.elements = np.asarray(elements, dtype=np.int64)
        self.element_grid = np.asarray(element_grid, dtype=np.int64)
        self.grid_shape = tuple(grid_shape)
        self.h = float(h)
        self.element_area = self.h * self.h
        # mesh DOF layout: 2 per node
        self.n_nodes = len(self.nodes)
        self.n_elements = len(self.elements)
        self.n_dofs = 2 * self.n_nodes
        # element -> 8 mesh DOFs, node-interleaved (ux0, uy0, ux1, ...)
        ed = np.empty((self.n_elements, 8), dtype=np.int64)
        ed[:, 0::2] = 2 * self.elements
        ed[:, 1::2] = 2 * self.elements + 1
        self.edofs = ed
        self.centroids = self.nodes[self.elements].mean(axis=1)
        self._node_elements = self._build_incidence()
        for a in (self.nodes, self.elements, self.element_grid, self.edofs, self.centroids):
            a.flags.writeable = False

    def _build_incidence(self):
        counts = np.zeros(self.n_nodes, dtype=np.int64)
        np.add.at(counts, self.elements.ravel(), 1)
        indptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = np.empty(indptr[-1], dtype=np.int64)
        cursor = indptr[:-1].copy()
        for e in range(self.n_elements):
            for n in self.elements[e]:
                indices[cursor[n]] = e
                cursor[n] += 1
        return indptr, indices

    def node_elements(self, node: int) -> np.ndarray:
        """Elements incident to a node (sorted by element index)."""
        indptr, indices = self._node_elements
        return np.sort(indices[indptr[node]:indptr[node + 1]])

    def bounding_box(self) -> tuple[float, float, float, float]:
        return (self.nodes[:, 0].min(), self.nodes[:, 1].min(),
                self.nodes[:, 0].max(), self.nodes[:, 1].max())


@dataclass
class TopologyState:
    """Solid/void characteristic set over the mesh elements."""

    solid: np.ndarray  # (n_elements,) bool
    volume_fraction: float
    tau: float = -np.inf

    @classmethod
    def full(cls, mesh: Mesh) -> "TopologyState":
        return cls(solid=np.ones(mesh.n_elements, dtype=bool), volume_fraction=1.0)

    def count(self) -> int:
        return int(self.solid.sum())


def build_mesh(spec: DomainSpec) -> tuple[Mesh, BoundarySpec]:
    """Build the structured grid, dropping masked cells and unused nodes.

    Deterministic: a given spec always produces bit-identical arrays. A cell
    is masked when its centroid falls inside any masked rectangle.
    """
    nx, ny = spec.nx, spec.ny
    h = spec.element_size

    gx = np.arange(nx + 1) * h
    gy = np.arange(ny + 1) * h
    full_nodes = np.column_stack([np.tile(gx, ny + 1), np.repeat(gy, nx + 1)])

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    ii = ii.T.ravel()  # row-major over cells: j outer, i inner
    jj = jj.T.ravel()
    cx = (ii + 0.5) * h
    cy = (jj + 0.5) * h
    keep = np.ones(len(ii), dtype=bool)
    for r in spec.masked_regions:
        keep &= ~((cx >= r.xmin) & (cx <= r.xmax) & (cy >= r.ymin) & (cy <= r.ymax))
    if not keep.any():
        raise MeshError("masked regions cover the whole domain")

    ii, jj = ii[keep], jj[keep]
    n0 = jj * (nx + 1) + ii
    elements_full = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])

    used = np.unique(elements_full)
    remap = np.full(len(full_nodes), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return (
        Mesh(
            nodes=full_nodes[used],
            elements=remap[elements_full],
            element_grid=np.column_stack([ii, jj]),
            grid_shape=(nx, ny),
            h=h,
        ),
        BoundarySpec(),
    )


def locate_node(mesh: Mesh, p: Point2) -> int:
    """Index of the node nearest to p; ties broken by lowest index."""
    x0, y0, x1, y1 = mesh.bounding_box()
    slack = 1e-9 * max(x1 - x0, y1 - y0)
    if not (x0 - slack <= p.x <= x1 + slack and y0 - slack <= p.y <= y1 + slack):
        raise MeshError(f"point ({p.x}, {p.y}) outside mesh bounding box")
    d2 = (mesh.nodes[:, 0] - p.x) ** 2 + (mesh.nodes[:, 1] - p.y) ** 2
    dmin = d2.min()
    ties = np.flatnonzero(d2 <= dmin * (1.0 + 1e-12) + 1e-300)
    return int(ties.min())


class ActiveMesh:
    """Solid-element submesh with DOF bookkeeping for the reduced system.

    Elements in solid components that are not edge-connected to any fixed
    node are excluded (they would make the stiffness matrix singular); they
    are reported in ``detached_elements``.
    """

    def __init__(self, mesh: Mesh, element_ids, free_dofs, fixed_active, dangling_dofs,
                 detached_elements):
        self.mesh = mesh
        self.element_ids = element_ids          # active (analyzed) elements
        self.free_dofs = free_dofs              # mesh DOF ids, sorted
        self.fixed_active = fixed_active        # fixed mesh DOFs on active nodes
        self.dangling_dofs = dangling_dofs      # mesh DOFs on untouched nodes
        self.detached_elements = detached_elements
        self.n_free = len(free_dofs)
        # mesh DOF -> reduced index (-1 when eliminated)
        red = np.full(mesh.n_dofs, -1, dtype=np.int64)
        red[free_dofs] = np.arange(self.n_free)
        self.reduced_index = red
        self.edofs = mesh.edofs[element_ids]


def _support_connected(mesh: Mesh, solid: np.ndarray, fixed_nodes: np.ndarray) -> np.ndarray:
    """Mask of solid elements edge-connected to a component holding a fixed node."""
    nx, ny = mesh.grid_shape
    grid = np.full((nx, ny), -1, dtype=np.int64)
    gi, gj = mesh.element_grid[:, 0], mesh.element_grid[:, 1]
    grid[gi, gj] = np.arange(mesh.n_elements)
    solid_ids = np.flatnonzero(solid)

    seeds = set()
    for n in fixed_nodes:
        for e in mesh.node_elements(int(n)):
            if solid[e]:
                seeds.add(int(e))
    reach = np.zeros(mesh.n_elements, dtype=bool)
    stack = sorted(seeds)
    reach[stack] = True
    while stack:
        e = stack.pop()
        i, j = gi[e], gj[e]
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = i + di, j + dj
            if 0 <= ni < nx and 0 <= nj < ny:
                ne = grid[ni, nj]
                if ne >= 0 and solid[ne] and not reach[ne]:
                    reach[ne] = True
                    stack.append(ne)
    out = np.zeros(mesh.n_elements, dtype=bool)
    out[solid_ids] = reach[solid_ids]
    return out


def repair_connectivity(mesh: Mesh, topo: TopologyState, previous: TopologyState,
                        boundary: BoundarySpec) -> TopologyState:
    """Re-attach orphaned load/monitor nodes after a cut.

    A rank-based cut can sever the (often unstressed, hence low-sensitivity)
    path that keeps a loaded or monitored node connected; removing that last
    link is a discontinuous event the first-order field cannot see. The
    repair walks the previous topology -- which was connected -- and restores
    a shortest element path from the node back to the support-connected
    structure.
    """
    nx, ny = mesh.grid_shape
    grid = np.full((nx, ny), -1, dtype=np.int64)
    gi, gj = mesh.element_grid[:, 0], mesh.element_grid[:, 1]
    grid[gi, gj] = np.arange(mesh.n_elements)
    fixed_nodes = np.unique([n for n, _ in boundary.fixed_dofs])
    must_carry = sorted(boundary.loaded_nodes() | boundary.monitor_nodes)

    solid = topo.solid.copy()
    changed = False
    for _ in range(len(must_carry)):
        connected = _support_connected(mesh, solid, fixed_nodes)
        orphans = [n for n in must_carry
                   if not any(connected[e] for e in mesh.node_elements(n))]
        if not orphans:
            break
        node = orphans[0]
        seeds = [int(e) for e in mesh.node_elements(node) if previous.solid[e]]
        # breadth-first over the previous solid set toward the connected part
        parent = {e: -1 for e in seeds}
        queue = list(seeds)
        goal = -1
        while queue:
            e = queue.pop(0)
            if connected[e]:
                goal = e
                break
            i, j = gi[e], gj[e]
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ni, nj = i + di, j + dj
                if 0 <= ni < nx and 0 <= nj < ny:
                    ne = grid[ni, nj]
                    if ne >= 0 and previous.solid[ne] and ne not in parent:
                        parent[int(ne)] = e
                        queue.append(int(ne))
        if goal < 0:
            break  # nothing to restore from; let active_submesh report it
        e = goal
        while e >= 0:
            if not solid[e]:
                solid[e] = True
                changed = True
            # widen the bridge: a single-element path is a near-mechanism
            i, j = gi[e], gj[e]
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ni, nj = i + di, j + dj
                if 0 <= ni < nx and 0 <= nj < ny:
                    ne = grid[ni, nj]
                    if ne >= 0 and previous.solid[ne] and not solid[ne]:
                        solid[ne] = True
                        changed = True
            e = parent[e]
    if not changed:
        return topo
    return TopologyState(solid=solid,
                         volume_fraction=float(solid.sum()) / mesh.n_elements,
                         tau=topo.tau)


def active_submesh(mesh: Mesh, topo: TopologyState, boundary: BoundarySpec) -> ActiveMesh:
    """Derive the analyzable submesh for a topology state.

    Raises TopologyError when a loaded or monitored node has no attached
    solid element connected to the supports.
    """
    if len(topo.solid) != mesh.n_elements:
        raise ValueError("topology length does not match element count")
    if not topo.solid.any():
        raise TopologyError("empty topology")

    fixed_nodes = np.unique([n for n, _ in boundary.fixed_dofs])
    connected = _support_connected(mesh, topo.solid, fixed_nodes)
    detached = np.flatnonzero(topo.solid & ~connected)
    element_ids = np.flatnonzero(connected)
    if len(element_ids) == 0:
        raise TopologyError("no solid element is connected to the supports")

    must_carry = boundary.loaded_nodes() | boundary.monitor_nodes
    for node in sorted(must_carry):
        if not any(connected[e] for e in mesh.node_elements(node)):
            raise TopologyError(f"node {node} carries a load or constraint but touches no solid element")

    active_nodes = np.zeros(mesh.n_nodes, dtype=bool)
    active_nodes[mesh.elements[element_ids].ravel()] = True
    active_dof = np.repeat(active_nodes, 2)

    fixed_mask = np.zeros(mesh.n_dofs, dtype=bool)
    for node, d in boundary.fixed_dofs:
        fixed_mask[2 * node + d] = True

    free_dofs = np.flatnonzero(active_dof & ~fixed_mask)
    fixed_active = np.flatnonzero(active_dof & fixed_mask)
    dangling = np.flatnonzero(~active_dof)
    return ActiveMesh(mesh, element_ids, free_dofs, fixed_active, dangling, detached)
