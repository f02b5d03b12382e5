"""Adjoint problems and per-element topological sensitivity fields.

Sign convention. The closed-form sensitivity

    T = -4/(1+nu) * sigma(u):eps(lambda) + (1-3nu)/(1-nu^2) * tr sigma(u) * tr eps(lambda)

with the adjoint defined by K lambda = -dQ/du makes the compliance field
(lambda = -u) positive where removing material hurts most; that orientation
is pinned by the hole-drilling oracle in the test suite. Constraint fields
handed to the augmented-Lagrangian combination are the derivatives of the
*margin* (bound - raw/reference), i.e. the negated, reference-scaled
sensitivity of the raw quantity: they are negative on constraint-critical
elements, so the combination ``T_obj - sum c_i T_gi`` raises exactly those
elements above the constant volume field and the threshold cut keeps them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import fem
from .mesh import BoundarySpec, Mesh, Point2

PROTECTED_VALUE = 2.0

KIND_DISPLACEMENT = "point_displacement"
KIND_PNORM_STRESS = "pnorm_stress"
KIND_COMPLIANCE = "compliance"
CONSTRAINT_KINDS = (KIND_DISPLACEMENT, KIND_PNORM_STRESS, KIND_COMPLIANCE)


@dataclass(frozen=True)
class ConstraintSpec:
    """One inequality constraint, bounded relative to its initial value."""

    kind: str
    case: int
    bound: float
    point: Point2 | None = None
    direction: tuple[float, float] | None = None
    p_exponent: int = 8
    node: int = -1  # resolved by the problem builder

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.bound <= 0:
            raise ValueError(f"constraint bound must be positive, got {self.bound}")
        if self.kind == KIND_DISPLACEMENT:
            if self.point is None or self.direction is None:
                raise ValueError("displacement constraints need a point and direction")
            dx, dy = self.direction
            if abs(np.hypot(dx, dy) - 1.0) > 1e-9:
                raise ValueError(f"constraint direction {self.direction} is not a unit vector")
        if self.kind == KIND_PNORM_STRESS:
            if self.p_exponent < 2 or self.p_exponent % 2:
                raise ValueError(f"p exponent must be even and >= 2, got {self.p_exponent}")

    def resolved(self, mesh: Mesh) -> "ConstraintSpec":
        if self.kind != KIND_DISPLACEMENT:
            return self
        from .mesh import locate_node
        return replace(self, node=locate_node(mesh, self.point))


@dataclass
class SensitivityField:
    """Per-element level-set values with optional protection pins."""

    values: np.ndarray
    protected: np.ndarray | None = None  # bool mask
    normalized: bool = False
    degenerate: bool = False

    def protected_mask(self) -> np.ndarray:
        if self.protected is None:
            return np.zeros(len(self.values), dtype=bool)
        return self.protected


def sensitivity_volume(n_elements: int, protected: np.ndarray | None = None) -> SensitivityField:
    """Constant -1 field: removing a unit of area removes a unit of volume."""
    return SensitivityField(values=np.full(n_elements, -1.0), protected=protected)


def normalize_and_protect(field: SensitivityField,
                          protected: np.ndarray | None = None) -> SensitivityField:
    """Scale so max|T| over non-protected elements is 1, then pin protected
    elements to +2 (strictly above any normalized value). An all-zero field
    is returned unchanged with the degenerate flag set."""
    if protected is None:
        protected = field.protected_mask()
    values = field.values.copy()
    free = ~protected
    peak = np.max(np.abs(values[free])) if free.any() else 0.0
    degenerate = peak == 0.0
    if not degenerate:
        values = values / peak
    values[protected] = PROTECTED_VALUE
    return SensitivityField(values=values, protected=protected,
                            normalized=not degenerate, degenerate=degenerate)


def protected_elements(mesh: Mesh, boundary: BoundarySpec) -> np.ndarray:
    """Elements pinned solid: the patch around every loaded, fixed, and
    monitored node. Point loads and point constraints are singular sites;
    keeping their patches out of the ranking prevents the spike from
    dominating the field and the cut from ever exposing them."""
    nodes = set(boundary.loaded_nodes()) | set(boundary.monitor_nodes)
    nodes |= {n for n, _ in boundary.fixed_dofs}
    mask = np.zeros(mesh.n_elements, dtype=bool)
    for n in sorted(nodes):
        mask[mesh.node_elements(n)] = True
    return mask


def topo_sensitivity(primal: fem.TensorField, adjoint: fem.TensorField,
                     nu: float) -> SensitivityField:
    """Closed-form 2-D topological sensitivity from primal stress and adjoint
    strain (zero wherever either field is zero, i.e. on void elements)."""
    s, e = primal.stress, adjoint.strain
    contraction = s[:, 0] * e[:, 0] + s[:, 1] * e[:, 1] + 2.0 * s[:, 2] * e[:, 2]
    traces = (s[:, 0] + s[:, 1]) * (e[:, 0] + e[:, 1])
    values = -4.0 / (1.0 + nu) * contraction + (1.0 - 3.0 * nu) / (1.0 - nu * nu) * traces
    return SensitivityField(values=values)


def adjoint_rhs_point_displacement(mesh: Mesh, boundary: BoundarySpec,
                                   node: int, direction: tuple[float, float]) -> np.ndarray:
    """Right-hand side -dQ/du for Q = direction . u(node)."""
    rhs = np.zeros(mesh.n_dofs)
    live = False
    for d, comp in enumerate(direction):
        if comp == 0.0:
            continue
        if (node, d) in boundary.fixed_dofs:
            continue
        rhs[2 * node + d] = -comp
        live = True
    if not live:
        raise ValueError(f"constraint point at node {node} is fixed in the constrained "
                         "direction; the constraint is vacuous")
    return rhs


def pnorm_stress(vonmises: np.ndarray, include: np.ndarray, p: int) -> float:
    """Global p-norm of the included elements' von Mises stresses, computed
    in scaled form so large exponents cannot overflow."""
    s = vonmises[include]
    s = s[s > 0.0]
    if len(s) == 0:
        return 0.0
    m = s.max()
    return float(m * np.sum((s / m) ** p) ** (1.0 / p))


def adjoint_rhs_pnorm(active, tensors: fem.TensorField, material: fem.Material,
                      p: int, include: np.ndarray) -> tuple[np.ndarray, bool]:
    """Right-hand side -d(sigma_PN)/du via the chain rule through the
    per-element von Mises stress at the centroid.

    Elements below the stress guard (1e-12 * E) contribute nothing; a fully
    zero stress state returns a zero vector with the degenerate flag set.
    """
    mesh = active.mesh
    guard = 1e-12 * material.E
    rhs = np.zeros(mesh.n_dofs)

    ids = active.element_ids
    use = include[ids]
    ids = ids[use]
    if len(ids) == 0:
        return rhs, True
    sig = tensors.stress[ids]
    s = fem.von_mises(sig)
    live = s > guard
    ids, sig, s = ids[live], sig[live], s[live]
    if len(ids) == 0:
        return rhs, True
    m = s.max()
    sigma_pn = float(m * np.sum((s / m) ** p) ** (1.0 / p))

    # d(sigma_PN)/ds_e, bounded in [0, 1] because sigma_PN >= max s
    w = (s / sigma_pn) ** (p - 1)
    # ds/dsigma in (xx, yy, xy) tensor components
    g = np.empty_like(sig)
    g[:, 0] = (2.0 * sig[:, 0] - sig[:, 1]) / (2.0 * s)
    g[:, 1] = (2.0 * sig[:, 1] - sig[:, 0]) / (2.0 * s)
    g[:, 2] = 3.0 * sig[:, 2] / s
    Bc = fem.centroid_b_matrix(mesh.h)
    C = material.constitutive()
    per_dof = (w[:, None] * g) @ C @ Bc  # (n, 8): w * (B^T C^T g) transposed out
    np.add.at(rhs, mesh.edofs[ids].ravel(), -per_dof.ravel())
    return rhs, False


def solve_adjoint(system: fem.SystemMatrix, rhs: np.ndarray) -> np.ndarray:
    """Adjoint solves share the primal factorization and contracts."""
    return fem.solve(system, rhs)


def _self_adjoint_case(rhs: np.ndarray, analysis: fem.Analysis) -> tuple[int, float] | None:
    """If the adjoint right-hand side is a multiple of one load case's force
    vector, return (case index, factor) with lambda = factor * u_case."""
    nz = np.flatnonzero(rhs)
    for j, f in enumerate(analysis.loads):
        fnz = np.flatnonzero(f)
        if len(fnz) != len(nz) or not np.array_equal(fnz, nz):
            continue
        ratio = rhs[nz] / f[nz]
        if np.all(ratio == ratio[0]):
            return j, float(ratio[0])
    return None


@dataclass
class ConstraintFields:
    """Per-constraint normalized level-set fields plus solve bookkeeping."""

    fields: list[SensitivityField]
    adjoint_solves: int


def constraint_raw(analysis: fem.Analysis, spec: ConstraintSpec,
                   case_index: dict[int, int], include: np.ndarray) -> float:
    """Raw physical value of one constraint on an analyzed topology."""
    i = case_index[spec.case]
    if spec.kind == KIND_DISPLACEMENT:
        u = analysis.displacements[i]
        dx, dy = spec.direction
        return dx * u[2 * spec.node] + dy * u[2 * spec.node + 1]
    if spec.kind == KIND_PNORM_STRESS:
        return pnorm_stress(analysis.vonmises[i], include, spec.p_exponent)
    return analysis.compliances[i]


def constraint_fields(analysis: fem.Analysis, constraints: list[ConstraintSpec],
                      references: list[float], material: fem.Material,
                      boundary: BoundarySpec, include: np.ndarray,
                      case_index: dict[int, int]) -> ConstraintFields:
    """Build the margin-sensitivity field of every constraint.

    Point-displacement constraints that share a (node, direction) pair share
    a single adjoint solve regardless of load case; compliance constraints
    reuse lambda = -u and cost no solve.
    """
    mesh = analysis.active.mesh
    nu = material.nu
    adjoint_cache: dict[tuple, fem.TensorField] = {}
    solves = 0
    fields: list[SensitivityField] = []
    for spec, ref in zip(constraints, references):
        i = case_index[spec.case]
        primal = analysis.tensors[i]
        if spec.kind == KIND_DISPLACEMENT:
            key = (spec.node, spec.direction)
            if key not in adjoint_cache:
                rhs = adjoint_rhs_point_displacement(mesh, boundary, spec.node, spec.direction)
                shortcut = _self_adjoint_case(rhs, analysis)
                if shortcut is not None:
                    # constrained point coincides with a point of force
                    # application: lambda is a multiple of that case's -u
                    j, scale = shortcut
                    t = analysis.tensors[j]
                    adjoint_cache[key] = fem.TensorField(stress=scale * t.stress,
                                                         strain=scale * t.strain)
                else:
                    lam = solve_adjoint(analysis.system, rhs)
                    adjoint_cache[key] = fem.recover(analysis.active, lam, material)
                    solves += 1
            adj = adjoint_cache[key]
        elif spec.kind == KIND_PNORM_STRESS:
            rhs, degenerate = adjoint_rhs_pnorm(analysis.active, primal, material,
                                                spec.p_exponent, include)
            if degenerate:
                fields.append(SensitivityField(values=np.zeros(mesh.n_elements),
                                               degenerate=True))
                continue
            lam = solve_adjoint(analysis.system, rhs)
            adj = fem.recover(analysis.active, lam, material)
            solves += 1
        else:  # compliance: lambda = -u, no extra solve
            u = analysis.displacements[i]
            adj = fem.recover(analysis.active, -u, material)

        raw = topo_sensitivity(primal, adj, nu)
        margin = SensitivityField(values=-raw.values / ref)
        fields.append(normalize_and_protect(margin))
    return ConstraintFields(fields=fields, adjoint_solves=solves)


def compliance_field(analysis: fem.Analysis, material: fem.Material) -> SensitivityField:
    """Summed compliance sensitivity over all load cases (each normalized),
    used as the level-set for unconstrained pareto tracing."""
    mesh = analysis.active.mesh
    total = np.zeros(mesh.n_elements)
    for u, tensors in zip(analysis.displacements, analysis.tensors):
        adj = fem.recover(analysis.active, -u, material)
        t = topo_sensitivity(tensors, adj, material.nu)
        normed = normalize_and_protect(t)
        total += normed.values
    return SensitivityField(values=total)
