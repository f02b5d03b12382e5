import numpy as np
import pytest

from topt.mesh import (BoundarySpec, DomainSpec, MeshError, Point2, PointLoad,
                       Rect, TopologyError, TopologyState, active_submesh,
                       build_mesh, locate_node, repair_connectivity)

from conftest import make_cantilever


class TestBuildMesh:
    def test_unit_square_2x2(self):
        mesh, _ = build_mesh(DomainSpec(1.0, 1.0, 2, 2))
        assert mesh.n_elements == 4
        assert mesh.n_nodes == 9
        assert mesh.h == 0.5
        assert mesh.element_area == 0.25

    def test_l_shape_mask(self):
        spec = DomainSpec(1.0, 1.0, 10, 10, masked_regions=(Rect(0.4, 0.4, 1.0, 1.0),))
        mesh, _ = build_mesh(spec)
        assert mesh.n_elements == 64

    def test_zero_element_count_rejected(self):
        with pytest.raises(MeshError):
            DomainSpec(1.0, 1.0, 0, 2)

    def test_non_square_elements_rejected(self):
        with pytest.raises(MeshError):
            DomainSpec(2.0, 1.0, 10, 10)

    def test_full_mask_rejected(self):
        spec = DomainSpec(1.0, 1.0, 4, 4, masked_regions=(Rect(0.0, 0.0, 1.0, 1.0),))
        with pytest.raises(MeshError):
            build_mesh(spec)

    def test_deterministic(self):
        spec = DomainSpec(1.0, 1.0, 10, 10, masked_regions=(Rect(0.4, 0.4, 1.0, 1.0),))
        a, _ = build_mesh(spec)
        b, _ = build_mesh(spec)
        assert np.array_equal(a.nodes, b.nodes)
        assert np.array_equal(a.elements, b.elements)
        assert np.array_equal(a.element_grid, b.element_grid)

    def test_connectivity_ccw_and_manifold(self):
        mesh, _ = build_mesh(DomainSpec(1.0, 1.0, 5, 5))
        quads = mesh.nodes[mesh.elements]
        # shoelace area positive for counter-clockwise quads
        x, y = quads[..., 0], quads[..., 1]
        area = 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)
        assert np.allclose(area, mesh.element_area)
        # each interior edge shared by exactly two elements
        edges = {}
        for quad in mesh.elements:
            for a, b in zip(quad, np.roll(quad, -1)):
                key = (min(a, b), max(a, b))
                edges[key] = edges.get(key, 0) + 1
        assert set(edges.values()) <= {1, 2}

    def test_masked_nodes_dropped(self):
        spec = DomainSpec(1.0, 1.0, 10, 10, masked_regions=(Rect(0.4, 0.4, 1.0, 1.0),))
        mesh, _ = build_mesh(spec)
        assert np.all(np.unique(mesh.elements) == np.arange(mesh.n_nodes))


class TestLocateNode:
    def test_exact_node(self):
        mesh, _ = build_mesh(DomainSpec(1.0, 1.0, 4, 4))
        for n in (0, 7, mesh.n_nodes - 1):
            p = Point2(*mesh.nodes[n])
            assert locate_node(mesh, p) == n

    def test_centroid_tie_breaks_low(self):
        mesh, _ = build_mesh(DomainSpec(1.0, 1.0, 4, 4))
        c = mesh.centroids[0]
        node = locate_node(mesh, Point2(c[0], c[1]))
        assert node == mesh.elements[0].min()

    def test_outside_raises(self):
        mesh, _ = build_mesh(DomainSpec(1.0, 1.0, 4, 4))
        with pytest.raises(MeshError):
            locate_node(mesh, Point2(2.0, 0.5))


class TestActiveSubmesh:
    def test_all_solid_roundtrip(self):
        mesh, boundary, _ = make_cantilever(4, 2)
        active = active_submesh(mesh, TopologyState.full(mesh), boundary)
        assert len(active.element_ids) == mesh.n_elements
        assert len(active.dangling_dofs) == 0
        assert len(active.free_dofs) + len(active.fixed_active) == mesh.n_dofs

    def test_single_element_counts(self):
        mesh, boundary = build_mesh(DomainSpec(1.0, 1.0, 3, 3))
        # keep only the element at the bottom-left corner, fix two of its nodes
        boundary.fix_node(0, "xy")
        boundary.fix_node(1, "y")
        boundary.point_loads.append(PointLoad(1, 5, (0.0, 1.0), 1.0))
        solid = np.zeros(9, dtype=bool)
        solid[0] = True
        active = active_submesh(mesh, TopologyState(solid, 1 / 9), boundary)
        assert len(active.element_ids) == 1
        active_nodes = np.unique(mesh.elements[active.element_ids])
        assert len(active_nodes) == 4
        assert len(active.free_dofs) + len(active.fixed_active) == 8

    def test_loaded_node_in_void_raises(self):
        mesh, boundary, tip = make_cantilever(4, 2)
        solid = np.ones(mesh.n_elements, dtype=bool)
        for e in mesh.node_elements(tip):
            solid[e] = False
        with pytest.raises(TopologyError):
            active_submesh(mesh, TopologyState(solid, solid.mean()), boundary)

    def test_active_elements_have_active_nodes(self):
        mesh, boundary, _ = make_cantilever(6, 3)
        rng = np.random.default_rng(3)
        for _ in range(10):
            solid = rng.random(mesh.n_elements) < 0.8
            solid[[e for e in mesh.node_elements(boundary.point_loads[0].node)]] = True
            # keep the left column so supports stay attached
            solid[np.flatnonzero(mesh.element_grid[:, 0] == 0)] = True
            try:
                active = active_submesh(mesh, TopologyState(solid, solid.mean()), boundary)
            except TopologyError:
                continue
            active_nodes = set(np.unique(mesh.elements[active.element_ids]))
            for e in active.element_ids:
                assert set(mesh.elements[e]) <= active_nodes

    def test_detached_cluster_excluded(self):
        mesh, boundary, tip = make_cantilever(6, 3)
        solid = np.ones(mesh.n_elements, dtype=bool)
        # void the column i=4, detaching columns 5 from the clamped side
        solid[np.flatnonzero(mesh.element_grid[:, 0] == 4)] = False
        with pytest.raises(TopologyError):
            # the tip load sits on the detached island
            active_submesh(mesh, TopologyState(solid, solid.mean()), boundary)


class TestRepairConnectivity:
    def test_orphaned_load_reattached(self):
        mesh, boundary, tip = make_cantilever(6, 3)
        previous = TopologyState.full(mesh)
        solid = np.ones(mesh.n_elements, dtype=bool)
        solid[np.flatnonzero(mesh.element_grid[:, 0] == 4)] = False
        broken = TopologyState(solid, solid.mean())
        repaired = repair_connectivity(mesh, broken, previous, boundary)
        active = active_submesh(mesh, repaired, boundary)  # should not raise
        assert repaired.solid.sum() > broken.solid.sum()
        assert len(active.element_ids) > 0

    def test_connected_topology_untouched(self):
        mesh, boundary, _ = make_cantilever(6, 3)
        topo = TopologyState.full(mesh)
        out = repair_connectivity(mesh, topo, topo, boundary)
        assert out is topo


class TestBoundarySpec:
    def test_needs_three_fixed_dofs(self):
        mesh, _ = build_mesh(DomainSpec(1.0, 1.0, 2, 2))
        b = BoundarySpec()
        b.fix_node(0, "xy")
        b.point_loads.append(PointLoad(1, 8, (0.0, -1.0), 1.0))
        with pytest.raises(MeshError):
            b.validate(mesh.n_nodes)

    def test_fully_fixed_load_node_rejected(self):
        mesh, _ = build_mesh(DomainSpec(1.0, 1.0, 2, 2))
        b = BoundarySpec()
        b.fix_node(0, "xy")
        b.fix_node(1, "xy")
        b.point_loads.append(PointLoad(1, 0, (0.0, -1.0), 1.0))
        with pytest.raises(MeshError):
            b.validate(mesh.n_nodes)
