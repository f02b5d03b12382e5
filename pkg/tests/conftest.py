"""Shared fixtures: small plane-stress problems used across the suite."""

import pytest

from topt import fem
from topt.mesh import (DomainSpec, Point2, PointLoad, TopologyState,
                       build_mesh, locate_node)


def make_cantilever(nx=8, ny=4, width=2.0, height=1.0, case=1, direction=(0.0, -1.0),
                    magnitude=1.0):
    """Left-edge clamped rectangle with a point load at the right-edge middle."""
    mesh, boundary = build_mesh(DomainSpec(width=width, height=height, nx=nx, ny=ny))
    for n in range(mesh.n_nodes):
        if mesh.nodes[n, 0] == 0.0:
            boundary.fix_node(n, "xy")
    tip = locate_node(mesh, Point2(width, height / 2))
    boundary.point_loads.append(PointLoad(case, tip, direction, magnitude))
    return mesh, boundary, tip


@pytest.fixture(scope="session")
def cantilever_small():
    return make_cantilever(nx=8, ny=4)


@pytest.fixture(scope="session")
def cantilever_analysis(cantilever_small):
    mesh, boundary, tip = cantilever_small
    analysis = fem.analyze(mesh, boundary, fem.Material(),
                           TopologyState.full(mesh))
    return mesh, boundary, tip, analysis


@pytest.fixture(scope="session")
def patch_2x2():
    """2x2-element patch, clamped left edge, tip load; used by gradient checks."""
    mesh, boundary, tip = make_cantilever(nx=2, ny=2, width=1.0, height=1.0)
    analysis = fem.analyze(mesh, boundary, fem.Material(),
                           TopologyState.full(mesh))
    return mesh, boundary, tip, analysis


def uniaxial_element(material=None, h=1.0, sigma=1.0):
    """Single square element under uniform x-traction with BCs that permit
    the exact uniaxial plane-stress solution."""
    material = material or fem.Material()
    mesh, boundary = build_mesh(DomainSpec(width=h, height=h, nx=1, ny=1))
    # nodes: 0 bl, 1 br, 2 tl, 3 tr (row-major)
    boundary.fix_node(0, "xy")
    boundary.fix_node(2, "x")
    boundary.fixed_dofs.add((1, 1))  # bottom edge held vertically
    f = sigma * h / 2.0
    boundary.point_loads.append(PointLoad(1, 1, (1.0, 0.0), f))
    boundary.point_loads.append(PointLoad(1, 3, (1.0, 0.0), f))
    return mesh, boundary
