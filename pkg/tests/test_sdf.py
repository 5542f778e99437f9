import numpy as np
import pytest

from hoitrack.errors import NotWatertight
from hoitrack.sdf import (
    build_sdf,
    gating_weights,
    point_mesh_distance,
    query,
    soft_gate,
)
from hoitrack.synth import make_cube, make_uv_sphere


@pytest.fixture(scope="module")
def cube_sdf(unit_cube=None):
    return build_sdf(make_cube(1.0), resolution=48)


def test_cube_center_value(cube_sdf):
    assert query(cube_sdf, np.zeros(3)) == pytest.approx(-0.5, abs=0.02)


def test_cube_outside_value(cube_sdf):
    assert query(cube_sdf, np.array([1.0, 0.0, 0.0])) == pytest.approx(0.5, abs=0.02)


def test_surface_point_near_zero(cube_sdf):
    assert abs(query(cube_sdf, np.array([0.5, 0.0, 0.0]))) < cube_sdf.cell_size


def test_requires_watertight(quad_mesh):
    with pytest.raises(NotWatertight):
        build_sdf(quad_mesh)


def test_resolution_minimum(unit_cube):
    with pytest.raises(ValueError):
        build_sdf(unit_cube, resolution=8)


def test_query_at_nodes_exact(cube_sdf):
    ax = cube_sdf.node_coords()
    ii = (3, 5, 7)
    p = np.array([ax[0][ii[0]], ax[1][ii[1]], ax[2][ii[2]]])
    assert query(cube_sdf, p) == pytest.approx(cube_sdf.values[ii], abs=1e-12)


def test_query_linear_between_nodes(cube_sdf):
    ax = cube_sdf.node_coords()
    a = np.array([ax[0][4], ax[1][6], ax[2][8]])
    b = a.copy()
    b[0] = ax[0][5]
    mid = 0.5 * (a + b)
    expected = 0.5 * (query(cube_sdf, a) + query(cube_sdf, b))
    assert query(cube_sdf, mid) == pytest.approx(expected, abs=1e-12)


def test_far_field_positive(cube_sdf):
    assert query(cube_sdf, np.array([1.5, 0.0, 0.0])) > 0.5


def test_node_accuracy_against_exact_distance():
    mesh = make_cube(1.0)
    grid = build_sdf(mesh, resolution=32)
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.6, 0.6, size=(200, 3))
    exact = point_mesh_distance(pts, mesh)
    approx = np.abs(np.array([query(grid, p) for p in pts]))
    assert np.max(np.abs(approx - exact)) < 1.5 * grid.cell_size


def test_sign_matches_parity_oracle():
    mesh = make_cube(1.0)
    grid = build_sdf(mesh, resolution=32)
    rng = np.random.default_rng(7)
    pts = rng.uniform(-0.8, 0.8, size=(1000, 3))
    vals = np.array([query(grid, p) for p in pts])
    inside_true = (np.abs(pts) < 0.5).all(axis=1)
    clear = np.abs(vals) > grid.cell_size
    agree = (vals[clear] < 0) == inside_true[clear]
    assert np.mean(agree) >= 0.995


def test_refinement_halves_error_on_sphere():
    mesh = make_uv_sphere(0.5, (0.0, 0.0, 0.0), rings=10, segments=14)
    rng = np.random.default_rng(3)
    pts = rng.uniform(-0.55, 0.55, size=(150, 3))
    exact = point_mesh_distance(pts, mesh)

    def max_err(res):
        grid = build_sdf(mesh, resolution=res)
        approx = np.abs(np.array([query(grid, p) for p in pts]))
        return np.max(np.abs(approx - exact))

    e_lo, e_hi = max_err(24), max_err(48)
    assert e_hi < e_lo / 2 * 1.5  # halving within factor 1.5


# ---------------------------------------------------------------------------
# gating


def test_gate_zero_distance():
    assert soft_gate(np.array([0.0]), 40.0)[0] == 1.0


def test_gate_paper_values():
    # w(d) = 1 - tanh(40 d): 1 - tanh(2) and 1 - tanh(0.5)
    w = soft_gate(np.array([0.05, 0.0125]), 40.0)
    assert w[0] == pytest.approx(1.0 - np.tanh(2.0), abs=1e-12)
    assert w[0] == pytest.approx(0.0360, abs=5e-4)
    assert w[1] == pytest.approx(0.5379, abs=5e-4)


def test_gate_penetration_clamped():
    assert soft_gate(np.array([-0.3]), 40.0)[0] == 1.0


def test_gate_monotone_and_bounded():
    d = np.linspace(0.0, 0.2, 100)
    w = soft_gate(d, 40.0)
    assert np.all(np.diff(w) <= 0)
    assert np.all((w > 0) & (w <= 1))
    assert w[0] == 1.0


def test_gate_sigma_positive():
    with pytest.raises(ValueError):
        soft_gate(np.zeros(1), 0.0)


def test_gating_weights_law_across_range():
    grid = build_sdf(make_cube(1.0), resolution=48)
    # points straight out along +x: Phi = x - 0.5 exactly on the node line
    ds = np.linspace(0.0, 0.1, 21)
    pts = np.stack([0.5 + ds, np.zeros_like(ds), np.zeros_like(ds)], axis=1)
    w = gating_weights(grid, pts, sigma=40.0)
    phi = np.array([query(grid, p) for p in pts])
    expected = 1.0 - np.tanh(40.0 * np.maximum(0.0, phi))
    assert np.max(np.abs(w - expected)) < 1e-6


def test_point_mesh_distance_known_values():
    mesh = make_cube(1.0)
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.7, 0.7, 0.7]])
    d = point_mesh_distance(pts, mesh)
    assert d[0] == pytest.approx(0.5, abs=1e-12)
    assert d[1] == pytest.approx(0.5, abs=1e-12)
    assert d[2] == pytest.approx(np.sqrt(3 * 0.2**2), abs=1e-12)
