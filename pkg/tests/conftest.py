import numpy as np
import pytest

from hoitrack import synth
from hoitrack.geometry import TriMesh
from hoitrack.sequence import read_sequence


@pytest.fixture(scope="session")
def unit_cube():
    return synth.make_cube(1.0)


@pytest.fixture(scope="session")
def small_cube():
    return synth.make_cube(0.08)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def quad_mesh():
    """Single front-facing square quad (two triangles) at z = 0 locally."""
    verts = np.array(
        [
            [-0.05, -0.05, 0.0],
            [0.05, -0.05, 0.0],
            [0.05, 0.05, 0.0],
            [-0.05, 0.05, 0.0],
        ]
    )
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    return TriMesh(verts, faces)


@pytest.fixture(scope="session")
def synth_sequence(tmp_path_factory):
    """Small fully-labeled sequence shared by read-only tests."""
    out = tmp_path_factory.mktemp("seq") / "small"
    cfg = synth.SynthConfig(frames=8, static_prefix=2, stride=2, seed=3)
    synth.generate_sequence(cfg, out)
    return read_sequence(out)


@pytest.fixture(scope="session")
def synth_sequence_dir(synth_sequence):
    return synth_sequence.root
