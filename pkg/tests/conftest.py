import numpy as np
import pytest

from weakseg.grid_context import build_context_map, classify_tiles
from weakseg.synthgen import SceneConfig, generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scene(tmp_path_factory):
    """A 4x4-tile synthetic dataset with 32-px chips; quick to train on."""
    cfg = SceneConfig(grid_rows=4, grid_cols=4, test_grid_rows=2, test_grid_cols=2,
                      tile_size=32, object_density=0.3, min_radius=3.0, max_radius=5.0, seed=3)
    root = tmp_path_factory.mktemp("small_scene")
    ds = generate_dataset(cfg, root)
    return root, ds, build_context_map(classify_tiles(ds.train), 8)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
