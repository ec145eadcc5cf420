import numpy as np
import pytest

from angiotune.synthetic import tube_phantom

# filled by test_acceptance.py, printed once at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":s"))):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tube64():
    return tube_phantom((64, 64), width=5, seed=7)


def write_toy_dataset(root, n=8, size=48, subjects=4):
    """Tube phantoms saved as 8-bit PGM pairs plus a manifest; returns its path."""
    from angiotune.evalharness import DatasetManifest, ManifestEntry
    from angiotune.imgcore import save_image, save_mask

    entries = []
    for k in range(n):
        img, mask = tube_phantom((size, size), width=3 + k % 4, seed=100 + k)
        ip, mp = root / f"img{k}.pgm", root / f"img{k}_gt.pgm"
        save_image(ip, img)
        save_mask(mp, mask)
        entries.append(ManifestEntry(ip, mp, f"s{k % subjects}", "train" if k < n - 2 else "test"))
    path = root / "manifest.csv"
    DatasetManifest(entries).write(path)
    return path


# a Meijering sub-grid small enough for oracle searches on 48x48 phantoms
TOY_GRID = {"sigma": [1.5, 2.0], "threshold": [0.1, 0.2, 0.3], "disk_size": [1, 2], "min_region": [10, 50]}


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory):
    return write_toy_dataset(tmp_path_factory.mktemp("toy"))


@pytest.fixture(scope="session")
def toy_grid():
    from angiotune.tuner import default_grid

    return default_grid("meijering").restrict(**TOY_GRID)
