import numpy as np
import pytest

from gazekit import io
from gazekit.grids import FixationSet, normalize
from gazekit.synth import sample_fixations


def build_disk_dataset(root, n_images=4, hw=(12, 12), n_fix=40, seed=11):
    """Write a synthetic dataset: two model density dirs, a uniform
    baseline dir, fixations CSV, and an image registry CSV.

    Per-image blobs sit in distinct corners so the pooled center bias
    stays diffuse and the per-image structure is worth learning."""
    rng = np.random.default_rng(seed)
    rows = np.arange(hw[0])[:, None]
    cols = np.arange(hw[1])[None, :]
    corners = [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)]
    dirs = {name: root / name for name in ("good", "noisy", "flat")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    records = []
    registry = ["image_id,height,width"]
    for k in range(n_images):
        img = f"img{k}"
        fy, fx_ = corners[k % len(corners)]
        cy = fy * hw[0] + rng.uniform(-0.5, 0.5)
        cx = fx_ * hw[1] + rng.uniform(-0.5, 0.5)
        bump = np.exp(-0.5 * (((rows - cy) / 1.2) ** 2 + ((cols - cx) / 1.2) ** 2))
        truth = normalize(bump + 0.02)
        noisy = normalize(bump + 0.02 + rng.uniform(0, 0.15, hw))
        flat = normalize(np.ones(hw))
        io.write_bytes_atomic(dirs["good"] / f"{img}.fdf1", io.write_density(truth))
        io.write_bytes_atomic(dirs["noisy"] / f"{img}.fdf1", io.write_density(noisy))
        io.write_bytes_atomic(dirs["flat"] / f"{img}.fdf1", io.write_density(flat))
        records += sample_fixations(truth, n_fix, 500 + k, image_id=img).records
        registry.append(f"{img},{hw[0]},{hw[1]}")
    fixations = FixationSet(records)
    io.write_text_atomic(root / "fixations.csv", io.write_fixations(fixations))
    io.write_text_atomic(root / "images.csv", "\n".join(registry) + "\n")
    return dirs


@pytest.fixture
def disk_dataset(tmp_path):
    return tmp_path, build_disk_dataset(tmp_path)


ACCEPTANCE_PREFIX = "tests/test_acceptance.py"


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if ACCEPTANCE_PREFIX in nodeid and "::" in nodeid:
                name = nodeid.split("::")[-1]
                status = "PASS" if outcome == "passed" else "FAIL"
                lines.append((name, status))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, status in sorted(lines):
            terminalreporter.write_line(f"{status}  {name}")
