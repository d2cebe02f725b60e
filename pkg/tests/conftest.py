import io
import json
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

TESTS_DIR = Path(__file__).resolve().parent
sys.path.insert(0, str(TESTS_DIR))  # make `oracles` importable

FIXTURE_DIR = TESTS_DIR / "fixtures"


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return FIXTURE_DIR


@pytest.fixture(scope="session")
def expected_hashes() -> dict:
    return json.loads((FIXTURE_DIR / "expected_hashes.json").read_text())


def png_bytes(array: np.ndarray, mode: str | None = None) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array, mode).save(buf, format="PNG")
    return buf.getvalue()


def jpeg_bytes(array: np.ndarray, quality: int = 75) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array).convert("RGB").save(buf, format="JPEG", quality=quality)
    return buf.getvalue()


def textured_rgb(seed: int, height: int = 96, width: int = 128) -> np.ndarray:
    """Small deterministic photo-like image for ad-hoc tests."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    base = 128 + 70 * np.sin(xx / rng.uniform(9, 30)) \
        + 50 * np.cos(yy / rng.uniform(7, 25))
    base += rng.normal(0, 5, base.shape)
    rgb = np.stack([base, np.roll(base, 5, axis=0), base[::-1]], axis=-1)
    return rgb.clip(0, 255).astype(np.uint8)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for status, verdict in (("passed", "PASS"), ("failed", "FAIL"),
                            ("error", "FAIL")):
        for report in terminalreporter.stats.get(status, []):
            nodeid = str(getattr(report, "nodeid", ""))
            if "test_acceptance" in nodeid and "::" in nodeid:
                lines.append((nodeid.split("::")[-1], verdict))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, verdict in sorted(lines):
            terminalreporter.write_line(f"{verdict}  {name}")
