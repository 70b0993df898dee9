import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ssdl.data import LabeledDataset  # noqa: E402


@pytest.fixture(scope="session")
def digits_dataset() -> LabeledDataset:
    """The bundled 8x8 handwritten digits (1797 samples, 10 classes)."""
    from sklearn.datasets import load_digits
    raw = load_digits()
    return LabeledDataset(X=raw.data.T.astype(float),
                          y=raw.target.astype(int), class_count=10)


def usps_directory():
    """Directory holding USPS data, or None if unavailable.

    Checked locations: $SSDL_DATA_DIR/usps, $SSDL_DATA_DIR, ./data/usps.
    The data is the classic 16x16 scan set: zip.train / zip.test (optionally
    gzipped, label first then 256 values per row) or usps.h5.
    """
    candidates = []
    env = os.environ.get("SSDL_DATA_DIR")
    if env:
        candidates += [os.path.join(env, "usps"), env]
    candidates.append(os.path.join(os.path.dirname(__file__), "..", "data",
                                   "usps"))
    for d in candidates:
        if not os.path.isdir(d):
            continue
        names = set(os.listdir(d))
        if {"zip.train", "zip.test"} <= names or \
                {"zip.train.gz", "zip.test.gz"} <= names or \
                "usps.h5" in names:
            return d
    return None


requires_usps = pytest.mark.skipif(
    usps_directory() is None,
    reason="USPS data not found; place zip.train/zip.test(.gz) or usps.h5 "
           "under $SSDL_DATA_DIR/usps (unreachable from this sandbox: no "
           "network access)")


def rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One line per acceptance criterion at the end of every run."""
    rows = []
    for status in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(status, []):
            if "test_acceptance" in rep.nodeid and rep.when in ("call",
                                                                "setup"):
                name = rep.nodeid.split("::")[-1]
                cls = rep.nodeid.split("::")[-2]
                rows.append((cls, name, status.upper()))
    if rows:
        terminalreporter.write_sep("=", "acceptance criteria")
        for cls, name, status in sorted(set(rows)):
            terminalreporter.write_line(f"{status:8s} {cls}::{name}")
