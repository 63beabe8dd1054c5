import csv
import sys

import numpy as np
import pytest

from proxyforge.data import ExperimentPanel, MetricEntry, MetricRegistry


def make_registry(aux=("m1", "m2"), signs=None, short=None):
    signs = signs or {}
    entries = []
    for m in aux:
        role = "north_star_short" if m == short else "auxiliary"
        entries.append(MetricEntry(m, role, signs.get(m, 1), m))
    entries.append(MetricEntry("y", "north_star_long", 1, "long-term north star"))
    return MetricRegistry(tuple(entries))


def random_panel(rng, n=20, j=30, m=3, effect=0.5, noise=1.0, y_coef=None):
    """Panel with per-experiment effects drawn once and bucket noise on top."""
    theta = rng.normal(0, effect, size=(j, m))
    X = theta + rng.normal(0, noise, size=(n, j, m))
    coef = np.ones(m) / m if y_coef is None else np.asarray(y_coef)
    Y = theta @ coef + rng.normal(0, noise, size=(n, j))
    reg = make_registry(tuple(f"m{i}" for i in range(m)))
    return ExperimentPanel(tuple(f"e{i}" for i in range(j)), X, Y, reg)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_registry_csv(path, rows):
    write_rows(path, ["metric_id", "role", "sign", "display_name"], rows)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def delta_fixture(tmp_path):
    """2 experiments x 3 buckets x 2 auxiliary metrics plus the long-term north star."""
    reg = tmp_path / "reg.csv"
    write_registry_csv(reg, [["m1", "auxiliary", 1, "m one"], ["m2", "auxiliary", 1, "m two"],
                             ["y", "north_star_long", 1, "north star"]])
    rows = []
    for e in ("e1", "e2"):
        for b in range(3):
            for k, m in enumerate(("m1", "m2", "y")):
                rows.append([e, b, m, 0.5 * b + k + (e == "e2")])
    data = tmp_path / "data.csv"
    write_rows(data, ["experiment_id", "bucket_id", "metric_id", "pct_delta"], rows)
    return data, reg, rows


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.summary_lines():
        terminalreporter.write_line(line)
