"""Experiment panels: metric registry, CSV ingestion and validation.

Two input layouts are understood:

* arm-level: ``experiment_id,bucket_id,metric_id,treatment_value,control_value``
* delta-level: ``experiment_id,bucket_id,metric_id,pct_delta``

The registry is a CSV ``metric_id,role,sign,display_name``. Signs are applied
once, at load time, so that every stored delta reads "up is good".
"""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

AUXILIARY = "auxiliary"
NORTH_STAR_SHORT = "north_star_short"
NORTH_STAR_LONG = "north_star_long"
ROLES = (AUXILIARY, NORTH_STAR_SHORT, NORTH_STAR_LONG)

ARM_COLUMNS = ("experiment_id", "bucket_id", "metric_id", "treatment_value", "control_value")
DELTA_COLUMNS = ("experiment_id", "bucket_id", "metric_id", "pct_delta")
REGISTRY_COLUMNS = ("metric_id", "role", "sign", "display_name")

MIN_BUCKETS = 3


class PanelError(ValueError):
    """Base class for ingestion failures. ``code`` mirrors the report codes."""

    code = "PanelError"

    def __init__(self, message: str, report: ValidationReport | None = None):
        super().__init__(message)
        self.report = report


class MissingCell(PanelError):
    code = "MissingCell"


class ZeroControl(PanelError):
    code = "ZeroControl"


class UnknownMetric(PanelError):
    code = "UnknownMetric"


class DuplicateCell(PanelError):
    code = "DuplicateCell"


class RegistryError(PanelError):
    code = "RegistryError"


class SchemaError(PanelError):
    code = "SchemaError"


_ERROR_TYPES = {cls.code: cls for cls in (MissingCell, ZeroControl, UnknownMetric, DuplicateCell,
                                          RegistryError, SchemaError)}


@dataclass(frozen=True)
class MetricEntry:
    metric_id: str
    role: str
    sign: int = 1
    display_name: str = ""


@dataclass(frozen=True)
class MetricRegistry:
    entries: tuple[MetricEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [e.metric_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise RegistryError("metric_ids in registry are not unique")
        for e in self.entries:
            if e.role not in ROLES:
                raise RegistryError(f"unknown role {e.role!r} for metric {e.metric_id!r}")
            if e.sign not in (1, -1):
                raise RegistryError(f"sign for {e.metric_id!r} must be +1 or -1, got {e.sign!r}")
        n_long = sum(e.role == NORTH_STAR_LONG for e in self.entries)
        if n_long != 1:
            raise RegistryError(f"registry needs exactly one {NORTH_STAR_LONG} metric, found {n_long}")

    @property
    def auxiliary(self) -> tuple[MetricEntry, ...]:
        """Metrics usable inside a proxy, short-term north star included, in registry order."""
        return tuple(e for e in self.entries if e.role != NORTH_STAR_LONG)

    @property
    def north_star_long(self) -> MetricEntry:
        return next(e for e in self.entries if e.role == NORTH_STAR_LONG)

    @property
    def north_star_short(self) -> MetricEntry | None:
        return next((e for e in self.entries if e.role == NORTH_STAR_SHORT), None)

    def get(self, metric_id: str) -> MetricEntry:
        for e in self.entries:
            if e.metric_id == metric_id:
                return e
        raise UnknownMetric(f"metric {metric_id!r} is not in the registry")

    def __contains__(self, metric_id: str) -> bool:
        return any(e.metric_id == metric_id for e in self.entries)

    def subset(self, metric_ids: Sequence[str]) -> MetricRegistry:
        """Keep the given auxiliary metrics (in the given order) plus the long-term north star."""
        aux = [self.get(m) for m in metric_ids]
        if any(e.role == NORTH_STAR_LONG for e in aux):
            raise RegistryError("the long-term north star cannot be used as a proxy component")
        return MetricRegistry(tuple(aux) + (self.north_star_long,))


def read_registry(path: str | os.PathLike) -> MetricRegistry:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(REGISTRY_COLUMNS[:3]) - set(reader.fieldnames or ())
        if missing:
            raise RegistryError(f"registry {path} lacks columns {sorted(missing)}")
        entries = []
        for row in reader:
            try:
                sign = int(float(row["sign"]))
            except ValueError:
                raise RegistryError(f"bad sign {row['sign']!r} for metric {row['metric_id']!r}") from None
            entries.append(MetricEntry(row["metric_id"].strip(), row["role"].strip(), sign,
                                       (row.get("display_name") or "").strip()))
    return MetricRegistry(tuple(entries))


def write_registry(registry: MetricRegistry, path: str | os.PathLike) -> None:
    with atomic_write(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REGISTRY_COLUMNS)
        for e in registry.entries:
            writer.writerow([e.metric_id, e.role, e.sign, e.display_name])


@dataclass(frozen=True, eq=False)
class ExperimentPanel:
    """Per-bucket percent deltas for J experiments.

    ``X`` has shape (N, J, M) indexed (bucket, experiment, auxiliary metric) and
    ``Y`` has shape (N, J) for the long-term north star. Both are already
    sign-adjusted. Arrays are stored read-only.
    """

    experiments: tuple[str, ...]
    X: np.ndarray
    Y: np.ndarray
    registry: MetricRegistry
    bucket_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        Y = np.array(self.Y, dtype=float)
        if X.ndim != 3 or Y.ndim != 2:
            raise SchemaError(f"X must be 3-D and Y 2-D, got {X.shape} and {Y.shape}")
        if X.shape[:2] != Y.shape:
            raise SchemaError(f"X buckets/experiments {X.shape[:2]} do not match Y {Y.shape}")
        if X.shape[2] != len(self.registry.auxiliary):
            raise SchemaError(f"X has {X.shape[2]} metrics but registry lists {len(self.registry.auxiliary)}")
        if len(self.experiments) != X.shape[1]:
            raise SchemaError("experiment ids do not match X")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "experiments", tuple(self.experiments))
        bucket_ids = tuple(self.bucket_ids) or tuple(str(i) for i in range(X.shape[0]))
        object.__setattr__(self, "bucket_ids", bucket_ids)

    @property
    def shape(self) -> tuple[int, int, int]:
        """(J, N, M), the order used in validation reports."""
        n, j, m = self.X.shape
        return j, n, m

    @property
    def metric_ids(self) -> tuple[str, ...]:
        return tuple(e.metric_id for e in self.registry.auxiliary)

    @property
    def n_buckets(self) -> int:
        return self.X.shape[0]

    def metric_index(self, metric_id: str) -> int:
        try:
            return self.metric_ids.index(metric_id)
        except ValueError:
            raise UnknownMetric(f"metric {metric_id!r} is not an auxiliary metric of this panel") from None

    def select(self, metric_ids: Sequence[str]) -> ExperimentPanel:
        """Panel restricted to a subset of auxiliary metrics."""
        idx = [self.metric_index(m) for m in metric_ids]
        return ExperimentPanel(self.experiments, self.X[:, :, idx], self.Y,
                               self.registry.subset(metric_ids), self.bucket_ids)


@dataclass
class Issue:
    code: str
    experiment_id: str | None = None
    metric_id: str | None = None
    message: str = ""

    def to_dict(self) -> dict:
        return {"code": self.code, "experiment_id": self.experiment_id,
                "metric_id": self.metric_id, "message": self.message}


@dataclass
class ValidationReport:
    errors: list[Issue] = field(default_factory=list)
    warnings: list[Issue] = field(default_factory=list)
    panel_shape: tuple[int, int, int] | None = None

    @property
    def ok(self) -> bool:
        return not self.errors

    def extend(self, other: ValidationReport) -> None:
        self.errors.extend(other.errors)
        self.warnings.extend(other.warnings)
        if other.panel_shape is not None:
            self.panel_shape = other.panel_shape

    def raise_for_errors(self) -> None:
        if self.errors:
            first = self.errors[0]
            cls = _ERROR_TYPES.get(first.code, PanelError)
            more = f" (+{len(self.errors) - 1} more)" if len(self.errors) > 1 else ""
            raise cls(f"{first.code}: {first.message}{more}", report=self)

    def to_dict(self) -> dict:
        return {"ok": self.ok,
                "errors": [e.to_dict() for e in self.errors],
                "warnings": [w.to_dict() for w in self.warnings],
                "panel_shape": list(self.panel_shape) if self.panel_shape else None}


def validate_panel(panel: ExperimentPanel) -> ValidationReport:
    """Report every invariant violation of ``panel``. Never raises, never mutates."""
    report = ValidationReport(panel_shape=panel.shape)
    n, j, m = panel.X.shape
    metric_ids = panel.metric_ids
    y_id = panel.registry.north_star_long.metric_id
    if n < MIN_BUCKETS:
        for exp in panel.experiments:
            report.errors.append(Issue("BucketCountTooSmall", exp, None,
                                       f"{n} buckets, at least {MIN_BUCKETS} required"))
    if j < 3:
        report.warnings.append(Issue("FewExperiments", None, None,
                                     f"{j} experiments; correlation needs at least 3"))
    if m < 1:
        report.errors.append(Issue("NoAuxiliaryMetrics", None, None, "panel has no auxiliary metrics"))
    bad_x = ~np.isfinite(panel.X)
    for bi, ji, mi in zip(*np.nonzero(bad_x)):
        code = "MissingCell" if np.isnan(panel.X[bi, ji, mi]) else "NonFiniteCell"
        report.errors.append(Issue(code, panel.experiments[ji], metric_ids[mi],
                                   f"bucket {panel.bucket_ids[bi]}"))
    for bi, ji in zip(*np.nonzero(~np.isfinite(panel.Y))):
        code = "MissingCell" if np.isnan(panel.Y[bi, ji]) else "NonFiniteCell"
        report.errors.append(Issue(code, panel.experiments[ji], y_id, f"bucket {panel.bucket_ids[bi]}"))
    if len(set(panel.experiments)) != len(panel.experiments):
        report.errors.append(Issue("DuplicateExperiment", None, None, "experiment ids repeat"))
    return report


def _num(value: str) -> float:
    return float(value.strip())


def read_cells(data_path: str | os.PathLike, registry: MetricRegistry
               ) -> tuple[ExperimentPanel | None, ValidationReport]:
    """Parse a data CSV into a panel, collecting problems instead of raising.

    Cells that never appear are left as NaN so that :func:`validate_panel`
    reports them as ``MissingCell``. Returns ``(None, report)`` only when the
    file cannot be shaped into a panel at all.
    """
    report = ValidationReport()
    with open(data_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        if set(ARM_COLUMNS) <= cols:
            arm = True
        elif set(DELTA_COLUMNS) <= cols:
            arm = False
        else:
            report.errors.append(Issue("SchemaError", None, None,
                                       f"header {reader.fieldnames} matches neither CSV layout"))
            return None, report
        cells: dict[tuple[str, str, str], float] = {}
        experiments: dict[str, None] = {}
        buckets: dict[str, dict[str, None]] = {}
        for line, row in enumerate(reader, start=2):
            exp, bucket, metric = row["experiment_id"].strip(), row["bucket_id"].strip(), row["metric_id"].strip()
            if metric not in registry:
                report.errors.append(Issue("UnknownMetric", exp, metric, f"line {line}"))
                continue
            try:
                if arm:
                    treat, ctrl = _num(row["treatment_value"]), _num(row["control_value"])
                    if ctrl == 0:
                        report.errors.append(Issue("ZeroControl", exp, metric, f"line {line}, bucket {bucket}"))
                        continue
                    value = 100.0 * (treat - ctrl) / ctrl
                else:
                    value = _num(row["pct_delta"])
            except (ValueError, AttributeError):
                report.errors.append(Issue("SchemaError", exp, metric, f"line {line}: unparseable number"))
                continue
            key = (exp, bucket, metric)
            if key in cells:
                report.errors.append(Issue("DuplicateCell", exp, metric, f"line {line}, bucket {bucket}"))
                continue
            cells[key] = value * registry.get(metric).sign
            experiments.setdefault(exp)
            buckets.setdefault(exp, {}).setdefault(bucket)

    exp_ids = list(experiments)
    if not exp_ids:
        report.errors.append(Issue("SchemaError", None, None, "no data rows"))
        return None, report
    # Buckets are matched by id within an experiment; a panel needs the same count everywhere.
    counts = {e: len(buckets[e]) for e in exp_ids}
    n = max(counts.values())
    for e in exp_ids:
        if counts[e] != n:
            report.errors.append(Issue("RaggedBuckets", e, None,
                                       f"{counts[e]} buckets while other experiments have {n}"))
    aux = registry.auxiliary
    X = np.full((n, len(exp_ids), len(aux)), np.nan)
    Y = np.full((n, len(exp_ids)), np.nan)
    y_id = registry.north_star_long.metric_id
    for ji, e in enumerate(exp_ids):
        for bi, b in enumerate(buckets[e]):
            for mi, entry in enumerate(aux):
                X[bi, ji, mi] = cells.get((e, b, entry.metric_id), np.nan)
            Y[bi, ji] = cells.get((e, b, y_id), np.nan)
    first = exp_ids[0]
    panel = ExperimentPanel(tuple(exp_ids), X, Y, registry, tuple(buckets[first]) + tuple(
        str(i) for i in range(len(buckets[first]), n)))
    report.extend(validate_panel(panel))
    return panel, report


def load_panel(data_path: str | os.PathLike, registry_path: str | os.PathLike | MetricRegistry
               ) -> ExperimentPanel:
    """Load and validate a panel, raising the first ingestion error found."""
    registry = registry_path if isinstance(registry_path, MetricRegistry) else read_registry(registry_path)
    panel, report = read_cells(data_path, registry)
    report.raise_for_errors()
    assert panel is not None
    return panel


def default_registry_path(data_path: str | os.PathLike) -> Path:
    """``panel.csv`` -> ``panel.registry.csv``."""
    p = Path(data_path)
    return p.with_name(p.stem + ".registry.csv")


class atomic_write:
    """Text-mode context manager writing to a temp file renamed into place on success."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)

    def __enter__(self):
        directory = self.path.parent if str(self.path.parent) else Path(".")
        directory.mkdir(parents=True, exist_ok=True)
        fd, self._tmp = tempfile.mkstemp(prefix=f".{self.path.name}.", dir=directory)
        self._fh = os.fdopen(fd, "w", newline="", encoding="utf-8")
        return self._fh

    def __exit__(self, exc_type, exc, tb):
        self._fh.close()
        if exc_type is None:
            os.chmod(self._tmp, 0o644)
            os.replace(self._tmp, self.path)
        else:
            os.unlink(self._tmp)
        return False


def _fmt(x: float) -> str:
    # repr round-trips IEEE doubles exactly
    return repr(float(x))


def panel_rows(panel: ExperimentPanel) -> Iterable[list[str]]:
    """Delta-level rows with registry signs undone, so reloading restores the panel."""
    aux = panel.registry.auxiliary
    y = panel.registry.north_star_long
    for ji, exp in enumerate(panel.experiments):
        for bi, bucket in enumerate(panel.bucket_ids):
            for mi, entry in enumerate(aux):
                yield [exp, bucket, entry.metric_id, _fmt(entry.sign * panel.X[bi, ji, mi])]
            yield [exp, bucket, y.metric_id, _fmt(y.sign * panel.Y[bi, ji])]


def write_panel(panel: ExperimentPanel, path: str | os.PathLike) -> None:
    with atomic_write(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DELTA_COLUMNS)
        writer.writerows(panel_rows(panel))
