"""Synthetic source/target domains and semi-synthetic datasets.

Simulation returns complete records; :func:`observe` turns them into the
observed :class:`~delaysurv.joint.Dataset` with unreported accidents masked,
and :func:`hidden_truth` recovers the masked ``(z, w)`` for oracle checks and
the Complete baseline. Estimators only ever receive the Dataset.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np

from .exceptions import SchemaError
from .hazards import ConstantHazard, HazardModel
from .joint import Dataset
from .numeric import RngStream


@dataclass(frozen=True)
class SimulationConfig:
    n: int
    accident: HazardModel
    delay: HazardModel
    censor: HazardModel
    tau: Optional[float] = None
    covariate_dim: int = 1
    covariate_law: Union[str, np.ndarray] = "uniform"
    seed: RngStream = RngStream(0)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")


@dataclass(frozen=True)
class CompleteRecord:
    x: np.ndarray
    t1: float
    t2: float
    c: float


@dataclass(frozen=True)
class CompleteRecords:
    """Column store of complete records (covariates, accident time, delay, censoring)."""

    x: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    c: np.ndarray

    def __len__(self):
        return self.t1.size

    def __iter__(self) -> Iterator[CompleteRecord]:
        for i in range(len(self)):
            yield CompleteRecord(self.x[i], float(self.t1[i]), float(self.t2[i]), float(self.c[i]))

    def subset(self, index) -> "CompleteRecords":
        return CompleteRecords(self.x[index], self.t1[index], self.t2[index], self.c[index])


@dataclass(frozen=True)
class HiddenTruth:
    """Accident status for every row, including rows whose accident is masked."""

    z: np.ndarray
    w: np.ndarray


def _covariates(config: SimulationConfig, gen: np.random.Generator) -> np.ndarray:
    law = config.covariate_law
    if isinstance(law, str):
        if law != "uniform":
            raise ValueError(f"unknown covariate law {law!r}")
        return gen.uniform(-1.0, 1.0, size=(config.n, config.covariate_dim))
    law = np.asarray(law, dtype=float)
    if law.ndim != 2 or law.shape[1] != config.covariate_dim:
        raise ValueError("external covariates must be an (N, d) array")
    if law.shape[0] == config.n:
        return law.copy()
    return law[gen.integers(0, law.shape[0], size=config.n)]


def simulate_complete(config: SimulationConfig) -> CompleteRecords:
    """Draw covariates, accident times, delays and censoring times i.i.d."""
    seed = config.seed
    x = _covariates(config, seed.substream(0).generator())
    xm = x if x.shape[1] else None
    n = config.n
    t1 = config.accident.sample(xm, seed.substream(1), size=n)
    t2 = config.delay.sample(xm, seed.substream(2), size=n)
    c = config.censor.sample(xm, seed.substream(3), size=n)
    return CompleteRecords(x, np.asarray(t1, float), np.asarray(t2, float), np.asarray(c, float))


def _effective_censoring(records: CompleteRecords, tau):
    return records.c if tau is None else np.minimum(records.c, tau)


def hidden_truth(records: CompleteRecords, tau: float | None = None) -> HiddenTruth:
    c = _effective_censoring(records, tau)
    w = (records.t1 <= c).astype(np.int8)
    return HiddenTruth(np.minimum(records.t1, c), w)


def observe(records: CompleteRecords, tau: float | None = None, label: str = "") -> Dataset:
    """Apply censoring (and administrative censoring at ``tau``) and mask unreported accidents."""
    c = _effective_censoring(records, tau)
    report = records.t1 + records.t2
    y = np.minimum(report, c)
    v = (report <= c).astype(np.int8)
    z = np.where(v == 1, records.t1, np.nan)
    return Dataset(records.x, y, v, z, tau=tau, label=label)


def simulate(config: SimulationConfig, label: str = "") -> tuple[Dataset, HiddenTruth]:
    records = simulate_complete(config)
    return observe(records, config.tau, label), hidden_truth(records, config.tau)


@dataclass(frozen=True)
class AccidentRecords:
    """Accident-level data ``(x, z', w')`` for semi-synthetic construction."""

    x: np.ndarray
    time: np.ndarray
    event: np.ndarray

    def __len__(self):
        return self.time.size

    def subset(self, index) -> "AccidentRecords":
        return AccidentRecords(self.x[index], self.time[index], self.event[index])

    def standardized(self) -> "AccidentRecords":
        """Divide times by their median."""
        med = float(np.median(self.time))
        if not med > 0:
            raise SchemaError("median accident time must be positive")
        return AccidentRecords(self.x, self.time / med, self.event)


@dataclass(frozen=True)
class SemiSyntheticDraw:
    dataset: Dataset
    truth: HiddenTruth
    censor: np.ndarray
    report_delay: np.ndarray


def semi_synthetic(
    records: AccidentRecords,
    delay_rate: float,
    censor_rate: float,
    seed: RngStream,
    tau: float | None = None,
    label: str = "",
) -> SemiSyntheticDraw:
    """Attach synthetic censoring and reporting delays to accident records.

    With censoring ``c`` and delay ``r`` (constant hazards):
    ``z = min(z', c)``, ``w = w' 1(z' <= c)``, ``y = min(z' + w r, c)`` and
    ``v = w' 1(z' + w r <= c)``. ``tau`` additionally caps ``c``.
    """
    n = len(records)
    c = ConstantHazard(censor_rate).sample(None, seed.substream(0), size=n)
    r = ConstantHazard(delay_rate).sample(None, seed.substream(1), size=n)
    return assemble_semi_synthetic(records, c, r, tau, label)


def assemble_semi_synthetic(records: AccidentRecords, c, r, tau=None, label="") -> SemiSyntheticDraw:
    """Deterministic part of :func:`semi_synthetic` for given censoring and delays."""
    time = np.asarray(records.time, dtype=float)
    event = np.asarray(records.event)
    if np.any(time < 0) or not np.all((event == 0) | (event == 1)):
        raise SchemaError("accident records need time >= 0 and binary event")
    c = np.asarray(c, dtype=float)
    r = np.asarray(r, dtype=float)
    if tau is not None:
        c = np.minimum(c, tau)
    z = np.minimum(time, c)
    w = (event * (time <= c)).astype(np.int8)
    y = np.minimum(time + w * r, c)
    v = (event * (time + w * r <= c)).astype(np.int8)
    ds = Dataset(records.x, y, v, np.where(v == 1, z, np.nan), tau=tau, label=label)
    return SemiSyntheticDraw(ds, HiddenTruth(z, w), c, r)


# -- CSV interfaces ------------------------------------------------------------

def read_accident_csv(path: str | Path) -> AccidentRecords:
    """Read ``x_1,...,x_d,time,event`` rows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[-2:] != ["time", "event"]:
            raise SchemaError(f"{path}: header must end with 'time,event'")
        xcols = header[:-2]
        if xcols != [f"x_{i + 1}" for i in range(len(xcols))]:
            raise SchemaError(f"{path}: covariate columns must be x_1..x_d")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                vals = [float(s) for s in row]
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: non-numeric field") from None
            if vals[-2] < 0 or vals[-1] not in (0.0, 1.0):
                raise SchemaError(f"{path}:{lineno}: need time >= 0 and event in {{0,1}}")
            rows.append(vals)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    arr = np.array(rows)
    return AccidentRecords(arr[:, :-2], arr[:, -2], arr[:, -1].astype(np.int8))


def write_accident_csv(records: AccidentRecords, path: str | Path) -> None:
    d = records.x.shape[1]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow([f"x_{i + 1}" for i in range(d)] + ["time", "event"])
        for xi, t, e in zip(records.x, records.time, records.event):
            out.writerow([repr(float(v)) for v in xi] + [repr(float(t)), int(e)])


def write_dataset_csv(dataset: Dataset, path: str | Path, truth: HiddenTruth | None = None) -> None:
    """Export ``x_*,y,v,z,w``; z and w are blank for unreported rows unless ``truth`` is given."""
    d = dataset.dim
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow([f"x_{i + 1}" for i in range(d)] + ["y", "v", "z", "w"])
        for i in range(dataset.n):
            xs = [repr(float(v)) for v in dataset.x[i]]
            if dataset.v[i] == 1:
                zw = [repr(float(dataset.z[i])), "1"]
            elif truth is not None:
                zw = [repr(float(truth.z[i])), str(int(truth.w[i]))]
            else:
                zw = ["", ""]
            out.writerow(xs + [repr(float(dataset.y[i])), str(int(dataset.v[i]))] + zw)


def read_dataset_csv(path: str | Path, tau: float | None = None, label: str = "") -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header[-4:] != ["y", "v", "z", "w"]:
            raise SchemaError(f"{path}: header must end with 'y,v,z,w'")
        d = len(header) - 4
        xs, ys, vs, zs = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                xs.append([float(s) for s in row[:d]])
                ys.append(float(row[d]))
                v = int(row[d + 1])
                vs.append(v)
                zs.append(float(row[d + 2]) if v == 1 else np.nan)
            except (ValueError, IndexError):
                raise SchemaError(f"{path}:{lineno}: malformed row") from None
    return Dataset(np.array(xs).reshape(len(ys), d), np.array(ys), np.array(vs), np.array(zs), tau, label)
