"""TSP instances, tours, the gap metric, and the dataset text format.

Coordinates are float64 throughout. Generated instances are uniform i.i.d.
in the unit square, drawn from numpy's PCG64 generator; the stream for
instance ``i`` of a dataset is seeded with ``SeedSequence((seed, i))``, so
generation is reproducible and may be parallelized across instances.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetFormatError, InvalidInstanceError, InvalidTourError

DATASET_HEADER = "cycflow-dataset v1"
PROVENANCES = ("exact", "heuristic", "decoded")


@dataclass
class Instance:
    """An unordered set of n >= 3 finite points in the plane."""

    points: np.ndarray
    id: int = 0

    def __post_init__(self) -> None:
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise InvalidInstanceError(
                f"instance {self.id}: points must have shape (n, 2), got {pts.shape}"
            )
        if pts.shape[0] < 3:
            raise InvalidInstanceError(
                f"instance {self.id}: need at least 3 points, got {pts.shape[0]}"
            )
        if not np.isfinite(pts).all():
            raise InvalidInstanceError(f"instance {self.id}: non-finite coordinate")
        self.points = pts

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass
class Tour:
    """A cyclic visiting order together with its Euclidean cycle length.

    ``provenance`` records how the tour was obtained: "exact" (enumeration or
    dynamic programming), "heuristic" (local-search label), or "decoded"
    (read off a transported point cloud).
    """

    order: np.ndarray
    length: float
    provenance: str = "decoded"

    def __post_init__(self) -> None:
        order = np.asarray(self.order, dtype=np.int64)
        if order.ndim != 1:
            raise InvalidTourError("tour order must be one-dimensional")
        if self.provenance not in PROVENANCES:
            raise InvalidTourError(f"unknown tour provenance {self.provenance!r}")
        self.order = order
        self.length = float(self.length)


@dataclass
class DatasetRecord:
    instance: Instance
    tour: Tour | None = None
    target: np.ndarray | None = None  # optional aligned circle embedding, for dumps


@dataclass
class Dataset:
    records: list[DatasetRecord] = field(default_factory=list)
    version: int = 1

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labeled(self) -> bool:
        return bool(self.records) and all(r.tour is not None for r in self.records)


def validate_permutation(order: np.ndarray, n: int) -> np.ndarray:
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
        raise InvalidTourError(
            f"order is not a permutation of 0..{n - 1}: {order.tolist()}"
        )
    return order


def cycle_length(points: np.ndarray, order: np.ndarray) -> float:
    """Euclidean length of the closed cycle visiting ``points`` in ``order``."""
    pts = np.asarray(points, dtype=np.float64)
    order = np.asarray(order, dtype=np.int64)
    diffs = pts[np.roll(order, -1)] - pts[order]
    seg = np.hypot(diffs[:, 0], diffs[:, 1])
    # plain left-to-right accumulation keeps stored lengths reproducible
    total = 0.0
    for s in seg.tolist():
        total += s
    return total


def tour_length(inst: Instance, order: np.ndarray) -> float:
    """Cycle length of ``order`` on ``inst``, closing edge included."""
    order = validate_permutation(order, inst.n)
    return cycle_length(inst.points, order)


def make_tour(inst: Instance, order: np.ndarray, provenance: str) -> Tour:
    return Tour(order=order, length=tour_length(inst, order), provenance=provenance)


def gap_percent(l_method: float, l_opt: float) -> float:
    """Percentage excess of ``l_method`` over the reference length ``l_opt``."""
    if not l_opt > 0:
        raise ValueError(f"reference length must be positive, got {l_opt}")
    return 100.0 * (l_method - l_opt) / l_opt


def instance_rng(seed: int, index: int) -> np.random.Generator:
    """The per-instance PCG64 stream for record ``index`` of a seeded dataset."""
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


def gen_uniform(n: int, count: int, seed: int = 0) -> Dataset:
    """``count`` instances of ``n`` points uniform in the unit square."""
    if n < 3:
        raise InvalidInstanceError(f"need n >= 3, got {n}")
    if count < 1:
        raise InvalidInstanceError(f"need count >= 1, got {count}")
    records = []
    for i in range(count):
        pts = instance_rng(seed, i).random((n, 2))
        records.append(DatasetRecord(Instance(pts, id=i)))
    return Dataset(records)


def _fmt(x: float) -> str:
    # repr of a Python float is the shortest decimal that round-trips
    return repr(float(x))


def dumps_dataset(ds: Dataset) -> str:
    lines = [DATASET_HEADER]
    for rec in ds.records:
        inst = rec.instance
        lines.append(f"instance {inst.id} {inst.n}")
        for x, y in inst.points:
            lines.append(f"{_fmt(x)} {_fmt(y)}")
        if rec.tour is not None:
            order = " ".join(str(int(i)) for i in rec.tour.order)
            lines.append(f"tour {rec.tour.provenance} {_fmt(rec.tour.length)} {order}")
        if rec.target is not None:
            lines.append(f"target {inst.n}")
            for x, y in rec.target:
                lines.append(f"{_fmt(x)} {_fmt(y)}")
    return "\n".join(lines) + "\n"


def write_dataset(ds: Dataset, path: str) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(dumps_dataset(ds))


def _parse_float(tok: str, lineno: int) -> float:
    try:
        val = float(tok)
    except ValueError:
        raise DatasetFormatError(f"bad decimal literal {tok!r}", lineno) from None
    if not np.isfinite(val):
        raise DatasetFormatError(f"non-finite coordinate {tok!r}", lineno)
    return val


def _parse_coords(lines: list[str], start: int, n: int, lineno: int) -> np.ndarray:
    pts = np.empty((n, 2), dtype=np.float64)
    for k in range(n):
        ln = start + k
        if ln >= len(lines):
            raise DatasetFormatError("unexpected end of file inside coordinates", ln + 1)
        toks = lines[ln].split()
        if len(toks) != 2:
            raise DatasetFormatError(
                f"expected '<x> <y>', got {lines[ln]!r}", ln + 1
            )
        pts[k, 0] = _parse_float(toks[0], ln + 1)
        pts[k, 1] = _parse_float(toks[1], ln + 1)
    return pts


def loads_dataset(text: str) -> Dataset:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != DATASET_HEADER:
        raise DatasetFormatError(f"expected header {DATASET_HEADER!r}", 1)
    records: list[DatasetRecord] = []
    i = 1
    while i < len(lines):
        lineno = i + 1
        toks = lines[i].split()
        if len(toks) != 3 or toks[0] != "instance":
            raise DatasetFormatError(f"expected 'instance <id> <n>', got {lines[i]!r}", lineno)
        try:
            inst_id, n = int(toks[1]), int(toks[2])
        except ValueError:
            raise DatasetFormatError(f"bad instance header {lines[i]!r}", lineno) from None
        if n < 3:
            raise DatasetFormatError(f"record {inst_id}: need n >= 3, got {n}", lineno)
        pts = _parse_coords(lines, i + 1, n, lineno)
        inst = Instance(pts, id=inst_id)
        i += 1 + n
        tour = None
        target = None
        if i < len(lines) and lines[i].startswith("tour "):
            lineno = i + 1
            toks = lines[i].split()
            if len(toks) != 3 + n:
                raise DatasetFormatError(
                    f"record {inst_id}: tour line needs provenance, length and {n} indices",
                    lineno,
                )
            prov = toks[1]
            if prov not in PROVENANCES:
                raise DatasetFormatError(
                    f"record {inst_id}: unknown provenance {prov!r}", lineno
                )
            length = _parse_float(toks[2], lineno)
            try:
                order = np.array([int(t) for t in toks[3:]], dtype=np.int64)
            except ValueError:
                raise DatasetFormatError(
                    f"record {inst_id}: bad tour index", lineno
                ) from None
            try:
                validate_permutation(order, n)
            except InvalidTourError as exc:
                raise DatasetFormatError(f"record {inst_id}: {exc}", lineno) from None
            recomputed = cycle_length(pts, order)
            if abs(length - recomputed) > 1e-9 * max(1.0, recomputed):
                raise DatasetFormatError(
                    f"record {inst_id}: stored tour length {length} does not match "
                    f"recomputed {recomputed}",
                    lineno,
                )
            tour = Tour(order=order, length=length, provenance=prov)
            i += 1
        if i < len(lines) and lines[i].startswith("target "):
            lineno = i + 1
            toks = lines[i].split()
            if len(toks) != 2 or toks[1] != str(n):
                raise DatasetFormatError(
                    f"record {inst_id}: expected 'target {n}', got {lines[i]!r}", lineno
                )
            target = _parse_coords(lines, i + 1, n, lineno)
            i += 1 + n
        records.append(DatasetRecord(inst, tour, target))
    return Dataset(records)


def read_dataset(path: str) -> Dataset:
    with open(path, "r", encoding="ascii") as f:
        return loads_dataset(f.read())


def fingerprint(ds: Dataset) -> str:
    """Content hash of the canonical serialization (sha256 hex)."""
    return hashlib.sha256(dumps_dataset(ds).encode("ascii")).hexdigest()
