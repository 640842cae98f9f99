"""Histogram datasets, merge trees and word maps."""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed or invalid histogram data."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HistogramDataset:
    """n labelled t-bin histograms.

    ``counts[i, j]`` is the value of bin ``j`` for sample ``i``; ``word_ids[j]``
    is the merge-tree node id that bin ``j`` currently represents.
    """

    counts: np.ndarray
    labels: np.ndarray
    word_ids: np.ndarray = None

    def __post_init__(self):
        counts = _frozen(self.counts, np.float64)
        labels = _frozen(self.labels, np.int64)
        if counts.ndim != 2:
            raise DatasetError("counts must be a 2-d matrix")
        n, t = counts.shape
        if labels.shape != (n,):
            raise DatasetError(f"expected {n} labels, got {labels.shape[0]}")
        if n < 1 or t < 1:
            raise DatasetError(f"need at least one sample and one bin, got n={n}, t={t}")
        if not np.all(np.isfinite(counts)):
            raise DatasetError("non-finite bin value")
        if np.any(counts < 0):
            i, j = np.argwhere(counts < 0)[0]
            raise DatasetError(f"negative bin value at row {i}, column {j}")
        word_ids = np.arange(t) if self.word_ids is None else self.word_ids
        word_ids = _frozen(word_ids, np.int64)
        if word_ids.shape != (t,):
            raise DatasetError("word_ids length must equal number of bins")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "word_ids", word_ids)

    @property
    def n(self):
        return self.counts.shape[0]

    @property
    def t(self):
        return self.counts.shape[1]

    @property
    def classes(self):
        return np.unique(self.labels)

    @property
    def n_classes(self):
        return len(self.classes)

    def class_index(self):
        """Labels recoded to 0..C-1 in sorted class-id order."""
        return np.searchsorted(self.classes, self.labels)

    def binary_labels(self):
        """Labels as -1/+1; the smaller class id maps to -1."""
        if self.n_classes != 2:
            raise DatasetError(f"expected 2 classes, got {self.n_classes}")
        return np.where(self.class_index() == 1, 1.0, -1.0)


def load_dataset(path):
    """Read a ``label,w0,w1,...`` CSV file."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        t = len(header) - 1
        if t < 1:
            raise DatasetError(f"{path}: header declares no word columns")
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != t + 1:
                raise DatasetError(
                    f"{path}: ragged row at line {lineno} "
                    f"({len(row) - 1} values, expected {t})")
            try:
                labels.append(int(row[0]))
                values = [float(v) for v in row[1:]]
            except ValueError as e:
                raise DatasetError(f"{path}: line {lineno}: {e}") from None
            for j, v in enumerate(values):
                if v < 0:
                    raise DatasetError(
                        f"{path}: negative bin value at line {lineno}, "
                        f"column {header[j + 1]!r}")
            rows.append(values)
    if len(set(labels)) < 2:
        raise DatasetError(f"{path}: single class present")
    return HistogramDataset(np.array(rows, dtype=np.float64).reshape(-1, t),
                            np.array(labels))


def save_dataset(ds, path):
    """Write ``ds`` as CSV; values use repr so they round-trip exactly."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(dataset_to_csv(ds))


def dataset_to_csv(ds):
    lines = ["label," + ",".join(f"w{j}" for j in range(ds.t))]
    for label, row in zip(ds.labels, ds.counts):
        lines.append(str(int(label)) + "," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def preprocess(ds, normalize=False, sqrt=False):
    """l1-normalise rows and/or take the square root of every bin.

    Normalisation runs first when both are requested.
    """
    h = ds.counts.copy()
    if normalize:
        totals = h.sum(axis=1)
        zero = np.flatnonzero(totals == 0)
        if zero.size:
            raise DatasetError(f"cannot normalize all-zero row {zero[0]}")
        h /= totals[:, None]
    if sqrt:
        h = np.sqrt(h)
    return HistogramDataset(h, ds.labels, ds.word_ids)


@dataclass(frozen=True, eq=False)
class WordMap:
    """Flat assignment of original words to clusters ``0..k-1``."""

    assignment: np.ndarray

    def __post_init__(self):
        a = _frozen(self.assignment, np.int64)
        if a.ndim != 1 or a.size == 0:
            raise DatasetError("assignment must be a non-empty vector")
        k = int(a.max()) + 1
        if a.min() < 0 or np.unique(a).size != k:
            raise DatasetError("assignment must hit every cluster in [0, k)")
        object.__setattr__(self, "assignment", a)

    @property
    def k(self):
        return int(self.assignment.max()) + 1

    @classmethod
    def identity(cls, t):
        return cls(np.arange(t))

    def to_dict(self):
        return {"k": self.k, "assignment": [int(x) for x in self.assignment]}

    @classmethod
    def from_dict(cls, d):
        wm = cls(np.asarray(d["assignment"]))
        if "k" in d and int(d["k"]) != wm.k:
            raise DatasetError("word map 'k' disagrees with assignment")
        return wm


def apply_merge_map(ds, word_map):
    """Sum the bins of ``ds`` that share a cluster in ``word_map``."""
    a = word_map.assignment
    if a.shape[0] != ds.t:
        raise DatasetError(
            f"word map covers {a.shape[0]} words, dataset has {ds.t}")
    k = word_map.k
    out = np.zeros((ds.n, k))
    for g in range(k):
        out[:, g] = ds.counts[:, a == g].sum(axis=1)
    return HistogramDataset(out, ds.labels)


@dataclass(frozen=True, eq=False)
class ClassStats:
    classes: np.ndarray
    sums: np.ndarray          # C x t, per-class bin sums
    counts: np.ndarray        # N_c
    sumsq: np.ndarray         # C x t, per-class sum of squares

    @property
    def means(self):
        return self.sums / self.counts[:, None]

    @property
    def global_sums(self):
        return self.sums.sum(axis=0)

    @property
    def global_means(self):
        return self.global_sums / self.counts.sum()

    @property
    def n(self):
        return int(self.counts.sum())


def class_statistics(ds):
    ci = ds.class_index()
    C = ds.n_classes
    sums = np.zeros((C, ds.t))
    sumsq = np.zeros((C, ds.t))
    for c in range(C):
        rows = ds.counts[ci == c]
        sums[c] = rows.sum(axis=0)
        sumsq[c] = (rows * rows).sum(axis=0)
    counts = np.bincount(ci, minlength=C).astype(np.float64)
    return ClassStats(ds.classes, sums, counts, sumsq)


@dataclass(frozen=True)
class MergeEvent:
    level: int
    a: int
    b: int
    new_id: int
    loss: float


def _fmt_loss(x):
    if math.isnan(x) or math.isinf(x):
        raise DatasetError(f"non-finite loss {x!r} cannot be serialised")
    return format(x, ".16e")


@dataclass
class MergeTree:
    initial_size: int
    merges: list = field(default_factory=list)

    def validate(self):
        t0 = self.initial_size
        if t0 < 2:
            raise DatasetError("initial_size must be >= 2")
        live = set(range(t0))
        for k, ev in enumerate(self.merges):
            if ev.level != t0 - k or ev.new_id != t0 + k:
                raise DatasetError(f"merge {k}: bad level/new id")
            if not ev.a < ev.b:
                raise DatasetError(f"merge {k}: expected a < b")
            if ev.a not in live or ev.b not in live:
                raise DatasetError(f"merge {k}: node not live")
            live -= {ev.a, ev.b}
            live.add(ev.new_id)
        return self

    @property
    def min_size(self):
        return self.initial_size - len(self.merges)

    def to_json(self, extra=None):
        """Serialise; losses are written with 17 significant digits."""
        lines = ['{"initial_size": %d, "merges": [' % self.initial_size]
        items = []
        for ev in self.merges:
            items.append('  {"level": %d, "a": %d, "b": %d, "new": %d, "loss": %s}'
                         % (ev.level, ev.a, ev.b, ev.new_id, _fmt_loss(ev.loss)))
        lines.append(",\n".join(items))
        tail = "]"
        if extra:
            for key, value in extra.items():
                tail += ", %s: %s" % (json.dumps(key), json.dumps(value, sort_keys=True))
        lines.append(tail + "}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, d):
        merges = [MergeEvent(int(m["level"]), int(m["a"]), int(m["b"]),
                             int(m["new"]), float(m["loss"]))
                  for m in d["merges"]]
        return cls(int(d["initial_size"]), merges).validate()

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def loss_csv(self):
        lines = ["level,a,b,new,loss"]
        for ev in self.merges:
            lines.append(f"{ev.level},{ev.a},{ev.b},{ev.new_id},{_fmt_loss(ev.loss)}")
        return "\n".join(lines) + "\n"
