"""Datasets, synthetic generation, CSV ingestion, and group sampling.

Randomness policy: every stochastic operation takes an explicit seed and
draws from a Philox counter-based 64-bit generator (via numpy's
``Generator``), so identical seeds give bit-identical output on any
platform. Independent streams are derived with ``SeedSequence.spawn``.

On-disk formats:

* datasets -- CSV with a header row; feature columns are numeric, the
  label column (named, default "label") is categorical. Labels are
  re-indexed to 1..k in first-appearance order and the original names kept
  on the Dataset so class identities survive round trips. Floats are
  written with ``repr`` so values round-trip to the last bit.
* aggregate observations -- JSON lines, one object per group:
  ``{"xs": [[...], ...], "z": <0|1|[counts...]>, "task": "<kind>"}``.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .tasks import Task, aggregate_label


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


@dataclass
class Dataset:
    """Feature matrix (n, d) with integer labels in 1..k."""

    features: np.ndarray
    labels: np.ndarray
    k: int
    label_names: list[str] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be one per feature row")
        if self.n == 0:
            raise ValueError("empty dataset")
        if self.labels.min() < 1 or self.labels.max() > self.k:
            raise ValueError(f"labels must lie in 1..{self.k}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(self.features[indices], self.labels[indices], self.k, self.label_names)

    def relabel_to(self, names: list[str]) -> "Dataset":
        """Re-index labels so index i means names[i].

        First-appearance indexing is per file, so two CSVs of the same data
        can disagree on which integer means which class; aligning both to
        one name order restores stable class identities before comparing
        predictions across files.
        """
        if self.label_names is None:
            raise ValueError("dataset carries no label names to align by")
        unknown = set(self.label_names) - set(names)
        if unknown:
            raise ValueError(f"labels {sorted(unknown)} missing from the reference order {names}")
        position = {name: i + 1 for i, name in enumerate(names)}
        mapping = np.array([position[name] for name in self.label_names])
        return Dataset(self.features, mapping[self.labels - 1], k=len(names), label_names=list(names))


@dataclass
class SyntheticSpec:
    """Gaussian mixture: one isotropic component per class."""

    k: int
    d: int
    means: np.ndarray
    spreads: np.ndarray
    prior: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).reshape(self.k, self.d)
        self.spreads = np.asarray(self.spreads, dtype=np.float64).reshape(self.k)
        self.prior = np.asarray(self.prior, dtype=np.float64).reshape(self.k)
        if np.any(self.spreads <= 0.0):
            raise ValueError("spreads must be positive")
        if np.any(self.prior < 0.0) or abs(self.prior.sum() - 1.0) > 1e-9:
            raise ValueError("prior must be a distribution over the k classes")

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "d": self.d,
            "means": self.means.tolist(),
            "spreads": self.spreads.tolist(),
            "prior": self.prior.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SyntheticSpec":
        return cls(
            k=int(doc["k"]),
            d=int(doc["d"]),
            means=doc["means"],
            spreads=doc["spreads"],
            prior=doc["prior"],
            seed=int(doc.get("seed", 0)),
        )


def generate_synthetic(spec: SyntheticSpec, n: int) -> Dataset:
    """Draw n labeled points i.i.d. from the mixture; deterministic in the seed."""
    if n < 1:
        raise ValueError("empty dataset requested")
    rng = _rng(spec.seed)
    labels = rng.choice(spec.k, size=n, p=spec.prior) + 1
    noise = rng.standard_normal((n, spec.d))
    features = spec.means[labels - 1] + noise * spec.spreads[labels - 1][:, None]
    return Dataset(features, labels, spec.k)


def save_csv(dataset: Dataset, path, label_column: str = "label") -> None:
    """Write the dataset as CSV; float features use repr for exact round trips."""
    names = dataset.label_names
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(dataset.d)] + [label_column])
        for row, label in zip(dataset.features, dataset.labels):
            name = names[label - 1] if names else str(int(label))
            writer.writerow([repr(float(v)) for v in row] + [name])


def load_csv(path, label_column: str = "label") -> Dataset:
    """Load a CSV dataset, re-indexing labels to 1..k in first-appearance order."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError("empty dataset")
        try:
            label_idx = header.index(label_column)
        except ValueError:
            raise ValueError(f"label column {label_column!r} not in header {header}") from None
        feature_idx = [i for i in range(len(header)) if i != label_idx]
        features = []
        raw_labels = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"line {line_no} has {len(row)} fields, header has {len(header)}")
            try:
                values = [float(row[i]) for i in feature_idx]
            except ValueError as exc:
                raise ValueError(f"non-numeric feature on line {line_no}: {exc}") from None
            if any(not np.isfinite(v) for v in values):
                raise ValueError(f"non-numeric feature on line {line_no}: non-finite value")
            features.append(values)
            raw_labels.append(row[label_idx])
    if not features:
        raise ValueError("empty dataset")
    names: list[str] = []
    index = {}
    labels = []
    for name in raw_labels:
        if name not in index:
            index[name] = len(names) + 1
            names.append(name)
        labels.append(index[name])
    return Dataset(np.array(features), np.array(labels), k=len(names), label_names=names)


@dataclass
class GroupObservation:
    """A group of m feature vectors with its aggregate label."""

    xs: np.ndarray
    z: object
    task_kind: str
    indices: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64)
        if self.xs.ndim != 2:
            raise ValueError("group features must be (m, d)")

    @property
    def m(self) -> int:
        return self.xs.shape[0]


def sample_groups(
    dataset: Dataset,
    task: Task,
    m: int,
    n_groups: int,
    seed: int,
    positive_label: int | None = None,
) -> list[GroupObservation]:
    """Sample groups uniformly with replacement and label them with g.

    Group members are independent draws from the dataset; z is computed
    from the members' true labels, so observed labels are always
    consistent with the hidden ones. ``m`` must match the task's group
    size. For MIL the dataset's 1..k labels map to {0,1} by the indicator
    of ``positive_label`` (default: the highest class).
    """
    if m != task.m:
        raise ValueError(f"group size {m} does not match task {task.kind!r} (m={task.m})")
    if task.kind == "mil":
        if positive_label is None:
            positive_label = dataset.k
        if not 1 <= positive_label <= dataset.k:
            raise ValueError(f"positive label {positive_label} outside 1..{dataset.k}")
    elif dataset.k > task.k:
        raise ValueError(f"dataset has {dataset.k} classes but task expects at most {task.k}")
    rng = _rng(seed)
    draws = rng.integers(0, dataset.n, size=(n_groups, m))
    observations = []
    for row in draws:
        member_labels = dataset.labels[row]
        if task.kind == "mil":
            member_labels = (member_labels == positive_label).astype(np.int64)
        z = aggregate_label(task, member_labels)
        observations.append(
            GroupObservation(xs=dataset.features[row], z=z, task_kind=task.kind, indices=row.copy())
        )
    return observations


def save_observations(observations: list[GroupObservation], path) -> None:
    """Write groups as JSON lines ({"xs", "z", "task"} per line)."""
    with open(path, "w", encoding="utf-8") as fh:
        for obs in observations:
            z = list(obs.z) if isinstance(obs.z, (tuple, list)) else int(obs.z)
            doc = {"xs": obs.xs.tolist(), "z": z, "task": obs.task_kind}
            fh.write(json.dumps(doc) + "\n")


def load_observations(path) -> list[GroupObservation]:
    """Read a JSON-lines observation file; all lines must share one task kind."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"observation file not found: {path}")
    observations = []
    kinds = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            z = doc["z"]
            z = tuple(int(c) for c in z) if isinstance(z, list) else int(z)
            obs = GroupObservation(xs=np.array(doc["xs"]), z=z, task_kind=doc["task"])
            kinds.add(obs.task_kind)
            observations.append(obs)
    if not observations:
        raise ValueError(f"no observations in {path}")
    if len(kinds) > 1:
        raise ValueError(f"mixed task kinds in one file: {sorted(kinds)}")
    return observations
