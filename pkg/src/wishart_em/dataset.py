"""Observed data container and its on-disk directory format.

A dataset directory holds

``matrices.csv``
    the T observed p x p matrices as stacked p-row blocks;
``covariates.csv``
    T rows of d covariate values;
``labels.csv``
    optional, one integer group label (1..K) per line;
``means.csv``
    optional, the K true group means as stacked blocks;
``trained_means.csv``
    optional, the K plug-in means estimated from training draws.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import spd
from .errors import DimensionMismatch


def scaled_distances(covariates: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean distances divided by their maximum (all zeros stay zero)."""
    d = spd.pairwise_distances(np.atleast_2d(np.asarray(covariates, dtype=float)))
    top = d.max() if d.size else 0.0
    return d / top if top > 0 else d


@dataclass
class Dataset:
    matrices: np.ndarray
    covariates: np.ndarray
    labels: np.ndarray | None = None
    means: np.ndarray | None = None
    trained_means: np.ndarray | None = None

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=float)
        self.covariates = np.asarray(self.covariates, dtype=float)
        if self.covariates.ndim == 1:
            self.covariates = self.covariates[:, None]
        if self.matrices.ndim != 3 or self.matrices.shape[1] != self.matrices.shape[2]:
            raise DimensionMismatch(f"matrices must be T x p x p, got {self.matrices.shape}")
        if self.covariates.shape[0] != self.matrices.shape[0]:
            raise DimensionMismatch("matrices and covariates disagree on T")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.shape != (self.T,):
                raise DimensionMismatch("labels must have one entry per observation")

    @property
    def T(self) -> int:
        return self.matrices.shape[0]

    @property
    def p(self) -> int:
        return self.matrices.shape[1]

    @property
    def distances(self) -> np.ndarray:
        return scaled_distances(self.covariates)


def _write_rows(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in rows:
            writer.writerow([repr(float(v)) for v in np.atleast_1d(row)])


def _read_rows(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    if len({len(r) for r in rows}) > 1:
        raise DimensionMismatch(f"{path}: ragged rows")
    return np.array(rows)


def write_labels(path: str | Path, labels) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def read_labels(path: str | Path) -> np.ndarray:
    return np.array([int(line) for line in Path(path).read_text().split()], dtype=int)


def write_dataset(directory: str | Path, data: Dataset) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    spd.write_spd_csv(out / "matrices.csv", data.matrices)
    _write_rows(out / "covariates.csv", data.covariates)
    if data.labels is not None:
        write_labels(out / "labels.csv", data.labels)
    if data.means is not None:
        spd.write_spd_csv(out / "means.csv", data.means)
    if data.trained_means is not None:
        spd.write_spd_csv(out / "trained_means.csv", data.trained_means)
    return out


def read_dataset(directory: str | Path) -> Dataset:
    src = Path(directory)
    if not (src / "matrices.csv").exists():
        raise FileNotFoundError(f"{src} has no matrices.csv")
    matrices = np.array(spd.read_spd_csv(src / "matrices.csv"))
    covariates = _read_rows(src / "covariates.csv")

    def optional_blocks(name):
        path = src / name
        return np.array(spd.read_spd_csv(path)) if path.exists() else None

    labels = read_labels(src / "labels.csv") if (src / "labels.csv").exists() else None
    return Dataset(
        matrices=matrices,
        covariates=covariates,
        labels=labels,
        means=optional_blocks("means.csv"),
        trained_means=optional_blocks("trained_means.csv"),
    )
