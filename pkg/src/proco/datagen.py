"""Synthetic long-tailed datasets.

Training counts follow ``n_j = round(n_max * lam**j)`` with
``lam = gamma ** (-1 / (K - 1))`` so that the largest/smallest ratio is the
imbalance factor ``gamma``. The test split is balanced.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .vmf import VmfParams, sample, sample_uniform_sphere


@dataclass(frozen=True)
class LongTailSpec:
    n_classes: int = 10
    n_max: int = 1000
    gamma: float = 100.0
    p_raw: int = 32
    n_test_per_class: int = 100
    generator: Literal["vmf", "gaussian"] = "vmf"
    kappa: float = 40.0
    # Gaussian-then-normalize mode: per-coordinate noise around the class mean
    noise: float = 0.25
    min_angle_deg: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("need at least one class")
        if self.n_max < 1:
            raise ValueError("n_max must be positive")
        if not self.gamma >= 1:
            raise ValueError("imbalance factor gamma must be >= 1")
        if self.generator not in ("vmf", "gaussian"):
            raise ValueError(f"unknown generator {self.generator!r}")
        if self.generator == "vmf" and self.p_raw % 2:
            raise ValueError("vmf generator needs an even raw dimension")

    @property
    def decay(self) -> float:
        if self.n_classes == 1:
            return 1.0
        return self.gamma ** (-1.0 / (self.n_classes - 1))


@dataclass(frozen=True)
class GroupSplit:
    """Many-shot: more than ``many`` samples; few-shot: fewer than ``few``."""

    many: int = 100
    few: int = 20

    def __post_init__(self):
        if self.few > self.many:
            raise ValueError("few threshold must not exceed many threshold")

    def group(self, count: int) -> str:
        if count > self.many:
            return "many"
        if count < self.few:
            return "few"
        return "medium"

    def assign(self, counts) -> list[str]:
        return [self.group(int(c)) for c in counts]


def class_counts(spec: LongTailSpec) -> np.ndarray:
    j = np.arange(spec.n_classes)
    counts = np.round(spec.n_max * spec.decay**j).astype(np.int64)
    return np.maximum(counts, 1)


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    spec: LongTailSpec
    means: np.ndarray
    counts: np.ndarray
    min_angle_deg: float
    mean_draws: int
    extra: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes

    def priors(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    def sidecar(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "counts": self.counts.tolist(),
            "means": self.means.tolist(),
            "min_pairwise_angle_deg": self.min_angle_deg,
            "mean_draws": self.mean_draws,
            **self.extra,
        }


def _min_angle_deg(means: np.ndarray) -> float:
    if means.shape[0] < 2:
        return 180.0
    cos = np.clip(means @ means.T, -1.0, 1.0)
    np.fill_diagonal(cos, -1.0)
    return math.degrees(math.acos(cos.max()))


def draw_means(rng: np.random.Generator, k: int, p: int, min_angle_deg: float, max_draws: int = 10_000):
    """Uniform class means, redrawn until all pairwise angles clear the floor."""
    for draws in range(1, max_draws + 1):
        means = sample_uniform_sphere(rng, k, p)
        angle = _min_angle_deg(means)
        if angle >= min_angle_deg:
            return means, angle, draws
    raise RuntimeError(f"could not separate {k} means by {min_angle_deg} degrees in {p} dimensions")


def _draw_class(spec: LongTailSpec, rng: np.random.Generator, mean: np.ndarray, n: int) -> np.ndarray:
    if spec.generator == "vmf":
        return sample(VmfParams(mean, spec.kappa), rng, n)
    x = mean + spec.noise * rng.standard_normal((n, spec.p_raw))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def generate(spec: LongTailSpec) -> Dataset:
    """Draw a long-tailed training split and a balanced test split.

    Each class gets its own generator seeded from ``(spec.seed, j)``, so the
    result does not depend on generation order.
    """
    root = np.random.SeedSequence(spec.seed)
    mean_rng = np.random.default_rng(root.spawn(1)[0])
    means, angle, draws = draw_means(mean_rng, spec.n_classes, spec.p_raw, spec.min_angle_deg)
    counts = class_counts(spec)
    class_seeds = np.random.SeedSequence([spec.seed, 1]).spawn(spec.n_classes)
    xs_train, xs_test = [], []
    for j, ss in enumerate(class_seeds):
        rng = np.random.default_rng(ss)
        x = _draw_class(spec, rng, means[j], int(counts[j]) + spec.n_test_per_class)
        xs_train.append(x[: counts[j]])
        xs_test.append(x[counts[j] :])
    return Dataset(
        x_train=np.concatenate(xs_train),
        y_train=np.repeat(np.arange(spec.n_classes), counts),
        x_test=np.concatenate(xs_test),
        y_test=np.repeat(np.arange(spec.n_classes), spec.n_test_per_class),
        spec=spec,
        means=means,
        counts=counts,
        min_angle_deg=angle,
        mean_draws=draws,
    )


# ---------------------------------------------------------------------------
# file formats: CSV rows of (label, x_1, ..., x_p) and a JSON sidecar


def _write_csv(path: Path, x: np.ndarray, y: np.ndarray) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"x{i}" for i in range(x.shape[1])])
        for label, row in zip(y, x):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def _read_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [r for r in reader]
    if not rows:
        raise ValueError(f"{path} has no samples")
    y = np.array([int(r[0]) for r in rows], dtype=np.int64)
    x = np.array([[float(v) for v in r[1:]] for r in rows])
    return x, y


def write_dataset(ds: Dataset, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"train": out / "train.csv", "test": out / "test.csv", "meta": out / "dataset.json"}
    _write_csv(paths["train"], ds.x_train, ds.y_train)
    _write_csv(paths["test"], ds.x_test, ds.y_test)
    paths["meta"].write_text(json.dumps(ds.sidecar(), indent=2, sort_keys=True) + "\n")
    return paths


def read_dataset(in_dir: str | Path) -> Dataset:
    src = Path(in_dir)
    meta = json.loads((src / "dataset.json").read_text())
    spec = LongTailSpec(**meta["spec"])
    x_train, y_train = _read_csv(src / "train.csv")
    x_test, y_test = _read_csv(src / "test.csv")
    return Dataset(
        x_train=x_train,
        y_train=y_train,
        x_test=x_test,
        y_test=y_test,
        spec=spec,
        means=np.asarray(meta["means"]),
        counts=np.asarray(meta["counts"], dtype=np.int64),
        min_angle_deg=float(meta["min_pairwise_angle_deg"]),
        mean_draws=int(meta["mean_draws"]),
    )
