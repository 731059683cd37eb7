"""Imperfect sensing events and the sensed / ground-truth density accumulators."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .mobility import Agent
from .world_graph import WorldGraph


@dataclass(frozen=True)
class SensingParams:
    p: float
    lam: float
    radius: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.radius < 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")


def sense(n_in_range, params: SensingParams, rng: np.random.Generator):
    """Binomial(n, p) true detections plus Poisson(lambda) false positives.

    Accepts a scalar count or an integer array (one draw per element).
    """
    n = np.asarray(n_in_range, dtype=np.int64)
    out = rng.binomial(n, params.p) + rng.poisson(params.lam, size=n.shape)
    return int(out) if out.ndim == 0 else out


def people_in_range(sensor: Agent, people: list[Agent], g: WorldGraph, radius: float) -> int:
    sx, sy = g.coords[sensor.position]
    r2 = radius * radius
    count = 0
    for a in people:
        x, y = g.coords[a.position]
        if (x - sx) ** 2 + (y - sy) ** 2 <= r2 + 1e-12:
            count += 1
    return count


def bucket_map(g: WorldGraph, coarsen: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Node -> bucket index, plus bucket centre coordinates.

    ``coarsen`` merges ``coarsen x coarsen`` unit cells; 1 keeps one bucket per node.
    """
    if coarsen < 1:
        raise ValueError("coarsen must be >= 1")
    if coarsen == 1:
        return np.arange(g.n_nodes), g.coords.copy()
    lo = g.coords.min(axis=0)
    cell = np.floor((g.coords - lo) / coarsen).astype(np.int64)
    keys, bucket_of = np.unique(cell[:, ::-1], axis=0, return_inverse=True)
    bucket_of = bucket_of.ravel()
    counts = np.bincount(bucket_of, minlength=len(keys))
    centres = np.column_stack([
        np.bincount(bucket_of, weights=g.coords[:, k], minlength=len(keys)) / counts
        for k in (0, 1)
    ])
    return bucket_of, centres


class DensityField:
    """Per-bucket accumulators for sensed counts and true occupancy."""

    def __init__(self, g: WorldGraph, coarsen: int = 1):
        self.graph = g
        self.bucket_of, self.bucket_xy = bucket_map(g, coarsen)
        nb = len(self.bucket_xy)
        self.n_buckets = nb
        self.sensed_sum = np.zeros(nb, dtype=np.int64)
        self.sensed_samples = np.zeros(nb, dtype=np.int64)
        self.truth_sum = np.zeros(nb, dtype=np.int64)
        self.truth_steps = 0

    @property
    def total_samples(self) -> int:
        return int(self.sensed_samples.sum())


def record_step(field: DensityField, sensors: list[Agent], people: list[Agent],
                params: SensingParams, rng: np.random.Generator) -> DensityField:
    g = field.graph
    pos = np.fromiter((a.position for a in people), dtype=np.int64, count=len(people))
    occ = np.bincount(pos, minlength=g.n_nodes)
    field.truth_sum += np.bincount(field.bucket_of, weights=occ, minlength=field.n_buckets).astype(np.int64)
    field.truth_steps += 1
    if sensors:
        spos = np.fromiter((a.position for a in sensors), dtype=np.int64, count=len(sensors))
        n_in = g.within_radius(params.radius)[spos] @ occ
        counts = sense(np.rint(n_in).astype(np.int64), params, rng)
        buckets = field.bucket_of[spos]
        np.add.at(field.sensed_sum, buckets, counts)
        np.add.at(field.sensed_samples, buckets, 1)
    return field


def snapshot(field: DensityField) -> tuple[np.ndarray, np.ndarray]:
    """(psi, phi): per-bucket mean sensed count and mean true occupancy."""
    if field.truth_steps == 0:
        raise ValueError("snapshot of a field with no recorded steps")
    k = field.sensed_samples
    psi = np.divide(field.sensed_sum, k, out=np.zeros(field.n_buckets), where=k > 0)
    phi = field.truth_sum / field.truth_steps
    return psi, phi


def write_snapshot_csv(field: DensityField, path) -> None:
    psi, phi = snapshot(field)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bucket_id", "x", "y", "psi", "phi", "k_x"])
        for b in range(field.n_buckets):
            x, y = field.bucket_xy[b]
            w.writerow([b, repr(float(x)), repr(float(y)), repr(float(psi[b])),
                        repr(float(phi[b])), int(field.sensed_samples[b])])


def read_snapshot_csv(path) -> dict[str, np.ndarray]:
    cols: dict[str, list] = {k: [] for k in ("bucket_id", "x", "y", "psi", "phi", "k_x")}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for k in cols:
                cols[k].append(row[k])
    return {
        "bucket_id": np.array(cols["bucket_id"], dtype=np.int64),
        "x": np.array(cols["x"], dtype=float),
        "y": np.array(cols["y"], dtype=float),
        "psi": np.array(cols["psi"], dtype=float),
        "phi": np.array(cols["phi"], dtype=float),
        "k_x": np.array(cols["k_x"], dtype=np.int64),
    }
