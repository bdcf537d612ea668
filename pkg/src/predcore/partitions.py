"""Predictive coresets for random partitions.

The data model is a Gaussian location mixture with a DP mixing measure:
cluster locations come from a base prior, observations from a Gaussian
kernel at their location. Each outer iteration imputes latent locations
for every observation by sampling a clustering from the prior, pairs
them with the data, and runs the joint (y, theta) urn on both sides.
Weights scale only the observed y-coordinates; imputed locations ride
along unscaled.

Also holds the partition utilities: variation of information, compact
relabeling, CRP sampling, and label-aligned point estimates.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import entropy

from .engine import (
    CoresetRunConfig,
    CoresetWeights,
    RunReport,
    _concat_arrays,
    _optimize_arrays,
    select_support,
)
from .measures import Dataset, GroundMetric, center_dataset
from .urn import DPConfig, JointMixtureBase, sample_trajectory, materialize_arrays

__all__ = [
    "Partition",
    "MixtureSpec",
    "sample_prior_clustering",
    "extract_subset",
    "extend_partition_crp",
    "variation_of_information",
    "cluster_point_estimate",
    "run_partition_coreset",
    "save_partition_csv",
    "load_partition_csv",
]


@dataclass(frozen=True, eq=False)
class Partition:
    """Cluster assignment with compact labels 0..K-1.

    Raw labels are compacted in first-appearance order, so two inputs
    describing the same grouping construct equal label vectors.
    """

    labels: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.labels, dtype=int)
        if raw.ndim != 1 or raw.shape[0] == 0:
            raise ValueError("labels must be a non-empty integer vector")
        _, compact = np.unique(raw, return_inverse=True)
        # np.unique sorts; remap to first-appearance order
        order = {}
        out = np.empty_like(compact)
        for i, c in enumerate(compact):
            if c not in order:
                order[c] = len(order)
            out[i] = order[c]
        out.flags.writeable = False
        object.__setattr__(self, "labels", out)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def K(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def cardinalities(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.K)


@dataclass(frozen=True)
class MixtureSpec:
    """Gaussian location mixture with DP mixing.

    Cluster locations are N(0, mean_sd^2 I_dim) draws; observations are
    N(location, kernel_sd^2 I_dim).
    """

    dim: int
    kernel_sd: float = 1.0
    mean_sd: float = 3.0
    concentration: float = 1.0

    def __post_init__(self):
        if self.kernel_sd <= 0 or self.mean_sd <= 0:
            raise ValueError("scales must be positive")
        if self.concentration <= 0:
            raise ValueError("mixing concentration must be positive")

    def joint_base(self) -> JointMixtureBase:
        return JointMixtureBase(self.dim, self.kernel_sd, self.mean_sd)


def sample_prior_clustering(data_size: int, spec: MixtureSpec, rng):
    """Latent locations and the partition they induce, from the prior.

    Chinese-restaurant urn on the locations: customer i starts a new
    cluster with probability conc / (conc + i) (drawing a fresh location)
    and otherwise copies a uniformly chosen earlier customer's location.
    """
    if data_size < 1:
        raise ValueError("data_size must be >= 1")
    conc = spec.concentration
    labels = np.empty(data_size, dtype=int)
    theta = np.empty((data_size, spec.dim))
    locations = []
    for i in range(data_size):
        if rng.random() * (conc + i) < conc:
            loc = rng.standard_normal(spec.dim) * spec.mean_sd
            locations.append(loc)
            labels[i] = len(locations) - 1
        else:
            j = int(rng.integers(i))
            labels[i] = labels[j]
        theta[i] = locations[labels[i]]
    return theta, Partition(labels)


def extract_subset(theta, partition: Partition, support_indices):
    """Restrict locations and partition to the support, labels compacted."""
    idx = np.asarray(support_indices, dtype=int)
    return np.asarray(theta)[idx], Partition(partition.labels[idx])


def extend_partition_crp(
    partition: Partition, M: int, concentration: float, rng
) -> np.ndarray:
    """Labels of M further items under the CRP predictive.

    The closed-form branch for the DP mixture: each new item joins an
    existing cluster proportionally to its size or opens a new one
    proportionally to the concentration.
    """
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    labels = list(partition.labels)
    counts = list(partition.cardinalities)
    out = np.empty(M, dtype=int)
    for t in range(M):
        total = len(labels) + t
        if rng.random() * (concentration + total) < concentration:
            counts.append(0)
            k = len(counts) - 1
        else:
            # a uniformly chosen existing item's cluster = size-biased pick
            r = int(rng.integers(total))
            k = labels[r] if r < len(labels) else out[r - len(labels)]
        counts[k] += 1
        out[t] = k
    return out


def variation_of_information(a: Partition, b: Partition) -> float:
    """VI(a, b) = H(a) + H(b) - 2 I(a, b), in nats."""
    if len(a) != len(b):
        raise ValueError("partitions must have equal length")
    cont = np.zeros((a.K, b.K))
    np.add.at(cont, (a.labels, b.labels), 1.0)
    h_joint = entropy(cont.ravel())
    h_a = entropy(cont.sum(axis=1))
    h_b = entropy(cont.sum(axis=0))
    return max(2.0 * h_joint - h_a - h_b, 0.0)


def _align_labels(draw: Partition, reference: Partition) -> np.ndarray:
    """Relabel a draw to maximize overlap with the reference clusters.

    Unmatched clusters (draw has more than the reference) get fresh
    labels beyond the reference's range, in draw-label order.
    """
    cont = np.zeros((draw.K, reference.K))
    np.add.at(cont, (draw.labels, reference.labels), 1.0)
    rows, cols = linear_sum_assignment(-cont)
    mapping = np.full(draw.K, -1, dtype=int)
    mapping[rows] = cols
    nxt = reference.K
    for k in range(draw.K):
        if mapping[k] == -1:
            mapping[k] = nxt
            nxt += 1
    return mapping[draw.labels]


def cluster_point_estimate(posterior_draws) -> Partition:
    """Per-item modal label after aligning draws to the first draw.

    Raw labels are not identifiable across draws, so each draw is
    relabeled by maximum-overlap matching first; ties in the vote go to
    the lowest label.
    """
    draws = list(posterior_draws)
    if not draws:
        raise ValueError("need at least one posterior draw")
    n = len(draws[0])
    for d in draws:
        if len(d) != n:
            raise ValueError("draws must have equal length")
    reference = draws[0]
    aligned = [reference.labels] + [_align_labels(d, reference) for d in draws[1:]]
    stacked = np.stack(aligned)
    top = int(stacked.max()) + 1
    votes = np.zeros((n, top), dtype=int)
    for row in stacked:
        votes[np.arange(n), row] += 1
    return Partition(votes.argmax(axis=1))


def run_partition_coreset(
    data: Dataset,
    spec: MixtureSpec,
    cfg: CoresetRunConfig,
    metric: Optional[GroundMetric] = None,
    dp: Optional[DPConfig] = None,
):
    """Coreset weights for clustering problems via the joint-pairs urn.

    Per iteration: sample a prior clustering to impute a location for
    every observation, pair observations with their locations, run the
    urn over pairs on the full and coreset sides, and optimize weights
    under the pair metric. The weights scale observed coordinates only.
    """
    t0 = time.monotonic()
    N = len(data)
    if data.dim != spec.dim:
        raise ValueError("data dimension does not match the mixture spec")
    if cfg.n > N:
        raise ValueError(f"coreset size {cfg.n} exceeds dataset size {N}")
    if cfg.share_trajectory and cfg.n != N:
        raise ValueError("share_trajectory requires n == N")
    if metric is None:
        metric = GroundMetric.latent_pair(2.0, latent_scale=1.0)
    if dp is None:
        dp = DPConfig(alpha=1.0, base=spec.joint_base())

    centered, _ = center_dataset(data)
    coords = centered.coords

    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.niter + 1)
    if cfg.share_trajectory:
        support = np.arange(N)
    else:
        support = select_support(data, cfg.n, np.random.default_rng(seeds[0]))
    sup_coords = coords[support]

    weight_sum = np.zeros(cfg.n)
    kept = 0
    iterations = []
    for t in range(cfg.niter):
        rng = np.random.default_rng(seeds[t + 1])
        theta, s = sample_prior_clustering(N, spec, rng)
        full_pairs = (coords, None, theta)
        support_pairs = (sup_coords, None, theta[support])

        full_traj = sample_trajectory(N, dp, cfg.M, rng)
        cs_traj = (
            full_traj
            if cfg.share_trajectory
            else sample_trajectory(cfg.n, dp, cfg.M, rng)
        )
        draws = materialize_arrays(full_traj, full_pairs)
        if cfg.augment_observed:
            full_arrays = _concat_arrays(full_pairs, draws)
            full_masses = np.full(N + cfg.M, 1.0 / (N + cfg.M))
        else:
            full_arrays = draws
            full_masses = np.full(cfg.M, 1.0 / cfg.M)

        res = _optimize_arrays(
            full_arrays, full_masses, cs_traj, support_pairs, metric, cfg
        )
        if not res.aborted:
            weight_sum += res.weights
            kept += 1
        iterations.append(
            {
                "clusters": s.K,
                "initial_objective": res.initial_objective,
                "final_objective": res.final_objective,
                "iters": res.iters,
                "solver": res.solver,
                "aborted": res.aborted,
                "message": res.message,
                "weights": None if res.aborted else res.weights.tolist(),
            }
        )

    if kept == 0:
        raise RuntimeError("every iteration aborted; no weights to average")
    weights = CoresetWeights(values=weight_sum / kept, support_indices=support)
    report = RunReport(
        n=cfg.n,
        N=N,
        M=cfg.M,
        niter=cfg.niter,
        order=cfg.order,
        augment_observed=cfg.augment_observed,
        share_trajectory=cfg.share_trajectory,
        seed=cfg.seed,
        aborted_iterations=cfg.niter - kept,
        wall_time_s=time.monotonic() - t0,
        iterations=iterations,
    )
    return weights, report


def save_partition_csv(partition: Partition, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"])
        for lab in partition.labels:
            writer.writerow([int(lab)])


def load_partition_csv(path) -> Partition:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["label"]:
            raise ValueError(f"unexpected partition header {header!r}")
        labels = [int(row[0]) for row in reader]
    return Partition(np.array(labels, dtype=int))
