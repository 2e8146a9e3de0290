"""Per-prediction Shapley attributions and corpus-level word impact ranking.

Attributions are estimated by permutation sampling: each sample draws a
feature ordering and a background document, then switches features from the
background value to the explained instance's value one at a time, crediting
each feature with the change in model output.

Two variance reductions are applied. Orderings come in antithetic pairs (an
ordering and its reverse, sharing one background document), and background
documents are drawn in shuffled cycles with each document's samples
reweighted to an equal share. Once every background document has been drawn,
the attributions sum exactly to ``output - base``.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import math
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .features import SparseVector, as_csr
from .models import Model

MAX_CELLS_PER_CHUNK = 2_000_000
MAX_EXACT_FEATURES = 8


@dataclass(frozen=True)
class Attribution:
    values: dict[int, float]
    base: float
    output: float

    @property
    def total(self) -> float:
        return math.fsum(self.values.values())

    def efficiency_gap(self) -> float:
        return abs(self.total + self.base - self.output)


@dataclass(frozen=True)
class ImpactRanking:
    entries: list[tuple[str, float]]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def terms(self) -> list[str]:
        return [t for t, _ in self.entries]


def _output_fn(model: Model, cols: np.ndarray, output: str):
    if output == "logit":
        return lambda Z: model.logits_dense(Z, cols)
    if output == "probability":
        return lambda Z: expit(model.logits_dense(Z, cols))
    raise ValueError(f"output must be 'probability' or 'logit', got {output!r}")


def _restrict(x: SparseVector, background) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feature support and dense copies of x and the background over it."""
    B = as_csr(background, x.dim)
    if B.shape[0] == 0:
        raise ValueError("background must be non-empty")
    if B.shape[1] != x.dim:
        raise ValueError("background and instance dimensions differ")
    cols = np.union1d(x.indices, np.unique(B.indices)).astype(np.int64)
    xf = np.zeros(cols.size)
    xf[np.searchsorted(cols, x.indices)] = x.counts
    Bf = B[:, cols].toarray()
    return cols, xf, Bf


def shapley_attribute(
    model: Model,
    x: SparseVector,
    background,
    samples: int = 200,
    seed: int = 0,
    output: str = "probability",
) -> Attribution:
    if samples < 1:
        raise ValueError("samples must be >= 1")
    cols, xf, Bf = _restrict(x, background)
    f = _output_fn(model, cols, output)
    base = float(np.mean(f(Bf)))
    out = float(f(xf[None, :])[0])
    m = cols.size
    if m == 0:
        return Attribution({}, base, out)

    rng = np.random.default_rng(seed)
    nb = Bf.shape[0]
    pairs = -(-samples // 2)
    cycles = -(-pairs // nb)
    pair_bg = np.concatenate([rng.permutation(nb) for _ in range(cycles)])[:pairs]
    half = np.array([rng.permutation(m) for _ in range(pairs)])
    perms = np.empty((2 * pairs, m), dtype=np.int64)
    perms[0::2], perms[1::2] = half, half[:, ::-1]
    perms = perms[:samples]
    schedule = np.repeat(pair_bg, 2)[:samples]
    # each background document drawn gets an equal share of the total weight
    uses = np.bincount(schedule, minlength=nb)
    weight = 1.0 / (np.count_nonzero(uses) * uses[schedule])

    phi = np.zeros(m)
    # row t of a sample has the first t features of its ordering switched to x
    rank = np.empty_like(perms)
    np.put_along_axis(rank, perms, np.arange(m)[None, :].repeat(samples, axis=0), axis=1)
    steps = np.arange(m + 1)
    chunk = max(1, MAX_CELLS_PER_CHUNK // ((m + 1) * m))
    for lo in range(0, samples, chunk):
        hi = min(samples, lo + chunk)
        mask = rank[lo:hi, None, :] < steps[None, :, None]          # (s, m+1, m)
        Z = np.where(mask, xf[None, None, :], Bf[schedule[lo:hi]][:, None, :])
        vals = f(Z.reshape(-1, m)).reshape(hi - lo, m + 1)
        diffs = np.diff(vals, axis=1) * weight[lo:hi, None]         # credit for perms[:, t]
        np.add.at(phi, perms[lo:hi].ravel(), diffs.ravel())
    return Attribution(dict(zip(cols.tolist(), phi.tolist())), base, out)


def exact_permutation_shapley(
    model: Model, x: SparseVector, background, output: str = "probability"
) -> Attribution:
    """Average over every ordering and every background document.

    Only feasible for a handful of features; used to check the sampler.
    """
    cols, xf, Bf = _restrict(x, background)
    m = cols.size
    if m > MAX_EXACT_FEATURES:
        raise ValueError(f"{m} features is too many for exhaustive enumeration")
    f = _output_fn(model, cols, output)
    base = float(np.mean(f(Bf)))
    out = float(f(xf[None, :])[0])
    phi = np.zeros(m)
    n_perm = 0
    for perm in itertools.permutations(range(m)):
        n_perm += 1
        for b in Bf:
            z = b.copy()
            prev = f(z[None, :])[0]
            for j in perm:
                z[j] = xf[j]
                cur = f(z[None, :])[0]
                phi[j] += cur - prev
                prev = cur
    phi /= n_perm * Bf.shape[0]
    return Attribution(dict(zip(cols.tolist(), phi.tolist())), base, out)


def instance_seed(seed: int, x: SparseVector) -> int:
    h = hashlib.sha256()
    h.update(str(seed).encode())
    h.update(np.ascontiguousarray(x.indices, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(x.counts, dtype=np.float64).tobytes())
    return int.from_bytes(h.digest()[:8], "little")


def rank_impact(
    model: Model,
    instances: Sequence[SparseVector],
    background,
    terms: Sequence[str],
    samples: int = 200,
    seed: int = 0,
    top_n: int = 30,
    output: str = "probability",
) -> ImpactRanking:
    """Terms ordered by mean absolute attribution across ``instances``.

    Each instance's sampler seed is derived from its content, so the ranking
    does not depend on the order of ``instances``.
    """
    instances = list(instances)
    if not instances:
        raise ValueError("instances must be non-empty")
    attrs = [
        shapley_attribute(model, x, background, samples, instance_seed(seed, x), output)
        for x in instances
    ]
    return rank_attributions(attrs, terms, top_n)


def rank_attributions(attrs: Sequence[Attribution], terms: Sequence[str], top_n: int = 30) -> ImpactRanking:
    """Mean absolute attribution per term; absent terms count as zero."""
    if not attrs:
        raise ValueError("attributions must be non-empty")
    contributions: dict[int, list[float]] = {}
    for attr in attrs:
        for j, v in attr.values.items():
            contributions.setdefault(j, []).append(abs(v))
    n = len(attrs)
    scores = [(terms[j], math.fsum(sorted(vs)) / n) for j, vs in contributions.items()]
    scores.sort(key=lambda e: (-e[1], e[0]))
    return ImpactRanking(scores[:top_n])


def background_sample(X, y: Sequence[int], size: int = 100, seed: int = 0) -> sp.csr_matrix:
    """Stratified row sample of ``X`` with class proportions kept."""
    X = as_csr(X)
    return X[stratified_indices(y, size, seed)]


def stratified_indices(y: Sequence[int], size: int, seed: int = 0) -> np.ndarray:
    """Sorted indices of a class-proportional sample of ``size`` rows."""
    y = np.asarray(y)
    if y.size <= size:
        return np.arange(y.size)
    rng = np.random.default_rng(seed)
    picked = []
    classes, counts = np.unique(y, return_counts=True)
    quotas = np.floor(counts / y.size * size).astype(int)
    # hand leftover slots to the largest remainders
    rema = counts / y.size * size - quotas
    for i in np.argsort(-rema)[: size - quotas.sum()]:
        quotas[i] += 1
    for cls, q in zip(classes, quotas):
        members = np.flatnonzero(y == cls)
        picked.append(rng.choice(members, size=min(q, members.size), replace=False))
    return np.sort(np.concatenate(picked))


def write_attribution(attr: Attribution, terms: Sequence[str], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["term", "value"])
    for j, v in sorted(attr.values.items(), key=lambda e: (-abs(e[1]), e[0])):
        w.writerow([terms[j], f"{v:.8g}"])


def write_ranking(ranking: ImpactRanking, out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["rank", "term", "mean_abs_value"])
    for i, (term, v) in enumerate(ranking, start=1):
        w.writerow([i, term, f"{v:.8g}"])
