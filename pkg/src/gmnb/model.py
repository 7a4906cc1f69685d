"""Counts, hyperparameters, chain state and posterior storage for GMNB.

Samples are stored flat along one axis, ordered by time point; ``offsets[t]``
to ``offsets[t + 1]`` is the slice of samples observed at time ``t``.  This
keeps ragged designs (different replicate counts per time point) cheap.
"""
from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field, fields

import numba as nb
import numpy as np
from scipy.special import gammaln

from .errors import DomainError, StructureError


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CountTensor:
    """Nonnegative read counts for K genes over samples grouped by time point.

    Parameters
    ----------
    counts : (K, S) integer array
        Column ``s`` is sample ``s``; columns must be sorted by ``time_index``.
    gene_ids : sequence of str
    time_labels : (T + 1,) strictly increasing floats
    time_index : (S,) time point of each sample
    condition : (S,) condition tag (1 or 2)
    replicate : (S,) replicate id within its time point
    """

    counts: np.ndarray
    gene_ids: tuple
    time_labels: np.ndarray
    time_index: np.ndarray
    condition: np.ndarray
    replicate: np.ndarray
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise StructureError("counts must be a (genes, samples) matrix")
        if counts.size and not np.all(np.isfinite(counts.astype(float))):
            raise DomainError("counts contain missing or non-finite values")
        if np.any(counts != np.round(counts)):
            raise DomainError("counts must be integers")
        if np.any(counts < 0):
            raise DomainError("counts must be nonnegative")
        K, S = counts.shape
        gene_ids = tuple(str(g) for g in self.gene_ids)
        if len(gene_ids) != K:
            raise StructureError(f"{len(gene_ids)} gene ids for {K} count rows")
        if len(set(gene_ids)) != K:
            raise StructureError("gene ids must be unique")
        labels = np.asarray(self.time_labels, dtype=float)
        if labels.ndim != 1 or labels.size == 0:
            raise StructureError("time_labels must be a nonempty vector")
        if np.any(np.diff(labels) <= 0):
            raise StructureError("time_labels must be strictly increasing")
        tidx = np.asarray(self.time_index, dtype=np.int64)
        if tidx.shape != (S,):
            raise StructureError("time_index must have one entry per sample")
        if S and (np.any(np.diff(tidx) < 0) or tidx[0] < 0 or tidx[-1] >= labels.size):
            raise StructureError("samples must be sorted by a valid time index")
        per_time = np.bincount(tidx, minlength=labels.size)
        if np.any(per_time == 0):
            raise StructureError("every time point needs at least one sample")
        cond = np.broadcast_to(np.asarray(self.condition, dtype=np.int64), (S,))
        rep = np.broadcast_to(np.asarray(self.replicate, dtype=np.int64), (S,))
        if not np.all(np.isin(cond, (1, 2))):
            raise StructureError("condition tags must be 1 or 2")
        set_ = object.__setattr__
        set_(self, "counts", _frozen(counts, np.int64))
        set_(self, "gene_ids", gene_ids)
        set_(self, "time_labels", _frozen(labels, float))
        set_(self, "time_index", _frozen(tidx, np.int64))
        set_(self, "condition", _frozen(cond, np.int64))
        set_(self, "replicate", _frozen(rep, np.int64))
        set_(self, "offsets", _frozen(np.concatenate([[0], np.cumsum(per_time)]), np.int64))

    @classmethod
    def from_blocks(cls, blocks, gene_ids, time_labels, condition=1):
        """Build from a list of (K, J_t) arrays, one per time point."""
        blocks = [np.asarray(b).reshape(len(gene_ids), -1) for b in blocks]
        tidx = np.concatenate([np.full(b.shape[1], t) for t, b in enumerate(blocks)])
        rep = np.concatenate([np.arange(1, b.shape[1] + 1) for b in blocks])
        return cls(np.concatenate(blocks, axis=1), gene_ids, time_labels, tidx,
                   np.full(tidx.size, condition), rep)

    @property
    def n_genes(self) -> int:
        return self.counts.shape[0]

    @property
    def n_samples(self) -> int:
        return self.counts.shape[1]

    @property
    def n_times(self) -> int:
        """Number of time points, T + 1."""
        return self.time_labels.size

    def at(self, t: int) -> np.ndarray:
        """(K, J_t) counts at time point ``t``."""
        return self.counts[:, self.offsets[t]:self.offsets[t + 1]]

    def subset(self, genes) -> "CountTensor":
        genes = np.asarray(genes)
        return CountTensor(self.counts[genes], [self.gene_ids[g] for g in genes],
                           self.time_labels, self.time_index, self.condition, self.replicate)

    def __eq__(self, other):
        if not isinstance(other, CountTensor):
            return NotImplemented
        return (self.gene_ids == other.gene_ids
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("counts", "time_labels", "time_index", "condition", "replicate")))

    def save(self, path):
        np.savez(path, counts=self.counts, gene_ids=np.array(self.gene_ids),
                 time_labels=self.time_labels, time_index=self.time_index,
                 condition=self.condition, replicate=self.replicate)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            return cls(z["counts"], list(z["gene_ids"]), z["time_labels"], z["time_index"],
                       z["condition"], z["replicate"])


def pool(data1: CountTensor, data2: CountTensor) -> CountTensor:
    """Union of the samples of two conditions at each time point.

    Within a time point the pooled columns are put in a canonical order
    (lexicographic on the count column), so pooling is symmetric in its
    arguments.
    """
    if data1.gene_ids != data2.gene_ids:
        raise StructureError("conditions must share the same genes in the same order")
    if not np.array_equal(data1.time_labels, data2.time_labels):
        raise StructureError("conditions must share the same time grid")
    cols, tidx, cond, rep = [], [], [], []
    for t in range(data1.n_times):
        block = np.concatenate([data1.at(t), data2.at(t)], axis=1)
        c = np.concatenate([data1.condition[data1.time_index == t],
                            data2.condition[data2.time_index == t]])
        r = np.concatenate([data1.replicate[data1.time_index == t],
                            data2.replicate[data2.time_index == t]])
        order = np.lexsort(block[::-1]) if block.shape[0] else np.arange(block.shape[1])
        cols.append(block[:, order])
        tidx.append(np.full(block.shape[1], t))
        cond.append(c[order])
        rep.append(r[order])
    return CountTensor(np.concatenate(cols, axis=1), data1.gene_ids, data1.time_labels,
                       np.concatenate(tidx), np.concatenate(cond), np.concatenate(rep))


@dataclass(frozen=True)
class GmnbHyper:
    """Prior hyperparameters.

    ``p ~ Beta(a0, b0)``, ``r^(0) ~ Gamma(e_init, 1/f_init)``,
    ``c ~ Gamma(c0, 1/d0)``.  All default to 1.
    """

    a0: float = 1.0
    b0: float = 1.0
    e_init: float = 1.0
    f_init: float = 1.0
    c0: float = 1.0
    d0: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and v > 0 and np.isfinite(v)):
                raise DomainError(f"hyperparameter {f.name} must be positive, got {v!r}")


@dataclass
class ChainState:
    """One Gibbs state.

    ``u[k, t]`` holds u_k^{(t-1)(t)} for t = 1..T+1 (column 0 unused, column
    T+1 always zero); ``nlq[k, t]`` holds ``-log(1 - q_k^(t))``, the form the
    sampler works in, with ``q`` derived from it.
    """

    r: np.ndarray        # (K, T+1)
    c: np.ndarray        # (K,)
    p: np.ndarray        # (S,) flat over samples, see CountTensor.offsets
    l: np.ndarray        # (K, S)
    l_dot: np.ndarray    # (K, T+1)
    u: np.ndarray        # (K, T+2)
    nlq: np.ndarray      # (K, T+1)

    @classmethod
    def initial(cls, data: CountTensor) -> "ChainState":
        K, S, T1 = data.n_genes, data.n_samples, data.n_times
        r0 = np.maximum(data.counts.mean(axis=1), 1.0)
        return cls(
            r=np.repeat(r0[:, None], T1, axis=1),
            c=np.ones(K),
            p=np.full(S, 0.5),
            l=np.zeros((K, S), dtype=np.int64),
            l_dot=np.zeros((K, T1), dtype=np.int64),
            u=np.zeros((K, T1 + 1), dtype=np.int64),
            nlq=np.zeros((K, T1)),
        )

    @property
    def q(self) -> np.ndarray:
        return -np.expm1(-self.nlq)

    def theta(self, data: CountTensor, hyper: GmnbHyper) -> np.ndarray:
        """Gamma rates of the forward draws, (K, T+1)."""
        lp = neg_log1m_sum(self.p, data.offsets)
        th = self.c[:, None] + lp[None, :] + self.nlq
        th[:, 0] = hyper.f_init + lp[0] + self.nlq[:, 0]
        return th

    def copy(self) -> "ChainState":
        return ChainState(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def check(self, data: CountTensor):
        K, S, T1 = data.n_genes, data.n_samples, data.n_times
        want = {"r": (K, T1), "c": (K,), "p": (S,), "l": (K, S), "l_dot": (K, T1),
                "u": (K, T1 + 1), "nlq": (K, T1)}
        for name, shape in want.items():
            if getattr(self, name).shape != shape:
                raise StructureError(
                    f"state.{name} has shape {getattr(self, name).shape}, expected {shape}")

    def save(self, path):
        np.savez(path, **{f.name: getattr(self, f.name) for f in fields(self)})

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            return cls(**{f.name: z[f.name] for f in fields(cls)})

    def __eq__(self, other):
        return all(np.array_equal(getattr(self, f.name), getattr(other, f.name))
                   for f in fields(self))


@dataclass
class PosteriorSamples:
    """Post-burn-in draws of (r, c, p) and their data log-likelihoods."""

    r: np.ndarray             # (S, K, T+1)
    c: np.ndarray             # (S, K)
    p: np.ndarray             # (S, n_samples)
    loglik_gene: np.ndarray   # (S, K)
    burn_in: int
    thin: int
    seconds: float = 0.0
    total_iters: int = 0
    loglik_trace: np.ndarray | None = None   # total log-likelihood of every sweep
    final_state: ChainState | None = None

    @property
    def n_draws(self) -> int:
        return self.loglik_gene.shape[0]

    @property
    def loglik_per_draw(self) -> np.ndarray:
        return self.loglik_gene.sum(axis=1)

    def draw(self, s: int) -> dict:
        return {"r": self.r[s], "c": self.c[s], "p": self.p[s]}

    @property
    def draws(self) -> list:
        return [self.draw(s) for s in range(self.n_draws)]

    def save(self, path):
        np.savez(path, r=self.r, c=self.c, p=self.p, loglik_gene=self.loglik_gene,
                 burn_in=self.burn_in, thin=self.thin, seconds=self.seconds,
                 total_iters=self.total_iters)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            return cls(z["r"], z["c"], z["p"], z["loglik_gene"], int(z["burn_in"]),
                       int(z["thin"]), float(z["seconds"]), int(z["total_iters"]))


def neg_log1m_sum(p, offsets) -> np.ndarray:
    """``-sum_j log(1 - p_j^(t))`` for every time point."""
    return -np.add.reduceat(np.log1p(-np.asarray(p)), offsets[:-1])


@nb.njit(cache=True)
def _loglik_gene_kernel(counts, time_index, r, p, lgamma_n1, out):
    K, S = counts.shape
    log_p = np.log(p)
    log_1mp = np.log1p(-p)
    for k in range(K):
        acc = 0.0
        for s in range(S):
            n = counts[k, s]
            rr = r[k, time_index[s]]
            acc += (math.lgamma(n + rr) - math.lgamma(rr) + n * log_p[s] + rr * log_1mp[s])
        out[k] = acc - lgamma_n1[k]
    return out


def log_factorial_sums(data: CountTensor) -> np.ndarray:
    """Per-gene ``sum log n!``, constant across draws."""
    return gammaln(data.counts + 1.0).sum(axis=1)


def log_likelihood_per_gene(data: CountTensor, state, lgamma_n1=None) -> np.ndarray:
    """NB log-likelihood of each gene's counts given ``state.r`` and ``state.p``.

    ``state`` may also be a mapping with keys ``r`` and ``p``, such as
    :meth:`PosteriorSamples.draw` returns.
    """
    if isinstance(state, Mapping):
        r, p = state["r"], state["p"]
    else:
        r, p = state.r, state.p
    r = np.asarray(r, dtype=float)
    p = np.asarray(p, dtype=float)
    if r.shape != (data.n_genes, data.n_times) or p.shape != (data.n_samples,):
        raise StructureError(
            f"state with r{r.shape}, p{p.shape} does not match data "
            f"({data.n_genes} genes, {data.n_times} times, {data.n_samples} samples)")
    if lgamma_n1 is None:
        lgamma_n1 = log_factorial_sums(data)
    return _loglik_gene_kernel(data.counts, data.time_index, r, p, lgamma_n1,
                               np.empty(data.n_genes))


def log_likelihood(data: CountTensor, state) -> float:
    """Total NB log-likelihood ``sum_{k,t,j} log NB(n | r_k^(t), p_j^(t))``."""
    return float(log_likelihood_per_gene(data, state).sum())


def nb_logpmf(n, r, p):
    n = np.asarray(n, dtype=float)
    return gammaln(n + r) - gammaln(n + 1) - gammaln(r) + n * np.log(p) + r * np.log1p(-p)


def expected_count(r, p):
    """Mean of NB(r, p): ``r * p / (1 - p)``."""
    if not r > 0:
        raise DomainError(f"r must be positive, got {r}")
    if not 0 < p < 1:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    return r * p / (1.0 - p)
