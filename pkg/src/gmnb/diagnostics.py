"""MCMC diagnostics: batch-means standard errors, the trace z-test, and the
joint-distribution ("getting it right") check of the sampler."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gibbs import GibbsConfig, Sampler
from .model import ChainState, CountTensor, GmnbHyper


def batch_means_se(x, n_batches: int = 50) -> float:
    """Standard error of the mean of a correlated series by non-overlapping batches."""
    x = np.asarray(x, dtype=float)
    b = x.size // n_batches
    if b < 1:
        raise ValueError("series shorter than the number of batches")
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def trace_z(trace, first: float = 0.1, last: float = 0.5, n_batches: int = 10) -> float:
    """Compare the mean of the early part of a trace with its late part."""
    x = np.asarray(trace, dtype=float)
    a = x[: int(first * x.size)]
    b = x[x.size - int(last * x.size):]
    se = np.hypot(batch_means_se(a, n_batches), batch_means_se(b, n_batches))
    return float((a.mean() - b.mean()) / se) if se > 0 else 0.0


def prior_draw(K, offsets, hyper: GmnbHyper, rng: np.random.Generator):
    """(r, c, p) from the prior."""
    T1 = offsets.size - 1
    r = np.empty((K, T1))
    c = rng.gamma(hyper.c0, 1.0 / hyper.d0, size=K)
    r[:, 0] = rng.gamma(hyper.e_init, 1.0 / hyper.f_init, size=K)
    for t in range(1, T1):
        r[:, t] = np.maximum(rng.gamma(r[:, t - 1], 1.0 / c), 1e-300)
    p = rng.beta(hyper.a0, hyper.b0, size=offsets[-1])
    return r, c, p


def simulate_counts(r, p, time_index, rng: np.random.Generator):
    """NB(r_k^(t), p_j) counts for every (gene, sample)."""
    rr = r[:, time_index]
    lam = rng.gamma(rr, 1.0) * (p / (1.0 - p))[None, :]
    return rng.poisson(lam)


def _tensor(counts, time_index, n_times):
    return CountTensor(counts, [f"g{k}" for k in range(counts.shape[0])],
                       np.arange(n_times, dtype=float), time_index, 1, 1)


def _stats(r, c, p):
    # genes are exchangeable under the prior, as are all p_j
    out = {}
    for t in range(r.shape[1]):
        out[f"r[t={t}]"] = r[:, t].mean()
        out[f"r^2[t={t}]"] = (r[:, t] ** 2).mean()
    out["c"] = c.mean()
    out["c^2"] = (c**2).mean()
    out["p"] = p.mean()
    out["p^2"] = (p**2).mean()
    return out


@dataclass
class GewekeResult:
    names: list
    marginal_mean: np.ndarray
    successive_mean: np.ndarray
    se: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return (self.successive_mean - self.marginal_mean) / self.se

    def passed(self, n_se: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.z) < n_se))


def geweke_test(n_genes: int = 3, n_times: int = 3, n_per_time: int = 2,
                hyper: GmnbHyper | None = None, n_marginal: int = 100_000,
                n_successive: int = 100_000, seed: int = 0, n_batches: int = 50) -> GewekeResult:
    """Marginal-conditional versus successive-conditional simulation.

    The first draws parameters straight from the prior; the second alternates
    a data redraw with one Gibbs sweep.  Both must reproduce the prior moments.
    """
    hyper = hyper or GmnbHyper(a0=2.0, b0=5.0, e_init=2.0, f_init=1.0, c0=10.0, d0=10.0)
    rng = np.random.default_rng(seed)
    time_index = np.repeat(np.arange(n_times), n_per_time)
    offsets = np.arange(0, n_times * n_per_time + 1, n_per_time)

    mc = []
    for _ in range(n_marginal):
        mc.append(list(_stats(*prior_draw(n_genes, offsets, hyper, rng)).values()))
    mc = np.array(mc)

    r, c, p = prior_draw(n_genes, offsets, hyper, rng)
    data = _tensor(simulate_counts(r, p, time_index, rng), time_index, n_times)
    state = ChainState.initial(data)
    state.r[:], state.c[:], state.p[:] = r, c, p
    smp = Sampler(data, hyper, GibbsConfig(total_iters=2, burn_in=0, seed=seed + 1), state)
    sc = np.empty((n_successive, mc.shape[1]))
    names = list(_stats(r, c, p))
    for i in range(n_successive):
        st = smp.state
        counts = simulate_counts(st.r, st.p, time_index, rng)
        smp.data = _tensor(counts, time_index, n_times)
        smp.colsum = counts.sum(axis=0).astype(float)
        smp.sweep(i)
        sc[i] = list(_stats(st.r, st.c, st.p).values())

    se_m = mc.std(axis=0, ddof=1) / np.sqrt(n_marginal)
    se_s = np.array([batch_means_se(sc[:, j], n_batches) for j in range(sc.shape[1])])
    return GewekeResult(names, mc.mean(axis=0), sc.mean(axis=0), np.hypot(se_m, se_s))
