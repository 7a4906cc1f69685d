"""Closed-form Gibbs sampler for the gamma Markov negative binomial model.

One sweep, per gene and given the current sample probabilities ``p``:

1. backward pass: CRT auxiliary counts ``l`` for every cell and the chain
   counts ``u`` carried from the last time point down to the first;
2. ``q`` recursion (kept as ``nlq = -log(1 - q)``);
3. forward pass: gamma draws of ``r^(0) .. r^(T)``;
4. conjugate gamma draw of the chain rate ``c``.

Then ``p`` is redrawn from its Beta conditional (the only step coupling genes)
and the per-gene log-likelihood of the new state is recorded.

Every gene owns its own generator state, so results do not depend on how
genes are spread over threads.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numba as nb
import numpy as np

from .distributions import (CRT_EXACT_MAX, GAMMA_FLOOR, RngStream, _beta_draw,
                            _crt_draw, _gamma_draw, seed_states)
from .errors import NumericError, StructureError, ValidationError
from .model import (ChainState, CountTensor, GmnbHyper, PosteriorSamples,
                    _loglik_gene_kernel, log_factorial_sums, neg_log1m_sum)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GibbsConfig:
    total_iters: int = 2000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    parallel_genes: bool = False
    workers: int = 1
    crt_exact_max: int = CRT_EXACT_MAX

    def __post_init__(self):
        if self.total_iters < 1:
            raise ValidationError("total_iters must be positive")
        if not 0 <= self.burn_in < self.total_iters:
            raise ValidationError("burn_in must satisfy 0 <= burn_in < total_iters")
        if self.thin < 1:
            raise ValidationError("thin must be positive")
        if self.workers < 1:
            raise ValidationError("workers must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    @property
    def n_keep(self) -> int:
        return (self.total_iters - self.burn_in) // self.thin


class SamplerRng:
    """One generator per gene plus one for the shared ``p`` update."""

    def __init__(self, seed: int, n_genes: int):
        self.genes = seed_states(seed, [(0, k) for k in range(n_genes)])
        self.shared = RngStream(seed, 1)


# ---------------------------------------------------------------------------
# per-gene kernels


@nb.njit(cache=True)
def _gene_backward(k, counts, offsets, r, l, l_dot, u, st, exact_max):
    T = offsets.size - 2
    u[k, T + 1] = 0
    u[k, 0] = 0
    for t in range(T, -1, -1):
        rt = r[k, t]
        acc = 0
        for s in range(offsets[t], offsets[t + 1]):
            v = _crt_draw(st, counts[k, s], rt, exact_max)
            l[k, s] = v
            acc += v
        l_dot[k, t] = acc
        if t >= 1:
            u[k, t] = _crt_draw(st, u[k, t + 1] + acc, r[k, t - 1], exact_max)


@nb.njit(cache=True)
def _gene_q(k, c, lp, nlq):
    T = lp.size - 1
    nlq[k, T] = 0.0
    for t in range(T - 1, -1, -1):
        a = lp[t + 1] + nlq[k, t + 1]
        nlq[k, t] = math.log1p(a / c[k])


@nb.njit(cache=True)
def _gene_forward(k, r, c, lp, nlq, l_dot, u, e_init, f_init, st):
    """Returns the first time index with an invalid rate, or -1."""
    T = lp.size - 1
    for t in range(T + 1):
        if t == 0:
            shape = e_init + u[k, 1] + l_dot[k, 0]
            rate = f_init + lp[0] + nlq[k, 0]
        else:
            shape = r[k, t - 1] + u[k, t + 1] + l_dot[k, t]
            rate = c[k] + lp[t] + nlq[k, t]
        if not (rate > 0.0 and rate < np.inf):
            return t
        x = _gamma_draw(st, shape) / rate
        r[k, t] = x if x > GAMMA_FLOOR else GAMMA_FLOOR
    return -1


@nb.njit(cache=True)
def _gene_c(k, r, c, c0, d0, st):
    T = r.shape[1] - 1
    shape = c0
    rate = d0
    for t in range(T):
        shape += r[k, t]
        rate += r[k, t + 1]
    x = _gamma_draw(st, shape) / rate
    c[k] = x if x > GAMMA_FLOOR else GAMMA_FLOOR


def _sweep_impl(counts, offsets, r, c, l, l_dot, u, nlq, lp, e_init, f_init, c0, d0,
                states, exact_max, bad):
    K = counts.shape[0]
    for k in nb.prange(K):
        st = states[k]
        _gene_backward(k, counts, offsets, r, l, l_dot, u, st, exact_max)
        _gene_q(k, c, lp, nlq)
        bad[k] = _gene_forward(k, r, c, lp, nlq, l_dot, u, e_init, f_init, st)
        _gene_c(k, r, c, c0, d0, st)


_sweep_serial = nb.njit(cache=True)(_sweep_impl)
_sweep_parallel = nb.njit(cache=True, parallel=True)(_sweep_impl)


def _loglik_impl(counts, time_index, r, p, lgamma_n1, out):
    K, S = counts.shape
    log_p = np.log(p)
    log_1mp = np.log1p(-p)
    for k in nb.prange(K):
        acc = 0.0
        for s in range(S):
            n = counts[k, s]
            rr = r[k, time_index[s]]
            acc += math.lgamma(n + rr) - math.lgamma(rr) + n * log_p[s] + rr * log_1mp[s]
        out[k] = acc - lgamma_n1[k]


_loglik_parallel = nb.njit(cache=True, parallel=True)(_loglik_impl)


@nb.njit(cache=True)
def _update_p_kernel(colsum, offsets, r, p, a0, b0, st):
    T1 = offsets.size - 1
    for t in range(T1):
        rsum = 0.0
        for k in range(r.shape[0]):
            rsum += r[k, t]
        for s in range(offsets[t], offsets[t + 1]):
            p[s] = _beta_draw(st, a0 + colsum[s], b0 + rsum)


@nb.njit(cache=True)
def _gene_loop_backward(counts, offsets, r, l, l_dot, u, states, exact_max):
    for k in range(counts.shape[0]):
        _gene_backward(k, counts, offsets, r, l, l_dot, u, states[k], exact_max)


@nb.njit(cache=True)
def _gene_loop_q(c, lp, nlq):
    for k in range(c.size):
        _gene_q(k, c, lp, nlq)


@nb.njit(cache=True)
def _gene_loop_forward(r, c, lp, nlq, l_dot, u, e_init, f_init, states, bad):
    for k in range(c.size):
        bad[k] = _gene_forward(k, r, c, lp, nlq, l_dot, u, e_init, f_init, states[k])


@nb.njit(cache=True)
def _gene_loop_c(r, c, c0, d0, states):
    for k in range(c.size):
        _gene_c(k, r, c, c0, d0, states[k])


# ---------------------------------------------------------------------------
# single steps, for testing and for callers composing their own schedules


def backward_pass(data: CountTensor, state: ChainState, rng: SamplerRng,
                  exact_max: int = CRT_EXACT_MAX):
    """Redraw ``l``, ``l_dot`` and ``u`` from their CRT conditionals."""
    state.check(data)
    _gene_loop_backward(data.counts, data.offsets, state.r, state.l, state.l_dot, state.u,
                        rng.genes, exact_max)
    return state


def compute_q(data: CountTensor, state: ChainState):
    """Recompute ``q`` (stored as ``nlq``) from ``c`` and ``p``."""
    if np.any(state.p >= 1.0):
        raise NumericError("p_j = 1 makes q undefined")
    lp = neg_log1m_sum(state.p, data.offsets)
    _gene_loop_q(state.c, lp, state.nlq)
    return state


def _raise_bad(bad, it=None):
    k = int(np.flatnonzero(bad >= 0)[0])
    where = f"iteration {it}, " if it is not None else ""
    raise NumericError(f"non-positive gamma rate theta at {where}gene {k}, time {bad[k]}")


def forward_pass(data: CountTensor, state: ChainState, hyper: GmnbHyper, rng: SamplerRng):
    """Draw ``r^(0..T)`` given the auxiliary counts and ``q``."""
    lp = neg_log1m_sum(state.p, data.offsets)
    bad = np.full(data.n_genes, -1, dtype=np.int64)
    _gene_loop_forward(state.r, state.c, lp, state.nlq, state.l_dot, state.u,
                       float(hyper.e_init), float(hyper.f_init), rng.genes, bad)
    if np.any(bad >= 0):
        _raise_bad(bad)
    return state


def update_c(state: ChainState, hyper: GmnbHyper, rng: SamplerRng):
    """Conjugate gamma draw of each gene's chain rate."""
    _gene_loop_c(state.r, state.c, float(hyper.c0), float(hyper.d0), rng.genes)
    return state


def update_p(data: CountTensor, state: ChainState, hyper: GmnbHyper, rng: SamplerRng):
    """Beta draw of every sample's probability parameter."""
    colsum = data.counts.sum(axis=0).astype(float)
    _update_p_kernel(colsum, data.offsets, state.r, state.p, float(hyper.a0),
                     float(hyper.b0), rng.shared.state)
    return state


# ---------------------------------------------------------------------------


class Sampler:
    """Holds data-derived constants so sweeps can be repeated cheaply."""

    def __init__(self, data: CountTensor, hyper: GmnbHyper, cfg: GibbsConfig,
                 state: ChainState | None = None):
        if data.n_genes == 0 or data.n_samples == 0:
            raise StructureError("cannot fit an empty count tensor")
        self.data, self.hyper, self.cfg = data, hyper, cfg
        self.state = ChainState.initial(data) if state is None else state
        self.state.check(data)
        self.rng = SamplerRng(cfg.seed, data.n_genes)
        self.colsum = data.counts.sum(axis=0).astype(float)
        self.lgamma_n1 = log_factorial_sums(data)
        self._bad = np.full(data.n_genes, -1, dtype=np.int64)
        self._sweep = _sweep_parallel if cfg.parallel_genes else _sweep_serial
        if cfg.parallel_genes:
            nb.set_num_threads(min(cfg.workers, nb.config.NUMBA_NUM_THREADS))

    def sweep(self, it: int = 0):
        d, st, h = self.data, self.state, self.hyper
        lp = neg_log1m_sum(st.p, d.offsets)
        self._sweep(d.counts, d.offsets, st.r, st.c, st.l, st.l_dot, st.u, st.nlq, lp,
                    float(h.e_init), float(h.f_init), float(h.c0), float(h.d0),
                    self.rng.genes, self.cfg.crt_exact_max, self._bad)
        if np.any(self._bad >= 0):
            _raise_bad(self._bad, it)
        _update_p_kernel(self.colsum, d.offsets, st.r, st.p, float(h.a0), float(h.b0),
                         self.rng.shared.state)

    def loglik_genes(self) -> np.ndarray:
        out = np.empty(self.data.n_genes)
        if self.cfg.parallel_genes:
            _loglik_parallel(self.data.counts, self.data.time_index, self.state.r,
                             self.state.p, self.lgamma_n1, out)
        else:
            _loglik_gene_kernel(self.data.counts, self.data.time_index, self.state.r,
                                self.state.p, self.lgamma_n1, out)
        return out


def run_gibbs(data: CountTensor, hyper: GmnbHyper, cfg: GibbsConfig,
              init: ChainState | None = None) -> PosteriorSamples:
    """Run ``cfg.total_iters`` sweeps and keep the thinned post-burn-in draws."""
    smp = Sampler(data, hyper, cfg, None if init is None else init.copy())
    K, T1, S = data.n_genes, data.n_times, cfg.n_keep
    r_out = np.empty((S, K, T1))
    c_out = np.empty((S, K))
    p_out = np.empty((S, data.n_samples))
    ll_out = np.empty((S, K))
    trace = np.empty(cfg.total_iters)
    t0 = time.perf_counter()
    j = 0
    for it in range(cfg.total_iters):
        smp.sweep(it)
        ll = smp.loglik_genes()
        if not np.all(np.isfinite(ll)):
            k = int(np.flatnonzero(~np.isfinite(ll))[0])
            raise NumericError(f"non-finite log-likelihood at iteration {it}, gene {k}")
        trace[it] = ll.sum()
        kept = it - cfg.burn_in
        if kept >= 0 and kept % cfg.thin == cfg.thin - 1 and j < S:
            st = smp.state
            r_out[j] = st.r
            c_out[j] = st.c
            p_out[j] = st.p
            ll_out[j] = ll
            j += 1
    seconds = time.perf_counter() - t0
    log.debug("gibbs: %d genes x %d times x %d iters in %.1fs", K, T1, cfg.total_iters, seconds)
    return PosteriorSamples(r_out, c_out, p_out, ll_out, cfg.burn_in, cfg.thin,
                            seconds, cfg.total_iters, trace, smp.state)


def throughput(samples: PosteriorSamples) -> float:
    """gene x timepoint x iteration per second."""
    K, T1 = samples.r.shape[1:]
    if samples.seconds <= 0:
        return float("nan")
    return K * T1 * samples.total_iters / samples.seconds
