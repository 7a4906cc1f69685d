import hashlib
import math
import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest
import scipy.stats as st
from scipy.special import gammaln

from gmnb.diagnostics import geweke_test, trace_z
from gmnb.errors import NumericError, ValidationError
from gmnb.gibbs import (GibbsConfig, SamplerRng, backward_pass, compute_q, forward_pass,
                        run_gibbs, update_c, update_p)
from gmnb.model import ChainState, CountTensor, GmnbHyper, expected_count
from gmnb.synthetic import SimSpec, simulate


def tensor(blocks, K=None):
    """Tensor of identical genes from per-time lists of counts."""
    K = K or 1
    blocks = [np.tile(np.asarray(b, dtype=np.int64), (K, 1)) for b in blocks]
    return CountTensor.from_blocks(blocks, [f"g{k:05d}" for k in range(K)],
                                   np.arange(len(blocks), dtype=float))


# ---------------------------------------------------------------------------
# config


def test_config_defaults():
    cfg = GibbsConfig()
    assert (cfg.total_iters, cfg.burn_in, cfg.thin) == (2000, 1000, 1)
    assert cfg.n_keep == 1000


@pytest.mark.parametrize("kw", [dict(burn_in=2000), dict(total_iters=0), dict(thin=0),
                                dict(burn_in=-1), dict(workers=0), dict(seed=-5)])
def test_config_validation(kw):
    with pytest.raises(ValidationError):
        GibbsConfig(**kw)


# ---------------------------------------------------------------------------
# q recursion


def test_q_example():
    d = tensor([[3], [4]])
    s = ChainState.initial(d)
    s.c[:] = 1.0
    s.p[:] = 0.5
    compute_q(d, s)
    assert s.q[0, 1] == 0.0
    want = math.log(2) / (1 + math.log(2))
    assert s.q[0, 0] == pytest.approx(want, rel=1e-12)
    assert want == pytest.approx(0.4094, abs=5e-5)


def test_q_matches_recursion_definition():
    d = tensor([[1, 2], [3], [4, 5, 6]])
    s = ChainState.initial(d)
    s.c[:] = 0.7
    s.p[:] = [0.2, 0.3, 0.6, 0.1, 0.5, 0.9]
    compute_q(d, s)
    q = np.zeros(3)
    for t in (1, 0):
        lp = -np.log1p(-s.p[d.offsets[t + 1]:d.offsets[t + 2]]).sum()
        a = lp - math.log1p(-q[t + 1])
        q[t] = a / (0.7 + a)
    np.testing.assert_allclose(s.q[0], q, rtol=1e-12)
    assert np.all((s.q >= 0) & (s.q < 1))


def test_q_limits():
    d = tensor([[3], [4], [5]])
    s = ChainState.initial(d)
    s.p[:] = 1e-300
    compute_q(d, s)
    assert np.all(s.q[:, -1] == 0) and np.all(s.q < 1e-290)
    s.p[:] = 0.5
    s.c[:] = 1e300
    compute_q(d, s)
    assert np.all(s.q < 1e-299)


def test_q_rejects_p_one():
    d = tensor([[3], [4]])
    s = ChainState.initial(d)
    s.p[:] = 1.0
    with pytest.raises(NumericError):
        compute_q(d, s)


# ---------------------------------------------------------------------------
# backward pass


def test_backward_zero_counts():
    d = tensor([[0, 0], [0], [0, 0]], K=3)
    s = ChainState.initial(d)
    backward_pass(d, s, SamplerRng(0, 3))
    assert not s.l.any() and not s.l_dot.any() and not s.u.any()


def test_backward_single_customer():
    d = tensor([[0], [1]], K=50)
    s = ChainState.initial(d)
    s.r[:] = np.random.default_rng(0).gamma(0.5, size=s.r.shape)
    backward_pass(d, s, SamplerRng(1, 50))
    assert np.all(s.l[:, 1] == 1) and np.all(s.u[:, 1] == 1) and np.all(s.u[:, 2] == 0)


def _crt_numpy(n, r, rng):
    """Vectorised Bernoulli-sum CRT, n varying per row."""
    n = np.asarray(n)
    m = max(int(n.max()), 1)
    t = np.arange(m)
    b = rng.random((n.size, m)) < r / (r + t)
    return (b & (t < n[:, None])).sum(axis=1)


def test_backward_matches_nested_simulation():
    counts = [[4, 6], [9, 3], [12, 7]]
    r = np.array([2.0, 3.5, 1.2])
    reps, K = 10, 10_000
    d = tensor(counts, K=K)
    s = ChainState.initial(d)
    s.r[:] = r
    rng = SamplerRng(3, K)
    got = np.concatenate([backward_pass(d, s, rng).u[:, 1].copy() for _ in range(reps)])

    g = np.random.default_rng(4)
    N = got.size
    l2 = sum(_crt_numpy(np.full(N, n), r[2], g) for n in counts[2])
    u2 = _crt_numpy(l2, r[1], g)
    l1 = sum(_crt_numpy(np.full(N, n), r[1], g) for n in counts[1])
    want = _crt_numpy(u2 + l1, r[0], g)

    hi = max(got.max(), want.max()) + 1
    table = np.array([np.bincount(got, minlength=hi), np.bincount(want, minlength=hi)])
    table = table[:, table.sum(axis=0) >= 20]
    assert st.chi2_contingency(table)[1] > 0.001
    assert got.mean() == pytest.approx(want.mean(), abs=4 * want.std() / math.sqrt(N) * 1.5)


# ---------------------------------------------------------------------------
# forward pass


def test_forward_without_evidence_draws_prior_chain():
    K = 20_000
    d = tensor([[0], [0], [0]], K=K)
    s = ChainState.initial(d)
    s.c[:] = 1.0
    s.p[:] = 1e-300
    h = GmnbHyper(e_init=3.0, f_init=2.0)
    rng = SamplerRng(5, K)
    backward_pass(d, s, rng)
    compute_q(d, s)
    forward_pass(d, s, h, rng)

    g = np.random.default_rng(6)
    r0 = g.gamma(3.0, 1 / 2.0, K)
    r1 = g.gamma(r0, 1.0)
    r2 = g.gamma(r1, 1.0)
    for t, ref in enumerate((r0, r1, r2)):
        assert st.ks_2samp(s.r[:, t], ref).pvalue > 0.001


def test_forward_static_conjugate_posterior():
    n = np.array([3, 7, 5, 10])
    p = np.array([0.3, 0.5, 0.6, 0.4])
    e, f = 1.5, 0.8
    K = 20_000
    d = tensor([n], K=K)
    s = ChainState.initial(d)
    s.p[:] = p
    h = GmnbHyper(e_init=e, f_init=f)
    rng = SamplerRng(7, K)
    draws = []
    for it in range(200):
        backward_pass(d, s, rng)
        compute_q(d, s)
        forward_pass(d, s, h, rng)
        if it >= 100 and it % 20 == 0:
            draws.append(s.r[:, 0].copy())
    draws = np.concatenate(draws)

    # fine-grid posterior of the static model r ~ Gamma(e, 1/f), n_j ~ NB(r, p_j)
    grid = np.linspace(1e-6, 60, 200_001)
    logpost = (e - 1) * np.log(grid) - f * grid
    for nj, pj in zip(n, p):
        logpost += gammaln(nj + grid) - gammaln(grid) + grid * math.log1p(-pj)
    w = np.exp(logpost - logpost.max())
    edges = np.quantile(draws, np.linspace(0, 1, 41))
    edges[0], edges[-1] = 0.0, np.inf
    cdf = np.concatenate([[0], np.cumsum(w)]) / w.sum()
    grid_mass = np.diff(np.interp(np.minimum(edges, grid[-1]), np.r_[0, grid], cdf))
    emp_mass = np.histogram(draws, edges)[0] / draws.size
    tv = 0.5 * np.abs(grid_mass - emp_mass).sum()
    assert tv < 0.02


def test_forward_reports_bad_rate():
    d = tensor([[3], [4]], K=2)
    s = ChainState.initial(d)
    s.c[:] = -5.0
    with pytest.raises(NumericError, match="gene 0, time 1"):
        forward_pass(d, s, GmnbHyper(), SamplerRng(0, 2))


def test_run_gibbs_reports_iteration():
    d = tensor([[3], [4]], K=2)
    s = ChainState.initial(d)
    s.c[:] = -5.0
    with pytest.raises(NumericError, match="iteration 0"):
        run_gibbs(d, GmnbHyper(), GibbsConfig(total_iters=5, burn_in=1), init=s)


# ---------------------------------------------------------------------------
# c and p updates


def test_update_c_conjugate_example():
    K = 10_000
    d = tensor([[0], [0], [0]], K=K)
    s = ChainState.initial(d)
    s.r[:] = 2.0
    rng = SamplerRng(8, K)
    x = np.concatenate([update_c(s, GmnbHyper(), rng).c.copy() for _ in range(100)])
    assert x.mean() == pytest.approx(1.0, abs=0.01)
    assert x.var() == pytest.approx(5 * 0.2**2, rel=0.02)


def test_update_c_without_transitions_is_prior():
    K = 50_000
    d = tensor([[2, 3]], K=K)
    s = ChainState.initial(d)
    update_c(s, GmnbHyper(c0=3.0, d0=1.5), SamplerRng(9, K))
    assert st.kstest(s.c, st.gamma(3.0, scale=1 / 1.5).cdf).pvalue > 0.001


def test_update_c_recovers_true_rate():
    g = np.random.default_rng(10)
    hits = 0
    for rep in range(50):
        r = np.empty(201)
        r[0] = 100.0
        for t in range(1, 201):
            r[t] = max(g.gamma(r[t - 1], 1 / 2.0), 1e-300)
        d = tensor([[0]] * 201)
        s = ChainState.initial(d)
        s.r[0] = r
        rng = SamplerRng(rep, 1)
        draws = [update_c(s, GmnbHyper(), rng).c[0] for _ in range(2000)]
        hits += abs(np.mean(draws) - 2.0) < 0.3
    assert hits >= 45


def test_update_p_zero_counts():
    K = 3
    d = tensor([[0] * 20_000], K=K)
    s = ChainState.initial(d)
    s.r[:] = [[0.5], [1.0], [1.5]]
    update_p(d, s, GmnbHyper(), SamplerRng(11, K))
    assert st.kstest(s.p, st.beta(1, 4).cdf).pvalue > 0.001


def test_update_p_symmetric_beta():
    d = tensor([[1000] * 10_000])
    s = ChainState.initial(d)
    s.r[:] = 1000.0
    rng = SamplerRng(12, 1)
    x = np.concatenate([update_p(d, s, GmnbHyper(), rng).p.copy() for _ in range(100)])
    assert x.mean() == pytest.approx(0.5, abs=0.002)


def test_sequencing_depth_recovery():
    g = np.random.default_rng(13)
    K = 200
    sf = np.array([0.8, 1.2])
    r = g.gamma(g.uniform(30, 50, K), 10.0)
    counts = g.negative_binomial(r[:, None], 1 / (1 + sf)[None, :])
    d = CountTensor(counts, [f"g{k}" for k in range(K)], [0.0], [0, 0], 1, [1, 2])
    smp = run_gibbs(d, GmnbHyper(), GibbsConfig(total_iters=2000, burn_in=1000, seed=1))
    odds = (smp.p / (1 - smp.p)).mean(axis=0)
    assert odds[0] / odds[1] == pytest.approx(0.8 / 1.2, abs=0.05)


# ---------------------------------------------------------------------------
# full runs


def test_keeps_requested_draws():
    d = tensor([[3, 4], [5]], K=2)
    smp = run_gibbs(d, GmnbHyper(), GibbsConfig(total_iters=50, burn_in=10, thin=4))
    assert smp.n_draws == (50 - 10) // 4 == 10
    assert smp.r.shape == (10, 2, 2) and smp.loglik_trace.shape == (50,)
    assert smp.final_state is not None


def test_recorded_loglik_matches_draws():
    from gmnb.model import log_likelihood_per_gene
    d = tensor([[3, 4], [5, 0], [9, 2]], K=3)
    smp = run_gibbs(d, GmnbHyper(), GibbsConfig(total_iters=30, burn_in=20))
    for s in range(smp.n_draws):
        want = log_likelihood_per_gene(d, smp.draw(s))
        np.testing.assert_allclose(smp.loglik_gene[s], want, rtol=1e-10)


def test_deterministic_replay():
    d = simulate(SimSpec(n_genes=20, seed=3)).data_cond1
    cfg = GibbsConfig(total_iters=60, burn_in=30, seed=9)
    a, b = run_gibbs(d, GmnbHyper(), cfg), run_gibbs(d, GmnbHyper(), cfg)
    for f in ("r", "c", "p", "loglik_gene"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def _digest(smp):
    h = hashlib.sha256()
    for a in (smp.r, smp.c, smp.p, smp.loglik_gene):
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def test_bit_identical_across_worker_counts():
    d = simulate(SimSpec(n_genes=30, seed=4)).data_cond1
    serial = run_gibbs(d, GmnbHyper(), GibbsConfig(total_iters=40, burn_in=20, seed=2))
    script = textwrap.dedent("""
        import hashlib, numpy as np
        from gmnb.gibbs import GibbsConfig, run_gibbs
        from gmnb.model import GmnbHyper
        from gmnb.synthetic import SimSpec, simulate
        d = simulate(SimSpec(n_genes=30, seed=4)).data_cond1
        cfg = GibbsConfig(total_iters=40, burn_in=20, seed=2, parallel_genes=True, workers=3)
        smp = run_gibbs(d, GmnbHyper(), cfg)
        h = hashlib.sha256()
        for a in (smp.r, smp.c, smp.p, smp.loglik_gene):
            h.update(np.ascontiguousarray(a).tobytes())
        print(h.hexdigest())
    """)
    env = dict(os.environ, NUMBA_NUM_THREADS="3")
    out = subprocess.run([sys.executable, "-c", script], env=env, capture_output=True,
                         text=True, check=True)
    assert out.stdout.strip() == _digest(serial)


def test_static_fit_recovers_mean():
    g = np.random.default_rng(14)
    n = g.negative_binomial(20, 0.5, size=4)
    d = CountTensor([n], ["g"], [0.0], [0] * 4, 1, [1, 2, 3, 4])
    smp = run_gibbs(d, GmnbHyper(), GibbsConfig(seed=5))
    ec = np.mean([expected_count(smp.r[s, 0, 0], smp.p[s, j])
                  for s in range(smp.n_draws) for j in range(4)])
    assert ec == pytest.approx(n.mean(), rel=0.10)


@pytest.mark.slow
def test_loglik_trace_converges():
    passes = 0
    for seed in range(20):
        d = simulate(SimSpec(n_genes=100, seed=100 + seed)).data_cond1
        smp = run_gibbs(d, GmnbHyper(), GibbsConfig(seed=seed))
        passes += abs(trace_z(smp.loglik_trace[smp.burn_in:])) < 3
    assert passes >= 18


@pytest.mark.slow
def test_initialisation_independence():
    d = simulate(SimSpec(n_genes=200, seed=21)).data_cond1
    h, cfg = GibbsConfig(seed=1), GibbsConfig(seed=2)
    a = run_gibbs(d, GmnbHyper(), h)
    init = ChainState.initial(d)
    init.r[:] = 1.0
    init.c[:] = 5.0
    init.p[:] = 0.1
    b = run_gibbs(d, GmnbHyper(), cfg, init=init)
    ma, mb = a.r.mean(axis=0), b.r.mean(axis=0)
    rel = np.abs(ma - mb) / (0.5 * (ma + mb))
    assert np.mean(np.all(rel < 0.05, axis=1)) >= 0.95


def test_geweke_small():
    res = geweke_test(n_marginal=20_000, n_successive=20_000, seed=3)
    assert res.passed(), dict(zip(res.names, np.round(res.z, 2)))
