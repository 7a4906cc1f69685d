"""Two-condition benchmark generators with known differentially expressed genes.

Three generators are available:

``gmnb``
    gamma Markov chains of NB dispersions; DE genes shift the chain rate
    ``c`` by 0.02 towards 1 in condition 2.
``gp``
    NB counts around a Gaussian-process mean trajectory with exponential
    covariance; DE genes scale the mean by 1.5 and the amplitude by 10 and
    move the length scale by 0.25.
``nbar1``
    NB counts around ``exp(omega + beta)`` with an AR(1) ``omega``; DE genes
    scale the autoregressive coefficient by 3/2 or 2/3.

Within a gene both conditions are driven by the same random innovations
(the same generator stream is replayed for each condition), so a null gene has
an identical latent trajectory in both conditions and a DE gene differs only
through its perturbed parameters.  Replicates then differ by size factors and
NB sampling noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import RngStream, _nb_matrix, sample_gamma, sample_normal
from .errors import NumericError, ValidationError
from .model import CountTensor

GENERATORS = ("gmnb", "gp", "nbar1")


@dataclass(frozen=True)
class SimSpec:
    n_genes: int = 1000
    de_fraction: float = 0.10
    n_replicates: int = 4
    time_grid: tuple = (0.0, 12.0, 24.0, 48.0, 72.0)
    size_factor_range: tuple = (0.8, 1.2)
    generator: str = "gmnb"
    seed: int = 0
    # gmnb
    c_range: tuple = (0.8, 2.0)
    e_range: tuple = (30.0, 50.0)
    r0_scale: float = 10.0
    c_shift: float = 0.02
    # gp
    m_range: tuple = (1000.0, 2000.0)
    theta_range: tuple = (100.0, 10000.0)
    alpha_range: tuple = (0.5, 1.0)
    m_factor: float = 1.5
    theta_factor: float = 10.0
    alpha_shift: float = 0.25
    mean_floor: float = 1.0
    # nbar1
    beta_range: tuple = (4.5, 5.5)
    phi_range: tuple = (0.1, 0.9)
    # count noise for gp / nbar1: var = mu + mu**2 / nb_dispersion
    nb_dispersion: float = 50.0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValidationError(f"unknown generator {self.generator!r}; pick one of {GENERATORS}")
        if self.n_genes < 1 or self.n_replicates < 1:
            raise ValidationError("n_genes and n_replicates must be positive")
        if not 0.0 < self.de_fraction < 1.0:
            raise ValidationError("de_fraction must lie in (0, 1)")
        if self.n_de < 1:
            raise ValidationError("de_fraction * n_genes must round to at least one gene")
        grid = np.asarray(self.time_grid, dtype=float)
        if grid.ndim != 1 or grid.size < 1 or np.any(np.diff(grid) <= 0):
            raise ValidationError("time_grid must be strictly increasing")
        for name in ("size_factor_range", "c_range", "e_range", "m_range", "theta_range",
                     "alpha_range", "beta_range", "phi_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValidationError(f"{name} must be an interval (lo <= hi)")
        if self.size_factor_range[0] <= 0 or self.c_range[0] <= 0 or self.e_range[0] <= 0:
            raise ValidationError("size factors, c and e must be positive")
        if self.generator == "nbar1" and not (0 < self.phi_range[0] and self.phi_range[1] < 1):
            raise ValidationError("phi_range must lie inside (0, 1)")
        if self.nb_dispersion <= 0 or self.r0_scale <= 0:
            raise ValidationError("nb_dispersion and r0_scale must be positive")

    @property
    def n_de(self) -> int:
        return int(math.floor(self.de_fraction * self.n_genes + 0.5))


@dataclass
class LabeledDataset:
    data_cond1: CountTensor
    data_cond2: CountTensor
    truth: np.ndarray                      # (K,) bool
    generator_params: dict = field(default_factory=dict)
    spec: SimSpec | None = None

    def param_table(self) -> dict:
        """Per-gene parameters of both conditions (latent trajectories excluded)."""
        return {k: v for k, v in self.generator_params.items() if np.ndim(v) == 1}


def _uniform(rng, lo, hi, size=None):
    u = rng.uniform(1 if size is None else size)
    x = lo + (hi - lo) * u
    return float(x[0]) if size is None else x


def alpha_perturbation(alpha: float, shift: float = 0.25) -> float:
    """Move the length scale by ``shift`` towards the middle of [0.5, 1]."""
    return alpha + shift if alpha <= 0.75 else alpha - shift


def nbar1_phi_perturbation(phi: float) -> float:
    return 1.5 * phi if phi <= 0.5 else phi * 2.0 / 3.0


def exp_covariance(times, theta, alpha):
    """``theta * exp(-|t_i - t_j| / (2 alpha))``."""
    t = np.asarray(times, dtype=float)
    return theta * np.exp(-np.abs(t[:, None] - t[None, :]) / (2.0 * alpha))


def _design(spec: SimSpec, rng: RngStream):
    """Per-condition sample layout and size factors."""
    T1 = len(spec.time_grid)
    J = spec.n_replicates
    tidx = np.repeat(np.arange(T1), J)
    rep = np.tile(np.arange(1, J + 1), T1)
    lo, hi = spec.size_factor_range
    sf = {c: _uniform(rng, lo, hi, T1 * J) for c in (1, 2)}
    return tidx, rep, sf


def _counts(spec, seed, cond, mean_or_r, p):
    st = RngStream(seed, (13, cond))
    return _nb_matrix(st.state, np.ascontiguousarray(mean_or_r, dtype=float),
                      np.ascontiguousarray(p, dtype=float))


def _de_labels(spec: SimSpec, rng: RngStream) -> np.ndarray:
    order = np.argsort(rng.uniform(spec.n_genes), kind="stable")
    truth = np.zeros(spec.n_genes, dtype=bool)
    truth[order[:spec.n_de]] = True
    return truth


def simulate_gmnb(spec: SimSpec, null: bool = False) -> LabeledDataset:
    if spec.generator != "gmnb":
        raise ValidationError("simulate_gmnb needs generator='gmnb'")
    K, T1, seed = spec.n_genes, len(spec.time_grid), spec.seed
    top = RngStream(seed, 10)
    truth = _de_labels(spec, top) & (not null)
    tidx, rep, sf = _design(spec, top)
    c1, c2, e, r0 = (np.empty(K) for _ in range(4))
    traj = {1: np.empty((K, T1)), 2: np.empty((K, T1))}
    for k in range(K):
        g = RngStream(seed, (11, k))
        c1[k] = _uniform(g, *spec.c_range)
        e[k] = _uniform(g, *spec.e_range)
        r0[k] = sample_gamma(e[k], spec.r0_scale, g)
        c2[k] = c1[k] + (spec.c_shift if c1[k] < 1 else -spec.c_shift) if truth[k] else c1[k]
        for cond, ck in ((1, c1[k]), (2, c2[k])):
            chain = RngStream(seed, (12, k))
            r = traj[cond][k]
            r[0] = r0[k]
            for t in range(1, T1):
                r[t] = max(sample_gamma(r[t - 1], 1.0 / ck, chain), 1e-300)
    tensors = {}
    for cond in (1, 2):
        p = sf[cond] / (1.0 + sf[cond])
        n = _counts(spec, seed, cond, traj[cond][:, tidx], np.broadcast_to(p, (K, p.size)))
        tensors[cond] = CountTensor(n, _gene_ids(K), spec.time_grid, tidx, cond, rep)
    params = {"c_cond1": c1, "c_cond2": c2, "e": e, "r0": r0,
              "r_cond1": traj[1], "r_cond2": traj[2],
              "size_factors_cond1": sf[1], "size_factors_cond2": sf[2]}
    return LabeledDataset(tensors[1], tensors[2], truth, params, spec)


def simulate_gp(spec: SimSpec, null: bool = False) -> LabeledDataset:
    """Gaussian-process means; times are rescaled to [0, 1] by the last time point."""
    if spec.generator != "gp":
        raise ValidationError("simulate_gp needs generator='gp'")
    K, T1, seed = spec.n_genes, len(spec.time_grid), spec.seed
    top = RngStream(seed, 10)
    truth = _de_labels(spec, top) & (not null)
    tidx, rep, sf = _design(spec, top)
    grid = np.asarray(spec.time_grid, dtype=float)
    span = grid[-1] - grid[0]
    tau = (grid - grid[0]) / span if span > 0 else np.zeros_like(grid)
    names = ("m", "theta", "alpha")
    par = {f"{n}_cond{c}": np.empty(K) for n in names for c in (1, 2)}
    mu = {1: np.empty((K, T1)), 2: np.empty((K, T1))}
    for k in range(K):
        g = RngStream(seed, (11, k))
        m = _uniform(g, *spec.m_range)
        th = _uniform(g, *spec.theta_range)
        al = _uniform(g, *spec.alpha_range)
        z = sample_normal(RngStream(seed, (12, k)), size=T1)
        both = {1: (m, th, al)}
        both[2] = ((spec.m_factor * m, spec.theta_factor * th,
                    alpha_perturbation(al, spec.alpha_shift)) if truth[k] else (m, th, al))
        for cond, (mc, thc, alc) in both.items():
            cov = exp_covariance(tau, thc, alc)
            try:
                L = np.linalg.cholesky(cov + 1e-9 * thc * np.eye(T1))
            except np.linalg.LinAlgError as exc:
                raise NumericError(f"GP covariance not positive definite for gene {k}") from exc
            mu[cond][k] = np.maximum(mc + L @ z, spec.mean_floor)
            par[f"m_cond{cond}"][k] = mc
            par[f"theta_cond{cond}"][k] = thc
            par[f"alpha_cond{cond}"][k] = alc
    return _finish_mean_model(spec, truth, tidx, rep, sf, mu, par)


def simulate_nbar1(spec: SimSpec, null: bool = False) -> LabeledDataset:
    """Log-mean ``omega + beta`` with stationary AR(1) ``omega``."""
    if spec.generator != "nbar1":
        raise ValidationError("simulate_nbar1 needs generator='nbar1'")
    K, T1, seed = spec.n_genes, len(spec.time_grid), spec.seed
    top = RngStream(seed, 10)
    truth = _de_labels(spec, top) & (not null)
    tidx, rep, sf = _design(spec, top)
    par = {f"{n}_cond{c}": np.empty(K) for n in ("beta", "phi") for c in (1, 2)}
    mu = {1: np.empty((K, T1)), 2: np.empty((K, T1))}
    for k in range(K):
        g = RngStream(seed, (11, k))
        beta = _uniform(g, *spec.beta_range)
        phi = _uniform(g, *spec.phi_range)
        z = sample_normal(RngStream(seed, (12, k)), size=T1)
        for cond in (1, 2):
            ph = nbar1_phi_perturbation(phi) if (cond == 2 and truth[k]) else phi
            omega = np.empty(T1)
            omega[0] = z[0] / math.sqrt(1.0 - ph * ph)
            for t in range(1, T1):
                omega[t] = ph * omega[t - 1] + z[t]
            mu[cond][k] = np.exp(omega + beta)
            par[f"beta_cond{cond}"][k] = beta
            par[f"phi_cond{cond}"][k] = ph
    return _finish_mean_model(spec, truth, tidx, rep, sf, mu, par)


def _finish_mean_model(spec, truth, tidx, rep, sf, mu, par):
    K = spec.n_genes
    rd = spec.nb_dispersion
    tensors = {}
    for cond in (1, 2):
        mean = mu[cond][:, tidx] * sf[cond][None, :]
        p = mean / (rd + mean)
        n = _counts(spec, spec.seed, cond, np.full_like(mean, rd), p)
        tensors[cond] = CountTensor(n, _gene_ids(K), spec.time_grid, tidx, cond, rep)
        par[f"mu_cond{cond}"] = mu[cond]
        par[f"size_factors_cond{cond}"] = sf[cond]
    return LabeledDataset(tensors[1], tensors[2], truth, par, spec)


def _gene_ids(K):
    width = len(str(K))
    return [f"g{k:0{width}d}" for k in range(K)]


def simulate(spec: SimSpec, null: bool = False) -> LabeledDataset:
    """Two-condition dataset from ``spec.generator``.

    With ``null=True`` no gene is perturbed: condition 2 shares every gene's
    parameters and latent trajectory with condition 1 and differs only in
    its size factors and count noise.
    """
    gen = {"gmnb": simulate_gmnb, "gp": simulate_gp, "nbar1": simulate_nbar1}[spec.generator]
    return gen(spec, null)
