"""Random variates needed by the GMNB sampler.

Every draw is produced by a xoshiro256** generator whose 256-bit state lives
in a small ``uint64`` array, so the same kernels can run inside numba loops
(one state row per gene) and behind the scalar Python API below.

The Python-level functions take an :class:`RngStream` and return a scalar, or
an array when ``size`` is given.  The ``_``-prefixed jitted functions take the
raw state array and are what the Gibbs sweep calls.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

from .errors import DomainError

#: Above this many customers the CRT draw uses a moment-matched normal.
CRT_EXACT_MAX = 10_000
#: Lower bound applied to any gamma draw that later serves as a shape.
GAMMA_FLOOR = 1e-300
#: Beta draws are clamped to [BETA_EPS, 1 - BETA_EPS].
BETA_EPS = 2.0**-53

_TWO_M53 = 2.0**-53
_TWO_M32 = 2.0**-32
# exact CRT switches to geometric skipping once r / (r + t) < 1 / (1 + this)
_CRT_TAIL_SWITCH = 32.0


class RngStream:
    """A seeded, independently keyed xoshiro256** stream.

    ``(seed, stream_id)`` is expanded into generator state with
    :class:`numpy.random.SeedSequence`, using ``stream_id`` as the spawn key, so
    distinct ids give statistically independent substreams.
    """

    def __init__(self, seed: int, stream_id=0):
        self.seed = int(seed)
        self.stream_id = stream_id
        self.state = seed_states(self.seed, [stream_id])[0]

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def uniform(self, size: int) -> np.ndarray:
        return _uniform_array(self.state, int(size))


def seed_states(seed: int, stream_ids) -> np.ndarray:
    """Generator states for several substreams of one seed, shape (n, 4)."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
    out = np.empty((len(stream_ids), 4), dtype=np.uint64)
    for i, sid in enumerate(stream_ids):
        key = tuple(sid) if isinstance(sid, (tuple, list)) else (int(sid),)
        st = np.random.SeedSequence(seed, spawn_key=key).generate_state(4, np.uint64)
        if not st.any():
            st[0] = 1
        out[i] = st
    return out


def derive_seed(seed: int, *keys: int) -> int:
    """A child 64-bit seed keyed by integers (used to separate model fits)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# core generator


@nb.njit(inline="always", cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@nb.njit(inline="always", cache=True)
def _next_u64(s):
    s0 = s[0]
    s1 = s[1]
    s2 = s[2]
    s3 = s[3]
    result = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
    t = s1 << np.uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    s[0] = s0
    s[1] = s1
    s[2] = s2
    s[3] = s3
    return result


@nb.njit(inline="always", cache=True)
def _uniform(s):
    # open interval (0, 1)
    return (float(_next_u64(s) >> np.uint64(11)) + 0.5) * _TWO_M53


@nb.njit(cache=True)
def _normal(s):
    while True:
        x = 2.0 * _uniform(s) - 1.0
        y = 2.0 * _uniform(s) - 1.0
        rr = x * x + y * y
        if rr < 1.0 and rr > 0.0:
            return x * math.sqrt(-2.0 * math.log(rr) / rr)


@nb.njit(cache=True)
def _gamma_mt(s, a):
    # Marsaglia-Tsang, a >= 1, unit scale
    d = a - 1.0 / 3.0
    cc = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = _normal(s)
        v = 1.0 + cc * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = _uniform(s)
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            return d * v
        if math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
            return d * v


@nb.njit(cache=True)
def _log_gamma_draw(s, a):
    """log of a Gamma(a, 1) draw; exact in log space for tiny shapes."""
    if a >= 1.0:
        return math.log(_gamma_mt(s, a))
    # boost: G(a) = G(a + 1) * U**(1/a)
    return math.log(_gamma_mt(s, a + 1.0)) + math.log(_uniform(s)) / a


@nb.njit(cache=True)
def _gamma_draw(s, a):
    if a >= 1.0:
        return _gamma_mt(s, a)
    return math.exp(_log_gamma_draw(s, a))


@nb.njit(cache=True)
def _beta_draw(s, a, b):
    lx = _log_gamma_draw(s, a)
    ly = _log_gamma_draw(s, b)
    d = ly - lx
    if d > 700.0:
        p = math.exp(-d)
    else:
        p = 1.0 / (1.0 + math.exp(d))
    if p < BETA_EPS:
        p = BETA_EPS
    elif p > 1.0 - BETA_EPS:
        p = 1.0 - BETA_EPS
    return p


@nb.njit(cache=True)
def _poisson_draw(s, lam):
    if lam <= 0.0:
        return 0
    if lam < 10.0:
        enlam = math.exp(-lam)
        x = 0
        prod = 1.0
        while True:
            prod *= _uniform(s)
            if prod > enlam:
                x += 1
            else:
                return x
    # PTRS transformed rejection (Hormann 1993)
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        uu = _uniform(s) - 0.5
        v = _uniform(s)
        us = 0.5 - abs(uu)
        k = math.floor((2.0 * a / us + b) * uu + lam + 0.43)
        if us >= 0.07 and v <= vr:
            return np.int64(k)
        if k < 0.0 or (us < 0.013 and v > us):
            continue
        if (math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b)
                <= -lam + k * loglam - math.lgamma(k + 1.0)):
            return np.int64(k)


@nb.njit(cache=True)
def _logarithmic_draw(s, p):
    # Kemp's second accelerated generator
    r = math.log1p(-p)
    while True:
        v = _uniform(s)
        if v >= p:
            return 1
        u = _uniform(s)
        q = -math.expm1(r * u)
        if v <= q * q:
            res = math.floor(1.0 + math.log(v) / math.log(q))
            if res < 1.0:
                continue
            return np.int64(res)
        if v >= q:
            return 1
        return 2


@nb.njit(cache=True)
def _digamma(x):
    res = 0.0
    while x < 6.0:
        res -= 1.0 / x
        x += 1.0
    x2 = 1.0 / (x * x)
    res += math.log(x) - 0.5 / x - x2 * (1.0 / 12 - x2 * (1.0 / 120 - x2 * (
        1.0 / 252 - x2 * (1.0 / 240 - x2 * (1.0 / 132)))))
    return res


@nb.njit(cache=True)
def _trigamma(x):
    res = 0.0
    while x < 6.0:
        res += 1.0 / (x * x)
        x += 1.0
    x2 = 1.0 / (x * x)
    res += 1.0 / x + 0.5 * x2 + (1.0 / x) * x2 * (1.0 / 6 - x2 * (1.0 / 30 - x2 * (
        1.0 / 42 - x2 * (1.0 / 30))))
    return res


@nb.njit(cache=True)
def _crt_moments(n, r):
    """Mean and variance of CRT(n, r), i.e. of sum_t Bernoulli(r / (r + t - 1))."""
    mean = r * (_digamma(r + n) - _digamma(r))
    var = mean - r * r * (_trigamma(r) - _trigamma(r + n))
    if var < 0.0:
        var = 0.0
    return mean, var


@nb.njit(cache=True)
def _crt_draw(s, n, r, exact_max):
    if n <= 0:
        return 0
    if n > exact_max:
        mean, var = _crt_moments(float(n), r)
        x = np.int64(round(mean + math.sqrt(var) * _normal(s)))
        if x < 1:
            return 1
        if x > n:
            return n
        return x
    # b_1 = 1 always; two 32-bit uniforms per generator call
    m = n
    if r * _CRT_TAIL_SWITCH + 1.0 < n:
        m = np.int64(r * _CRT_TAIL_SWITCH) + 1
    ell = 1
    t = 1
    while t < m:
        w = _next_u64(s)
        if float(w >> np.uint64(32)) * _TWO_M32 * (r + t) < r:
            ell += 1
        t += 1
        if t < m:
            if float(w & np.uint64(0xFFFFFFFF)) * _TWO_M32 * (r + t) < r:
                ell += 1
            t += 1
    # sparse tail: candidates from Bernoulli(r / (r + t)) by geometric jumps,
    # thinned to the exact per-position probability
    while t < n:
        pbar = r / (r + t)
        jump = math.floor(math.log(_uniform(s)) / math.log1p(-pbar)) + 1.0
        if jump > n - t:
            break
        t_old = t
        t += np.int64(jump)
        if _uniform(s) * (r + t - 1) < r + t_old:
            ell += 1
    return ell


@nb.njit(cache=True)
def _nb_compound_draw(s, r, p):
    ell = _poisson_draw(s, -r * math.log1p(-p))
    n = 0
    for _ in range(ell):
        n += _logarithmic_draw(s, p)
    return n


@nb.njit(cache=True)
def _nb_gamma_poisson_draw(s, r, p):
    lam = _gamma_draw(s, r) * p / (1.0 - p)
    return _poisson_draw(s, lam)


# ---------------------------------------------------------------------------
# array kernels behind the Python API


@nb.njit(cache=True)
def _uniform_array(s, size):
    out = np.empty(size)
    for i in range(size):
        out[i] = _uniform(s)
    return out


@nb.njit(cache=True)
def _gamma_array(s, shape, scale, size):
    out = np.empty(size)
    for i in range(size):
        out[i] = _gamma_draw(s, shape) * scale
    return out


@nb.njit(cache=True)
def _log_gamma_array(s, shape, size):
    out = np.empty(size)
    for i in range(size):
        out[i] = _log_gamma_draw(s, shape)
    return out


@nb.njit(cache=True)
def _beta_array(s, a, b, size):
    out = np.empty(size)
    for i in range(size):
        out[i] = _beta_draw(s, a, b)
    return out


@nb.njit(cache=True)
def _crt_array(s, n, r, exact_max, size):
    out = np.empty(size, dtype=np.int64)
    for i in range(size):
        out[i] = _crt_draw(s, n, r, exact_max)
    return out


@nb.njit(cache=True)
def _nb_compound_array(s, r, p, size):
    out = np.empty(size, dtype=np.int64)
    for i in range(size):
        out[i] = _nb_compound_draw(s, r, p)
    return out


@nb.njit(cache=True)
def _nb_gamma_poisson_array(s, r, p, size):
    out = np.empty(size, dtype=np.int64)
    for i in range(size):
        out[i] = _nb_gamma_poisson_draw(s, r, p)
    return out


@nb.njit(cache=True)
def _logarithmic_array(s, p, size):
    out = np.empty(size, dtype=np.int64)
    for i in range(size):
        out[i] = _logarithmic_draw(s, p)
    return out


@nb.njit(cache=True)
def _poisson_array(s, lam, size):
    out = np.empty(size, dtype=np.int64)
    for i in range(size):
        out[i] = _poisson_draw(s, lam)
    return out


@nb.njit(cache=True)
def _normal_array(s, size):
    out = np.empty(size)
    for i in range(size):
        out[i] = _normal(s)
    return out


@nb.njit(cache=True)
def _nb_matrix(s, r, p):
    """NB counts for (K, S) matrices of dispersions and probabilities."""
    K, S = r.shape
    out = np.empty((K, S), dtype=np.int64)
    for k in range(K):
        for j in range(S):
            out[k, j] = _nb_gamma_poisson_draw(s, r[k, j], p[k, j])
    return out


# ---------------------------------------------------------------------------
# public API


def _positive(name, x):
    x = float(x)
    if not (x > 0.0) or not math.isfinite(x):
        raise DomainError(f"{name} must be a positive finite number, got {x}")
    return x


def _open_unit(name, x):
    x = float(x)
    if not (0.0 < x < 1.0):
        raise DomainError(f"{name} must lie in (0, 1), got {x}")
    return x


def _scalar_or_array(kernel, size, *args):
    if size is None:
        return kernel(*args, 1)[0].item()
    return kernel(*args, int(size))


def sample_gamma(shape, scale, rng: RngStream, size=None):
    """Gamma(shape, scale) draw(s); mean is ``shape * scale``.

    Shapes below one go through the boosted ``G(a+1) * U**(1/a)`` identity in
    log space, so they never produce NaN.  For extremely small shapes the
    result can underflow to 0.0; use :func:`sample_log_gamma` when the log of
    the draw is what matters.
    """
    shape = _positive("shape", shape)
    scale = _positive("scale", scale)
    return _scalar_or_array(_gamma_array, size, rng.state, shape, scale)


def sample_log_gamma(shape, rng: RngStream, size=None):
    """Natural log of unit-scale Gamma(shape) draw(s)."""
    shape = _positive("shape", shape)
    return _scalar_or_array(_log_gamma_array, size, rng.state, shape)


def sample_beta(a, b, rng: RngStream, size=None):
    """Beta(a, b) draw(s), clamped to ``[BETA_EPS, 1 - BETA_EPS]``."""
    a = _positive("a", a)
    b = _positive("b", b)
    return _scalar_or_array(_beta_array, size, rng.state, a, b)


def sample_crt(n, r, rng: RngStream, size=None, exact_max: int = CRT_EXACT_MAX):
    """Chinese Restaurant Table draw(s): ``sum_{t=1}^n Bernoulli(r / (r + t - 1))``.

    For ``n > exact_max`` a rounded normal with the exact mean and variance of
    the Bernoulli sum is used instead, clamped to ``[1, n]``.
    """
    n = int(n)
    if n < 0:
        raise DomainError(f"n must be nonnegative, got {n}")
    r = _positive("r", r)
    return _scalar_or_array(_crt_array, size, rng.state, n, r, int(exact_max))


def crt_mean(n, r) -> float:
    """Exact expectation of CRT(n, r)."""
    return float(_crt_moments(float(n), float(r))[0]) if n > 0 else 0.0


def sample_nb_compound(r, p, rng: RngStream, size=None):
    """NB(r, p) draw(s) built as a Poisson sum of logarithmic variables."""
    r = _positive("r", r)
    p = _open_unit("p", p)
    return _scalar_or_array(_nb_compound_array, size, rng.state, r, p)


def sample_nb(r, p, rng: RngStream, size=None):
    """NB(r, p) draw(s) via the gamma-Poisson mixture."""
    r = _positive("r", r)
    p = _open_unit("p", p)
    return _scalar_or_array(_nb_gamma_poisson_array, size, rng.state, r, p)


def sample_logarithmic(p, rng: RngStream, size=None):
    """Logarithmic-series draw(s) with pmf ``-p**u / (u * log(1 - p))``."""
    p = _open_unit("p", p)
    return _scalar_or_array(_logarithmic_array, size, rng.state, p)


def sample_poisson(lam, rng: RngStream, size=None):
    lam = float(lam)
    if not lam >= 0.0:
        raise DomainError(f"lam must be nonnegative, got {lam}")
    return _scalar_or_array(_poisson_array, size, rng.state, lam)


def sample_normal(rng: RngStream, size=None):
    return _scalar_or_array(_normal_array, size, rng.state)
