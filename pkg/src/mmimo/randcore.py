"""Deterministic random streams and the numeric kernels shared by the simulator.

Every random draw in the package comes from an :class:`RngStream`.  A stream
wraps a Small Fast Counting generator (SFC64, 256-bit state) whose state is
set directly from a SplitMix64 expansion of ``(master_seed, stream_id)``, so no
platform- or version-dependent seeding path is involved.  Gaussian samples use
Box-Muller on 53-bit uniforms with both outputs consumed in order.
"""
from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_SFC64_WARMUP = 12
_TWO_PI = 2.0 * math.pi


class NotPSDError(ValueError):
    """Raised when a matrix that must be a covariance is not positive semi-definite."""


def splitmix64(x: int) -> int:
    """One SplitMix64 output for input ``x`` (pure 64-bit integer arithmetic)."""
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix_seed(master_seed: int, stream_id: int) -> int:
    """Seed-mixing function: 64-bit key for ``(master_seed, stream_id)``.

    ``key = splitmix64(splitmix64(seed) ^ splitmix64(stream_id + 1))``; the
    ``+ 1`` keeps stream 0 from collapsing onto the bare seed hash.
    """
    if stream_id < 0:
        raise ValueError("stream_id must be non-negative")
    a = splitmix64(master_seed & MASK64)
    b = splitmix64((stream_id + 1) & MASK64)
    return splitmix64(a ^ b)


def sfc64_initial_state(key: int) -> list[int]:
    """SFC64 words ``[a, b, c, counter]`` before warm-up, expanded from ``key``."""
    words = []
    x = key
    for _ in range(3):
        x = (x + _GOLDEN) & MASK64
        words.append(splitmix64(x))
    return words + [1]


class RngStream:
    """A seeded, value-like random stream.

    Streams must not be shared between concurrent workers; use :meth:`child`
    to derive independent sub-streams instead.
    """

    __slots__ = ("key", "stream_id", "_bitgen")

    def __init__(self, key: int, stream_id: int = 0):
        self.key = key & MASK64
        self.stream_id = stream_id
        self._bitgen = np.random.SFC64(0)
        state = np.array(sfc64_initial_state(self.key), dtype=np.uint64)
        self._bitgen.state = {
            "bit_generator": "SFC64",
            "state": {"state": state},
            "has_uint32": 0,
            "uinteger": 0,
        }
        self._bitgen.random_raw(_SFC64_WARMUP)

    def child(self, stream_id: int) -> "RngStream":
        """Independent sub-stream keyed on this stream's key."""
        return derive_stream(self.key, stream_id)

    def raw(self, count: int) -> np.ndarray:
        return self._bitgen.random_raw(count)

    def uniform(self, count: int) -> np.ndarray:
        """Uniforms in [0, 1) with 53-bit resolution."""
        return (self.raw(count) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    def integers(self, high: int, count: int) -> np.ndarray:
        """Integers in [0, high) via ``floor(u * high)``."""
        return np.minimum((self.uniform(count) * high).astype(np.int64), high - 1)

    def std_normal(self, count: int) -> np.ndarray:
        return draw_std_normal(self, count)

    def complex_normal(self, shape) -> np.ndarray:
        """Circularly-symmetric CN(0, 1) samples; real parts take even draws."""
        n = int(np.prod(shape))
        # same Box-Muller pairs as draw_std_normal(2n), assembled in place
        u = self.uniform(2 * n)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2])) * math.sqrt(0.5)
        phase = _TWO_PI * u[1::2]
        out = np.empty(n, dtype=np.complex128)
        out.real = r * np.cos(phase)
        out.imag = r * np.sin(phase)
        return out.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def __repr__(self) -> str:
        return f"RngStream(key={self.key:#018x}, stream_id={self.stream_id})"


def derive_stream(master_seed: int, stream_id: int) -> RngStream:
    """Stream for ``(master_seed, stream_id)``; identical arguments give identical sequences."""
    return RngStream(mix_seed(master_seed, stream_id), stream_id)


def draw_std_normal(rng: RngStream, count: int) -> np.ndarray:
    """``count`` i.i.d. N(0, 1) samples by Box-Muller.

    Pairs are built from consecutive uniforms ``(u1, u2)``:
    ``r = sqrt(-2 ln(1 - u1))``, outputs ``r cos(2 pi u2)`` then ``r sin(2 pi u2)``.
    For odd ``count`` the sine output of the final pair is discarded.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return np.empty(0)
    pairs = (count + 1) // 2
    u = rng.uniform(2 * pairs)
    r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
    phase = _TWO_PI * u[1::2]
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(phase)
    out[1::2] = r * np.sin(phase)
    return out[:count]


# --- Bessel J0 -------------------------------------------------------------

_J0_SERIES_LIMIT = 12.0


def _j0_series(x: float) -> float:
    q = -0.25 * x * x
    term = 1.0
    total = 1.0
    k = 0
    while True:
        k += 1
        term *= q / (k * k)
        total += term
        if abs(term) < 1e-17 * max(1.0, abs(total)) and k > 2:
            return total


def _j0_asymptotic(x: float) -> float:
    # Hankel expansion: J0 = sqrt(2/(pi x)) (P cos chi - Q sin chi), chi = x - pi/4,
    # with a_k = prod_{j<=k} (2j-1)^2 / (k! 8^k); summed up to the smallest term.
    p = 1.0
    q = 0.0
    a = 1.0
    prev = math.inf
    k = 0
    while True:
        k += 1
        a *= (2 * k - 1) ** 2 / (8.0 * k * x)
        if a >= prev or a < 1e-17:
            break
        prev = a
        # odd k feed Q (leading term -1/(8x)), even k feed P; signs alternate within each
        if k % 2:
            q += -a if (k // 2) % 2 == 0 else a
        else:
            p += -a if (k // 2) % 2 == 1 else a
    chi = x - 0.25 * math.pi
    return math.sqrt(2.0 / (math.pi * x)) * (p * math.cos(chi) - q * math.sin(chi))


def bessel_j0(x: float) -> float:
    """Bessel function of the first kind, order zero.

    Power series for ``|x| <= 12``; Hankel asymptotic expansion, truncated at its
    smallest term, beyond.  Absolute error stays below 1e-9 on ``|x| <= 50``.
    """
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"bessel_j0 needs a finite argument, got {x}")
    x = abs(x)
    if x <= _J0_SERIES_LIMIT:
        return _j0_series(x)
    return _j0_asymptotic(x)


# --- Cholesky --------------------------------------------------------------

def cholesky_psd(R: np.ndarray) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L^H = R`` for a Hermitian PSD ``R``.

    If the factorization meets a non-positive pivot, ``1e-12 * trace(R) / order``
    is added to the diagonal once and the factorization retried.
    """
    R = np.asarray(R, dtype=np.complex128)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError("cholesky_psd needs a square matrix")
    scale = max(np.abs(R).max(), 1e-300)
    if np.abs(R - R.conj().T).max() > 1e-12 * scale:
        raise ValueError("matrix is not conjugate-symmetric")
    try:
        return np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        pass
    order = R.shape[0]
    jitter = 1e-12 * np.trace(R).real / order
    try:
        return np.linalg.cholesky(R + jitter * np.eye(order))
    except np.linalg.LinAlgError as exc:
        raise NotPSDError("matrix is not positive semi-definite") from exc


# --- Regularized incomplete beta --------------------------------------------

def _beta_cf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for I_x(a, b)
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 10001):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def reg_incomplete_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)`` by continued fraction.

    Uses the symmetry ``I_x(a, b) = 1 - I_{1-x}(b, a)`` so the fraction is
    always evaluated where it converges quickly.
    """
    if not (a > 0 and b > 0):
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def rank_norm(values) -> np.ndarray:
    """Average ranks scaled to [0, 1] (0 = smallest).  A single value maps to 0."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n <= 1:
        return np.zeros(n)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(n)
    sorted_vals = values[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j)
        i = j + 1
    return ranks / (n - 1)
