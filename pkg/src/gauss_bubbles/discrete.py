"""Functions on the product alphabet {0, ..., m-1}^n with values in the
probability simplex: expectations, influences, the m-ary resampling noise
operator, noise stability, and the plurality rule.

Tables are stored dense with shape (m,) * n (+ a trailing value axis for
simplex-valued functions), in lexicographic order of the coordinates when
flattened. The noise operator resamples each coordinate independently: a
coordinate keeps its symbol with probability (1 + (m-1)*rho)/m and moves to
each of the other m-1 symbols with probability (1-rho)/m, which is the
unique stochastic completion of the move probability and reduces to the
usual (1+rho)/2 stay probability at m=2. The constructor also accepts an
alternate stay convention (1 - (m-1)*rho)/m but refuses it whenever the row
does not sum to one; see the kernel docstring.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator

from .errors import CapacityError, ConfigError, ContractViolationError, DomainError

#: Largest dense table handled by the exact evaluator.
DEFAULT_CAPACITY = 10**7

# Substream id for the majority pair sampler (keeps its Philox keys disjoint
# from the Gaussian sampling streams under the same seed).
_CLT_SUBSTREAM = 3

_SIMPLEX_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class NoiseKernel:
    """Single-coordinate resampling kernel on m symbols at correlation rho.

    ``stay`` + (m-1) * ``move`` == 1 holds identically; nonnegativity of the
    probabilities restricts rho to [-1/(m-1), 1]. With
    ``alt_stay_convention=True`` the stay probability (1-(m-1)*rho)/m is
    requested instead; that variant only forms a stochastic row when it
    coincides with the standard one (rho = 0), and any other rho raises
    rather than silently using an unnormalized kernel.
    """

    m: int
    rho: float
    alt_stay_convention: bool = False

    def __post_init__(self):
        if self.m < 2:
            raise DomainError(f"alphabet size must be at least 2, got {self.m}")
        lo = -1.0 / (self.m - 1)
        if not lo <= self.rho <= 1.0:
            raise DomainError(
                f"rho={self.rho} outside the admissible range [{lo}, 1] for m={self.m}"
            )
        if self.alt_stay_convention:
            alt_stay = (1.0 - (self.m - 1) * self.rho) / self.m
            row_sum = alt_stay + (self.m - 1) * self.move
            if abs(row_sum - 1.0) > 1e-15:
                raise DomainError(
                    "alternate stay convention (1-(m-1)rho)/m does not form a "
                    f"stochastic row at rho={self.rho} (row sum {row_sum!r}); "
                    "refusing an unnormalized kernel"
                )

    @property
    def stay(self) -> float:
        if self.alt_stay_convention:
            return (1.0 - (self.m - 1) * self.rho) / self.m
        return (1.0 + (self.m - 1) * self.rho) / self.m

    @property
    def move(self) -> float:
        return (1.0 - self.rho) / self.m

    @property
    def matrix(self) -> np.ndarray:
        k = np.full((self.m, self.m), self.move)
        np.fill_diagonal(k, self.stay)
        return k


@dataclass(frozen=True, eq=False)
class DiscreteFunction:
    """Table of simplex-valued outputs over the n-fold product alphabet.

    ``values`` has shape (m,)*n + (m,): the first n axes index the input
    word, the last axis holds the simplex vector. Every entry must be
    nonnegative and sum to 1 within 1e-12.
    """

    m: int
    n: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        expected = (self.m,) * self.n + (self.m,)
        if values.shape != expected:
            raise ContractViolationError(
                f"table shape {values.shape} does not match {expected}"
            )
        sums = values.sum(axis=-1)
        if np.max(np.abs(sums - 1.0)) > _SIMPLEX_TOL:
            raise ContractViolationError("every table entry must sum to 1")
        if values.min() < -_SIMPLEX_TOL:
            raise ContractViolationError("table entries must be nonnegative")
        object.__setattr__(self, "values", values)
        values.setflags(write=False)

    def coordinate(self, j: int) -> np.ndarray:
        """The real-valued coordinate function f_j."""
        if not 0 <= j < self.m:
            raise DomainError(f"coordinate {j} out of range")
        return self.values[..., j]

    @property
    def n_entries(self) -> int:
        return self.m**self.n

    def as_matrix(self) -> np.ndarray:
        """(m^n, m) view in lexicographic row order."""
        return self.values.reshape(self.n_entries, self.m)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow([f"f{j}" for j in range(self.m)])
        for row in self.as_matrix():
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, m: int, n: int) -> "DiscreteFunction":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if len(header) != m:
            raise ContractViolationError(f"CSV has {len(header)} value columns, expected {m}")
        rows = [[float(v) for v in row] for row in reader if row]
        values = np.array(rows).reshape((m,) * n + (m,))
        return cls(m=m, n=n, values=values)


def influences(g: np.ndarray, i: int):
    """Mean, conditional-mean table, and influence of coordinate i (1-based).

    The conditional mean averages coordinate i out; the influence is the
    mean squared deviation E[(g - E_i g)^2].
    """
    table = np.asarray(g, dtype=float)
    n = table.ndim
    if not 1 <= i <= n:
        raise DomainError(f"coordinate index {i} out of range 1..{n}")
    axis = i - 1
    mean = float(table.mean())
    conditional = table.mean(axis=axis)
    centered = table - np.expand_dims(conditional, axis)
    influence = float((centered**2).mean())
    return mean, conditional, influence


def apply_noise_kernel(g: np.ndarray, rho: float, kernel: NoiseKernel | None = None) -> np.ndarray:
    """Apply the product resampling kernel to a real table, axis by axis.

    Cost is O(n * m^(n+1)). At rho = 1 this is the identity; at rho = 0
    every entry becomes the global mean.
    """
    table = np.asarray(g, dtype=float)
    m = table.shape[0]
    if any(s != m for s in table.shape):
        raise ContractViolationError("table must be m ** n shaped")
    k = kernel.matrix if kernel is not None else NoiseKernel(m=m, rho=rho).matrix
    out = table
    for axis in range(table.ndim):
        moved = np.moveaxis(out, axis, -1)
        out = np.moveaxis(moved @ k.T, -1, axis)
    return out


@dataclass(frozen=True)
class DiscreteStabilityResult:
    rho: float
    per_coordinate: np.ndarray  # S_rho f_j per simplex coordinate
    total: float
    exact: bool
    stderr: float = 0.0


def _stability_exact(f: DiscreteFunction, rho: float) -> DiscreteStabilityResult:
    per = np.empty(f.m)
    norm = f.n_entries
    for j in range(f.m):
        fj = f.coordinate(j)
        per[j] = float((fj * apply_noise_kernel(fj, rho)).sum() / norm)
    return DiscreteStabilityResult(rho=rho, per_coordinate=per, total=float(per.sum()), exact=True)


def _stability_sampled(f: DiscreteFunction, rho: float, sample_count: int, seed: int):
    """Pair sampler: word uniform, each partner coordinate from the kernel row."""
    kernel = NoiseKernel(m=f.m, rho=rho)
    rng = Generator(np.random.Philox(key=seed))
    matrix = f.as_matrix()
    weights = np.array([f.m**t for t in range(f.n - 1, -1, -1)])
    totals = np.zeros(f.m)
    totals_sq = np.zeros(f.m)
    remaining = sample_count
    block_size = 65536
    while remaining > 0:
        block = min(block_size, remaining)
        remaining -= block
        omega = rng.integers(0, f.m, size=(block, f.n))
        stays = rng.random((block, f.n)) < kernel.stay
        jumps = rng.integers(1, f.m, size=(block, f.n))
        delta = np.where(stays, omega, (omega + jumps) % f.m)
        vals = matrix[omega @ weights] * matrix[delta @ weights]
        totals += vals.sum(axis=0)
        totals_sq += (vals * vals).sum(axis=0)
    mean = totals / sample_count
    var = np.maximum(totals_sq / sample_count - mean**2, 0.0)
    stderr = float(np.sqrt(var.sum() / sample_count))
    return DiscreteStabilityResult(
        rho=rho, per_coordinate=mean, total=float(mean.sum()), exact=False, stderr=stderr
    )


def discrete_noise_stability(
    f: DiscreteFunction,
    rho: float,
    sample_count: int | None = None,
    seed: int = 0,
    capacity: int = DEFAULT_CAPACITY,
) -> DiscreteStabilityResult:
    """S_rho f = sum_j E[f_j * (noise kernel applied to f_j)].

    Exact (tensor contraction) when the table has at most ``capacity``
    entries; beyond that a Monte Carlo pair sampler is used when
    ``sample_count`` is given, otherwise the call fails with a capacity
    error.
    """
    NoiseKernel(m=f.m, rho=rho)  # validates rho for this alphabet
    if f.n_entries <= capacity:
        return _stability_exact(f, rho)
    if sample_count is None:
        raise CapacityError(
            f"table with {f.n_entries} entries exceeds capacity {capacity} "
            "and no sample_count was given for the Monte Carlo path"
        )
    return _stability_sampled(f, rho, sample_count, seed)


def plurality_function(m: int, n: int, capacity: int = DEFAULT_CAPACITY) -> DiscreteFunction:
    """The plurality rule as a simplex-valued table.

    A strict winner j maps to the basis vector e_j; any tie for the top
    count maps to the barycenter (1/m, ..., 1/m).
    """
    if m < 2:
        raise DomainError(f"need at least 2 symbols, got m={m}")
    if n < 1:
        raise DomainError(f"need at least 1 coordinate, got n={n}")
    if m**n > capacity:
        raise CapacityError(f"plurality table with {m**n} entries exceeds capacity {capacity}")
    words = np.indices((m,) * n).reshape(n, -1).T  # (m^n, n), lexicographic
    counts = (words[:, :, None] == np.arange(m)[None, None, :]).sum(axis=1)
    top = counts.max(axis=1, keepdims=True)
    winners = counts == top
    strict = winners.sum(axis=1) == 1
    values = np.where(
        strict[:, None], winners.astype(float), np.full((1, m), 1.0 / m)
    )
    return DiscreteFunction(m=m, n=n, values=values.reshape((m,) * n + (m,)))


@dataclass(frozen=True)
class CltCrosscheckResult:
    rho: float
    n: int
    discrete: float
    discrete_stderr: float
    gaussian: float
    gap: float


def clt_crosscheck(rho: float, n: int, cfg) -> CltCrosscheckResult:
    """Noise stability of the two-candidate majority versus its Gaussian limit.

    The majority of a uniform word depends only on the count K of ones,
    K ~ Binomial(n, 1/2); after per-coordinate resampling the partner count
    is Binomial(K, stay) + Binomial(n - K, move), so the agreement
    probability is sampled exactly with three binomial draws per pair. The
    Gaussian benchmark is the same-side probability of a correlated pair for
    a half-space of measure 1/2, namely 1/2 + arcsin(rho)/pi.

    ``cfg`` supplies sample_count, seed and chunk_size; antithetic sampling
    has no binomial analogue and is rejected.
    """
    if n < 1 or n % 2 == 0:
        raise DomainError("the voter count n must be odd (majority ties are out of scope)")
    if getattr(cfg, "antithetic", False):
        raise ConfigError("antithetic sampling does not apply to the binomial pair sampler")
    kernel = NoiseKernel(m=2, rho=rho)  # validates rho in [-1, 1]

    total = 0.0
    remaining = cfg.sample_count
    chunk = 0
    while remaining > 0:
        block = min(cfg.chunk_size, remaining)
        remaining -= block
        rng = Generator(np.random.Philox(key=[cfg.seed, (_CLT_SUBSTREAM << 32) | chunk]))
        chunk += 1
        ones = rng.binomial(n, 0.5, size=block)
        partner_ones = rng.binomial(ones, kernel.stay) + rng.binomial(n - ones, kernel.move)
        agree = (ones > n / 2) == (partner_ones > n / 2)
        total += float(agree.sum())
    mean = total / cfg.sample_count
    # agreement is an indicator, so the sample variance is mean*(1-mean)
    var = max(mean * (1.0 - mean), 0.0) * cfg.sample_count / max(cfg.sample_count - 1, 1)
    stderr = math.sqrt(var / cfg.sample_count)
    gaussian = 0.5 + math.asin(rho) / math.pi
    return CltCrosscheckResult(
        rho=rho,
        n=n,
        discrete=mean,
        discrete_stderr=stderr,
        gaussian=gaussian,
        gap=mean - gaussian,
    )
