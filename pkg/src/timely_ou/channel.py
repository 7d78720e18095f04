"""BSC + MDS success model, IIR channel-delay laws and the bit-level timeline.

Timing arithmetic that must be exact (attempt indices, the enhanced-IIR
delay saving) runs on :class:`fractions.Fraction`. Float inputs are snapped
to the nearest rational with denominator at most ``10**9`` so that
``beta = 1.5 * Tb`` in floating point is treated as exactly 3/2 Tb.
"""
from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

DEFAULT_TAIL_TOL = 1e-12
MAX_SUPPORT = 100_000


class ChannelTooNoisy(RuntimeError):
    """The delay law did not reach 1 - tail_tol within the support cap."""


def rational(x) -> Fraction:
    """Exact value of a time parameter; floats snap to the nearest ratio with denominator <= 1e9."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return _snap(float(x))


@functools.lru_cache(maxsize=4096)
def _snap(x: float) -> Fraction:
    return Fraction(x).limit_denominator(10**9)


@dataclass(frozen=True)
class CodeConfig:
    ell: int
    n: int
    Tb: float
    beta: float

    def __post_init__(self):
        if self.ell < 1:
            raise ValueError("ell must be >= 1")
        if self.n < self.ell:
            raise ValueError(f"codeword length n={self.n} shorter than message ell={self.ell}")
        if not self.Tb > 0:
            raise ValueError("Tb must be positive")
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")

    @property
    def nbar(self) -> float:
        """Nominal attempt time n*Tb + beta."""
        return self.n * self.Tb + self.beta

    @property
    def exact_nbar(self) -> Fraction:
        return self.n * rational(self.Tb) + rational(self.beta)


# --------------------------------------------------------------------------
# success probabilities


_TAIL_CACHE: dict[tuple[int, float], np.ndarray] = {}


def _decodable_by_length(ell: int, eps: float, m_max: int) -> np.ndarray:
    """P(Bin(m, eps) <= floor((m - ell)/2)) for codeword lengths m = 0..m_max.

    The log-pmf of Bin(m, eps) is carried from m to m+1 by the Pascal
    recurrence in the log domain; each value is the lower tail or one minus
    the upper tail, whichever is smaller, so values near 1 keep their
    precision. Results are cached per (ell, eps) and shared by every n.
    """
    key = (ell, eps)
    have = _TAIL_CACHE.get(key)
    if have is not None and len(have) > m_max:
        return have
    m_max = max(m_max, 2 * len(have) if have is not None else 0, 64)
    la, lb = math.log(eps), math.log1p(-eps)
    logpmf = np.zeros(1)
    out = np.zeros(m_max + 1)
    half = math.log(0.5)
    for m in range(m_max + 1):
        if m > 0:
            nxt = np.empty(m + 1)
            nxt[0] = logpmf[0] + lb
            nxt[-1] = logpmf[-1] + la
            nxt[1:-1] = np.logaddexp(logpmf[1:] + lb, logpmf[:-1] + la)
            logpmf = nxt
        t = (m - ell) // 2
        if t < 0:
            continue
        lower = np.logaddexp.reduce(logpmf[: t + 1])
        if lower < half:
            out[m] = math.exp(lower)
        elif t + 1 <= m:
            out[m] = -math.expm1(np.logaddexp.reduce(logpmf[t + 1:]))
        else:
            out[m] = 1.0
    out.setflags(write=False)
    _TAIL_CACHE[key] = out
    return out


def _binom_cdf_sequence(ell: int, n: int, eps: float, j_max: int) -> np.ndarray:
    """p_j = P(Bin(n+j, eps) <= floor((n+j-ell)/2)) for j = 0..j_max."""
    return _decodable_by_length(ell, eps, n + j_max)[n: n + j_max + 1].copy()


@dataclass(frozen=True)
class SuccessProbs:
    p: np.ndarray
    epsilon: float
    ell: int = 0
    n: int = 0

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if np.any((p < 0) | (p > 1)):
            raise ValueError("success probabilities must lie in [0, 1]")
        object.__setattr__(self, "p", p)

    def __len__(self) -> int:
        return len(self.p)

    def __getitem__(self, j):
        return self.p[j]

    @property
    def p0(self) -> float:
        return float(self.p[0])

    def monotonicity_violations(self) -> list[int]:
        """Indices j with p_j > p_{j+1}.

        The binomial formula drops by one correctable error on every odd
        increment of the codeword length, so these are expected; they are
        reported rather than repaired.
        """
        return [int(j) for j in np.flatnonzero(self.p[:-1] > self.p[1:])]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "p_j"])
            for j, pj in enumerate(self.p):
                w.writerow([j, repr(float(pj))])


def mds_success_probs(cfg: CodeConfig, epsilon: float, j_max: int) -> SuccessProbs:
    """ACK probability after j IR bits for an MDS code over a BSC(epsilon)."""
    if not 0 < epsilon < 0.5:
        raise ValueError(f"crossover probability must lie in (0, 1/2), got {epsilon}")
    if j_max < 0:
        raise ValueError("j_max must be >= 0")
    p = _binom_cdf_sequence(cfg.ell, cfg.n, epsilon, j_max)
    return SuccessProbs(p, epsilon, cfg.ell, cfg.n)


# --------------------------------------------------------------------------
# delay distributions


@dataclass(frozen=True)
class DelayDistribution:
    """Discrete channel-delay law truncated once 1 - tail_tol of the mass is covered.

    ``ir_bits[k]`` is the number of IR bits the decoder held when the
    message decoded with delay ``support[k]``.
    """

    support: np.ndarray
    pmf: np.ndarray
    truncated_mass: float
    ir_bits: np.ndarray = field(default=None)
    _laplace_cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)
    _weights: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        support = np.asarray(self.support, dtype=float)
        pmf = np.asarray(self.pmf, dtype=float)
        if support.shape != pmf.shape or support.ndim != 1 or len(support) == 0:
            raise ValueError("support and pmf must be matching non-empty vectors")
        if np.any(pmf < 0):
            raise ValueError("negative probability")
        if np.any(np.diff(support) <= 0):
            raise ValueError("support must be strictly increasing")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "pmf", pmf)
        if self.ir_bits is not None:
            object.__setattr__(self, "ir_bits", np.asarray(self.ir_bits, dtype=int))
        weights = pmf / math.fsum(pmf)
        weights.setflags(write=False)
        object.__setattr__(self, "_weights", weights)

    @classmethod
    def point_mass(cls, y: float) -> "DelayDistribution":
        return cls(np.array([float(y)]), np.array([1.0]), 0.0, np.array([0]))

    @property
    def mass_defect(self) -> float:
        """|sum(pmf) + truncated_mass - 1|; zero up to rounding for a valid law."""
        return abs(math.fsum(self.pmf) + self.truncated_mass - 1.0)

    @property
    def minimum(self) -> float:
        return float(self.support[0])

    @property
    def weights(self) -> np.ndarray:
        """pmf renormalised over the retained support."""
        return self._weights

    def mean(self) -> float:
        return float(np.dot(self.weights, self.support))

    def laplace(self, s: float) -> float:
        """E[exp(-s Y)], cached per s."""
        if s not in self._laplace_cache:
            self._laplace_cache[s] = float(np.dot(self.weights, np.exp(-s * self.support)))
        return self._laplace_cache[s]

    def sample(self, rng: np.random.Generator, size=None):
        idx = rng.choice(len(self.support), size=size, p=self.weights)
        return self.support[idx]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["delay", "probability"])
            for y, q in zip(self.support, self.pmf):
                w.writerow([repr(float(y)), repr(float(q))])


def _attempt_layout(cfg: CodeConfig, enhanced: bool) -> tuple[Fraction, Fraction, int, int]:
    """Attempt k ends at first + k*step holding (k*num)//den IR bits (exact)."""
    Tb, beta, nbar = rational(cfg.Tb), rational(cfg.beta), cfg.exact_nbar
    if not enhanced:
        return nbar, Tb + beta, 1, 1
    if beta < Tb:
        return nbar, Tb, 1, 1
    ratio = beta / Tb
    return nbar, beta, ratio.numerator, ratio.denominator


def _bits_of(k, num: int, den: int):
    return (k * num) // den


def delay_pmf_iir(sp: SuccessProbs, cfg: CodeConfig, enhanced: bool = False,
                  tail_tol: float = DEFAULT_TAIL_TOL, max_support: int = MAX_SUPPORT) -> DelayDistribution:
    """Law of the IIR channel delay.

    Decoding attempt k (k = 0, 1, ...) ends at ``delay(k)`` holding
    ``bits(k)`` IR bits and succeeds with probability ``p[bits(k)]``,
    independently of earlier attempts:

    * original: delay nbar + k (Tb + beta), bits k
    * enhanced, beta < Tb: delay nbar + k Tb, bits k
    * enhanced, beta >= Tb: delay nbar + k beta, bits floor(k beta / Tb)
    """
    first, step, num, den = _attempt_layout(cfg, enhanced)
    # attempts whose bit count is covered by sp
    covered = max_support if num == 0 else min(max_support, -(-len(sp) * den // num))
    k = np.arange(covered, dtype=np.int64)
    bits = _bits_of(k, num, den)
    pk = sp.p[bits]
    survive = np.cumprod(1.0 - pk)
    done = np.flatnonzero(survive <= tail_tol)
    if len(done) == 0:
        left = float(survive[-1]) if len(survive) else 1.0
        if covered < max_support:
            raise ChannelTooNoisy(
                f"needed p_{_bits_of(covered, num, den)} but only {len(sp)} success probabilities "
                f"were given (remaining mass {left:.3e})")
        raise ChannelTooNoisy(f"delay law still has mass {left:.3e} after {max_support} attempts")
    stop = int(done[0]) + 1
    before = np.concatenate([[1.0], survive[:stop - 1]])
    support = float(first) + k[:stop] * float(step)
    return DelayDistribution(support, before * pk[:stop], float(survive[stop - 1]), bits[:stop])


def delay_distribution(cfg: CodeConfig, epsilon: float, enhanced: bool = False,
                       tail_tol: float = DEFAULT_TAIL_TOL, max_support: int = MAX_SUPPORT,
                       j_start: int = 64) -> tuple[SuccessProbs, DelayDistribution]:
    """Success probabilities long enough for the delay law, and the law itself."""
    j_max = j_start
    while True:
        sp = mds_success_probs(cfg, epsilon, j_max)
        try:
            return sp, delay_pmf_iir(sp, cfg, enhanced, tail_tol, max_support)
        except ChannelTooNoisy:
            _, _, num, den = _attempt_layout(cfg, enhanced)
            if j_max >= _bits_of(max_support, num, den):
                raise
            j_max *= 4


# --------------------------------------------------------------------------
# enhanced-IIR timing arithmetic


def kappa(r: int, cfg: CodeConfig) -> int:
    """Smallest k in {0..r} with floor(k beta / Tb) >= r (r if none)."""
    if r < 0:
        raise ValueError("r must be >= 0")
    ratio = rational(cfg.beta) / rational(cfg.Tb)
    if ratio == 0:
        return r
    # floor(k ratio) >= r  <=>  k ratio >= r  <=>  k >= r / ratio
    k = math.ceil(Fraction(r) / ratio)
    return min(k, r)


def original_delay(r: int, cfg: CodeConfig) -> Fraction:
    return cfg.exact_nbar + r * (rational(cfg.Tb) + rational(cfg.beta))


def enhanced_delay(r: int, cfg: CodeConfig) -> Fraction:
    Tb, beta = rational(cfg.Tb), rational(cfg.beta)
    if beta < Tb:
        return cfg.exact_nbar + r * Tb
    return cfg.exact_nbar + kappa(r, cfg) * beta


def enhanced_saving(r: int, cfg: CodeConfig) -> Fraction:
    """Delay saved by streaming IR bits during processing, given r needed IR bits."""
    if r < 0:
        raise ValueError("r must be >= 0")
    Tb, beta = rational(cfg.Tb), rational(cfg.beta)
    saving = r * min(beta, Tb)
    if beta >= Tb:
        saving += (r - kappa(r, cfg)) * beta
    return saving


@dataclass
class Timeline:
    delay: Fraction
    attempts: int
    ir_bits: int
    events: list[tuple[Fraction, str, int]]

    @property
    def delay_float(self) -> float:
        return float(self.delay)


def simulate_timeline_iir(cfg: CodeConfig, enhanced: bool, *, r: int | None = None,
                          sp: SuccessProbs | None = None, rng: np.random.Generator | None = None,
                          max_attempts: int = MAX_SUPPORT) -> Timeline:
    """Event-driven transmitter/receiver timeline for one IIR message.

    Bits take Tb each and every decoding attempt takes beta; the receiver
    decodes with all bits queued when it becomes free. In original mode the
    transmitter sends one IR bit per NACK; in enhanced mode it streams IR
    bits from time n*Tb until the ACK. The decoder outcome is either the
    threshold rule "succeed once r IR bits are held" (``r`` given) or an
    independent draw with probability ``sp[bits held]`` (``sp`` and ``rng``).

    Time is kept as an exact rational.
    """
    if (r is None) == (sp is None):
        raise ValueError("give exactly one of r (threshold decoder) or sp (random decoder)")
    if sp is not None and rng is None:
        raise ValueError("random decoder needs an rng")
    Tb, beta = rational(cfg.Tb), rational(cfg.beta)
    t_code = cfg.n * Tb

    def succeeds(bits: int) -> bool:
        if r is not None:
            return bits >= r
        return rng.random() < sp.p[bits]

    events: list[tuple[Fraction, str, int]] = [(t_code, "codeword_received", 0)]
    bits = 0
    start = t_code
    for attempt in range(max_attempts):
        if enhanced:
            # IR bit i (1-based) is fully received at t_code + i*Tb
            bits = int(math.floor((start - t_code) / Tb))
        events.append((start, "decode_start", bits))
        end = start + beta
        if succeeds(bits):
            events.append((end, "ack", bits))
            return Timeline(end, attempt + 1, bits, events)
        events.append((end, "nack", bits))
        if enhanced:
            # wait for a bit not yet used, if none arrived during processing
            nxt = t_code + (bits + 1) * Tb
            start = max(end, nxt)
        else:
            bits += 1
            start = end + Tb
            events.append((start, "ir_bit_received", bits))
    raise ChannelTooNoisy(f"no ACK within {max_attempts} decoding attempts")


def sample_attempts_fr(p0: float, rng: np.random.Generator, size=None):
    """Number of FR transmissions up to and including the first success."""
    if not 0 < p0 <= 1:
        raise ValueError("p0 must lie in (0, 1]")
    return rng.geometric(p0, size=size)
