"""Thompson sampling over exploration buckets.

A bucket is one arm with its own Beta posterior.  Which bucket a candidate
falls into depends on the layout: its original position, its ranking score
binned into ``score_bins`` equal intervals, or the pair of both.  Each round
only the buckets of the current query's candidates take part; one Beta draw
is made per active bucket and the largest draw wins.

Random numbers come from numpy's PCG64 generator.  Every policy instance
owns one generator, spawned from a ``SeedSequence``, so runs that differ only
in which other policies ran alongside them see identical draws.
"""
from __future__ import annotations

import enum
from collections.abc import Sequence
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .logmodel import Impression


class LayoutKind(str, enum.Enum):
    POSITIONS = "positions"
    SCORES = "scores"
    SCORES_AND_POSITIONS = "scorepos"


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"Beta parameters must be positive, got ({self.alpha}, {self.beta})")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


@dataclass(frozen=True)
class BucketLayout:
    kind: LayoutKind
    k: int
    n_logged: int = 5
    score_bins: int = 100

    def __post_init__(self):
        object.__setattr__(self, "kind", LayoutKind(self.kind))
        if not 1 <= self.k < self.n_logged:
            raise ValueError("need 1 <= k < n_logged")
        if self.score_bins < 1:
            raise ValueError("score_bins must be positive")

    @property
    def n_positions(self) -> int:
        return self.n_logged - self.k + 1

    @property
    def bucket_count(self) -> int:
        if self.kind is LayoutKind.POSITIONS:
            return self.n_positions
        if self.kind is LayoutKind.SCORES:
            return self.score_bins
        return self.n_positions * self.score_bins

    def score_bin(self, score: float) -> int:
        # rounding first keeps decimal boundaries such as 0.29 in their own bin
        b = int(np.floor(round(score * self.score_bins, 9)))
        return min(max(b, 0), self.score_bins - 1)

    def index(self, position: int, score: float) -> int:
        if not self.k <= position <= self.n_logged:
            raise ValueError(f"position {position} outside candidate range {self.k}..{self.n_logged}")
        if self.kind is LayoutKind.POSITIONS:
            return position - self.k
        if self.kind is LayoutKind.SCORES:
            return self.score_bin(score)
        return (position - self.k) * self.score_bins + self.score_bin(score)

    def label(self, bucket: int) -> str:
        """Human-readable bucket name using 1-based interval numbering."""
        if self.kind is LayoutKind.POSITIONS:
            return f"i={bucket + self.k}"
        if self.kind is LayoutKind.SCORES:
            return f"P_{bucket + 1}"
        pos, b = divmod(bucket, self.score_bins)
        return f"P^{pos + self.k}_{b + 1}"

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "k": self.k, "n_logged": self.n_logged,
                "score_bins": self.score_bins}


def bucket_of(layout: BucketLayout, impression: Impression) -> int:
    return layout.index(impression.position, impression.score)


class NoExploration:
    """The production behaviour: always keep the logged result at slot k."""

    name = "none"

    def __repr__(self):
        return "NoExploration()"


class ThompsonState:
    """Per-bucket Beta posteriors, pull counts and the policy's generator.

    Clicks and non-clicks are kept as integer counts; the posterior is
    ``Beta(alpha0 + eps * clicks, beta0 + eps * misses)``.  ``exact_posterior``
    returns the same parameters as exact fractions.
    """

    def __init__(self, layout: BucketLayout, epsilon: float = 1.0,
                 rng: np.random.Generator | int | None = None,
                 prior: BetaParams = BetaParams(1.0, 1.0)):
        if not epsilon > 0:
            raise ValueError("epsilon must be > 0")
        self.layout = layout
        self.epsilon = float(epsilon)
        self.prior = prior
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        n = layout.bucket_count
        self.successes = np.zeros(n, dtype=np.int64)
        self.failures = np.zeros(n, dtype=np.int64)
        self.alpha = np.full(n, prior.alpha)
        self.beta = np.full(n, prior.beta)

    @property
    def name(self) -> str:
        return self.layout.kind.value

    @property
    def pull_counts(self) -> np.ndarray:
        return self.successes + self.failures

    def posterior(self, bucket: int) -> BetaParams:
        return BetaParams(float(self.alpha[bucket]), float(self.beta[bucket]))

    def exact_posterior(self, bucket: int) -> tuple[Fraction, Fraction]:
        eps = Fraction(repr(self.epsilon))
        return (Fraction(repr(self.prior.alpha)) + eps * int(self.successes[bucket]),
                Fraction(repr(self.prior.beta)) + eps * int(self.failures[bucket]))

    def snapshot(self) -> dict:
        return {
            "layout": self.layout.to_dict(),
            "epsilon": self.epsilon,
            "prior": [self.prior.alpha, self.prior.beta],
            "buckets": [
                {"alpha": float(a), "beta": float(b), "pull_count": int(s + f),
                 "clicks": int(s)}
                for a, b, s, f in zip(self.alpha, self.beta, self.successes, self.failures)
            ],
        }

    @classmethod
    def from_snapshot(cls, snap: dict, rng: np.random.Generator | int | None = None) -> ThompsonState:
        layout = BucketLayout(**snap["layout"])
        state = cls(layout, snap["epsilon"], rng, BetaParams(*snap["prior"]))
        buckets = snap["buckets"]
        if len(buckets) != layout.bucket_count:
            raise ValueError("snapshot bucket count does not match its layout")
        state.successes[:] = [b["clicks"] for b in buckets]
        state.failures[:] = [b["pull_count"] - b["clicks"] for b in buckets]
        state.alpha = state.prior.alpha + state.epsilon * state.successes
        state.beta = state.prior.beta + state.epsilon * state.failures
        return state

    def __repr__(self):
        return (f"ThompsonState({self.layout.kind.value}, buckets={self.layout.bucket_count}, "
                f"epsilon={self.epsilon}, pulls={int(self.pull_counts.sum())})")


def sample_beta(rng: np.random.Generator, params: BetaParams) -> float:
    return float(rng.beta(params.alpha, params.beta))


def active_buckets(state: ThompsonState, candidates: Sequence[Impression]) -> list[tuple[int, Impression]]:
    """One (bucket, candidate) pair per distinct bucket, ordered by bucket index.

    When candidates collide the one logged higher up represents the bucket.
    """
    seen: dict[int, Impression] = {}
    for imp in candidates:
        b = bucket_of(state.layout, imp)
        if b not in seen or imp.position < seen[b].position:
            seen[b] = imp
    return sorted(seen.items())


def select(state: ThompsonState, active: Sequence[tuple[int, Impression]]):
    """Draw one theta per active bucket and return ``(bucket, candidate, thetas)``.

    Draws are made in increasing bucket order, so the outcome does not depend
    on how ``active`` is ordered; ties go to the lower bucket index.
    """
    if not active:
        raise ValueError("no active buckets")
    entries = sorted(active, key=lambda e: e[0])
    draw, alpha, beta = state.rng.beta, state.alpha, state.beta
    # scalar draws are several times cheaper than one small vector draw
    thetas = [draw(alpha[b], beta[b]) for b, _ in entries]
    m = max(range(len(thetas)), key=thetas.__getitem__)
    return entries[m][0], entries[m][1], {b: t for (b, _), t in zip(entries, thetas)}


def update(state: ThompsonState, bucket: int, clicked: bool | int) -> ThompsonState:
    if not 0 <= bucket < state.layout.bucket_count:
        raise IndexError(f"bucket {bucket} outside 0..{state.layout.bucket_count - 1}")
    if clicked:
        state.successes[bucket] += 1
        state.alpha[bucket] = state.prior.alpha + state.epsilon * state.successes[bucket]
    else:
        state.failures[bucket] += 1
        state.beta[bucket] = state.prior.beta + state.epsilon * state.failures[bucket]
    return state


def make_policy(kind: str, k: int, n_logged: int = 5, epsilon: float = 1.0,
                seed=None, score_bins: int = 100):
    """Build a policy by name: ``none``, ``positions``, ``scores`` or ``scorepos``."""
    if kind == "none":
        return NoExploration()
    layout = BucketLayout(LayoutKind(kind), k, n_logged, score_bins)
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return ThompsonState(layout, epsilon, np.random.default_rng(seed))


def simulate_bernoulli(rates: Sequence[float], pulls: int, runs: int = 1,
                       epsilon: float = 1.0, seed=None,
                       prior: BetaParams = BetaParams(1.0, 1.0)) -> np.ndarray:
    """Run ``runs`` independent Thompson learners on stationary Bernoulli arms.

    Every arm is active on every pull.  The learners advance in lockstep so
    each step costs one vectorised beta draw; their posteriors never mix.
    Returns the chosen arm per pull, shape ``(pulls, runs)``.
    """
    rates = np.asarray(rates, dtype=np.float64)
    if rates.ndim != 1 or len(rates) == 0 or np.any((rates < 0) | (rates > 1)):
        raise ValueError("rates must be a non-empty vector of probabilities")
    if pulls < 0 or runs < 1:
        raise ValueError("pulls must be >= 0 and runs >= 1")
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    n_arms = len(rates)
    succ = np.zeros((runs, n_arms))
    fail = np.zeros((runs, n_arms))
    chosen = np.empty((pulls, runs), dtype=np.int16 if n_arms > 127 else np.int8)
    rows = np.arange(runs)
    for t in range(pulls):
        theta = rng.beta(prior.alpha + epsilon * succ, prior.beta + epsilon * fail)
        arm = theta.argmax(axis=1)
        hit = rng.random(runs) < rates[arm]
        succ[rows, arm] += hit
        fail[rows, arm] += ~hit
        chosen[t] = arm
    return chosen
