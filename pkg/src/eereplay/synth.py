"""Synthetic ranking logs drawn from a known click model.

Each result has a feature vector ``x`` and a true relevance
``clip(intercept + w.x, 0, 1)``.  The production score that orders the
results is a monotone piecewise-linear distortion of that relevance plus
bounded uniform noise, so scores are miscalibrated with respect to click
probability.  A result shown at position ``i`` is clicked with probability
``relevance * position_factors[i-1]``; only the first click scanning
top-down is kept.
"""
from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from .logmodel import Impression, QueryLog

BLOCK_SIZE = 8192


@dataclass(frozen=True)
class Distortion:
    """Piecewise-linear map through ``knots`` plus uniform noise in ``[-noise, noise]``."""

    knots: tuple[tuple[float, float], ...] = ((0.0, 0.0), (1.0, 1.0))
    noise: float = 0.0

    def __post_init__(self):
        knots = tuple((float(a), float(b)) for a, b in self.knots)
        object.__setattr__(self, "knots", knots)
        xs = [a for a, _ in knots]
        ys = [b for _, b in knots]
        if len(knots) < 2 or xs[0] != 0.0 or xs[-1] != 1.0:
            raise ValueError("distortion knots must start at x=0 and end at x=1")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("distortion knot x values must be strictly increasing")
        if any(b < a for a, b in zip(ys, ys[1:])):
            raise ValueError("distortion must be monotone non-decreasing")
        if not all(0.0 <= y <= 1.0 for y in ys):
            raise ValueError("distortion must map [0, 1] into [0, 1]")
        if self.noise < 0:
            raise ValueError("noise amplitude must be >= 0")

    def __call__(self, relevance):
        xs, ys = zip(*self.knots)
        return np.interp(relevance, xs, ys)


@dataclass(frozen=True)
class GroundTruthModel:
    relevance_weights: tuple[float, ...]
    position_factors: tuple[float, ...] = (1.0, 0.6, 0.4, 0.3, 0.25)
    distortion: Distortion = field(default_factory=Distortion)
    results_per_query: tuple[float, ...] = (0.25, 0.15, 0.10, 0.10, 0.40)
    relevance_intercept: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "relevance_weights", tuple(map(float, self.relevance_weights)))
        object.__setattr__(self, "position_factors", tuple(map(float, self.position_factors)))
        object.__setattr__(self, "results_per_query", tuple(map(float, self.results_per_query)))
        if not self.relevance_weights:
            raise ValueError("relevance_weights must be non-empty")
        pf = self.position_factors
        if not all(0.0 < f <= 1.0 for f in pf):
            raise ValueError("position factors must lie in (0, 1]")
        if any(b > a for a, b in zip(pf, pf[1:])):
            raise ValueError("position factors must be non-increasing")
        if len(self.results_per_query) != len(pf):
            raise ValueError("results_per_query needs one probability per logged position")
        p = np.asarray(self.results_per_query)
        if np.any(p < 0) or not np.isclose(p.sum(), 1.0):
            raise ValueError("results_per_query must be a probability distribution")

    @property
    def feature_dim(self) -> int:
        return len(self.relevance_weights)

    @property
    def n_logged(self) -> int:
        return len(self.position_factors)

    def relevance(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.shape[-1] != self.feature_dim:
            raise ValueError(f"expected {self.feature_dim} features, got {x.shape[-1]}")
        return np.clip(self.relevance_intercept + x @ np.asarray(self.relevance_weights), 0.0, 1.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["distortion"] = {"knots": [list(k) for k in self.distortion.knots],
                           "noise": self.distortion.noise}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> GroundTruthModel:
        d = dict(d)
        dist = d.pop("distortion", None)
        if dist is not None:
            d["distortion"] = Distortion(tuple(map(tuple, dist.get("knots", ((0, 0), (1, 1))))),
                                         float(dist.get("noise", 0.0)))
        return cls(**d)


def load_model(path) -> GroundTruthModel:
    with open(path) as fh:
        return GroundTruthModel.from_dict(json.load(fh))


def true_click_prob(model: GroundTruthModel, impression: Impression, display_position: int) -> float:
    if not 1 <= display_position <= model.n_logged:
        raise ValueError(f"display position {display_position} outside 1..{model.n_logged}")
    p = float(model.relevance(impression.features)) * model.position_factors[display_position - 1]
    return min(1.0, max(0.0, p))


def _block(model: GroundTruthModel, n: int, rng: np.random.Generator):
    n_logged = model.n_logged
    counts = rng.choice(np.arange(1, n_logged + 1), size=n, p=model.results_per_query)
    offsets = np.concatenate(([0], np.cumsum(counts)))
    total = int(offsets[-1])
    qidx = np.repeat(np.arange(n), counts)

    x = rng.random((total, model.feature_dim))
    rel = model.relevance(x)
    noise = model.distortion.noise * (2.0 * rng.random(total) - 1.0)
    score = np.clip(model.distortion(rel) + noise, 0.0, 1.0)

    order = np.lexsort((-score, qidx))
    x, rel, score = x[order], rel[order], score[order]
    pos = np.arange(total) - offsets[qidx]

    hit = rng.random(total) < rel * np.asarray(model.position_factors)[pos]
    hits_before = np.cumsum(hit) - hit
    first = hit & (hits_before == np.repeat(hits_before[offsets[:-1]], counts))
    return counts, x, score, first.astype(np.int8), rel


def generate_logs(model: GroundTruthModel, num_queries: int, seed: int,
                  *, with_relevance: bool = False):
    """Draw ``num_queries`` queries; deterministic in ``(model, num_queries, seed)``.

    Queries are produced in blocks of ``BLOCK_SIZE``, block ``b`` drawing
    from its own generator seeded with ``(seed, b)``.  With
    ``with_relevance`` the per-row true relevance is returned alongside.
    """
    if num_queries < 0:
        raise ValueError("num_queries must be >= 0")
    parts = []
    for b, start in enumerate(range(0, num_queries, BLOCK_SIZE)):
        rng = np.random.default_rng(np.random.SeedSequence([seed, b]))
        parts.append(_block(model, min(BLOCK_SIZE, num_queries - start), rng))
    d = model.feature_dim
    if parts:
        counts = np.concatenate([p[0] for p in parts])
        feats = np.concatenate([p[1] for p in parts])
        scores = np.concatenate([p[2] for p in parts])
        labels = np.concatenate([p[3] for p in parts])
        rel = np.concatenate([p[4] for p in parts])
    else:
        counts = np.zeros(0, dtype=np.int64)
        feats, scores = np.zeros((0, d)), np.zeros(0)
        labels, rel = np.zeros(0, dtype=np.int8), np.zeros(0)
    width = max(6, len(str(max(num_queries - 1, 0))))
    qids = [f"q{i:0{width}d}" for i in range(num_queries)]
    log = QueryLog(qids, np.concatenate(([0], np.cumsum(counts))), labels, scores, feats)
    return (log, rel) if with_relevance else log


def empirical_position_ctr(log: QueryLog, model: GroundTruthModel,
                           relevance: np.ndarray, bins: Sequence[float]) -> np.ndarray:
    """Click rate per (position, relevance bin), conditioning on no click above.

    Used to check the generator against its own click probabilities.
    """
    counts = log.counts
    qidx = log.row_query_index()
    pos = np.arange(log.n_rows) - log.offsets[qidx]
    clicked_before = np.cumsum(log.labels) - log.labels
    clicked_before = clicked_before - np.repeat(clicked_before[log.offsets[:-1]], counts)
    at_risk = clicked_before == 0
    rb = np.digitize(relevance, bins) - 1
    nb = len(bins) - 1
    out = np.full((model.n_logged, nb), np.nan)
    for p in range(model.n_logged):
        for b in range(nb):
            m = at_risk & (pos == p) & (rb == b)
            if m.sum():
                out[p, b] = log.labels[m].mean() / relevance[m].mean()
    return out
