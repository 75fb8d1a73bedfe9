"""Point-wise linear ranker trained by weighted ridge regression."""
from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .logmodel import QueryLog, QueryRecord, ReplayConfig
from .replay import ReplaySummary
from .weighting import WeightingKind, WeightingScheme

DEFAULT_LAMBDA = 1e-6


@dataclass(frozen=True)
class TrainingExample:
    features: tuple[float, ...]
    label: int
    weight: float = 1.0

    def to_dict(self) -> dict:
        return {"features": list(self.features), "label": self.label, "weight": self.weight}


@dataclass
class TrainingSet:
    """Column-wise training data: features ``X``, targets ``y``, weights ``w``."""

    X: np.ndarray
    y: np.ndarray
    w: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def __iter__(self):
        for x, y, w in zip(self.X.tolist(), self.y.tolist(), self.w.tolist()):
            yield TrainingExample(tuple(x), int(y), w)

    @classmethod
    def from_examples(cls, examples: Iterable[TrainingExample]) -> TrainingSet:
        examples = list(examples)
        if not examples:
            raise ValueError("no training examples")
        dims = {len(e.features) for e in examples}
        if len(dims) != 1:
            raise ValueError("training examples disagree on feature dimension")
        return cls(np.array([e.features for e in examples], dtype=np.float64),
                   np.array([e.label for e in examples], dtype=np.float64),
                   np.array([e.weight for e in examples], dtype=np.float64))

    def write_jsonl(self, out) -> None:
        for ex in self:
            out.write((json.dumps(ex.to_dict(), separators=(",", ":")) + "\n").encode("utf-8"))

    @classmethod
    def read_jsonl(cls, stream) -> TrainingSet:
        examples = []
        for lineno, line in enumerate(stream, start=1):
            if isinstance(line, bytes):
                line = line.decode("utf-8")
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                examples.append(TrainingExample(tuple(map(float, d["features"])),
                                                int(d["label"]), float(d.get("weight", 1.0))))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"line {lineno}: bad training example ({exc})") from None
        return cls.from_examples(examples)


@dataclass(frozen=True)
class RankerModel:
    coefficients: tuple[float, ...]
    intercept: float
    lam: float = DEFAULT_LAMBDA

    @property
    def feature_dim(self) -> int:
        return len(self.coefficients)

    def to_dict(self) -> dict:
        return {"coefficients": list(self.coefficients), "intercept": self.intercept,
                "lambda": self.lam, "feature_dim": self.feature_dim}

    @classmethod
    def from_dict(cls, d: dict) -> RankerModel:
        coef = tuple(float(c) for c in d["coefficients"])
        if "feature_dim" in d and d["feature_dim"] != len(coef):
            raise ValueError("feature_dim does not match the coefficient vector")
        return cls(coef, float(d["intercept"]), float(d.get("lambda", DEFAULT_LAMBDA)))


def train(examples: TrainingSet | Iterable[TrainingExample], lam: float = DEFAULT_LAMBDA) -> RankerModel:
    """Minimise ``sum w (y - b - x.c)^2 + lam * |c|^2``; the intercept ``b`` is not penalised."""
    data = examples if isinstance(examples, TrainingSet) else TrainingSet.from_examples(examples)
    X, y, w = data.X, data.y, data.w
    if len(y) == 0:
        raise ValueError("no training examples")
    if X.ndim != 2 or X.shape[0] != len(y) or len(w) != len(y):
        raise ValueError("features, labels and weights disagree in length")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("all training weights are zero")

    x_bar = w @ X / total
    y_bar = w @ y / total
    Xc = X - x_bar
    A = Xc.T @ (w[:, None] * Xc) + lam * np.eye(X.shape[1])
    rhs = Xc.T @ (w * (y - y_bar))
    try:
        coef = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        coef = np.linalg.lstsq(A, rhs, rcond=None)[0]
    intercept = float(y_bar - x_bar @ coef)
    if not (np.all(np.isfinite(coef)) and np.isfinite(intercept)):
        raise ValueError("training produced non-finite coefficients")
    return RankerModel(tuple(coef.tolist()), intercept, float(lam))


def predict(model: RankerModel, features) -> float | np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != model.feature_dim:
        raise ValueError(f"expected {model.feature_dim} features, got {x.shape[-1]}")
    out = x @ np.asarray(model.coefficients) + model.intercept
    return float(out) if out.ndim == 0 else out


def rerank_positions(scores: np.ndarray, log: QueryLog) -> np.ndarray:
    """For every row, its 0-based rank within its query when sorted by ``scores``.

    Descending score; equal scores keep their logged order.
    """
    qidx = log.row_query_index()
    order = np.lexsort((np.arange(log.n_rows), -scores, qidx))
    ranks = np.empty(log.n_rows, dtype=np.int64)
    ranks[order] = np.arange(log.n_rows) - log.offsets[qidx[order]]
    return ranks


def evaluate_ctr(model: RankerModel, test_logs: Sequence[QueryRecord] | QueryLog, k: int) -> float:
    """Fraction of queries whose clicked result lands in the model's top ``k``."""
    log = test_logs if isinstance(test_logs, QueryLog) else QueryLog.from_records(test_logs)
    if len(log) == 0:
        return 0.0
    ranks = rerank_positions(np.asarray(predict(model, log.features)).reshape(-1), log)
    hits = (log.labels == 1) & (ranks < k)
    return float(hits.sum()) / len(log)


def build_training_set(source: ReplaySummary | QueryLog | Iterable[QueryRecord],
                       cfg: ReplayConfig | None = None,
                       scheme: WeightingScheme | None = None) -> TrainingSet:
    """Training rows as a scaled-down system with ``k`` slots would have logged them.

    From a plain log (no exploration): the top ``k`` rows of each query at
    weight 1.  From a replay: rows ``1..k-1`` at weight 1 plus the row shown
    at slot ``k``, weighted by ``scheme`` when the policy explored there.
    ``scheme`` defaults to the one the replay ran with.
    """
    if isinstance(source, ReplaySummary):
        log = source.log
        k = source.config.k
        slot_rows = source.slot_rows
        explored = source.explored
        scheme = scheme or source.scheme
        if scheme == source.scheme:
            slot_w = source.weights
        else:
            p = source.propensity if scheme.kind is WeightingKind.PROPENSITY else source.multinomial
            slot_w = np.full(len(p), scheme.cap)
            ok = p > 0
            slot_w[ok] = np.minimum(1.0 / p[ok], scheme.cap)
        slot_w = np.where(explored, slot_w, 1.0)
    else:
        if cfg is None:
            raise ValueError("a replay config is needed to build from a plain log")
        log = source if isinstance(source, QueryLog) else QueryLog.from_records(source)
        k = cfg.k
        slot_rows = np.where(log.counts >= k, log.offsets[:-1] + k - 1, -1)
        slot_w = np.ones(len(log))

    qidx = log.row_query_index()
    pos = np.arange(log.n_rows) - log.offsets[qidx]
    head = np.flatnonzero(pos < k - 1)
    has_slot = slot_rows >= 0
    rows = np.concatenate([head, slot_rows[has_slot]])
    weights = np.concatenate([np.ones(len(head)), slot_w[has_slot]])
    # keep rows grouped by query, slot row last
    key = np.concatenate([qidx[head], np.flatnonzero(has_slot)])
    order = np.argsort(key, kind="stable")
    rows, weights = rows[order], weights[order]
    return TrainingSet(log.features[rows], log.labels[rows].astype(np.float64), weights)
