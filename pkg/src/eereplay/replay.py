"""Offline replay of a ranking log through an exploration policy.

The simulated system shows ``k`` results: logged positions ``1..k-1`` as they
were, and at slot ``k`` one of the eligible candidates picked by the policy.
The candidate's logged label is taken as what would have happened had it been
shown at slot ``k``.  That assumption ignores position bias and so can only
under-credit a promoted result; replay CTR estimates for a new policy are
conservative relative to the production baseline.
"""
from __future__ import annotations

import json
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field

import numpy as np

from .bandit import NoExploration, ThompsonState
from .logmodel import QueryLog, QueryRecord, ReplayConfig
from .weighting import WeightingKind, WeightingScheme


class FixedPosition:
    """Always show the logged result from ``position`` at slot k when it is a candidate."""

    name = "fixed"

    def __init__(self, position: int):
        self.position = position

    def __repr__(self):
        return f"FixedPosition({self.position})"


@dataclass(frozen=True)
class ExplorationRecord:
    query_id: str
    chosen_position: int
    chosen_bucket: int
    label: int
    propensity: float
    multinomial_prob: float
    weight: float
    displayed: tuple[tuple[str, int], ...]

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "chosen_position": self.chosen_position,
            "chosen_bucket": self.chosen_bucket,
            "label": self.label,
            "propensity": self.propensity,
            "multinomial_prob": self.multinomial_prob,
            "weight": self.weight,
            "displayed": [list(d) for d in self.displayed],
        }


@dataclass
class ReplaySummary:
    """Outcome of replaying one log with one policy.

    Per-query columns (all indexed like ``log``): ``clicks`` is the replayed
    click, ``slot_rows`` the log row shown at slot k (-1 if the query has
    fewer than k results), ``explored`` marks queries where the policy chose
    the slot-k result, and ``buckets``/``propensity``/``multinomial``/
    ``weights`` describe that choice.
    """

    policy: str
    config: ReplayConfig
    scheme: WeightingScheme
    log: QueryLog
    clicks: np.ndarray
    slot_rows: np.ndarray
    explorable: np.ndarray
    explored: np.ndarray
    buckets: np.ndarray
    propensity: np.ndarray
    multinomial: np.ndarray
    weights: np.ndarray
    histogram: np.ndarray = field(repr=False)

    @property
    def queries_total(self) -> int:
        return len(self.clicks)

    @property
    def queries_explorable(self) -> int:
        return int(self.explorable.sum())

    @property
    def clicks_topk(self) -> int:
        return int(self.clicks.sum())

    @property
    def ctr(self) -> float:
        return self.clicks_topk / self.queries_total if self.queries_total else 0.0

    @property
    def position_histogram(self) -> dict[int, int]:
        cfg = self.config
        return {p: int(self.histogram[p]) for p in range(cfg.k, cfg.last_candidate_position + 1)}

    @property
    def chosen_positions(self) -> np.ndarray:
        """Original log position of the slot-k result for explorable queries."""
        rows = self.slot_rows[self.explorable]
        return rows - self.log.offsets[:-1][self.explorable] + 1

    def iter_records(self) -> Iterator[ExplorationRecord]:
        k = self.config.k
        log = self.log
        offs = log.offsets
        for q in np.flatnonzero(self.explored).tolist():
            lo = int(offs[q])
            row = int(self.slot_rows[q])
            displayed = tuple((log.result_id(lo + j), j + 1) for j in range(k - 1))
            displayed += ((log.result_id(row), k),)
            yield ExplorationRecord(
                query_id=log.query_ids[q],
                chosen_position=row - lo + 1,
                chosen_bucket=int(self.buckets[q]),
                label=int(log.labels[row]),
                propensity=float(self.propensity[q]),
                multinomial_prob=float(self.multinomial[q]),
                weight=float(self.weights[q]),
                displayed=displayed,
            )

    @property
    def exploration_records(self) -> list[ExplorationRecord]:
        return list(self.iter_records())

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "policy": self.policy,
            "config": {f: getattr(cfg, f) for f in cfg.__dataclass_fields__},
            "weighting": {"kind": self.scheme.kind.value, "cap": self.scheme.cap},
            "queries_total": self.queries_total,
            "queries_explorable": self.queries_explorable,
            "clicks_topk": self.clicks_topk,
            "ctr": self.ctr,
            "position_histogram": {str(p): n for p, n in self.position_histogram.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_records(self, out) -> int:
        """Stream exploration records as JSONL to a binary file; returns the count."""
        n = 0
        for rec in self.iter_records():
            out.write((json.dumps(rec.to_dict(), separators=(",", ":")) + "\n").encode("utf-8"))
            n += 1
        return n


def _as_log(records) -> QueryLog:
    return records if isinstance(records, QueryLog) else QueryLog.from_records(records)


def replay_log(records: Iterable[QueryRecord] | QueryLog, cfg: ReplayConfig, policy,
               scheme: WeightingScheme | None = None) -> ReplaySummary:
    """Replay every query in order, updating the policy as clicks come in."""
    log = _as_log(records)
    scheme = scheme or WeightingScheme(WeightingKind.MULTINOMIAL, cfg.weight_cap)
    k = cfg.k
    last = cfg.last_candidate_position
    min_score = cfg.min_score
    cap = scheme.cap
    use_propensity = scheme.kind is WeightingKind.PROPENSITY

    nq = len(log)
    offsets = log.offsets.tolist()
    labels = log.labels.tolist()
    scores = log.scores.tolist()

    clicks = np.zeros(nq, dtype=np.int8)
    slot_rows = np.full(nq, -1, dtype=np.int64)
    explorable = np.zeros(nq, dtype=bool)
    explored = np.zeros(nq, dtype=bool)
    buckets = np.full(nq, -1, dtype=np.int64)
    prop = np.ones(nq)
    mult = np.ones(nq)
    wts = np.ones(nq)
    hist = np.zeros(cfg.n_logged + 1, dtype=np.int64)

    thompson = isinstance(policy, ThompsonState)
    fixed = policy.position if isinstance(policy, FixedPosition) else None
    if not (thompson or fixed is not None or isinstance(policy, NoExploration)):
        raise TypeError(f"unsupported policy {policy!r}")
    if thompson:
        layout = policy.layout
        if layout.k != k or layout.n_logged != cfg.n_logged:
            raise ValueError("policy layout does not match the replay config")
        bucket_index = layout.index
        rng_beta = policy.rng.beta
        alpha, beta = policy.alpha, policy.beta
        succ, fail = policy.successes, policy.failures
        a0, b0, eps = policy.prior.alpha, policy.prior.beta, policy.epsilon

    for q in range(nq):
        lo = offsets[q]
        n = offsets[q + 1] - lo
        top_click = 1 in labels[lo:lo + k - 1]
        if n >= k:
            slot_rows[q] = lo + k - 1
        cands = []
        if n > k:
            stop = lo + min(last, n)
            cands = [r for r in range(lo + k - 1, stop) if scores[r] >= min_score]
        if not cands:
            clicks[q] = top_click or (n >= k and labels[lo + k - 1] == 1)
            continue

        explorable[q] = True
        if thompson:
            seen = {}
            for r in cands:
                b = bucket_index(r - lo + 1, scores[r])
                if b not in seen:
                    seen[b] = r
            active = sorted(seen)
            thetas = [rng_beta(alpha[a], beta[a]) for a in active]
            b = active[max(range(len(thetas)), key=thetas.__getitem__)]
            row = seen[b]
            y = labels[row]
            if y:
                succ[b] += 1
                alpha[b] = a0 + eps * succ[b]
            else:
                fail[b] += 1
                beta[b] = b0 + eps * fail[b]
            pulled = 0
            for a in active:
                pulled += succ[a] + fail[a]
            p_emp = (succ[b] + fail[b]) / pulled
            s_tot = 0.0
            for a in active:
                s_tot += scores[seen[a]]
            p_mult = scores[row] / s_tot if s_tot > 0 else 1.0 / len(active)
            p = p_emp if use_propensity else p_mult
            buckets[q] = b
            prop[q] = p_emp
            mult[q] = p_mult
            wts[q] = min(1.0 / p, cap) if p > 0 else cap
            explored[q] = True
        elif fixed is not None and any(r - lo + 1 == fixed for r in cands):
            row = lo + fixed - 1
            y = labels[row]
        else:
            row = lo + k - 1
            y = labels[row]
        slot_rows[q] = row
        hist[row - lo + 1] += 1
        clicks[q] = top_click or y == 1

    return ReplaySummary(
        policy=getattr(policy, "name", type(policy).__name__),
        config=cfg, scheme=scheme, log=log, clicks=clicks, slot_rows=slot_rows,
        explorable=explorable, explored=explored, buckets=buckets, propensity=prop,
        multinomial=mult, weights=wts, histogram=hist)


def replay_query(q: QueryRecord, cfg: ReplayConfig, policy,
                 scheme: WeightingScheme | None = None):
    """Replay a single query; returns ``(click, record or None, policy)``."""
    summary = replay_log([q], cfg, policy, scheme)
    records = summary.exploration_records
    return int(summary.clicks[0]), (records[0] if records else None), policy


def ctr_lift(policy_summary: ReplaySummary, baseline_summary: ReplaySummary) -> float:
    if policy_summary.queries_total != baseline_summary.queries_total:
        raise ValueError("summaries cover different numbers of queries")
    return policy_summary.ctr - baseline_summary.ctr

