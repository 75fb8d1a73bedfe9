"""Ranking log data model, JSONL serialization and replay eligibility.

A log is a sequence of :class:`QueryRecord`, one per query, each holding the
ranked suggestions the production system showed (position, click label,
ranking score, result id and feature vector).  For bulk work the same data is
held column-wise in :class:`QueryLog`, which is itself a sequence of records.
"""
from __future__ import annotations

import json
import math
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from typing import IO, Union, overload

import numpy as np

Stream = Union[IO[bytes], IO[str], Iterable[bytes], Iterable[str]]


class LogFormatError(ValueError):
    """A log line could not be turned into a valid record."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


@dataclass(frozen=True, slots=True)
class Impression:
    position: int
    label: int
    score: float
    result_id: str
    features: tuple[float, ...]
    clamped: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self):
        if self.position < 1:
            raise ValueError(f"position must be >= 1, got {self.position}")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score outside [0, 1]: {self.score}")


def make_impression(position: int, label: int, score: float, result_id: str,
                    features: Iterable[float]) -> Impression:
    """Build an impression, clamping an out-of-range score into [0, 1]."""
    score = float(score)
    if math.isnan(score):
        raise ValueError("score is NaN")
    clamped = not 0.0 <= score <= 1.0
    if clamped:
        score = min(1.0, max(0.0, score))
    return Impression(int(position), int(label), score, str(result_id),
                      tuple(float(f) for f in features), clamped)


@dataclass(frozen=True, slots=True)
class QueryRecord:
    query_id: str
    impressions: tuple[Impression, ...]

    def __post_init__(self):
        if not isinstance(self.impressions, tuple):
            object.__setattr__(self, "impressions", tuple(self.impressions))
        for expected, imp in enumerate(self.impressions, start=1):
            if imp.position != expected:
                raise ValueError(
                    f"query {self.query_id}: positions must run 1..n without gaps")
        if sum(imp.label for imp in self.impressions) > 1:
            raise ValueError(f"query {self.query_id}: more than one click")
        if self.impressions:
            dim = len(self.impressions[0].features)
            if any(len(imp.features) != dim for imp in self.impressions):
                raise ValueError(f"query {self.query_id}: ragged feature vectors")

    def __len__(self) -> int:
        return len(self.impressions)

    @property
    def clicked_position(self) -> int | None:
        for imp in self.impressions:
            if imp.label:
                return imp.position
        return None

    def is_score_sorted(self) -> bool:
        scores = [imp.score for imp in self.impressions]
        return all(a >= b for a, b in zip(scores, scores[1:]))


@dataclass(frozen=True)
class ReplayConfig:
    """Knobs of the offline replay.

    ``k`` results are displayed, the last slot being open to exploration.
    Candidates for that slot are the logged results at positions
    ``k .. min(n_logged, k + window)`` whose score is at least ``min_score``.
    """

    k: int = 2
    n_logged: int = 5
    window: int = 4
    min_score: float = 0.0
    epsilon: float = 1.0
    weight_cap: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.k < self.n_logged:
            raise ValueError(f"need 1 <= k < n_logged, got k={self.k}, n_logged={self.n_logged}")
        if self.window < 0:
            raise ValueError("window must be >= 0")
        if not 0.0 <= self.min_score <= 1.0:
            raise ValueError("min_score must lie in [0, 1]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not self.weight_cap >= 1:
            raise ValueError("weight_cap must be >= 1")

    @property
    def last_candidate_position(self) -> int:
        return min(self.n_logged, self.k + self.window)


@dataclass
class ParseStats:
    records: int = 0
    clamped: int = 0
    order_violations: list[str] = field(default_factory=list)
    rejected: list[LogFormatError] = field(default_factory=list)


def eligible_candidates(q: QueryRecord, cfg: ReplayConfig) -> list[Impression]:
    """Logged results that may be shown at slot k; empty means pass-through."""
    if len(q.impressions) <= cfg.k:
        return []
    last = min(cfg.last_candidate_position, len(q.impressions))
    return [imp for imp in q.impressions[cfg.k - 1:last] if imp.score >= cfg.min_score]


# ---------------------------------------------------------------------------
# JSONL reading / writing


def _lines(stream: Stream) -> Iterator[str]:
    for raw in stream:
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        yield raw


def _record_from_obj(obj, lineno: int, stats: ParseStats,
                     dim: int | None) -> QueryRecord:
    if not isinstance(obj, dict):
        raise LogFormatError(lineno, "record is not a JSON object")
    try:
        qid = obj["query_id"]
        raw_imps = obj["impressions"]
    except KeyError as exc:
        raise LogFormatError(lineno, f"missing field {exc.args[0]!r}") from None
    if not isinstance(qid, str):
        raise LogFormatError(lineno, "query_id must be a string")
    if not isinstance(raw_imps, list):
        raise LogFormatError(lineno, "impressions must be an array")
    imps = []
    try:
        for item in raw_imps:
            label = item["label"]
            if label not in (0, 1) or isinstance(label, bool):
                raise LogFormatError(lineno, f"label must be 0 or 1, got {label!r}")
            position = item["position"]
            if not isinstance(position, int) or isinstance(position, bool):
                raise LogFormatError(lineno, f"position must be an integer, got {position!r}")
            imps.append(make_impression(position, label, item["score"],
                                        item["result_id"], item["features"]))
    except KeyError as exc:
        raise LogFormatError(lineno, f"impression missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, LogFormatError):
            raise
        raise LogFormatError(lineno, f"bad impression: {exc}") from None

    imps.sort(key=lambda imp: imp.position)
    positions = [imp.position for imp in imps]
    if len(set(positions)) != len(positions):
        raise LogFormatError(lineno, "duplicate positions")
    if positions != list(range(1, len(imps) + 1)):
        raise LogFormatError(lineno, "positions must run 1..n without gaps")
    if sum(imp.label for imp in imps) > 1:
        raise LogFormatError(lineno, "multiple clicks in one query")
    for imp in imps:
        if dim is not None and len(imp.features) != dim:
            raise LogFormatError(
                lineno, f"feature dimension {len(imp.features)} != declared {dim}")
    if imps and dim is None and len({len(imp.features) for imp in imps}) > 1:
        raise LogFormatError(lineno, "ragged feature vectors")

    rec = QueryRecord(qid, tuple(imps))
    stats.clamped += sum(imp.clamped for imp in imps)
    if not rec.is_score_sorted():
        stats.order_violations.append(qid)
    return rec


def iter_log(stream: Stream, *, strict: bool = True,
             stats: ParseStats | None = None,
             feature_dim: int | None = None) -> Iterator[QueryRecord]:
    """Yield validated records from a JSONL stream in input order.

    With ``strict`` a bad line raises :class:`LogFormatError`; otherwise it
    is skipped and appended to ``stats.rejected``.  The feature dimension is
    fixed by ``feature_dim`` or else by the first non-empty record.
    """
    stats = stats if stats is not None else ParseStats()
    dim = feature_dim
    for lineno, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        try:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogFormatError(lineno, f"malformed JSON: {exc.msg}") from None
            rec = _record_from_obj(obj, lineno, stats, dim)
        except LogFormatError as err:
            if strict:
                raise
            stats.rejected.append(err)
            continue
        if dim is None and rec.impressions:
            dim = len(rec.impressions[0].features)
        stats.records += 1
        yield rec


def parse_log(stream: Stream, *, strict: bool = True,
              stats: ParseStats | None = None,
              feature_dim: int | None = None) -> list[QueryRecord]:
    return list(iter_log(stream, strict=strict, stats=stats, feature_dim=feature_dim))


def _dump_line(query_id: str, imps: Iterable[tuple]) -> str:
    obj = {
        "query_id": query_id,
        "impressions": [
            {"position": p, "label": y, "score": s, "result_id": r, "features": f}
            for p, y, s, r, f in imps
        ],
    }
    return json.dumps(obj, separators=(",", ":")) + "\n"


def iter_log_lines(records: Iterable[QueryRecord]) -> Iterator[str]:
    if isinstance(records, QueryLog):
        yield from records._iter_lines()
        return
    for rec in records:
        yield _dump_line(rec.query_id, (
            (imp.position, imp.label, imp.score, imp.result_id, list(imp.features))
            for imp in rec.impressions))


def write_log(records: Iterable[QueryRecord], out: IO[bytes] | None = None) -> bytes:
    """Serialize records as JSONL.  Writes to ``out`` if given, else returns bytes."""
    if out is None:
        return "".join(iter_log_lines(records)).encode("utf-8")
    for line in iter_log_lines(records):
        out.write(line.encode("utf-8"))
    return b""


# ---------------------------------------------------------------------------
# Columnar container


class QueryLog(Sequence[QueryRecord]):
    """Column-wise storage for many queries.

    Query ``q`` owns rows ``offsets[q]:offsets[q+1]``; row ``j`` within a
    query has position ``j + 1``.  ``result_ids`` may be ``None``, in which
    case ids are derived as ``"<query_id>/<position>"``.
    """

    def __init__(self, query_ids: Sequence[str], offsets: np.ndarray,
                 labels: np.ndarray, scores: np.ndarray, features: np.ndarray,
                 result_ids: Sequence[str] | None = None):
        self.query_ids = list(query_ids)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.int8)
        self.scores = np.asarray(scores, dtype=np.float64)
        self.features = np.asarray(features, dtype=np.float64)
        self.result_ids = None if result_ids is None else list(result_ids)
        n_rows = int(self.offsets[-1]) if len(self.offsets) else 0
        if len(self.offsets) != len(self.query_ids) + 1 or self.offsets[0] != 0:
            raise ValueError("offsets must have one entry per query plus a leading 0")
        if np.any(np.diff(self.offsets) < 0):
            raise ValueError("offsets must be non-decreasing")
        if self.labels.shape != (n_rows,) or self.scores.shape != (n_rows,):
            raise ValueError("labels/scores length must match offsets")
        if self.features.ndim != 2 or self.features.shape[0] != n_rows:
            raise ValueError("features must be a (rows, dim) array")
        if self.result_ids is not None and len(self.result_ids) != n_rows:
            raise ValueError("result_ids length must match offsets")

    @classmethod
    def from_records(cls, records: Iterable[QueryRecord],
                     feature_dim: int | None = None) -> QueryLog:
        if isinstance(records, QueryLog):
            return records
        qids, offsets, labels, scores, feats, rids = [], [0], [], [], [], []
        for rec in records:
            qids.append(rec.query_id)
            for imp in rec.impressions:
                labels.append(imp.label)
                scores.append(imp.score)
                feats.append(imp.features)
                rids.append(imp.result_id)
            offsets.append(len(labels))
        if feats:
            dim = len(feats[0])
            if feature_dim is not None and dim != feature_dim:
                raise ValueError(f"feature dimension {dim} != {feature_dim}")
            try:
                features = np.array(feats, dtype=np.float64).reshape(len(feats), dim)
            except ValueError:
                raise ValueError("records disagree on feature dimension") from None
        else:
            features = np.zeros((0, feature_dim or 0))
        return cls(qids, np.array(offsets), np.array(labels, dtype=np.int8),
                   np.array(scores, dtype=np.float64), features, rids)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def n_rows(self) -> int:
        return int(self.offsets[-1])

    def result_id(self, row: int) -> str:
        if self.result_ids is not None:
            return self.result_ids[row]
        q = int(np.searchsorted(self.offsets, row, side="right")) - 1
        return f"{self.query_ids[q]}/{row - int(self.offsets[q]) + 1}"

    def row_query_index(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.query_ids)), self.counts)

    def __len__(self) -> int:
        return len(self.query_ids)

    @overload
    def __getitem__(self, i: int) -> QueryRecord: ...
    @overload
    def __getitem__(self, i: slice) -> QueryLog: ...

    def __getitem__(self, i):
        if isinstance(i, slice):
            return self.take(np.arange(len(self))[i])
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        lo, hi = int(self.offsets[i]), int(self.offsets[i + 1])
        qid = self.query_ids[i]
        imps = tuple(
            Impression(j - lo + 1, int(self.labels[j]), float(self.scores[j]),
                       self.result_ids[j] if self.result_ids is not None else f"{qid}/{j - lo + 1}",
                       tuple(self.features[j].tolist()))
            for j in range(lo, hi))
        return QueryRecord(qid, imps)

    def __iter__(self) -> Iterator[QueryRecord]:
        for i in range(len(self)):
            yield self[i]

    def take(self, indices: Sequence[int] | np.ndarray) -> QueryLog:
        """Sub-log with the given queries, in the given order."""
        idx = np.asarray(indices, dtype=np.int64)
        counts = self.counts[idx]
        offsets = np.concatenate(([0], np.cumsum(counts)))
        starts = self.offsets[idx]
        rows = (np.repeat(starts - offsets[:-1], counts) + np.arange(offsets[-1])
                if len(idx) else np.zeros(0, dtype=np.int64))
        rids = None if self.result_ids is None else [self.result_ids[r] for r in rows]
        qids = [self.query_ids[i] for i in idx]
        return QueryLog(qids, offsets, self.labels[rows], self.scores[rows],
                        self.features[rows], rids)

    def _iter_lines(self) -> Iterator[str]:
        feats = self.features.tolist()
        scores = self.scores.tolist()
        labels = self.labels.tolist()
        offs = self.offsets.tolist()
        for q, qid in enumerate(self.query_ids):
            lo, hi = offs[q], offs[q + 1]
            yield _dump_line(qid, (
                (j - lo + 1, labels[j], scores[j],
                 self.result_ids[j] if self.result_ids is not None else f"{qid}/{j - lo + 1}",
                 feats[j])
                for j in range(lo, hi)))


def read_log(path, *, strict: bool = True, stats: ParseStats | None = None) -> QueryLog:
    with open(path, "rb") as fh:
        return QueryLog.from_records(iter_log(fh, strict=strict, stats=stats))


def write_log_file(records: Iterable[QueryRecord], path) -> None:
    with open(path, "wb") as fh:
        write_log(records, fh)
