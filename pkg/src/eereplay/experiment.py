"""Size sweep x repetitions x policies: replay, retrain, evaluate, aggregate.

For each dataset size and repetition a query sample is drawn without
replacement from the training log.  Every policy replays that same sample;
its replay gives the CTR during exploration and a weighted training set, and
the ranker trained on that set is scored on the fixed test log.
"""
from __future__ import annotations

import hashlib
import io
import json
import logging
import zlib
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bandit import make_policy
from .logmodel import QueryLog, ReplayConfig, read_log
from .ranker import DEFAULT_LAMBDA, build_training_set, evaluate_ctr, train
from .replay import ctr_lift, replay_log
from .synth import GroundTruthModel, generate_logs, load_model
from .weighting import WeightingScheme

log = logging.getLogger(__name__)

POLICY_KINDS = ("none", "positions", "scores", "scorepos")
POLICY_TITLES = {"none": "No Exploration", "positions": "Positions", "scores": "Scores",
                 "scorepos": "Scores&Positions"}
_SAMPLE_STREAM = 0x5A3


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    epsilon: float = 1.0
    name: str | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")

    @property
    def label(self) -> str:
        return self.name or self.kind

    @property
    def stream_id(self) -> int:
        return zlib.crc32(self.label.encode("utf-8"))


@dataclass(frozen=True)
class LogSource:
    """Either a JSONL file or a synthetic draw from a ground-truth model."""

    path: str | None = None
    model: GroundTruthModel | None = None
    queries: int = 0
    seed: int = 0

    def __post_init__(self):
        if (self.path is None) == (self.model is None):
            raise ValueError("a log source needs exactly one of 'path' or 'model'")

    def load(self) -> QueryLog:
        if self.path is not None:
            return read_log(self.path)
        return generate_logs(self.model, self.queries, self.seed)

    def to_dict(self) -> dict:
        if self.path is not None:
            return {"path": self.path}
        return {"model": self.model.to_dict(), "queries": self.queries, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> LogSource:
        if "path" in d:
            p = Path(d["path"])
            return cls(path=str(p if p.is_absolute() or base is None else base / p))
        model = d.get("model")
        if isinstance(model, str):
            p = Path(model)
            model = load_model(p if p.is_absolute() or base is None else base / p)
        elif isinstance(model, dict):
            model = GroundTruthModel.from_dict(model)
        else:
            raise ValueError("synthetic log source needs a 'model' object or file")
        return cls(model=model, queries=int(d["queries"]), seed=int(d.get("seed", 0)))


@dataclass(frozen=True)
class ExperimentSpec:
    replay: ReplayConfig
    policies: tuple[PolicySpec, ...]
    weighting: WeightingScheme
    dataset_sizes: tuple[int, ...]
    repetitions: int
    train: LogSource
    test: LogSource
    seed: int = 0
    lam: float = DEFAULT_LAMBDA
    score_bins: int = 100

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.dataset_sizes or any(s <= 0 for s in self.dataset_sizes):
            raise ValueError("dataset sizes must be positive")
        if not self.policies:
            raise ValueError("at least one policy is needed")
        labels = [p.label for p in self.policies]
        if len(set(labels)) != len(labels):
            raise ValueError("policy names must be unique")

    @property
    def baseline(self) -> PolicySpec:
        return PolicySpec("none")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "replay": asdict(self.replay),
            "policies": [asdict(p) for p in self.policies],
            "weighting": {"kind": self.weighting.kind.value, "cap": self.weighting.cap},
            "dataset_sizes": list(self.dataset_sizes),
            "repetitions": self.repetitions,
            "lambda": self.lam,
            "score_bins": self.score_bins,
            "train": self.train.to_dict(),
            "test": self.test.to_dict(),
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> ExperimentSpec:
        weighting = WeightingScheme(**d.get("weighting", {}))
        replay = dict(d.get("replay", {}))
        replay.setdefault("weight_cap", weighting.cap)
        replay.setdefault("seed", int(d.get("seed", 0)))
        return cls(
            replay=ReplayConfig(**replay),
            policies=tuple(PolicySpec(**p) for p in d["policies"]),
            weighting=weighting,
            dataset_sizes=tuple(int(s) for s in d["dataset_sizes"]),
            repetitions=int(d.get("repetitions", 1)),
            train=LogSource.from_dict(d["train"], base),
            test=LogSource.from_dict(d["test"], base),
            seed=int(d.get("seed", 0)),
            lam=float(d.get("lambda", DEFAULT_LAMBDA)),
            score_bins=int(d.get("score_bins", 100)),
        )


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    with open(path) as fh:
        return ExperimentSpec.from_dict(json.load(fh), base=path.parent)


def _variance(values: Sequence[float]) -> float:
    return float(np.var(values, ddof=1)) if len(values) > 1 else 0.0


@dataclass
class Cell:
    """Per-repetition results for one (policy, dataset size)."""

    policy: str
    size: int
    test_ctr: list[float] = field(default_factory=list)
    replay_ctr: list[float] = field(default_factory=list)
    lift: list[float] = field(default_factory=list)
    histograms: list[dict[int, int]] = field(default_factory=list)
    explorable: list[int] = field(default_factory=list)
    sample_hashes: list[str] = field(default_factory=list)

    @property
    def test_ctr_mean(self) -> float:
        return float(np.mean(self.test_ctr))

    @property
    def test_ctr_var(self) -> float:
        return _variance(self.test_ctr)

    @property
    def lift_mean(self) -> float:
        return float(np.mean(self.lift))

    @property
    def lift_var(self) -> float:
        return _variance(self.lift)

    @property
    def positions(self) -> list[int]:
        return sorted({p for h in self.histograms for p in h})

    def histogram_mean(self) -> dict[int, float]:
        return {p: float(np.mean([h.get(p, 0) for h in self.histograms])) for p in self.positions}

    def histogram_var(self) -> dict[int, float]:
        return {p: _variance([h.get(p, 0) for h in self.histograms]) for p in self.positions}

    def to_dict(self) -> dict:
        return {
            "policy": self.policy, "size": self.size,
            "test_ctr": self.test_ctr, "replay_ctr": self.replay_ctr, "lift": self.lift,
            "histograms": [{str(p): n for p, n in h.items()} for h in self.histograms],
            "explorable": self.explorable, "sample_hashes": self.sample_hashes,
            "test_ctr_mean": self.test_ctr_mean, "test_ctr_var": self.test_ctr_var,
            "lift_mean": self.lift_mean, "lift_var": self.lift_var,
            "histogram_mean": {str(p): v for p, v in self.histogram_mean().items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> Cell:
        return cls(d["policy"], int(d["size"]), list(d["test_ctr"]), list(d["replay_ctr"]),
                   list(d["lift"]),
                   [{int(p): int(n) for p, n in h.items()} for h in d["histograms"]],
                   list(d["explorable"]), list(d["sample_hashes"]))


@dataclass
class ExperimentReport:
    cells: list[Cell] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def cell(self, policy: str, size: int) -> Cell:
        for c in self.cells:
            if c.policy == policy and c.size == size:
                return c
        raise KeyError((policy, size))

    @property
    def policies(self) -> list[str]:
        return list(dict.fromkeys(c.policy for c in self.cells))

    @property
    def sizes(self) -> list[int]:
        return sorted({c.size for c in self.cells})

    def to_dict(self) -> dict:
        return {"metadata": self.metadata, "cells": [c.to_dict() for c in self.cells]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentReport:
        return cls([Cell.from_dict(c) for c in d.get("cells", [])], dict(d.get("metadata", {})))


def sample_hash(indices: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(indices, dtype=np.int64).tobytes()).hexdigest()[:16]


def draw_sample(n_available: int, size: int, seed: int, rep: int) -> np.ndarray:
    """Sorted query indices drawn uniformly without replacement.

    Sorting keeps the replay in log order.
    """
    if size > n_available:
        raise ValueError(f"dataset has {n_available} queries, {size} requested")
    ss = np.random.SeedSequence(seed, spawn_key=(_SAMPLE_STREAM, size, rep))
    return np.sort(np.random.default_rng(ss).choice(n_available, size, replace=False))


def run(spec: ExperimentSpec, *, train_log: QueryLog | None = None,
        test_log: QueryLog | None = None, records_dir: str | Path | None = None) -> ExperimentReport:
    """Run the whole protocol; deterministic given ``spec``.

    With ``records_dir`` the exploration records of repetition 0 are written
    there as ``<policy>_<size>.jsonl``.
    """
    train_log = train_log if train_log is not None else spec.train.load()
    test_log = test_log if test_log is not None else spec.test.load()
    cfg = spec.replay
    baseline = spec.baseline
    policies = [baseline] + [p for p in spec.policies if p.label != baseline.label]
    if records_dir is not None:
        records_dir = Path(records_dir)
        records_dir.mkdir(parents=True, exist_ok=True)

    cells = {(p.label, s): Cell(p.label, s) for s in spec.dataset_sizes for p in spec.policies}
    hashes = {}
    for size in spec.dataset_sizes:
        for rep in range(spec.repetitions):
            idx = draw_sample(len(train_log), size, spec.seed, rep)
            h = sample_hash(idx)
            hashes[f"{size}/{rep}"] = h
            sample = train_log.take(idx)
            base_summary = None
            for pol in policies:
                ss = np.random.SeedSequence(spec.seed, spawn_key=(pol.stream_id, size, rep))
                policy = make_policy(pol.kind, cfg.k, cfg.n_logged, pol.epsilon, ss, spec.score_bins)
                summary = replay_log(sample, cfg, policy, spec.weighting)
                if base_summary is None:
                    base_summary = summary
                if (pol.label, size) not in cells:
                    continue
                model = train(build_training_set(summary), spec.lam)
                cell = cells[(pol.label, size)]
                cell.test_ctr.append(evaluate_ctr(model, test_log, cfg.k))
                cell.replay_ctr.append(summary.ctr)
                cell.lift.append(ctr_lift(summary, base_summary))
                cell.histograms.append(summary.position_histogram)
                cell.explorable.append(summary.queries_explorable)
                cell.sample_hashes.append(h)
                if records_dir is not None and rep == 0 and pol.kind != "none":
                    with open(records_dir / f"{pol.label}_{size}.jsonl", "wb") as fh:
                        summary.write_records(fh)
            log.info("size %d rep %d done", size, rep)

    meta = {
        "seed": spec.seed,
        "config_hash": spec.config_hash(),
        "sample_hashes": hashes,
        "train_queries": len(train_log),
        "test_queries": len(test_log),
        "k": cfg.k,
        "weighting": spec.weighting.kind.value,
        "policies": {p.label: {"kind": p.kind, "epsilon": p.epsilon} for p in spec.policies},
        "notes": ("Counterfactual labels reuse the logged label of the promoted result; "
                  "replay lifts are conservative estimates. Synthetic score distortion "
                  "is a modelling choice."),
    }
    return ExperimentReport([cells[(p.label, s)] for s in spec.dataset_sizes for p in spec.policies],
                            meta)


# ---------------------------------------------------------------------------
# Rendering

CSV_HEADER = "policy,size,metric,mean,variance\n"


def _fmt(x: float) -> str:
    return repr(float(x))


def report_csv(report: ExperimentReport) -> bytes:
    out = io.StringIO()
    out.write(CSV_HEADER)
    for c in report.cells:
        out.write(f"{c.policy},{c.size},test_ctr,{_fmt(c.test_ctr_mean)},{_fmt(c.test_ctr_var)}\n")
        out.write(f"{c.policy},{c.size},ctr_lift,{_fmt(c.lift_mean)},{_fmt(c.lift_var)}\n")
        hm, hv = c.histogram_mean(), c.histogram_var()
        mean = ";".join(f"{p}:{_fmt(v)}" for p, v in hm.items())
        var = ";".join(f"{p}:{_fmt(v)}" for p, v in hv.items())
        out.write(f"{c.policy},{c.size},position_histogram,{mean},{var}\n")
    return out.getvalue().encode("utf-8")


def _title(label: str, report: ExperimentReport) -> str:
    kind = report.metadata.get("policies", {}).get(label, {}).get("kind", label)
    return POLICY_TITLES.get(kind, label) if kind == label else f"{POLICY_TITLES.get(kind, kind)} ({label})"


def _svg_bytes(fig) -> bytes:
    import matplotlib.pyplot as plt

    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def report_svg(report: ExperimentReport) -> dict[str, bytes]:
    """Render the three figure families; returns ``{filename: svg bytes}``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    policies, sizes = report.policies, report.sizes
    k = report.metadata.get("k", "?")
    out = {}
    with plt.rc_context({"svg.hashsalt": "eereplay", "svg.fonttype": "none",
                         "font.size": 9, "figure.dpi": 72}):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        width = 0.8 / max(len(policies), 1)
        x = np.arange(len(sizes))
        for i, pol in enumerate(policies):
            cells = [report.cell(pol, s) for s in sizes]
            ax.bar(x + i * width, [c.test_ctr_mean for c in cells], width,
                   yerr=[np.sqrt(c.test_ctr_var) for c in cells], capsize=2,
                   label=_title(pol, report))
        ax.set_xticks(x + width * (len(policies) - 1) / 2, [f"{s:,}" for s in sizes])
        ax.set_xlabel("training queries")
        ax.set_ylabel("test CTR")
        ax.set_title(f"Model improvement, k={k}")
        if sizes:
            lo = min(report.cell(p, s).test_ctr_mean for p in policies for s in sizes)
            hi = max(report.cell(p, s).test_ctr_mean for p in policies for s in sizes)
            pad = max(hi - lo, 1e-3)
            ax.set_ylim(lo - pad, hi + pad)
        ax.legend(fontsize=7)
        out["model_improvement.svg"] = _svg_bytes(fig)

        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for pol in policies:
            cells = [report.cell(pol, s) for s in sizes]
            ax.errorbar(sizes, [100 * c.lift_mean for c in cells],
                        yerr=[100 * np.sqrt(c.lift_var) for c in cells],
                        marker="o", capsize=2, label=_title(pol, report))
        ax.axhline(0.0, color="black", linewidth=0.6)
        if sizes:
            ax.set_xscale("log")
        ax.set_xlabel("training queries")
        ax.set_ylabel("CTR lift during exploration (%)")
        ax.set_title(f"CTR lift vs No Exploration, k={k}")
        ax.legend(fontsize=7)
        out["ctr_lift.svg"] = _svg_bytes(fig)

        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        bars = [(p, s) for p in policies for s in sizes]
        positions = sorted({q for p, s in bars for q in report.cell(p, s).positions})
        bottom = np.zeros(len(bars))
        for q in positions:
            vals = np.array([report.cell(p, s).histogram_mean().get(q, 0.0) for p, s in bars])
            tot = np.array([max(sum(report.cell(p, s).histogram_mean().values()), 1e-12)
                            for p, s in bars])
            share = vals / tot
            ax.bar(np.arange(len(bars)), share, bottom=bottom, label=f"i={q}")
            bottom += share
        ax.set_xticks(np.arange(len(bars)), [f"{_title(p, report)}\n{s:,}" for p, s in bars],
                      rotation=90, fontsize=6)
        ax.set_ylabel("share of explored examples")
        ax.set_title(f"Examples explored from each position, k={k}")
        ax.legend(fontsize=7)
        fig.tight_layout()
        out["exploration_positions.svg"] = _svg_bytes(fig)
    return out


def write_results(report: ExperimentReport, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    (out_dir / "figures").mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json())
    (out_dir / "report.csv").write_bytes(report_csv(report))
    for name, data in report_svg(report).items():
        (out_dir / "figures" / name).write_bytes(data)
