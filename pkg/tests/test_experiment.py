import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from eereplay.experiment import (Cell, ExperimentReport, ExperimentSpec, draw_sample, load_spec,
                                 report_csv, report_svg, run, sample_hash, write_results)

MODEL = {"relevance_weights": [0.6, 0.4],
         "distortion": {"knots": [[0, 0.1], [1, 0.9]], "noise": 0.1}}


def spec_dict(policies=({"kind": "none"},), sizes=(100,), reps=2):
    return {"seed": 5, "replay": {"k": 2}, "policies": list(policies),
            "weighting": {"kind": "multinomial", "cap": 10},
            "dataset_sizes": list(sizes), "repetitions": reps,
            "train": {"model": MODEL, "queries": 400, "seed": 1},
            "test": {"model": MODEL, "queries": 300, "seed": 2}}


def test_small_spec_is_reproducible():
    spec = ExperimentSpec.from_dict(spec_dict())
    a, b = run(spec), run(spec)
    assert len(a.cells) == 1
    c = a.cells[0]
    assert c.test_ctr_var >= 0 and c.lift == [0.0, 0.0]
    assert a.to_json() == b.to_json()
    assert report_csv(a) == report_csv(b)


def test_cells_and_hashes():
    policies = [{"kind": "none"}, {"kind": "positions", "epsilon": 0.01}, {"kind": "scores"},
                {"kind": "scorepos"}]
    report = run(ExperimentSpec.from_dict(spec_dict(policies, sizes=(50, 200), reps=3)))
    assert report.policies == ["none", "positions", "scores", "scorepos"]
    assert report.sizes == [50, 200]
    for size in (50, 200):
        hashes = {tuple(report.cell(p, size).sample_hashes) for p in report.policies}
        assert len(hashes) == 1
        for p in report.policies:
            c = report.cell(p, size)
            assert c.lift_var >= 0 and all(v >= 0 for v in c.histogram_var().values())
            for h, n in zip(c.histograms, c.explorable):
                assert sum(h.values()) == n
    back = ExperimentReport.from_dict(json.loads(report.to_json()))
    assert back.to_json() == report.to_json()


def test_draw_sample():
    a = draw_sample(1000, 100, seed=1, rep=0)
    assert np.array_equal(a, draw_sample(1000, 100, seed=1, rep=0))
    assert len(set(a.tolist())) == 100 and np.all(np.diff(a) > 0)
    assert sample_hash(a) != sample_hash(draw_sample(1000, 100, seed=1, rep=1))
    with pytest.raises(ValueError):
        draw_sample(10, 11, 0, 0)


@pytest.mark.parametrize("kw", [dict(reps=0), dict(sizes=()), dict(sizes=(0,)),
                                dict(policies=({"kind": "bogus"},)),
                                dict(policies=({"kind": "scores"}, {"kind": "scores"}))])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        ExperimentSpec.from_dict(spec_dict(**kw))


def test_spec_file_resolves_relative_model(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps(MODEL))
    d = spec_dict()
    d["train"]["model"] = "m.json"
    (tmp_path / "s.json").write_text(json.dumps(d))
    spec = load_spec(tmp_path / "s.json")
    assert spec.train.model.relevance_weights == (0.6, 0.4)
    assert len(spec.config_hash()) == 64


def test_csv_shapes():
    empty = ExperimentReport([], {})
    assert report_csv(empty) == b"policy,size,metric,mean,variance\n"
    cell = Cell("scores", 100, test_ctr=[0.5, 0.7], replay_ctr=[0.4, 0.4], lift=[0.01, 0.03],
                histograms=[{2: 3, 3: 1}, {2: 1, 3: 3}], explorable=[4, 4], sample_hashes=["a", "b"])
    lines = report_csv(ExperimentReport([cell], {})).decode().splitlines()
    assert len(lines) == 4
    assert [l.split(",")[2] for l in lines[1:]] == ["test_ctr", "ctr_lift", "position_histogram"]
    assert float(lines[1].split(",")[3]) == pytest.approx(0.6)
    assert float(lines[1].split(",")[4]) == pytest.approx(0.02)
    assert lines[3].split(",")[3] == "2:2.0;3:2.0"


def test_svg_well_formed_and_stable(tmp_path):
    policies = [{"kind": "none"}, {"kind": "scores"}]
    report = run(ExperimentSpec.from_dict(spec_dict(policies, sizes=(50, 100))))
    svgs = report_svg(report)
    assert set(svgs) == {"model_improvement.svg", "ctr_lift.svg", "exploration_positions.svg"}
    for data in svgs.values():
        assert ET.fromstring(data).tag.endswith("svg")
    assert report_svg(report) == svgs
    write_results(report, tmp_path)
    assert (tmp_path / "report.json").exists() and (tmp_path / "report.csv").exists()
    assert sorted(p.name for p in (tmp_path / "figures").iterdir()) == sorted(svgs)


def test_records_written_for_exploring_policies(tmp_path):
    spec = ExperimentSpec.from_dict(spec_dict([{"kind": "none"}, {"kind": "positions"}]))
    run(spec, records_dir=tmp_path)
    assert [p.name for p in tmp_path.iterdir()] == ["positions_100.jsonl"]
    rows = (tmp_path / "positions_100.jsonl").read_text().splitlines()
    assert rows and "propensity" in json.loads(rows[0])
