import csv
import json

import numpy as np
import pytest

from cliprank import report as rp
from cliprank.evaluation import ExampleScores, ProbeReport, RankingReport
from cliprank.exceptions import DataError


def fake_metrics(n=6):
    return [
        {
            "step": i,
            "epoch": i // 3,
            "lr": 3e-4,
            "loss_total": 2.0 - 0.1 * i,
            "loss_rank": 0.5,
            "loss_contrastive": 0.4,
            "loss_rotation": 1.1 - 0.1 * i,
            "mean_target_score": 0.01 * i,
            "mean_negative_score": 0.0,
        }
        for i in range(n)
    ]


def fake_ranking(n=5):
    per = [
        ExampleScores(
            index=i,
            video_id=f"video_{i:04d}",
            t=3 * i,
            target_scores=[0.5, 0.3, 0.1],
            negative_scores=[-0.2, -0.1],
            pairwise_accuracy=1.0 - 0.1 * i,
            tau=1.0 - 0.2 * i,
        )
        for i in range(n)
    ]
    return RankingReport(
        n_examples=n,
        pairwise_accuracy=float(np.mean([p.pairwise_accuracy for p in per])),
        kendall_tau=float(np.mean([p.tau for p in per])),
        per_example=per,
    )


class TestCsv:
    def test_metrics_roundtrip(self, tmp_path):
        records = fake_metrics()
        out = tmp_path / "metrics.csv"
        rp.metrics_csv(records, out)
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6
        assert rows[0]["step"] == "0"
        assert float(rows[5]["loss_total"]) == pytest.approx(1.5)

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(DataError, match="empty"):
            rp.write_csv(tmp_path / "x.csv", [])

    def test_ranking_rows(self, tmp_path):
        rep = fake_ranking()
        out = tmp_path / "rank.csv"
        rp.ranking_csv(rep, out)
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 5
        assert rows[0]["video_id"] == "video_0000"
        assert float(rows[0]["s0"]) == pytest.approx(0.5)

    def test_probe_rows(self, tmp_path):
        rep = ProbeReport(
            mode="probe", accuracy=0.75, per_class_accuracy=[1.0, 0.5], n_test=8
        )
        out = tmp_path / "probe.csv"
        rp.probe_csv(rep, out)
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert [r["class"] for r in rows] == ["0", "1"]

    def test_read_metrics_jsonl(self, tmp_path):
        p = tmp_path / "m.jsonl"
        records = fake_metrics(3)
        p.write_text("".join(json.dumps(r) + "\n" for r in records))
        assert rp.read_metrics(p) == records
        empty = tmp_path / "e.jsonl"
        empty.write_text("\n")
        with pytest.raises(DataError, match="empty"):
            rp.read_metrics(empty)


def png_ok(path):
    blob = path.read_bytes()
    return blob[:8] == b"\x89PNG\r\n\x1a\n" and len(blob) > 1000


class TestFigures:
    def test_training_curves(self, tmp_path):
        out = tmp_path / "curves.png"
        rp.plot_training_curves(fake_metrics(), out)
        assert png_ok(out)

    def test_ranking_figure(self, tmp_path):
        out = tmp_path / "rank.png"
        rp.plot_ranking(fake_ranking(), out)
        assert png_ok(out)

    def test_probe_figure(self, tmp_path):
        rep = ProbeReport(
            mode="probe", accuracy=0.6, per_class_accuracy=[0.8, 0.4, 0.6], n_test=10
        )
        out = tmp_path / "probe.png"
        rp.plot_probe(rep, out)
        assert png_ok(out)

    def test_heatmap_figure(self, tmp_path, rng):
        grid = np.clip(rng.normal(size=(4, 4)), -1, 1)
        frame = rng.uniform(size=(32, 32))
        out = tmp_path / "hm.png"
        rp.plot_heatmap(grid, frame, out)
        assert png_ok(out)


def test_write_json(tmp_path):
    out = tmp_path / "r.json"
    rp.write_json(out, {"b": 2, "a": 1})
    assert json.loads(out.read_text()) == {"a": 1, "b": 2}
