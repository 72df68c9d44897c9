import json

import numpy as np
import pytest
import scipy.stats

from cliprank import autodiff as ad
from cliprank import evaluation as ev
from cliprank import skt
from cliprank.config import load_config
from cliprank.encoders import classify, encode_context, init_params
from cliprank.exceptions import ConfigError, DataError
from cliprank.objectives import score_value
from cliprank.synth import SyntheticSpec, render_video
from cliprank.video import Video
from tinygeo import make_tiny_videos, tiny_cfg


@pytest.fixture(scope="module")
def tiny_videos():
    return make_tiny_videos(tiny_cfg())


@pytest.fixture(scope="module")
def tiny_params():
    cfg = tiny_cfg()
    return init_params(cfg.encoder, cfg.data.num_motion_classes, seed=3)


class TestPairwiseAccuracy:
    def test_perfect_ranking(self):
        assert ev.pairwise_ranking_accuracy([4.0, 3.0, 2.0, 1.0]) == 1.0

    def test_inverted_ranking(self):
        assert ev.pairwise_ranking_accuracy([1.0, 2.0, 3.0, 4.0]) == 0.0

    def test_three_one_two(self):
        assert ev.pairwise_ranking_accuracy([3.0, 1.0, 2.0]) == pytest.approx(2 / 3)

    def test_all_tied_is_half(self):
        assert ev.pairwise_ranking_accuracy([1.0, 1.0, 1.0]) == 0.5

    def test_single_tied_pair(self):
        # (2,1): hit, (2,1): hit, (1,1): half
        assert ev.pairwise_ranking_accuracy([2.0, 1.0, 1.0]) == pytest.approx(2.5 / 3)

    def test_rejects_short_or_batched(self):
        with pytest.raises(ValueError):
            ev.pairwise_ranking_accuracy([1.0])
        with pytest.raises(ValueError):
            ev.pairwise_ranking_accuracy([[1.0, 2.0], [3.0, 4.0]])


class TestKendallTau:
    def test_extremes(self):
        assert ev.kendall_tau([5.0, 4.0, 3.0, 2.0]) == 1.0
        assert ev.kendall_tau([2.0, 3.0, 4.0, 5.0]) == -1.0

    def test_all_tied_is_zero(self):
        assert ev.kendall_tau([7.0, 7.0, 7.0]) == 0.0

    def test_matches_scipy_with_ties(self, rng):
        for m in (3, 5, 8, 12):
            for _ in range(50):
                scores = np.round(rng.normal(size=m), 1)  # coarse grid forces ties
                ideal = -np.arange(m, dtype=np.float64)
                want = scipy.stats.kendalltau(scores, ideal, variant="b").statistic
                if np.isnan(want):  # scipy returns nan when all tied
                    want = 0.0
                assert ev.kendall_tau(scores) == pytest.approx(want, abs=1e-12)

    def test_tau_is_two_acc_minus_one_without_ties(self, rng):
        for _ in range(100):
            scores = rng.normal(size=8)
            acc = ev.pairwise_ranking_accuracy(scores)
            assert ev.kendall_tau(scores) == 2.0 * acc - 1.0


class TestEvaluateRanking:
    def test_empty_heldout_rejected(self):
        cfg = tiny_cfg()
        with pytest.raises(DataError, match="empty"):
            ev.evaluate_ranking(
                [], cfg.sample, cfg.augment, n_examples=4, seed=0, scorer=lambda e: None
            )

    def test_bad_count_rejected(self, tiny_videos):
        cfg = tiny_cfg()
        with pytest.raises(ConfigError, match="n_examples"):
            ev.evaluate_ranking(
                tiny_videos, cfg.sample, cfg.augment, n_examples=0, seed=0,
                scorer=lambda e: None,
            )

    def test_model_scorer_report(self, tiny_videos, tiny_params):
        cfg = tiny_cfg()
        rep = ev.evaluate_ranking(
            tiny_videos,
            cfg.sample,
            cfg.augment,
            n_examples=20,
            seed=5,
            scorer=ev.model_scorer(tiny_params, cfg.encoder),
        )
        assert rep.n_examples == 20
        assert len(rep.per_example) == 20
        assert [r.index for r in rep.per_example] == list(range(20))
        assert 0.0 <= rep.pairwise_accuracy <= 1.0
        assert -1.0 <= rep.kendall_tau <= 1.0
        for r in rep.per_example:
            assert len(r.target_scores) == cfg.sample.m
            assert len(r.negative_scores) == 2
        json.dumps(rep.to_dict())  # report must serialize as-is

    def test_deterministic_given_weights_and_seed(self, tiny_videos, tiny_params):
        cfg = tiny_cfg()

        def run():
            return ev.evaluate_ranking(
                tiny_videos,
                cfg.sample,
                cfg.augment,
                n_examples=12,
                seed=9,
                scorer=ev.model_scorer(tiny_params, cfg.encoder),
            ).to_dict()

        assert run() == run()

    def test_centroid_oracle_is_perfect(self):
        # default-scale geometry: target spacing 4 frames at >= 0.2 px/frame
        # dwarfs the centroid estimator's error
        cfg = load_config()
        spec = SyntheticSpec(num_videos=6, seed=123)
        videos = [render_video(spec, i) for i in range(spec.num_videos)]
        rep = ev.evaluate_ranking(
            videos,
            cfg.sample,
            cfg.augment,
            n_examples=40,
            seed=7,
            scorer=ev.centroid_scorer(),
        )
        assert rep.pairwise_accuracy == 1.0
        assert rep.kendall_tau == 1.0


class TestSlidingWindow:
    def test_too_short_rejected(self, tiny_params):
        cfg = tiny_cfg()
        frames = np.zeros((3, 1, 14, 14), dtype=np.float32)
        with pytest.raises(DataError, match="window"):
            ev.sliding_window_predict(tiny_params, cfg.encoder, frames, cfg.augment)

    def test_probs_normalized(self, tiny_videos, tiny_params):
        cfg = tiny_cfg()
        pred, probs = ev.sliding_window_predict(
            tiny_params, cfg.encoder, tiny_videos[0].frames, cfg.augment
        )
        assert probs.shape == (4,)
        assert abs(probs.sum() - 1.0) < 1e-6
        assert pred == int(np.argmax(probs))

    def test_window_count_is_floor(self, tiny_videos, tiny_params):
        # 14 frames / window 4 -> 3 windows; check against manual averaging
        cfg = tiny_cfg()
        video = tiny_videos[1]
        _, probs = ev.sliding_window_predict(
            tiny_params, cfg.encoder, video.frames, cfg.augment
        )

        from cliprank.sampling import apply_record, center_record

        rec = center_record(video.frames.shape[-2], video.frames.shape[-1], cfg.augment)
        manual = []
        for w in range(3):
            clip = apply_record(video.frames[w * 4 : (w + 1) * 4], rec, 8, 8)
            with ad.no_grad():
                logits = classify(tiny_params, encode_context(tiny_params, cfg.encoder, clip))
            z = logits.data.astype(np.float64)
            e = np.exp(z - z.max())
            manual.append(e / e.sum())
        np.testing.assert_allclose(probs, np.mean(manual, axis=0), atol=1e-12)

    def test_single_window_equals_one_forward(self, tiny_videos, tiny_params):
        cfg = tiny_cfg()
        frames = tiny_videos[2].frames[:5]  # one window of 4, remainder dropped
        _, probs = ev.sliding_window_predict(tiny_params, cfg.encoder, frames, cfg.augment)

        from cliprank.sampling import apply_record, center_record

        rec = center_record(frames.shape[-2], frames.shape[-1], cfg.augment)
        clip = apply_record(frames[:4], rec, 8, 8)
        with ad.no_grad():
            logits = classify(tiny_params, encode_context(tiny_params, cfg.encoder, clip))
        z = logits.data.astype(np.float64)
        e = np.exp(z - z.max())
        np.testing.assert_array_equal(probs, e / e.sum())


class TestFinetune:
    def _split(self, tiny_videos):
        return tiny_videos[:6], tiny_videos[6:]

    def _run(self, tiny_videos, mode, params, epochs=2):
        cfg = tiny_cfg()
        train, test = self._split(tiny_videos)
        return ev.finetune(
            params,
            cfg.encoder,
            train,
            test,
            mode=mode,
            schedule=cfg.finetune_schedule,
            adam_cfg=cfg.adam,
            epochs=epochs,
            batch_size=3,
            seed=21,
            aug_spec=cfg.augment,
        )

    def test_probe_freezes_encoder(self, tiny_videos):
        cfg = tiny_cfg()
        params = init_params(cfg.encoder, 4, seed=8)
        before = {n: t.data.copy() for n, t in params.items()}
        rep = self._run(tiny_videos, "probe", params)
        for name, t in params.items():
            if name.startswith("cls."):
                assert not np.array_equal(t.data, before[name]), name
            else:
                assert np.array_equal(t.data, before[name]), name
        assert rep.mode == "probe"
        assert 0.0 <= rep.accuracy <= 1.0
        assert len(rep.per_class_accuracy) == 4
        assert rep.n_test == 2

    def test_full_mode_trains_encoder(self, tiny_videos):
        cfg = tiny_cfg()
        params = init_params(cfg.encoder, 4, seed=8)
        before = {n: t.data.copy() for n, t in params.items()}
        self._run(tiny_videos, "full", params)
        assert not np.array_equal(params["g.conv0.w"].data, before["g.conv0.w"])
        assert not np.array_equal(params["cls.w"].data, before["cls.w"])
        # target-frame and rotation towers play no role in classification
        assert np.array_equal(params["f.conv0.w"].data, before["f.conv0.w"])
        assert np.array_equal(params["rot.w"].data, before["rot.w"])

    def test_bad_mode(self, tiny_videos):
        cfg = tiny_cfg()
        params = init_params(cfg.encoder, 4, seed=8)
        with pytest.raises(ConfigError, match="mode"):
            self._run(tiny_videos, "linear", params)

    def test_unlabeled_video_rejected(self, tiny_videos):
        cfg = tiny_cfg()
        params = init_params(cfg.encoder, 4, seed=8)
        train, test = self._split(tiny_videos)
        bald = [Video(frames=v.frames, id=v.id, motion_class=None) for v in test]
        with pytest.raises(DataError, match="label"):
            ev.finetune(
                params, cfg.encoder, train, bald, mode="probe",
                schedule=cfg.finetune_schedule, adam_cfg=cfg.adam,
                epochs=1, batch_size=3, seed=0, aug_spec=cfg.augment,
            )

    def test_deterministic(self, tiny_videos):
        cfg = tiny_cfg()
        a = self._run(tiny_videos, "probe", init_params(cfg.encoder, 4, seed=8))
        b = self._run(tiny_videos, "probe", init_params(cfg.encoder, 4, seed=8))
        assert a.to_dict() == b.to_dict()


class TestHeatmap:
    def test_mean_equals_score_exactly(self, rng):
        h = rng.normal(size=(4, 3, 3)).astype(np.float32)
        z = rng.normal(size=(4, 3, 3)).astype(np.float32)
        grid = ev.heatmap_grid(h, z)
        assert grid.shape == (3, 3)
        assert float(np.mean(grid)) == score_value(h, z)

    def test_self_map_is_ones(self, rng):
        h = rng.normal(size=(4, 3, 3)).astype(np.float32)
        np.testing.assert_allclose(ev.heatmap_grid(h, h), 1.0, atol=1e-6)

    def test_upsample_nearest_exact_factor(self):
        grid = np.array([[1.0, 2.0], [3.0, 4.0]])
        up = ev.upsample_nearest(grid, 4, 4)
        want = np.array(
            [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=np.float64
        )
        np.testing.assert_array_equal(up, want)

    def test_pgm_layout(self, tmp_path):
        img = np.array([[-1.0, 0.0], [1.0, 0.5]])
        path = tmp_path / "m.pgm"
        ev.write_pgm(path, img)
        blob = path.read_bytes()
        header = b"P5\n2 2\n255\n"
        assert blob.startswith(header)
        pix = np.frombuffer(blob[len(header):], dtype=np.uint8).reshape(2, 2)
        assert pix[0, 0] == 0
        assert pix[0, 1] == 128
        assert pix[1, 0] == 255
        assert pix[1, 1] == 191  # round(1.5 * 127.5)

    def test_export_writes_both_files(self, tmp_path, rng):
        grid = rng.normal(size=(2, 2)).astype(np.float32)
        grid = np.clip(grid, -1, 1)
        paths = ev.export_heatmap(grid, 8, 8, tmp_path / "hm")
        back = skt.read_tensor(paths["skt"])
        np.testing.assert_array_equal(back, grid)
        blob = paths["pgm"].read_bytes()
        assert blob.startswith(b"P5\n8 8\n255\n")
        assert len(blob) == len(b"P5\n8 8\n255\n") + 64

    def test_centroid_cell(self):
        frame = np.zeros((32, 32), dtype=np.float32)
        frame[20, 5] = 1.0  # row 20 -> cell 2, col 5 -> cell 0 on a 4x4 grid
        assert ev.centroid_cell(frame, 4, 4) == (2, 0)


class TestSaliency:
    def test_rate_runs_and_is_deterministic(self, tiny_videos, tiny_params):
        cfg = tiny_cfg()
        a = ev.saliency_rate(
            tiny_params, cfg.encoder, tiny_videos, cfg.sample, cfg.augment,
            n_examples=10, seed=4,
        )
        b = ev.saliency_rate(
            tiny_params, cfg.encoder, tiny_videos, cfg.sample, cfg.augment,
            n_examples=10, seed=4,
        )
        assert a == b
        assert 0.0 <= a <= 1.0
