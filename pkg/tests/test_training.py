import json

import numpy as np
import pytest

from songlight import dsp, models, training


class TestSyntheticSpec:
    def test_informative_chunk_cycles_through_positions(self):
        spec = training.SyntheticSpec(n_classes=10, clips_per_class=1)
        assert [spec.informative_chunk(k) for k in range(10)] == \
            [1, 2, 3, 4, 5, 6, 7, 8, 1, 2]

    def test_class_frequencies_are_distinct_and_low(self):
        spec = training.SyntheticSpec(n_classes=8, clips_per_class=1)
        freqs = [spec.class_frequency(k) for k in range(8)]
        assert freqs == [200.0 + 250.0 * k for k in range(8)]

    def test_frequency_above_nyquist_rejected(self):
        spec = training.SyntheticSpec(n_classes=60, clips_per_class=1)
        with pytest.raises(training.DatasetError):
            spec.class_frequency(50)  # 200 + 250*50 = 12700 > 11025

    def test_burst_bounds_follow_chunk_grid(self):
        spec = training.SyntheticSpec(n_classes=8, clips_per_class=1)
        chunk_sec = 129 * 512 / 22050
        for k in range(8):
            start, end = spec.burst_bounds_sec(k)
            assert start == pytest.approx(k * chunk_sec)
            assert end == pytest.approx((k + 1) * chunk_sec)


class TestSyntheticClips:
    SPEC = training.SyntheticSpec(n_classes=4, clips_per_class=2, seed=11)

    def test_generation_is_deterministic(self):
        a = training.synth_clip_samples(self.SPEC, 2, 1)
        b = training.synth_clip_samples(self.SPEC, 2, 1)
        np.testing.assert_array_equal(a, b)

    def test_instances_differ(self):
        a = training.synth_clip_samples(self.SPEC, 2, 0)
        b = training.synth_clip_samples(self.SPEC, 2, 1)
        assert not np.array_equal(a, b)

    def test_burst_sits_in_informative_chunk(self):
        chunk_samples = 129 * 512
        for k in range(4):
            samples = training.synth_clip_samples(self.SPEC, k, 0)
            per_chunk = samples[:8 * chunk_samples].reshape(8, chunk_samples)
            rms = np.sqrt((per_chunk.astype(np.float64) ** 2).mean(axis=1))
            assert int(np.argmax(rms)) + 1 == self.SPEC.informative_chunk(k)
            # burst RMS of a 0.5 sine is ~0.35, the floor is 0.01
            assert rms.max() > 10 * np.median(rms)

    def test_amplitude_within_pcm_range(self):
        samples = training.synth_clip_samples(self.SPEC, 0, 0)
        assert samples.dtype == np.float32
        assert np.max(np.abs(samples)) <= 1.0

    def test_class_index_validation(self):
        with pytest.raises(training.DatasetError):
            training.synth_clip_samples(self.SPEC, 4, 0)


class TestGenerateAndIngest:
    def test_generate_shapes_and_labels(self):
        spec = training.SyntheticSpec(n_classes=3, clips_per_class=2, seed=0)
        ds = training.generate_synthetic(spec)
        assert len(ds.clips) == 6
        assert ds.n_classes == 3
        assert ds.label_names == ["class000", "class001", "class002"]
        for clip in ds.clips:
            assert clip.chunks.shape == (8, 129, 128)
            assert clip.label.sum() == 1.0

    def test_write_then_ingest_matches_memory_exactly(self, tmp_path):
        spec = training.SyntheticSpec(n_classes=2, clips_per_class=2, seed=5)
        mem = training.generate_synthetic(spec)
        training.write_synthetic_dataset(spec, tmp_path)
        disk = training.ingest_dataset(tmp_path / "manifest.jsonl")
        config = models.ModelConfig(variant="NAM_LF", n_classes=2)
        assert [c.clip_id for c in disk.clips] == [c.clip_id for c in mem.clips]
        for m, d in zip(mem.clips, disk.clips):
            np.testing.assert_array_equal(training.clip_chunk_tensor(m, config),
                                          training.clip_chunk_tensor(d, config))

    def test_written_corpus_carries_annotations(self, tmp_path):
        spec = training.SyntheticSpec(n_classes=2, clips_per_class=1, seed=5)
        training.write_synthetic_dataset(spec, tmp_path)
        rows = [json.loads(l) for l in
                (tmp_path / "annotations.jsonl").read_text().splitlines()]
        assert len(rows) == 2
        start, end, label = rows[1]["sections"][0]
        assert label == "burst"
        assert (start, end) == pytest.approx(spec.burst_bounds_sec(1))

    def test_ingest_rejects_duplicate_ids(self, tmp_path):
        spec = training.SyntheticSpec(n_classes=2, clips_per_class=1, seed=5)
        training.write_synthetic_dataset(spec, tmp_path)
        manifest = tmp_path / "manifest.jsonl"
        lines = manifest.read_text().splitlines()
        manifest.write_text("\n".join(lines + [lines[0]]) + "\n")
        with pytest.raises(training.DatasetError):
            training.ingest_dataset(manifest)

    def test_ingest_rejects_label_out_of_range(self, tmp_path):
        spec = training.SyntheticSpec(n_classes=2, clips_per_class=1, seed=5)
        training.write_synthetic_dataset(spec, tmp_path)
        manifest = tmp_path / "manifest.jsonl"
        row = json.loads(manifest.read_text().splitlines()[0])
        row["labels"] = [5]
        row["clip_id"] = "broken"
        with manifest.open("a") as fh:
            fh.write(json.dumps(row) + "\n")
        with pytest.raises(training.DatasetError):
            training.ingest_dataset(manifest)

    def test_ingest_rejects_missing_audio(self, tmp_path):
        spec = training.SyntheticSpec(n_classes=2, clips_per_class=1, seed=5)
        training.write_synthetic_dataset(spec, tmp_path)
        (tmp_path / "synth-000-0000.wav").unlink()
        with pytest.raises(training.DatasetError):
            training.ingest_dataset(tmp_path / "manifest.jsonl")

    def test_ingest_requires_descriptor(self, tmp_path):
        manifest = tmp_path / "manifest.jsonl"
        manifest.write_text('{"clip_id": "a", "audio": "a.wav", "labels": [0]}\n')
        with pytest.raises(training.DatasetError):
            training.ingest_dataset(manifest)

    def test_empty_manifest_rejected(self, tmp_path):
        manifest = tmp_path / "manifest.jsonl"
        manifest.write_text("")
        (tmp_path / "descriptor.json").write_text(
            '{"n_classes": 2, "label_names": ["a", "b"]}')
        with pytest.raises(training.DatasetError):
            training.ingest_dataset(manifest)


class TestChunkTensor:
    def test_long_clips_truncate_to_first_chunks(self):
        config = models.ModelConfig(variant="NAM_LF", n_classes=2,
                                    chunks_per_clip=3)
        chunks = np.random.default_rng(0).random((6, 129, 128)).astype(np.float32)
        clip = training.LabeledClip(clip_id="x", label=np.array([1.0, 0.0]),
                                    chunks=chunks)
        out = training.clip_chunk_tensor(clip, config)
        np.testing.assert_array_equal(out, chunks[:3])

    def test_short_clips_are_an_error(self):
        config = models.ModelConfig(variant="NAM_LF", n_classes=2)
        chunks = np.zeros((4, 129, 128), dtype=np.float32)
        clip = training.LabeledClip(clip_id="x", label=np.array([1.0, 0.0]),
                                    chunks=chunks)
        with pytest.raises(training.DatasetError):
            training.clip_chunk_tensor(clip, config)


class TestLabelValidation:
    def _ds(self, labels):
        clips = [training.LabeledClip(clip_id=f"c{i}", label=np.asarray(l, float),
                                      chunks=np.zeros((8, 129, 128), np.float32))
                 for i, l in enumerate(labels)]
        return training.Dataset(clips=clips, n_classes=3,
                                label_names=["a", "b", "c"])

    def test_cce_requires_single_label(self):
        ds = self._ds([[1, 1, 0]])
        config = models.ModelConfig(variant="NAM_LF", n_classes=3, loss_kind="cce")
        with pytest.raises(training.TrainingError):
            training.train(ds, config, training.TrainConfig(epochs=0))

    def test_bce_accepts_multi_label(self):
        ds = self._ds([[1, 1, 0], [0, 0, 1]])
        config = models.ModelConfig(variant="NAM_LF", n_classes=3, loss_kind="bce")
        params, logs = training.train(
            ds, config, training.TrainConfig(epochs=0, val_fraction=0.0))
        assert logs == []

    def test_unlabeled_clip_rejected(self):
        ds = self._ds([[0, 0, 0]])
        config = models.ModelConfig(variant="NAM_LF", n_classes=3, loss_kind="bce")
        with pytest.raises(training.TrainingError):
            training.train(ds, config, training.TrainConfig(epochs=0))


class TestTraining:
    def test_single_batch_overfit(self, small_synth_dataset):
        config = models.ModelConfig(variant="NAM_LF", n_classes=2, loss_kind="cce")
        tc = training.TrainConfig(epochs=30, lr=1e-3, batch_songs=16, seed=0,
                                  val_fraction=0.0)
        params, logs = training.train(small_synth_dataset, config, tc)
        assert logs[-1].train_loss < 0.05
        assert len(logs) == 30

    def test_same_seed_reproduces_weights_exactly(self, small_synth_dataset):
        config = models.ModelConfig(variant="NAM_LF", n_classes=2, loss_kind="cce")
        tc = training.TrainConfig(epochs=2, lr=1e-3, batch_songs=8, seed=4,
                                  val_fraction=0.25)
        a, _ = training.train(small_synth_dataset, config, tc)
        b, _ = training.train(small_synth_dataset, config, tc)
        for name in a.tensors:
            np.testing.assert_array_equal(a[name].data, b[name].data)

    def test_epochs_zero_returns_seeded_init(self, small_synth_dataset):
        config = models.ModelConfig(variant="NAM_LF", n_classes=2, loss_kind="cce")
        tc = training.TrainConfig(epochs=0, seed=9, val_fraction=0.0)
        params, logs = training.train(small_synth_dataset, config, tc)
        init = models.init_params(config, seed=9)
        assert logs == []
        for name in params.tensors:
            np.testing.assert_array_equal(params[name].data, init[name].data)

    def test_best_validation_epoch_wins(self, small_synth_dataset):
        config = models.ModelConfig(variant="NAM_LF", n_classes=2, loss_kind="cce")
        tc = training.TrainConfig(epochs=3, lr=1e-3, batch_songs=8, seed=0,
                                  val_fraction=0.25)
        params, logs = training.train(small_synth_dataset, config, tc)
        best = max(log.val_accuracy for log in logs)
        n = len(small_synth_dataset.clips)
        order = np.random.default_rng(0).permutation(n)
        val_clips = [small_synth_dataset.clips[i]
                     for i in order[:int(round(0.25 * n))]]
        acc = training.evaluate_classifier(params, config, val_clips)
        assert acc == pytest.approx(best)

    def test_too_few_training_clips_rejected(self, small_synth_dataset):
        config = models.ModelConfig(variant="NAM_LF", n_classes=2, loss_kind="cce")
        tc = training.TrainConfig(epochs=1, batch_songs=64, val_fraction=0.0)
        with pytest.raises(training.TrainingError):
            training.train(small_synth_dataset, config, tc)

    def test_class_count_mismatch_rejected(self, small_synth_dataset):
        config = models.ModelConfig(variant="NAM_LF", n_classes=5, loss_kind="cce")
        with pytest.raises(training.TrainingError):
            training.train(small_synth_dataset, config,
                           training.TrainConfig(epochs=1))

    def test_early_fusion_variant_trains(self, small_synth_dataset):
        config = models.ModelConfig(variant="NAM_EF_POS", n_classes=2,
                                    loss_kind="cce")
        tc = training.TrainConfig(epochs=2, lr=1e-3, batch_songs=16, seed=0,
                                  val_fraction=0.0)
        params, logs = training.train(small_synth_dataset, config, tc)
        assert logs[1].train_loss < logs[0].train_loss


class TestEvaluateClassifier:
    def test_uniform_predictor_scores_one_over_c(self, small_synth_dataset):
        config = models.ModelConfig(variant="NAM_LF", n_classes=2, loss_kind="cce")
        params = models.init_params(config, seed=0)
        # zero the classifier head: softmax output becomes exactly uniform,
        # argmax resolves to class 0 on every clip
        params["pred.fc2.weight"].data[...] = 0.0
        params["pred.fc2.bias"].data[...] = 0.0
        acc = training.evaluate_classifier(params, config,
                                           small_synth_dataset.clips)
        class0 = np.mean([c.label[0] == 1.0 for c in small_synth_dataset.clips])
        assert acc == pytest.approx(class0)
        assert acc == pytest.approx(1.0 / 2)


class TestEpochTimer:
    def test_times_both_variants(self, small_synth_dataset):
        res = training.epoch_timer(["NAM_LF", "RNAM_LF"], small_synth_dataset,
                                   epochs=1, warmup=0, seed=0, batch_songs=16,
                                   loss_kind="cce")
        assert set(res) == {"NAM_LF", "RNAM_LF"}
        assert all(v > 0 for v in res.values())


class TestTrainingLog:
    def test_csv_layout(self, tmp_path):
        logs = [training.EpochLog(1, 0.5, 0.75, 1.25),
                training.EpochLog(2, 0.25, 1.0, 1.5)]
        path = tmp_path / "log.csv"
        training.write_training_log(path, logs)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,val_accuracy,seconds"
        assert lines[1].split(",")[0] == "1"
        assert float(lines[2].split(",")[1]) == 0.25
