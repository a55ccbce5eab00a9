"""End-to-end command line tests: every subcommand, exit codes, file outputs.

Each test drives ``cli.main`` in-process with an argv list; subprocesses would
only slow things down.  A tiny two-class synthetic corpus plus a one-epoch
model are built once per module.
"""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from scipy.io import wavfile

from songlight import cli, dsp, models, training


def run_cli(*argv):
    return cli.main(list(argv))


def read_jsonl(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line]


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    """Two-class, eight-clip synthetic corpus written through the CLI."""
    out = tmp_path_factory.mktemp("corpus")
    assert run_cli("synth", "--classes", "2", "--per-class", "4",
                   "--out", str(out), "--seed", "11") == 0
    return out


@pytest.fixture(scope="module")
def quick_model(tmp_path_factory, cli_corpus):
    """A one-epoch model; enough for plumbing that needs a valid file."""
    out = tmp_path_factory.mktemp("model") / "quick.pmhl"
    assert run_cli("train", "--manifest", str(cli_corpus / "manifest.jsonl"),
                   "--variant", "NAM_LF", "--epochs", "1", "--lr", "1e-3",
                   "--batch-songs", "4", "--seed", "3", "--out", str(out)) == 0
    return out


@pytest.fixture(scope="module")
def class0_wav(tmp_path_factory):
    """A 24 s clip whose informative burst sits in the first chunk."""
    spec = training.SyntheticSpec(n_classes=8, clips_per_class=32, seed=20)
    samples = training.synth_clip_samples(spec, 0, 2)
    path = tmp_path_factory.mktemp("audio") / "class0.wav"
    wavfile.write(path, dsp.SAMPLE_RATE, samples)
    return path


class TestExtract:
    def test_middle_on_240_second_file(self, tmp_path, capsys):
        path = tmp_path / "long.wav"
        wavfile.write(path, dsp.SAMPLE_RATE, np.zeros(240 * dsp.SAMPLE_RATE, np.int16))
        assert run_cli("extract", "--method", "middle", "--audio", str(path)) == 0
        row = json.loads(capsys.readouterr().out)
        assert row == {"clip_id": "long", "start_sec": 105.0, "end_sec": 135.0,
                       "source": "middle"}

    def test_energy_covers_loud_region(self, tmp_path, capsys):
        rng = np.random.default_rng(5)
        rate = dsp.SAMPLE_RATE
        samples = rng.normal(0.0, 0.01, 120 * rate)
        t = np.arange(40 * rate, 80 * rate)
        samples[t] += 0.4 * np.sin(2 * np.pi * 700.0 * t / rate)
        path = tmp_path / "loud_middle.wav"
        wavfile.write(path, rate, samples.astype(np.float32))
        out = tmp_path / "hl.jsonl"
        assert run_cli("extract", "--method", "energy", "--audio", str(path),
                       "--length", "30", "--out", str(out)) == 0
        (row,) = read_jsonl(out)
        assert row["source"] == "energy"
        assert 39.0 <= row["start_sec"] <= 51.0
        assert row["end_sec"] == pytest.approx(row["start_sec"] + 30.0)
        assert capsys.readouterr().out == ""  # --out means nothing on stdout

    def test_attention_highlight_sits_on_burst(self, toy_model_path, class0_wav, capsys):
        assert run_cli("extract", "--model", str(toy_model_path),
                       "--audio", str(class0_wav), "--length", "3") == 0
        row = json.loads(capsys.readouterr().out)
        assert row["source"] == "attention"
        assert row["start_sec"] == 0.0  # burst fills the first chunk
        assert row["end_sec"] == pytest.approx(3.0)

    def test_lambda_endpoints_match_pure_methods(self, toy_model_path, class0_wav,
                                                 tmp_path):
        paths = {name: tmp_path / f"{name}.jsonl"
                 for name in ("energy", "lam1", "attention", "lam0")}
        base = ("extract", "--audio", str(class0_wav), "--length", "9")
        assert run_cli(*base, "--method", "energy", "--out", str(paths["energy"])) == 0
        assert run_cli(*base, "--model", str(toy_model_path), "--lambda", "1.0",
                       "--out", str(paths["lam1"])) == 0
        assert run_cli(*base, "--model", str(toy_model_path),
                       "--out", str(paths["attention"])) == 0
        assert run_cli(*base, "--model", str(toy_model_path), "--lambda", "0.0",
                       "--out", str(paths["lam0"])) == 0
        rows = {name: read_jsonl(p)[0] for name, p in paths.items()}
        for pure, fused in (("energy", "lam1"), ("attention", "lam0")):
            for key in ("clip_id", "start_sec", "end_sec", "source"):
                assert rows[fused][key] == rows[pure][key], (pure, key)
            assert "lambda" not in rows[pure]
        assert rows["lam1"]["lambda"] == 1.0
        assert rows["lam0"]["lambda"] == 0.0

    def test_rows_keep_input_order_and_inputs_untouched(self, tmp_path, capsys):
        paths = []
        for name in ("c", "a", "b"):
            p = tmp_path / f"{name}.wav"
            wavfile.write(p, dsp.SAMPLE_RATE,
                          np.zeros(5 * dsp.SAMPLE_RATE, np.float32))
            paths.append(p)
        digests = [hashlib.sha256(p.read_bytes()).hexdigest() for p in paths]
        argv = ["extract", "--method", "middle", "--jobs", "3"]
        for p in paths:
            argv += ["--audio", str(p)]
        assert run_cli(*argv) == 0
        rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert [r["clip_id"] for r in rows] == ["c", "a", "b"]
        assert digests == [hashlib.sha256(p.read_bytes()).hexdigest() for p in paths]

    def test_unreadable_input_skipped_with_warning(self, tmp_path, capsys):
        good = tmp_path / "good.wav"
        wavfile.write(good, dsp.SAMPLE_RATE, np.zeros(5 * dsp.SAMPLE_RATE, np.float32))
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"this is not a wav file")
        assert run_cli("extract", "--method", "middle",
                       "--audio", str(bad), "--audio", str(good)) == 0
        captured = capsys.readouterr()
        assert "bad.wav" in captured.err and "warning" in captured.err
        rows = [json.loads(line) for line in captured.out.splitlines()]
        assert [r["clip_id"] for r in rows] == ["good"]

    def test_all_inputs_unreadable_fails_without_partial_output(self, tmp_path, capsys):
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"junk")
        out = tmp_path / "hl.jsonl"
        assert run_cli("extract", "--method", "middle", "--audio", str(bad),
                       "--out", str(out)) == 1
        assert not out.exists()
        assert "error:" in capsys.readouterr().err

    def test_model_and_method_are_mutually_exclusive(self, tmp_path, capsys,
                                                     quick_model, class0_wav):
        both = run_cli("extract", "--model", str(quick_model), "--method", "middle",
                       "--audio", str(class0_wav))
        neither = run_cli("extract", "--audio", str(class0_wav))
        assert both == neither == 1
        assert capsys.readouterr().err.count("error:") == 2

    def test_lambda_requires_model(self, class0_wav, capsys):
        assert run_cli("extract", "--method", "energy", "--lambda", "0.5",
                       "--audio", str(class0_wav)) == 1
        assert "--model" in capsys.readouterr().err

    def test_bad_model_file_aborts(self, tmp_path, class0_wav, capsys):
        fake = tmp_path / "fake.pmhl"
        fake.write_bytes(b"definitely not a model")
        assert run_cli("extract", "--model", str(fake), "--audio", str(class0_wav)) == 1
        assert "error:" in capsys.readouterr().err

    def test_jobs_default_comes_from_environment(self, tmp_path, capsys, monkeypatch):
        p = tmp_path / "short.wav"
        wavfile.write(p, dsp.SAMPLE_RATE, np.zeros(5 * dsp.SAMPLE_RATE, np.float32))
        monkeypatch.setenv("HIGHLIGHTER_JOBS", "3")
        assert run_cli("extract", "--method", "middle", "--audio", str(p)) == 0
        capsys.readouterr()
        monkeypatch.setenv("HIGHLIGHTER_JOBS", "three")
        assert run_cli("extract", "--method", "middle", "--audio", str(p)) == 1
        assert "HIGHLIGHTER_JOBS" in capsys.readouterr().err

    def test_curves_dir_dumps_per_song_csvs(self, toy_model_path, class0_wav,
                                            tmp_path, capsys):
        curves_dir = tmp_path / "curves"
        assert run_cli("extract", "--model", str(toy_model_path), "--lambda", "0.5",
                       "--audio", str(class0_wav), "--curves-dir", str(curves_dir),
                       "--out", str(tmp_path / "hl.jsonl")) == 0
        for kind in ("attention", "energy", "fused"):
            path = curves_dir / f"class0.{kind}.csv"
            assert path.exists(), kind
        curve = dsp.read_curve_csv(curves_dir / "class0.energy.csv", "energy")
        assert curve.values.shape[0] > 1000


class TestCurves:
    def test_writes_selected_features(self, class0_wav, tmp_path):
        out_dir = tmp_path / "curves"
        assert run_cli("curves", "--audio", str(class0_wav),
                       "--out-dir", str(out_dir),
                       "--features", "energy,centroid") == 0
        assert (out_dir / "class0.energy.csv").exists()
        assert (out_dir / "class0.centroid.csv").exists()
        assert not (out_dir / "class0.rolloff.csv").exists()
        curve = dsp.read_curve_csv(out_dir / "class0.centroid.csv", "centroid")
        assert np.all(np.isfinite(curve.values))

    def test_attention_feature_needs_model(self, class0_wav, tmp_path, capsys,
                                           toy_model_path):
        out_dir = tmp_path / "curves"
        assert run_cli("curves", "--audio", str(class0_wav), "--out-dir", str(out_dir),
                       "--features", "attention") == 1
        assert "--model" in capsys.readouterr().err
        assert run_cli("curves", "--audio", str(class0_wav), "--out-dir", str(out_dir),
                       "--features", "attention", "--model", str(toy_model_path)) == 0
        assert (out_dir / "class0.attention.csv").exists()

    def test_unknown_feature_rejected(self, class0_wav, tmp_path, capsys):
        assert run_cli("curves", "--audio", str(class0_wav),
                       "--out-dir", str(tmp_path), "--features", "zcr") == 1
        assert "zcr" in capsys.readouterr().err


class TestTrain:
    def test_same_seed_gives_byte_identical_models(self, cli_corpus, tmp_path):
        outs = [tmp_path / "a.pmhl", tmp_path / "b.pmhl"]
        for out in outs:
            assert run_cli("train", "--manifest", str(cli_corpus / "manifest.jsonl"),
                           "--variant", "NAM_LF", "--epochs", "1", "--batch-songs", "4",
                           "--seed", "7", "--out", str(out)) == 0
        assert outs[0].read_bytes() == outs[1].read_bytes()

    def test_epochs_zero_saves_initialization_with_empty_log(self, cli_corpus,
                                                             tmp_path):
        out = tmp_path / "init.pmhl"
        assert run_cli("train", "--manifest", str(cli_corpus / "manifest.jsonl"),
                       "--variant", "NAM_LF", "--epochs", "0",
                       "--seed", "7", "--out", str(out)) == 0
        params, config = models.load_model(out)
        reference = models.init_params(config, 7)
        assert set(params.tensors) == set(reference.tensors)
        for name in reference.tensors:
            np.testing.assert_array_equal(params[name].data, reference[name].data)
        log_lines = (tmp_path / "init.pmhl.log.csv").read_text().splitlines()
        assert log_lines == ["epoch,train_loss,val_accuracy,seconds"]

    def test_manifest_error_aborts_before_writing(self, cli_corpus, tmp_path, capsys):
        bad_dir = tmp_path / "bad"
        bad_dir.mkdir()
        wav = next(cli_corpus.glob("*.wav"))
        (bad_dir / wav.name).write_bytes(wav.read_bytes())
        row = json.dumps({"clip_id": "dup", "audio": wav.name, "labels": [0]})
        (bad_dir / "manifest.jsonl").write_text(row + "\n" + row + "\n")
        (bad_dir / "descriptor.json").write_text(
            json.dumps({"n_classes": 1, "label_names": ["class000"]}))
        out = tmp_path / "never.pmhl"
        assert run_cli("train", "--manifest", str(bad_dir / "manifest.jsonl"),
                       "--variant", "NAM_LF", "--epochs", "1", "--out", str(out)) == 1
        assert not out.exists()
        assert "dup" in capsys.readouterr().err


class TestSynth:
    def test_deterministic_and_complete(self, tmp_path):
        digests = []
        for name in ("one", "two"):
            out = tmp_path / name
            assert run_cli("synth", "--classes", "2", "--per-class", "3",
                           "--out", str(out), "--seed", "4") == 0
            assert sorted(p.name for p in out.glob("*.wav")) == sorted(
                f"synth-{k:03d}-{i:04d}.wav" for k in range(2) for i in range(3))
            assert (out / "descriptor.json").exists()
            assert (out / "annotations.jsonl").exists()
            digest = {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                      for p in out.iterdir()}
            digests.append(digest)
        assert digests[0] == digests[1]

    def test_overwrite_refused_without_force(self, tmp_path, capsys):
        out = tmp_path / "corpus"
        args = ("synth", "--classes", "2", "--per-class", "1", "--out", str(out))
        assert run_cli(*args) == 0
        assert run_cli(*args) == 1
        assert "--force" in capsys.readouterr().err
        assert run_cli(*args, "--force") == 0


class TestEval:
    @staticmethod
    def _write_fixture(tmp_path, highlights):
        hl_path = tmp_path / "highlights.jsonl"
        hl_path.write_text("\n".join(json.dumps(h) for h in highlights) + "\n")
        ann_path = tmp_path / "annotations.jsonl"
        ann_path.write_text(json.dumps({
            "clip_id": "song1", "duration_sec": 120.0,
            "sections": [[70.0, 95.0, "chorus A"]]}) + "\n")
        return hl_path, ann_path

    def test_worked_single_song_fixture(self, tmp_path, capsys):
        hl_path, ann_path = self._write_fixture(tmp_path, [
            {"clip_id": "song1", "start_sec": 60.0, "end_sec": 90.0,
             "source": "attention"}])
        out = tmp_path / "report.csv"
        assert run_cli("eval", "--highlights", str(hl_path),
                       "--annotations", str(ann_path), "--out", str(out)) == 0
        assert "attention: R 0.8000 P 0.6667 F 0.7273 (1 songs)" in \
            capsys.readouterr().out
        lines = out.read_text().splitlines()
        assert lines[0] == "method,clip_id,R,P,F"
        per_song = lines[1].split(",")
        assert per_song[:2] == ["attention", "song1"]
        assert [float(x) for x in per_song[2:]] == pytest.approx(
            [0.8, 0.6667, 0.7273], abs=1e-4)
        mean_row = lines[2].split(",")
        assert mean_row[:2] == ["attention", "mean"]
        assert [float(x) for x in mean_row[2:]] == pytest.approx(
            [0.8, 0.6667, 0.7273], abs=1e-4)

    def test_groups_rows_by_source(self, tmp_path, capsys):
        hl_path, ann_path = self._write_fixture(tmp_path, [
            {"clip_id": "song1", "start_sec": 60.0, "end_sec": 90.0,
             "source": "attention"},
            {"clip_id": "song1", "start_sec": 45.0, "end_sec": 75.0,
             "source": "middle"}])
        out = tmp_path / "report.csv"
        assert run_cli("eval", "--highlights", str(hl_path),
                       "--annotations", str(ann_path), "--out", str(out)) == 0
        stdout = capsys.readouterr().out
        assert "attention: " in stdout and "middle: " in stdout
        methods = {line.split(",")[0] for line in out.read_text().splitlines()[1:]}
        assert methods == {"attention", "middle"}

    def test_overwrite_refused_then_forced(self, tmp_path, capsys):
        hl_path, ann_path = self._write_fixture(tmp_path, [
            {"clip_id": "song1", "start_sec": 60.0, "end_sec": 90.0,
             "source": "attention"}])
        out = tmp_path / "report.csv"
        out.write_text("precious\n")
        args = ("eval", "--highlights", str(hl_path),
                "--annotations", str(ann_path), "--out", str(out))
        assert run_cli(*args) == 1
        assert out.read_text() == "precious\n"
        assert run_cli(*args, "--force") == 0
        assert out.read_text().startswith("method,clip_id")
        capsys.readouterr()

    def test_missing_annotation_fails(self, tmp_path, capsys):
        hl_path, ann_path = self._write_fixture(tmp_path, [
            {"clip_id": "unknown-song", "start_sec": 0.0, "end_sec": 30.0,
             "source": "middle"}])
        assert run_cli("eval", "--highlights", str(hl_path),
                       "--annotations", str(ann_path),
                       "--out", str(tmp_path / "r.csv")) == 1
        assert "unknown-song" in capsys.readouterr().err

    def test_malformed_highlight_line_names_line_number(self, tmp_path, capsys):
        hl_path, ann_path = self._write_fixture(tmp_path, [
            {"clip_id": "song1", "start_sec": 60.0, "end_sec": 90.0,
             "source": "attention"}])
        hl_path.write_text(hl_path.read_text() + '{"clip_id": "song1"}\n')
        assert run_cli("eval", "--highlights", str(hl_path),
                       "--annotations", str(ann_path),
                       "--out", str(tmp_path / "r.csv")) == 1
        assert ":2:" in capsys.readouterr().err


class TestBench:
    def test_reports_both_variants_in_order(self, cli_corpus, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        assert run_cli("bench", "--manifest", str(cli_corpus / "manifest.jsonl"),
                       "--variants", "NAM_LF,RNAM_LF", "--epochs", "1",
                       "--warmup", "1", "--batch-songs", "4",
                       "--out", str(out)) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "variant,seconds_per_epoch"
        rows = [line.split(",") for line in lines[1:]]
        assert [r[0] for r in rows] == ["NAM_LF", "RNAM_LF"]
        nam, rnam = (float(r[1]) for r in rows)
        assert 0.0 < nam < rnam
        capsys.readouterr()

    def test_unknown_variant_rejected(self, cli_corpus, capsys):
        assert run_cli("bench", "--manifest", str(cli_corpus / "manifest.jsonl"),
                       "--variants", "NAM_LF,GRU_LF") == 1
        assert "GRU_LF" in capsys.readouterr().err


class TestParser:
    def test_missing_required_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run_cli("extract")
        assert exc.value.code == 2
        capsys.readouterr()

    def test_unknown_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run_cli("transcode")
        assert exc.value.code == 2
        capsys.readouterr()
