import hashlib
import json
import os

import numpy as np
import pytest
import torch

from siamsv.cli import main
from siamsv.corpus import load_manifest, load_trial_list, load_waveform
from siamsv.features import featurize, load_features, logmel
from siamsv.trainer import load_checkpoint, parse_metrics_line


def digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


MAKE_TOY = [
    "make-toy",
    "--speakers", "4",
    "--utts", "3",
    "--duration", "4.2",
    "--seed", "3",
    "--trials", "20",
    "--noise-count", "2",
    "--rir-count", "2",
]

QUICK_TRAIN_SETS = [
    "--set", "train.total_steps=4",
    "--set", "train.batch_utterances=3",
    "--set", "encoder.embedding_dim=16",
]


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    assert main(MAKE_TOY + ["--out", str(out)]) == 0
    return out


@pytest.fixture(scope="session")
def trained_dir(toy_dir, tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("trained")
    code = main(
        [
            "train",
            "--config", str(toy_dir / "config.json"),
            "--set", f'paths.run_dir="{run_dir}"',
        ]
        + QUICK_TRAIN_SETS
    )
    assert code == 0
    return run_dir


class TestMakeToy:
    def test_outputs_exist_and_are_consistent(self, toy_dir):
        manifest = load_manifest(str(toy_dir / "manifest.tsv"), on_missing="error")
        assert len(manifest) == 12
        trials = load_trial_list(str(toy_dir / "trials.txt"))
        assert len(trials) == 20
        assert sum(t[0] for t in trials) == 10
        assert (toy_dir / "labels.tsv").exists()
        assert len(list((toy_dir / "wav").glob("*.wav"))) == 12
        assert len(list((toy_dir / "noise").glob("*.wav"))) == 2
        assert len(list((toy_dir / "rir").glob("*.wav"))) == 2
        config = json.loads((toy_dir / "config.json").read_text())
        assert config["schema_version"] == 1

    def test_rerun_is_checksum_identical(self, toy_dir, tmp_path):
        assert main(MAKE_TOY + ["--out", str(tmp_path)]) == 0
        for name in ("manifest.tsv", "labels.tsv", "trials.txt"):
            assert digest(toy_dir / name) == digest(tmp_path / name)
        wav = "wav/spk000_utt000.wav"
        assert digest(toy_dir / wav) == digest(tmp_path / wav)

    def test_single_speaker_fails(self, tmp_path, capsys):
        code = main(["make-toy", "--out", str(tmp_path / "x"), "--speakers", "1"])
        assert code == 1
        assert "2 speakers" in capsys.readouterr().err


class TestTrain:
    def test_run_artifacts(self, trained_dir, capsys):
        lines = (trained_dir / "metrics.log").read_text().strip().splitlines()
        assert len(lines) == 4
        first = parse_metrics_line(lines[0])
        assert first["step"] == 0 and first["lr"] == pytest.approx(3e-3)
        assert (trained_dir / "final.pt").exists()
        assert (trained_dir / "last.pt").exists()
        assert (trained_dir / "config.json").exists()
        oplog = (trained_dir / "oplog.log").read_text().strip().splitlines()
        assert len(oplog) == 4 * 3 * 2  # steps x pairs x two segments
        assert all("crop=" in line for line in oplog)

    def test_lambda_zero_vs_active(self, toy_dir, tmp_path):
        for name, weight in (("l0", 0), ("l8", 0.08)):
            code = main(
                [
                    "train",
                    "--config", str(toy_dir / "config.json"),
                    "--set", f'paths.run_dir="{tmp_path / name}"',
                    "--set", f"train.lambda={weight}",
                ]
                + QUICK_TRAIN_SETS
            )
            assert code == 0
        for name in ("l0", "l8"):
            lines = (tmp_path / name / "metrics.log").read_text().strip().splitlines()
            assert all("ssreg=" in line for line in lines)

    def test_resume_matches_uninterrupted(self, toy_dir, tmp_path):
        base = [
            "train",
            "--config", str(toy_dir / "config.json"),
            "--set", "train.total_steps=6",
            "--set", "train.batch_utterances=3",
            "--set", "encoder.embedding_dim=16",
        ]
        assert main(base + ["--set", f'paths.run_dir="{tmp_path / "straight"}"']) == 0
        assert (
            main(base + ["--set", f'paths.run_dir="{tmp_path / "resumed"}"', "--steps", "3"])
            == 0
        )
        assert (
            main(
                base
                + [
                    "--set", f'paths.run_dir="{tmp_path / "resumed"}"',
                    "--resume", str(tmp_path / "resumed" / "last.pt"),
                ]
            )
            == 0
        )
        straight = load_checkpoint(str(tmp_path / "straight" / "final.pt"))
        resumed = load_checkpoint(str(tmp_path / "resumed" / "final.pt"))
        for key, value in straight["system_state"].items():
            assert torch.equal(value, resumed["system_state"][key]), key

    def test_missing_noise_list_for_noisy_strategy(self, toy_dir, tmp_path, capsys):
        code = main(
            [
                "train",
                "--config", str(toy_dir / "config.json"),
                "--set", 'paths.noise_list=""',
                "--set", f'paths.run_dir="{tmp_path}"',
            ]
            + QUICK_TRAIN_SETS
        )
        assert code == 1
        assert "noise" in capsys.readouterr().err

    def test_bad_config_key(self, toy_dir, tmp_path, capsys):
        code = main(
            [
                "train",
                "--config", str(toy_dir / "config.json"),
                "--set", "train.warmup=5",
            ]
        )
        assert code == 1
        assert "unknown key" in capsys.readouterr().err


class TestEval:
    def test_report_files(self, toy_dir, trained_dir, tmp_path, capsys):
        code = main(
            [
                "eval",
                "--checkpoint", str(trained_dir / "final.pt"),
                "--manifest", str(toy_dir / "manifest.tsv"),
                "--trials", str(toy_dir / "trials.txt"),
                "--out", str(tmp_path / "eval"),
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "EER:" in out and "minDCF" in out
        scores = (tmp_path / "eval" / "scores.txt").read_text().strip().splitlines()
        assert len(scores) == 20
        det = (tmp_path / "eval" / "det.csv").read_text().splitlines()
        assert det[0] == "threshold,p_fa,p_miss"
        assert (tmp_path / "eval" / "report.txt").exists()

    def test_malformed_trial_line(self, toy_dir, trained_dir, tmp_path, capsys):
        bad = tmp_path / "bad_trials.txt"
        bad.write_text("1 spk000_utt000 spk000_utt001\nnonsense\n")
        code = main(
            [
                "eval",
                "--checkpoint", str(trained_dir / "final.pt"),
                "--manifest", str(toy_dir / "manifest.tsv"),
                "--trials", str(bad),
            ]
        )
        assert code == 1
        assert ":2" in capsys.readouterr().err

    def test_unknown_trial_utterance(self, toy_dir, trained_dir, tmp_path, capsys):
        bad = tmp_path / "ghost_trials.txt"
        bad.write_text("1 ghost spk000_utt001\n")
        code = main(
            [
                "eval",
                "--checkpoint", str(trained_dir / "final.pt"),
                "--manifest", str(toy_dir / "manifest.tsv"),
                "--trials", str(bad),
            ]
        )
        assert code == 1
        assert "ghost" in capsys.readouterr().err


class TestAblate:
    def test_strategy_sweep(self, toy_dir, tmp_path):
        code = main(
            [
                "ablate",
                "--config", str(toy_dir / "config.json"),
                "--strategies", "1,4",
                "--out", str(tmp_path / "ab"),
                "--set", "train.total_steps=2",
                "--set", "train.batch_utterances=3",
                "--set", "encoder.embedding_dim=16",
            ]
        )
        assert code == 0
        table = (tmp_path / "ab" / "table.txt").read_text()
        csv_lines = (tmp_path / "ab" / "table.csv").read_text().strip().splitlines()
        assert csv_lines[0] == "strategy,seed,eer_pct,min_dcf"
        assert len(csv_lines) == 3
        assert "EER" in table

    def test_lambda_sweep(self, toy_dir, tmp_path):
        code = main(
            [
                "ablate",
                "--config", str(toy_dir / "config.json"),
                "--lambdas", "0,0.08,0.5",
                "--out", str(tmp_path / "ab"),
                "--set", "train.total_steps=2",
                "--set", "train.batch_utterances=3",
                "--set", "encoder.embedding_dim=16",
            ]
        )
        assert code == 0
        csv_lines = (tmp_path / "ab" / "table.csv").read_text().strip().splitlines()
        assert len(csv_lines) == 4  # header + one row per lambda

    def test_empty_sweep(self, toy_dir, tmp_path, capsys):
        code = main(
            [
                "ablate",
                "--config", str(toy_dir / "config.json"),
                "--strategies", "",
                "--out", str(tmp_path / "ab"),
            ]
        )
        assert code == 1
        assert "empty" in capsys.readouterr().err

    def test_no_sweep_given(self, toy_dir, tmp_path, capsys):
        code = main(
            ["ablate", "--config", str(toy_dir / "config.json"), "--out", str(tmp_path)]
        )
        assert code == 1
        assert "sweep" in capsys.readouterr().err

    def test_both_sweeps_rejected(self, toy_dir, tmp_path, capsys):
        code = main(
            [
                "ablate",
                "--config", str(toy_dir / "config.json"),
                "--strategies", "1",
                "--lambdas", "0",
                "--out", str(tmp_path),
            ]
        )
        assert code == 1


class TestDumpFeatures:
    def test_matches_library_pipeline(self, toy_dir, tmp_path):
        wav_path = str(toy_dir / "wav" / "spk000_utt000.wav")
        out = str(tmp_path / "feat.bin")
        assert main(["dump-features", "--wav", wav_path, "--out", out]) == 0
        feat = load_features(out)
        expected = featurize(load_waveform(wav_path))
        np.testing.assert_allclose(feat, expected, atol=1e-12)

    def test_raw_skips_mvn(self, toy_dir, tmp_path):
        wav_path = str(toy_dir / "wav" / "spk000_utt000.wav")
        out = str(tmp_path / "raw.bin")
        assert main(["dump-features", "--wav", wav_path, "--out", out, "--raw"]) == 0
        np.testing.assert_allclose(
            load_features(out), logmel(load_waveform(wav_path)), atol=1e-12
        )

    def test_missing_wav(self, tmp_path, capsys):
        code = main(["dump-features", "--wav", "nope.wav", "--out", str(tmp_path / "f")])
        assert code == 1


class TestAugmentPreview:
    def test_writes_pair_and_log(self, toy_dir, tmp_path):
        out_dir = tmp_path / "prev"
        args = [
            "augment-preview",
            "--wav", str(toy_dir / "wav" / "spk001_utt001.wav"),
            "--out-dir", str(out_dir),
            "--strategy", "4",
            "--seed", "11",
            "--noise-list", str(toy_dir / "noise_list.tsv"),
            "--rir-list", str(toy_dir / "rir_list.tsv"),
        ]
        assert main(args) == 0
        assert (out_dir / "seg_a.wav").exists()
        assert (out_dir / "seg_b.wav").exists()
        log = (out_dir / "oplog.txt").read_text()
        assert "reverb=" in log and "noise=" in log

        rerun = tmp_path / "prev2"
        args[args.index(str(out_dir))] = str(rerun)
        assert main(args) == 0
        assert digest(out_dir / "seg_a.wav") == digest(rerun / "seg_a.wav")

    def test_missing_corpora_for_strategy(self, toy_dir, tmp_path, capsys):
        code = main(
            [
                "augment-preview",
                "--wav", str(toy_dir / "wav" / "spk001_utt001.wav"),
                "--out-dir", str(tmp_path),
                "--strategy", "4",
            ]
        )
        assert code == 1
        assert "noise" in capsys.readouterr().err


class TestEntryPoint:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "siamsv" in capsys.readouterr().out

    def test_requires_command(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
