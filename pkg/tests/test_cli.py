import filecmp
import json

import numpy as np
import pytest

from memvad.cli import main
from memvad.network import load_checkpoint
from memvad.postprocess import read_frame_scores
from memvad.scoring import read_score_table

TINY_CFG = """
# tiny pipeline configuration
d_app = 32
d_mo = 16
train_videos = 3
test_videos = 2
frames_per_video = 40
tracks_per_video = 6
anomaly_rate = 0.3
min_track_length = 15
max_track_length = 30
epochs = 3
batch_size = 128
d_h = 16
n_items = 8
seed = 11
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One tiny synth->train->score run shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.cfg"
    cfg.write_text(TINY_CFG)
    data, model, scored = root / "data", root / "model", root / "scored"
    assert main(["synth", "--config", str(cfg), "--out", str(data)]) == 0
    assert (
        main(
            [
                "train",
                "--config",
                str(cfg),
                "--out",
                str(model),
                "--train-manifest",
                str(data / "train_manifest.txt"),
            ]
        )
        == 0
    )
    assert (
        main(
            [
                "score",
                "--config",
                str(cfg),
                "--out",
                str(scored),
                "--checkpoint",
                str(model / "checkpoint.omc1"),
                "--test-manifest",
                str(data / "test_manifest.txt"),
            ]
        )
        == 0
    )
    return {"root": root, "cfg": cfg, "data": data, "model": model, "scored": scored}


def test_synth_writes_expected_files(pipeline):
    data = pipeline["data"]
    assert sorted(p.name for p in (data / "train").iterdir()) == [
        f"train_{i:03d}.omf1" for i in range(3)
    ]
    assert (data / "train_manifest.txt").exists()
    assert (data / "test_manifest.txt").exists()
    for i in range(2):
        assert (data / "gt" / f"test_{i:03d}.labels.txt").exists()
        assert (data / "gt" / f"test_{i:03d}.regions.txt").exists()


def test_synth_reruns_bit_identical(pipeline, tmp_path):
    again = tmp_path / "again"
    assert main(["synth", "--config", str(pipeline["cfg"]), "--out", str(again)]) == 0
    for sub in ("train", "test", "gt"):
        cmp = filecmp.dircmp(pipeline["data"] / sub, again / sub)
        assert not cmp.diff_files and not cmp.left_only and not cmp.right_only


def test_synth_reported_region_count_matches_files(pipeline, tmp_path, capsys):
    out = tmp_path / "tallied"
    assert main(["synth", "--config", str(pipeline["cfg"]), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    reported = int(printed.rsplit(",", 1)[1].split()[0])
    on_disk = sum(
        len(p.read_text().strip().splitlines()) if p.read_text().strip() else 0
        for p in (out / "gt").glob("*.regions.txt")
    )
    assert reported == on_disk


def test_score_empty_video(pipeline, tmp_path):
    # a video with zero objects yields an empty score file and an
    # all-zero frame file
    cfg = tmp_path / "empty.cfg"
    cfg.write_text(TINY_CFG + "tracks_per_video = 0\ntest_videos = 1\n")
    data = tmp_path / "data"
    assert main(["synth", "--config", str(cfg), "--out", str(data)]) == 0
    out = tmp_path / "scored"
    assert (
        main(
            [
                "score",
                "--config",
                str(cfg),
                "--out",
                str(out),
                "--checkpoint",
                str(pipeline["model"] / "checkpoint.omc1"),
                "--test-manifest",
                str(data / "test_manifest.txt"),
            ]
        )
        == 0
    )
    assert (out / "scores" / "test_000.scores.txt").read_text() == ""
    frames = read_frame_scores(out / "frames" / "test_000.frames.txt")
    assert len(frames) == 40 and np.all(frames == 0.0)


def test_synth_zero_rate_empty_regions(tmp_path):
    cfg = tmp_path / "cfg"
    cfg.write_text(TINY_CFG + "anomaly_rate = 0\n")
    out = tmp_path / "out"
    assert main(["synth", "--config", str(cfg), "--out", str(out)]) == 0
    for regions in (out / "gt").glob("*.regions.txt"):
        assert regions.read_text() == ""


def test_train_outputs_and_checkpoint_roundtrip(pipeline):
    model = pipeline["model"]
    history = (model / "history.txt").read_text().strip().splitlines()
    assert len(history) == 3
    params, loss = load_checkpoint(model / "checkpoint.omc1")
    losses = [float(line.split(",")[1]) for line in history]
    assert loss == pytest.approx(min(losses), rel=1e-7)
    # reload-save produces the identical file
    from memvad.network import save_checkpoint

    copy = model / "copy.omc1"
    save_checkpoint(params, loss, copy)
    assert copy.read_bytes() == (model / "checkpoint.omc1").read_bytes()


def test_train_rerun_identical_history(pipeline, tmp_path):
    out = tmp_path / "model2"
    assert (
        main(
            [
                "train",
                "--config",
                str(pipeline["cfg"]),
                "--out",
                str(out),
                "--train-manifest",
                str(pipeline["data"] / "train_manifest.txt"),
            ]
        )
        == 0
    )
    assert (out / "history.txt").read_text() == (
        pipeline["model"] / "history.txt"
    ).read_text()


def test_score_outputs(pipeline):
    scored = pipeline["scored"]
    tables = sorted((scored / "scores").iterdir())
    frames = sorted((scored / "frames").iterdir())
    assert [p.name for p in tables] == ["test_000.scores.txt", "test_001.scores.txt"]
    assert [p.name for p in frames] == ["test_000.frames.txt", "test_001.frames.txt"]
    for table_path in tables:
        table = read_score_table(table_path)
        assert np.all((table.score >= 0) & (table.score <= 1))


def test_score_no_smoothing_matches_max_aggregation(pipeline, tmp_path):
    out = tmp_path / "raw"
    assert (
        main(
            [
                "score",
                "--config",
                str(pipeline["cfg"]),
                "--out",
                str(out),
                "--checkpoint",
                str(pipeline["model"] / "checkpoint.omc1"),
                "--test-manifest",
                str(pipeline["data"] / "test_manifest.txt"),
                "--no-smoothing",
            ]
        )
        == 0
    )
    for frames_path in (out / "frames").iterdir():
        video_id = frames_path.name.split(".")[0]
        table = read_score_table(out / "scores" / f"{video_id}.scores.txt")
        frame_scores = read_frame_scores(frames_path)
        expected = np.zeros(len(frame_scores))
        for frame, score in zip(table.frame_index, table.score):
            expected[frame] = max(expected[frame], score)
        np.testing.assert_allclose(frame_scores, np.round(expected, 6), atol=1e-6)


def test_score_scale_adjust_flag(pipeline, tmp_path):
    out = tmp_path / "adjusted"
    assert (
        main(
            [
                "score",
                "--config",
                str(pipeline["cfg"]),
                "--out",
                str(out),
                "--checkpoint",
                str(pipeline["model"] / "checkpoint.omc1"),
                "--test-manifest",
                str(pipeline["data"] / "test_manifest.txt"),
                "--scale-adjust",
            ]
        )
        == 0
    )
    base = read_score_table(pipeline["scored"] / "scores" / "test_000.scores.txt")
    adjusted = read_score_table(out / "scores" / "test_000.scores.txt")
    assert np.all((adjusted.score >= 0) & (adjusted.score <= 1))
    assert not np.array_equal(base.score, adjusted.score)


def test_eval_report_and_curves(pipeline):
    report_dir = pipeline["root"] / "report"
    assert (
        main(
            [
                "eval",
                "--config",
                str(pipeline["cfg"]),
                "--out",
                str(report_dir),
                "--test-manifest",
                str(pipeline["data"] / "test_manifest.txt"),
                "--gt-dir",
                str(pipeline["data"] / "gt"),
                "--scores-dir",
                str(pipeline["scored"]),
            ]
        )
        == 0
    )
    report = json.loads((report_dir / "report.json").read_text())
    for key in ("frame_auc", "rbdc", "tbdc"):
        assert 0.0 <= report[key] <= 1.0
    assert report["seed"] == 11
    for name in ("roc_curve.csv", "rbdc_curve.csv", "tbdc_curve.csv"):
        lines = (report_dir / name).read_text().splitlines()
        assert lines[0] == "threshold,x,y"
        assert len(lines) > 1
    for name in ("roc.png", "rbdc.png", "tbdc.png"):
        assert (report_dir / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_eval_no_figures_flag(pipeline, tmp_path):
    report_dir = tmp_path / "nofig"
    assert (
        main(
            [
                "eval",
                "--config",
                str(pipeline["cfg"]),
                "--out",
                str(report_dir),
                "--test-manifest",
                str(pipeline["data"] / "test_manifest.txt"),
                "--gt-dir",
                str(pipeline["data"] / "gt"),
                "--scores-dir",
                str(pipeline["scored"]),
                "--no-figures",
            ]
        )
        == 0
    )
    assert (report_dir / "report.json").exists()
    assert not (report_dir / "roc.png").exists()


def test_eval_perfect_and_chance_scores(pipeline, tmp_path, capsys):
    # hand-built score files: ground-truth boxes at score 1, an extra
    # normal box per frame at 0 -> all metrics reach 1.0
    data = pipeline["data"]
    out = tmp_path / "perfect"
    (out / "scores").mkdir(parents=True)
    (out / "frames").mkdir(parents=True)
    from memvad.groundtruth import read_ground_truth

    for i in range(2):
        vid = f"test_{i:03d}"
        gt = read_ground_truth(
            data / "gt" / f"{vid}.labels.txt", data / "gt" / f"{vid}.regions.txt"
        )
        lines = []
        for j, region in enumerate(gt.regions):
            x, y, w, h = region.bbox
            lines.append(
                f"{vid},{region.frame_index},{100 + j},{x:.2f},{y:.2f},{w:.2f},{h:.2f},1.000000\n"
            )
        for frame in range(gt.frame_count):
            lines.append(f"{vid},{frame},0,1.00,1.00,5.00,5.00,0.000000\n")
        (out / "scores" / f"{vid}.scores.txt").write_text("".join(lines))
        frame_scores = gt.frame_labels.astype(float)
        (out / "frames" / f"{vid}.frames.txt").write_text(
            "".join(f"{v:.6f}\n" for v in frame_scores)
        )
    report_dir = tmp_path / "perfect_report"
    assert (
        main(
            [
                "eval",
                "--config",
                str(pipeline["cfg"]),
                "--out",
                str(report_dir),
                "--test-manifest",
                str(data / "test_manifest.txt"),
                "--gt-dir",
                str(data / "gt"),
                "--scores-dir",
                str(out),
            ]
        )
        == 0
    )
    report = json.loads((report_dir / "report.json").read_text())
    assert report["frame_auc"] == 1.0
    assert report["rbdc"] == 1.0
    assert report["tbdc"] == 1.0

    # chance-level sanity: random frame scores -> AUC near 0.5
    rng = np.random.default_rng(0)
    for i in range(2):
        vid = f"test_{i:03d}"
        n = len(read_frame_scores(out / "frames" / f"{vid}.frames.txt"))
        (out / "frames" / f"{vid}.frames.txt").write_text(
            "".join(f"{v:.6f}\n" for v in rng.uniform(0, 1, n))
        )
    report_dir2 = tmp_path / "chance_report"
    assert (
        main(
            [
                "eval",
                "--config",
                str(pipeline["cfg"]),
                "--out",
                str(report_dir2),
                "--test-manifest",
                str(data / "test_manifest.txt"),
                "--gt-dir",
                str(data / "gt"),
                "--scores-dir",
                str(out),
                "--no-figures",
            ]
        )
        == 0
    )
    report = json.loads((report_dir2 / "report.json").read_text())
    assert abs(report["frame_auc"] - 0.5) < 0.2


def test_error_reporting_is_machine_parsable(tmp_path, capsys):
    code = main(["train", "--out", str(tmp_path / "x")])
    captured = capsys.readouterr()
    assert code == 1
    assert captured.err.startswith("error: ConfigError:")
    assert len(captured.err.strip().splitlines()) == 1


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no_such_key = 1\n")
    code = main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "ConfigError" in capsys.readouterr().err


def test_missing_checkpoint_reports_error(pipeline, tmp_path, capsys):
    code = main(
        [
            "score",
            "--out",
            str(tmp_path / "s"),
            "--checkpoint",
            str(tmp_path / "missing.omc1"),
            "--test-manifest",
            str(pipeline["data"] / "test_manifest.txt"),
        ]
    )
    assert code == 1


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--trials", "2", "--seed", "5"]) == 0
    out = capsys.readouterr().out
    assert "max rel error" in out
    assert "instances under" in out
