import json
import math
import subprocess
import sys

import pytest

from panovos.cli import EXIT_CAPACITY, EXIT_DATA, EXIT_USAGE, run


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run(["synth", "--output", str(root / "gt"), "--videos", "4", "--seed", "3",
                "--height", "32", "--width", "32", "--frames", "4"]) == 0
    return root


def test_synth_twice_identical(tmp_path, monkeypatch):
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        monkeypatch.chdir(tmp_path / name)
        assert run(["synth", "--videos", "5", "--seed", "7", "--out", "corpus"]) == 0
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a and a == b


def test_synth_seed_changes_output(tmp_path):
    run(["synth", "--videos", "2", "--seed", "1", "--out", str(tmp_path / "a")])
    run(["synth", "--videos", "2", "--seed", "2", "--out", str(tmp_path / "b")])
    assert _tree(tmp_path / "a") != _tree(tmp_path / "b")


def test_usage_errors(capsys):
    assert run(["bogus"]) == EXIT_USAGE
    err = _error(capsys)
    assert err["error"] == "usage" and err["exit_code"] == EXIT_USAGE
    assert run(["synth"]) == EXIT_USAGE
    assert run(["synth", "--out", "x", "--videos", "0"]) == EXIT_USAGE
    assert run(["eval", "--gt", "a", "--pred", "b", "--out", "c", "--boundary-d", "-1"]) == EXIT_USAGE
    assert run([]) == EXIT_USAGE


def test_data_error_for_missing_corpus(tmp_path, capsys):
    assert run(["stats", "--input", str(tmp_path / "missing")]) == EXIT_DATA
    assert _error(capsys)["error"] == "data"
    assert run(["eval", "--gt", str(tmp_path), "--pred", str(tmp_path), "--out", str(tmp_path / "r.json")]) \
        == EXIT_DATA


def test_decay_rejects_non_report(tmp_path, capsys):
    (tmp_path / "r.json").write_text(json.dumps({"x": 1}))
    assert run(["decay", "--report", str(tmp_path / "r.json")]) == EXIT_DATA


def test_eval_pred_equals_gt(corpus, tmp_path):
    gt = str(corpus / "gt")
    assert run(["eval", "--gt", gt, "--pred", gt, "--out", str(tmp_path / "r.json")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["schema_version"] == 1
    assert report["provenance"]["command"] == "eval"
    m = report["metrics"]
    for key in ("G", "G_s", "G_u", "G_th", "G_sf", "M_th_s", "M_th_u", "M_sf_s", "M_sf_u",
                "B_th_s", "B_th_u", "B_sf_s", "B_sf_u"):
        assert m[key] == 1.0 or key in m["absent"]
    assert m["G"] == 1.0
    assert all(o["mask_iou"] == 1.0 and o["boundary_iou"] == 1.0 for o in report["objects"])


def test_capacity_exit_code(corpus, tmp_path, capsys):
    code = run(["demo", "--input", str(corpus / "gt"), "--out", str(tmp_path / "p"),
                "--mode", "generic", "--capacity", "1", "--dim", "32"])
    assert code == EXIT_CAPACITY
    err = _error(capsys)
    assert err["error"] == "capacity" and err["videos"]


def test_demo_rejects_bad_video_dir(tmp_path):
    assert run(["demo", "--video", str(tmp_path), "--out", str(tmp_path / "p")]) == EXIT_DATA


def test_pipeline_and_worker_invariance(corpus, tmp_path):
    gt = str(corpus / "gt")
    outs = {}
    for workers in ("1", "2"):
        pred, rep = tmp_path / f"pred{workers}", tmp_path / f"r{workers}.json"
        assert run(["demo", "--input", gt, "--out", str(pred), "--chunk", "--workers", workers]) == 0
        assert run(["eval", "--gt", gt, "--pred", str(pred), "--out", str(rep), "--workers", workers]) == 0
        outs[workers] = (_tree(pred), json.loads(rep.read_text()))
    # manifests echo the differing --workers and --out flags; masks must match exactly
    masks = {k: v for k, v in outs["1"][0].items() if k.endswith(".png")}
    assert masks and masks == {k: v for k, v in outs["2"][0].items() if k.endswith(".png")}
    assert outs["1"][1]["metrics"] == outs["2"][1]["metrics"]
    assert outs["1"][1]["objects"] == outs["2"][1]["objects"]


def test_decay_csv_from_pipeline(tmp_path):
    root = str(tmp_path)
    assert run(["synth", "--out", f"{root}/gt", "--videos", "6", "--seed", "3"]) == 0
    assert run(["demo", "--input", f"{root}/gt", "--out", f"{root}/pred", "--chunk"]) == 0
    assert run(["eval", "--gt", f"{root}/gt", "--pred", f"{root}/pred", "--out", f"{root}/r.json"]) == 0
    lam = json.loads((tmp_path / "r.json").read_text())["metrics"]["lambda"]
    assert lam is not None and math.isfinite(lam)
    assert run(["decay", "--report", f"{root}/r.json", "--out", f"{root}/decay.csv"]) == 0
    lines = (tmp_path / "decay.csv").read_text().splitlines()
    assert lines[0].startswith("# lambda=") and lines[1] == "n,g,fit"
    assert len(lines) > 3
    for row in lines[2:]:
        n, g, fit = row.split(",")
        assert math.isclose(float(fit), math.exp(-lam * int(n) / 100))


def test_decay_without_positive_scores(corpus, tmp_path, capsys):
    gt = str(corpus / "gt")
    run(["demo", "--input", gt, "--out", str(tmp_path / "p"), "--chunk"])
    run(["eval", "--gt", gt, "--pred", str(tmp_path / "p"), "--out", str(tmp_path / "r.json")])
    report = json.loads((tmp_path / "r.json").read_text())
    # this corpus has a video with zero score, so the log fit is undefined
    assert report["metrics"]["lambda"] is None and report["decay"]["error"]
    assert run(["decay", "--report", str(tmp_path / "r.json")]) == EXIT_DATA
    assert _error(capsys)["error"] == "data"


def test_single_video_demo(corpus, tmp_path):
    video = corpus / "gt" / "video_0000"
    assert run(["demo", "--video", str(video), "--out", str(tmp_path / "p"), "--mode", "generic",
                "--chunk"]) == 0
    assert (tmp_path / "p" / "video_0000").is_dir()
    assert not (tmp_path / "p" / "video_0001").exists()


def test_stats(corpus, tmp_path):
    assert run(["stats", "--gt", str(corpus / "gt"), "--out", str(tmp_path / "s.json")]) == 0
    s = json.loads((tmp_path / "s.json").read_text())
    assert s["videos"] == 4 and s["frames"] == 16
    assert sum(s["objects"].values()) > 0


def test_convert_from_panoptic(tmp_path):
    assert run(["synth", "--panoptic", "--videos", "6", "--seed", "2", "--height", "32", "--width", "32",
                "--frames", "3", "--out", str(tmp_path / "pan")]) == 0
    assert run(["convert", "--input", str(tmp_path / "pan"), "--out", str(tmp_path / "vos"),
                "--unseen-thing", "2", "--unseen-stuff", "1"]) == 0
    summary = json.loads((tmp_path / "vos" / "conversion.json").read_text())
    assert len(summary["split"]["unseen_thing"]) == 2
    for part in ("train", "valid"):
        assert (tmp_path / "vos" / part / "classes.json").is_file()
    assert run(["stats", "--input", str(tmp_path / "vos" / "valid")]) == 0


def test_report_independent_of_cwd(corpus, tmp_path, monkeypatch):
    import shutil
    reports = []
    for name in ("x", "y"):
        work = tmp_path / name
        shutil.copytree(corpus / "gt", work / "gt")
        monkeypatch.chdir(work)
        assert run(["demo", "--input", "gt", "--out", "pred", "--chunk"]) == 0
        assert run(["eval", "--gt", "gt", "--pred", "pred", "--out", "report.json"]) == 0
        reports.append((work / "report.json").read_bytes())
    assert reports[0] == reports[1]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "panovos", "stats", "--input", str(tmp_path / "nope")],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_DATA
    assert json.loads(proc.stderr)["exit_code"] == EXIT_DATA
