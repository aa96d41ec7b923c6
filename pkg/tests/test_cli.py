import json
import subprocess
import sys

import numpy as np
import pytest

from restorex.artifact_io import Tensor3, read_png, read_tensor_file, write_png, write_tensor_file
from restorex.cli import main, resolve_threads
from restorex.fixtures import declining_spec, generate


@pytest.fixture(scope="module")
def fixture_tree(tmp_path_factory):
    root = tmp_path_factory.mktemp("fx")
    assert main(["fixtures", "--seed", "42", "--images", "6", "--stages", "3", "--out", str(root), "--quiet"]) == 0
    return root


def test_help(capsys):
    assert main(["eval", "--help"]) == 0
    assert "--detections" in capsys.readouterr().out


@pytest.mark.parametrize("cmd", ["eval", "phi", "monitor", "gradcam", "psnr", "fixtures", "similarity", "report"])
def test_every_subcommand_has_help(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    assert "usage: restorex " + cmd in capsys.readouterr().out


def test_missing_required_flag(capsys):
    assert main(["eval", "--ground-truth", "g.json"]) == 2
    err = capsys.readouterr().err.splitlines()
    diag = json.loads(err[0])
    assert diag["error"] == "UsageError" and "--detections" in diag["detail"]


def test_no_command(capsys):
    assert main([]) == 2


def test_invalid_input_exit_1(tmp_path, capsys):
    (tmp_path / "d.json").write_text('{"images": [{"id": "a", "width": 5, "height": 5, "detections": '
                                     '[{"box": [0,0,1,1], "label": "car", "score": 1.5}]}]}')
    (tmp_path / "g.json").write_text('{"images": []}')
    assert main(["eval", "--detections", str(tmp_path / "d.json"), "--ground-truth", str(tmp_path / "g.json")]) == 1
    (line,) = capsys.readouterr().err.strip().splitlines()
    assert json.loads(line)["error"] == "RangeError"


def test_missing_file_exit_1(tmp_path, capsys):
    assert main(["psnr", "--a", str(tmp_path / "nope.png"), "--b", str(tmp_path / "nope.png")]) == 1


def test_monitor_declining_exits_3(tmp_path, capsys):
    manifest = generate(declining_spec(), tmp_path)
    policy = tmp_path / "policy.json"
    policy.write_text('{"drop_tolerance": 0.05, "patience": 2, "min_phi": 0.0}')
    out = tmp_path / "trajectory.json"
    code = main(["monitor", "--manifest", str(manifest), "--policy", str(policy), "--out", str(out)])
    assert code == 3
    doc = json.loads(out.read_text())
    assert [s["decision"] for s in doc["stages"]] == ["continue", "flag", "stop"]
    assert [s["phi"] for s in doc["stages"]] == [0.5, 0.2, 0.1]
    assert doc["rollback_to"] == 1
    assert len(doc["deltas"]) == 2


def test_monitor_continue_exit_0(fixture_tree, tmp_path, capsys):
    out = tmp_path / "t.json"
    policy = tmp_path / "p.json"
    policy.write_text('{"drop_tolerance": 1.0, "patience": 1}')
    code = main(["monitor", "--manifest", str(fixture_tree / "manifest.json"), "--policy", str(policy),
                 "--attention", "--out", str(out), "--threads", "2"])
    assert code == 0
    doc = json.loads(out.read_text())
    assert all(0.0 <= s["attention"] <= 1.0 for s in doc["stages"])


def test_reports_byte_identical(fixture_tree, tmp_path, capsys):
    args = ["eval", "--detections", str(fixture_tree / "stage_1/detections.json"),
            "--ground-truth", str(fixture_tree / "ground_truth.json"),
            "--classes", "car,bus,truck,motorcycle,person,bicycle"]
    main(args + ["--out", str(tmp_path / "a.json"), "--markdown", str(tmp_path / "a.md")])
    main(args + ["--out", str(tmp_path / "b.json"), "--markdown", str(tmp_path / "b.md")])
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert (tmp_path / "a.md").read_bytes() == (tmp_path / "b.md").read_bytes()
    doc = json.loads((tmp_path / "a.json").read_text())
    assert set(doc) == {"classes", "map", "display", "provenance"}
    assert list(doc["classes"]) == ["car", "bus", "truck", "motorcycle", "person", "bicycle"]
    assert "generated_at" not in doc["provenance"]
    main(args + ["--out", str(tmp_path / "c.json"), "--timestamp"])
    assert "generated_at" in json.loads((tmp_path / "c.json").read_text())["provenance"]


def test_eval_to_stdout(fixture_tree, capsys):
    code = main(["eval", "--detections", str(fixture_tree / "stage_2/detections.json"),
                 "--ground-truth", str(fixture_tree / "ground_truth.json")])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert 0.0 <= doc["map"] <= 1.0


def test_phi_command(fixture_tree, capsys):
    code = main(["phi", "--detections", str(fixture_tree / "stage_1/detections.json"),
                 "--ground-truth", str(fixture_tree / "ground_truth.json"), "--samples"])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["n"] == 6 and len(doc["samples"]) == 6
    assert doc["phi"] == pytest.approx(sum(s["term"] for s in doc["samples"]) / 6)


def test_report_command(fixture_tree, tmp_path, capsys):
    rows = []
    for s in (1, 2, 3):
        out = tmp_path / f"r{s}.json"
        main(["eval", "--detections", str(fixture_tree / f"stage_{s}/detections.json"),
              "--ground-truth", str(fixture_tree / "ground_truth.json"),
              "--classes", "car,bus,truck,motorcycle,person,bicycle", "--out", str(out), "--quiet"])
        rows += ["--row", f"Stage {s}={out}"]
    traj = tmp_path / "t.json"
    main(["monitor", "--manifest", str(fixture_tree / "manifest.json"), "--out", str(traj), "--quiet"])
    md = tmp_path / "run.md"
    assert main(["report", "--technique", "Synthetic", *rows, "--trajectory", str(traj),
                 "--markdown", str(md), "--out", str(tmp_path / "run.json")]) == 0
    lines = md.read_text().strip().splitlines()
    assert len(lines) == 3 + 3
    assert "phi" in lines[0]
    doc = json.loads((tmp_path / "run.json").read_text())
    assert [r["label"] for r in doc["rows"]] == ["Stage 1", "Stage 2", "Stage 3"]


def test_report_bad_row(capsys):
    assert main(["report", "--technique", "x", "--row", "nolabel"]) == 2


def test_gradcam_command(tmp_path, capsys):
    f = Tensor3(np.array([[[1, -1], [0, 2]], [[1, 1], [1, -3]]], dtype=np.float32))
    g = Tensor3(np.stack([np.full((2, 2), 0.5), np.full((2, 2), 2.0)]))
    write_tensor_file(tmp_path / "f.rxt", f)
    write_tensor_file(tmp_path / "g.rxt", g)
    img = np.zeros((8, 8, 3), dtype=np.uint8)
    write_png(tmp_path / "img.png", img)
    code = main(["gradcam", "--features", str(tmp_path / "f.rxt"), "--gradients", str(tmp_path / "g.rxt"),
                 "--out", str(tmp_path / "cam.rxt"), "--overlay", str(tmp_path / "img.png"),
                 "--out-png", str(tmp_path / "o.png"), "--alpha", "1.0"])
    assert code == 0
    cam = read_tensor_file(tmp_path / "cam.rxt")
    assert cam.shape == (1, 2, 2)
    assert cam.array[0].tolist() == [[2.5, 1.5], [2.0, 0.0]]
    over = read_png(tmp_path / "o.png")
    assert over.shape == (8, 8, 3)
    assert over[0, 0].tolist() == [255, 0, 0]  # peak cell maps to red
    assert over[7, 7].tolist() == [0, 0, 255]  # zero cell maps to blue


def test_gradcam_overlay_needs_out_png(tmp_path, capsys):
    write_tensor_file(tmp_path / "f.rxt", Tensor3(np.ones((1, 2, 2))))
    code = main(["gradcam", "--features", str(tmp_path / "f.rxt"), "--gradients", str(tmp_path / "f.rxt"),
                 "--out", str(tmp_path / "c.rxt"), "--overlay", str(tmp_path / "x.png")])
    assert code == 2


def test_psnr_command(tmp_path, capsys):
    img = np.full((4, 4, 3), 100, dtype=np.uint8)
    write_png(tmp_path / "a.png", img)
    write_png(tmp_path / "b.png", img + 1)
    assert main(["psnr", "--a", str(tmp_path / "a.png"), "--b", str(tmp_path / "a.png")]) == 0
    assert capsys.readouterr().out.strip() == "inf"
    assert main(["psnr", "--a", str(tmp_path / "a.png"), "--b", str(tmp_path / "b.png")]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(48.1308, abs=1e-3)


def test_similarity_command(tmp_path, capsys):
    assert main(["similarity", "--p", "Taxi", "--a", "car"]) == 0
    assert capsys.readouterr().out.strip() == "1"
    assert main(["similarity", "--mode", "strict", "--p", "race car", "--a", "car"]) == 0
    assert capsys.readouterr().out.strip() == "0"
    table = tmp_path / "t.json"
    table.write_text('{"mode": "grouped", "groups": [{"head": "car", "members": []}]}')
    assert main(["similarity", "--table", str(table), "--p", "taxi", "--a", "car"]) == 0
    assert capsys.readouterr().out.strip() == "0"


def test_global_flags_either_side(tmp_path, capsys):
    img = np.zeros((2, 2, 3), dtype=np.uint8)
    write_png(tmp_path / "a.png", img)
    assert main(["--json-only", "psnr", "--a", str(tmp_path / "a.png"), "--b", str(tmp_path / "a.png")]) == 0
    assert json.loads(capsys.readouterr().out) == {"psnr_db": "inf"}
    assert main(["psnr", "--json-only", "--a", str(tmp_path / "a.png"), "--b", str(tmp_path / "a.png")]) == 0
    assert json.loads(capsys.readouterr().out) == {"psnr_db": "inf"}


def test_threads_resolution(monkeypatch):
    monkeypatch.setenv("RESTOREX_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(5) == 5
    monkeypatch.delenv("RESTOREX_THREADS")
    assert resolve_threads(None) >= 1


def test_bad_threads_env(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("RESTOREX_THREADS", "zero")
    assert main(["similarity", "--p", "a", "--a", "a"]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "restorex", "similarity", "--p", "groom", "--a", "person"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "1"
