"""Exit criteria for the harness, one test per criterion.

Run alone with ``pytest tests/test_acceptance.py``; the terminal summary
lists PASS/FAIL per criterion.
"""

import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from restorex.artifact_io import BoundingBox, Detection, GroundTruthObject, Tensor3, parse_tensor, write_tensor
from restorex.cli import main
from restorex.detection_eval import average_precision, display_percent, match_class, mean_ap, psnr
from restorex.fixtures import FixtureSpec, declining_spec, generate
from restorex.gradcam import HeatMap, NeuronWeights, attention_in_box, cam, gradcam
from restorex.oracles import ap_bruteforce, gradcam_naive
from restorex.quality_monitor import (
    CONTINUE,
    FLAG,
    STOP,
    GuidancePolicy,
    SampleScore,
    StageQuality,
    mean_improvement,
    phi,
    trajectory_from_qualities,
)
from restorex.similarity import DAWN_CLASSES, DEFAULT_GROUPS, default_table, normalize_label, similarity


def test_c01_gradcam_oracle_equivalence():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(500):
        k = int(rng.integers(1, 9))
        u, v = (int(x) for x in rng.integers(1, 17, size=2))
        f = Tensor3(rng.standard_normal((k, u, v)))
        g = Tensor3(rng.standard_normal((k, u, v)))
        worst = max(worst, float(np.max(np.abs(gradcam(f, g).values - np.array(gradcam_naive(f, g))))))
    assert worst <= 1e-6

    # integer-valued features keep every sum exact, so equality is exact
    f = Tensor3(rng.integers(-5, 6, size=(6, 7, 9)))
    ones = Tensor3(np.ones((6, 7, 9)))
    expected = np.maximum(f.array.astype(np.float64).sum(axis=0), 0.0)
    assert np.array_equal(gradcam(f, ones).values, expected)
    assert gradcam_naive(f, ones) == expected.tolist()

    pos = Tensor3(rng.uniform(0.1, 2.0, size=(3, 5, 5)))
    assert not cam(pos, NeuronWeights(np.array([-1.0, -0.5, -2.0]))).values.any()
    assert not np.array(gradcam_naive(pos, Tensor3(-np.ones((3, 5, 5))))).any()


def _scene(rng):
    gts, dets = [], []
    for i in range(3):
        for _ in range(int(rng.integers(0, 5))):
            x, y = rng.uniform(0, 40, size=2)
            w, h = rng.uniform(4, 20, size=2)
            gts.append(GroundTruthObject(f"im{i}", BoundingBox(x, y, x + w, y + h), "car"))
    for _ in range(int(rng.integers(0, 21))):
        image = f"im{int(rng.integers(3))}"
        own = [g.box for g in gts if g.image_id == image]
        if own and rng.random() < 0.7:
            b = own[int(rng.integers(len(own)))]
            dx, dy = rng.uniform(-3, 3, size=2)
            box = BoundingBox(max(b.x_min + dx, 0), max(b.y_min + dy, 0), b.x_max + dx + 4, b.y_max + dy + 4)
        else:
            x, y = rng.uniform(0, 40, size=2)
            box = BoundingBox(x, y, x + rng.uniform(4, 20), y + rng.uniform(4, 20))
        dets.append(Detection(image, box, "car", float(rng.uniform())))
    return dets, gts


def test_c02_ap_oracle_equivalence():
    rng = np.random.default_rng(2)
    for _ in range(500):
        dets, gts = _scene(rng)
        m = match_class(dets, gts, 0.5)
        assert abs(average_precision(m.flags, m.n_gt) - ap_bruteforce(dets, gts, 0.5)) <= 1e-9
    assert average_precision([True, False, True], 2) == pytest.approx(0.8333333333333334, abs=1e-12)


def test_c03_phi_exactness():
    smp = [SampleScore("a", "x", "x", 1, 0.8), SampleScore("b", "x", "y", 0, 0.9), SampleScore("c", "x", "x", 1, 0.5)]
    assert abs(phi(smp).phi - 0.4333333333333333) <= 1e-12

    rng = np.random.default_rng(3)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        s = rng.integers(0, 2, size=n)
        d = rng.uniform(0, 1, size=n)
        q = phi([SampleScore(str(i), None, None, int(s[i]), float(d[i])) for i in range(n)])
        assert 0.0 <= q.phi <= 1.0
        lam = float(rng.uniform(0.01, 1.0))
        scaled = phi([SampleScore(str(i), None, None, int(s[i]), float(d[i]) * lam) for i in range(n)])
        assert scaled.phi == pytest.approx(lam * q.phi, rel=1e-12, abs=1e-15)
        half = phi([SampleScore(str(i), None, None, int(s[i]), float(d[i]) * 0.5) for i in range(n)])
        assert half.phi_exact == q.phi_exact / 2

    for _ in range(200):
        values = [Fraction(float(x)) for x in rng.uniform(0, 1, size=int(rng.integers(1, 10)))]
        t = trajectory_from_qualities([StageQuality(i + 1, 1, v) for i, v in enumerate(values)])
        assert sum(t.deltas_exact, Fraction(0)) == values[-1] - values[0]


def test_c04_similarity_table_fidelity():
    grouped, strict = default_table("grouped"), default_table("strict")
    pairs = [(normalize_label(m), head) for head, members in DEFAULT_GROUPS.items() for m in members]
    assert len(pairs) == 4 + 7 + 1 + 3 + 7
    for member, head in pairs:
        assert similarity(member, head, grouped) == 1
        assert similarity(member, head, strict) == 0
    vocab = sorted({x for p in pairs for x in p})
    for p in vocab:
        for a in vocab:
            assert similarity(p, a, strict) == int(p == a)
    assert similarity("taxi", "car", grouped) == 1
    assert similarity("groom", "person", grouped) == 1
    assert similarity("trolley bus", "bus", grouped) == 1
    assert similarity("race car", "car", strict) == 0


def test_c05_table1_display_format():
    six = list(DAWN_CLASSES)
    assert display_percent(mean_ap(six, {"car": 0.11})) == 2
    assert display_percent(mean_ap(six, {"car": 0.17})) == 3
    # published stage-5 row prints 10; a 6-class mean of car 48 gives 8
    stage5 = display_percent(mean_ap(six, {"car": 0.48}))
    assert stage5 == 8 and stage5 != 10


def test_c06_improvement_aggregation():
    assert mean_improvement([0, 40, 275, 400]) == 178.75
    assert math.floor(mean_improvement([0, 40, 275, 400])) == 178


def test_c07_guidance_policy(tmp_path, capsys):
    t = trajectory_from_qualities(
        [StageQuality(i + 1, 10, Fraction(v)) for i, v in enumerate((0.5, 0.2, 0.1))],
        GuidancePolicy(drop_tolerance=0.05, patience=2),
    )
    assert t.decisions == [CONTINUE, FLAG, STOP]
    assert t.rollback_to == 1

    manifest = generate(declining_spec(), tmp_path)
    policy = tmp_path / "policy.json"
    policy.write_text(json.dumps({"drop_tolerance": 0.05, "patience": 2, "min_phi": 0.0}))
    assert main(["monitor", "--manifest", str(manifest), "--policy", str(policy), "--quiet",
                 "--out", str(tmp_path / "t.json")]) == 3


def _tree(root: Path):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c08_round_trip_and_determinism(tmp_path, capsys):
    rng = np.random.default_rng(8)
    for _ in range(1000):
        k, u, v = (int(x) for x in rng.integers(1, 9, size=3))
        t = Tensor3(rng.standard_normal((k, u, v)) * float(rng.uniform(1e-3, 1e3)))
        raw = write_tensor(t)
        assert parse_tensor(raw) == t and write_tensor(parse_tensor(raw)) == raw

    spec = FixtureSpec(seed=42, n_images=5, n_stages=3)
    generate(spec, tmp_path / "a")
    generate(spec, tmp_path / "b")
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")

    fx = tmp_path / "a"
    outputs = []
    for run in ("x", "y"):
        main(["monitor", "--manifest", str(fx / "manifest.json"), "--quiet", "--out", str(tmp_path / f"m{run}.json")])
        main(["eval", "--detections", str(fx / "stage_3/detections.json"), "--ground-truth",
              str(fx / "ground_truth.json"), "--quiet", "--out", str(tmp_path / f"e{run}.json"),
              "--markdown", str(tmp_path / f"e{run}.md")])
        outputs.append([(tmp_path / f"{n}{run}.{ext}").read_bytes() for n, ext in (("m", "json"), ("e", "json"), ("e", "md"))])
    assert outputs[0] == outputs[1]


def test_c09_attention_in_box():
    rng = np.random.default_rng(9)
    heat = HeatMap(rng.uniform(0, 1, size=(12, 16)))
    assert attention_in_box(heat, [BoundingBox(0, 0, 16, 12)]).value == 1.0
    uniform = HeatMap(np.ones((12, 16)))
    assert abs(attention_in_box(uniform, [BoundingBox(0, 0, 8, 6)]).value - 0.25) <= 1e-6
    for _ in range(200):
        H, W = (int(x) for x in rng.integers(2, 24, size=2))
        heat = HeatMap(rng.uniform(0, 1, size=(H, W)))
        boxes, prev = [], 0.0
        for _ in range(4):
            x0, x1 = sorted(rng.uniform(0, W, size=2))
            y0, y1 = sorted(rng.uniform(0, H, size=2))
            boxes.append(BoundingBox(x0, y0, max(x1, x0 + 1e-3), max(y1, y0 + 1e-3)))
            cur = attention_in_box(heat, boxes).value
            assert cur >= prev
            prev = cur


def test_c10_psnr_closed_forms():
    rng = np.random.default_rng(10)
    img = rng.integers(0, 255, size=(16, 16, 3), dtype=np.uint8)
    assert psnr(img, img) == math.inf
    assert abs(psnr(img, img + 1) - 48.1308) <= 1e-3
    black = np.zeros((4, 4, 3), dtype=np.uint8)
    assert psnr(black, np.full_like(black, 255)) == 0.0


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
