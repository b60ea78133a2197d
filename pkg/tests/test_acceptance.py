"""Acceptance criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py`` (the lines appear in the
terminal summary) or directly with ``python3 tests/test_acceptance.py``.
"""
import functools
import hashlib
import io
import sys
import tempfile
import time
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import finite_difference_check, naive_network_forward, random_small_model  # noqa: E402
from skelwatch import cli, dataset  # noqa: E402
from skelwatch.evaluation import match_detections, read_ground_truth  # noqa: E402
from skelwatch.indrnn import load_model, network_forward  # noqa: E402
from skelwatch.skeleton import (CLIP_LEN, FeatureClip, SkeletonFrame, build_clip_features,  # noqa: E402
                                encode_skf1)
from skelwatch.streaming import (DetectionEvent, Detector, StreamConfig,  # noqa: E402
                                 parse_event_log, replay_source, sample_stream, window_stream)

DATA = Path(__file__).parent / "data"
RESULTS = []
_WORK = Path(tempfile.mkdtemp(prefix="skelwatch-acceptance-"))


def run_cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        try:
            code = cli.main([str(a) for a in argv])
        except SystemExit as exc:
            code = exc.code
    return code, out.getvalue(), err.getvalue()


def tree_digest(root):
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


# --- criteria ----------------------------------------------------------------

def gradient_correctness():
    t0 = time.perf_counter()
    worst, worst_two_point, skipped = 0.0, 0.0, 0
    for seed in range(20):
        model = random_small_model(seed, hidden=8, num_classes=4, clip_len=5)
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(2, 5, 57)), rng.integers(0, 4, 2)
        res = finite_difference_check(model, x, y, step=1e-4, order=4)
        worst = max(worst, max(v[0] for v in res.values()))
        skipped += sum(v[2] for v in res.values())
        if seed < 3:
            res2 = finite_difference_check(model, x, y, step=1e-4, order=2)
            worst_two_point = max(worst_two_point, max(v[0] for v in res2.values()))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 60
    return ok, (f"max rel err {worst:.2e} over 20 seeds (5-point central stencil, step 1e-4; "
                f"{skipped} kink-straddling coordinates excluded); two-point stencil on seeds 0-2 "
                f"{worst_two_point:.2e}; {elapsed:.1f} s")


def oracle_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for case in range(50):
        rng = np.random.default_rng(500 + case)
        hidden = int(rng.integers(2, 10))
        classes = int(rng.integers(2, 6))
        t_len = int(rng.integers(1, 8))
        batch = int(rng.integers(1, 4))
        readout = ("last", "mean")[case % 2]
        mode = ("eval", "train")[(case // 2) % 2]
        if mode == "train" and batch * t_len < 2:
            batch = 2
        model = random_small_model(case, hidden=hidden, num_classes=classes, clip_len=t_len, readout=readout)
        x = rng.normal(size=(batch, t_len, 57))
        got = network_forward(x, model, mode)
        ref = naive_network_forward(x, model, mode)
        worst = max(worst, float(np.max(np.abs(got - ref) / np.abs(ref))))
    elapsed = time.perf_counter() - t0
    return worst <= 1e-9, f"max rel diff {worst:.2e} over 50 cases; {elapsed:.1f} s"


def feature_invariances():
    rng = np.random.default_rng(2024)
    trans_ok, worst = 0, 0.0
    for _ in range(100):
        # float32-valued coordinates and offsets, as carried by the wire and file formats
        joints = rng.normal(0, 0.6, (20, 3)).astype(np.float32).astype(np.float64)
        joints[1] = (joints[0] + rng.normal(0, 0.1, 3) + [0, 0.25, 0]).astype(np.float32)
        offset = rng.uniform(-5, 5, 3).astype(np.float32).astype(np.float64)
        frames = [SkeletonFrame(joints)]
        moved = [SkeletonFrame(joints + offset)]
        if np.array_equal(build_clip_features(frames).frames, build_clip_features(moved).frames):
            trans_ok += 1
        lam = float(rng.uniform(0.3, 3.0))
        dilated = [SkeletonFrame(joints[0] + lam * (joints - joints[0]))]
        a = build_clip_features(frames).frames
        b = build_clip_features(dilated).frames
        worst = max(worst, float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-300))))
    ok = trans_ok == 100 and worst <= 1e-9
    return ok, f"translation bitwise {trans_ok}/100; dilation max rel diff {worst:.2e}"


@functools.lru_cache(maxsize=None)
def desk_run():
    """gen-synth -> train -> eval-clips -> stream -> eval with default settings."""
    root = _WORK / "desk"
    t0 = time.perf_counter()
    steps = {}
    steps["gen"] = run_cli("--seed", 0, "gen-synth", root / "data", "--num-classes", 3,
                           "--clips-per-class", 200, "--noise", 0.01)
    steps["train"] = run_cli("--seed", 0, "train", root / "data", "--model", root / "model.irnn",
                             "--metrics", root / "metrics.csv", "--hidden", 64, "--epochs", 30,
                             "--plot-dir", root / "figures")
    steps["eval_clips"] = run_cli("eval-clips", root / "model.irnn", root / "data" / "test" / "manifest.csv",
                                  "--plot-dir", root / "figures")
    t_learn = time.perf_counter() - t0
    steps["stream"] = run_cli("--deterministic", "stream", f"file:{root / 'data' / 'stream.skr'}",
                              root / "model.irnn", "--events", root / "events.tsv", "--stats", root / "stats.tsv")
    steps["eval"] = run_cli("eval", root / "events.tsv", root / "data" / "stream_truth.tsv",
                            "--plot-dir", root / "figures")
    return root, steps, t_learn


def report_value(text, key):
    for line in text.splitlines():
        parts = line.split("\t")
        if parts[0] == key:
            return float(parts[1])
    return float("nan")


def desk_scale_learning():
    root, steps, elapsed = desk_run()
    codes = {k: v[0] for k, v in steps.items() if k in ("gen", "train", "eval_clips")}
    acc = report_value(steps["eval_clips"][1], "accuracy")
    ok = all(c == 0 for c in codes.values()) and acc >= 0.95 and elapsed <= 600
    return ok, f"held-out accuracy {acc:.4f} (hidden 64, 30 epochs); {elapsed:.1f} s; exit codes {codes}"


def end_to_end_detection():
    root, steps, _ = desk_run()
    if steps["stream"][0] != 0 or steps["eval"][0] != 0:
        return False, f"stream/eval exit codes {steps['stream'][0]}/{steps['eval'][0]}"
    events = parse_event_log((root / "events.tsv").read_text().splitlines())
    truth = read_ground_truth((root / "data" / "stream_truth.tsv").read_text().splitlines())
    dets = sorted((e for k, e in events if k == "DETECTION"), key=lambda d: -d.score)
    matched = len(match_detections(dets, truth, 0.5).matches)
    plan = [ln.split("\t") for ln in (root / "data" / "stream_plan.tsv").read_text().splitlines()[1:]]
    group_span = StreamConfig().decision_delay
    idle = [(int(s), int(e)) for kind, _, s, e in plan if kind == "idle" and int(e) - int(s) > group_span]
    actions = [(g.start_raw_frame, g.end_raw_frame) for g in truth]
    idle_alarms = 0
    for kind, d in events:
        if kind != "ALARM":
            continue
        touches_idle = any(d.start_raw_frame < e and s < d.end_raw_frame for s, e in idle)
        touches_action = any(d.start_raw_frame < e and s < d.end_raw_frame for s, e in actions)
        if touches_idle and not touches_action:
            idle_alarms += 1
    m_ap = report_value(steps["eval"][1], "map")
    n_alarms = sum(k == "ALARM" for k, _ in events)
    ok = matched >= 4 and idle_alarms == 0 and m_ap >= 0.8
    return ok, (f"{matched}/{len(truth)} instances matched at IoU>=0.5; {n_alarms} alarm(s), "
                f"{idle_alarms} in idle gaps longer than {group_span} frames; mAP {m_ap:.4f}")


def latency_formula():
    root, steps, _ = desk_run()
    model = load_model(root / "model.irnn")
    expected = (20 + (5 - 1) * 5) * 5
    measured = []
    # threshold 0 makes every group report, so every group's availability is observed
    for cfg in (StreamConfig(), StreamConfig(score_threshold=0.0)):
        det = Detector(model, cfg)
        for item in replay_source(root / "data" / "stream.skr"):
            for ev in det.push(item):
                if isinstance(ev, DetectionEvent):
                    available = item.frame_index + cfg.sample_stride
                    measured.append((available - ev.start_raw_frame, ev.decision_raw_frame - ev.start_raw_frame))
    delays = {m for pair in measured for m in pair}
    ok = bool(measured) and delays == {expected} and StreamConfig().decision_delay == expected
    seconds = expected / StreamConfig().fps
    return ok, f"{len(measured)} group decisions, delays {sorted(delays)} raw frames (expected {expected}, {seconds:.2f} s at 30 fps)"


def window_geometry():
    cfg = StreamConfig(sample_stride=1)
    bad = []
    for n in range(1, 201):
        frames = [SkeletonFrame(np.zeros((20, 3)) + [0, i * 1e-3, 0], i) for i in range(n)]
        enumerated = [(w.start_raw_frame, w.end_raw_frame) for w in window_stream(sample_stream(frames, 1), cfg)]
        closed = (n - 20) // 5 + 1 if n >= 20 else 0
        spans = [(k * 5, k * 5 + 20) for k in range(closed)]
        if enumerated != spans:
            bad.append(n)
    overlap = StreamConfig().overlap
    ok = not bad and overlap == 0.75
    return ok, f"N=1..200: {200 - len(bad)}/200 match floor((N-20)/5)+1; overlap {overlap:.2f}"


def storage_consistency():
    clip = FeatureClip(np.random.default_rng(0).normal(size=(CLIP_LEN, 57)), 43)
    size = len(encode_skf1(clip))
    return size <= 10 * 1024, f"20-frame SKF1 clip = {size} bytes (4-byte magic + 12-byte dims/label + 4560 data)"


def parser_golden_files():
    zero = dataset.read_skeleton_file(DATA / "S001C002P003R002A043.skeleton")
    ok_zero = len(zero.frames) == 2 and all(not f.joints.any() for f in zero.frames)
    gold = dataset.read_skeleton_file(DATA / "S003C001P008R001A023.skeleton")
    ok_gold = all(tuple(gold.frames[f].joints[j - 1]) ==
                  (float(f"0.{j:02d}{f}"), float(f"-1.{j:02d}"), float(f"3.{f}{j:02d}"))
                  for f in range(2) for j in range(1, 21))
    two = dataset.read_skeleton_file(DATA / "S004C003P010R001A043.skeleton")
    ok_two = [f.joints[0, 0] for f in two.frames] == [1.01, 2.01, 3.01]
    text = (DATA / "S003C001P008R001A023.skeleton").read_text().splitlines()
    perturbed = []
    joint_line = 0
    for line in text:
        fields = line.split()
        if len(fields) == 12:
            joint_line += 1
            if (joint_line - 1) % 25 >= 20:
                fields[:3] = ["123.5", "-77.25", "9.0"]
            line = " ".join(fields)
        perturbed.append(line)
    p = dataset.parse_skeleton_file("\n".join(perturbed), "S003C001P008R001A023.skeleton")
    ok_ignore = all(np.array_equal(a.joints, b.joints) for a, b in zip(p.frames, gold.frames))
    ok = ok_zero and ok_gold and ok_two and ok_ignore
    return ok, (f"zero file {ok_zero}, coordinate table {ok_gold}, two-body selection {ok_two}, "
                f"joints 21-25 ignored {ok_ignore}")


def determinism():
    root = _WORK / "determinism"
    raw = root / "raw"
    raw.mkdir(parents=True, exist_ok=True)
    clips = dataset.generate_synthetic(dataset.SynthSpec(clips_per_class=4, frames_per_clip=40, seed=9))
    for n, c in enumerate(clips):
        joints = np.stack([f.joints for f in c.frames])
        padded = np.concatenate([joints, np.repeat(joints[:, 3:4], 5, axis=1)], axis=1)
        name = f"S001C{c.camera_id:03d}P{c.subject_id:03d}R{n + 1:03d}A{c.label:03d}.skeleton"
        (raw / name).write_text(dataset.format_skeleton_file([[f] for f in padded]))
    digests = {}
    for tag in ("a", "b"):
        out = root / tag
        d = {}
        run_cli("--seed", 3, "prepare", raw, out / "prepared", "--train-ids", "1,2,3,4,5")
        d["prepare"] = tree_digest(out / "prepared")
        run_cli("--seed", 3, "gen-synth", out / "synth", "--clips-per-class", 30,
                "--set", "synth.stream_instances=3")
        d["gen-synth"] = tree_digest(out / "synth")
        run_cli("--seed", 3, "--deterministic", "train", out / "synth", "--model", out / "train" / "m.irnn",
                "--metrics", out / "train" / "metrics.csv", "--hidden", 16, "--epochs", 4,
                "--plot-dir", out / "train")
        d["train"] = tree_digest(out / "train")
        (out / "stream").mkdir(exist_ok=True)
        run_cli("--deterministic", "stream", f"file:{out / 'synth' / 'stream.skr'}", out / "train" / "m.irnn",
                "--events", out / "stream" / "events.tsv", "--stats", out / "stream" / "stats.tsv")
        d["stream"] = tree_digest(out / "stream")
        digests[tag] = d
    same = {k: digests["a"][k] == digests["b"][k] for k in digests["a"]}
    nonempty = (root / "a" / "stream" / "events.tsv").stat().st_size > 0
    return all(same.values()) and nonempty, "identical bytes: " + ", ".join(f"{k} {v}" for k, v in same.items())


CRITERIA = [
    ("gradient correctness", gradient_correctness),
    ("oracle equivalence", oracle_equivalence),
    ("feature invariances", feature_invariances),
    ("desk-scale learning", desk_scale_learning),
    ("end-to-end detection", end_to_end_detection),
    ("latency formula", latency_formula),
    ("window geometry", window_geometry),
    ("storage consistency", storage_consistency),
    ("parser golden files", parser_golden_files),
    ("determinism", determinism),
]


def evaluate(name, fn):
    try:
        ok, detail = fn()
    except Exception as exc:  # a crash is a failure of the criterion, reported like one
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    RESULTS.append(line)
    return ok, line


@pytest.mark.parametrize("name, fn", CRITERIA, ids=[c[0].replace(" ", "-") for c in CRITERIA])
def test_criterion(name, fn):
    ok, line = evaluate(name, fn)
    print(line)
    assert ok, line


def main():
    failures = 0
    for name, fn in CRITERIA:
        ok, line = evaluate(name, fn)
        print(line, flush=True)
        failures += not ok
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
