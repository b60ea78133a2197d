"""Command line entry point: ``skelwatch <verb> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import shlex
import subprocess
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import config as config_mod
from .dataset import (SkeletonParseError, SplitSpec, action_name, filter_training_classes, generate_synthetic,
                      ManifestRow, read_manifest, read_skeleton_file, render_stream, splice_plan, split,
                      write_manifest)
from .evaluation import (GroundTruthInterval, evaluate_clip_predictions, evaluate_stream, format_ground_truth,
                         format_report, read_ground_truth)
from .indrnn import NumericDivergence, ModelNotTrained, init_model, load_model, network_forward, save_model, train
from .skeleton import (FEATURE_DIM, SkeletonError, SkeletonFrame, build_clip_features, read_skf1, sample_clip,
                       write_skf1)
from .streaming import AlarmEvent, EventLogWriter, parse_event_log, parse_source, run_pipeline, write_replay

log = logging.getLogger("skelwatch")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- helpers -------------------------------------------------------------------

def _clip_features(clip, cfg):
    f = cfg.features
    frames = sample_clip(clip.frames, f.clip_len)
    return build_clip_features(frames, f.reference_halfspine, f.scale_mode, label=clip.label)


def _write_split(out_dir: Path, clips, cfg, tag: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, rejected = [], []
    for clip in clips:
        try:
            feats = _clip_features(clip, cfg)
        except SkeletonError as exc:
            rejected.append((clip.name, str(exc)))
            log.warning("rejected %s: %s", clip.name, exc)
            continue
        fname = f"{clip.name}.skf"
        write_skf1(out_dir / fname, feats)
        rows.append(ManifestRow(fname, clip.label, clip.subject_id, clip.camera_id, len(clip.frames)))
    write_manifest(out_dir / "manifest.csv", rows)
    return rows, rejected


def _print_counts(split_rows: dict, out):
    print("split\tlabel\tname\tclips", file=out)
    for tag, rows in split_rows.items():
        for label, n in sorted(Counter(r.label for r in rows).items()):
            print(f"{tag}\t{label}\t{action_name(label)}\t{n}", file=out)


def _load_manifest_clips(manifest: Path):
    try:
        rows = read_manifest(manifest)
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest}: {exc}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    clips = []
    for r in rows:
        try:
            clip = read_skf1(manifest.parent / r.filename)
        except (OSError, SkeletonError) as exc:
            raise DataError(f"{r.filename}: {exc}") from None
        if clip.label is None:
            clip.label = r.label
        elif clip.label != r.label:
            raise DataError(f"{r.filename}: label {clip.label} disagrees with manifest label {r.label}")
        clips.append(clip)
    if not clips:
        raise DataError(f"{manifest} lists no clips")
    return clips


def _load_model(path):
    try:
        return load_model(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load model {path}: {exc}") from None


def _open_output(path, mode="w"):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, mode)


def _read_text_lines(path):
    try:
        with open(path) as fh:
            return fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


# --- verbs ---------------------------------------------------------------------

def cmd_prepare(args, cfg):
    in_dir = Path(args.input_dir)
    if not in_dir.is_dir():
        raise DataError(f"input directory {in_dir} is not readable")
    files = sorted(in_dir.glob("*.skeleton"))
    clips, rejected = [], []
    for path in files:
        try:
            clips.append(read_skeleton_file(path))
        except (SkeletonParseError, SkeletonError, OSError, UnicodeDecodeError) as exc:
            rejected.append((path.name, str(exc)))
            log.warning("rejected %s: %s", path.name, exc)
    kept = filter_training_classes(clips)
    log.info("parsed %d of %d files; %d in training classes 1..49", len(clips), len(files), len(kept))
    try:
        train_clips, test_clips = split(kept, cfg.split.spec())
    except ValueError as exc:
        raise DataError(str(exc)) from None
    out = Path(args.output_dir)
    split_rows = {}
    for tag, subset in (("train", train_clips), ("test", test_clips)):
        rows, rej = _write_split(out / tag, subset, cfg, tag)
        split_rows[tag] = rows
        rejected += rej
    with open(out / "rejected.tsv", "w") as fh:
        for name, reason in rejected:
            fh.write(f"{name}\t{reason}\n")
    _print_counts(split_rows, sys.stdout)
    total = sum(len(r) for r in split_rows.values())
    print(f"# {total} clips written, {len(rejected)} rejected", file=sys.stdout)
    if total == 0:
        raise DataError("no valid clips")
    return EXIT_OK


def _training_manifest(data_dir: Path, name: str):
    for cand in (data_dir / name / "manifest.csv", data_dir / "manifest.csv"):
        if cand.is_file():
            return cand
    return None


def cmd_train(args, cfg):
    data_dir = Path(args.data_dir)
    manifest = _training_manifest(data_dir, "train")
    if manifest is None:
        raise DataError(f"no training manifest under {data_dir}")
    clips = _load_manifest_clips(manifest)
    val_manifest = data_dir / "val" / "manifest.csv"
    val = _load_manifest_clips(val_manifest) if val_manifest.is_file() else None
    tcfg = cfg.train_config()
    metrics_fh = _open_output(args.metrics) if args.metrics else None
    if metrics_fh:
        metrics_fh.write("epoch,train_loss,train_acc,val_loss,val_acc\n")

    def on_epoch(m):
        if metrics_fh:
            metrics_fh.write(f"{m.epoch},{m.train_loss:.8g},{m.train_acc:.8g},{m.val_loss:.8g},{m.val_acc:.8g}\n")
            metrics_fh.flush()

    try:
        if tcfg.epochs == 0:
            labels = sorted({c.label for c in clips})
            model = init_model(FEATURE_DIM, tcfg.hidden, len(labels), seed=tcfg.seed, clip_len=tcfg.clip_len,
                               gamma=tcfg.u_max_gamma, class_labels=labels, readout=tcfg.readout)
            history = []
        else:
            model, history = train(clips, tcfg, val, on_epoch=on_epoch)
    except NumericDivergence as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except ValueError as exc:
        raise DataError(str(exc)) from None
    finally:
        if metrics_fh:
            metrics_fh.close()
    Path(args.model).parent.mkdir(parents=True, exist_ok=True)
    save_model(args.model, model)
    if history:
        last = history[-1]
        print(f"epochs\t{len(history)}\ntrain_acc\t{last.train_acc:.6f}\nval_acc\t{last.val_acc:.6f}")
    print(f"model\t{args.model}")
    if args.plot_dir and history:
        from .plots import training_curves
        training_curves(history, Path(args.plot_dir) / "training_curves.png")
    return EXIT_OK


def cmd_eval_clips(args, cfg):
    model = _load_model(args.model)
    clips = _load_manifest_clips(Path(args.manifest))
    x = np.stack([c.frames for c in clips])
    try:
        probs = np.concatenate([network_forward(x[s:s + 256], model, "eval") for s in range(0, len(x), 256)])
    except ModelNotTrained as exc:
        raise DataError(str(exc)) from None
    except ValueError as exc:
        raise DataError(f"clips do not fit the model: {exc}") from None
    report = evaluate_clip_predictions(probs, [c.label for c in clips], model.class_labels)
    text = format_report(report)
    sys.stdout.write(text)
    if args.report:
        with _open_output(args.report) as fh:
            fh.write(text)
    if args.plot_dir:
        from .plots import confusion_matrix
        confusion_matrix(report, model.class_labels, Path(args.plot_dir) / "confusion.png")
    return EXIT_OK


def cmd_eval(args, cfg):
    try:
        events = parse_event_log(_read_text_lines(args.event_log))
        truth = read_ground_truth(_read_text_lines(args.ground_truth))
    except ValueError as exc:
        raise DataError(str(exc)) from None
    report = evaluate_stream(events, truth, args.iou, cfg.stream.fps)
    text = format_report(report)
    sys.stdout.write(text)
    if args.report:
        with _open_output(args.report) as fh:
            fh.write(text)
    if args.plot_dir:
        from .plots import pr_curves, stream_timeline
        dets = [e for kind, e in events if kind == "DETECTION"]
        pr_curves(dets, truth, Path(args.plot_dir) / "pr_curves.png", args.iou)
        stream_timeline(dets, truth, Path(args.plot_dir) / "timeline.png", cfg.stream.fps)
    return EXIT_OK


def _alarm_hook(command: str):
    argv = shlex.split(command)

    def hook(event):
        if not isinstance(event, AlarmEvent):
            return
        d = event.detection
        fields = ["ALARM", str(d.class_id), event.alarm_class_name, f"{d.score:.6f}",
                  str(d.start_raw_frame), str(d.end_raw_frame), str(d.decision_raw_frame)]
        try:
            subprocess.run(argv + fields, check=False)
        except OSError as exc:
            log.error("alarm hook failed: %s", exc)
    return hook


def cmd_stream(args, cfg):
    model = _load_model(args.model)
    if not model.trained:
        raise DataError(f"model {args.model} has no batch-norm statistics; train it first")
    try:
        source, live = parse_source(args.source)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    except OSError as exc:
        raise DataError(f"cannot open source: {exc}") from None
    scfg = cfg.stream_config()
    threaded = args.threaded and not cfg.run.deterministic
    with contextlib.ExitStack() as stack:
        out = sys.stdout if args.events in (None, "-") else stack.enter_context(_open_output(args.events))
        sinks = [EventLogWriter(out)]
        if args.on_alarm:
            sinks.append(_alarm_hook(args.on_alarm))
        try:
            result = run_pipeline(source, model, scfg, sinks, threaded=threaded, live=live)
        except FileNotFoundError as exc:
            raise DataError(f"cannot open source: {exc}") from None
        except (ConnectionError, OSError) as exc:
            raise DataError(f"source unreachable: {exc}") from None
    summary = result.stats.summary(scfg.fps)
    for k, v in summary.items():
        print(f"# {k}\t{v}", file=sys.stderr)
    if args.stats:
        # wall-clock timing stays on stderr so the file is reproducible
        with _open_output(args.stats) as fh:
            for k, v in summary.items():
                if k != "mean_compute_s":
                    fh.write(f"{k}\t{v}\n")
    return EXIT_OK


def cmd_gen_synth(args, cfg):
    syn = cfg.synth
    spec = syn.spec()
    out = Path(args.output_dir)
    clips = generate_synthetic(spec)
    train_ids = frozenset(range(1, syn.train_subjects + 1))
    train_clips, test_clips = split(clips, SplitSpec("cross-subject", train_ids))
    split_rows = {}
    for tag, subset in (("train", train_clips), ("test", test_clips)):
        split_rows[tag], _ = _write_split(out / tag, subset, cfg, tag)

    plan = splice_plan(spec, syn.stream_instances, syn.instance_len, (syn.gap_min, syn.gap_max))
    raw = render_stream(spec, plan)
    write_replay(out / "stream.skr", (SkeletonFrame(j, i) for i, j in enumerate(raw)))
    truth = [GroundTruthInterval(s.label, s.start, s.end) for s in plan if s.is_action]
    (out / "stream_truth.tsv").write_text(format_ground_truth(truth))
    with open(out / "stream_plan.tsv", "w") as fh:
        fh.write("segment\tlabel\tstart_raw_frame\tend_raw_frame\n")
        for s in plan:
            fh.write(f"{'action' if s.is_action else 'idle'}\t{s.label}\t{s.start}\t{s.end}\n")
    _print_counts(split_rows, sys.stdout)
    print(f"# stream\t{len(raw)} frames\t{len(truth)} action instances")
    return EXIT_OK


# --- argument parsing ----------------------------------------------------------

def _common(parser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="INI-style configuration file")
    parser.add_argument("--seed", type=int, default=d, help="seed for initialisation, shuffling and synthesis")
    parser.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="single-threaded reference mode")
    parser.add_argument("--set", action="append", default=argparse.SUPPRESS if suppress else [],
                        metavar="SECTION.KEY=VALUE", help="override one configuration value")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="skelwatch", description="Skeleton action recognition and fall alarms over streams.")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def verb(name, help_):
        sp = sub.add_parser(name, help=help_)
        _common(sp, suppress=True)
        return sp

    sp = verb("prepare", "parse .skeleton files into SKF1 feature clips and manifests")
    sp.add_argument("input_dir")
    sp.add_argument("output_dir")
    sp.add_argument("--split", choices=("cross-subject", "cross-view"))
    sp.add_argument("--train-ids", help="comma-separated subject or camera ids for the training side")
    sp.set_defaults(func=cmd_prepare)

    sp = verb("train", "train the IndRNN classifier on a prepared dataset")
    sp.add_argument("data_dir")
    sp.add_argument("--model", required=True, help="output IRNN checkpoint")
    sp.add_argument("--metrics", help="per-epoch comma-separated metrics file")
    sp.add_argument("--plot-dir", help="write training_curves.png here")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--hidden", type=int)
    sp.add_argument("--learning-rate", type=float)
    sp.add_argument("--batch-size", type=int)
    sp.set_defaults(func=cmd_train)

    sp = verb("stream", "detect actions and raise alarms over a skeleton stream")
    sp.add_argument("source", help="file:<path.skr> or tcp:<host>:<port>")
    sp.add_argument("model")
    sp.add_argument("--events", help="event log path (default stdout)")
    sp.add_argument("--stats", help="write pipeline statistics here")
    sp.add_argument("--on-alarm", help="command run per alarm with the event fields appended")
    sp.add_argument("--nms", choices=("group", "iou"))
    sp.add_argument("--threshold", type=float, help="minimum consolidated score")
    sp.add_argument("--no-threads", dest="threaded", action="store_false",
                    help="run ingestion, inference and output in one thread")
    sp.set_defaults(func=cmd_stream, threaded=True)

    sp = verb("eval", "score an event log against ground-truth intervals")
    sp.add_argument("event_log")
    sp.add_argument("ground_truth")
    sp.add_argument("--iou", type=float, default=0.5)
    sp.add_argument("--report", help="write the report here as well")
    sp.add_argument("--plot-dir", help="write pr_curves.png and timeline.png here")
    sp.set_defaults(func=cmd_eval)

    sp = verb("eval-clips", "classify trimmed clips listed in a manifest")
    sp.add_argument("model")
    sp.add_argument("manifest")
    sp.add_argument("--report")
    sp.add_argument("--plot-dir", help="write confusion.png here")
    sp.set_defaults(func=cmd_eval_clips)

    sp = verb("gen-synth", "write a synthetic dataset, a spliced replay stream and its ground truth")
    sp.add_argument("output_dir")
    sp.add_argument("--num-classes", type=int)
    sp.add_argument("--clips-per-class", type=int)
    sp.add_argument("--frames-per-clip", type=int)
    sp.add_argument("--noise", type=float)
    sp.set_defaults(func=cmd_gen_synth)
    return p


_FLAG_SETTINGS = {
    "split": "split.mode", "train_ids": "split.train_ids",
    "epochs": "train.epochs", "hidden": "train.hidden", "learning_rate": "train.learning_rate",
    "batch_size": "train.batch_size", "nms": "stream.nms", "threshold": "stream.score_threshold",
    "num_classes": "synth.num_classes", "clips_per_class": "synth.clips_per_class",
    "frames_per_clip": "synth.frames_per_clip", "noise": "synth.noise_stddev",
}


def resolve_config(args) -> config_mod.RunConfig:
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    for attr, key in _FLAG_SETTINGS.items():
        v = getattr(args, attr, None)
        if v is not None:
            overrides[key] = str(v)
    if args.seed is not None:
        for key in ("run.seed", "train.seed", "synth.seed"):
            overrides[key] = str(args.seed)
    if args.deterministic:
        overrides["run.deterministic"] = "true"
    try:
        return config_mod.load(args.config, overrides)
    except config_mod.ConfigError as exc:
        raise UsageError(str(exc)) from None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        sys.stderr.write("# effective configuration\n" + config_mod.dump(cfg))
        sys.stderr.flush()
        if cfg.run.deterministic:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=1):
                return args.func(args, cfg)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"skelwatch: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"skelwatch: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
