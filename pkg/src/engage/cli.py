"""Command-line entry point: ``engage <command> ...`` (also ``python -m engage``).

Exit codes: 0 success, 1 unexpected failure, 2 bad arguments or config
(including missing input files), 3 single-class training data, 4 malformed
recording, checkpoint or stream, 5 incompatible or empty report set.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .data import load_recording, save_recording, write_manifest
from .dsp import PipelineConfig
from .errors import DataError, FormatError, ReportError, SingleClassError, UndefinedCorrelationError
from .model import ArchitectureConfig, build_model, load_checkpoint, save_checkpoint
from .pipeline import load_manifest_datasets
from .report import aggregate, load_report, make_report, write_report
from .training import TrainConfig, evaluate, run_loso, run_subject_specific, train

log = logging.getLogger("engage")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_SINGLE_CLASS, EXIT_MALFORMED, EXIT_REPORT = 0, 1, 2, 3, 4, 5


class ConfigError(Exception):
    pass


def _read_json(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return doc


def load_run_config(path):
    """``(PipelineConfig, TrainConfig, ArchitectureConfig)`` from a run config.

    The file holds optional ``pipeline``, ``train`` and ``architecture`` objects.
    """
    doc = _read_json(path) if path else {}
    unknown = set(doc) - {"pipeline", "train", "architecture"}
    try:
        if unknown:
            raise ValueError(f"unknown run-config sections: {sorted(unknown)}")
        return (PipelineConfig.from_dict(doc.get("pipeline", {})),
                TrainConfig.from_dict(doc.get("train", {})),
                ArchitectureConfig(**doc.get("architecture", {})))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid run config: {exc}") from exc


def _require(path, what):
    if not Path(path).exists():
        raise ConfigError(f"{what} not found: {path}")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .synth import CohortConfig, simulate_session, write_behavior_csv

    try:
        cohort = CohortConfig.load(args.config) if args.config else CohortConfig()
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {args.config}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid cohort config: {exc}") from exc
    if args.seed is not None:
        cohort = replace(cohort, seed=args.seed)
    out = _out_dir(args.out)
    entries = []
    for subject in cohort.subjects():
        recording, behavior, _ = simulate_session(subject, cohort.session)
        name = f"{subject.subject_id}.eegr"
        save_recording(recording, out / name)
        write_behavior_csv(behavior, out / f"{subject.subject_id}_behavior.csv")
        entries.append((subject.subject_id, name))
        log.info("wrote %s", out / name)
        del recording
    write_manifest(entries, out / "manifest.json")
    print(f"{len(entries)} recordings written to {out}")
    return EXIT_OK


def _datasets(args, pipeline):
    _require(args.manifest, "manifest")
    datasets = load_manifest_datasets(args.manifest, pipeline)
    if not datasets:
        raise ConfigError(f"manifest {args.manifest} lists no recordings")
    return datasets


def _train_setup(args):
    pipeline, train_cfg, arch = load_run_config(args.config)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    return pipeline, train_cfg, arch


def cmd_train(args) -> int:
    from .data import TrialDataset

    pipeline, train_cfg, arch = _train_setup(args)
    datasets = _datasets(args, pipeline)
    pooled = TrialDataset([item for sid in sorted(datasets) for item in datasets[sid].items])
    model = build_model(arch, seed=train_cfg.seed)
    train(model, pooled, train_cfg)
    out = _out_dir(args.out)
    save_checkpoint(model, out / "model.cecn")
    report = evaluate(model, pooled, ",".join(sorted(datasets)))
    write_report(make_report("train", train=report.to_dict(), train_config=train_cfg.to_dict()),
                 out / "report.json")
    print(f"training accuracy {report.accuracy:.4f}; checkpoint {out / 'model.cecn'}")
    return EXIT_OK


def cmd_loso(args) -> int:
    pipeline, train_cfg, arch = _train_setup(args)
    datasets = _datasets(args, pipeline)
    if len(datasets) < 2:
        raise ConfigError("leave-one-subject-out needs at least two subjects in the manifest")
    result = run_loso(datasets, train_cfg, arch, keep_models=True)
    out = _out_dir(args.out)
    for sid, model in sorted(result.models.items()):
        save_checkpoint(model, out / f"fold_{sid}.cecn")
    doc = make_report("loso", folds=[result.reports[s].to_dict() for s in sorted(result.reports)],
                      mean_accuracy=result.mean_accuracy, std_accuracy=result.std_accuracy,
                      train_config=train_cfg.to_dict())
    write_report(doc, out / "report.json")
    for sid in sorted(result.reports):
        print(f"{sid}\t{result.reports[sid].accuracy:.4f}")
    print(f"mean\t{result.mean_accuracy:.4f} ± {result.std_accuracy:.4f}")
    return EXIT_OK


def cmd_subject(args) -> int:
    pipeline, train_cfg, arch = _train_setup(args)
    datasets = _datasets(args, pipeline)
    if args.subject:
        missing = set(args.subject) - set(datasets)
        if missing:
            raise ConfigError(f"subjects not in manifest: {sorted(missing)}")
        datasets = {s: datasets[s] for s in args.subject}
    out = _out_dir(args.out)
    runs = []
    for sid in sorted(datasets):
        report, model = run_subject_specific(datasets[sid], (4, 1), train_cfg, arch, return_model=True)
        save_checkpoint(model, out / f"subject_{sid}.cecn")
        runs.append(report.to_dict())
        print(f"{sid}\t{report.accuracy:.4f}")
    accs = [r["accuracy"] for r in runs]
    mean = sum(accs) / len(accs)
    std = (sum((a - mean) ** 2 for a in accs) / len(accs)) ** 0.5
    write_report(make_report("subject", runs=runs, mean_accuracy=mean, std_accuracy=std,
                             train_config=train_cfg.to_dict()), out / "report.json")
    return EXIT_OK


def cmd_trajectory(args) -> int:
    from .sliding import ce_trajectory, correlate_with_feedback, write_csv, write_jsonl

    _require(args.checkpoint, "checkpoint")
    _require(args.recording, "recording")
    pipeline, _, _ = load_run_config(args.config)
    model = load_checkpoint(args.checkpoint)
    recording = load_recording(args.recording)
    trajectory = ce_trajectory(model, recording, pipeline, args.window_s, args.overlap)
    write_jsonl(trajectory, args.out)
    if args.csv:
        write_csv(trajectory, args.csv)
    rho = None
    if len(recording.feedback) < 2:
        print("no self-report feedback in recording; correlation skipped", file=sys.stderr)
    else:
        try:
            rho = correlate_with_feedback(trajectory, recording.feedback)
            print(f"rho\t{rho:.4f}")
        except (UndefinedCorrelationError, ValueError) as exc:
            print(f"correlation skipped: {exc}", file=sys.stderr)
    if args.report:
        write_report(make_report("trajectory", subject_id=recording.subject_id, rho=rho,
                                 windows=[w.to_dict() for w in trajectory],
                                 window_s=args.window_s, overlap=args.overlap), args.report)
    return EXIT_OK


def cmd_stream(args) -> int:
    from .stream import run_stream

    _require(args.checkpoint, "checkpoint")
    pipeline, _, _ = load_run_config(args.config)
    model = load_checkpoint(args.checkpoint)
    if args.input in (None, "-"):
        infile = sys.stdin.buffer
    else:
        _require(args.input, "input stream")
        infile = open(args.input, "rb")
    outfile = sys.stdout if args.out in (None, "-") else open(args.out, "w")
    try:
        stats = run_stream(model, infile, outfile, pipeline, args.window_s)
    finally:
        if infile is not sys.stdin.buffer:
            infile.close()
        if outfile is not sys.stdout:
            outfile.close()
    if args.latency_report:
        lat = list(stats.latencies_s)
        Path(args.latency_report).write_text(json.dumps({
            "trials": stats.trials, "warnings": stats.warnings, "bytes_read": stats.bytes_read,
            "p99_latency_s": stats.p99_latency_s(),
            "max_latency_s": max(lat) if lat else None}, indent=2) + "\n")
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.reports:
        raise ReportError("no reports given")
    docs = [load_report(p) for p in args.reports]
    for path in aggregate(docs, args.out):
        print(path)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="engage", description="EEG cognitive-engagement toolkit")
    p.add_argument("--version", action="version", version=f"engage {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic cohort and its manifest")
    s.add_argument("--config", help="cohort config JSON (defaults if omitted)")
    s.add_argument("--seed", type=int, help="override the cohort seed")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    for name, func, helptext in (("train", cmd_train, "train one model on every labeled trial"),
                                 ("loso", cmd_loso, "leave-one-subject-out evaluation"),
                                 ("subject", cmd_subject, "4:1 subject-specific evaluation")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--manifest", required=True)
        s.add_argument("--config", help="run config JSON with pipeline/train/architecture sections")
        s.add_argument("--seed", type=int, help="override the training seed")
        s.add_argument("--out", required=True, help="output directory")
        if name == "subject":
            s.add_argument("--subject", action="append", help="restrict to this subject (repeatable)")
        s.set_defaults(func=func)

    s = sub.add_parser("trajectory", help="sliding-window engagement trajectory of one recording")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--recording", required=True)
    s.add_argument("--config", help="run config JSON (pipeline section used)")
    s.add_argument("--out", required=True, help="JSON-lines output")
    s.add_argument("--csv", help="also write a CSV table")
    s.add_argument("--report", help="also write a JSON report for 'engage report'")
    s.add_argument("--window-s", type=float, default=420.0)
    s.add_argument("--overlap", type=float, default=0.5)
    s.set_defaults(func=cmd_trajectory)

    s = sub.add_parser("stream", help="classify a binary sample stream in real time")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", help="stream file (default: stdin)")
    s.add_argument("--out", help="JSON-lines output (default: stdout)")
    s.add_argument("--config", help="run config JSON (pipeline section used)")
    s.add_argument("--window-s", type=float, default=420.0)
    s.add_argument("--latency-report", help="write latency statistics JSON here")
    s.set_defaults(func=cmd_stream)

    s = sub.add_parser("report", help="aggregate JSON reports into CSV tables")
    s.add_argument("reports", nargs="*")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REPORT
    except FormatError as exc:
        print(f"error: malformed input: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except SingleClassError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SINGLE_CLASS
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
