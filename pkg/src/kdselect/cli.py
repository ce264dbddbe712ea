"""Command-line interface: ingest, label, train, select, detect, eval,
serve, synth.

Exit codes: 0 on success, 1 on runtime errors (message on stderr), 2 on
usage errors (argparse).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from kdselect import __version__
from kdselect.config import ConfigError, load_run_config
from kdselect.data import load_corpus, save_corpus
from kdselect.detectors import detector_by_name
from kdselect.metrics import export_label_table, load_label_table
from kdselect.model import load_model, save_model
from kdselect.pipeline import (
    detect_and_score,
    evaluate_selector,
    prepare_training_set,
    select,
    train,
)
from kdselect.synthetic import make_corpus


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kdselect",
        description="Train and serve per-series anomaly-detector selection",
    )
    parser.add_argument("--version", action="version", version=f"kdselect {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and normalize a corpus CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--meta", help="metadata sidecar JSON for the input")
    p.add_argument("--out", required=True)
    p.add_argument("--out-meta", help="where to write the normalized sidecar")

    p = sub.add_parser("label", help="run the detector zoo and export window labels")
    p.add_argument("--corpus", required=True)
    p.add_argument("--meta")
    p.add_argument("--config", help="run-config TOML")
    p.add_argument("--out", required=True, help="label table CSV")

    p = sub.add_parser("train", help="train a selector")
    p.add_argument("--corpus", required=True)
    p.add_argument("--meta")
    p.add_argument("--config", help="run-config TOML")
    p.add_argument("--labels", help="reuse a label table instead of re-running the zoo")
    p.add_argument("--out", required=True, help="model file (.kdsl)")
    p.add_argument("--events",
                   help="training event stream NDJSON (default: <out>.events.ndjson)")

    p = sub.add_parser("select", help="pick a detector for each series")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--meta")
    p.add_argument("--series-id", help="restrict to one series")

    p = sub.add_parser("detect", help="run a detector (or the selected one) and score it")
    p.add_argument("--model")
    p.add_argument("--detector", help="detector name; bypasses selection")
    p.add_argument("--corpus", required=True)
    p.add_argument("--meta")
    p.add_argument("--series-id", required=True)
    p.add_argument("--compare", action="store_true", help="also run every other detector")
    p.add_argument("--scores", help="write score traces as CSV")

    p = sub.add_parser("eval", help="evaluate a selector against baselines and the oracle")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--meta")
    p.add_argument("--out", required=True, help="report CSV")
    p.add_argument("--json", dest="json_out", help="also write the report as JSON")

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--bind", default="127.0.0.1:8765")
    p.add_argument("--data-dir", default=os.environ.get("KDSELECT_DATA_DIR", "./kdselect-data"))

    p = sub.add_parser("synth", help="generate a synthetic mixed-anomaly corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--out-meta")
    p.add_argument("--per-family", type=int, default=8)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--length", type=int, default=256)
    return parser


def _config(args) -> "RunConfig":
    return load_run_config(getattr(args, "config", None))


def _corpus(args):
    return load_corpus(args.corpus, getattr(args, "meta", None))


def cmd_ingest(args) -> int:
    corpus = load_corpus(args.input, args.meta)
    save_corpus(corpus, args.out, args.out_meta)
    print(f"ingested {len(corpus)} series -> {args.out}")
    return 0


def cmd_label(args) -> int:
    cfg = _config(args)
    corpus = _corpus(args)
    ts = prepare_training_set(corpus, cfg)
    rows = export_label_table(ts.windows, args.out)
    print(f"labeled {rows} windows ({ts.n_unlabeled} without positives, "
          f"{ts.n_skipped_series} series too short) -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    corpus = _corpus(args)
    table = load_label_table(args.labels) if args.labels else None
    ts = prepare_training_set(corpus, cfg, label_table=table)
    result = train(ts, cfg)
    save_model(result.model, args.out)
    events_path = args.events or str(Path(args.out).with_suffix(".events.ndjson"))
    result.write_events(events_path)
    last = [e for e in result.events if e.kind == "epoch"][-1]
    status = "" if result.aborted_epoch is None else f" (aborted at epoch {result.aborted_epoch})"
    print(f"trained on {len(ts)} windows, final loss {last.losses.total:.4f}"
          f"{status} -> {args.out}")
    return 0


def cmd_select(args) -> int:
    model = load_model(args.model)
    cfg = _model_config(model)
    corpus = _corpus(args)
    if args.series_id:
        corpus = [s for s in corpus if s.id == args.series_id]
        if not corpus:
            print(f"series {args.series_id!r} not found", file=sys.stderr)
            return 1
    results = [select(model, series, cfg.train.window_len, cfg.train.stride).to_dict()
               for series in corpus]
    print(json.dumps(results[0] if args.series_id else results, indent=2))
    return 0


def _model_config(model):
    from kdselect.config import RunConfig
    return RunConfig.from_dict(model.config_echo) if model.config_echo else RunConfig()


def cmd_detect(args) -> int:
    corpus = _corpus(args)
    series = next((s for s in corpus if s.id == args.series_id), None)
    if series is None:
        print(f"series {args.series_id!r} not found", file=sys.stderr)
        return 1
    if args.detector:
        target = detector_by_name(args.detector)
        cfg = load_run_config(None)
        report = detect_and_score(series, target, cfg, compare=args.compare)
        selection = None
    elif args.model:
        model = load_model(args.model)
        cfg = _model_config(model)
        selection = select(model, series, cfg.train.window_len, cfg.train.stride)
        report = detect_and_score(series, selection, cfg, compare=args.compare)
    else:
        print("provide --model or --detector", file=sys.stderr)
        return 2
    out = report.to_dict(include_scores=False)
    if selection is not None:
        out["selection"] = selection.to_dict()
    print(json.dumps(out, indent=2))
    if args.scores:
        with open(args.scores, "w", encoding="utf-8") as fh:
            fh.write("series_id,point_index,detector,score\n")
            for name, trace in report.traces.items():
                for i, score in enumerate(trace.scores):
                    fh.write(f"{series.id},{i},{name},{score!r}\n")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    cfg = _model_config(model)
    corpus = _corpus(args)
    report = evaluate_selector(model, corpus, cfg)
    Path(args.out).write_text(report.to_csv(), encoding="utf-8")
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(report.to_dict(), sort_keys=True),
                                       encoding="utf-8")
    print(f"evaluated {report.n_series} series: selected {report.avg_selected:.4f} "
          f"oracle {report.avg_oracle:.4f} -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn
    from kdselect.service import create_app
    host, _, port = args.bind.rpartition(":")
    app = create_app(args.data_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
    return 0


def cmd_synth(args) -> int:
    corpus = make_corpus(args.per_family, seed=args.seed, length=args.length)
    save_corpus(corpus, args.out, args.out_meta)
    print(f"wrote {len(corpus)} synthetic series -> {args.out}")
    return 0


_COMMANDS = {
    "ingest": cmd_ingest,
    "label": cmd_label,
    "train": cmd_train,
    "select": cmd_select,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "serve": cmd_serve,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
