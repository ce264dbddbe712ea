#!/usr/bin/env python3
"""Record service-shaped fixtures for the dashboard test suite.

Regenerate with:  python3 scripts/record_dashboard_fixtures.py
Writes into frontend/tests/fixtures/.
"""

from __future__ import annotations

import json
from pathlib import Path

from kdselect.config import ModuleFlags, RunConfig, TrainConfig
from kdselect.data import split_corpus
from kdselect.pipeline import (
    detect_and_score,
    evaluate_selector,
    prepare_training_set,
    select,
    train,
)
from kdselect.synthetic import make_corpus

OUT = Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures"


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    cfg = RunConfig(
        train=TrainConfig(window_len=32, stride=16, epochs=8, seed=17,
                          learning_rate=0.05, batch_size=32),
        flags=ModuleFlags(soft_labels=True, metadata=True, pruning="bucketed"),
    )
    corpus = make_corpus(6, seed=33)
    train_c, test_c = split_corpus(corpus, 2 / 3, seed=4)

    training_set = prepare_training_set(train_c, cfg)
    result = train(training_set, cfg)
    result.write_events(OUT / "events.ndjson")

    report = evaluate_selector(result.model, test_c, cfg)
    (OUT / "report.json").write_text(json.dumps(report.to_dict(), indent=2,
                                                sort_keys=True))

    series = test_c[0]
    selection = select(result.model, series, cfg.train.window_len, cfg.train.stride)
    (OUT / "selection.json").write_text(json.dumps(selection.to_dict(), indent=2,
                                                   sort_keys=True))

    detection = detect_and_score(series, selection, cfg, compare=True)
    payload = detection.to_dict(include_scores=True)
    payload["selection"] = selection.to_dict()
    payload["point_labels"] = series.point_labels.tolist()
    (OUT / "detect.json").write_text(json.dumps(payload, indent=2, sort_keys=True))

    status = {
        "job_id": "fixture-job",
        "state": "finished",
        "progress": {"epoch": cfg.train.epochs - 1, "total_epochs": cfg.train.epochs},
        "last_event": result.events[-1].to_dict(),
        "error": None,
        "result": {"model_available": True, "report_id": "fixture-job"},
    }
    (OUT / "job_status.json").write_text(json.dumps(status, indent=2, sort_keys=True))
    print(f"wrote fixtures to {OUT}")


if __name__ == "__main__":
    main()
