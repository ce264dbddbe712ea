"""On-disk selector registry: CRUD over a JSON index with atomic replace."""

from __future__ import annotations

import json
import os
import shutil
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

__all__ = ["SelectorRecord", "SelectorRegistry", "UnknownSelectorError"]


class UnknownSelectorError(KeyError):
    pass


@dataclass
class SelectorRecord:
    selector_id: str
    name: str
    created_at: str
    model_path: str
    config_echo: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


class SelectorRegistry:
    """Selector records plus their model files under one root directory.

    Mutations are serialized through a lock and land via write-to-temp plus
    atomic rename, so a restart always sees a consistent index.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.models_dir = self.root / "selectors"
        self.models_dir.mkdir(parents=True, exist_ok=True)
        self.index_path = self.root / "selectors.json"
        self._lock = threading.Lock()
        self._records: dict[str, SelectorRecord] = {}
        self._order: list[str] = []
        self._load()

    def _load(self) -> None:
        if not self.index_path.exists():
            return
        raw = json.loads(self.index_path.read_text(encoding="utf-8"))
        for entry in raw:
            record = SelectorRecord(**entry)
            self._records[record.selector_id] = record
            self._order.append(record.selector_id)

    def _flush(self) -> None:
        tmp = self.index_path.with_suffix(".json.tmp")
        payload = [self._records[sid].to_dict() for sid in self._order]
        tmp.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
        os.replace(tmp, self.index_path)

    def put(self, selector_id: str, name: str, source_model: str | Path,
            config_echo: Optional[dict] = None,
            metrics: Optional[dict] = None) -> SelectorRecord:
        """Copy the model file into the registry and index it."""
        with self._lock:
            if selector_id in self._records:
                raise ValueError(f"selector id {selector_id!r} already registered")
            dest = self.models_dir / f"{selector_id}.kdsl"
            shutil.copyfile(source_model, dest)
            record = SelectorRecord(
                selector_id=selector_id,
                name=name,
                created_at=datetime.now(timezone.utc).isoformat(),
                model_path=str(dest),
                config_echo=config_echo or {},
                metrics=metrics or {},
            )
            self._records[selector_id] = record
            self._order.append(selector_id)
            self._flush()
            return record

    def get(self, selector_id: str) -> SelectorRecord:
        record = self._records.get(selector_id)
        if record is None:
            raise UnknownSelectorError(f"unknown selector {selector_id!r}")
        return record

    def list(self) -> list[SelectorRecord]:
        return [self._records[sid] for sid in self._order]

    def delete(self, selector_id: str) -> None:
        with self._lock:
            record = self._records.pop(selector_id, None)
            if record is None:
                raise UnknownSelectorError(f"unknown selector {selector_id!r}")
            self._order.remove(selector_id)
            self._flush()
            Path(record.model_path).unlink(missing_ok=True)
