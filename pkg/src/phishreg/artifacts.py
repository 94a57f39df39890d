"""NDJSON/CSV artifact helpers.

Every NDJSON artifact starts with a metadata record carrying the tool
version, the seed and a digest of the configuration that produced it.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path
from typing import Any, Iterable, Iterator

from . import __version__

META_KEY = "_meta"


def config_digest(config: dict | None) -> str:
    blob = json.dumps(config or {}, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def meta_record(seed: int | None = None, config: dict | None = None, **extra) -> dict:
    meta = {"tool": "phishreg", "version": __version__, "seed": seed,
            "config_digest": config_digest(config)}
    meta.update(extra)
    return {META_KEY: meta}


def dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), default=str)


def write_ndjson(path, records: Iterable[dict], meta: dict | None = None) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        if meta is not None:
            fh.write(dumps(meta) + "\n")
        for rec in records:
            fh.write(dumps(rec) + "\n")
            n += 1
    return n


def read_ndjson(path) -> tuple[dict | None, list[dict]]:
    """Return ``(meta, records)``; meta is None when the file has no header."""
    meta = None
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if META_KEY in obj and meta is None and not records:
                meta = obj[META_KEY]
                continue
            records.append(obj)
    return meta, records


def iter_ndjson(path) -> Iterator[dict]:
    yield from read_ndjson(path)[1]


def write_csv(path, header: list[str], rows: Iterable[Iterable[Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(header, rows), encoding="utf-8")


def csv_text(header: list[str], rows: Iterable[Iterable[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()
