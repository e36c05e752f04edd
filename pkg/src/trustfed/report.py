"""Serialisation of simulation output: trace JSON-lines, summary CSV, trust log, comparisons."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SUMMARY_HEADER = ("round", "global_accuracy", "mean_trust_honest", "mean_trust_malicious", "selected_count",
                  "dismissed")


def _plain(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), default=_plain, allow_nan=False)


def jsonl(records: Iterable[dict]) -> str:
    return "".join(dumps(r) + "\n" for r in records)


def atomic_write(path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _mean(xs) -> float | None:
    return float(np.mean(xs)) if len(xs) else None


def summary_rows(traces) -> list[tuple]:
    rows = []
    for t in traces:
        d = t if isinstance(t, dict) else t.to_dict()
        honest = [c["trust"] for c in d["per_client"] if not c.get("malicious")]
        bad = [c["trust"] for c in d["per_client"] if c.get("malicious")]
        rows.append((d["round"], d["global_accuracy"], _mean(honest), _mean(bad), len(d["selected_ids"]),
                     int(bool(d["dismissed"]))))
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def summary_csv(traces) -> str:
    return csv_text(SUMMARY_HEADER, summary_rows(traces))


def trace_jsonl(traces) -> str:
    return jsonl(t.to_dict() for t in traces)


def read_trace(path) -> list[dict]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc.msg}") from exc
        if not isinstance(rec, dict) or "round" not in rec or "per_client" not in rec:
            raise ValueError(f"{path}: line {lineno}: not a round trace record")
        out.append(rec)
    return out


def compare_csv(traces: Sequence[list[dict]], labels: Sequence[str]) -> str:
    """One row per round: accuracy, mean trust and dismissal flag for each trace side by side."""
    header = ["round"]
    for lab in labels:
        header += [f"accuracy_{lab}", f"mean_trust_{lab}", f"dismissed_{lab}"]
    rows = []
    for k in range(len(traces[0])):
        row = [traces[0][k]["round"]]
        for tr in traces:
            d = tr[k]
            row += [d["global_accuracy"], _mean([c["trust"] for c in d["per_client"]]), int(bool(d["dismissed"]))]
        rows.append(row)
    return csv_text(header, rows)
