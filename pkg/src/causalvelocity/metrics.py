"""Decision metrics (accuracy, area under the decision rate curve) and the
deterministic report serialization used by the benchmark harness."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import EmptyInput


@dataclass(frozen=True)
class RowOutcome:
    """One dataset's discovery outcome as consumed by the metrics."""

    id: str
    decision: Optional[str] = None
    truth: Optional[str] = None
    confidence: float = 0.0
    weight: float = 1.0
    loss_xy: Optional[float] = None
    loss_yx: Optional[float] = None
    error: Optional[str] = None

    @property
    def correct(self) -> Optional[bool]:
        if self.error is not None or self.decision is None or self.truth is None:
            return None
        return self.decision == self.truth


def _as_triples(rows):
    """Normalize to (correct, confidence, weight, tie_key) tuples."""
    out = []
    for i, row in enumerate(rows):
        if isinstance(row, RowOutcome):
            if row.correct is None:
                continue
            out.append((bool(row.correct), float(row.confidence), float(row.weight), row.id))
        else:
            correct, confidence, *rest = row
            weight = float(rest[0]) if rest else 1.0
            out.append((bool(correct), float(confidence), weight, i))
    return out


def compute_audrc(rows) -> float:
    """Mean weighted accuracy over confidence-ranked prefixes.

    Rows are sorted by confidence descending (ties broken by id / input
    order for determinism); for each k the weighted accuracy of the top-k
    rows is computed, and the mean over k = 1..N is returned.
    """
    triples = _as_triples(rows)
    if not triples:
        raise EmptyInput("no decided rows to rank")
    triples.sort(key=lambda t: (-t[1], t[3]))
    correct = np.array([t[0] for t in triples], dtype=float)
    weight = np.array([t[2] for t in triples], dtype=float)
    cum_hits = np.cumsum(weight * correct)
    cum_w = np.cumsum(weight)
    return float(np.mean(cum_hits / cum_w))


def accuracy(rows, weighted: bool = False) -> float:
    triples = _as_triples(rows)
    if not triples:
        raise EmptyInput("no decided rows to score")
    correct = np.array([t[0] for t in triples], dtype=float)
    weight = np.array([t[2] for t in triples], dtype=float) if weighted else np.ones(len(triples))
    return float(np.sum(weight * correct) / np.sum(weight))


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    weighted_accuracy: float
    audrc: float
    n_datasets: int
    n_errors: int
    rows: tuple = ()
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "weighted_accuracy": self.weighted_accuracy,
            "audrc": self.audrc,
            "n_datasets": self.n_datasets,
            "n_errors": self.n_errors,
            "config": self.config,
            "rows": [
                {
                    "id": r.id,
                    "decision": r.decision,
                    "truth": r.truth,
                    "confidence": r.confidence,
                    "weight": r.weight,
                    "loss_xy": r.loss_xy,
                    "loss_yx": r.loss_yx,
                    "error": r.error,
                }
                for r in self.rows
            ],
        }


def build_report(rows, config: Optional[dict] = None) -> MetricsReport:
    rows = tuple(rows)
    valid = [r for r in rows if r.correct is not None]
    n_errors = sum(1 for r in rows if r.error is not None)
    if valid:
        acc = accuracy(valid, weighted=False)
        wacc = accuracy(valid, weighted=True)
        audrc = compute_audrc(valid)
    else:
        acc = wacc = audrc = float("nan")
    return MetricsReport(
        accuracy=acc,
        weighted_accuracy=wacc,
        audrc=audrc,
        n_datasets=len(rows),
        n_errors=n_errors,
        rows=rows,
        config=dict(config or {}),
    )


def dumps(obj, indent: int = 0) -> str:
    """JSON with every float rendered at 17 significant digits.

    Deterministic byte output for identical inputs; dict key order is
    preserved (callers build reports with fixed ordering).
    """
    pad = "  " * indent
    pad_in = "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not np.isfinite(v):
            return "null"
        return format(v, ".17g")
    if isinstance(obj, str):
        escaped = obj.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
        return f'"{escaped}"'
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad_in}"{k}": {dumps(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        items = [f"{pad_in}{dumps(v, indent + 1)}" for v in seq]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    raise TypeError(f"cannot serialize {type(obj)!r}")
