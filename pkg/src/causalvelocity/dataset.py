"""Bivariate dataset containers, preprocessing, and the cause-effect pair file format."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DegenerateVariance, EmptyResult, MissingMeta, ParseError


class Direction(str, enum.Enum):
    XtoY = "XtoY"
    YtoX = "YtoX"

    def flipped(self) -> "Direction":
        return Direction.YtoX if self is Direction.XtoY else Direction.XtoY


# Tübingen ids excluded under the standard protocol (binary / multivariate pairs),
# and the additional discrete-variable ids excluded for the continuous-only subset.
STANDARD_EXCLUDED = frozenset({47, 70, 107, 52, 53, 54, 55, 71, 105})
DISCRETE_EXCLUDED = frozenset(
    {5, 6, 7, 8, 9, 10, 11, 13, 14, 15, 16, 26, 27, 28, 29,
     32, 33, 34, 35, 36, 37, 85, 94, 95, 99}
)


@dataclass(frozen=True)
class DataPair:
    """n paired observations of two scalar variables plus provenance."""

    xs: np.ndarray
    ys: np.ndarray
    truth: Optional[Direction] = None
    weight: float = 1.0
    id: str = ""
    seed: Optional[int] = None

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        if xs.ndim != 1 or ys.ndim != 1 or xs.shape != ys.shape:
            raise ValueError("xs and ys must be 1-D arrays of equal length")
        if xs.size < 2:
            raise ValueError("a pair needs at least two observations")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValueError("observations must be finite")
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")

    @property
    def n(self) -> int:
        return self.xs.size

    def swapped(self) -> "DataPair":
        """Exchange the roles of the two variables (truth label flips with them)."""
        truth = self.truth.flipped() if self.truth is not None else None
        return replace(self, xs=self.ys, ys=self.xs, truth=truth)

    def take(self, indices) -> "DataPair":
        return replace(self, xs=self.xs[indices], ys=self.ys[indices])


@dataclass(frozen=True)
class PreprocessConfig:
    standardize: bool = True
    trim_fraction: float = 0.05
    subsample_to: Optional[int] = None
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.trim_fraction < 0.5):
            raise ValueError("trim_fraction must lie in [0, 0.5)")


@dataclass(frozen=True)
class StandardizeStats:
    mean_x: float
    sd_x: float
    mean_y: float
    sd_y: float

    def invert(self, xs, ys):
        return xs * self.sd_x + self.mean_x, ys * self.sd_y + self.mean_y


def standardize(pair: DataPair) -> tuple[DataPair, StandardizeStats]:
    """Rescale both coordinates to zero mean, unit sd (population divisor n).

    Raises DegenerateVariance naming the offending coordinate when one is constant.
    """
    stats = {}
    for name, v in (("x", pair.xs), ("y", pair.ys)):
        sd = float(np.std(v))
        if sd <= 0.0 or not np.isfinite(sd):
            err = DegenerateVariance(f"coordinate {name} of pair {pair.id!r} is constant")
            err.coordinate = name.upper()
            raise err
        stats[name] = (float(np.mean(v)), sd)
    (mx, sx), (my, sy) = stats["x"], stats["y"]
    out = replace(pair, xs=(pair.xs - mx) / sx, ys=(pair.ys - my) / sy)
    return out, StandardizeStats(mx, sx, my, sy)


def _marginal_ranks(v: np.ndarray) -> np.ndarray:
    # stable argsort breaks ties by original index
    order = np.argsort(v, kind="stable")
    ranks = np.empty_like(order)
    ranks[order] = np.arange(v.size)
    return ranks


def trim_indices(pair: DataPair, fraction: float) -> np.ndarray:
    """Indices (original order) surviving removal of marginal rank extremes.

    A point is dropped when its x OR y rank-quantile falls in the lowest or
    highest fraction/2 tail of its marginal.
    """
    if not (0.0 <= fraction < 0.5):
        raise ValueError("fraction must lie in [0, 0.5)")
    n = pair.n
    k = int(np.floor(fraction * n / 2.0))
    if k == 0:
        return np.arange(n)
    keep = np.ones(n, dtype=bool)
    for v in (pair.xs, pair.ys):
        r = _marginal_ranks(v)
        keep &= (r >= k) & (r < n - k)
    return np.flatnonzero(keep)


def trim_marginal_extremes(pair: DataPair, fraction: float) -> DataPair:
    idx = trim_indices(pair, fraction)
    if idx.size < 2:
        raise EmptyResult(f"trimming at fraction {fraction} left {idx.size} points")
    return pair.take(idx)


def subsample(pair: DataPair, m: int, seed: int) -> DataPair:
    """Draw m points: without replacement when n >= m, with replacement otherwise."""
    if m < 2:
        raise ValueError("m must be at least 2")
    rng = np.random.default_rng(seed)
    if pair.n >= m:
        idx = rng.choice(pair.n, size=m, replace=False)
    else:
        idx = rng.choice(pair.n, size=m, replace=True)
    return pair.take(idx)


class TuebingenFilter(str, enum.Enum):
    Standard = "standard"
    ContinuousOnly = "continuous"


def _excluded_ids(filt: TuebingenFilter) -> frozenset:
    if filt is TuebingenFilter.Standard:
        return STANDARD_EXCLUDED
    return STANDARD_EXCLUDED | DISCRETE_EXCLUDED


def _read_columns(path: Path) -> np.ndarray:
    rows = []
    width = None
    with open(path, "r") as fh:
        for line_no, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            try:
                row = [float(t) for t in tokens]
            except ValueError:
                raise ParseError(path, line_no, f"non-numeric token in {tokens}")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(path, line_no, f"expected {width} columns, got {len(row)}")
            rows.append(row)
    if not rows:
        raise ParseError(path, 1, "file holds no data rows")
    return np.asarray(rows, dtype=float)


def load_tuebingen(dir_path, filt: TuebingenFilter = TuebingenFilter.Standard) -> list[DataPair]:
    """Load pairNNNN.txt files under the pairmeta.txt protocol.

    Only pairs whose cause and effect are single columns are returned; the
    filter drops the standard excluded ids (plus discrete ids for the
    continuous-only subset).
    """
    root = Path(dir_path)
    meta_path = root / "pairmeta.txt"
    if not meta_path.exists():
        raise MissingMeta(f"no pairmeta.txt under {root}")
    excluded = _excluded_ids(filt)

    pairs = []
    with open(meta_path, "r") as fh:
        for line_no, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) < 6:
                raise ParseError(meta_path, line_no, "expected 6 meta fields")
            try:
                pair_id = int(tokens[0])
                cs, ce, es, ee = (int(t) for t in tokens[1:5])
                weight = float(tokens[5])
            except ValueError:
                raise ParseError(meta_path, line_no, f"malformed meta row {tokens}")
            if pair_id in excluded:
                continue
            if cs != ce or es != ee:
                continue  # multi-column cause or effect
            data_path = root / f"pair{pair_id:04d}.txt"
            if not data_path.exists():
                continue
            data = _read_columns(data_path)
            if data.shape[1] < max(cs, es):
                raise ParseError(data_path, 1, f"missing column {max(cs, es)}")
            lo, hi = min(cs, es), max(cs, es)
            xs, ys = data[:, lo - 1], data[:, hi - 1]
            truth = Direction.XtoY if cs == lo else Direction.YtoX
            pairs.append(
                DataPair(xs=xs, ys=ys, truth=truth, weight=weight, id=f"pair{pair_id:04d}")
            )
    return pairs


def save_pair(pair: DataPair, directory, stem: Optional[str] = None) -> Path:
    """Write a pair as CSV ("x,y" header) with a JSON provenance sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or (pair.id or "pair")
    csv_path = directory / f"{stem}.csv"
    with open(csv_path, "w") as fh:
        fh.write("x,y\n")
        for x, y in zip(pair.xs, pair.ys):
            fh.write(f"{x!r},{y!r}\n")
    sidecar = {
        "id": pair.id,
        "truth": pair.truth.value if pair.truth is not None else None,
        "weight": pair.weight,
        "seed": pair.seed,
    }
    with open(directory / f"{stem}.json", "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")
    return csv_path


def load_pair(csv_path) -> DataPair:
    csv_path = Path(csv_path)
    xs, ys = [], []
    with open(csv_path, "r") as fh:
        header = fh.readline()
        if header.strip().lower() not in ("x,y", '"x","y"'):
            raise ParseError(csv_path, 1, f"expected 'x,y' header, got {header.strip()!r}")
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            if len(parts) != 2:
                raise ParseError(csv_path, line_no, "expected two comma-separated values")
            try:
                xs.append(float(parts[0]))
                ys.append(float(parts[1]))
            except ValueError:
                raise ParseError(csv_path, line_no, f"non-numeric value in {parts}")
    meta = {}
    sidecar = csv_path.with_suffix(".json")
    if sidecar.exists():
        with open(sidecar, "r") as fh:
            meta = json.load(fh)
    truth = meta.get("truth")
    return DataPair(
        xs=np.asarray(xs),
        ys=np.asarray(ys),
        truth=Direction(truth) if truth else None,
        weight=float(meta.get("weight", 1.0)),
        id=str(meta.get("id", csv_path.stem)),
        seed=meta.get("seed"),
    )
