"""EVI/LSWI time-series smoothing and heuristic paddy stage detection.

The detector works on a smoothed series at the native 16-day cadence:

* flooding/transplanting: earliest step with ``LSWI + 0.05 >= EVI`` while EVI
  is below the series median (so bare post-harvest soil is not mistaken for
  standing water);
* heading: EVI maximum after flooding;
* harvest: first step after heading where the curve has turned convex
  (positive discrete second difference following the concave peak) and EVI
  has dropped below half of the peak amplitude above the pre-flood baseline;
  the post-heading EVI minimum otherwise.

Stages are then laid out as GS1 from flooding to the flooding/heading
midpoint, GS2 up to heading, GS3 up to harvest, GS4 for the harvest step and
the one after it, GS5 everywhere else. The harvest rule is a stand-in for an
operational heuristic whose exact thresholds are not published.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import features
from .stages import STAGES

CADENCE_DAYS = 16
FLOOD_MARGIN = 0.05
MIN_SERIES_LENGTH = 5
DEFAULT_SMOOTH_WINDOW = 3
_D2_ZERO = 1e-12


class SeriesError(ValueError):
    pass


@dataclass(frozen=True)
class PhenologySeries:
    dates: tuple
    evi: np.ndarray
    lswi: np.ndarray

    def __post_init__(self):
        dates = tuple(self.dates)
        evi = np.asarray(self.evi, dtype=np.float64)
        lswi = np.asarray(self.lswi, dtype=np.float64)
        if len(dates) < MIN_SERIES_LENGTH:
            raise SeriesError(f"series needs at least {MIN_SERIES_LENGTH} points, got {len(dates)}")
        if evi.shape != (len(dates),) or lswi.shape != (len(dates),):
            raise SeriesError("evi and lswi must have one value per date")
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise SeriesError("dates must be strictly increasing")
        if not (np.all(np.isfinite(evi)) and np.all(np.isfinite(lswi))):
            raise SeriesError("series values must be finite")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "evi", evi)
        object.__setattr__(self, "lswi", lswi)

    def __len__(self):
        return len(self.dates)

    def index_of(self, date):
        return self.dates.index(date)

    def smoothed(self, window=DEFAULT_SMOOTH_WINDOW):
        return PhenologySeries(self.dates, smooth_series(self.evi, window), smooth_series(self.lswi, window))


@dataclass(frozen=True)
class StageWindows:
    flooding_date: Optional[dt.date]
    heading_date: Optional[dt.date]
    harvest_date: Optional[dt.date]
    stages: tuple = ()


def smooth_series(values, window=DEFAULT_SMOOTH_WINDOW):
    """Centered moving average, window truncated at both ends of the series.

    >>> smooth_series([0.0, 3.0, 0.0], 3).tolist()
    [1.5, 1.0, 1.5]
    """
    x = np.asarray(values, dtype=np.float64)
    n = len(x)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    if window > n:
        raise ValueError(f"window {window} exceeds series length {n}")
    half = window // 2
    return np.array([x[max(0, i - half): i + half + 1].mean() for i in range(n)])


# -------------------------------------------------------------- detection

def flooding_index(s: PhenologySeries):
    median = np.median(s.evi)
    hits = np.flatnonzero((s.lswi + FLOOD_MARGIN >= s.evi) & (s.evi < median))
    return int(hits[0]) if hits.size else None


def heading_index(s: PhenologySeries, flood=None):
    if flood is None:
        return int(np.argmax(s.evi))
    if flood >= len(s) - 1:
        return None
    return flood + 1 + int(np.argmax(s.evi[flood + 1:]))


def _baseline(s: PhenologySeries, flood, head):
    if flood is not None and flood > 0:
        return float(np.mean(s.evi[:flood]))
    return float(np.min(s.evi[: head + 1]))


def harvest_index(s: PhenologySeries, flood, head):
    if head is None or head >= len(s) - 1:
        return None
    e = s.evi
    base = _baseline(s, flood, head)
    threshold = base + 0.5 * (e[head] - base)
    d2 = np.zeros(len(e))
    d2[1:-1] = e[:-2] - 2.0 * e[1:-1] + e[2:]

    # heading is a local maximum, so any convex step after it is a
    # negative-to-positive change of the second difference
    for i in range(head + 1, len(e) - 1):
        if d2[i] > _D2_ZERO and e[i] < threshold:
            return i
    return head + 1 + int(np.argmin(e[head + 1:]))


def _date(s, i):
    return None if i is None else s.dates[i]


def detect_flooding(s: PhenologySeries):
    """Earliest flooding/transplanting date, or ``None``."""
    return _date(s, flooding_index(s))


def detect_heading(s: PhenologySeries):
    """Date of the EVI peak after flooding (global peak if no flooding)."""
    return _date(s, heading_index(s, flooding_index(s)))


def detect_harvest(s: PhenologySeries):
    flood = flooding_index(s)
    return _date(s, harvest_index(s, flood, heading_index(s, flood)))


def assign_stages(s: PhenologySeries, w: StageWindows) -> tuple:
    """Label every step of ``s`` with a growth stage.

    A series without a flooding date is all GS5. Otherwise the windows must
    satisfy flooding < heading <= harvest.
    """
    n = len(s)
    if w.flooding_date is None:
        return ("GS5",) * n
    if w.heading_date is None or w.harvest_date is None:
        raise ValueError("heading and harvest dates are required once flooding is set")
    f, h, r = s.index_of(w.flooding_date), s.index_of(w.heading_date), s.index_of(w.harvest_date)
    if not f < h <= r:
        raise ValueError(f"inconsistent stage windows: flooding={w.flooding_date}, heading={w.heading_date}, harvest={w.harvest_date}")
    mid = (f + h) / 2.0
    out = []
    for i in range(n):
        if f <= i < mid:
            out.append("GS1")
        elif mid <= i < h:
            out.append("GS2")
        elif h <= i < r:
            out.append("GS3")
        elif r <= i <= r + 1:
            out.append("GS4")
        else:
            out.append("GS5")
    return tuple(out)


def detect_windows(s: PhenologySeries, smooth_window=DEFAULT_SMOOTH_WINDOW) -> StageWindows:
    """Smooth ``s`` and run the full detection, returning dates and stages."""
    sm = s.smoothed(smooth_window) if smooth_window > 1 else s
    flood = flooding_index(sm)
    if flood is None:
        return StageWindows(None, _date(sm, heading_index(sm)), None, ("GS5",) * len(sm))
    head = heading_index(sm, flood)
    harvest = harvest_index(sm, flood, head)
    w = StageWindows(_date(sm, flood), _date(sm, head), _date(sm, harvest))
    return StageWindows(w.flooding_date, w.heading_date, w.harvest_date, assign_stages(sm, w))


# ------------------------------------------------------- canonical profile

# Endmember reflectances for OLI bands 1-7.
ENDMEMBERS = {
    "soil":  (0.10, 0.11, 0.14, 0.18, 0.25, 0.30, 0.26),
    "water": (0.09, 0.08, 0.07, 0.05, 0.03, 0.02, 0.01),
    "green": (0.03, 0.04, 0.08, 0.04, 0.45, 0.22, 0.11),
    "straw": (0.07, 0.08, 0.11, 0.14, 0.30, 0.32, 0.24),
}

# (step, soil, water, green, straw) fractions; linear in between.
_KEYFRAMES = (
    (0, 1.00, 0.00, 0.00, 0.00),
    (3, 1.00, 0.00, 0.00, 0.00),
    (4, 0.10, 0.90, 0.00, 0.00),
    (5, 0.05, 0.80, 0.15, 0.00),
    (11, 0.00, 0.00, 1.00, 0.00),
    (13, 0.00, 0.00, 0.85, 0.15),
    (15, 0.00, 0.00, 0.60, 0.40),
    (16, 0.60, 0.00, 0.00, 0.40),
    (17, 0.75, 0.00, 0.00, 0.25),
    (19, 1.00, 0.00, 0.00, 0.00),
    (22, 1.00, 0.00, 0.00, 0.00),
)

CANONICAL_START = dt.date(2015, 10, 2)
CANONICAL_LENGTH = 23


@dataclass(frozen=True)
class CanonicalProfile:
    series: PhenologySeries
    bands: np.ndarray
    fractions: np.ndarray
    flooding: int
    heading: int
    harvest: int


def canonical_profile(start=CANONICAL_START) -> CanonicalProfile:
    """Noise-free one-season profile built by linear spectral mixing.

    Soil, water, green canopy and straw endmembers are mixed with fractions
    that move through fallow, flooding, vegetative growth, heading, ripening,
    harvest and plowing. The true flooding, heading and harvest steps are
    known by construction (4, 11 and 16).
    """
    steps = np.arange(CANONICAL_LENGTH)
    keys = np.array(_KEYFRAMES, dtype=np.float64)
    fractions = np.column_stack([np.interp(steps, keys[:, 0], keys[:, j]) for j in range(1, 5)])
    spectra = np.array([ENDMEMBERS[k] for k in ("soil", "water", "green", "straw")])
    bands = fractions @ spectra
    X, _ = features.feature_matrix(bands)
    dates = tuple(start + dt.timedelta(days=CADENCE_DAYS * int(i)) for i in steps)
    series = PhenologySeries(dates, X[:, 7], X[:, 10])
    return CanonicalProfile(series, bands, fractions, flooding=4, heading=11, harvest=16)


# -------------------------------------------------------------------- IO

def read_series(path) -> PhenologySeries:
    """Read a ``date,evi,lswi`` CSV."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["date", "evi", "lswi"]:
            raise SeriesError(f"{path}: header must be 'date,evi,lswi'")
        dates, evi, lswi = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise SeriesError(f"{path}: line {lineno}: expected 3 columns, got {len(row)}")
            try:
                dates.append(dt.date.fromisoformat(row[0].strip()))
                evi.append(float(row[1]))
                lswi.append(float(row[2]))
            except ValueError as exc:
                raise SeriesError(f"{path}: line {lineno}: {exc}") from None
    return PhenologySeries(tuple(dates), np.array(evi), np.array(lswi))


def write_series(s: PhenologySeries, path):
    path = Path(path)
    lines = ["date,evi,lswi"] + [f"{d.isoformat()},{e!r},{w!r}" for d, e, w in zip(s.dates, s.evi.tolist(), s.lswi.tolist())]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_stages(dates, stages, path):
    path = Path(path)
    if any(st not in STAGES for st in stages):
        raise ValueError("unknown stage label in output")
    lines = ["date,stage"] + [f"{d.isoformat()},{st}" for d, st in zip(dates, stages)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
