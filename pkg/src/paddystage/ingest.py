"""Reading, cleaning, balancing and splitting labelled reflectance samples.

Sample files are comma separated text with the header::

    date,b1,b2,b3,b4,b5,b6,b7,cloud,stage

Bands ``b1..b7`` are LANDSAT-8 OLI bands 1-7 as surface reflectance, ``cloud``
is 0/1 and ``stage`` is ``GS1``..``GS5`` or empty for unlabelled rows.
"""

from __future__ import annotations

import datetime as dt
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .stages import STAGES, stage_index

N_BANDS = 7
SAMPLE_COLUMNS = ("date",) + tuple(f"b{i}" for i in range(1, N_BANDS + 1)) + ("cloud", "stage")
SAMPLE_HEADER = ",".join(SAMPLE_COLUMNS)


class SampleFileError(ValueError):
    """Raised when a sample file cannot be parsed.

    ``errors`` holds ``(line_number, message)`` pairs for every bad row.
    """

    def __init__(self, path, errors):
        self.path = str(path)
        self.errors = list(errors)
        lines = "; ".join(f"line {n}: {msg}" for n, msg in self.errors[:20])
        more = f" (+{len(self.errors) - 20} more)" if len(self.errors) > 20 else ""
        super().__init__(f"{self.path}: {lines}{more}")


@dataclass(frozen=True)
class Sample:
    date: dt.date
    bands: tuple
    cloud: bool = False
    stage: Optional[str] = None

    def __post_init__(self):
        bands = tuple(float(b) for b in self.bands)
        if len(bands) != N_BANDS:
            raise ValueError(f"expected {N_BANDS} bands, got {len(bands)}")
        if not all(math.isfinite(b) for b in bands):
            raise ValueError(f"non-finite band value in {bands}")
        if self.stage is not None:
            stage_index(self.stage)
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "cloud", bool(self.cloud))


@dataclass(frozen=True)
class Dataset:
    samples: tuple = ()
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))

    def __len__(self):
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def class_counts(self) -> dict:
        """Per-stage counts in canonical stage order; unlabelled rows are skipped."""
        counts = Counter(s.stage for s in self.samples if s.stage is not None)
        return {st: counts[st] for st in STAGES if counts[st]}

    def bands(self) -> np.ndarray:
        if not self.samples:
            return np.empty((0, N_BANDS))
        return np.array([s.bands for s in self.samples], dtype=np.float64)

    def labels(self) -> np.ndarray:
        """Stage indices as an int array; raises if any sample is unlabelled."""
        _require_labels(self)
        return np.array([stage_index(s.stage) for s in self.samples], dtype=np.int64)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 2.0 / 3.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def _require_labels(d: Dataset):
    for i, s in enumerate(d.samples):
        if s.stage is None:
            raise ValueError(f"sample {i} ({s.date}) has no stage label")


# --------------------------------------------------------------------------
# file IO
# --------------------------------------------------------------------------

def _parse_row(fields):
    if len(fields) != len(SAMPLE_COLUMNS):
        raise ValueError(f"expected {len(SAMPLE_COLUMNS)} columns, got {len(fields)}")
    try:
        date = dt.date.fromisoformat(fields[0].strip())
    except ValueError:
        raise ValueError(f"bad date {fields[0]!r} (expected YYYY-MM-DD)") from None
    bands = []
    for name, raw in zip(SAMPLE_COLUMNS[1:8], fields[1:8]):
        try:
            value = float(raw)
        except ValueError:
            raise ValueError(f"non-numeric value {raw!r} in column {name}") from None
        if not math.isfinite(value):
            raise ValueError(f"non-finite value {raw!r} in column {name}")
        bands.append(value)
    cloud = fields[8].strip()
    if cloud not in ("0", "1"):
        raise ValueError(f"cloud flag must be 0 or 1, got {cloud!r}")
    stage = fields[9].strip() or None
    if stage is not None and stage not in STAGES:
        raise ValueError(f"unknown stage token {stage!r}")
    return Sample(date, tuple(bands), cloud == "1", stage)


def parse_samples(path, header: str = SAMPLE_HEADER) -> Dataset:
    """Read a sample file into a :class:`Dataset`, preserving row order.

    Every malformed row is collected and reported together in one
    :class:`SampleFileError`, each with its 1-based line number.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"sample file not found: {path}")
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise SampleFileError(path, [(1, "missing header")])
    if lines[0].strip().replace(" ", "") != header:
        raise SampleFileError(path, [(1, f"header must be {header!r}")])

    samples, errors = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            samples.append(_parse_row(line.split(",")))
        except ValueError as exc:
            errors.append((lineno, str(exc)))
    if errors:
        raise SampleFileError(path, errors)
    return Dataset(tuple(samples), provenance=str(path))


def format_samples(d: Iterable[Sample]) -> str:
    rows = [SAMPLE_HEADER]
    for s in d:
        bands = ",".join(repr(b) for b in s.bands)
        rows.append(f"{s.date.isoformat()},{bands},{int(s.cloud)},{s.stage or ''}")
    return "\n".join(rows) + "\n"


def write_samples(d: Dataset, path) -> Path:
    path = Path(path)
    path.write_text(format_samples(d), encoding="utf-8")
    return path


# --------------------------------------------------------------------------
# cleaning, balancing, splitting
# --------------------------------------------------------------------------

def remove_cloud(d: Dataset) -> Dataset:
    return Dataset(tuple(s for s in d.samples if not s.cloud), d.provenance)


def _indices_by_class(d: Dataset) -> dict:
    groups: dict = {}
    for i, s in enumerate(d.samples):
        groups.setdefault(s.stage, []).append(i)
    return {st: groups[st] for st in STAGES if st in groups}


def balance_classes(d: Dataset, seed: int) -> Dataset:
    """Downsample every present stage to the size of the smallest one.

    Selection is uniform without replacement, driven by ``seed``; kept samples
    stay in their original order, and a class already at the minimum keeps
    all of its samples.
    """
    _require_labels(d)
    groups = _indices_by_class(d)
    if not groups:
        return Dataset((), d.provenance)
    target = min(len(ix) for ix in groups.values())
    rng = np.random.default_rng(seed)
    keep = []
    for st in STAGES:
        ix = groups.get(st)
        if ix is None:
            continue
        if len(ix) == target:
            keep.extend(ix)
        else:
            keep.extend(rng.choice(ix, size=target, replace=False).tolist())
    keep.sort()
    return Dataset(tuple(d.samples[i] for i in keep), d.provenance)


def split_train_test(d: Dataset, spec: SplitSpec) -> tuple:
    """Stratified holdout: each class sends floor(fraction * n) samples to train.

    The remainder of every class goes to test. Both partitions keep the input
    order.
    """
    _require_labels(d)
    rng = np.random.default_rng(spec.seed)
    train_ix = []
    for st, ix in _indices_by_class(d).items():
        if len(ix) < 2:
            raise ValueError(f"class {st} has {len(ix)} sample(s); need at least 2 to stratify")
        n_train = math.floor(spec.train_fraction * len(ix))
        perm = rng.permutation(len(ix))
        train_ix.extend(ix[j] for j in perm[:n_train])
    train_set = set(train_ix)
    train = tuple(s for i, s in enumerate(d.samples) if i in train_set)
    test = tuple(s for i, s in enumerate(d.samples) if i not in train_set)
    return Dataset(train, d.provenance), Dataset(test, d.provenance)


def stratified_folds(d: Dataset, k: int, seed: int) -> list:
    """Partition sample indices into ``k`` stratified folds (round-robin per class)."""
    _require_labels(d)
    if k < 2:
        raise ValueError("k must be at least 2")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    for st, ix in _indices_by_class(d).items():
        if len(ix) < k:
            raise ValueError(f"class {st} has {len(ix)} samples, fewer than k={k}")
        for j, i in enumerate(rng.permutation(ix)):
            folds[j % k].append(int(i))
    return [sorted(f) for f in folds]


# --------------------------------------------------------------------------
# synthetic data
# --------------------------------------------------------------------------

def synthesize_dataset(n_per_class: int, noise_sd: float, seed: int) -> Dataset:
    """Generate a labelled dataset from the canonical paddy phenology profile.

    For every stage the generator picks dates uniformly among the profile
    steps the phenology detector assigns to that stage, emits that step's
    7-band reflectance, and adds Gaussian noise of ``noise_sd`` (clipped to
    [0, 1]). Output is grouped by stage, ``n_per_class`` rows each.
    """
    from .phenology import canonical_profile, detect_windows

    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")

    profile = canonical_profile()
    windows = detect_windows(profile.series)
    stages = windows.stages
    rng = np.random.default_rng(seed)

    samples = []
    for st in STAGES:
        steps = [i for i, s in enumerate(stages) if s == st]
        if not steps:
            raise RuntimeError(f"canonical profile has no step labelled {st}")
        picks = rng.choice(steps, size=n_per_class, replace=True)
        noise = rng.normal(0.0, noise_sd, size=(n_per_class, N_BANDS)) if noise_sd > 0 else np.zeros((n_per_class, N_BANDS))
        bands = np.clip(profile.bands[picks] + noise, 0.0, 1.0)
        for i, b in zip(picks, bands):
            samples.append(Sample(profile.series.dates[i], tuple(b.tolist()), False, st))
    return Dataset(tuple(samples), provenance=f"synthetic(n_per_class={n_per_class},noise_sd={noise_sd!r},seed={seed})")
