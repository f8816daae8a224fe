"""Vegetation indices and the 11-value feature vector.

Band roles follow the LANDSAT-8 OLI layout: Blue = b2, Red = b4, NIR = b5,
SWIR = b6 (1-based band numbers). Feature order is fixed::

    b1 b2 b3 b4 b5 b6 b7 EVI NDVI ARVI LSWI

Index functions take scalars or numpy arrays. A zero denominator does not
raise: the value falls back to a sentinel and, with ``return_flag=True``, a
boolean flag (array) marks the degenerate inputs so a single bad pixel cannot
abort a batch job.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .stages import STAGES

BLUE, RED, NIR, SWIR = 1, 3, 4, 5  # 0-based columns into b1..b7
FEATURE_NAMES = ("b1", "b2", "b3", "b4", "b5", "b6", "b7", "evi", "ndvi", "arvi", "lswi")
INDEX_NAMES = FEATURE_NAMES[7:]
N_FEATURES = len(FEATURE_NAMES)

EVI_DEGENERATE_TOL = 1e-9
EVI_CLAMP = 10.0


@dataclass(frozen=True)
class EviCoefficients:
    """MODIS EVI coefficients: gain, red and blue aerosol terms, canopy background."""

    G: float = 2.5
    c_red: float = 6.0
    c_blue: float = 7.5
    L: float = 1.0

    def __post_init__(self):
        vals = (self.G, self.c_red, self.c_blue, self.L)
        if not np.all(np.isfinite(vals)):
            raise ValueError("EVI coefficients must be finite")
        if self.L <= 0:
            raise ValueError("EVI canopy background L must be positive")


MODIS_EVI = EviCoefficients()


def _finish(value, flag, return_flag):
    if np.ndim(value) == 0:
        value, flag = float(value), bool(flag)
    return (value, flag) if return_flag else value


def _normalized_difference(a, b, return_flag):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    den = a + b
    flag = den == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.where(flag, 0.0, (a - b) / np.where(flag, 1.0, den))
    return _finish(value, flag, return_flag)


def ndvi(nir, red, return_flag=False):
    """(NIR - Red) / (NIR + Red); 0 and flagged when both are zero."""
    return _normalized_difference(nir, red, return_flag)


def lswi(nir, swir, return_flag=False):
    """(NIR - SWIR) / (NIR + SWIR); 0 and flagged when both are zero."""
    return _normalized_difference(nir, swir, return_flag)


def evi(nir, red, blue, c: EviCoefficients = MODIS_EVI, return_flag=False):
    """Enhanced Vegetation Index in the MODIS form.

    ``G * (NIR - Red) / (NIR + c_red*Red - c_blue*Blue + L)``. When the
    denominator is within 1e-9 of zero the result is flagged and clamped to
    +/-10 following the sign of the numerator (0 if the numerator is 0).
    """
    nir = np.asarray(nir, dtype=np.float64)
    red = np.asarray(red, dtype=np.float64)
    blue = np.asarray(blue, dtype=np.float64)
    num = c.G * (nir - red)
    den = nir + c.c_red * red - c.c_blue * blue + c.L
    flag = np.abs(den) < EVI_DEGENERATE_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = num / np.where(flag, 1.0, den)
    value = np.where(flag, np.sign(num) * EVI_CLAMP, raw)
    return _finish(value, flag, return_flag)


def arvi(nir, red, blue, return_flag=False):
    """Atmospherically Resistant Vegetation Index, with the denominator
    ``NIR + (2*Red + Blue)``.

    Note the ``+ Blue`` in the denominator: the usual ARVI has ``- Blue``
    there. Kept as is on purpose; see README.
    """
    nir = np.asarray(nir, dtype=np.float64)
    red = np.asarray(red, dtype=np.float64)
    blue = np.asarray(blue, dtype=np.float64)
    num = nir - (2.0 * red - blue)
    den = nir + (2.0 * red + blue)
    flag = den == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.where(flag, 0.0, num / np.where(flag, 1.0, den))
    return _finish(value, flag, return_flag)


@dataclass(frozen=True)
class FeatureVector:
    values: tuple
    degenerate: frozenset = frozenset()

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if len(values) != N_FEATURES:
            raise ValueError(f"feature vector needs {N_FEATURES} values, got {len(values)}")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature vector has non-finite entries")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "degenerate", frozenset(self.degenerate))

    def as_array(self):
        return np.array(self.values)


def feature_matrix(bands, c: EviCoefficients = MODIS_EVI):
    """Vectorised featurization of an ``(n, 7)`` band array.

    Returns the ``(n, 11)`` feature matrix and an ``(n, 4)`` boolean array of
    degenerate flags for EVI, NDVI, ARVI, LSWI.
    """
    bands = np.atleast_2d(np.asarray(bands, dtype=np.float64))
    if bands.shape[1] != 7:
        raise ValueError(f"expected 7 band columns, got {bands.shape[1]}")
    nir, red, blue, swir = bands[:, NIR], bands[:, RED], bands[:, BLUE], bands[:, SWIR]
    e, fe = evi(nir, red, blue, c, return_flag=True)
    n, fn = ndvi(nir, red, return_flag=True)
    a, fa = arvi(nir, red, blue, return_flag=True)
    w, fw = lswi(nir, swir, return_flag=True)
    X = np.column_stack([bands, e, n, a, w])
    flags = np.column_stack([fe, fn, fa, fw])
    return X, flags


def featurize(sample, c: EviCoefficients = MODIS_EVI) -> FeatureVector:
    X, flags = feature_matrix(np.asarray(sample.bands)[None, :], c)
    bad = frozenset(name for name, f in zip(INDEX_NAMES, flags[0]) if f)
    return FeatureVector(tuple(X[0].tolist()), bad)


def featurize_dataset(d, c: EviCoefficients = MODIS_EVI) -> np.ndarray:
    X, _ = feature_matrix(d.bands() if len(d) else np.empty((0, 7)), c)
    return X


@dataclass(frozen=True)
class Standardizer:
    """Per-feature centering and scaling fitted on training data.

    ``sds`` holds the raw population SDs (zero allowed); ``scale`` is what is
    actually divided by, with zeros replaced by one.
    """

    means: np.ndarray
    sds: np.ndarray

    @property
    def scale(self):
        return np.where(self.sds == 0, 1.0, self.sds)

    @classmethod
    def identity(cls, width=N_FEATURES):
        return cls(np.zeros(width), np.ones(width))


def _as_matrix(vectors):
    if isinstance(vectors, np.ndarray):
        return np.atleast_2d(vectors).astype(np.float64, copy=False)
    return np.array([v.values if isinstance(v, FeatureVector) else v for v in vectors], dtype=np.float64)


def fit_standardizer(train) -> Standardizer:
    X = _as_matrix(train)
    if X.shape[0] < 2:
        raise ValueError(f"need at least 2 training vectors to fit a standardizer, got {X.shape[0]}")
    # rounding gives constant columns a tiny nonzero SD; pin it to zero
    sds = np.where(np.ptp(X, axis=0) == 0, 0.0, X.std(axis=0))
    return Standardizer(X.mean(axis=0), sds)


def apply_standardizer(z: Standardizer, v):
    """Standardize a FeatureVector, a single row or a matrix of rows."""
    if isinstance(v, FeatureVector):
        out = (v.as_array() - z.means) / z.scale
        return FeatureVector(tuple(out.tolist()), v.degenerate)
    return (np.asarray(v, dtype=np.float64) - z.means) / z.scale


def write_feature_csv(X, labels, path) -> Path:
    """Export features with header ``b1..b7,evi,ndvi,arvi,lswi,stage``.

    ``labels`` is a sequence of stage indices or ``None`` entries.
    """
    path = Path(path)
    rows = [",".join(FEATURE_NAMES + ("stage",))]
    for x, y in zip(np.asarray(X), labels):
        stage = "" if y is None else STAGES[int(y)]
        rows.append(",".join(repr(float(v)) for v in x) + "," + stage)
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path
