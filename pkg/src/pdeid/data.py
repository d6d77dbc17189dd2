"""Datasets on grids and at scattered points: corruption, splits, file I/O.

The corruption procedure is deliberately two-staged: the noise scale is the
standard deviation of the FULL noise-free field (sigma_nf), fixed before any
subsampling, so a sparse subsample is corrupted at the same absolute scale as
a dense one. PointDataset therefore carries sigma_nf alongside the values.

File formats (both versioned):
  * Points: CSV with a '#'-prefixed preamble (format tag, point count, noise
    level, role, sigma_nf, domain and source metadata as JSON), a
    't,x[,y],u' header, then one row per point with full repr precision.
  * Grid: binary; magic 'pdeidgrid\\n', u32 version, u32 n_d, u64-length-
    prefixed JSON metadata, u64 axis lengths (t first), axes as little-endian
    float64, then values in row-major (t-major) order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

POINTS_MAGIC = "pdeid-points"
GRID_MAGIC = b"pdeidgrid\n"
FORMAT_VERSION = 1

_AXIS_NAMES = "txyz"


def _frozen(arr, dtype=np.float64):
    arr = np.array(arr, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ProblemDomain:
    """Time interval (0, t_max] and an axis-aligned spatial box.

    Containment checks use the closure in time: solver grids carry the
    initial row at t = 0 and data drawn from them must still count as
    inside, while fresh collocation draws stay strictly positive.
    """

    t_max: float
    lows: tuple
    highs: tuple

    def __post_init__(self):
        object.__setattr__(self, "t_max", float(self.t_max))
        object.__setattr__(self, "lows", tuple(float(v) for v in self.lows))
        object.__setattr__(self, "highs", tuple(float(v) for v in self.highs))
        if not math.isfinite(self.t_max) or self.t_max <= 0:
            raise ConfigError(f"t_max must be positive, got {self.t_max}")
        if len(self.lows) != len(self.highs):
            raise ConfigError("lows and highs differ in length")
        if not 1 <= len(self.lows) <= 3:
            raise ConfigError("between 1 and 3 spatial dimensions")
        for lo, hi in zip(self.lows, self.highs):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ConfigError(f"bad spatial extent [{lo}, {hi}]")

    @property
    def n_d(self):
        return len(self.lows)

    def contains(self, coords):
        coords = np.asarray(coords, dtype=np.float64)
        ok = (coords[:, 0] >= 0.0) & (coords[:, 0] <= self.t_max)
        for d, (lo, hi) in enumerate(zip(self.lows, self.highs)):
            ok &= (coords[:, d + 1] >= lo) & (coords[:, d + 1] <= hi)
        return ok

    def as_dict(self):
        return {"t_max": self.t_max, "lows": list(self.lows),
                "highs": list(self.highs)}

    @staticmethod
    def from_dict(doc):
        return ProblemDomain(doc["t_max"], doc["lows"], doc["highs"])


class GridDataset:
    """Field values on a regular (t, x[, y]) grid."""

    def __init__(self, axes, values, metadata=None):
        self.axes = tuple(_frozen(ax) for ax in axes)
        self.values = _frozen(values)
        self.metadata = dict(metadata or {})
        if not 2 <= len(self.axes) <= 4:
            raise ConfigError("grid needs a t-axis and 1 to 3 spatial axes")
        for name, ax in zip(_AXIS_NAMES, self.axes):
            if ax.ndim != 1 or len(ax) < 2:
                raise ConfigError(f"{name}-axis must be 1-D with >= 2 entries")
            if not np.all(np.diff(ax) > 0):
                raise ConfigError(f"{name}-axis is not strictly increasing")
        shape = tuple(len(ax) for ax in self.axes)
        if self.values.shape != shape:
            raise ConfigError(f"value array shape {self.values.shape} does "
                              f"not match axis lengths {shape}")
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("grid values contain non-finite entries")

    @property
    def n_d(self):
        return len(self.axes) - 1

    @property
    def n_points(self):
        return self.values.size

    @property
    def sigma_nf(self):
        return float(np.std(self.values))

    def domain(self):
        return ProblemDomain(self.axes[0][-1],
                             [ax[0] for ax in self.axes[1:]],
                             [ax[-1] for ax in self.axes[1:]])

    def point_arrays(self):
        """All grid points as (coords, values) rows in flat t-major order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        coords = np.stack([m.ravel() for m in mesh], axis=1)
        return coords, self.values.ravel()


class PointDataset:
    """Scattered measurements tied to a domain and a noise-free scale."""

    def __init__(self, coords, values, domain, sigma_nf=None, q=0.0,
                 role="train", meta=None):
        self.coords = _frozen(np.atleast_2d(coords))
        self.values = _frozen(values)
        self.domain = domain
        self.q = float(q)
        self.role = role
        self.meta = dict(meta or {})
        if role not in ("train", "test"):
            raise ConfigError(f"role must be 'train' or 'test', got {role!r}")
        if self.values.ndim != 1 or len(self.values) != len(self.coords):
            raise ConfigError("coords and values disagree in length")
        if len(self.values) == 0:
            if role == "train":
                raise ConfigError("a training dataset needs at least 1 point")
            self.coords = _frozen(np.empty((0, 1 + domain.n_d)))
        if self.coords.shape[1] != 1 + domain.n_d:
            raise ConfigError(f"points have {self.coords.shape[1]} columns "
                              f"but the domain is {1 + domain.n_d}-D")
        if self.q < 0:
            raise ConfigError(f"noise level must be >= 0, got {self.q}")
        if not np.all(domain.contains(self.coords)):
            bad = int(np.argmin(domain.contains(self.coords)))
            raise ConfigError(f"point {tuple(self.coords[bad])} lies outside "
                              "the problem domain")
        if sigma_nf is None:
            sigma_nf = float(np.std(self.values)) if len(self.values) else 0.0
        self.sigma_nf = float(sigma_nf)

    @property
    def n(self):
        return len(self.values)


def subsample(grid, n, seed):
    """Draw n distinct grid points uniformly without replacement."""
    n = int(n)
    if not 1 <= n <= grid.n_points:
        raise ConfigError(f"cannot draw {n} points from a grid of "
                          f"{grid.n_points}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(grid.n_points, size=n, replace=False)
    coords, values = grid.point_arrays()
    return PointDataset(coords[idx], values[idx], grid.domain(),
                        sigma_nf=grid.sigma_nf,
                        meta=dict(grid.metadata))


def subsample_points(points, n, seed):
    """Draw n distinct rows of an existing point set, like subsample."""
    n = int(n)
    if not 1 <= n <= points.n:
        raise ConfigError(f"cannot draw {n} points from a set of "
                          f"{points.n}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(points.n, size=n, replace=False)
    return PointDataset(points.coords[idx], points.values[idx],
                        points.domain, sigma_nf=points.sigma_nf,
                        role=points.role, meta=dict(points.meta))


def sample_domain_points(domain, n, seed):
    """Uniform draw over (0, t_max] x box; time stays strictly positive."""
    n = int(n)
    if n < 1:
        raise ConfigError(f"need at least 1 point, got {n}")
    rng = np.random.default_rng(seed)
    cols = [domain.t_max - rng.uniform(0.0, domain.t_max, size=n)]
    for lo, hi in zip(domain.lows, domain.highs):
        cols.append(rng.uniform(lo, hi, size=n))
    return np.stack(cols, axis=1)


def add_noise(data, q, seed):
    """Additive i.i.d. N(0, (q * sigma_nf)^2) corruption of the values."""
    q = float(q)
    if q < 0:
        raise ConfigError(f"noise level must be >= 0, got {q}")
    if q == 0.0:
        noisy = data.values
    else:
        rng = np.random.default_rng(seed)
        noisy = data.values + rng.normal(0.0, q * data.sigma_nf,
                                         size=data.n)
    return PointDataset(data.coords, noisy, data.domain,
                        sigma_nf=data.sigma_nf, q=q, role=data.role,
                        meta=dict(data.meta))


def split_train_test(grid, n_train, n_test=None, q=0.0, seeds=(0, 0)):
    """One without-replacement draw of n_train + n_test points, partitioned
    disjointly, both halves corrupted at the same q with independent noise.

    n_test defaults to ceil(0.2 * n_train); n_test = 0 yields an empty test
    set (early stopping then has nothing to watch).
    """
    n_train = int(n_train)
    if n_test is None:
        n_test = math.ceil(0.2 * n_train)
    n_test = int(n_test)
    if n_train < 1 or n_test < 0:
        raise ConfigError(f"bad split sizes ({n_train}, {n_test})")
    gridded = hasattr(grid, "point_arrays")
    available = grid.n_points if gridded else grid.n
    if n_train + n_test > available:
        raise ConfigError(f"split needs {n_train + n_test} points but the "
                          f"source has {available}")
    sample_seed, noise_seed = seeds
    draw = subsample if gridded else subsample_points
    pooled = draw(grid, n_train + n_test, sample_seed)
    domain, meta = pooled.domain, pooled.meta

    def carve(sl, role, stream):
        part = PointDataset(pooled.coords[sl], pooled.values[sl], domain,
                            sigma_nf=pooled.sigma_nf, role=role, meta=meta)
        return add_noise(part, q, [noise_seed, stream])

    train = carve(slice(0, n_train), "train", 0)
    if n_test == 0:
        test = PointDataset(np.empty((0, 1 + domain.n_d)), np.empty(0),
                            domain, sigma_nf=pooled.sigma_nf, q=q,
                            role="test", meta=meta)
    else:
        test = carve(slice(n_train, None), "test", 1)
    return train, test


def save_points(data, path):
    lines = [f"# {POINTS_MAGIC} {FORMAT_VERSION}",
             f"# n = {data.n}",
             f"# q = {data.q!r}",
             f"# role = {data.role}",
             f"# sigma_nf = {data.sigma_nf!r}",
             f"# domain = {json.dumps(data.domain.as_dict())}",
             f"# meta = {json.dumps(data.meta, sort_keys=True)}",
             ",".join(_AXIS_NAMES[:1 + data.domain.n_d]) + ",u"]
    for row, u in zip(data.coords, data.values):
        lines.append(",".join(repr(float(v)) for v in (*row, u)))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_points(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    def fail(lineno, message):
        raise FormatError(f"{path}:{lineno + 1}: {message}")

    if not lines or not lines[0].startswith(f"# {POINTS_MAGIC} "):
        fail(0, f"not a {POINTS_MAGIC} file")
    version = lines[0].split()[-1]
    if version != str(FORMAT_VERSION):
        fail(0, f"unsupported version {version}")
    keys = {}
    body = 1
    for body in range(1, len(lines)):
        if not lines[body].startswith("#"):
            break
        try:
            key, value = lines[body][1:].split("=", 1)
        except ValueError:
            fail(body, "malformed metadata line")
        keys[key.strip()] = value.strip()
    for needed in ("n", "q", "role", "sigma_nf", "domain", "meta"):
        if needed not in keys:
            fail(body, f"missing metadata key {needed!r}")
    try:
        domain = ProblemDomain.from_dict(json.loads(keys["domain"]))
        meta = json.loads(keys["meta"])
        n, q, sigma_nf = (int(keys["n"]), float(keys["q"]),
                          float(keys["sigma_nf"]))
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad metadata: {exc}") from exc
    header = ",".join(_AXIS_NAMES[:1 + domain.n_d]) + ",u"
    if body >= len(lines) or lines[body] != header:
        fail(body, f"expected header {header!r}")
    rows = lines[body + 1:]
    while rows and not rows[-1]:
        rows.pop()
    if len(rows) != n:
        fail(len(lines) - 1, f"expected {n} data rows, found {len(rows)} "
                             "(truncated file?)")
    coords = np.empty((n, 1 + domain.n_d))
    values = np.empty(n)
    for i, row in enumerate(rows):
        parts = row.split(",")
        if len(parts) != 2 + domain.n_d:
            fail(body + 1 + i, f"expected {2 + domain.n_d} columns")
        try:
            nums = [float(p) for p in parts]
        except ValueError as exc:
            fail(body + 1 + i, str(exc))
        coords[i] = nums[:-1]
        values[i] = nums[-1]
    return PointDataset(coords, values, domain, sigma_nf=sigma_nf, q=q,
                        role=keys["role"], meta=meta)


def save_grid(grid, path):
    blob = json.dumps(grid.metadata, sort_keys=True).encode("utf-8")
    parts = [GRID_MAGIC,
             struct.pack("<II", FORMAT_VERSION, grid.n_d),
             struct.pack("<Q", len(blob)), blob]
    for ax in grid.axes:
        parts.append(struct.pack("<Q", len(ax)))
    for ax in grid.axes:
        parts.append(ax.astype("<f8").tobytes())
    parts.append(np.ascontiguousarray(grid.values).astype("<f8").tobytes())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_grid(path):
    with open(path, "rb") as fh:
        buf = fh.read()

    pos = 0

    def take(count, what):
        nonlocal pos
        if pos + count > len(buf):
            raise FormatError(f"{path}: truncated at byte {pos} "
                              f"while reading {what}")
        out = buf[pos:pos + count]
        pos += count
        return out

    if take(len(GRID_MAGIC), "magic") != GRID_MAGIC:
        raise FormatError(f"{path}: not a grid file")
    version, n_d = struct.unpack("<II", take(8, "header"))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if not 1 <= n_d <= 3:
        raise FormatError(f"{path}: bad dimension {n_d}")
    (blob_len,) = struct.unpack("<Q", take(8, "metadata length"))
    try:
        metadata = json.loads(take(blob_len, "metadata").decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"{path}: bad metadata JSON: {exc}") from exc
    lengths = [struct.unpack("<Q", take(8, "axis length"))[0]
               for _ in range(1 + n_d)]
    axes = [np.frombuffer(take(8 * ln, "axis values"), "<f8")
            for ln in lengths]
    total = int(np.prod(lengths))
    values = np.frombuffer(take(8 * total, "grid values"),
                           "<f8").reshape(lengths)
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes")
    try:
        return GridDataset(axes, values, metadata)
    except ConfigError as exc:
        raise FormatError(f"{path}: {exc}") from exc
