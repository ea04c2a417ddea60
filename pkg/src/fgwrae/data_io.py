"""Synthetic data, seeded random streams and file round-tripping.

File formats
------------
Point cloud CSV
    No header, comma separated, one sample per row, floats written with 17
    significant digits so every float64 survives a round trip.
Label CSV
    One integer per line.
GMM JSON
    ``{"weights": [...], "means": [[...], ...], "stds": [[...], ...]}``.
Report CSV
    Header ``epoch,recon_loss,reg_value,seconds`` then one row per epoch.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError

__all__ = [
    "PointCloud",
    "RngStream",
    "rng_stream",
    "gen_clusters",
    "gen_two_view",
    "format_float",
    "save_cloud",
    "load_cloud",
    "dumps_cloud",
    "loads_cloud",
    "save_labels",
    "load_labels",
    "save_gmm",
    "load_gmm",
    "gmm_to_dict",
    "gmm_from_dict",
    "save_config",
    "load_config",
    "config_from_dict",
    "save_report",
    "load_report",
    "REPORT_COLUMNS",
]

STREAM_IDS = {
    "init": 0,
    "noise": 1,
    "shuffle": 2,
    "projections": 3,
    "prior": 4,
    "prior_init": 5,
    "data": 6,
    "split": 7,
    "solver": 8,
}

REPORT_COLUMNS = ("epoch", "recon_loss", "reg_value", "seconds")


@dataclass(frozen=True)
class PointCloud:
    samples: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.samples, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise InvalidInputError("a point cloud needs at least one sample and one dimension")
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("point cloud entries must be finite")
        object.__setattr__(self, "samples", X)
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (X.shape[0],):
                raise InvalidInputError("labels must have one entry per sample")
            object.__setattr__(self, "labels", y.astype(np.int64))

    def __len__(self):
        return self.samples.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.samples if dtype is None else self.samples.astype(dtype)

    @property
    def dim(self):
        return self.samples.shape[1]


@dataclass(frozen=True)
class RngStream:
    """Independent random stream keyed by ``(seed, stream_id)``.

    Backed by the counter-based Philox generator; distinct stream ids give
    statistically independent sequences, so e.g. the projection stream can
    change length without touching weight initialization.
    """

    seed: int
    stream_id: int

    def generator(self):
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(seq))


def rng_stream(seed, name):
    """Generator for a named purpose (``"init"``, ``"noise"``, ...) under ``seed``."""
    if isinstance(name, int):
        stream_id = name
    else:
        stream_id = STREAM_IDS.get(name, 1000 + zlib.crc32(name.encode()))
    return RngStream(int(seed), stream_id).generator()


def _cluster_centers(K, dim, separation):
    if K == 1:
        return np.zeros((1, dim))
    centers = np.zeros((K, dim))
    if dim == 1:
        centers[:, 0] = separation * (np.arange(K) - (K - 1) / 2.0)
        return centers
    radius = separation / (2.0 * math.sin(math.pi / K))
    angles = 2.0 * math.pi * np.arange(K) / K
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)
    return centers


def gen_clusters(K, per_cluster, dim, spread, seed, separation=3.0):
    """``K`` isotropic Gaussian blobs with standard deviation ``spread``.

    Centers sit on a circle (a line in 1D) with neighbouring centers
    ``separation`` apart.  Labels are assigned round-robin so every prefix
    of the cloud is balanced.
    """
    if K < 1 or per_cluster < 1 or dim < 1:
        raise InvalidInputError("K, per_cluster and dim must be >= 1")
    if not spread > 0:
        raise InvalidInputError("spread must be > 0")
    rng = rng_stream(seed, "data")
    centers = _cluster_centers(K, dim, separation)
    labels = np.arange(K * per_cluster) % K
    X = centers[labels] + spread * rng.standard_normal((labels.size, dim))
    return PointCloud(X, labels)


def _lift(latent):
    u, v = latent[:, 0], latent[:, 1]
    return np.column_stack([u + 0.3 * np.sin(v), v + 0.3 * np.sin(u), 0.25 * (u * u + v * v)])


def gen_two_view(n, seed, noise=0.05, separation=3.0, spread=0.3):
    """Two views of one 3-cluster latent variable.

    View A applies a random well-conditioned linear map to 2D, view B a
    fixed smooth lift to 3D; both add isotropic noise.  Rows are aligned
    and share ``labels``.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    rng = rng_stream(seed, "data")
    labels = np.arange(n) % 3
    latent = _cluster_centers(3, 2, separation)[labels] + spread * rng.standard_normal((n, 2))
    angle = rng.uniform(0.0, 2.0 * math.pi)
    rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    A = rot @ np.diag(rng.uniform(0.7, 1.3, size=2))
    view_a = latent @ A.T + noise * rng.standard_normal((n, 2))
    view_b = _lift(latent) + noise * rng.standard_normal((n, 3))
    return PointCloud(view_a, labels), PointCloud(view_b, labels), labels


def format_float(x):
    return format(float(x), ".17g")


def dumps_cloud(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 1:
        raise InvalidInputError("cannot write an empty point cloud")
    return "".join(",".join(format_float(v) for v in row) + "\n" for row in X)


def loads_cloud(text, source="<string>"):
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split(",")
        try:
            row = [float(f) for f in fields]
        except ValueError as exc:
            raise ParseError(str(exc), f"{source}: line {lineno}") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(f"expected {width} fields, found {len(row)}", f"{source}: line {lineno}")
        if not all(math.isfinite(v) for v in row):
            raise ParseError("non-finite value", f"{source}: line {lineno}")
        rows.append(row)
    if not rows:
        raise ParseError("point cloud is empty", source)
    return np.array(rows, dtype=np.float64)


def save_cloud(path, X):
    Path(path).write_text(dumps_cloud(X))


def load_cloud(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(exc.strerror or str(exc), str(path)) from None
    return loads_cloud(text, str(path))


def save_labels(path, labels):
    Path(path).write_text("".join(f"{int(v)}\n" for v in np.asarray(labels).ravel()))


def load_labels(path):
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ParseError(exc.strerror or str(exc), str(path)) from None
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            out.append(int(line.strip()))
        except ValueError:
            raise ParseError(f"not an integer: {line!r}", f"{path}: line {lineno}") from None
    if not out:
        raise ParseError("label file is empty", str(path))
    return np.array(out, dtype=np.int64)


def gmm_to_dict(gmm):
    return {
        "weights": gmm.weights.tolist(),
        "means": gmm.means.tolist(),
        "stds": gmm.stds.tolist(),
    }


def gmm_from_dict(d, source="<gmm>"):
    from .gaussian_ot import GaussianMixture

    if not isinstance(d, dict):
        raise ParseError("expected a JSON object", source)
    for key in ("weights", "means", "stds"):
        if key not in d:
            raise ParseError("missing field", f"{source}: field '{key}'")
    try:
        weights = np.asarray(d["weights"], dtype=np.float64)
        means = np.asarray(d["means"], dtype=np.float64)
        stds = np.asarray(d["stds"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), source) from None
    if weights.ndim != 1 or weights.size < 1:
        raise ParseError("must be a non-empty list of numbers", f"{source}: field 'weights'")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ParseError("must be nonnegative and sum to 1", f"{source}: field 'weights'")
    if means.ndim != 2 or means.shape[0] != weights.size:
        raise ParseError("must be a K x M list of lists", f"{source}: field 'means'")
    if stds.shape != means.shape:
        raise ParseError("must match the shape of 'means'", f"{source}: field 'stds'")
    if np.any(stds <= 0):
        raise ParseError("standard deviations must be positive", f"{source}: field 'stds'")
    weights = weights / weights.sum()
    try:
        return GaussianMixture(means, stds, weights)
    except InvalidInputError as exc:
        raise ParseError(str(exc), source) from None


def save_gmm(path, gmm):
    Path(path).write_text(json.dumps(gmm_to_dict(gmm), indent=2) + "\n")


def load_gmm(path):
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(exc.strerror or str(exc), str(path)) from None
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{path}: line {exc.lineno}") from None
    return gmm_from_dict(d, str(path))


def config_from_dict(cls, d, source="<config>"):
    if not isinstance(d, dict):
        raise ParseError("expected a JSON object", source)
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - set(names))
    if unknown:
        raise ParseError("unknown field", f"{source}: field '{unknown[0]}'")
    kwargs = {}
    for key, value in d.items():
        nested = getattr(cls, "_nested", {}).get(key)
        if nested is not None and isinstance(value, dict):
            value = config_from_dict(nested, value, f"{source}.{key}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, InvalidInputError) as exc:
        raise ParseError(str(exc), source) from None


def save_config(path, config):
    Path(path).write_text(json.dumps(dataclasses.asdict(config), indent=2) + "\n")


def load_config(path, cls):
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(exc.strerror or str(exc), str(path)) from None
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{path}: line {exc.lineno}") from None
    return config_from_dict(cls, d, str(path))


def report_rows(report):
    return [
        (i + 1, report.recon_loss[i], report.reg_value[i], report.seconds[i])
        for i in range(len(report.recon_loss))
    ]


def dumps_report(report):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for epoch, recon, reg, secs in report_rows(report):
        writer.writerow([epoch, format_float(recon), format_float(reg), format_float(secs)])
    return buf.getvalue()


def save_report(path, report):
    Path(path).write_text(dumps_report(report))


def load_report(path):
    """Read a report CSV back as a dict of column lists."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ParseError(exc.strerror or str(exc), str(path)) from None
    if not lines or tuple(lines[0].split(",")) != REPORT_COLUMNS:
        raise ParseError(f"header must be {','.join(REPORT_COLUMNS)}", f"{path}: line 1")
    cols = {c: [] for c in REPORT_COLUMNS}
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != len(REPORT_COLUMNS):
            raise ParseError(f"expected {len(REPORT_COLUMNS)} fields", f"{path}: line {lineno}")
        try:
            cols["epoch"].append(int(fields[0]))
            for c, f in zip(REPORT_COLUMNS[1:], fields[1:]):
                cols[c].append(float(f))
        except ValueError as exc:
            raise ParseError(str(exc), f"{path}: line {lineno}") from None
    return cols
