"""Empirical measures, the Gaussian-mixture benchmark and dataset files."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ndcore import ContractError, NumericError

UNASSIGNED = -1
STREAM_NAMES = ("data", "init", "latent", "shuffle", "eval")


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.array(self.weights, dtype=np.float64)
        if pts.ndim != 2 or w.shape != (pts.shape[0],):
            raise ContractError(f"{pts.shape[0]} points but weights of shape {w.shape}")
        if not np.all(np.isfinite(pts)):
            raise NumericError("measure has non-finite coordinates")
        if np.any(w < 0):
            raise ContractError("negative weights")
        if pts.shape[0] and abs(w.sum() - 1.0) > 1e-12:
            raise ContractError(f"weights sum to {w.sum()!r}, not 1")
        pts.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> EmpiricalMeasure:
        pts = np.asarray(points, dtype=np.float64)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n) if n else np.zeros(0))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def is_uniform(self) -> bool:
        return self.n == 0 or bool(np.all(self.weights == self.weights[0]))

    def pushforward(self, fn) -> EmpiricalMeasure:
        return EmpiricalMeasure(fn(self.points), self.weights)


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent PCG64 stream derived from a root seed and a stream name."""
    if name not in STREAM_NAMES:
        raise ContractError(f"unknown stream {name!r}; expected one of {STREAM_NAMES}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAM_NAMES.index(name),))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True, eq=False)
class GaussianMixtureSpec:
    ambient_dim: int
    num_modes: int
    centers: np.ndarray
    var_leading: float = 0.3
    var_trailing: float = 0.003
    mode_weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        c = np.array(self.centers, dtype=np.float64)
        if c.shape != (self.num_modes, self.ambient_dim):
            raise ContractError(f"centers shape {c.shape} != ({self.num_modes}, {self.ambient_dim})")
        if np.any(c[:, 2:] != 0):
            raise ContractError("centers must vanish beyond the first two coordinates")
        if not self.var_leading > self.var_trailing > 0:
            raise ContractError("need var_leading > var_trailing > 0")
        w = self.mode_weights
        w = np.full(self.num_modes, 1.0 / self.num_modes) if w is None else np.array(w, float)
        if w.shape != (self.num_modes,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ContractError("mode_weights must be a simplex vector of length K")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "mode_weights", w)

    def variances(self) -> np.ndarray:
        v = np.full(self.ambient_dim, self.var_trailing)
        v[:2] = self.var_leading
        return v


def grid_centers(num_modes: int) -> np.ndarray:
    """Planar mode centres on a grid with spacing 3."""
    if num_modes == 9:
        xs, ys = (-3.0, 0.0, 3.0), (-3.0, 0.0, 3.0)
    elif num_modes == 12:
        xs, ys = (-4.5, -1.5, 1.5, 4.5), (-3.0, 0.0, 3.0)
    else:
        side = int(np.ceil(np.sqrt(num_modes)))
        coords = 3.0 * (np.arange(side) - (side - 1) / 2)
        grid = np.array([(x, y) for x in coords for y in coords])
        return grid[:num_modes]
    return np.array([(x, y) for x in xs for y in ys])


def mixture_spec(ambient_dim: int = 100, num_modes: int = 9, var_leading: float = 0.3,
                 var_trailing: float = 0.003) -> GaussianMixtureSpec:
    centers = np.zeros((num_modes, ambient_dim))
    centers[:, :2] = grid_centers(num_modes)
    return GaussianMixtureSpec(ambient_dim, num_modes, centers, var_leading, var_trailing)


def scenario(which: int) -> GaussianMixtureSpec:
    """Scenario 1: 9 modes in R^100. Scenario 2: 12 modes in R^500."""
    if which == 1:
        return mixture_spec(100, 9)
    if which == 2:
        return mixture_spec(500, 12)
    raise ContractError(f"unknown scenario {which}")


def sample_mixture(spec: GaussianMixtureSpec, n: int,
                   rng: np.random.Generator) -> tuple[EmpiricalMeasure, np.ndarray]:
    if n < 1:
        raise ContractError("need n >= 1")
    labels = rng.choice(spec.num_modes, size=n, p=spec.mode_weights)
    noise = rng.standard_normal((n, spec.ambient_dim)) * np.sqrt(spec.variances())
    return EmpiricalMeasure.uniform(spec.centers[labels] + noise), labels.astype(np.int64)


def sample_latent(d: int, n: int, rng: np.random.Generator) -> EmpiricalMeasure:
    if d < 1:
        raise ContractError("latent dimension must be >= 1")
    return EmpiricalMeasure.uniform(rng.standard_normal((n, d)))


def assign_mode(points, spec: GaussianMixtureSpec, radius_multiplier: float = 3.0) -> np.ndarray:
    """Nearest centre in the first two coordinates, or UNASSIGNED if too far.

    Ties go to the lowest mode index.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != spec.ambient_dim:
        raise ContractError(f"points of shape {pts.shape} for a {spec.ambient_dim}-D mixture")
    diff = pts[:, None, :2] - spec.centers[None, :, :2]
    d2 = np.einsum("nkj,nkj->nk", diff, diff)
    nearest = np.argmin(d2, axis=1)
    radius2 = radius_multiplier ** 2 * spec.var_leading
    inside = d2[np.arange(len(pts)), nearest] <= radius2
    return np.where(inside, nearest, UNASSIGNED).astype(np.int64)


# -- dataset files -----------------------------------------------------------

DATASET_MAGIC = b"GMDS"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")
_NO_LABEL = 0xFFFFFFFF


class DatasetFormatError(ValueError):
    pass


def encode_dataset(measure: EmpiricalMeasure, labels=None) -> bytes:
    """``GMDS | u32 version | u64 n | u64 dim | f64 row-major | [u32 labels]``.

    Weights are not stored: files always describe uniform measures.
    Unassigned labels are written as 0xFFFFFFFF.
    """
    n, dim = measure.points.shape
    parts = [_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, dim),
             np.ascontiguousarray(measure.points, dtype="<f8").tobytes()]
    if labels is not None:
        lab = np.asarray(labels, dtype=np.int64)
        if lab.shape != (n,):
            raise ContractError("one label per point")
        parts.append(np.where(lab < 0, _NO_LABEL, lab).astype("<u4").tobytes())
    return b"".join(parts)


def decode_dataset(buf: bytes) -> tuple[EmpiricalMeasure, np.ndarray | None]:
    if len(buf) < _HEADER.size:
        raise DatasetFormatError("missing or short header")
    magic, version, n, dim = _HEADER.unpack_from(buf)
    if magic != DATASET_MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    payload = 8 * n * dim
    rest = len(buf) - _HEADER.size
    if rest < payload:
        raise DatasetFormatError("truncated payload")
    pts = np.frombuffer(buf, "<f8", count=n * dim, offset=_HEADER.size)
    pts = pts.astype(np.float64).reshape(n, dim)
    extra = rest - payload
    labels = None
    if extra == 4 * n and n:
        raw = np.frombuffer(buf, "<u4", count=n, offset=_HEADER.size + payload)
        labels = np.where(raw == _NO_LABEL, UNASSIGNED, raw.astype(np.int64))
    elif extra:
        raise DatasetFormatError(f"{extra} trailing bytes do not form a label block")
    return EmpiricalMeasure.uniform(pts), labels


def save_dataset(path: str | Path, measure: EmpiricalMeasure, labels=None) -> None:
    Path(path).write_bytes(encode_dataset(measure, labels))


def load_dataset(path: str | Path) -> tuple[EmpiricalMeasure, np.ndarray | None]:
    return decode_dataset(Path(path).read_bytes())


def format_float(x: float) -> str:
    return repr(float(x))


def write_points_csv(path: str | Path, points: np.ndarray, labels=None,
                     extra: dict[str, np.ndarray] | None = None) -> None:
    """CSV with header ``x0,x1,...[,extra...][,label]`` and round-trip floats."""
    points = np.asarray(points, dtype=np.float64)
    extra = extra or {}
    header = [f"x{j}" for j in range(points.shape[1])] + list(extra)
    cols = list(extra.values())
    if labels is not None:
        header.append("label")
    lines = [",".join(header)]
    for i, row in enumerate(points):
        fields = [format_float(v) for v in row]
        fields += [format_float(c[i]) for c in cols]
        if labels is not None:
            fields.append(str(int(labels[i])))
        lines.append(",".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")
