"""
Splat and point-cloud datasets: PLY codec, normalization, voxelization,
synthetic shapes and stratified splits.

On disk, Gaussian splats follow the usual 3DGS convention (log-scale,
logit-opacity, unnormalized quaternion); in memory everything is activated.
"""

import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from plyfile import PlyData, PlyElement

from .errors import ConfigError, DataError, FormatError

logger = logging.getLogger(__name__)

GAUSSIAN_MODE = "gaussian-11d"
POINTCLOUD_MODE = "pointcloud-6d"
FEATURE_MODES = (GAUSSIAN_MODE, POINTCLOUD_MODE)

GAUSSIAN_FIELDS = (
    "x", "y", "z",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity",
)
POINTCLOUD_FIELDS = ("x", "y", "z", "nx", "ny", "nz")

# width of the non-position part of the network input
EXTRA_FEATURES = 8

SYNTHETIC_CLASSES = ("sphere", "box", "torus", "cylinder")
SPHERE_RADIUS = 1.0
TORUS_MAJOR_RADIUS = 1.0
SURFACE_JITTER = 0.02
QUATERNION_TOLERANCE = 1e-4
LOGIT_CLIP = 1e-12
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class GaussianPrimitive:
    """One splat: position, scale, unit quaternion (w, x, y, z), opacity."""

    position: Tuple[float, float, float]
    scale: Tuple[float, float, float]
    rotation: Tuple[float, float, float, float]
    opacity: float


class SplatCloud:
    """A set of primitives stored column-wise.

    In point-cloud mode `normals` holds the surface normals and the Gaussian
    attributes are zero.
    """

    def __init__(
        self,
        positions,
        scales=None,
        rotations=None,
        opacities=None,
        normals=None,
        feature_mode: str = GAUSSIAN_MODE
    ):
        if feature_mode not in FEATURE_MODES:
            raise ConfigError(f"Unknown feature mode '{feature_mode}'")
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.scales = _column_block(scales, n, 3)
        self.rotations = _column_block(rotations, n, 4)
        self.opacities = _column_block(opacities, n, 1).reshape(n)
        self.normals = _column_block(normals, n, 3)
        self.feature_mode = feature_mode

    @classmethod
    def from_primitives(cls, primitives: Sequence[GaussianPrimitive]) -> "SplatCloud":
        return cls(
            positions=[p.position for p in primitives],
            scales=[p.scale for p in primitives],
            rotations=[p.rotation for p in primitives],
            opacities=[p.opacity for p in primitives],
        )

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            position=tuple(self.positions[i]),
            scale=tuple(self.scales[i]),
            rotation=tuple(self.rotations[i]),
            opacity=float(self.opacities[i]),
        )

    def __iter__(self) -> Iterator[GaussianPrimitive]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, indices) -> "SplatCloud":
        idx = np.asarray(indices)
        return SplatCloud(
            self.positions[idx], self.scales[idx], self.rotations[idx],
            self.opacities[idx], self.normals[idx], self.feature_mode
        )

    def attribute_block(self) -> np.ndarray:
        """N x 8 non-position attributes in network slot order."""
        if self.feature_mode == POINTCLOUD_MODE:
            block = np.zeros((len(self), EXTRA_FEATURES))
            block[:, :3] = self.normals
            return block
        return np.concatenate(
            [self.scales, self.rotations, self.opacities[:, None]], axis=1
        )

    def __repr__(self):
        return f"SplatCloud(n={len(self)}, mode={self.feature_mode})"


def _column_block(values, n: int, width: int) -> np.ndarray:
    if values is None:
        return np.zeros((n, width))
    return np.asarray(values, dtype=np.float64).reshape(n, width)


# ---------------------------------------------------------------------------
# PLY codec


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, LOGIT_CLIP, 1.0 - LOGIT_CLIP)
    return np.log(p) - np.log1p(-p)


def load_ply(path: Union[str, Path], feature_mode: str = GAUSSIAN_MODE) -> SplatCloud:
    """
    Read a splat or point-cloud PLY (binary or ASCII).

    Args:
        path: PLY file
        feature_mode: gaussian-11d or pointcloud-6d

    Returns:
        SplatCloud with activated scales/opacities and unit quaternions
    """
    if feature_mode not in FEATURE_MODES:
        raise ConfigError(f"Unknown feature mode '{feature_mode}'")
    ply = PlyData.read(str(path))
    try:
        vertex = ply["vertex"]
    except KeyError:
        raise FormatError(f"{path}: no 'vertex' element")

    names = vertex.data.dtype.names
    required = GAUSSIAN_FIELDS if feature_mode == GAUSSIAN_MODE else POINTCLOUD_FIELDS
    for name in required:
        if name not in names:
            raise FormatError(f"{path}: missing field '{name}'")

    columns = {name: np.asarray(vertex[name], dtype=np.float64) for name in required}
    for name, values in columns.items():
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise DataError(f"{path}: non-finite '{name}' at vertex {int(bad[0])}")

    positions = np.stack([columns["x"], columns["y"], columns["z"]], axis=1)
    if feature_mode == POINTCLOUD_MODE:
        normals = np.stack([columns["nx"], columns["ny"], columns["nz"]], axis=1)
        return SplatCloud(positions, normals=normals, feature_mode=POINTCLOUD_MODE)

    scales = np.exp(np.stack([columns[f"scale_{i}"] for i in range(3)], axis=1))
    rotations = np.stack([columns[f"rot_{i}"] for i in range(4)], axis=1)
    norms = np.linalg.norm(rotations, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise DataError(f"{path}: zero quaternion at vertex {int(bad[0])}")
    rotations = rotations / norms[:, None]
    opacities = _sigmoid(columns["opacity"])
    return SplatCloud(positions, scales, rotations, opacities)


def write_ply(
    cloud: Union[SplatCloud, Sequence[GaussianPrimitive]],
    path: Union[str, Path],
    feature_mode: Optional[str] = None,
    text: bool = False
) -> Path:
    """
    Write primitives in the on-disk convention understood by load_ply.

    Properties are stored as doubles so a load/write round trip is exact to
    well below 1e-6.
    """
    if not isinstance(cloud, SplatCloud):
        cloud = SplatCloud.from_primitives(list(cloud))
    if len(cloud) == 0:
        raise DataError("cannot write an empty primitive set")
    mode = feature_mode or cloud.feature_mode

    if mode == POINTCLOUD_MODE:
        fields = POINTCLOUD_FIELDS
        values = np.concatenate([cloud.positions, cloud.normals], axis=1)
    else:
        fields = GAUSSIAN_FIELDS
        values = np.concatenate([
            cloud.positions,
            np.log(cloud.scales),
            cloud.rotations,
            _logit(cloud.opacities)[:, None],
        ], axis=1)

    records = np.empty(len(cloud), dtype=[(name, "f8") for name in fields])
    for j, name in enumerate(fields):
        records[name] = values[:, j]

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PlyData([PlyElement.describe(records, "vertex")], text=text).write(str(path))
    return path


# ---------------------------------------------------------------------------
# normalization and voxelization


def normalize_positions(cloud: Union[SplatCloud, np.ndarray]) -> np.ndarray:
    """Per-axis min-max map into [0,1]^3; a degenerate axis maps to 0.5."""
    positions = cloud.positions if isinstance(cloud, SplatCloud) else np.asarray(cloud, float)
    if len(positions) == 0:
        raise DataError("cannot normalize an empty primitive set")
    lo = positions.min(axis=0)
    span = positions.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (positions - lo) / safe, 0.5)


def assign_voxels(normalized_positions, grid_size: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Voxel index v = i G^2 + j G + k of every primitive plus per-voxel counts.

    Returns:
        (voxel_index of length N, voxel_counts of length G^3)
    """
    if grid_size < 1:
        raise ConfigError(f"grid size must be >= 1, got {grid_size}")
    cells = np.floor(np.asarray(normalized_positions, dtype=np.float64) * grid_size)
    cells = np.clip(cells, 0, grid_size - 1).astype(np.int64)
    index = cells[:, 0] * grid_size ** 2 + cells[:, 1] * grid_size + cells[:, 2]
    counts = np.bincount(index, minlength=grid_size ** 3)
    return index, counts


@dataclass
class LabeledSample:
    """A normalized, voxelized cloud with its class label.

    Normalization and voxel indices are computed once; `subset` keeps them so
    removed primitives never shift the survivors' cells.
    """

    sample_id: str
    cloud: SplatCloud
    label: int
    grid_size: int
    normalized_positions: np.ndarray
    voxel_index: np.ndarray
    voxel_counts: np.ndarray
    attributes: np.ndarray

    @property
    def primitives(self) -> SplatCloud:
        return self.cloud

    def __len__(self) -> int:
        return len(self.cloud)

    def network_inputs(self) -> Tuple[np.ndarray, np.ndarray]:
        """(3 x N centred positions in [-1,1], 8 x N attributes)."""
        return (2.0 * self.normalized_positions - 1.0).T, self.attributes.T

    def occupied_voxels(self) -> np.ndarray:
        return np.flatnonzero(self.voxel_counts)

    def subset(self, keep) -> "LabeledSample":
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        index = self.voxel_index[keep]
        return LabeledSample(
            sample_id=self.sample_id,
            cloud=self.cloud.subset(keep),
            label=self.label,
            grid_size=self.grid_size,
            normalized_positions=self.normalized_positions[keep],
            voxel_index=index,
            voxel_counts=np.bincount(index, minlength=self.grid_size ** 3),
            attributes=self.attributes[keep],
        )


def make_sample(cloud: SplatCloud, label: int, grid_size: int, sample_id: str = "") -> LabeledSample:
    """Normalize, voxelize and standardize the attributes of a cloud."""
    normalized = normalize_positions(cloud)
    index, counts = assign_voxels(normalized, grid_size)
    attributes = cloud.attribute_block()
    if cloud.feature_mode == GAUSSIAN_MODE:
        span = float(np.max(cloud.positions.max(axis=0) - cloud.positions.min(axis=0)))
        attributes[:, :3] /= span if span > 0 else 1.0
    return LabeledSample(
        sample_id=sample_id,
        cloud=cloud,
        label=int(label),
        grid_size=grid_size,
        normalized_positions=normalized,
        voxel_index=index,
        voxel_counts=counts,
        attributes=attributes,
    )


# ---------------------------------------------------------------------------
# synthetic shapes


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def quaternion_from_normal(normals: np.ndarray) -> np.ndarray:
    """Unit quaternions (w, x, y, z) rotating +z onto each normal."""
    n = _unit(np.asarray(normals, dtype=np.float64))
    q = np.stack([1.0 + n[:, 2], -n[:, 1], n[:, 0], np.zeros(len(n))], axis=1)
    flipped = q[:, 0] < 1e-9
    q[flipped] = (0.0, 1.0, 0.0, 0.0)
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _sphere(rng, n):
    normals = _unit(rng.normal(size=(n, 3)))
    return normals * SPHERE_RADIUS, normals


def _box(rng, n):
    half = rng.uniform(0.5, 1.0, size=3)
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
    axis = rng.choice(3, size=n, p=areas / areas.sum())
    sign = rng.choice((-1.0, 1.0), size=n)
    points = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    normals = np.zeros((n, 3))
    rows = np.arange(n)
    points[rows, axis] = sign * half[axis]
    normals[rows, axis] = sign
    return points, normals


def _torus(rng, n):
    minor = rng.uniform(0.25, 0.4)
    u = rng.uniform(0, 2 * np.pi, size=n)
    v = rng.uniform(0, 2 * np.pi, size=n)
    normals = np.stack([np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)], axis=1)
    centre = np.stack([np.cos(u), np.sin(u), np.zeros(n)], axis=1) * TORUS_MAJOR_RADIUS
    return centre + minor * normals, normals


def _cylinder(rng, n):
    radius = rng.uniform(0.4, 0.7)
    half_height = rng.uniform(0.8, 1.2)
    side_area = 2 * np.pi * radius * 2 * half_height
    cap_area = 2 * np.pi * radius ** 2
    on_side = rng.uniform(size=n) < side_area / (side_area + cap_area)
    theta = rng.uniform(0, 2 * np.pi, size=n)
    r = np.where(on_side, radius, radius * np.sqrt(rng.uniform(size=n)))
    cap_sign = rng.choice((-1.0, 1.0), size=n)
    z = np.where(on_side, rng.uniform(-half_height, half_height, size=n), cap_sign * half_height)
    points = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    normals = np.where(
        on_side[:, None],
        np.stack([np.cos(theta), np.sin(theta), np.zeros(n)], axis=1),
        np.stack([np.zeros(n), np.zeros(n), cap_sign], axis=1),
    )
    return points, normals


_SURFACES = {"sphere": _sphere, "box": _box, "torus": _torus, "cylinder": _cylinder}


def generate_cloud(
    class_name: str,
    n_primitives: int,
    seed: int,
    outlier_fraction: float = 0.0,
    feature_mode: str = GAUSSIAN_MODE
) -> SplatCloud:
    """Sample primitives on the surface of a parametric shape."""
    if class_name not in _SURFACES:
        raise ConfigError(
            f"Unknown synthetic class '{class_name}' (choose from {', '.join(SYNTHETIC_CLASSES)})"
        )
    if n_primitives < 32:
        raise ConfigError(f"need at least 32 primitives, got {n_primitives}")
    if not 0.0 <= outlier_fraction < 0.5:
        raise ConfigError(f"outlier fraction must lie in [0, 0.5), got {outlier_fraction}")

    rng = np.random.default_rng(seed)
    n_out = int(round(outlier_fraction * n_primitives))
    n_surf = n_primitives - n_out

    points, normals = _SURFACES[class_name](rng, n_surf)
    points = points + normals * rng.uniform(-SURFACE_JITTER, SURFACE_JITTER, size=(n_surf, 1))
    # tangent axes wide, normal axis thin
    scales = np.stack([
        rng.uniform(0.02, 0.05, size=n_surf),
        rng.uniform(0.02, 0.05, size=n_surf),
        np.full(n_surf, 0.005),
    ], axis=1)

    if n_out:
        lo, hi = points.min(axis=0), points.max(axis=0)
        centre, half = (lo + hi) / 2, (hi - lo) / 2 * 1.2
        points = np.concatenate([points, centre + rng.uniform(-1, 1, size=(n_out, 3)) * half])
        normals = np.concatenate([normals, _unit(rng.normal(size=(n_out, 3)))])
        scales = np.concatenate([scales, np.full((n_out, 3), 0.01)])

    if feature_mode == POINTCLOUD_MODE:
        return SplatCloud(points, normals=normals, feature_mode=POINTCLOUD_MODE)
    return SplatCloud(
        positions=points,
        scales=scales,
        rotations=quaternion_from_normal(normals),
        opacities=rng.uniform(0.5, 1.0, size=n_primitives),
    )


def generate_synthetic(
    class_name: str,
    n_primitives: int,
    seed: int,
    grid_size: int = 7,
    label: Optional[int] = None,
    outlier_fraction: float = 0.0,
    feature_mode: str = GAUSSIAN_MODE,
    sample_id: Optional[str] = None
) -> LabeledSample:
    """
    Deterministic synthetic sample of one shape class.

    Args:
        class_name: sphere, box, torus or cylinder
        n_primitives: number of primitives (>= 32)
        seed: random seed
        grid_size: voxel grid resolution used for the stored indices
        label: class index (defaults to the position in SYNTHETIC_CLASSES)

    Returns:
        LabeledSample
    """
    cloud = generate_cloud(class_name, n_primitives, seed, outlier_fraction, feature_mode)
    if label is None:
        label = SYNTHETIC_CLASSES.index(class_name)
    return make_sample(cloud, label, grid_size, sample_id or f"{class_name}_{seed}")


# ---------------------------------------------------------------------------
# splits and datasets

SPLIT_NAMES = ("train", "val", "test")


@dataclass
class DatasetSplit:
    """Disjoint train/val/test id lists."""

    train: List[str]
    val: List[str]
    test: List[str]
    class_names: List[str]
    feature_mode: str = GAUSSIAN_MODE

    def __post_init__(self):
        seen = set()
        for name in SPLIT_NAMES:
            ids = getattr(self, name)
            overlap = seen.intersection(ids)
            if overlap:
                raise DataError(f"sample '{sorted(overlap)[0]}' appears in more than one split")
            seen.update(ids)
        if self.feature_mode not in FEATURE_MODES:
            raise ConfigError(f"Unknown feature mode '{self.feature_mode}'")

    def ids(self, name: str) -> List[str]:
        if name not in SPLIT_NAMES:
            raise ConfigError(f"Unknown split '{name}' (choose from {', '.join(SPLIT_NAMES)})")
        return list(getattr(self, name))

    def to_dict(self) -> Dict:
        return {
            "train": list(self.train),
            "val": list(self.val),
            "test": list(self.test),
            "class_names": list(self.class_names),
            "feature_mode": self.feature_mode,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "DatasetSplit":
        return cls(**data)


def split_dataset(
    samples: Sequence[Tuple[str, int]],
    ratios: Sequence[float],
    seed: int,
    class_names: Optional[Sequence[str]] = None,
    feature_mode: str = GAUSSIAN_MODE
) -> DatasetSplit:
    """
    Stratified train/val/test split.

    Each class is shuffled and cut by largest remainder; leftover samples go to
    the split lagging furthest behind its running quota, so totals match the
    ratios as closely as per-class rounding allows.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (len(SPLIT_NAMES),) or (ratios <= 0).any():
        raise ConfigError(f"need three positive split ratios, got {list(ratios)}")
    if abs(ratios.sum() - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios.sum()}")

    by_class: Dict[int, List[str]] = {}
    for sample_id, label in samples:
        by_class.setdefault(int(label), []).append(sample_id)
    n_classes = len(class_names) if class_names else (max(by_class) + 1 if by_class else 0)
    names = list(class_names) if class_names else [str(k) for k in range(n_classes)]
    for k in range(n_classes):
        count = len(by_class.get(k, []))
        if count < len(SPLIT_NAMES):
            raise DataError(f"class '{names[k]}' has {count} samples, need at least {len(SPLIT_NAMES)}")

    rng = np.random.default_rng(seed)
    buckets: List[List[str]] = [[] for _ in SPLIT_NAMES]
    seen = 0
    for k in sorted(by_class):
        ids = sorted(by_class[k])
        ids = [ids[i] for i in rng.permutation(len(ids))]
        n = len(ids)
        quota = ratios * n
        counts = np.floor(quota).astype(int)
        seen += n
        lag = ratios * seen - (np.array([len(b) for b in buckets]) + counts)
        for _ in range(n - counts.sum()):
            j = min(range(len(counts)), key=lambda i: (-round(lag[i], 9), -(quota[i] - counts[i]), i))
            counts[j] += 1
            lag[j] -= 1
        if counts[0] == 0:
            donor = int(np.argmax(counts))
            counts[donor] -= 1
            counts[0] += 1
        start = 0
        for bucket, c in zip(buckets, counts):
            bucket.extend(ids[start:start + c])
            start += c

    return DatasetSplit(
        train=sorted(buckets[0]), val=sorted(buckets[1]), test=sorted(buckets[2]),
        class_names=names, feature_mode=feature_mode,
    )


class SplatDataset:
    """Labeled clouds addressed by sample id, backed by a manifest or memory.

    Voxelized samples are cached per grid size; loading is thread-safe.
    """

    def __init__(
        self,
        labels: Dict[str, int],
        split: DatasetSplit,
        paths: Optional[Dict[str, Path]] = None,
        clouds: Optional[Dict[str, SplatCloud]] = None
    ):
        self.labels = dict(labels)
        self.split = split
        self.paths = dict(paths or {})
        self._clouds: Dict[str, SplatCloud] = dict(clouds or {})
        self._samples: Dict[Tuple[str, int], LabeledSample] = {}
        self._lock = threading.Lock()
        for sample_id in split.train + split.val + split.test:
            if sample_id not in self.labels:
                raise DataError(f"split references unknown sample '{sample_id}'")

    @property
    def class_names(self) -> List[str]:
        return list(self.split.class_names)

    @property
    def feature_mode(self) -> str:
        return self.split.feature_mode

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self.labels

    def __len__(self) -> int:
        return len(self.labels)

    def ids(self, split_name: str) -> List[str]:
        return self.split.ids(split_name)

    def cloud(self, sample_id: str) -> SplatCloud:
        if sample_id not in self.labels:
            raise DataError(f"unknown sample '{sample_id}'")
        with self._lock:
            cached = self._clouds.get(sample_id)
        if cached is not None:
            return cached
        cloud = load_ply(self.paths[sample_id], self.feature_mode)
        with self._lock:
            self._clouds[sample_id] = cloud
        return cloud

    def sample(self, sample_id: str, grid_size: int) -> LabeledSample:
        key = (sample_id, grid_size)
        with self._lock:
            cached = self._samples.get(key)
        if cached is not None:
            return cached
        sample = make_sample(self.cloud(sample_id), self.labels[sample_id], grid_size, sample_id)
        with self._lock:
            self._samples[key] = sample
        return sample

    def samples(self, split_name: str, grid_size: int) -> List[LabeledSample]:
        return [self.sample(sample_id, grid_size) for sample_id in self.ids(split_name)]

    @classmethod
    def from_samples(
        cls,
        samples: Sequence[LabeledSample],
        split: DatasetSplit
    ) -> "SplatDataset":
        dataset = cls(
            labels={s.sample_id: s.label for s in samples},
            split=split,
            clouds={s.sample_id: s.cloud for s in samples},
        )
        for s in samples:
            dataset._samples[(s.sample_id, s.grid_size)] = s
        return dataset

    @classmethod
    def from_manifest(cls, manifest_path: Union[str, Path]) -> "SplatDataset":
        manifest_path = Path(manifest_path)
        with open(manifest_path, "r") as f:
            manifest = json.load(f)
        if manifest.get("version") != MANIFEST_VERSION:
            raise FormatError(f"{manifest_path}: unsupported manifest version {manifest.get('version')}")
        root = manifest_path.parent
        labels, paths = {}, {}
        for entry in manifest["samples"]:
            labels[entry["id"]] = int(entry["label"])
            paths[entry["id"]] = root / entry["path"]
        return cls(labels, DatasetSplit.from_dict(manifest["split"]), paths=paths)

    def write_manifest(self, manifest_path: Union[str, Path]) -> Path:
        manifest_path = Path(manifest_path)
        root = manifest_path.parent
        entries = []
        for sample_id in sorted(self.labels):
            path = self.paths.get(sample_id)
            rel = Path(path).resolve().relative_to(root.resolve()) if path else None
            entries.append({
                "id": sample_id,
                "label": self.labels[sample_id],
                "path": rel.as_posix() if rel else None,
            })
        manifest = {"version": MANIFEST_VERSION, "samples": entries, "split": self.split.to_dict()}
        manifest_path.parent.mkdir(parents=True, exist_ok=True)
        with open(manifest_path, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        return manifest_path
