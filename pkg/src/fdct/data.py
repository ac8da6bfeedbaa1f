"""Dataset access and a seeded synthetic transparent-scene generator.

On-disk layout per scene: `<root>/<scene>/{rgb,depth,depth_gt,mask}/NNNN.png`.
Depth is 16-bit single-channel PNG in millimeters (value/1000 -> meters),
masks are 8-bit with nonzero = transparent, rgb is 8-bit 3-channel. Depth and
masks are always resized nearest-neighbor so no depth value is ever invented
across object boundaries.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import cv2
import numpy as np

from .core import ConfigError, DepthMap, RgbImage, Sample, TransparentMask, normals_from_depth

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
IMAGE_KINDS = ("rgb", "depth", "depth_gt", "mask")


class DatasetError(RuntimeError):
    """The dataset directory is unusable."""


@dataclass(frozen=True)
class SampleFiles:
    id: str
    rgb: Path
    depth: Path
    depth_gt: Path
    mask: Path


@dataclass(frozen=True)
class DatasetIndex:
    root: Path
    split: str
    entries: tuple[SampleFiles, ...]
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.entries)


def load_dataset(root, split: str = "train") -> DatasetIndex:
    """Index every complete, decodable sample under root (or root/split).

    Entries are ordered lexicographically by scene then frame. Incomplete or
    corrupt quadruples are skipped with a warning; an empty result raises.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    base = root / split if (root / split).is_dir() else root

    entries = []
    skipped = 0
    scenes = sorted(p for p in base.iterdir() if (p / "rgb").is_dir())
    for scene in scenes:
        for rgb_path in sorted((scene / "rgb").glob("*.png")):
            name = rgb_path.name
            files = SampleFiles(
                id=f"{scene.name}/{rgb_path.stem}",
                rgb=rgb_path,
                depth=scene / "depth" / name,
                depth_gt=scene / "depth_gt" / name,
                mask=scene / "mask" / name,
            )
            problem = _probe(files)
            if problem:
                log.warning("skipping %s: %s", files.id, problem)
                skipped += 1
                continue
            entries.append(files)
    if not entries:
        raise DatasetError(f"no usable samples under {base}")
    return DatasetIndex(root=root, split=split, entries=tuple(entries), skipped=skipped)


def _probe(files: SampleFiles) -> str | None:
    shapes = set()
    for kind in IMAGE_KINDS:
        path = getattr(files, kind)
        if not path.is_file():
            return f"missing {kind} file {path}"
        img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if img is None:
            return f"cannot decode {path}"
        shapes.add(img.shape[:2])
    if len(shapes) != 1:
        return f"images disagree on size: {shapes}"
    return None


def get_sample(index: DatasetIndex, i: int, target_size: tuple[int, int] | None = None) -> Sample:
    """Decode entry i, optionally resized to (H, W); depth converted mm -> m."""
    files = index.entries[i]
    rgb = _read(files.rgb, cv2.IMREAD_COLOR)
    depth = _read(files.depth, cv2.IMREAD_UNCHANGED)
    depth_gt = _read(files.depth_gt, cv2.IMREAD_UNCHANGED)
    mask = _read(files.mask, cv2.IMREAD_GRAYSCALE)

    if target_size is not None:
        h, w = target_size
        rgb = cv2.resize(rgb, (w, h), interpolation=cv2.INTER_LINEAR)
        depth = cv2.resize(depth, (w, h), interpolation=cv2.INTER_NEAREST)
        depth_gt = cv2.resize(depth_gt, (w, h), interpolation=cv2.INTER_NEAREST)
        mask = cv2.resize(mask, (w, h), interpolation=cv2.INTER_NEAREST)

    return Sample(
        rgb=RgbImage(cv2.cvtColor(rgb, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0),
        raw_depth=DepthMap(depth.astype(np.float32) / 1000.0),
        gt_depth=DepthMap(depth_gt.astype(np.float32) / 1000.0),
        mask=TransparentMask(mask > 0),
        id=files.id,
    )


def _read(path: Path, flags):
    img = cv2.imread(str(path), flags)
    if img is None:
        raise IOError(f"cannot decode {path}")
    return img


def write_sample(scene_dir, sample: Sample, frame: int = 0):
    """Write one sample in the on-disk layout (rgb 8-bit, depth mm 16-bit)."""
    scene_dir = Path(scene_dir)
    name = f"{frame:04d}.png"
    for kind in IMAGE_KINDS:
        (scene_dir / kind).mkdir(parents=True, exist_ok=True)
    bgr = cv2.cvtColor((sample.rgb.values * 255.0).round().astype(np.uint8), cv2.COLOR_RGB2BGR)
    cv2.imwrite(str(scene_dir / "rgb" / name), bgr)
    for kind, depth in (("depth", sample.raw_depth), ("depth_gt", sample.gt_depth)):
        mm = np.clip(depth.values * 1000.0, 0, 65535).round().astype(np.uint16)
        cv2.imwrite(str(scene_dir / kind / name), mm)
    cv2.imwrite(str(scene_dir / "mask" / name), sample.mask.values.astype(np.uint8) * 255)


@dataclass(frozen=True)
class SynthSceneSpec:
    """Parameters of one generated transparent scene; `seed` fixes everything."""

    height: int = 96
    width: int = 128
    base_depth: float = 0.9
    n_bumps: int = 4
    n_transparent_regions: int = 3
    dropout_prob: float = 0.5
    noise_std: float = 0.01
    offset_scale: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.height % 16 or self.width % 16 or min(self.height, self.width) < 16:
            raise ConfigError(f"size {self.height}x{self.width} must be divisible by 16")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ConfigError("dropout_prob must be in [0, 1]")
        if self.noise_std < 0 or self.offset_scale < 0:
            raise ConfigError("noise_std and offset_scale must be non-negative")


def generate_scene(spec: SynthSceneSpec) -> Sample:
    """Deterministic synthetic sample: smooth ground truth inside (0.3, 1.5) m,
    elliptical transparent regions, and raw depth corrupted only inside them
    (per-region constant offset, Gaussian noise, dropout to 0)."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    gt = np.full((h, w), spec.base_depth)
    for _ in range(spec.n_bumps):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        sigma = rng.uniform(0.08, 0.25) * min(h, w)
        amp = rng.uniform(-0.3, 0.3)
        gt += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    gt = np.clip(gt, 0.35, 1.45)

    mask = np.zeros((h, w), dtype=bool)
    regions = []
    for _ in range(spec.n_transparent_regions):
        cy, cx = rng.uniform(0.2 * h, 0.8 * h), rng.uniform(0.2 * w, 0.8 * w)
        a = rng.uniform(0.08, 0.22) * w
        b = rng.uniform(0.08, 0.22) * h
        theta = rng.uniform(0, np.pi)
        u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
        v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
        region = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        regions.append(region)
        mask |= region

    raw = gt.copy()
    for region in regions:
        offset = rng.uniform(-1.0, 1.0) * spec.offset_scale
        raw[region] += offset
    noise = rng.normal(0.0, 1.0, size=(h, w)) * spec.noise_std
    raw[mask] += noise[mask]
    dropout = rng.random((h, w)) < spec.dropout_prob
    raw[mask & dropout] = 0.0
    raw = np.clip(raw, 0.0, None)

    shading = np.clip(normals_from_depth(gt) @ _LIGHT_DIR, 0.0, 1.0)
    tint = rng.uniform(0.4, 0.9, size=3)
    rgb = shading[..., None] * tint[None, None, :]
    rgb[_boundary(mask)] = 0.95
    rgb = np.clip(rgb, 0.0, 1.0)

    return Sample(
        rgb=RgbImage(rgb.astype(np.float32)),
        raw_depth=DepthMap(raw.astype(np.float32)),
        gt_depth=DepthMap(gt.astype(np.float32)),
        mask=TransparentMask(mask),
        id=f"synth-{spec.seed}",
    )


_LIGHT_DIR = np.array([0.3, 0.2, 0.9]) / np.linalg.norm([0.3, 0.2, 0.9])


def _boundary(mask):
    interior = mask.copy()
    for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
        interior &= np.roll(mask, shift, axis=axis)
    return mask & ~interior


def generate_dataset(out_dir, n_scenes: int, spec: SynthSceneSpec) -> list[Path]:
    """Write n_scenes scenes (seeds spec.seed + i) plus a spec.json manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n_scenes):
        scene_spec = SynthSceneSpec(**{**asdict(spec), "seed": spec.seed + i})
        scene_dir = out_dir / f"scene_{i:04d}"
        write_sample(scene_dir, generate_scene(scene_spec), frame=0)
        paths.append(scene_dir)
    manifest = {"n_scenes": n_scenes, **asdict(spec)}
    (out_dir / "spec.json").write_text(json.dumps(manifest, indent=2))
    return paths


def batch_indices(n: int, batch_size: int, shuffle_seed: int, epoch: int):
    """Index batches for one epoch; the permutation depends only on
    (shuffle_seed, epoch). The final partial batch is kept."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = np.random.default_rng((shuffle_seed, epoch)).permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


class BatchIterator:
    """Epoch-wise shuffled stream of Sample batches over an index or sequence."""

    def __init__(self, data, batch_size: int, shuffle_seed: int = 0,
                 target_size: tuple[int, int] | None = None):
        if batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        self.data = data
        self.batch_size = batch_size
        self.shuffle_seed = shuffle_seed
        self.target_size = target_size

    def __len__(self) -> int:
        n = len(self.data)
        return (n + self.batch_size - 1) // self.batch_size

    def _fetch(self, i: int) -> Sample:
        if isinstance(self.data, DatasetIndex):
            return get_sample(self.data, i, self.target_size)
        return self.data[i]

    def epoch(self, epoch: int):
        for idx in batch_indices(len(self.data), self.batch_size, self.shuffle_seed, epoch):
            yield [self._fetch(int(i)) for i in idx]
