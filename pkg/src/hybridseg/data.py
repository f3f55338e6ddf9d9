"""Scenes, synthetic data, normalisation, sliding-window patches, and the
on-disk scene layout ``<root>/<scene-id>/{image.ppm, dsm.pgm, labels.pgm}``."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np

from .heads import UNKNOWN
from .pnm import read_pnm, read_segmap, write_pnm, write_segmap

# IRRG means per class: impervious, building, low vegetation, tree, car, clutter.
# Roofs resemble roads and trees resemble grass; elevation separates them.
CLASS_COLORS = np.array([
    [0.50, 0.50, 0.50],
    [0.56, 0.46, 0.44],
    [0.82, 0.38, 0.40],
    [0.70, 0.28, 0.30],
    [0.20, 0.25, 0.70],
    [0.30, 0.62, 0.22],
])
CLASS_HEIGHTS = np.array([0.0, 8.0, 0.3, 6.0, 1.5, 1.0])
GROUND_LEVEL = 100.0
DSM_SCALE = 0.01


@dataclass
class Scene:
    image: np.ndarray          # H,W,3
    dsm: np.ndarray            # H,W
    labels: np.ndarray         # H,W uint8
    id: str = "scene"
    normalized: bool = False

    def __post_init__(self):
        h, w = self.labels.shape
        if self.image.shape != (h, w, 3) or self.dsm.shape != (h, w):
            raise ValueError(f"scene rasters disagree: image {self.image.shape}, "
                             f"dsm {self.dsm.shape}, labels {self.labels.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class NormStats:
    image_max: tuple
    dsm_mean: float
    dsm_std: float

    def to_dict(self) -> dict:
        return {"image_max": list(self.image_max), "dsm_mean": self.dsm_mean, "dsm_std": self.dsm_std}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(tuple(d["image_max"]), float(d["dsm_mean"]), float(d["dsm_std"]))


@dataclass
class Patch:
    image: np.ndarray
    dsm: np.ndarray
    labels: np.ndarray
    row: int
    col: int


@dataclass
class PatchSet:
    patches: list = field(default_factory=list)
    patch_size: int = 256
    stride: int = 32

    def __len__(self):
        return len(self.patches)

    def arrays(self):
        """Stacked network inputs: (N,3,P,P image, N,1,P,P dsm, N,P,P labels)."""
        img = np.stack([p.image.transpose(2, 0, 1) for p in self.patches])
        dsm = np.stack([p.dsm[None] for p in self.patches])
        lab = np.stack([p.labels for p in self.patches])
        return img, dsm, lab


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

def synth_scene(seed: int, size: int = 64, class_count: int = 6, sites: int | None = None) -> Scene:
    """Voronoi scene: each site owns a region of one class, so every class
    with at least one site is present."""
    if size < 64:
        raise ValueError(f"synthetic scenes need size >= 64, got {size}")
    rng = np.random.default_rng([seed, size, class_count])
    n_sites = sites if sites is not None else max(12, (size // 32) ** 2)
    pos = rng.choice(size * size, n_sites, replace=False)
    sy, sx = np.divmod(pos, size)
    site_class = rng.permutation(np.arange(n_sites) % class_count)
    yy, xx = np.mgrid[0:size, 0:size]
    d2 = (yy[..., None] - sy) ** 2 + (xx[..., None] - sx) ** 2
    owner = np.argmin(d2, axis=-1)
    labels = site_class[owner].astype(np.uint8)

    colors = CLASS_COLORS[:class_count] if class_count <= len(CLASS_COLORS) else \
        rng.uniform(0.1, 0.9, (class_count, 3))
    heights = CLASS_HEIGHTS[:class_count] if class_count <= len(CLASS_HEIGHTS) else \
        rng.uniform(0, 10, class_count)
    region_tint = rng.normal(0.0, 0.03, (n_sites, 3))
    image = colors[labels] + region_tint[owner] + rng.normal(0.0, 0.06, (size, size, 3))
    image = np.clip(image, 0.0, 1.0)

    slope = rng.uniform(-2.0, 2.0, 2) / size
    ramp = slope[0] * yy + slope[1] * xx
    texture = rng.normal(0.0, 0.3, (size, size))
    if class_count > 3:
        texture = np.where(labels == 3, rng.normal(0.0, 1.0, (size, size)), texture)
    dsm = GROUND_LEVEL + heights[labels] + ramp + texture
    return Scene(image, dsm, labels, id=f"synth{seed:04d}")


def synth_dataset(n: int, size: int = 64, seed: int = 0) -> list[Scene]:
    return [synth_scene(seed * 100003 + i, size) for i in range(n)]


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

def compute_stats(scenes: list[Scene]) -> NormStats:
    img_max = np.max([s.image.reshape(-1, 3).max(axis=0) for s in scenes], axis=0)
    dsm = np.concatenate([s.dsm.ravel() for s in scenes])
    std = float(dsm.std())
    if std == 0.0:
        raise ValueError("DSM has zero variance; cannot standardise")
    img_max = np.where(img_max > 0, img_max, 1.0)
    return NormStats(tuple(float(v) for v in img_max), float(dsm.mean()), std)


def normalize(scene: Scene, stats: NormStats) -> Scene:
    """Scale image bands by the training maxima and standardise the DSM."""
    if scene.normalized:
        return scene
    if stats.dsm_std <= 0:
        raise ValueError("DSM has zero variance; cannot standardise")
    image = scene.image / np.asarray(stats.image_max)
    dsm = (scene.dsm - stats.dsm_mean) / stats.dsm_std
    return dataclasses.replace(scene, image=image, dsm=dsm, normalized=True)


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------

def window_origins(extent: int, patch: int, stride: int) -> list[int]:
    if extent < patch:
        raise ValueError(f"scene extent {extent} smaller than patch {patch}")
    if stride < 1:
        raise ValueError("stride must be positive")
    return list(range(0, extent - patch + 1, stride))


def cover_origins(extent: int, patch: int, stride: int) -> list[int]:
    """Sliding origins plus a final border-aligned window so the whole extent is covered."""
    if stride > patch:
        raise ValueError(f"stride {stride} > patch {patch} would leave gaps")
    origins = window_origins(extent, patch, stride)
    if origins[-1] != extent - patch:
        origins.append(extent - patch)
    return origins


def patch_count(h: int, w: int, patch: int, stride: int) -> int:
    return ((h - patch) // stride + 1) * ((w - patch) // stride + 1)


def patchify(scene: Scene, patch: int = 256, stride: int = 32) -> PatchSet:
    h, w = scene.shape
    if h < patch or w < patch:
        raise ValueError(f"scene {h}x{w} smaller than patch {patch}")
    out = PatchSet(patch_size=patch, stride=stride)
    for r in window_origins(h, patch, stride):
        for c in window_origins(w, patch, stride):
            sl = (slice(r, r + patch), slice(c, c + patch))
            out.patches.append(Patch(scene.image[sl], scene.dsm[sl], scene.labels[sl], r, c))
    return out


def reassemble(patches: PatchSet, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Paste patch labels back at their origins (last write wins); returns (labels, covered mask)."""
    labels = np.full(shape, UNKNOWN, dtype=np.uint8)
    covered = np.zeros(shape, dtype=bool)
    p = patches.patch_size
    for pt in patches.patches:
        labels[pt.row:pt.row + p, pt.col:pt.col + p] = pt.labels
        covered[pt.row:pt.row + p, pt.col:pt.col + p] = True
    return labels, covered


def split(scenes: list, train_fraction: float, seed: int) -> tuple[list, list]:
    n = len(scenes)
    if n < 2:
        raise ValueError("need at least 2 scenes to split")
    n_train = int(round(n * train_fraction))
    if not 1 <= n_train <= n - 1:
        raise ValueError(f"train_fraction={train_fraction} leaves an empty split for {n} scenes")
    order = np.random.default_rng(seed).permutation(n)
    return [scenes[i] for i in order[:n_train]], [scenes[i] for i in order[n_train:]]


# ---------------------------------------------------------------------------
# disk layout
# ---------------------------------------------------------------------------

def save_scene(root, scene: Scene) -> str:
    """Write a raw (un-normalised) scene.  Image bands are 8-bit; the DSM is
    16-bit with value = round(elevation / 0.01), recorded in a header comment."""
    if scene.normalized:
        raise ValueError("save raw scenes, not normalised ones")
    d = os.path.join(root, scene.id)
    os.makedirs(d, exist_ok=True)
    write_pnm(os.path.join(d, "image.ppm"), np.round(np.clip(scene.image, 0, 1) * 255).astype(np.int64), 255)
    dsm = np.round(scene.dsm / DSM_SCALE).astype(np.int64)
    write_pnm(os.path.join(d, "dsm.pgm"), dsm, 65535, comments=[f"dsm_scale={DSM_SCALE}"])
    write_segmap(os.path.join(d, "labels.pgm"), scene.labels)
    return d


def load_scene(path) -> Scene:
    img, maxval, _ = read_pnm(os.path.join(path, "image.ppm"))
    if img.ndim != 3:
        raise ValueError(f"{path}/image.ppm is not a colour image")
    dsm_raw, _, comments = read_pnm(os.path.join(path, "dsm.pgm"))
    scale = 1.0
    for c in comments:
        if c.startswith("dsm_scale="):
            scale = float(c.split("=", 1)[1])
    labels_path = os.path.join(path, "labels.pgm")
    if os.path.exists(labels_path):
        labels = read_segmap(labels_path)
    else:
        labels = np.full(dsm_raw.shape, UNKNOWN, dtype=np.uint8)
    return Scene(img / float(maxval), dsm_raw * scale, labels, id=os.path.basename(os.path.normpath(path)))


def load_dataset(root) -> list[Scene]:
    ids = sorted(e for e in os.listdir(root) if os.path.isfile(os.path.join(root, e, "image.ppm")))
    if not ids:
        raise FileNotFoundError(f"no scenes under {root}")
    return [load_scene(os.path.join(root, i)) for i in ids]
