"""Image datasets: MVTec-style folders, preprocessing, flip augmentation and the
synthetic stripe set (diagonal stripes are normal, vertical stripes anomalous)."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png",)


@dataclass
class ImageSample:
    image_id: str
    pixels: np.ndarray  # float32 (C, H, W) in [-1, 1]
    label: int = 0
    split: str = "train"


def stack(samples: list[ImageSample]) -> np.ndarray:
    return np.stack([s.pixels for s in samples]).astype(np.float32, copy=False)


def check_train_split(samples: list[ImageSample]) -> None:
    bad = [s.image_id for s in samples if s.label != 0]
    if bad:
        raise ValueError(f"training split must contain only normal images; found anomalous {bad[:3]}")


# -- preprocessing -----------------------------------------------------------

def to_rgb_array(img) -> np.ndarray:
    """Return an (H, W, 3) uint8 array from a PIL image or numpy array."""
    if isinstance(img, Image.Image):
        img = np.asarray(img.convert("RGB"))
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] not in (1, 3, 4):
        raise ValueError(f"expected an RGB or grayscale image, got array of shape {arr.shape}")
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    return arr[:, :, :3]


def preprocess(img, target: int) -> np.ndarray:
    """Bilinear resize to ``target x target`` and map [0, 255] to [-1, 1].

    Returns a float32 (3, target, target) array.
    """
    arr = to_rgb_array(img)
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("cannot preprocess a zero-size image")
    if arr.shape[:2] != (target, target):
        if arr.dtype != np.uint8:
            arr = np.clip(arr, 0, 255).astype(np.uint8)
        arr = np.asarray(Image.fromarray(arr).resize((target, target), Image.BILINEAR))
    out = arr.astype(np.float32).transpose(2, 0, 1) / 127.5 - 1.0
    return np.clip(out, -1.0, 1.0).astype(np.float32)


def read_image(path: str | os.PathLike, target: int) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            return preprocess(im, target)
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc


def augment_flip(x: np.ndarray, rng: np.random.Generator, p: float = 0.5) -> np.ndarray:
    """Flip a (C, H, W) image horizontally and/or vertically, each with probability ``p``.

    Two uniform draws are always consumed, so RNG streams stay aligned
    regardless of the outcome.
    """
    flip_h, flip_v = rng.random(2) < p
    if flip_h:
        x = x[:, :, ::-1]
    if flip_v:
        x = x[:, ::-1, :]
    return np.ascontiguousarray(x)


# -- folder datasets -----------------------------------------------------------

def _list_images(folder: Path) -> list[Path]:
    return sorted(p for p in folder.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def load_folder_dataset(root: str | os.PathLike, size: int) -> tuple[list[ImageSample], list[ImageSample]]:
    """Load ``root/train/good`` (normal) and ``root/test/*`` (``good`` normal, other folders anomalous)."""
    root = Path(root)
    train_dir = root / "train" / "good"
    if not train_dir.is_dir():
        raise FileNotFoundError(f"missing training folder {train_dir}")
    train = [ImageSample(p.relative_to(root).as_posix(), read_image(p, size), 0, "train")
             for p in _list_images(train_dir)]
    test: list[ImageSample] = []
    test_dir = root / "test"
    if test_dir.is_dir():
        for sub in sorted(d for d in test_dir.iterdir() if d.is_dir()):
            label = 0 if sub.name == "good" else 1
            test.extend(ImageSample(p.relative_to(root).as_posix(), read_image(p, size), label, "test")
                        for p in _list_images(sub))
    check_train_split(train)
    return train, test


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    """(C, H, W) in [-1, 1] to (H, W, 3) uint8."""
    arr = np.clip((pixels + 1.0) * 127.5, 0, 255).round().astype(np.uint8)
    arr = arr.transpose(1, 2, 0)
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    return arr


def save_png(pixels: np.ndarray, path: str | os.PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(pixels)).save(path)


def export_folder(train: list[ImageSample], test: list[ImageSample], root: str | os.PathLike) -> None:
    """Write a dataset as PNGs in the folder layout read by :func:`load_folder_dataset`."""
    root = Path(root)
    for s in train:
        save_png(s.pixels, root / "train" / "good" / f"{Path(s.image_id).stem}.png")
    for s in test:
        sub = "good" if s.label == 0 else "stripes"
        save_png(s.pixels, root / "test" / sub / f"{Path(s.image_id).stem}.png")


# -- synthetic stripes -----------------------------------------------------------

@dataclass
class StripeSpec:
    size: int = 64
    period: int = 8
    noise_std: float = 0.05
    count_train: int = 200
    count_test_normal: int = 50
    count_test_anomalous: int = 50
    seed: int = 0
    orientation_normal: str = "diagonal"
    orientation_anomaly: str = "vertical"
    channels: int = 3
    anomaly_patch: int = 0  # 0: whole image uses the anomaly orientation; k: only a random k x k patch
    phase_tile: int = 0  # 0: one phase per image; k: independent phase per k x k tile

    def validate(self, scales: int | None = None) -> None:
        if self.period < 2:
            raise ValueError(f"stripe period must be >= 2, got {self.period}")
        if self.size < 1:
            raise ValueError("stripe image size must be positive")
        if scales is not None and self.size % 2 ** scales:
            raise ValueError(f"stripe size {self.size} not divisible by 2^{scales}")
        for o in (self.orientation_normal, self.orientation_anomaly):
            if o not in ORIENTATIONS:
                raise ValueError(f"unknown stripe orientation {o!r}; expected one of {sorted(ORIENTATIONS)}")
        if not 0 <= self.anomaly_patch <= self.size:
            raise ValueError(f"anomaly_patch must lie in [0, size], got {self.anomaly_patch}")
        if self.phase_tile < 0 or (self.phase_tile and self.size % self.phase_tile):
            raise ValueError(f"phase_tile must divide the image size {self.size}, got {self.phase_tile}")
        for name in ("count_train", "count_test_normal", "count_test_anomalous"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


ORIENTATIONS = {
    "diagonal": lambda i, j: i + j,
    "vertical": lambda i, j: j + 0 * i,
    "horizontal": lambda i, j: i + 0 * j,
    "antidiagonal": lambda i, j: i - j,
}


def stripe_image(size: int, period: int, orientation: str, phase: int = 0) -> np.ndarray:
    """Noise-free (size, size) stripe pattern with values in {-1, +1}.

    Pixel (i, j) is +1 when ``(coord + phase) // (period // 2)`` is even,
    where ``coord`` is ``i + j`` for diagonal and ``j`` for vertical stripes.
    """
    i, j = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    coord = ORIENTATIONS[orientation](i, j) + phase
    half = max(period // 2, 1)
    return np.where((coord // half) % 2 == 0, 1.0, -1.0).astype(np.float32)


def _tiled_stripes(spec: StripeSpec, orientation: str, rng: np.random.Generator) -> np.ndarray:
    """Stripes whose phase is drawn independently for every ``phase_tile`` square."""
    size, t = spec.size, spec.phase_tile
    n = size // t
    phases = rng.integers(0, spec.period, size=(n, n))
    i, j = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    coord = ORIENTATIONS[orientation](i, j) + phases[i // t, j // t]
    half = max(spec.period // 2, 1)
    return np.where((coord // half) % 2 == 0, 1.0, -1.0).astype(np.float32)


def generate_stripes(spec: StripeSpec, scales: int | None = None) -> tuple[list[ImageSample], list[ImageSample]]:
    """Generate train (all normal) and test (normal then anomalous) stripe sets."""
    spec.validate(scales)
    rng = np.random.default_rng(spec.seed)

    def make(orientation: str, prefix: str, count: int, label: int, split: str):
        out = []
        for k in range(count):
            phase = int(rng.integers(0, spec.period))
            if spec.phase_tile:
                base = _tiled_stripes(spec, spec.orientation_normal, rng)
            else:
                base = stripe_image(spec.size, spec.period, spec.orientation_normal, phase)
            if label == 1 and spec.anomaly_patch:
                img = base
                p = spec.anomaly_patch
                top, left = (int(v) for v in rng.integers(0, spec.size - p + 1, size=2))
                patch = stripe_image(spec.size, spec.period, orientation, int(rng.integers(0, spec.period)))
                img[top:top + p, left:left + p] = patch[top:top + p, left:left + p]
            elif label == 0:
                img = base
            else:
                img = stripe_image(spec.size, spec.period, orientation, phase)
            if spec.noise_std > 0:
                img = img + rng.normal(0.0, spec.noise_std, img.shape).astype(np.float32)
            img = np.clip(img, -1.0, 1.0).astype(np.float32)
            pixels = np.repeat(img[None], spec.channels, axis=0)
            out.append(ImageSample(f"{prefix}_{k:04d}", pixels, label, split))
        return out

    train = make(spec.orientation_normal, "train/normal", spec.count_train, 0, "train")
    test = make(spec.orientation_normal, "test/normal", spec.count_test_normal, 0, "test")
    test += make(spec.orientation_anomaly, "test/anomaly", spec.count_test_anomalous, 1, "test")
    return train, test
