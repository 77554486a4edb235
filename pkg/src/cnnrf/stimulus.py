"""Stimulus generation: Gaussian white noise, Cartesian gratings, natural images.

All stimuli are ``ImageTensor`` values: float64 arrays of shape (H, W, C),
channel-last, in a normalized intensity domain (zero mean, unit-ish std).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Sequence, Tuple

import numpy as np

PRNG_NAME = "numpy.PCG64/SeedSequence([seed, stream, chunk])"
DEFAULT_CHUNK = 4096

ORIENTATIONS_DEG = tuple(float(10 * i) for i in range(17))
PHASES_DEG = (0.0, 90.0, 180.0, 270.0)
FREQ_LO, FREQ_HI, N_FREQ = 1.75, 56.0, 6


class ConfigError(ValueError):
    """Invalid stimulus or run configuration."""


class IngestionError(IOError):
    """An image set could not be loaded."""


def as_image(data, copy: bool = False) -> np.ndarray:
    """Coerce ``data`` to a validated (H, W, C) float64 ImageTensor."""
    arr = np.array(data, dtype=np.float64, copy=copy)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ConfigError(f"image tensor must be (H, W, C) with C >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError("image tensor contains non-finite values")
    return arr


@dataclass(frozen=True)
class GratingParams:
    orientation_deg: float
    spatial_freq_cpi: float
    phase_deg: float = 0.0
    amplitude: float = 1.0
    mean_level: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.orientation_deg < 180.0:
            raise ConfigError(f"orientation must be in [0, 180), got {self.orientation_deg}")
        if not self.spatial_freq_cpi > 0:
            raise ConfigError("spatial frequency must be positive")
        if not 0.0 <= self.phase_deg < 360.0:
            raise ConfigError(f"phase must be in [0, 360), got {self.phase_deg}")
        if self.amplitude < 0:
            raise ConfigError("amplitude must be >= 0")


@dataclass(frozen=True)
class NoiseSpec:
    seed: int
    count: int
    shape: Tuple[int, int, int]
    mean: float = 0.0
    std: float = 1.0
    # Independent streams (analysis, fitting, histograms) share a seed.
    stream: int = 0
    chunk: int = DEFAULT_CHUNK

    def __post_init__(self):
        if len(self.shape) != 3 or any(int(d) < 1 for d in self.shape):
            raise ConfigError(f"noise shape must be three positive dims, got {self.shape}")
        if self.count < 1:
            raise ConfigError("noise count must be >= 1")
        if not self.std > 0:
            raise ConfigError("noise std must be > 0")
        if self.chunk < 1:
            raise ConfigError("chunk size must be >= 1")

    @property
    def n_chunks(self) -> int:
        return -(-self.count // self.chunk)

    def chunk_len(self, index: int) -> int:
        return min(self.chunk, self.count - index * self.chunk)


@dataclass
class CategoryImageSet:
    categories: List[Tuple[str, List[np.ndarray]]]

    def __post_init__(self):
        if len(self.categories) < 2:
            raise IngestionError("an image set needs at least two categories")
        shapes = set()
        for label, images in self.categories:
            if not images:
                raise IngestionError(f"category {label!r} is empty")
            shapes.update(im.shape for im in images)
        if len(shapes) != 1:
            raise IngestionError(f"images differ in shape: {sorted(shapes)}")

    @property
    def labels(self) -> List[str]:
        return [label for label, _ in self.categories]


# -- white noise -------------------------------------------------------------

def chunk_rng(seed: int, stream: int, chunk_index: int) -> np.random.Generator:
    """Generator for one chunk; sub-seeds depend only on (seed, stream, chunk)."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream), int(chunk_index)])
    return np.random.Generator(np.random.PCG64(ss))


def noise_chunk(spec: NoiseSpec, index: int) -> np.ndarray:
    """Return chunk ``index`` of the stream as an (n, H, W, C) array."""
    if not 0 <= index < spec.n_chunks:
        raise IndexError(f"chunk {index} out of range for {spec.n_chunks} chunks")
    rng = chunk_rng(spec.seed, spec.stream, index)
    n = spec.chunk_len(index)
    return rng.normal(spec.mean, spec.std, size=(n, *spec.shape))


def noise_chunks(spec: NoiseSpec) -> Iterator[np.ndarray]:
    for i in range(spec.n_chunks):
        yield noise_chunk(spec, i)


def gen_white_noise(spec: NoiseSpec) -> Iterator[np.ndarray]:
    """Yield ``spec.count`` i.i.d. Gaussian ImageTensors, one at a time."""
    for block in noise_chunks(spec):
        yield from block


def noise_array(spec: NoiseSpec) -> np.ndarray:
    """The whole stream materialized as one (count, H, W, C) array."""
    return np.concatenate(list(noise_chunks(spec)), axis=0)


# -- gratings ----------------------------------------------------------------

def centered_coords(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates (x, y) relative to the center pixel (H//2, W//2)."""
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    return x - width // 2, y - height // 2


def gen_grating(p: GratingParams, height: int, width: int, channels: int = 1) -> np.ndarray:
    """Achromatic sinusoidal grating with center-referenced phase.

    value(x, y) = mean + amp * sin(2*pi*f*(x cos(t) + y sin(t)) / width + phase)
    """
    x, y = centered_coords(height, width)
    theta = math.radians(p.orientation_deg)
    arg = 2 * np.pi * p.spatial_freq_cpi * (x * math.cos(theta) + y * math.sin(theta)) / width
    img = p.mean_level + p.amplitude * np.sin(arg + math.radians(p.phase_deg))
    return np.repeat(img[:, :, None], channels, axis=2)


def battery_frequencies() -> np.ndarray:
    """Six log-spaced frequencies, 1.75 .. 56 cycles/image (ratio 2)."""
    return np.round(np.geomspace(FREQ_LO, FREQ_HI, N_FREQ), 10)


def battery_params(amplitude: float = 1.0, mean_level: float = 0.0) -> List[GratingParams]:
    return [
        GratingParams(ori, float(sf), ph, amplitude, mean_level)
        for ori in ORIENTATIONS_DEG
        for sf in battery_frequencies()
        for ph in PHASES_DEG
    ]


def grating_battery(height: int, width: int, channels: int = 1, amplitude: float = 1.0,
                    mean_level: float = 0.0) -> List[Tuple[GratingParams, np.ndarray]]:
    """17 orientations x 6 frequencies x 4 phases, in (ori, sf, phase) order."""
    return [(p, gen_grating(p, height, width, channels))
            for p in battery_params(amplitude, mean_level)]


# -- natural images ----------------------------------------------------------

def resize_nearest(img: np.ndarray, height: int, width: int) -> np.ndarray:
    rows = np.minimum(((np.arange(height) + 0.5) * img.shape[0] / height).astype(int), img.shape[0] - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * img.shape[1] / width).astype(int), img.shape[1] - 1)
    return img[rows][:, cols]


def zscore_image(img: np.ndarray, path="<image>") -> np.ndarray:
    std = img.std()
    if not std > 0:
        raise IngestionError(f"{path}: constant image cannot be normalized")
    return (img - img.mean()) / std


def read_raster(path) -> np.ndarray:
    """Decode an 8-bit grayscale or RGB raster to an (H, W, C) float array."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
            arr = np.asarray(im, dtype=np.float64)
    except FileNotFoundError:
        raise IngestionError(f"{path}: file not found") from None
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise IngestionError(f"{path}: cannot decode image ({exc})") from None
    return arr[:, :, None] if arr.ndim == 2 else arr


def parse_manifest(manifest_path) -> List[Tuple[str, Path]]:
    manifest_path = Path(manifest_path)
    try:
        text = manifest_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"{manifest_path}: cannot read manifest ({exc})") from None
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "\t" not in line:
            raise IngestionError(f"{manifest_path}:{lineno}: expected 'label<TAB>path'")
        label, path = (s.strip() for s in line.split("\t", 1))
        path = Path(path)
        if not path.is_absolute():
            path = manifest_path.parent / path
        records.append((label, path))
    return records


def load_image_set(manifest_path, shape: Sequence[int]) -> CategoryImageSet:
    """Load a categorized image set listed in a ``label<TAB>path`` manifest.

    Each image is nearest-neighbor resized to ``shape[:2]`` and z-scored.
    ``shape[2]`` must match the decoded channel count.
    """
    height, width, channels = (int(d) for d in shape)
    groups = {}
    for label, path in parse_manifest(manifest_path):
        img = read_raster(path)
        if img.shape[2] != channels:
            raise IngestionError(f"{path}: has {img.shape[2]} channels, expected {channels}")
        img = zscore_image(resize_nearest(img, height, width), path)
        groups.setdefault(label, []).append(img)
    return CategoryImageSet(list(groups.items()))
