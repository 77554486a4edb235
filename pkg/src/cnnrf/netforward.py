"""Forward-only convolutional inference and synthetic ground-truth units.

Convolution is cross-correlation (no kernel flip), stride 1, zero padding.
Activations are channel-last: (H, W, C) or batched (B, H, W, C).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .stimulus import centered_coords

KINDS = ("conv", "relu", "maxpool")
NNF_MAGIC = b"NNF1"
NNF_VERSION = 1  # version 1: conv = cross-correlation, stride 1


class ShapeError(ValueError):
    pass


class LookupFailure(KeyError):
    pass


class ModelFormatError(IOError):
    pass


@dataclass
class LayerSpec:
    kind: str
    name: str
    weight: Optional[np.ndarray] = None  # (out, in, kh, kw)
    bias: Optional[np.ndarray] = None
    padding: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unsupported layer kind {self.kind!r}")
        if self.kind == "conv":
            self.weight = np.asarray(self.weight, dtype=np.float64)
            if self.weight.ndim != 4 or min(self.weight.shape) < 1:
                raise ShapeError(f"{self.name}: conv kernel must be (out, in, kh, kw)")
            if self.bias is None:
                self.bias = np.zeros(self.weight.shape[0])
            self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
            if self.bias.shape[0] != self.weight.shape[0]:
                raise ShapeError(f"{self.name}: bias length != out channels")
            if self.padding < 0:
                raise ShapeError(f"{self.name}: negative padding")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]


@dataclass
class ModelSpec:
    input_shape: Tuple[int, int, int]
    layers: List[LayerSpec]

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ShapeError("layer names must be unique")
        self.output_shapes()  # validates channel chaining

    @property
    def layer_names(self) -> List[str]:
        return [l.name for l in self.layers]

    def output_shapes(self) -> List[Tuple[int, int, int]]:
        h, w, c = self.input_shape
        shapes = []
        for layer in self.layers:
            if layer.kind == "conv":
                out, cin, kh, kw = layer.weight.shape
                if cin != c:
                    raise ShapeError(f"{layer.name}: expects {cin} input channels, gets {c}")
                h, w, c = h + 2 * layer.padding - kh + 1, w + 2 * layer.padding - kw + 1, out
                if h < 1 or w < 1:
                    raise ShapeError(f"{layer.name}: feature map vanishes")
            elif layer.kind == "maxpool":
                if h % 2 or w % 2:
                    raise ShapeError(f"{layer.name}: maxpool needs even dims, got {h}x{w}")
                h, w = h // 2, w // 2
            shapes.append((h, w, c))
        return shapes

    def index_of(self, name: str) -> int:
        try:
            return self.layer_names.index(name)
        except ValueError:
            raise LookupFailure(f"unknown layer {name!r}") from None

    def conv_layers(self) -> List[LayerSpec]:
        return [l for l in self.layers if l.kind == "conv"]


# -- primitives --------------------------------------------------------------

def conv2d(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    """Stride-1 zero-padded cross-correlation; accepts (H,W,C) or (B,H,W,C)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    out_ch, in_ch, kh, kw = layer.weight.shape
    if x.shape[-1] != in_ch:
        raise ShapeError(f"{layer.name}: input has {x.shape[-1]} channels, kernel expects {in_ch}")
    p = layer.padding
    if p:
        x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    if x.shape[1] < kh or x.shape[2] < kw:
        raise ShapeError(f"{layer.name}: input smaller than kernel")
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # (B, H', W', C, kh, kw)
    y = np.tensordot(win, layer.weight, axes=([3, 4, 5], [1, 2, 3])) + layer.bias
    return y[0] if single else y


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def maxpool2(x: np.ndarray) -> np.ndarray:
    """2x2 / stride-2 max pooling; accepts (H,W,C) or (B,H,W,C)."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-3], x.shape[-2]
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    lead = x.shape[:-3]
    y = x.reshape(*lead, h // 2, 2, w // 2, 2, x.shape[-1])
    return y.max(axis=(-4, -2))


def forward(model: ModelSpec, x: np.ndarray, until: Optional[str] = None) -> np.ndarray:
    """Run the stack up to and including layer ``until`` (default: all)."""
    stop = len(model.layers) - 1 if until is None else model.index_of(until)
    for layer in model.layers[: stop + 1]:
        if layer.kind == "conv":
            x = conv2d(x, layer)
        elif layer.kind == "relu":
            x = relu(x)
        else:
            x = maxpool2(x)
    return x


def center_index(height: int, width: int) -> Tuple[int, int]:
    return height // 2, width // 2


def probe_center(model: ModelSpec, layer_name: str, unit_index: int, stimulus: np.ndarray) -> float:
    """Value of channel ``unit_index`` at the center of ``layer_name``'s feature map."""
    return float(NetworkProbe(model, layer_name, unit_index)(stimulus))


def receptive_field_sizes(model: ModelSpec) -> List[Tuple[str, int]]:
    """Theoretical RF size of every conv layer's output (standard recursion).

    r <- r + (k - 1) * j for each conv / pool; pooling doubles the jump j.
    """
    r, j = 1, 1
    sizes = []
    for layer in model.layers:
        if layer.kind == "conv":
            r += (layer.weight.shape[2] - 1) * j
            sizes.append((layer.name, r))
        elif layer.kind == "maxpool":
            r += j
            j *= 2
    return sizes


VGG16_BLOCKS = ((64, 64), (128, 128), (256, 256, 256), (512, 512, 512), (512, 512, 512))


def vgg16_shaped(input_shape=(224, 224, 3), width_scale: float = 1.0, seed: int = 0,
                 with_weights: bool = True) -> ModelSpec:
    """A VGG16-shaped conv stack (13 convs + ReLUs, 4 pools) with He-random weights.

    ``width_scale`` shrinks channel counts for desk-scale runs.  Layer names follow
    Keras: ``blockB_convK`` is the rectified output (what a Keras probe of that
    layer returns) and ``blockB_convK_linear`` is the conv before its ReLU.
    """
    rng = np.random.default_rng(seed)
    layers = []
    c_in = input_shape[2]
    for b, widths in enumerate(VGG16_BLOCKS, 1):
        if b > 1:
            layers.append(LayerSpec("maxpool", f"block{b - 1}_pool"))
        for k, width in enumerate(widths, 1):
            c_out = max(1, int(round(width * width_scale)))
            if with_weights:
                w = rng.normal(0, math.sqrt(2.0 / (9 * c_in)), size=(c_out, c_in, 3, 3))
            else:
                w = np.zeros((c_out, c_in, 3, 3))
            layers.append(LayerSpec("conv", f"block{b}_conv{k}_linear", w, np.zeros(c_out),
                                    padding=1))
            layers.append(LayerSpec("relu", f"block{b}_conv{k}"))
            c_in = c_out
    return ModelSpec(tuple(input_shape), layers)


# -- response functions --------------------------------------------------------

class ResponseFunction:
    """Deterministic map from an ImageTensor to a scalar response.

    ``batch`` evaluates a stack of stimuli (n, H, W, C) in one call.
    """

    unit_id = "unit"

    def batch(self, stimuli: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, stimulus: np.ndarray) -> float:
        return float(self.batch(np.asarray(stimulus, dtype=np.float64)[None])[0])


class NetworkProbe(ResponseFunction):
    def __init__(self, model: ModelSpec, layer_name: str, unit_index: int):
        idx = model.index_of(layer_name)
        channels = model.output_shapes()[idx][2]
        if not 0 <= unit_index < channels:
            raise LookupFailure(f"{layer_name} has {channels} units, asked for {unit_index}")
        self.model = model
        self.layer_name = layer_name
        self.unit_index = unit_index
        self.unit_id = f"{layer_name}:{unit_index}"

    def batch(self, stimuli):
        fmap = forward(self.model, stimuli, until=self.layer_name)
        r, c = center_index(fmap.shape[1], fmap.shape[2])
        return fmap[:, r, c, self.unit_index].copy()


class FunctionUnit(ResponseFunction):
    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], unit_id="function"):
        self.fn = fn
        self.unit_id = unit_id

    def batch(self, stimuli):
        return np.asarray(self.fn(np.asarray(stimuli, dtype=np.float64)), dtype=np.float64)


def gabor(shape: Sequence[int], center=(0.0, 0.0), orientation_deg=0.0, spatial_freq=4.0,
          phase_deg=0.0, sigma=3.0) -> np.ndarray:
    """Unit-norm Gabor: cosine carrier times isotropic Gaussian envelope.

    ``center`` is (x, y) in pixels relative to the image center pixel, and
    ``spatial_freq`` is in cycles per image width, as for gratings.  Pass
    ``sigma=math.inf`` for a bare carrier.
    """
    height, width = int(shape[0]), int(shape[1])
    channels = int(shape[2]) if len(shape) > 2 else 1
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    x, y = centered_coords(height, width)
    x = x - center[0]
    y = y - center[1]
    theta = math.radians(orientation_deg)
    carrier = np.cos(2 * np.pi * spatial_freq * (x * math.cos(theta) + y * math.sin(theta)) / width
                     + math.radians(phase_deg))
    env = np.ones_like(x) if math.isinf(sigma) else np.exp(-(x ** 2 + y ** 2) / (2 * sigma ** 2))
    g = np.repeat((carrier * env)[:, :, None], channels, axis=2)
    return g / np.linalg.norm(g)


@dataclass(frozen=True)
class GaborParams:
    center: Tuple[float, float] = (0.0, 0.0)
    orientation_deg: float = 30.0
    spatial_freq: float = 4.0
    phase_deg: float = 0.0
    sigma: float = 2.5

    def render(self, shape) -> np.ndarray:
        return gabor(shape, self.center, self.orientation_deg, self.spatial_freq,
                     self.phase_deg, self.sigma)

    def shifted(self, orientation=0.0, phase=0.0) -> "GaborParams":
        return GaborParams(self.center, (self.orientation_deg + orientation) % 180.0,
                           self.spatial_freq, (self.phase_deg + phase) % 360.0, self.sigma)


SYNTHETIC_KINDS = ("linear_halfrect", "energy", "suppressed_energy", "zero")


@dataclass(frozen=True)
class SyntheticUnitParams:
    """Ground-truth unit definition.

    ``filters`` holds the excitatory Gabor(s): one for linear_halfrect, a
    quadrature pair for the energy kinds.  ``suppressors`` is the q-pair of
    suppressed_energy; ``c`` is its gain.
    """

    kind: str
    shape: Tuple[int, int, int]
    filters: Tuple[GaborParams, ...] = ()
    suppressors: Tuple[GaborParams, ...] = ()
    c: float = 0.0

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        need = {"linear_halfrect": 1, "energy": 2, "suppressed_energy": 2, "zero": 0}[self.kind]
        if len(self.filters) != need:
            raise ValueError(f"{self.kind} needs {need} filter(s), got {len(self.filters)}")
        if self.kind in ("energy", "suppressed_energy"):
            _check_quadrature(self.filters)
        if self.kind == "suppressed_energy":
            if len(self.suppressors) != 2:
                raise ValueError("suppressed_energy needs a suppressor pair")
            _check_quadrature(self.suppressors)
        if self.c < 0:
            raise ValueError("suppression gain must be >= 0")

    @classmethod
    def preset(cls, kind: str, shape=(16, 16, 1), orientation_deg=30.0, spatial_freq=4.0,
               sigma=2.5, c=1.0, phase_deg=0.0) -> "SyntheticUnitParams":
        """Default unit of ``kind``; suppressors sit at the orthogonal orientation."""
        k = GaborParams((0.0, 0.0), orientation_deg % 180.0, spatial_freq, phase_deg % 360.0, sigma)
        shape = tuple(int(d) for d in shape)
        if kind == "linear_halfrect":
            return cls(kind, shape, (k,))
        if kind == "zero":
            return cls(kind, shape)
        pair = (k, k.shifted(phase=90.0))
        if kind == "energy":
            return cls(kind, shape, pair)
        q = k.shifted(orientation=90.0)
        return cls(kind, shape, pair, (q, q.shifted(phase=90.0)), c)


def _check_quadrature(pair):
    a, b = pair
    dphase = (b.phase_deg - a.phase_deg) % 180.0
    if len(pair) != 2 or abs(dphase - 90.0) > 1e-9 or (a.orientation_deg, a.spatial_freq, a.sigma,
                                                       a.center) != (b.orientation_deg, b.spatial_freq,
                                                                     b.sigma, b.center):
        raise ValueError("filter pair must differ only by a 90 degree phase shift")


class SyntheticUnit(ResponseFunction):
    def __init__(self, params: SyntheticUnitParams, unit_id: Optional[str] = None):
        self.params = params
        self.unit_id = unit_id or f"synthetic:{params.kind}"
        self.k = np.stack([g.render(params.shape).ravel() for g in params.filters]) \
            if params.filters else np.zeros((0, int(np.prod(params.shape))))
        self.q = np.stack([g.render(params.shape).ravel() for g in params.suppressors]) \
            if params.suppressors else np.zeros((0, self.k.shape[1]))

    def batch(self, stimuli):
        s = np.asarray(stimuli, dtype=np.float64)
        if s.shape[1:] != tuple(self.params.shape):
            raise ShapeError(f"stimulus shape {s.shape[1:]} != unit shape {self.params.shape}")
        s = s.reshape(s.shape[0], -1)
        kind = self.params.kind
        if kind == "zero":
            return np.zeros(s.shape[0])
        proj = s @ self.k.T
        if kind == "linear_halfrect":
            return np.maximum(proj[:, 0], 0.0)
        energy = np.sum(proj ** 2, axis=1)
        if kind == "energy":
            return energy
        sup = np.sum((s @ self.q.T) ** 2, axis=1)
        return np.maximum(energy - self.params.c * sup, 0.0)


def make_synthetic_unit(p: SyntheticUnitParams) -> SyntheticUnit:
    return SyntheticUnit(p)


# -- NNF1 model file -----------------------------------------------------------

_KIND_CODE = {"conv": 0, "relu": 1, "maxpool": 2}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def save_model(model: ModelSpec, path) -> None:
    out = bytearray(NNF_MAGIC)
    out += struct.pack("<I", NNF_VERSION)
    out += struct.pack("<3I", *model.input_shape)
    out += struct.pack("<I", len(model.layers))
    for layer in model.layers:
        name = layer.name.encode("utf-8")
        out += struct.pack("<B", _KIND_CODE[layer.kind])
        out += struct.pack("<H", len(name)) + name
        if layer.kind == "conv":
            out += struct.pack("<4I", *layer.weight.shape)
            out += struct.pack("<I", layer.padding)
            out += np.ascontiguousarray(layer.weight, dtype="<f4").tobytes()
            out += np.ascontiguousarray(layer.bias, dtype="<f4").tobytes()
        else:
            out += struct.pack("<4I", 0, 0, 0, 0) + struct.pack("<I", 0)
    Path(path).write_bytes(bytes(out))


def load_model(path) -> ModelSpec:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None
    pos = 0

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise ModelFormatError(f"{path}: truncated model file")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    if buf[:4] != NNF_MAGIC:
        raise ModelFormatError(f"{path}: bad magic {buf[:4]!r}")
    pos = 4
    (version,) = take("<I")
    if version != NNF_VERSION:
        raise ModelFormatError(f"{path}: unsupported version {version}")
    input_shape = take("<3I")
    (n_layers,) = take("<I")
    layers = []
    for _ in range(n_layers):
        (code,) = take("<B")
        (nlen,) = take("<H")
        name = bytes(take(f"<{nlen}s")[0]).decode("utf-8")
        dims = take("<4I")
        (padding,) = take("<I")
        if code not in _CODE_KIND:
            raise ModelFormatError(f"{path}: unknown layer kind code {code}")
        kind = _CODE_KIND[code]
        if kind == "conv":
            out_ch, _, kh, kw = dims
            if min(dims) < 1 or kh % 2 == 0 or kh != kw or padding != kh // 2:
                raise ModelFormatError(f"{path}: {name}: only odd square same-padding convs "
                                       f"are supported (dims {dims}, padding {padding})")
            count = int(np.prod(dims))
            if pos + 4 * (count + out_ch) > len(buf):
                raise ModelFormatError(f"{path}: truncated model file")
            weight = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(dims)
            pos += 4 * count
            bias = np.frombuffer(buf, dtype="<f4", count=out_ch, offset=pos)
            pos += 4 * out_ch
            layers.append(LayerSpec("conv", name, weight.astype(np.float64),
                                    bias.astype(np.float64), padding))
        else:
            layers.append(LayerSpec(kind, name))
    try:
        return ModelSpec(tuple(input_shape), layers)
    except ShapeError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None
