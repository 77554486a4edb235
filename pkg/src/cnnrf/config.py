"""Run configuration: defaults, ``key = value`` files, and unit resolution."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .formats import parse_kv
from .netforward import (SYNTHETIC_KINDS, ModelSpec, NetworkProbe, ResponseFunction, SyntheticUnit,
                         SyntheticUnitParams, load_model)
from .revcorr import AWC_FORMS, Crop, second_moment_bytes
from .stimulus import PRNG_NAME, ConfigError

SYNTHETIC_ALIASES = {"linear": "linear_halfrect", "suppressed": "suppressed_energy"}
SYNTHETIC_KEYS = {"ori": "orientation_deg", "sf": "spatial_freq", "sigma": "sigma", "c": "c",
                  "phase": "phase_deg"}


@dataclass
class RunConfig:
    model: Optional[str] = None
    synthetic: str = "linear"
    shape: str = "16x16x1"          # synthetic stimulus shape; a model fixes its own
    units: str = "all"
    seed: int = 0
    samples: int = 200_000
    crop: str = "16x16"
    awc_form: str = "as-written"
    n_exc: int = 9
    n_sup: int = 10
    bank: str = "full"
    fit_on: str = "noise"
    fit_samples: int = 10_000       # training rows; a further third is held out
    nonlinearity: str = "fullwave"
    images: Optional[str] = None
    bins: int = 50
    hist_samples: int = 20_000
    alpha: float = 0.01
    rectify: str = "rectify-mean"
    threads: int = 1
    chunk: int = 4096
    out: str = "out"
    force: bool = False
    memory_budget_mb: float = 512.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.awc_form not in AWC_FORMS:
            raise ConfigError(f"awc_form must be one of {AWC_FORMS}")
        if self.bank not in ("full", "awa-only", "chance"):
            raise ConfigError("bank must be full, awa-only or chance")
        if self.fit_on not in ("noise", "probes", "both"):
            raise ConfigError("fit_on must be noise, probes or both")
        if self.nonlinearity not in ("fullwave", "square"):
            raise ConfigError("nonlinearity must be fullwave or square")
        if self.rectify not in ("rectify-mean", "mean-rectify"):
            raise ConfigError("rectify must be rectify-mean or mean-rectify")
        for name in ("samples", "chunk", "threads", "fit_samples", "hist_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_exc < 0 or self.n_sup < 0:
            raise ConfigError("sub-filter counts must be >= 0")
        parse_dims(self.shape, 3)
        if self.crop not in ("", "full"):
            parse_dims(self.crop, 2)

    # -- serialization -------------------------------------------------------
    def to_text(self) -> str:
        lines = [f"# resolved run configuration; noise PRNG: {PRNG_NAME}"]
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {'' if value is None else value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: Dict[str, object]) -> "RunConfig":
        kinds = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(kinds[key], raw)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, overrides: Optional[Dict[str, object]] = None) -> "RunConfig":
        values: Dict[str, object] = dict(parse_kv(Path(path).read_text(encoding="utf-8")))
        values.update(overrides or {})
        return cls.from_mapping(values)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # -- derived -------------------------------------------------------------
    def load_model(self) -> Optional[ModelSpec]:
        return load_model(self.model) if self.model else None

    def stimulus_shape(self, model: Optional[ModelSpec] = None) -> Tuple[int, int, int]:
        if model is not None:
            return tuple(model.input_shape)
        return parse_dims(self.shape, 3)

    def crop_for(self, stim_shape) -> Crop:
        size = None if self.crop in ("", "full") else parse_dims(self.crop, 2)
        return Crop.centered(stim_shape, size)

    def check_memory(self, crop: Crop) -> int:
        need = second_moment_bytes(crop.dim)
        if need > self.memory_budget_mb * 2 ** 20 and not self.force:
            raise ConfigError(f"second moment needs {need / 2 ** 20:.0f} MiB for N={crop.dim}, over "
                              f"the {self.memory_budget_mb:g} MiB budget; pass --force to run anyway")
        return need


def _coerce(f: dataclasses.Field, raw):
    if not isinstance(raw, str):
        return raw
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    raw = raw.strip()
    if "Optional" in kind:
        return raw or None
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off", ""):
            return False
        raise ConfigError(f"{f.name}: not a boolean: {raw!r}")
    try:
        if kind == "int":
            return int(raw.replace("_", ""))
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{f.name}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_dims(text: str, count: int) -> Tuple[int, ...]:
    try:
        dims = tuple(int(t) for t in str(text).lower().replace(",", "x").split("x"))
    except ValueError:
        raise ConfigError(f"cannot parse dimensions {text!r}") from None
    if len(dims) != count or min(dims) < 1:
        raise ConfigError(f"expected {count} positive dimensions, got {text!r}")
    return dims


def parse_synthetic(text: str, shape) -> SyntheticUnitParams:
    """``kind[:key=value,...]`` with keys ori, sf, sigma, c, phase."""
    kind, _, rest = text.partition(":")
    kind = SYNTHETIC_ALIASES.get(kind.strip(), kind.strip())
    if kind not in SYNTHETIC_KINDS:
        raise ConfigError(f"unknown synthetic unit {kind!r}")
    kwargs = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, _, value = item.partition("=")
        if key not in SYNTHETIC_KEYS:
            raise ConfigError(f"unknown synthetic parameter {key!r}")
        try:
            kwargs[SYNTHETIC_KEYS[key]] = float(value)
        except ValueError:
            raise ConfigError(f"synthetic parameter {key}: bad value {value!r}") from None
    return SyntheticUnitParams.preset(kind, tuple(shape), **kwargs)


def probe_layers(model: ModelSpec) -> List[str]:
    """Layers probed by ``--units all``: each conv output, rectified if a ReLU follows."""
    names = []
    for i, layer in enumerate(model.layers):
        if layer.kind != "conv":
            continue
        nxt = model.layers[i + 1] if i + 1 < len(model.layers) else None
        names.append(nxt.name if nxt is not None and nxt.kind == "relu" else layer.name)
    return names


def resolve_units(cfg: RunConfig, model: Optional[ModelSpec] = None) -> List[ResponseFunction]:
    if model is None:
        params = parse_synthetic(cfg.synthetic, cfg.stimulus_shape())
        return [SyntheticUnit(params, f"synthetic_{params.kind}")]
    shapes = dict(zip(model.layer_names, model.output_shapes()))
    picks: List[Tuple[str, int]] = []
    for item in filter(None, (s.strip() for s in cfg.units.split(","))):
        if item == "all":
            for name in probe_layers(model):
                picks += [(name, i) for i in range(shapes[name][2])]
            continue
        layer, _, idx = item.rpartition(":")
        if not layer:
            raise ConfigError(f"unit {item!r} must be 'layer:index', 'layer:all' or 'all'")
        if layer not in shapes:
            raise ConfigError(f"unknown layer {layer!r}")
        if idx == "all":
            picks += [(layer, i) for i in range(shapes[layer][2])]
        else:
            try:
                picks.append((layer, int(idx)))
            except ValueError:
                raise ConfigError(f"bad unit index in {item!r}") from None
    if not picks:
        raise ConfigError("no units selected")
    try:
        return [NetworkProbe(model, layer, i) for layer, i in picks]
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
