"""On-disk formats: RFB1 filter banks (+ JSON sidecar), P5 graymaps, key = value text."""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .revcorr import AWC_FORMS, AwaFilter, SubFilterBank

RFB_MAGIC = b"RFB1"
RFB_VERSION = 1


class FormatError(IOError):
    pass


def sidecar_path(rfb_path) -> Path:
    p = Path(rfb_path)
    return p.with_name(p.name + ".json")


def encode_rfb(bank: SubFilterBank, n_samples: int, awc_form: str) -> bytes:
    h, w, c = bank.shape
    out = bytearray(RFB_MAGIC)
    out += struct.pack("<I3IQB", RFB_VERSION, h, w, c, int(n_samples), AWC_FORMS.index(awc_form))
    out += np.asarray(bank.awa.values, dtype="<f4").tobytes()
    stored = bank.excitatory + bank.suppressive
    out += struct.pack("<I", len(stored))
    for vec, lam in stored:
        out += struct.pack("<d", lam)
        out += np.asarray(vec, dtype="<f4").tobytes()
    return bytes(out)


def write_rfb(path, bank: SubFilterBank, n_samples: int, awc_form: str, meta: Dict) -> None:
    """Write ``path`` (binary) and its ``path.json`` sidecar."""
    Path(path).write_bytes(encode_rfb(bank, n_samples, awc_form))
    side = dict(meta)
    side.update(n_excitatory=len(bank.excitatory), n_suppressive=len(bank.suppressive),
                mean_eigenvalue=bank.mean_eigenvalue, awc_form=awc_form,
                n_samples=int(n_samples), crop_shape=list(bank.shape))
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")


def read_rfb(path) -> Tuple[SubFilterBank, Dict]:
    """Load a bank; the excitatory/suppressive split comes from the sidecar."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror or exc})") from None
    head = struct.calcsize("<4sI3IQB")
    if len(buf) < head or buf[:4] != RFB_MAGIC:
        raise FormatError(f"{path}: not an RFB1 file")
    _, version, h, w, c, n_samples, form = struct.unpack_from("<4sI3IQB", buf, 0)
    if version != RFB_VERSION or form >= len(AWC_FORMS):
        raise FormatError(f"{path}: unsupported version {version} / form {form}")
    N = h * w * c
    pos = head
    try:
        awa = np.frombuffer(buf, "<f4", N, pos).astype(np.float64)
        pos += 4 * N
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        stored = []
        for _ in range(count):
            (lam,) = struct.unpack_from("<d", buf, pos)
            vec = np.frombuffer(buf, "<f4", N, pos + 8).astype(np.float64)
            pos += 8 + 4 * N
            stored.append((vec, lam))
    except (ValueError, struct.error):
        raise FormatError(f"{path}: truncated RFB1 file") from None
    try:
        meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise FormatError(f"{sidecar_path(path)}: cannot read sidecar ({exc})") from None
    n_exc = int(meta.get("n_excitatory", count))
    if not 0 <= n_exc <= count:
        raise FormatError(f"{path}: sidecar n_excitatory={n_exc} but {count} filters stored")
    meta.update(n_samples=n_samples, awc_form=AWC_FORMS[form])
    awa_f = AwaFilter(awa, (h, w, c), int(n_samples), meta.get("unit_id", ""), meta.get("seed"))
    bank = SubFilterBank(awa_f, stored[:n_exc], stored[n_exc:],
                         float(meta.get("mean_eigenvalue", float("nan"))))
    return bank, meta


def encode_pgm(img: np.ndarray) -> Tuple[bytes, float, float]:
    """Linearly map to 0..255 P5; a constant image becomes mid-gray (128)."""
    a = np.asarray(img, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    if hi > lo:
        px = np.rint((a - lo) / (hi - lo) * 255.0)
    else:
        px = np.full(a.shape, 128.0)
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii")
    return header + px.astype(np.uint8).tobytes(), lo, hi


def write_pgm(path, img: np.ndarray) -> Tuple[float, float]:
    data, lo, hi = encode_pgm(img)
    Path(path).write_bytes(data)
    return lo, hi


def write_ppm(path, img: np.ndarray) -> None:
    """Write an 8-bit P5/P6 raster from values already in 0..255."""
    a = np.clip(np.rint(np.asarray(img, dtype=np.float64)), 0, 255).astype(np.uint8)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    magic = "P5" if a.ndim == 2 else "P6"
    Path(path).write_bytes(f"{magic}\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii") + a.tobytes())


def format_kv(items: Dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def parse_kv(text: str) -> Dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
