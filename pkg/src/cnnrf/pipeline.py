"""Batch drivers behind the CLI: analyze, fit, tune, export."""
from __future__ import annotations

import json
import logging
import re
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import formats, lnmodel, tuning
from .config import RunConfig, resolve_units
from .eigen import ConvergenceError
from .netforward import ResponseFunction
from .revcorr import (Crop, RevCorrAccumulator, WeakResponseError, analyze_accumulator, merge)
from .stimulus import (PRNG_NAME, NoiseSpec, grating_battery, load_image_set, noise_array,
                       noise_chunk)

log = logging.getLogger("cnnrf")

NOISE_STREAM, FIT_STREAM, HIST_STREAM = 0, 1, 2


def safe_name(unit_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", unit_id)


def accumulate_stream(unit: ResponseFunction, spec: NoiseSpec, crop: Crop, form: str,
                      threads: int = 1) -> RevCorrAccumulator:
    """Reduce the noise stream chunk by chunk; merge order is always chunk order.

    BLAS is pinned to one thread so every chunk's sums are computed the same
    way regardless of the worker count.
    """

    def work(index: int) -> RevCorrAccumulator:
        block = noise_chunk(spec, index)
        return RevCorrAccumulator(crop, form).accumulate_batch(block, unit.batch(block))

    total = RevCorrAccumulator(crop, form)
    with threadpool_limits(limits=1):
        if threads <= 1:
            for i in range(spec.n_chunks):
                total = merge(total, work(i))
            return total
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pending = deque()
            for i in range(spec.n_chunks):
                pending.append(pool.submit(work, i))
                if len(pending) >= 2 * threads:
                    total = merge(total, pending.popleft().result())
            while pending:
                total = merge(total, pending.popleft().result())
    return total


@dataclass
class UnitResult:
    unit_id: str
    status: str                      # ok | weak_response | error
    message: str = ""
    rfb_path: Optional[str] = None
    extra: Dict = field(default_factory=dict)


def write_run_header(cfg: RunConfig, out: Path, command: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{command}.config.txt").write_text(cfg.to_text(), encoding="utf-8")


def unit_source(cfg: RunConfig) -> Dict:
    if cfg.model:
        return {"model": cfg.model}
    return {"synthetic": cfg.synthetic, "shape": cfg.shape}


def run_analyze(cfg: RunConfig) -> List[UnitResult]:
    out = Path(cfg.out)
    model = cfg.load_model()
    stim_shape = cfg.stimulus_shape(model)
    crop = cfg.crop_for(stim_shape)
    cfg.check_memory(crop)
    units = resolve_units(cfg, model)
    write_run_header(cfg, out, "analyze")
    spec = NoiseSpec(cfg.seed, cfg.samples, stim_shape, stream=NOISE_STREAM, chunk=cfg.chunk)
    results = []
    for unit in units:
        name = safe_name(unit.unit_id)
        log.info("analyze %s: %d samples, crop %s", unit.unit_id, cfg.samples, crop.shape)
        acc = accumulate_stream(unit, spec, crop, cfg.awc_form, cfg.threads)
        try:
            awa, _, dec, bank = analyze_accumulator(acc, cfg.n_exc, cfg.n_sup, unit.unit_id, cfg.seed)
        except WeakResponseError as exc:
            log.warning("%s: %s", unit.unit_id, exc)
            results.append(UnitResult(unit.unit_id, "weak_response", str(exc)))
            continue
        except (ConvergenceError, ArithmeticError, ValueError) as exc:
            log.error("%s: %s", unit.unit_id, exc)
            results.append(UnitResult(unit.unit_id, "error", str(exc)))
            continue
        path = out / f"{name}.rfb1"
        meta = {"unit_id": unit.unit_id, "seed": cfg.seed, "prng": PRNG_NAME, "chunk": cfg.chunk,
                "noise_stream": NOISE_STREAM, "stimulus_shape": list(stim_shape),
                "crop_offset": [crop.top, crop.left], "jacobi_sweeps": dec.sweeps,
                "flags": bank.flags, **unit_source(cfg)}
        if cfg.model:
            meta.update(layer=unit.layer_name, unit_index=unit.unit_index)
        formats.write_rfb(path, bank, acc.n, cfg.awc_form, meta)
        results.append(UnitResult(unit.unit_id, "ok", rfb_path=str(path),
                                  extra={"awa_norm": float(np.linalg.norm(awa.values)),
                                         "top_eigenvalue": float(dec.eigenvalues[0]),
                                         "mean_eigenvalue": dec.mean_eigenvalue}))
    write_summary(out / "analyze_summary.json", results)
    return results


def write_summary(path: Path, results: List[UnitResult]) -> None:
    body = [{"unit_id": r.unit_id, "status": r.status, "message": r.message,
             "rfb1": r.rfb_path, **r.extra} for r in results]
    path.write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")


# -- fit -------------------------------------------------------------------------

def unit_from_meta(cfg: RunConfig, meta: Dict) -> ResponseFunction:
    """Rebuild the response function an RFB1 file was estimated from."""
    if "model" in meta:
        src = cfg.replace(model=meta["model"], units=f"{meta['layer']}:{meta['unit_index']}")
    else:
        src = cfg.replace(model=None, synthetic=meta.get("synthetic", cfg.synthetic),
                          shape=meta.get("shape", cfg.shape))
    return resolve_units(src, src.load_model())[0]


def _score(fit, bank, stimuli, responses, mode, nl, crop):
    try:
        X = lnmodel.build_regressors(bank, stimuli, crop, mode, nl)
        return lnmodel.pearson_r(responses, fit.predict_regressors(X))
    except lnmodel.UndefinedCorrelationError as exc:
        return f"undefined ({exc})"


def run_fit(cfg: RunConfig, rfb_path) -> Dict:
    bank, meta = formats.read_rfb(rfb_path)
    unit = unit_from_meta(cfg, meta)
    stim_shape = tuple(meta["stimulus_shape"])
    crop = Crop(*meta["crop_offset"], *bank.shape)
    mode, nl = cfg.bank, cfg.nonlinearity
    if mode == "chance":
        bank = lnmodel.random_bank(bank.shape, len(bank.excitatory), len(bank.suppressive), cfg.seed)

    n_test = max(2, cfg.fit_samples // 3)
    noise = noise_array(NoiseSpec(cfg.seed, cfg.fit_samples + n_test, stim_shape,
                                  stream=FIT_STREAM, chunk=cfg.chunk))
    r_noise = unit.batch(noise)
    gratings = np.stack([img for _, img in grating_battery(*stim_shape)])
    r_grat = unit.batch(gratings)
    natural = r_nat = None
    if cfg.images:
        image_set = load_image_set(cfg.images, stim_shape)
        natural = np.stack([im for _, ims in image_set.categories for im in ims])
        r_nat = unit.batch(natural)

    train_x, train_y = [], []
    if cfg.fit_on in ("noise", "both"):
        train_x.append(noise[:cfg.fit_samples])
        train_y.append(r_noise[:cfg.fit_samples])
    if cfg.fit_on in ("probes", "both"):
        train_x.append(gratings)
        train_y.append(r_grat)
        if natural is not None:
            train_x.append(natural)
            train_y.append(r_nat)
    X = lnmodel.build_regressors(bank, np.concatenate(train_x), crop, mode, nl)
    fit = lnmodel.fit_ln(X, np.concatenate(train_y))

    report = {
        "unit_id": meta.get("unit_id", unit.unit_id), "bank": mode, "nonlinearity": nl,
        "fit_on": cfg.fit_on, "seed": cfg.seed, "n_train": X.values.shape[0], "n_test": n_test,
        "r_noise": _score(fit, bank, noise[cfg.fit_samples:], r_noise[cfg.fit_samples:], mode, nl, crop),
        "r_gratings": _score(fit, bank, gratings, r_grat, mode, nl, crop),
        "r_natural": (_score(fit, bank, natural, r_nat, mode, nl, crop)
                      if natural is not None else "not measured (no --images)"),
        "probes_in_sample": cfg.fit_on != "noise",
    }
    out = Path(cfg.out)
    write_run_header(cfg, out, "fit")
    name = safe_name(report["unit_id"])
    text = lnmodel.export_fit(fit, **report)
    (out / f"{name}.{mode}.fit.txt").write_text(text, encoding="utf-8")
    report["fit"] = fit
    return report


# -- tune ------------------------------------------------------------------------

def run_tune(cfg: RunConfig) -> List[Dict]:
    out = Path(cfg.out)
    model = cfg.load_model()
    stim_shape = cfg.stimulus_shape(model)
    units = resolve_units(cfg, model)
    image_set = load_image_set(cfg.images, stim_shape) if cfg.images else None
    write_run_header(cfg, out, "tune")
    battery = grating_battery(*stim_shape)
    hist_spec = NoiseSpec(cfg.seed, cfg.hist_samples, stim_shape, stream=HIST_STREAM, chunk=cfg.chunk)
    m = len(units)
    rows = []
    for unit in units:
        name = safe_name(unit.unit_id)
        tmap = tuning.orientation_sf_map(unit, battery, cfg.rectify)
        (out / f"{name}.tuning.csv").write_text(tuning.tuning_csv(tmap), encoding="utf-8")
        hist = tuning.response_distribution(unit, hist_spec, cfg.bins)
        (out / f"{name}.hist.csv").write_text(hist.csv(), encoding="utf-8")
        row = {"unit_id": unit.unit_id, "probe_calls": len(battery),
               "preferred": tmap.preferred(), "fraction_zero": hist.fraction_zero}
        if image_set is not None:
            groups = tuning.category_responses(unit, image_set)
            try:
                stats = tuning.category_selectivity(groups, m=m, alpha=cfg.alpha)
                text = stats.report(unit.unit_id)
                row["significant"] = stats.significant
            except (tuning.DegenerateVarianceError, tuning.GroupShapeError) as exc:
                text = f"unit = {unit.unit_id}\nerror = {exc}\nm = {m}\n"
                row["significant"] = None
            (out / f"{name}.category.txt").write_text(text, encoding="utf-8")
        rows.append(row)
    return rows


# -- export ----------------------------------------------------------------------

def run_export(rfb_path, out_dir) -> Dict[str, Dict]:
    bank, meta = formats.read_rfb(rfb_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(rfb_path).name
    stem = stem[:-5] if stem.endswith(".rfb1") else stem
    h, w, c = bank.shape
    ranges = {}
    for fid, vec, role in bank.filters():
        img = vec.reshape(h, w, c)
        for ch in range(c):
            fname = f"{stem}_{fid}_c{ch}.pgm"
            lo, hi = formats.write_pgm(out / fname, img[:, :, ch])
            ranges[fname] = {"filter": fid, "role": role, "channel": ch, "min": lo, "max": hi}
    (out / f"{stem}.export.json").write_text(json.dumps(ranges, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")
    return ranges
