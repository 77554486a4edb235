import json

import numpy as np
import pytest

from cnnrf import pipeline
from cnnrf.cli import main
from cnnrf.config import RunConfig, parse_synthetic, resolve_units
from cnnrf.eigen import ConvergenceError
from cnnrf.formats import parse_kv, read_rfb, write_ppm
from cnnrf.netforward import save_model, vgg16_shaped
from cnnrf.stimulus import PRNG_NAME, ConfigError

SMALL = ["--samples", "20000", "--seed", "3"]


def analyze(tmp_path, *extra, name="out"):
    out = tmp_path / name
    code = main(["analyze", *SMALL, "--out", str(out), *extra])
    return code, out


def test_analyze_writes_bank_and_provenance(tmp_path, capsys):
    code, out = analyze(tmp_path, "--synthetic", "linear")
    assert code == 0
    rfb = out / "synthetic_linear_halfrect.rfb1"
    bank, meta = read_rfb(rfb)
    assert bank.shape == (16, 16, 1)
    assert len(bank.filters()) == 20
    assert meta["prng"] == PRNG_NAME and meta["seed"] == 3 and meta["chunk"] == 4096
    assert meta["crop_offset"] == [0, 0] and meta["awc_form"] == "as-written"
    cfg = parse_kv((out / "analyze.config.txt").read_text())
    assert cfg["samples"] == "20000" and cfg["seed"] == "3"
    assert PRNG_NAME in (out / "analyze.config.txt").read_text()
    summary = json.loads((out / "analyze_summary.json").read_text())
    assert summary[0]["status"] == "ok"
    assert "ok" in capsys.readouterr().out


def test_analyze_rerun_byte_identical(tmp_path):
    _, a = analyze(tmp_path, "--synthetic", "energy", name="a")
    _, b = analyze(tmp_path, "--synthetic", "energy", name="b")
    name = "synthetic_energy.rfb1"
    assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / (name + ".json")).read_bytes() == (b / (name + ".json")).read_bytes()


def test_zero_unit_is_weak_response_not_fatal(tmp_path):
    code, out = analyze(tmp_path, "--synthetic", "zero")
    assert code == 0
    summary = json.loads((out / "analyze_summary.json").read_text())
    assert summary == [{"unit_id": "synthetic_zero", "status": "weak_response",
                        "message": summary[0]["message"], "rfb1": None}]
    assert "weak response" in summary[0]["message"]
    assert not list(out.glob("*.rfb1"))


def test_whole_batch_numeric_failure_exits_3(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise ConvergenceError("no convergence")

    monkeypatch.setattr(pipeline, "analyze_accumulator", boom)
    code, _ = analyze(tmp_path, "--synthetic", "linear", "--samples", "100")
    assert code == 3


def test_usage_errors_exit_1(tmp_path, capsys):
    assert main([]) == 1
    assert main(["analyze", "--awc-form", "nonsense"]) == 1
    assert main(["analyze", "--samples", "0", "--out", str(tmp_path)]) == 1
    assert main(["analyze", "--synthetic", "martian", "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err


def test_memory_budget_needs_force(tmp_path):
    code = main(["analyze", "--shape", "64x64x3", "--crop", "full", "--samples", "10",
                 "--out", str(tmp_path / "o")])
    assert code == 1
    cfg = RunConfig(shape="64x64x3", crop="full", samples=10, force=True)
    assert cfg.check_memory(cfg.crop_for((64, 64, 3))) == 8 * 12288 * 12289 // 2


def test_config_file_with_flag_override(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# run\nsynthetic = energy\nsamples = 5000\nseed = 9\nn_exc = 3\n")
    out = tmp_path / "o"
    assert main(["analyze", "--config", str(conf), "--seed", "4", "--out", str(out)]) == 0
    cfg = parse_kv((out / "analyze.config.txt").read_text())
    assert (cfg["synthetic"], cfg["samples"], cfg["seed"], cfg["n_exc"]) == ("energy", "5000", "4", "3")
    assert main(["analyze", "--config", str(tmp_path / "nope.conf")]) == 2


def test_fit_reports_three_r_values(tmp_path, capsys):
    _, out = analyze(tmp_path, "--synthetic", "linear")
    rfb = out / "synthetic_linear_halfrect.rfb1"
    capsys.readouterr()
    assert main(["fit", str(rfb), "--fit-samples", "3000", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "r_noise = " in text and "r_gratings = " in text and "r_natural = not measured" in text
    kv = parse_kv((out / "synthetic_linear_halfrect.full.fit.txt").read_text())
    assert float(kv["r_noise"]) > 0.9
    assert kv["n_train"] == "3000" and kv["n_test"] == "1000"
    assert kv["filter.awa.tag"] == "identity" and kv["filter.exc1.tag"] == "fullwave"
    assert kv["probes_in_sample"] == "False"


def test_fit_chance_and_awa_only(tmp_path):
    _, out = analyze(tmp_path, "--synthetic", "linear")
    rfb = str(out / "synthetic_linear_halfrect.rfb1")
    r = {}
    for mode in ("full", "awa-only", "chance"):
        rep = pipeline.run_fit(RunConfig(bank=mode, fit_samples=3000, out=str(out), seed=7), rfb)
        r[mode] = rep["r_noise"]
        assert (out / f"synthetic_linear_halfrect.{mode}.fit.txt").exists()
    assert r["full"] - r["chance"] >= 0.3
    rep2 = pipeline.run_fit(RunConfig(bank="chance", fit_samples=3000, out=str(out), seed=7), rfb)
    assert rep2["r_noise"] == r["chance"]


def test_fit_missing_rfb_names_path(tmp_path, capsys):
    missing = tmp_path / "absent.rfb1"
    assert main(["fit", str(missing)]) == 2
    assert "absent.rfb1" in capsys.readouterr().err


def make_manifest(tmp_path, rng, labels=("bonsai", "car", "cup", "face", "rooster"), n=8):
    lines = []
    for label in labels:
        for i in range(n):
            p = tmp_path / f"{label}{i}.pgm"
            write_ppm(p, rng.integers(0, 256, size=(24, 24)))
            lines.append(f"{label}\t{p.name}")
    m = tmp_path / "images.tsv"
    m.write_text("\n".join(lines) + "\n")
    return m


def test_tune_outputs(tmp_path, rng, capsys):
    manifest = make_manifest(tmp_path, rng)
    out = tmp_path / "t"
    code = main(["tune", "--synthetic", "energy", "--images", str(manifest), "--bins", "12",
                 "--hist-samples", "2000", "--out", str(out)])
    assert code == 0
    assert "probes=408" in capsys.readouterr().out
    csv = (out / "synthetic_energy.tuning.csv").read_text().strip().split("\n")
    assert csv[0] == "orientation_deg,sf_cpi,response" and len(csv) == 103
    hist = (out / "synthetic_energy.hist.csv").read_text().strip().split("\n")
    assert len(hist) - 1 == 12
    rep = parse_kv((out / "synthetic_energy.category.txt").read_text())
    assert len([k for k in rep if k.startswith("mean.")]) == 5
    assert {"F", "p", "significant", "m"} <= set(rep)
    assert rep["m"] == "1"
    assert (out / "tune.config.txt").exists()


def test_tune_bad_manifest_exits_2(tmp_path):
    m = tmp_path / "m.tsv"
    m.write_text("a\tmissing.pgm\n")
    assert main(["tune", "--images", str(m), "--out", str(tmp_path / "o")]) == 2


def test_fit_with_images_and_probes(tmp_path, rng):
    manifest = make_manifest(tmp_path, rng, n=3)
    _, out = analyze(tmp_path, "--synthetic", "linear")
    rfb = str(out / "synthetic_linear_halfrect.rfb1")
    rep = pipeline.run_fit(RunConfig(fit_samples=2000, images=str(manifest), fit_on="both",
                                     out=str(out)), rfb)
    assert isinstance(rep["r_natural"], float)
    assert rep["probes_in_sample"] is True
    assert rep["n_train"] == 2000 + 408 + 15


def test_export_images(tmp_path):
    _, out = analyze(tmp_path, "--synthetic", "linear")
    rfb = out / "synthetic_linear_halfrect.rfb1"
    exp = tmp_path / "exp"
    assert main(["export", str(rfb), str(exp)]) == 0
    pgms = sorted(exp.glob("*.pgm"))
    assert len(pgms) == 20
    ranges = json.loads((exp / "synthetic_linear_halfrect.export.json").read_text())
    assert ranges["synthetic_linear_halfrect_awa_c0.pgm"]["role"] == "excitatory"
    assert main(["export", str(tmp_path / "none.rfb1"), str(exp)]) == 2


def test_export_three_channels(tmp_path):
    code, out = analyze(tmp_path, "--synthetic", "linear", "--shape", "8x8x3", "--crop", "8x8",
                        "--n-exc", "1", "--n-sup", "1")
    assert code == 0
    exp = tmp_path / "exp"
    main(["export", str(out / "synthetic_linear_halfrect.rfb1"), str(exp)])
    names = sorted(p.name for p in exp.glob("*awa*.pgm"))
    assert names == [f"synthetic_linear_halfrect_awa_c{c}.pgm" for c in range(3)]
    for n in names:
        assert (exp / n).read_bytes().startswith(b"P5\n8 8\n255\n")


def test_model_units_end_to_end(tmp_path):
    model = vgg16_shaped((16, 16, 1), width_scale=1 / 32, seed=2)
    path = tmp_path / "m.nnf1"
    save_model(model, path)
    out = tmp_path / "o"
    code = main(["analyze", "--model", str(path), "--units", "block1_conv1:0,block1_conv2:1",
                 "--samples", "3000", "--crop", "8x8", "--out", str(out)])
    assert code == 0
    files = sorted(p.name for p in out.glob("*.rfb1"))
    assert files == ["block1_conv1_0.rfb1", "block1_conv2_1.rfb1"]
    bank, meta = read_rfb(out / "block1_conv1_0.rfb1")
    assert meta["layer"] == "block1_conv1" and meta["unit_index"] == 0
    assert meta["crop_offset"] == [4, 4] and bank.shape == (8, 8, 1)
    # fit rebuilds the probe from the sidecar alone
    rep = pipeline.run_fit(RunConfig(fit_samples=1000, out=str(out)), out / "block1_conv1_0.rfb1")
    assert isinstance(rep["r_noise"], (float, str))
    assert main(["analyze", "--model", str(path), "--units", "nolayer:0", "--out", str(out)]) == 1


def test_units_all_expands_to_rectified_conv_outputs():
    model = vgg16_shaped((16, 16, 1), width_scale=1 / 64, with_weights=False)
    units = resolve_units(RunConfig(), model)
    assert len(units) == sum(c.out_channels for c in model.conv_layers())
    assert units[0].unit_id == "block1_conv1:0"


def test_parse_synthetic_options():
    p = parse_synthetic("energy:ori=60,sf=3,sigma=2", (16, 16, 1))
    assert p.filters[0].orientation_deg == 60 and p.filters[0].spatial_freq == 3
    with pytest.raises(ConfigError):
        parse_synthetic("energy:bogus=1", (16, 16, 1))
