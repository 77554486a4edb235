import numpy as np
import pytest
from hypothesis import given, strategies as st

from cnnrf.lnmodel import (FitError, LnFit, RegressorMatrix, UndefinedCorrelationError, build_regressors,
                           chance_level_fit, export_fit, fit_and_score, fit_ln, pearson_r, predict,
                           random_bank, signals, split_index)
from cnnrf.formats import parse_kv
from cnnrf.revcorr import AwaFilter, ShapeMismatch, SubFilterBank
from conftest import SHAPE, fit_set, pipeline_run


def make_bank(awa, exc=(), sup=(), shape=None):
    awa = np.asarray(awa, float).ravel()
    shape = shape or (1, awa.size, 1)
    return SubFilterBank(AwaFilter(awa, shape), [(np.asarray(v, float).ravel(), 1.0) for v in exc],
                         [(np.asarray(v, float).ravel(), -1.0) for v in sup], 0.0)


def ceiling_r(stimuli, responses, filters, nonlinearity):
    """Held-out r of the cascade built on known filters, solved with lstsq."""
    p = stimuli.reshape(len(stimuli), -1) @ np.asarray(filters).T
    reg = np.abs(p) if nonlinearity == "fullwave" else p * p
    A = np.hstack([np.ones((len(p), 1)), reg])
    tr, te = split_index(len(p))
    w = np.linalg.lstsq(A[tr], responses[tr], rcond=None)[0]
    return pearson_r(responses[te], A[te] @ w)


# -- signals / regressors --------------------------------------------------------------

def test_signal_examples():
    g = np.array([0.6, 0.8])
    assert signals(make_bank(g), g)[0, 0] == pytest.approx(1.0)
    assert signals(make_bank(g), np.array([0.8, -0.6]))[0, 0] == pytest.approx(0.0)
    assert signals(make_bank([1.0, 2.0]), np.array([3.0, -1.0]))[0, 0] == pytest.approx(1.0)


def test_signals_are_per_channel():
    bank = make_bank(np.ones(3), shape=(1, 1, 3))
    sig = signals(bank, np.array([-2.0, 1.0, -1.0]).reshape(1, 1, 3))
    assert sig.shape == (1, 3)
    assert sig[0].tolist() == [-2.0, 1.0, -1.0]


def test_regressors_identity_and_fullwave():
    bank = make_bank(np.ones(3), exc=[np.ones(3)], shape=(1, 1, 3))
    X = build_regressors(bank, np.array([-2.0, 1.0, -1.0]).reshape(1, 1, 1, 3))
    assert X.values[0].tolist() == [1.0, -2.0, 4.0]
    assert X.tags == ["identity", "fullwave"]
    Xs = build_regressors(bank, np.array([-2.0, 1.0, -1.0]).reshape(1, 1, 1, 3), awc_nonlinearity="square")
    assert Xs.values[0].tolist() == [1.0, -2.0, 6.0]


def test_zero_stimulus_row():
    bank = random_bank(SHAPE, 3, 2, seed=1)
    X = build_regressors(bank, np.zeros((1, *SHAPE)))
    assert X.values[0].tolist() == [1.0] + [0.0] * 6


def test_regressor_shape_mismatch():
    bank = random_bank((4, 4, 1), 1, 1)
    with pytest.raises(ShapeMismatch):
        build_regressors(bank, np.zeros((2, 4, 4, 3)))


def test_awa_only_mode_has_one_filter():
    bank = random_bank(SHAPE, 9, 10, seed=2)
    X = build_regressors(bank, np.zeros((1, *SHAPE)), mode="awa-only")
    assert X.filter_ids == ["awa"] and X.values.shape == (1, 2)
    assert build_regressors(bank, np.zeros((1, *SHAPE))).values.shape == (1, 21)


# -- fit_ln -------------------------------------------------------------------------------

def regressors(values):
    values = np.asarray(values, float)
    k = values.shape[1] - 1
    return RegressorMatrix(values, [f"f{i}" for i in range(k)], ["fullwave"] * k, ["excitatory"] * k)


def test_fit_recovers_exact_model(rng):
    A = np.hstack([np.ones((200, 1)), rng.normal(size=(200, 5))])
    coef = np.array([0.7, 1.5, -2.0, 0.0, 3.25, -0.5])
    fit = fit_ln(regressors(A), A @ coef)
    assert fit.alpha == pytest.approx(0.7, rel=1e-6)
    assert np.max(np.abs(fit.weights - coef[1:])) <= 1e-6 * np.max(np.abs(coef))


def test_fit_constant_response(rng):
    A = np.hstack([np.ones((100, 1)), rng.normal(size=(100, 4))])
    fit = fit_ln(regressors(A), np.full(100, 2.5))
    assert fit.alpha == pytest.approx(2.5, rel=1e-6)
    assert np.max(np.abs(fit.weights)) <= 1e-6


@given(st.integers(0, 2 ** 31))
def test_residual_orthogonal_to_columns(seed):
    rng = np.random.default_rng(seed)
    A = np.hstack([np.ones((60, 1)), rng.normal(size=(60, 4))])
    y = rng.normal(size=60)
    fit = fit_ln(regressors(A), y)
    resid = y - (fit.alpha + A[:, 1:] @ fit.weights)
    scale = np.linalg.norm(A, axis=0) * np.linalg.norm(y)
    assert np.all(np.abs(A.T @ resid) <= 1e-6 * scale)


def test_fit_errors(rng):
    A = np.hstack([np.ones((3, 1)), rng.normal(size=(3, 4))])
    with pytest.raises(FitError):
        fit_ln(regressors(A), np.zeros(3))
    with pytest.raises(FitError):
        fit_ln(regressors(np.hstack([np.ones((5, 1)), np.eye(5)[:, :2]])), np.array([1, 2, np.nan, 0, 1.0]))


def test_ridge_rescues_collinear_columns(rng):
    col = rng.normal(size=(50, 1))
    B = np.hstack([np.ones((50, 1)), col, col, np.zeros((50, 1))])
    fit = fit_ln(regressors(B), 3 * col[:, 0] + 1)
    assert np.all(np.isfinite(fit.weights))
    assert fit.weights[0] + fit.weights[1] == pytest.approx(3.0, rel=1e-6)
    assert fit.weights[2] == 0.0


def test_beta_gamma_readout():
    A = np.eye(4)
    fit = fit_ln(regressors(np.hstack([np.ones((4, 1)), A[:, :3]])), np.array([0.0, 2.0, -1.0, 0.5]))
    assert fit.beta == pytest.approx(np.sum(np.maximum(fit.weights, 0)))
    assert fit.gamma == pytest.approx(np.sum(np.maximum(-fit.weights, 0)))


# -- predict ------------------------------------------------------------------------------

def test_predict_zero_stimulus_is_alpha(rng):
    bank = random_bank(SHAPE, 2, 2, seed=3)
    s = rng.normal(size=(50, *SHAPE))
    fit = fit_ln(build_regressors(bank, s), rng.normal(size=50))
    assert predict(fit, bank, np.zeros(SHAPE)) == pytest.approx(fit.alpha, abs=1e-15)


def test_predict_pure_linear():
    k = np.array([0.5, -1.0, 2.0])
    bank = make_bank(k)
    fit = LnFit(0.0, np.array([1.0]), ["awa"], ["identity"], ["excitatory"])
    s = np.array([1.0, 2.0, -3.0]).reshape(1, 3, 1)
    assert predict(fit, bank, s) == pytest.approx(k @ s.ravel(), abs=1e-12)


@given(st.floats(0.01, 100), st.integers(0, 2 ** 31))
def test_predict_homogeneous(a, seed):
    rng = np.random.default_rng(seed)
    bank = random_bank((4, 4, 2), 2, 2, seed=seed)
    s = rng.normal(size=(40, 4, 4, 2))
    fit = fit_ln(build_regressors(bank, s), rng.normal(size=40))
    x = s[0]
    lhs = predict(fit, bank, a * x) - fit.alpha
    rhs = a * (predict(fit, bank, x) - fit.alpha)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


# -- pearson_r ----------------------------------------------------------------------------

def test_pearson_examples():
    x = np.array([1.0, 4.0, 2.0, 8.0])
    assert pearson_r(x, x) == pytest.approx(1.0)
    assert pearson_r(x, -x + 5) == pytest.approx(-1.0)
    assert pearson_r([1, 2, 3], [1, 2, 2]) == pytest.approx(0.866, abs=1e-3)


def test_pearson_constant_and_shape():
    with pytest.raises(UndefinedCorrelationError):
        pearson_r([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(UndefinedCorrelationError):
        pearson_r([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
    with pytest.raises(ShapeMismatch):
        pearson_r([1.0], [1.0])


@given(st.floats(0.01, 100), st.floats(-100, 100), st.integers(0, 2 ** 31))
def test_pearson_positive_affine_invariance(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 30))
    assert pearson_r(a * x + b, y) == pytest.approx(pearson_r(x, y), abs=1e-12)
    assert pearson_r(x, a * y + b) == pytest.approx(pearson_r(x, y), abs=1e-12)


# -- pipeline fits on synthetic units -----------------------------------------------------

def test_split_is_75_25():
    tr, te = split_index(13_333)
    assert (tr.stop, te.stop - te.start) == (10_000, 3_333)


@pytest.mark.parametrize("kind", ["linear_halfrect", "energy", "suppressed_energy"])
def test_awc_bank_not_worse_than_awa(kind):
    bank = pipeline_run(kind).bank
    s, r = fit_set(kind)
    _, r_full = fit_and_score(bank, s, r, "full")
    _, r_awa = fit_and_score(bank, s, r, "awa-only")
    assert r_full >= r_awa - 0.02


def test_energy_unit_awa_fails_awc_succeeds():
    bank = pipeline_run("energy").bank
    s, r = fit_set("energy")
    assert fit_and_score(bank, s, r, "awa-only")[1] <= 0.2
    assert fit_and_score(bank, s, r, "full")[1] >= 0.8


def test_energy_fullwave_reaches_true_filter_ceiling():
    run = pipeline_run("energy")
    s, r = fit_set("energy")
    ceiling = ceiling_r(s, r, run.unit.k, "fullwave")
    assert 0.93 <= ceiling <= 0.945  # |k1.s| + |k2.s| cannot express k1.s^2 + k2.s^2
    assert fit_and_score(run.bank, s, r, "full", "fullwave")[1] >= ceiling - 0.02


def test_energy_square_nonlinearity():
    run = pipeline_run("energy")
    s, r = fit_set("energy")
    assert ceiling_r(s, r, run.unit.k, "square") == pytest.approx(1.0, abs=1e-9)
    assert fit_and_score(run.bank, s, r, "full", "square")[1] >= 0.99


def test_chance_level_below_true_bank():
    bank = pipeline_run("linear_halfrect").bank
    s, r = fit_set("linear_halfrect")
    _, r_true = fit_and_score(bank, s, r, "full")
    _, r_chance = chance_level_fit(s, r, bank, seed=11)
    assert r_true - r_chance >= 0.3


def test_chance_level_deterministic():
    s, r = fit_set("linear_halfrect")
    spec = (SHAPE, 9, 10)
    assert chance_level_fit(s, r, spec, seed=4)[1] == chance_level_fit(s, r, spec, seed=4)[1]
    a, b = random_bank(SHAPE, seed=4), random_bank(SHAPE, seed=5)
    assert not np.array_equal(a.matrix(), b.matrix())
    assert np.allclose(np.linalg.norm(a.matrix(), axis=1), 1.0)


def test_zero_unit_correlation_undefined():
    s, r = fit_set("zero", n_train=200)
    with pytest.raises(UndefinedCorrelationError):
        chance_level_fit(s, r, (SHAPE, 9, 10), seed=0)


def test_export_fit_key_values(rng):
    bank = random_bank(SHAPE, 1, 1, seed=0)
    s = rng.normal(size=(30, *SHAPE))
    fit = fit_ln(build_regressors(bank, s), rng.normal(size=30))
    kv = parse_kv(export_fit(fit, seed=3, n_train=30))
    assert float(kv["alpha"]) == fit.alpha
    assert kv["filter.awa.tag"] == "identity"
    assert kv["filter.sup1.role"] == "suppressive"
    assert float(kv["filter.exc1.weight"]) == fit.weights[1]
    assert kv["seed"] == "3"
