"""Linear-nonlinear cascade on a recovered filter bank.

Every filter's per-channel signal passes through a static nonlinearity
(identity for the AWA, full-wave rectification for AWC sub-filters), the
channels are summed into one regressor per filter, and the response is
modelled as ``alpha + sum_m w_m * regressor_m``.  The global excitatory and
suppressive gains of the cascade are absorbed into the signed per-filter
weights and are read back out as ``beta`` / ``gamma``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .revcorr import AwaFilter, Crop, ShapeMismatch, SubFilterBank

NONLINEARITIES = ("identity", "fullwave", "square")
BANK_MODES = ("full", "awa-only", "chance")
RIDGE = 1e-8
MAX_CONDITION = 1e13


class FitError(ArithmeticError):
    pass


class UndefinedCorrelationError(ArithmeticError):
    pass


@dataclass
class RegressorMatrix:
    values: np.ndarray               # (n_stimuli, 1 + n_filters); column 0 is the intercept
    filter_ids: List[str]
    tags: List[str]
    roles: List[str]

    @property
    def n_filters(self) -> int:
        return self.values.shape[1] - 1

    def rows(self, index) -> "RegressorMatrix":
        return RegressorMatrix(self.values[index], self.filter_ids, self.tags, self.roles)


@dataclass
class LnFit:
    alpha: float
    weights: np.ndarray
    filter_ids: List[str]
    tags: List[str]
    roles: List[str]
    residual_norm: float = float("nan")
    condition: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def beta(self) -> float:
        return float(np.sum(np.maximum(self.weights, 0.0)))

    @property
    def gamma(self) -> float:
        return float(np.sum(np.maximum(-self.weights, 0.0)))

    @property
    def suppressive_positive(self) -> List[str]:
        """Suppressive filters that ended up with a positive weight."""
        return [fid for fid, role, w in zip(self.filter_ids, self.roles, self.weights)
                if role == "suppressive" and w > 0]

    def predict_regressors(self, X: RegressorMatrix) -> np.ndarray:
        if X.n_filters != self.weights.shape[0]:
            raise ShapeMismatch(f"fit has {self.weights.shape[0]} weights, regressors {X.n_filters}")
        return self.alpha + X.values[:, 1:] @ self.weights


# -- signals and regressors -----------------------------------------------------

def bank_filters(bank: SubFilterBank, mode: str = "full",
                 awc_nonlinearity: str = "fullwave") -> Tuple[List[str], np.ndarray, List[str], List[str]]:
    """(ids, filter matrix, nonlinearity tags, roles) for a bank mode."""
    if awc_nonlinearity not in ("fullwave", "square"):
        raise ValueError(f"AWC nonlinearity must be fullwave or square, not {awc_nonlinearity!r}")
    entries = bank.filters()
    if mode == "awa-only":
        entries = entries[:1]
    elif mode not in ("full", "chance"):
        raise ValueError(f"unknown bank mode {mode!r}")
    ids = [e[0] for e in entries]
    mat = np.stack([e[1] for e in entries])
    tags = ["identity" if fid == "awa" else awc_nonlinearity for fid in ids]
    roles = [e[2] for e in entries]
    return ids, mat, tags, roles


def _crop_for(bank: SubFilterBank, stimuli: np.ndarray, crop: Optional[Crop]) -> np.ndarray:
    s = np.asarray(stimuli, dtype=np.float64)
    if crop is None:
        crop = Crop.centered(s.shape[-3:], bank.shape[:2])
    if crop.shape != tuple(bank.shape):
        raise ShapeMismatch(f"crop {crop.shape} does not match bank shape {bank.shape}")
    return crop.apply(s)


def signals(bank: SubFilterBank, stimulus: np.ndarray, crop: Optional[Crop] = None,
            mode: str = "full") -> np.ndarray:
    """Per-filter, per-channel inner products: array (n_filters, channels)."""
    s = np.asarray(stimulus, dtype=np.float64)
    if s.ndim == 1:
        if s.shape[0] != int(np.prod(bank.shape)):
            raise ShapeMismatch("flat stimulus length does not match the bank")
        flat = s
    else:
        flat = _crop_for(bank, s, crop)
    _, mat, _, _ = bank_filters(bank, mode)
    c = bank.shape[2]
    return np.einsum("mpc,pc->mc", mat.reshape(mat.shape[0], -1, c), flat.reshape(-1, c))


def transform(sig: np.ndarray, tags: Sequence[str]) -> np.ndarray:
    """Apply each filter's nonlinearity along axis -2 (filters) and sum channels."""
    out = np.empty(sig.shape[:-1])
    for m, tag in enumerate(tags):
        x = sig[..., m, :]
        if tag == "identity":
            y = x
        elif tag == "fullwave":
            y = np.abs(x)
        elif tag == "square":
            y = x * x
        else:
            raise ValueError(f"unknown nonlinearity {tag!r}")
        out[..., m] = y.sum(axis=-1)
    return out


def build_regressors(bank: SubFilterBank, stimuli: np.ndarray, crop: Optional[Crop] = None,
                     mode: str = "full", awc_nonlinearity: str = "fullwave") -> RegressorMatrix:
    """Regressor rows for a stack of stimuli (n, H, W, C), intercept first."""
    ids, mat, tags, roles = bank_filters(bank, mode, awc_nonlinearity)
    flat = _crop_for(bank, stimuli, crop)
    c = bank.shape[2]
    sig = np.einsum("mpc,npc->nmc", mat.reshape(mat.shape[0], -1, c),
                    flat.reshape(flat.shape[0], -1, c), optimize=True)
    reg = transform(sig, tags)
    X = np.hstack([np.ones((reg.shape[0], 1)), reg])
    if not np.all(np.isfinite(X)):
        raise FitError("non-finite regressors")
    return RegressorMatrix(X, ids, tags, roles)


# -- fitting -----------------------------------------------------------------------

def fit_ln(X: RegressorMatrix, responses: np.ndarray) -> LnFit:
    """Least squares with a tiny relative ridge, via the normal equations."""
    A = X.values
    y = np.asarray(responses, dtype=np.float64).reshape(-1)
    n, cols = A.shape
    if y.shape[0] != n:
        raise ShapeMismatch(f"{n} regressor rows but {y.shape[0]} responses")
    if n < cols:
        raise FitError(f"need at least {cols} samples to fit {cols} parameters, got {n}")
    if not np.all(np.isfinite(y)):
        raise FitError("responses must be finite")
    G = A.T @ A
    lam = RIDGE * np.trace(G) / cols
    G[np.diag_indices(cols)] += lam
    cond = float(np.linalg.cond(G))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise FitError(f"regressors are rank deficient (condition {cond:.3g})")
    coef = np.linalg.solve(G, A.T @ y)
    resid = y - A @ coef
    return LnFit(float(coef[0]), coef[1:].copy(), list(X.filter_ids), list(X.tags),
                 list(X.roles), float(np.linalg.norm(resid)), cond)


def predict(fit: LnFit, bank: SubFilterBank, stimulus: np.ndarray, crop: Optional[Crop] = None,
            mode: Optional[str] = None) -> np.ndarray:
    """Model response for one stimulus (H,W,C) or a stack (n,H,W,C)."""
    s = np.asarray(stimulus, dtype=np.float64)
    single = s.ndim == 3
    if single:
        s = s[None]
    if mode is None:
        mode = "awa-only" if fit.filter_ids == ["awa"] else "full"
    awc_nl = next((t for t in fit.tags if t != "identity"), "fullwave")
    X = build_regressors(bank, s, crop, mode, awc_nl)
    out = fit.predict_regressors(X)
    return float(out[0]) if single else out


def pearson_r(actual, predicted) -> float:
    x = np.asarray(actual, dtype=np.float64).reshape(-1)
    y = np.asarray(predicted, dtype=np.float64).reshape(-1)
    if x.shape != y.shape or x.shape[0] < 2:
        raise ShapeMismatch("pearson_r needs two equal-length vectors of length >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(dx @ dx), np.sqrt(dy @ dy)
    if sx == 0 or sy == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant vector")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def split_index(n: int, train_frac: float = 0.75) -> Tuple[slice, slice]:
    cut = int(round(n * train_frac))
    if not 0 < cut < n:
        raise ValueError(f"cannot split {n} samples at {train_frac}")
    return slice(0, cut), slice(cut, n)


def fit_and_score(bank: SubFilterBank, stimuli: np.ndarray, responses: np.ndarray,
                  mode: str = "full", awc_nonlinearity: str = "fullwave",
                  crop: Optional[Crop] = None, train_frac: float = 0.75) -> Tuple[LnFit, float]:
    """Fit on the leading ``train_frac`` of the samples; r on the held-out rest."""
    X = build_regressors(bank, stimuli, crop, mode, awc_nonlinearity)
    y = np.asarray(responses, dtype=np.float64)
    tr, te = split_index(y.shape[0], train_frac)
    fit = fit_ln(X.rows(tr), y[tr])
    r = pearson_r(y[te], fit.predict_regressors(X.rows(te)))
    fit.extra.update(n_train=tr.stop, n_test=te.stop - te.start, r_test=r)
    return fit, r


def random_bank(shape: Sequence[int], n_exc: int = 9, n_sup: int = 10, seed: int = 0) -> SubFilterBank:
    """Bank of unit-norm Gaussian random filters with the given layout."""
    shape = tuple(int(d) for d in shape)
    N = int(np.prod(shape))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x63686E63]))
    f = rng.normal(size=(1 + n_exc + n_sup, N))
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    awa = AwaFilter(f[0], shape, unit_id="chance", seed=seed)
    exc = [(v, float("nan")) for v in f[1:1 + n_exc]]
    sup = [(v, float("nan")) for v in f[1 + n_exc:]]
    return SubFilterBank(awa, exc, sup, float("nan"))


def chance_level_fit(stimuli: np.ndarray, responses: np.ndarray, bank_shape, seed: int,
                     awc_nonlinearity: str = "fullwave", crop: Optional[Crop] = None,
                     train_frac: float = 0.75) -> Tuple[LnFit, float]:
    """Null baseline: the same cascade with random filters.

    ``bank_shape`` is ``(shape, n_exc, n_sup)`` or an existing bank to mimic.
    """
    if isinstance(bank_shape, SubFilterBank):
        shape, n_exc, n_sup = bank_shape.shape, len(bank_shape.excitatory), len(bank_shape.suppressive)
    else:
        shape, n_exc, n_sup = bank_shape
    bank = random_bank(shape, n_exc, n_sup, seed)
    return fit_and_score(bank, stimuli, responses, "chance", awc_nonlinearity, crop, train_frac)


def export_fit(fit: LnFit, **extra) -> str:
    """``key = value`` text for a fitted model."""
    lines = [f"alpha = {fit.alpha!r}", f"beta = {fit.beta!r}", f"gamma = {fit.gamma!r}",
             f"residual_norm = {fit.residual_norm!r}", f"condition = {fit.condition!r}"]
    for fid, tag, role, w in zip(fit.filter_ids, fit.tags, fit.roles, fit.weights):
        lines += [f"filter.{fid}.weight = {float(w)!r}", f"filter.{fid}.tag = {tag}",
                  f"filter.{fid}.role = {role}"]
    lines.append("suppressive_positive = " + ",".join(fit.suppressive_positive))
    for key, value in {**fit.extra, **extra}.items():
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
