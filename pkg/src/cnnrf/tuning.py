"""Grating tuning maps, category selectivity (one-way ANOVA) and response histograms."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple, Union

import numpy as np

from .stimulus import (ORIENTATIONS_DEG, PHASES_DEG, CategoryImageSet, ConfigError, GratingParams,
                       NoiseSpec, battery_frequencies, noise_chunks)

RECTIFY_MODES = ("rectify-mean", "mean-rectify")


class DegenerateVarianceError(ArithmeticError):
    pass


class GroupShapeError(ValueError):
    pass


def respond_batch(respond, stimuli: np.ndarray) -> np.ndarray:
    """Evaluate a ResponseFunction (or plain callable) on a stack of stimuli."""
    if hasattr(respond, "batch"):
        return np.asarray(respond.batch(stimuli), dtype=np.float64)
    return np.array([float(respond(s)) for s in stimuli])


# -- orientation / spatial frequency ------------------------------------------------

@dataclass
class TuningMap:
    orientations_deg: np.ndarray
    frequencies_cpi: np.ndarray
    responses: np.ndarray         # (n_ori, n_sf), rectified phase average
    phase_responses: np.ndarray   # (n_ori, n_sf, n_phase), raw

    def preferred(self) -> Tuple[float, float]:
        i, j = np.unravel_index(np.argmax(self.responses), self.responses.shape)
        return float(self.orientations_deg[i]), float(self.frequencies_cpi[j])

    def rows(self):
        """(orientation, frequency, response) in battery order."""
        for i, ori in enumerate(self.orientations_deg):
            for j, sf in enumerate(self.frequencies_cpi):
                yield float(ori), float(sf), float(self.responses[i, j])


def orientation_sf_map(respond, battery: Sequence[Tuple[GratingParams, np.ndarray]],
                       mode: str = "rectify-mean") -> TuningMap:
    """Phase-averaged, half-wave rectified response on the 17 x 6 x 4 grating grid."""
    if mode not in RECTIFY_MODES:
        raise ConfigError(f"unknown rectification mode {mode!r}")
    oris, freqs, phases = list(ORIENTATIONS_DEG), battery_frequencies(), list(PHASES_DEG)
    shape = (len(oris), len(freqs), len(phases))
    if len(battery) != int(np.prod(shape)):
        raise ConfigError(f"battery has {len(battery)} gratings, expected {int(np.prod(shape))}")
    for idx, (p, _) in enumerate(battery):
        i, j, k = np.unravel_index(idx, shape)
        if (p.orientation_deg, p.phase_deg) != (oris[i], phases[k]) or \
                not math.isclose(p.spatial_freq_cpi, freqs[j], rel_tol=1e-12):
            raise ConfigError(f"battery entry {idx} ({p}) is out of grid order")
    raw = respond_batch(respond, np.stack([img for _, img in battery])).reshape(shape)
    if mode == "rectify-mean":
        tuned = np.maximum(raw.mean(axis=2), 0.0)
    else:
        tuned = np.maximum(raw, 0.0).mean(axis=2)
    return TuningMap(np.array(oris), np.asarray(freqs), tuned, raw)


def tuning_csv(tmap: TuningMap) -> str:
    lines = ["orientation_deg,sf_cpi,response"]
    lines += [f"{o:g},{f:.6g},{r:.9g}" for o, f, r in tmap.rows()]
    return "\n".join(lines) + "\n"


# -- category selectivity -----------------------------------------------------------

def category_responses(respond, image_set: CategoryImageSet) -> List[Tuple[str, np.ndarray]]:
    return [(label, respond_batch(respond, np.stack(images)))
            for label, images in image_set.categories]


def _betacf(a: float, b: float, x: float, eps: float = 1e-16, max_iter: int = 10000) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (a * math.log(x) + b * math.log1p(-x)
                 + math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_sf(F: float, df1: float, df2: float) -> float:
    """Upper tail P(X > F) of the F(df1, df2) distribution."""
    if F <= 0:
        return 1.0
    if math.isinf(F):
        return 0.0
    return betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * F))


def one_way_anova(groups: Sequence[Sequence[float]]) -> Tuple[float, float]:
    """F statistic and p value of a one-way ANOVA."""
    arrs = [np.asarray(g, dtype=np.float64).reshape(-1) for g in groups]
    if len(arrs) < 2:
        raise GroupShapeError("ANOVA needs at least two groups")
    if any(a.size < 2 for a in arrs):
        raise GroupShapeError("every ANOVA group needs at least two observations")
    k = len(arrs)
    N = sum(a.size for a in arrs)
    grand = np.concatenate(arrs).mean()
    ss_between = sum(a.size * (a.mean() - grand) ** 2 for a in arrs)
    ss_within = sum(float(np.sum((a - a.mean()) ** 2)) for a in arrs)
    if not ss_within > 0:
        raise DegenerateVarianceError("zero within-group variance")
    F = (ss_between / (k - 1)) / (ss_within / (N - k))
    return float(F), f_sf(F, k - 1, N - k)


def bonferroni(p_values: Union[float, Sequence[float]], alpha: float = 0.01) -> List[bool]:
    p = np.atleast_1d(np.asarray(p_values, dtype=np.float64))
    m = p.size
    if m < 1:
        raise ValueError("need at least one p value")
    return [bool(v < alpha / m) for v in p]


@dataclass
class CategoryStats:
    labels: List[str]
    means: np.ndarray
    stds: np.ndarray
    counts: np.ndarray
    F: float
    p: float
    significant: bool
    m: int = 1
    alpha: float = 0.01

    def report(self, unit_id: str = "") -> str:
        lines = []
        if unit_id:
            lines.append(f"unit = {unit_id}")
        for lab, mu, sd, n in zip(self.labels, self.means, self.stds, self.counts):
            lines += [f"mean.{lab} = {mu!r}", f"std.{lab} = {sd!r}", f"n.{lab} = {int(n)}"]
        lines += [f"F = {self.F!r}", f"p = {self.p!r}", f"alpha = {self.alpha!r}",
                  f"m = {self.m}", f"bonferroni_threshold = {self.alpha / self.m!r}",
                  f"significant = {str(self.significant).lower()}"]
        return "\n".join(lines) + "\n"


def category_selectivity(groups: Sequence[Tuple[str, np.ndarray]], m: int = 1,
                         alpha: float = 0.01) -> CategoryStats:
    """ANOVA over labelled response groups, Bonferroni-corrected over ``m`` tests."""
    labels = [g[0] for g in groups]
    vals = [np.asarray(g[1], dtype=np.float64) for g in groups]
    F, p = one_way_anova(vals)
    sig = p < alpha / m
    return CategoryStats(labels, np.array([v.mean() for v in vals]),
                         np.array([v.std(ddof=1) for v in vals]),
                         np.array([v.size for v in vals]), F, p, bool(sig), m, alpha)


# -- response distribution ---------------------------------------------------------

@dataclass
class ResponseHistogram:
    edges: np.ndarray
    counts: np.ndarray
    n: int
    fraction_zero: float
    mean: float = float("nan")
    median: float = float("nan")

    def csv(self) -> str:
        lines = ["bin_lo,bin_hi,count"]
        lines += [f"{lo:.9g},{hi:.9g},{int(c)}"
                  for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts)]
        return "\n".join(lines) + "\n"


def histogram_of(responses: np.ndarray, bins: int = 50) -> ResponseHistogram:
    if bins < 2:
        raise ConfigError("histogram needs at least two bins")
    r = np.asarray(responses, dtype=np.float64).reshape(-1)
    counts, edges = np.histogram(r, bins=bins)
    return ResponseHistogram(edges, counts, r.size, float(np.mean(r == 0.0)),
                             float(r.mean()), float(np.median(r)))


def response_distribution(respond, noise_spec: NoiseSpec, bins: int = 50) -> ResponseHistogram:
    if bins < 2:
        raise ConfigError("histogram needs at least two bins")
    r = np.concatenate([respond_batch(respond, chunk) for chunk in noise_chunks(noise_spec)])
    return histogram_of(r, bins)
