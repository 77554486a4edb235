"""Streaming activation-weighted average (AWA) and covariance (AWC).

The accumulator keeps only mergeable running sums, so a noise stream can be
cut into chunks, reduced independently and merged in chunk order.  Two AWC
forms are supported:

``as-written``
    (1/sum|R|) * sum (R s - a)(R s - a)^T, with a the AWA.
``standard-stc``
    (1/sum|R|) * sum |R| (s - a)(s - a)^T, the usual spike-triggered covariance.

Both are finalized from raw second moments by expanding the outer products.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .eigen import AwcDecomposition, eig_sym

AWC_FORMS = ("as-written", "standard-stc")


class ShapeMismatch(ValueError):
    pass


class WeakResponseError(ArithmeticError):
    """All responses were zero: the unit never responded to the noise."""


class BankConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Crop:
    top: int
    left: int
    height: int
    width: int
    channels: int

    @classmethod
    def centered(cls, image_shape: Sequence[int], size: Optional[Sequence[int]] = None) -> "Crop":
        """Centered crop; ``size`` is (h, w) and defaults to the whole image."""
        H, W, C = (int(d) for d in image_shape)
        h, w = (H, W) if size is None else (int(size[0]), int(size[1]))
        if not (0 < h <= H and 0 < w <= W):
            raise ShapeMismatch(f"crop {h}x{w} does not fit a {H}x{W} stimulus")
        return cls((H - h) // 2, (W - w) // 2, h, w, C)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.height, self.width, self.channels

    @property
    def dim(self) -> int:
        return self.height * self.width * self.channels

    def apply(self, stimuli: np.ndarray) -> np.ndarray:
        """Crop and flatten (H,W,C) -> (N,) or (n,H,W,C) -> (n, N)."""
        s = np.asarray(stimuli, dtype=np.float64)
        single = s.ndim == 3
        if single:
            s = s[None]
        if s.ndim != 4 or s.shape[3] != self.channels or s.shape[1] < self.top + self.height \
                or s.shape[2] < self.left + self.width:
            raise ShapeMismatch(f"stimulus shape {s.shape[1:]} incompatible with crop {self}")
        out = s[:, self.top:self.top + self.height, self.left:self.left + self.width, :]
        out = out.reshape(s.shape[0], -1)
        return out[0] if single else out


@dataclass
class RevCorrAccumulator:
    crop: Crop
    form: str = "as-written"
    n: int = 0
    sum_R: float = 0.0
    sum_abs_R: float = 0.0
    weighted_sum: np.ndarray = None       # sum R s
    abs_weighted_sum: np.ndarray = None   # sum |R| s
    second_moment: np.ndarray = None      # packed upper triangle of sum w s s^T

    def __post_init__(self):
        if self.form not in AWC_FORMS:
            raise ValueError(f"unknown AWC form {self.form!r}")
        N = self.crop.dim
        if self.weighted_sum is None:
            self.weighted_sum = np.zeros(N)
        if self.abs_weighted_sum is None:
            self.abs_weighted_sum = np.zeros(N)
        if self.second_moment is None:
            self.second_moment = np.zeros(N * (N + 1) // 2)

    @property
    def dim(self) -> int:
        return self.crop.dim

    def triu(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.triu_indices(self.dim)

    def second_moment_matrix(self) -> np.ndarray:
        m = np.zeros((self.dim, self.dim))
        iu = self.triu()
        m[iu] = self.second_moment
        m.T[iu] = self.second_moment
        return m

    def _moment_weight(self, r):
        return r * r if self.form == "as-written" else np.abs(r)

    def accumulate(self, stimulus: np.ndarray, response: float) -> "RevCorrAccumulator":
        """Add one (stimulus, response) sample in place; returns self."""
        s = self.crop.apply(stimulus)
        r = float(response)
        if not np.isfinite(r):
            raise ValueError("response must be finite")
        self.n += 1
        self.sum_R += r
        self.sum_abs_R += abs(r)
        self.weighted_sum += r * s
        self.abs_weighted_sum += abs(r) * s
        self.second_moment += self._moment_weight(r) * np.outer(s, s)[self.triu()]
        return self

    def accumulate_batch(self, stimuli: np.ndarray, responses: np.ndarray) -> "RevCorrAccumulator":
        """Add a block of samples in place; stimuli are (n,H,W,C) or already (n,N)."""
        r = np.asarray(responses, dtype=np.float64).reshape(-1)
        s = np.asarray(stimuli, dtype=np.float64)
        s = s if s.ndim == 2 and s.shape[1] == self.dim else self.crop.apply(s)
        if s.shape[0] != r.shape[0]:
            raise ShapeMismatch("stimulus and response counts differ")
        if not np.all(np.isfinite(r)):
            raise ValueError("responses must be finite")
        ar = np.abs(r)
        self.n += r.shape[0]
        self.sum_R += float(np.sum(r))
        self.sum_abs_R += float(np.sum(ar))
        self.weighted_sum += r @ s
        self.abs_weighted_sum += ar @ s
        m = s.T @ (self._moment_weight(r)[:, None] * s)
        self.second_moment += m[self.triu()]
        return self

    def compatible(self, other: "RevCorrAccumulator") -> bool:
        return self.crop == other.crop and self.form == other.form

    def copy(self) -> "RevCorrAccumulator":
        return RevCorrAccumulator(self.crop, self.form, self.n, self.sum_R, self.sum_abs_R,
                                  self.weighted_sum.copy(), self.abs_weighted_sum.copy(),
                                  self.second_moment.copy())


def accumulate(acc: RevCorrAccumulator, stimulus, response) -> RevCorrAccumulator:
    return acc.accumulate(stimulus, response)


def merge(a: RevCorrAccumulator, b: RevCorrAccumulator) -> RevCorrAccumulator:
    """Field-wise sum a + b (a new accumulator; inputs untouched)."""
    if not a.compatible(b):
        raise ShapeMismatch(f"cannot merge accumulators: {a.crop}/{a.form} vs {b.crop}/{b.form}")
    return RevCorrAccumulator(a.crop, a.form, a.n + b.n, a.sum_R + b.sum_R,
                              a.sum_abs_R + b.sum_abs_R,
                              a.weighted_sum + b.weighted_sum,
                              a.abs_weighted_sum + b.abs_weighted_sum,
                              a.second_moment + b.second_moment)


def merge_all(parts: Sequence[RevCorrAccumulator]) -> RevCorrAccumulator:
    """Left fold of ``merge`` in the given (chunk) order."""
    if not parts:
        raise ValueError("nothing to merge")
    out = parts[0].copy()
    for p in parts[1:]:
        out = merge(out, p)
    return out


@dataclass
class AwaFilter:
    values: np.ndarray
    shape: Tuple[int, int, int]
    n: int = 0
    unit_id: str = ""
    seed: Optional[int] = None

    @property
    def image(self) -> np.ndarray:
        return self.values.reshape(self.shape)


def finalize_awa(acc: RevCorrAccumulator, unit_id: str = "", seed: Optional[int] = None) -> AwaFilter:
    if not acc.sum_abs_R > 0:
        raise WeakResponseError(
            f"weak response: all {acc.n} responses were zero, AWA is undefined")
    return AwaFilter(acc.weighted_sum / acc.sum_abs_R, acc.crop.shape, acc.n, unit_id, seed)


def finalize_awc(acc: RevCorrAccumulator, awa: Optional[AwaFilter] = None) -> np.ndarray:
    """Symmetric N x N AWC matrix in the accumulator's form."""
    if awa is None:
        awa = finalize_awa(acc)
    a = awa.values
    S = acc.sum_abs_R
    m = acc.second_moment_matrix()
    if acc.form == "as-written":
        lin, count = acc.weighted_sum, float(acc.n)
    else:
        lin, count = acc.abs_weighted_sum, S
    cross = np.outer(a, lin)
    c = (m - cross - cross.T + count * np.outer(a, a)) / S
    return 0.5 * (c + c.T)


@dataclass
class SubFilterBank:
    """AWA plus selected AWC eigenvectors.

    ``excitatory`` / ``suppressive`` hold (vector, eigenvalue) pairs: the
    excitatory list in descending eigenvalue order, the suppressive list
    starting from the smallest eigenvalue.
    """

    awa: AwaFilter
    excitatory: List[Tuple[np.ndarray, float]]
    suppressive: List[Tuple[np.ndarray, float]]
    mean_eigenvalue: float = 0.0

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.awa.shape

    @property
    def flags(self) -> List[str]:
        """Per AWC filter: 'above' / 'below' the mean eigenvalue (excitatory first)."""
        return ["above" if lam > self.mean_eigenvalue else "below"
                for _, lam in self.excitatory + self.suppressive]

    @property
    def misplaced(self) -> List[bool]:
        """True where an eigenvalue sits on the wrong side of the spectral mean."""
        exc = [lam <= self.mean_eigenvalue for _, lam in self.excitatory]
        sup = [lam >= self.mean_eigenvalue for _, lam in self.suppressive]
        return exc + sup

    def filters(self) -> List[Tuple[str, np.ndarray, str]]:
        """(filter id, vector, role) for every filter: AWA first, then exc, then sup."""
        out = [("awa", self.awa.values, "excitatory")]
        out += [(f"exc{i + 1}", v, "excitatory") for i, (v, _) in enumerate(self.excitatory)]
        out += [(f"sup{i + 1}", v, "suppressive") for i, (v, _) in enumerate(self.suppressive)]
        return out

    def matrix(self) -> np.ndarray:
        """All filters as rows, in ``filters()`` order."""
        return np.stack([v for _, v, _ in self.filters()])


def select_subfilters(awa: AwaFilter, dec: AwcDecomposition, n_exc: int = 9,
                      n_sup: int = 10) -> SubFilterBank:
    N = dec.n
    if n_exc < 0 or n_sup < 0 or n_exc + n_sup > N:
        raise BankConfigError(f"cannot pick {n_exc} + {n_sup} sub-filters from {N} dimensions")
    if awa.values.shape[0] != N:
        raise ShapeMismatch("AWA and decomposition dimensions differ")
    vals, vecs = dec.eigenvalues, dec.eigenvectors
    exc = [(vecs[:, i].copy(), float(vals[i])) for i in range(n_exc)]
    sup = [(vecs[:, N - 1 - i].copy(), float(vals[N - 1 - i])) for i in range(n_sup)]
    return SubFilterBank(awa, exc, sup, dec.mean_eigenvalue)


def analyze_accumulator(acc: RevCorrAccumulator, n_exc: int = 9, n_sup: int = 10,
                        unit_id: str = "", seed: Optional[int] = None):
    """AWA, AWC, eigendecomposition and bank from a finished accumulator."""
    awa = finalize_awa(acc, unit_id, seed)
    awc = finalize_awc(acc, awa)
    dec = eig_sym(awc)
    return awa, awc, dec, select_subfilters(awa, dec, n_exc, n_sup)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def principal_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Principal angles (degrees, ascending) between the column spans of a and b."""
    qa, _ = np.linalg.qr(np.asarray(a, dtype=np.float64))
    qb, _ = np.linalg.qr(np.asarray(b, dtype=np.float64))
    sv = np.clip(np.linalg.svd(qa.T @ qb, compute_uv=False), -1.0, 1.0)
    return np.degrees(np.arccos(sv))


def second_moment_bytes(dim: int) -> int:
    return 8 * dim * (dim + 1) // 2
