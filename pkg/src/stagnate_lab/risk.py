"""Losses, empirical/expected risk, the two-parameter ReLU oracle, and the
sub-Gaussian gradient-noise diagnostic."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import _parallel
from .net_core import (
    Architecture,
    ParamTuple,
    ShapeError,
    backprop,
    forward_batch,
    loss_value,
    per_sample_grads,
    value_and_grad_batch,
)


class RiskConfigError(ValueError):
    """The risk model cannot produce the requested quantity."""


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    domain: Optional[tuple[float, float]] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        Y = np.array(self.Y, dtype=float).ravel()
        if X.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if X.shape[0] != Y.shape[0]:
            raise ShapeError(f"{X.shape[0]} inputs but {Y.shape[0]} targets")
        if self.domain is not None:
            lo, hi = self.domain
            if np.any(X < lo) or np.any(X > hi):
                raise ValueError(f"inputs outside declared domain [{lo}, {hi}]")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.Y[idx], self.domain)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{j}" for j in range(self.X.shape[1])] + ["y"])
            for x, y in zip(self.X, self.Y):
                w.writerow([format(v, ".17g") for v in x] + [format(y, ".17g")])

    @classmethod
    def from_csv(cls, path, domain=None) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-1] != "y" or header[:-1] != [f"x{j}" for j in range(len(header) - 1)]:
            raise ValueError(f"bad dataset header {header}")
        data = np.array(body, dtype=float)
        return cls(data[:, :-1], data[:, -1], domain)


Sampler = Callable[[np.random.Generator, int], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class RiskModel:
    """Loss plus a data oracle for the expected risk.

    ``closed_form``/``closed_form_grad`` take precedence over Monte Carlo on
    ``sampler`` when present.
    """

    loss: str = "square"
    clip: bool = False
    loss_scale: float = 1.0
    sampler: Optional[Sampler] = None
    closed_form: Optional[Callable[[ParamTuple], float]] = None
    closed_form_grad: Optional[Callable[[ParamTuple], ParamTuple]] = None
    B: float = 1.0
    xi: Optional[float] = None
    n_mc: int = 10**6
    seed: int = 0
    domain: Optional[tuple[float, float]] = None
    name: str = "custom"
    # vectorized hooks on flat (R, D) arrays; optional
    closed_form_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    closed_form_grad_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    empirical_fast: Optional[Callable[["Dataset"], Callable[[np.ndarray], tuple]]] = None

    def loss_kwargs(self) -> dict:
        return {"loss": self.loss, "clip": self.clip, "scale": self.loss_scale}

    def with_scale(self, c: float) -> "RiskModel":
        """Same model with the loss multiplied by ``c`` (closed forms dropped)."""
        return replace(self, loss_scale=self.loss_scale * c, closed_form=None, closed_form_grad=None,
                       closed_form_batch=None, closed_form_grad_batch=None, empirical_fast=None)


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    se: float = 0.0
    method: str = "closed_form"

    def __float__(self):
        return self.value


# ------------------------------------------------------------------ toy

def toy_relu_risk(a1: float, a2: float) -> float:
    """Expected square loss of ``a2 * relu(a1 x)`` against ``Y = 1``, ``X ~ U[0, 1]``.

    Exact for ``a1 >= 0``; the same polynomial is returned for ``a1 < 0``.
    """
    u = a1 * a2
    return 1.0 - u + u * u / 3.0


def toy_relu_grad(a1: float, a2: float) -> tuple[float, float]:
    return (-a2 + 2.0 / 3.0 * a1 * a2 * a2, -a1 + 2.0 / 3.0 * a1 * a1 * a2)


TOY_ARCH = Architecture((1, 1, 1), "relu")


def toy_sampler(rng: np.random.Generator, n: int):
    return rng.uniform(0.0, 1.0, size=(n, 1)), np.ones(n)


def _toy_cf(params: ParamTuple) -> float:
    a1, a2 = params.flat()
    return toy_relu_risk(a1, a2)


def _toy_cf_grad(params: ParamTuple) -> ParamTuple:
    a1, a2 = params.flat()
    return ParamTuple.from_flat(params.arch, np.array(toy_relu_grad(a1, a2)))


def _toy_batch(flat):
    u = flat[:, 0] * flat[:, 1]
    return 1.0 - u + u * u / 3.0


def _toy_grad_batch(flat):
    a1, a2 = flat[:, 0], flat[:, 1]
    return np.stack([-a2 + 2.0 / 3.0 * a1 * a2 * a2, -a1 + 2.0 / 3.0 * a1 * a1 * a2], axis=1)


def toy_empirical_fast(dataset: "Dataset"):
    """Exact empirical risk and gradient of ``a2 * relu(a1 x)`` from sufficient statistics.

    Returns ``fn(flat (R, 2)) -> (values (R,), grads (R, 2))``; cost is O(R)
    per call regardless of ``n``. Square loss, unit scale, no clip.
    """
    x = dataset.X[:, 0]
    y = dataset.Y
    p = np.maximum(x, 0.0)
    q = np.maximum(-x, 0.0)
    Sy2, Syx = np.mean(y * y), np.mean(y * x)
    Syp, Sp2 = np.mean(y * p), np.mean(p * p)
    Syq, Sq2 = np.mean(y * q), np.mean(q * q)

    def fn(flat):
        a1, a2 = flat[:, 0], flat[:, 1]
        pos = a1 > 0
        neg = a1 < 0
        b = np.abs(a1)
        Syg = np.where(pos, Syp, np.where(neg, Syq, 0.0))
        Sg2 = np.where(pos, Sp2, np.where(neg, Sq2, 0.0))
        val = Sy2 - 2.0 * a2 * b * Syg + a2 * a2 * b * b * Sg2
        g2 = -2.0 * b * Syg + 2.0 * a2 * b * b * Sg2
        # d relu(a1 x)/d a1 = x 1{a1 x >= 0}
        g1 = np.where(pos, -2.0 * a2 * Syp + 2.0 * a2 * a2 * a1 * Sp2,
                      np.where(neg, 2.0 * a2 * Syq - 2.0 * a2 * a2 * b * Sq2, -2.0 * a2 * Syx))
        return val, np.stack([g1, g2], axis=1)

    return fn


def toy_relu_model(n_mc: int = 10**6, seed: int = 0, closed_form: bool = True, B: float = 1.0) -> RiskModel:
    """Two-layer width-one ReLU net, square loss, ``X ~ U[0,1]``, ``Y = 1``."""
    return RiskModel(
        sampler=toy_sampler,
        closed_form=_toy_cf if closed_form else None,
        closed_form_grad=_toy_cf_grad if closed_form else None,
        closed_form_batch=_toy_batch if closed_form else None,
        closed_form_grad_batch=_toy_grad_batch if closed_form else None,
        empirical_fast=toy_empirical_fast,
        B=B,
        n_mc=n_mc,
        seed=seed,
        domain=(0.0, 1.0),
        name="toy_relu",
    )


def sample_dataset(model: RiskModel, n: int, seed: int) -> Dataset:
    if model.sampler is None:
        raise RiskConfigError("model has no data sampler")
    X, Y = model.sampler(np.random.default_rng(seed), n)
    return Dataset(X, Y, model.domain)


# ----------------------------------------------------------------- risks

def _weights(params: ParamTuple):
    return [a[None] for a in params.layers]


def empirical_risk(params: ParamTuple, dataset: Dataset, model: RiskModel) -> float:
    f = forward_batch(params.arch, _weights(params), dataset.X)[0]
    return float(np.mean(loss_value(dataset.Y, f, **model.loss_kwargs())))


def grad_empirical_risk(params: ParamTuple, dataset: Dataset, model: RiskModel) -> ParamTuple:
    _, grads = value_and_grad_batch(params.arch, _weights(params), dataset.X, dataset.Y,
                                    **model.loss_kwargs())
    return ParamTuple(params.arch, tuple(g[0] for g in grads))


def _mc_chunks(model: RiskModel, n_total: int, seed: int, parts: int):
    sizes = _parallel.partition_sizes(n_total, parts)
    return list(zip(_parallel.spawn_rngs(seed, parts), sizes))


def expected_risk(params: ParamTuple, model: RiskModel, n_mc: Optional[int] = None,
                  seed: Optional[int] = None, force_mc: bool = False, parts: int = 8) -> RiskEstimate:
    """Expected risk, exactly from the closed form or by Monte Carlo with its standard error."""
    if model.closed_form is not None and not force_mc:
        return RiskEstimate(float(model.closed_form(params)), 0.0, "closed_form")
    if model.sampler is None:
        raise RiskConfigError("model has neither a closed form nor a data sampler")
    n_mc = model.n_mc if n_mc is None else n_mc
    seed = model.seed if seed is None else seed
    w = _weights(params)

    def run(item):
        rng, size = item
        X, Y = model.sampler(rng, size)
        v = loss_value(Y, forward_batch(params.arch, w, X)[0], **model.loss_kwargs())
        return v.sum(), np.sum(v * v), size

    parts_out = _parallel.pmap(run, _mc_chunks(model, n_mc, seed, parts))
    s = sum(p[0] for p in parts_out)
    ss = sum(p[1] for p in parts_out)
    mean = s / n_mc
    var = max(ss / n_mc - mean * mean, 0.0) * n_mc / max(n_mc - 1, 1)
    return RiskEstimate(float(mean), math.sqrt(var / n_mc), "monte_carlo")


def grad_expected_risk(params: ParamTuple, model: RiskModel, n_mc: Optional[int] = None,
                       seed: Optional[int] = None, force_mc: bool = False, parts: int = 8) -> ParamTuple:
    if model.closed_form_grad is not None and not force_mc:
        return model.closed_form_grad(params)
    if model.sampler is None:
        raise RiskConfigError("model has neither a closed-form gradient nor a data sampler")
    n_mc = model.n_mc if n_mc is None else n_mc
    seed = model.seed if seed is None else seed

    def run(item):
        rng, size = item
        X, Y = model.sampler(rng, size)
        return per_sample_grads(params, X, Y, **model.loss_kwargs()).sum(axis=0)

    total = sum(_parallel.pmap(run, _mc_chunks(model, n_mc, seed, parts)))
    return ParamTuple.from_flat(params.arch, total / n_mc)


def sample_gradient(params: ParamTuple, x, y, model: RiskModel) -> ParamTuple:
    return backprop(params, x, y, **model.loss_kwargs())


# ------------------------------------------------------------ xi diagnostic

@dataclass(frozen=True)
class XiEstimate:
    xi: float
    ok: bool
    n_directions: int = 0
    notes: list = field(default_factory=list)


XI_SCALES = (0.25, 0.5, 1.0, 2.0)


def estimate_xi(params_set, dataset_sampler: Sampler, model: RiskModel, n_draws: int = 10**4,
                seed: int = 0, n_random_dirs: int = 32) -> XiEstimate:
    """Smallest ``xi`` whose Gaussian MGF bound covers the empirical MGF.

    The centered per-sample gradient ``g - grad R`` is projected on the
    coordinate axes plus ``n_random_dirs`` random unit directions, each
    scaled by ``XI_SCALES``. Heuristic diagnostic only, not a certified bound.
    """
    if n_draws < 10**4:
        raise ValueError("n_draws must be at least 1e4")
    params_set = list(params_set)
    D = params_set[0].arch.D
    rng = np.random.default_rng(seed)
    rand = rng.standard_normal((n_random_dirs, D))
    rand /= np.linalg.norm(rand, axis=1, keepdims=True)
    dirs = np.vstack([np.eye(D), rand])
    X, Y = dataset_sampler(rng, n_draws)
    worst = 0.0
    notes = []
    for p in params_set:
        g = per_sample_grads(p, X, Y, **model.loss_kwargs())
        centered = g - g.mean(axis=0)
        proj = centered @ dirs.T
        for s in XI_SCALES:
            z = s * proj
            zmax = z.max(axis=0)
            with np.errstate(over="ignore"):
                log_mgf = zmax + np.log(np.mean(np.exp(z - zmax), axis=0))
            if not np.all(np.isfinite(log_mgf)):
                notes.append("moment generating function diverged")
                return XiEstimate(math.inf, False, len(dirs), notes)
            need = 2.0 * log_mgf / (s * s)
            worst = max(worst, float(need.max()))
    return XiEstimate(math.sqrt(max(worst, 0.0)), True, len(dirs), notes)
