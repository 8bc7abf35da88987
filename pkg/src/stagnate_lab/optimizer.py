"""Gaussian SGD, minibatch SGD, power-law step schedules and the noise model."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import _parallel
from .net_core import (
    Architecture,
    ParamSpace,
    ParamTuple,
    per_sample_grads,
    project_space,
    value_and_grad_batch,
)
from .risk import Dataset, RiskModel, empirical_risk, grad_empirical_risk, grad_expected_risk

FULL_STORAGE_LIMIT = 10**7


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, step: int, params, member: Optional[int] = None):
        self.step = step
        self.params = params
        self.member = member
        where = f"step {step}" + ("" if member is None else f", member {member}")
        super().__init__(f"non-finite gradient at {where}; iterate {np.asarray(params).tolist()}")


# ------------------------------------------------------------------ noise

@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Gaussian noise ``U ~ N(0, G(A))`` and the batch proxy ``m``.

    kind ``scalar`` uses ``G = sigma2 * I``, ``diagonal`` uses ``diag(diag)``,
    ``full`` calls ``cov_fn(params) -> (D, D)``. For ``full`` the eigenvalue
    bounds ``cG``/``cG_lower`` must be declared.
    """

    kind: str = "scalar"
    sigma2: float = 1.0
    diag: Optional[np.ndarray] = None
    cov_fn: Optional[Callable[[ParamTuple], np.ndarray]] = None
    m: int = 1
    cG: Optional[float] = None
    cG_lower: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("scalar", "diagonal", "full"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("batch proxy m must be a positive integer")
        if self.kind == "scalar" and self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        if self.kind == "diagonal":
            if self.diag is None:
                raise ValueError("diagonal noise needs diag")
            d = np.array(self.diag, dtype=float)
            if np.any(d < 0):
                raise ValueError("diagonal variances must be nonnegative")
            d.setflags(write=False)
            object.__setattr__(self, "diag", d)
        if self.kind == "full" and (self.cov_fn is None or self.cG is None or self.cG_lower is None):
            raise ValueError("full noise needs cov_fn, cG and cG_lower")

    @property
    def upper(self) -> float:
        if self.cG is not None:
            return float(self.cG)
        return float(self.sigma2) if self.kind == "scalar" else float(np.max(self.diag))

    @property
    def lower(self) -> float:
        if self.cG_lower is not None:
            return float(self.cG_lower)
        return float(self.sigma2) if self.kind == "scalar" else float(np.min(self.diag))

    @property
    def is_zero(self) -> bool:
        return self.kind == "scalar" and self.sigma2 == 0.0

    def covariance(self, params: ParamTuple) -> np.ndarray:
        D = params.arch.D
        if self.kind == "scalar":
            return self.sigma2 * np.eye(D)
        if self.kind == "diagonal":
            return np.diag(self.diag)
        return np.asarray(self.cov_fn(params), dtype=float)

    def log_det(self, params: Optional[ParamTuple] = None, D: Optional[int] = None) -> float:
        if self.kind == "scalar":
            D = params.arch.D if params is not None else D
            return D * math.log(self.sigma2) if self.sigma2 > 0 else -math.inf
        if self.kind == "diagonal":
            return float(np.sum(np.log(self.diag)))
        sign, ld = np.linalg.slogdet(self.covariance(params))
        return ld if sign > 0 else -math.inf

    def transform(self, params: Optional[ParamTuple], z: np.ndarray) -> np.ndarray:
        """Map standard normals ``z`` (shape ``(..., D)``) to ``N(0, G)`` draws."""
        if self.kind == "scalar":
            return math.sqrt(self.sigma2) * z
        if self.kind == "diagonal":
            return np.sqrt(self.diag) * z
        chol = np.linalg.cholesky(self.covariance(params))
        return z @ chol.T

    def sample(self, params: ParamTuple, rng: np.random.Generator) -> np.ndarray:
        return self.transform(params, rng.standard_normal(params.arch.D))


# --------------------------------------------------------------- schedule

@dataclass(frozen=True)
class Schedule:
    c: float = 1.0
    alpha: float = 1.0
    kind: str = "power"

    def __post_init__(self):
        if self.kind != "power":
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not (self.c > 0 and self.alpha > 0):
            raise ValueError("schedule needs c > 0 and alpha > 0")

    @property
    def warnings(self) -> list[str]:
        return ["alpha < 1: outside the alpha >= 1 regime the bounds assume"] if self.alpha < 1 else []

    def eta(self, t) -> float:
        return schedule_eta(self, t)

    def etas(self, T: int) -> np.ndarray:
        """``eta_1 .. eta_T``."""
        t = np.arange(1, T + 1, dtype=float)
        return np.minimum(1.0, self.c * t ** (-self.alpha))


def schedule_eta(schedule: Schedule, t: int) -> float:
    if t < 1:
        raise ValueError("schedule is indexed from t = 1")
    return min(1.0, schedule.c * float(t) ** (-schedule.alpha))


def first_small_step(schedule: Schedule, threshold: float) -> int:
    """Smallest ``t >= 1`` with ``eta_t <= threshold``."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if schedule_eta(schedule, 1) <= threshold:
        return 1
    # bracket then bisect; the closed-form guess can be off by rounding
    lo, hi = 1, max(2, int(math.ceil((schedule.c / threshold) ** (1.0 / schedule.alpha))))
    while schedule_eta(schedule, hi) > threshold:
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if schedule_eta(schedule, mid) <= threshold:
            hi = mid
        else:
            lo = mid
    return hi


# ------------------------------------------------------------- trajectory

@dataclass(eq=False)
class Trajectory:
    """Iterates ``A_0 .. A_T`` (possibly strided), step sizes and annotations.

    ``etas[t-1]`` is the step size used to produce ``A_t``. ``dist`` holds the
    monitor distance of every iterate (never strided).
    """

    arch: Architecture
    times: np.ndarray
    iterates: np.ndarray
    etas: np.ndarray
    seed: Optional[int]
    T: int
    dist: Optional[np.ndarray] = None
    checkpoints: dict = field(default_factory=dict)

    def __len__(self):
        return self.T + 1

    @property
    def strided(self) -> bool:
        return len(self.times) != self.T + 1

    def params_at(self, t: int) -> ParamTuple:
        if t in self.checkpoints:
            return self.checkpoints[t]
        i = np.searchsorted(self.times, t)
        if i >= len(self.times) or self.times[i] != t:
            raise KeyError(f"iterate {t} was not stored (stride)")
        return ParamTuple.from_flat(self.arch, self.iterates[i])

    @property
    def final(self) -> ParamTuple:
        return self.params_at(self.T)

    def records(self, dataset: Optional[Dataset] = None, model: Optional[RiskModel] = None,
                deltas: Sequence[float] = ()) -> list[dict]:
        out = []
        for i, t in enumerate(self.times):
            t = int(t)
            p = ParamTuple.from_flat(self.arch, self.iterates[i])
            rec = {"t": t, "eta": None if t == 0 else float(self.etas[t - 1])}
            if dataset is not None and model is not None:
                rec["risk_emp"] = empirical_risk(p, dataset, model)
            if model is not None and model.closed_form is not None:
                rec["risk_exp"] = float(model.closed_form(p))
            rec["hit_flags"] = [] if self.dist is None else [bool(self.dist[t] <= d) for d in deltas]
            rec["params_ref"] = f"iterates#{t}"
            out.append(rec)
        return out

    def to_jsonl(self, path, dataset=None, model=None, deltas: Sequence[float] = ()) -> None:
        with open(path, "w") as fh:
            for rec in self.records(dataset, model, deltas):
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def params_dict(self) -> dict:
        """``{"iterates#t": ParamTuple dict}`` for every stored step and checkpoint."""
        out = {f"iterates#{int(t)}": ParamTuple.from_flat(self.arch, x).to_dict()
               for t, x in zip(self.times, self.iterates)}
        for t, p in self.checkpoints.items():
            out[f"iterates#{int(t)}"] = p.to_dict()
        return out


def storage_stride(D: int, T: int, limit: int = FULL_STORAGE_LIMIT) -> int:
    return max(1, int(math.ceil(D * (T + 1) / limit)))


# ------------------------------------------------------------------ steps

def _grad(params, dataset, model) -> np.ndarray:
    # flat arrays so that inf/nan reach the caller instead of failing ParamTuple validation
    if dataset is None:
        if model.closed_form_grad_batch is not None:
            return np.asarray(model.closed_form_grad_batch(params.flat()[None]), dtype=float)[0]
        return grad_expected_risk(params, model).flat()
    with np.errstate(over="ignore", invalid="ignore"):
        _, grads = value_and_grad_batch(params.arch, [a[None] for a in params.layers], dataset.X, dataset.Y,
                                        **model.loss_kwargs())
    return np.concatenate([g[0].ravel() for g in grads])


def gaussian_sgd_step(params: ParamTuple, dataset: Optional[Dataset], model: RiskModel,
                      noise: NoiseModel, eta: float, rng: np.random.Generator,
                      space: Optional[ParamSpace] = None, step: int = 0,
                      z: Optional[np.ndarray] = None) -> ParamTuple:
    """One projected Gaussian SGD update.

    ``dataset=None`` steps on the expected risk. ``z`` supplies the standard
    normal draw instead of consuming ``rng``.
    """
    g = _grad(params, dataset, model)
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradientError(step, params.flat())
    if z is None:
        z = rng.standard_normal(params.arch.D)
    u = noise.transform(params, z)
    raw = params.flat() - eta * g + (eta / math.sqrt(noise.m)) * u
    if not np.all(np.isfinite(raw)):
        raise NonFiniteGradientError(step, params.flat())
    nxt = ParamTuple.from_flat(params.arch, raw)
    return project_space(nxt, space) if space is not None else nxt


def run_gaussian_sgd(init: ParamTuple, dataset: Optional[Dataset], model: RiskModel,
                     noise: NoiseModel, schedule: Schedule, T: int,
                     space: Optional[ParamSpace], rng: np.random.Generator,
                     monitor: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                     checkpoints: Sequence[int] = (), seed: Optional[int] = None,
                     stride: Optional[int] = None) -> Trajectory:
    """Run ``T`` Gaussian SGD steps from ``init``.

    ``monitor`` maps flat iterates ``(R, D)`` to distances ``(R,)`` and is
    evaluated on every iterate.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    if space is not None and not space.contains(init):
        raise ValueError("init lies outside the parameter space")
    D = init.arch.D
    stride = storage_stride(D, T) if stride is None else stride
    keep = set(int(t) for t in checkpoints if 0 <= t <= T) | {0, T}
    times, stored = [], []
    dist = np.empty(T + 1) if monitor is not None else None
    etas = schedule.etas(T)
    cps = {}
    p = init
    for t in range(T + 1):
        if t > 0:
            p = gaussian_sgd_step(p, dataset, model, noise, etas[t - 1], rng, space, step=t)
        if dist is not None:
            dist[t] = monitor(p.flat()[None])[0]
        if t % stride == 0 or t == T:
            times.append(t)
            stored.append(p.flat())
        elif t in keep:
            cps[t] = p
    return Trajectory(init.arch, np.array(times), np.array(stored).reshape(len(times), D),
                      etas, seed, T, dist, cps)


# --------------------------------------------------------------- ensembles

@dataclass(eq=False)
class EnsembleResult:
    final: np.ndarray
    dist: Optional[np.ndarray]
    seed: int
    members: np.ndarray
    T: int
    snapshots: dict = field(default_factory=dict)


def _batch_grad_fn(arch, dataset, model):
    if dataset is None:
        if model.closed_form_grad_batch is not None:
            return model.closed_form_grad_batch

        def loop(flat):
            return np.stack([grad_expected_risk(ParamTuple.from_flat(arch, r), model).flat() for r in flat])
        return loop
    if model.empirical_fast is not None and model.loss_scale == 1.0 and not model.clip:
        fast = model.empirical_fast(dataset)
        return lambda flat: fast(flat)[1]

    def generic(flat):
        _, grads = value_and_grad_batch(arch, arch.split(flat), dataset.X, dataset.Y, **model.loss_kwargs())
        return np.concatenate([g.reshape(flat.shape[0], -1) for g in grads], axis=1)
    return generic


def _project_rows(flat, space):
    if space is None:
        return flat
    nrm = np.sqrt(np.sum(flat * flat, axis=1))
    over = nrm > space.radius
    if np.any(over):
        flat = flat.copy()
        flat[over] *= (space.radius / nrm[over])[:, None]
    return flat


def _run_block(init_flat, arch, grad_fn, noise, etas, space, seed, members, monitor, chunk, snap_at=()):
    R, D, T = len(members), arch.D, len(etas)
    snaps = {0: init_flat[None].repeat(R, axis=0)} if 0 in snap_at else {}
    rngs = [_parallel.member_rng(seed, int(k)) for k in members]
    A = np.tile(init_flat, (R, 1))
    dist = np.empty((R, T + 1)) if monitor is not None else None
    if dist is not None:
        dist[:, 0] = monitor(A)
    scale = 1.0 / math.sqrt(noise.m)
    for start in range(0, T, chunk):
        steps = min(chunk, T - start)
        Z = np.stack([r.standard_normal((steps, D)) for r in rngs], axis=1)
        for j in range(steps):
            t = start + j + 1
            eta = etas[t - 1]
            g = grad_fn(A)
            if not np.all(np.isfinite(g)):
                bad = int(np.argmin(np.all(np.isfinite(g), axis=1)))
                raise NonFiniteGradientError(t, A[bad], int(members[bad]))
            if noise.kind == "full":
                U = np.stack([noise.transform(ParamTuple.from_flat(arch, a), z) for a, z in zip(A, Z[j])])
            else:
                U = noise.transform(None, Z[j])
            A = _project_rows(A - eta * g + (eta * scale) * U, space)
            if dist is not None:
                dist[:, t] = monitor(A)
            if t in snap_at:
                snaps[t] = A.copy()
    return A, dist, snaps


def run_ensemble(init: ParamTuple, dataset: Optional[Dataset], model: RiskModel,
                 noise: NoiseModel, schedule: Schedule, T: int, space: Optional[ParamSpace],
                 seed: int, n_runs: int, monitor: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 parts: int = 8, chunk: int = 256, snapshots: Sequence[int] = (),
                 t0: int = 0) -> EnsembleResult:
    """``n_runs`` independent Gaussian SGD runs, vectorized across members.

    Member ``k`` draws its noise from ``member_rng(seed, k)``, consuming one
    standard normal ``D``-vector per step exactly as ``run_gaussian_sgd``
    does with that generator, so outputs do not depend on ``parts``.
    ``snapshots`` lists steps whose iterates are kept. ``t0 > 0`` starts
    from ``init`` at time ``t0`` (steps ``t0+1 .. T``); column ``j`` of
    ``dist`` and snapshot keys are then offsets from ``t0``.
    """
    arch = init.arch
    grad_fn = _batch_grad_fn(arch, dataset, model)
    etas = schedule.etas(T)[t0:]
    sizes = [s for s in _parallel.partition_sizes(n_runs, min(parts, n_runs)) if s > 0]
    bounds = np.cumsum([0] + sizes)
    blocks = [np.arange(bounds[i], bounds[i + 1]) for i in range(len(sizes))]
    out = _parallel.pmap(lambda mem: _run_block(init.flat(), arch, grad_fn, noise, etas, space, seed,
                                                mem, monitor, chunk, set(snapshots)), blocks)
    final = np.concatenate([o[0] for o in out])
    dist = None if monitor is None else np.concatenate([o[1] for o in out])
    snaps = {t: np.concatenate([o[2][t] for o in out]) for t in sorted(snapshots) if t <= T}
    return EnsembleResult(final, dist, seed, np.arange(n_runs), T, snaps)


# --------------------------------------------------------------- minibatch

def draw_batch(n: int, m: int, rng: np.random.Generator, replace: bool = True) -> np.ndarray:
    if m <= 0:
        raise ValueError("batch size must be positive")
    if not replace and m > n:
        raise ValueError("m > n requires sampling with replacement")
    idx = rng.integers(0, n, size=m) if replace else rng.choice(n, size=m, replace=False)
    return np.sort(idx)


def minibatch_sgd_step(params: ParamTuple, dataset: Dataset, model: RiskModel, m: int, eta: float,
                       rng: np.random.Generator, replace: bool = True,
                       space: Optional[ParamSpace] = None) -> ParamTuple:
    batch = draw_batch(dataset.n, m, rng, replace)
    g = grad_empirical_risk(params, dataset.subset(batch), model)
    nxt = params - eta * g
    return project_space(nxt, space) if space is not None else nxt


def batch_noise(params: ParamTuple, batch, dataset: Dataset, model: RiskModel) -> ParamTuple:
    """``W = sqrt(m) (grad R_n - grad of the batch risk)``."""
    batch = np.asarray(batch)
    full = grad_empirical_risk(params, dataset, model)
    part = grad_empirical_risk(params, dataset.subset(batch), model)
    return math.sqrt(len(batch)) * (full - part)


@dataclass(frozen=True)
class GaussianityReport:
    mean: np.ndarray
    se: np.ndarray
    skewness: np.ndarray
    excess_kurtosis: np.ndarray
    n_resamples: int
    m: int

    def within(self, tol: float = 0.1) -> bool:
        return bool(np.all(np.abs(self.skewness) <= tol) and np.all(np.abs(self.excess_kurtosis) <= tol))


def batch_noise_samples(params: ParamTuple, dataset: Dataset, model: RiskModel, m: int,
                        n_resamples: int, seed: int, replace: bool = True, chunk: int = 2000) -> np.ndarray:
    """``(n_resamples, D)`` draws of ``W`` at fixed ``params``."""
    G = per_sample_grads(params, dataset.X, dataset.Y, **model.loss_kwargs())
    full = G.mean(axis=0)
    rng = np.random.default_rng(seed)
    out = np.empty((n_resamples, G.shape[1]))
    for s in range(0, n_resamples, chunk):
        k = min(chunk, n_resamples - s)
        if replace:
            idx = rng.integers(0, dataset.n, size=(k, m))
        else:
            idx = np.stack([rng.choice(dataset.n, size=m, replace=False) for _ in range(k)])
        out[s:s + k] = math.sqrt(m) * (full - G[idx].mean(axis=1))
    return out


def batch_noise_gaussianity(params: ParamTuple, dataset: Dataset, model: RiskModel, m: int,
                            n_resamples: int = 10**5, seed: int = 0, replace: bool = True) -> GaussianityReport:
    W = batch_noise_samples(params, dataset, model, m, n_resamples, seed, replace)
    sd = W.std(axis=0, ddof=1)
    return GaussianityReport(W.mean(axis=0), sd / math.sqrt(n_resamples),
                             stats.skew(W, axis=0), stats.kurtosis(W, axis=0, fisher=True),
                             n_resamples, m)


@dataclass(frozen=True, eq=False)
class GaussianSgdConfig:
    """Everything needed to run Gaussian SGD except the seed."""

    init: ParamTuple
    model: RiskModel
    noise: NoiseModel
    schedule: Schedule
    T: int
    space: Optional[ParamSpace] = None
    dataset: Optional[Dataset] = None

    def run(self, seed: int, member: int = 0, monitor=None, checkpoints: Sequence[int] = ()) -> Trajectory:
        return run_gaussian_sgd(self.init, self.dataset, self.model, self.noise, self.schedule, self.T,
                                self.space, _parallel.member_rng(seed, member), monitor=monitor,
                                checkpoints=checkpoints, seed=seed)

    def ensemble(self, seed: int, n_runs: int, monitor=None, T: Optional[int] = None,
                 parts: int = 8, snapshots: Sequence[int] = ()) -> EnsembleResult:
        return run_ensemble(self.init, self.dataset, self.model, self.noise, self.schedule,
                            self.T if T is None else T, self.space, seed, n_runs, monitor, parts,
                            snapshots=snapshots)
