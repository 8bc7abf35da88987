"""Minima as point clouds, delta-neighborhoods, stagnation detection and
empirical checkers for the local-geometry assumptions."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree

from .bounds import greedy_covering_oracle
from .net_core import Architecture, ParamSpace, ParamTuple, l21_batch
from .optimizer import GaussianSgdConfig, Trajectory
from .risk import TOY_ARCH, RiskModel, grad_expected_risk

GRAD_TOL = 1e-6
MAX_TOY_POINTS = 10**5


@dataclass(frozen=True, eq=False)
class Minimum:
    """A population minimum sampled as a finite cloud of flat parameter vectors."""

    arch: Architecture
    points: np.ndarray
    d: float = 0.0
    c_mu: float = 1.0
    name: str = ""

    def __post_init__(self):
        pts = np.atleast_2d(np.array(self.points, dtype=float))
        if pts.shape[0] == 0 or pts.shape[1] != self.arch.D:
            raise ValueError(f"cloud must be a nonempty (M, {self.arch.D}) array")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    def point(self, i: int) -> ParamTuple:
        return ParamTuple.from_flat(self.arch, self.points[i])

    def nearest(self, flat: np.ndarray, chunk: int = 256):
        """``(index, L21 distance)`` of the nearest cloud point for each row of ``flat``."""
        flat = np.atleast_2d(flat)
        idx = np.empty(flat.shape[0], dtype=int)
        dist = np.empty(flat.shape[0])
        for s in range(0, flat.shape[0], chunk):
            diff = flat[s:s + chunk, None, :] - self.points[None]
            dd = l21_batch(self.arch, diff)
            j = np.argmin(dd, axis=1)  # first occurrence: lowest index wins ties
            idx[s:s + chunk] = j
            dist[s:s + chunk] = dd[np.arange(len(j)), j]
        return idx, dist

    def distance(self, flat: np.ndarray) -> np.ndarray:
        flat = np.atleast_2d(flat)
        if all(h == 1 for h, _ in self.arch.shapes):
            # every column has one entry, so the L21 norm is the l1 norm
            return self._tree().query(flat, p=1)[0]
        return self.nearest(flat)[1]

    def _tree(self):
        tree = self.__dict__.get("_kdtree")
        if tree is None:
            tree = cKDTree(self.points)
            object.__setattr__(self, "_kdtree", tree)
        return tree

    def stationarity_residual(self, model: RiskModel) -> float:
        if model.closed_form_grad_batch is not None:
            g = model.closed_form_grad_batch(self.points)
            return float(np.max(np.sqrt(np.sum(g * g, axis=1))))
        return max(float(np.linalg.norm(grad_expected_risk(self.point(i), model).flat())) for i in range(len(self)))

    def to_dict(self) -> dict:
        return {"name": self.name, "d": self.d, "c_mu": self.c_mu,
                "points": [self.point(i).to_dict() for i in range(len(self))]}

    @classmethod
    def from_dict(cls, d: dict) -> "Minimum":
        pts = [ParamTuple.from_dict(p) for p in d["points"]]
        return cls(pts[0].arch, np.stack([p.flat() for p in pts]), d.get("d", 0.0), d.get("c_mu", 1.0),
                   d.get("name", ""))


@dataclass(frozen=True, eq=False)
class MinimaAtlas:
    arch: Architecture
    minima: tuple
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "minima", tuple(self.minima))
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        for mu in self.minima:
            if mu.arch != self.arch:
                raise ValueError("all minima must share the atlas architecture")

    @property
    def K(self) -> int:
        return len(self.minima)

    @property
    def d(self) -> float:
        return max((mu.d for mu in self.minima), default=0.0)

    def with_delta(self, delta: float) -> "MinimaAtlas":
        return MinimaAtlas(self.arch, self.minima, delta)

    def distance(self, flat: np.ndarray) -> np.ndarray:
        """L21 distance from each row of ``flat`` to the union of the clouds."""
        flat = np.atleast_2d(flat)
        if not self.minima:
            return np.full(flat.shape[0], np.inf)
        return np.min(np.stack([mu.distance(flat) for mu in self.minima]), axis=0)

    def boundary_margin(self, space: ParamSpace) -> float:
        """Smallest ``C_Theta - ||A*||_F`` over all cloud points.

        ``||.||_F <= ||.||_{L,2,1}``, so this lower-bounds the L21 distance to
        the boundary of the Frobenius ball.
        """
        return min(float(np.min(space.radius - np.sqrt(np.sum(mu.points ** 2, axis=1)))) for mu in self.minima)

    def separated(self, space: ParamSpace) -> bool:
        return self.boundary_margin(space) > self.delta

    def to_dict(self) -> dict:
        return {"arch": self.arch.to_dict(), "delta": self.delta, "minima": [mu.to_dict() for mu in self.minima]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict, delta: Optional[float] = None) -> "MinimaAtlas":
        arch = Architecture.from_dict(d["arch"])
        return cls(arch, tuple(Minimum.from_dict(m) for m in d["minima"]),
                   d["delta"] if delta is None else delta)

    @classmethod
    def from_json(cls, text: str, delta: Optional[float] = None) -> "MinimaAtlas":
        return cls.from_dict(json.loads(text), delta)


def toy_minimum(a_lo: float = 0.75, a_hi: float = 2.0, n_points: int = 400, d: float = 1.0) -> Minimum:
    """Cloud on the curve ``a1 a2 = 3/2`` of the two-parameter ReLU problem."""
    a1 = np.linspace(a_lo, a_hi, n_points)
    return Minimum(TOY_ARCH, np.stack([a1, 1.5 / a1], axis=1), d=d, name="a1*a2=3/2")


def toy_atlas(delta: float, a_lo: float = 0.75, a_hi: float = 2.0, n_points: Optional[int] = None) -> MinimaAtlas:
    """Toy atlas with cloud fill distance at most ``delta / 10`` in L21.

    ``delta = 0`` uses 400 points; the cloud is capped at ``MAX_TOY_POINTS``.
    """
    if n_points is None:
        # an a1-step h moves a2 by at most 1.5 h / a_lo^2
        per_step = 1.0 + 1.5 / a_lo ** 2
        need = (a_hi - a_lo) * per_step / (2 * delta / 10) + 1 if delta > 0 else 0
        n_points = int(min(max(400, math.ceil(need)), MAX_TOY_POINTS))
    return MinimaAtlas(TOY_ARCH, (toy_minimum(a_lo, a_hi, n_points),), delta)


def cloud_fill_distance(minimum: Minimum) -> float:
    """Half the largest nearest-neighbour gap along an ordered cloud."""
    gaps = l21_batch(minimum.arch, np.diff(minimum.points, axis=0)) if len(minimum) > 1 else np.zeros(1)
    return float(gaps.max() / 2)


# ------------------------------------------------------------- membership

def project_onto_minimum(params: ParamTuple, minimum: Minimum):
    i, dist = minimum.nearest(params.flat()[None])
    return minimum.point(int(i[0])), float(dist[0])


def _distance(params_or_flat, target) -> np.ndarray:
    flat = params_or_flat.flat() if isinstance(params_or_flat, ParamTuple) else np.asarray(params_or_flat)
    return target.distance(np.atleast_2d(flat))


def in_neighborhood(params, target: Union[Minimum, MinimaAtlas], delta: Optional[float] = None) -> bool:
    if delta is None:
        delta = target.delta
    return bool(_distance(params, target)[0] <= delta)


def _trajectory_dist(traj, atlas: MinimaAtlas) -> np.ndarray:
    if isinstance(traj, Trajectory):
        if traj.dist is not None:
            return traj.dist
        if traj.strided:
            raise ValueError("strided trajectory without online distance annotations")
        return atlas.distance(traj.iterates)
    arr = np.asarray(traj, dtype=float)
    return atlas.distance(arr) if arr.ndim == 2 else arr


def first_hit_time(traj, atlas: MinimaAtlas, t_lo: int = 0, delta: Optional[float] = None) -> Optional[int]:
    """``min{t >= t_lo : A_t in B}`` or ``None``."""
    delta = atlas.delta if delta is None else delta
    inside = _trajectory_dist(traj, atlas)[t_lo:] <= delta
    if not inside.any():
        return None
    return t_lo + int(np.argmax(inside))


def stagnation_flag(traj, atlas: MinimaAtlas, t_bar: int, T: Optional[int] = None,
                    delta: Optional[float] = None) -> bool:
    delta = atlas.delta if delta is None else delta
    dist = _trajectory_dist(traj, atlas)
    T = len(dist) - 1 if T is None else T
    return bool(np.all(dist[t_bar:T + 1] <= delta))


def hit_times(dist: np.ndarray, delta: float, t_lo: int = 0) -> np.ndarray:
    """Vectorized first-hit times over rows of ``dist``; ``-1`` when never inside."""
    inside = dist[:, t_lo:] <= delta
    any_ = inside.any(axis=1)
    return np.where(any_, t_lo + np.argmax(inside, axis=1), -1)


def stagnation_flags(dist: np.ndarray, delta: float, t_bar: int, T: Optional[int] = None) -> np.ndarray:
    T = dist.shape[1] - 1 if T is None else T
    return np.all(dist[:, t_bar:T + 1] <= delta, axis=1)


# ---------------------------------------------------------- Monte Carlo

@dataclass(frozen=True)
class StagnationEstimate:
    p_hat: float
    ci_low: float
    ci_high: float
    n_stagnating: int
    n_runs: int

    def __iter__(self):
        return iter((self.p_hat, self.ci_low, self.ci_high))


def wilson_interval(k: int, n: int, level: float = 0.95):
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def stagnation_estimate_from_flags(flags: np.ndarray) -> StagnationEstimate:
    k, n = int(np.sum(flags)), int(len(flags))
    lo, hi = wilson_interval(k, n)
    return StagnationEstimate(k / n, lo, hi, k, n)


def estimate_stagnation_prob(config: GaussianSgdConfig, atlas: MinimaAtlas, t_bar: int, T: int,
                             n_runs: int, seed: int, delta: Optional[float] = None,
                             parts: int = 8) -> StagnationEstimate:
    """Fraction of independent runs inside the atlas neighborhood over ``[t_bar, T]``."""
    if n_runs < 100:
        raise ValueError("n_runs must be at least 100")
    delta = atlas.delta if delta is None else delta
    ens = config.ensemble(seed, n_runs, monitor=atlas.distance, T=T, parts=parts)
    return stagnation_estimate_from_flags(stagnation_flags(ens.dist, delta, t_bar, T))


def estimate_lebesgue_measure(atlas: MinimaAtlas, space: ParamSpace, n_draws: int, seed: int):
    """Hit-or-miss volume of ``B_{K,delta} cap Theta``; returns ``(value, se)``."""
    D = atlas.arch.D
    box = (2.0 * space.radius) ** D
    if not atlas.minima:
        return 0.0, 0.0
    rng = np.random.default_rng(seed)
    hits = 0
    chunk = 20000
    for s in range(0, n_draws, chunk):
        k = min(chunk, n_draws - s)
        x = rng.uniform(-space.radius, space.radius, size=(k, D))
        inside = (np.sqrt(np.sum(x * x, axis=1)) <= space.radius) & (atlas.distance(x) <= atlas.delta)
        hits += int(np.sum(inside))
    f = hits / n_draws
    return box * f, box * math.sqrt(f * (1 - f) / n_draws)


# ------------------------------------------------------ assumption checks

RiskFn = Callable[[np.ndarray], np.ndarray]


def _risk_fn(model, arch: Architecture) -> RiskFn:
    if callable(model) and not isinstance(model, RiskModel):
        return model
    if model.closed_form_batch is not None:
        return model.closed_form_batch
    if model.closed_form is None:
        raise ValueError("assumption checks need a closed-form risk")
    return lambda flat: np.array([model.closed_form(ParamTuple.from_flat(arch, r)) for r in flat])


def _grad_fn(model, arch: Architecture):
    if callable(model) and not isinstance(model, RiskModel):
        return model
    if model.closed_form_grad_batch is not None:
        return model.closed_form_grad_batch
    return lambda flat: np.stack([grad_expected_risk(ParamTuple.from_flat(arch, r), model).flat() for r in flat])


def _l21_ball_offsets(arch, rng, k, radius):
    z = rng.standard_normal((k, arch.D))
    z /= l21_batch(arch, z)[:, None]
    return z * (radius * rng.uniform(size=k) ** (1.0 / arch.D))[:, None]


def sample_neighborhood(minimum: Minimum, delta: float, k: int, rng: np.random.Generator):
    """``k`` points ``P + offset`` with ``P`` a random cloud point and ``||offset||_{L21} <= delta``."""
    base = rng.integers(0, len(minimum), size=k)
    return base, minimum.points[base] + _l21_ball_offsets(minimum.arch, rng, k, delta)


@dataclass(frozen=True)
class ConvexityReport:
    max_violation: float
    n_pairs: int
    n_accepted: int
    discard_rate: float


def check_essential_convexity(minimum: Minimum, delta: float, model, n_pairs: int = 1000,
                              n_r: int = 101, seed: int = 0, risk_fn: Optional[RiskFn] = None,
                              proposal: str = "ball") -> ConvexityReport:
    """Largest ``R(rA + (1-r)A') - r R(A) - (1-r) R(A')`` over equal-projection pairs.

    ``A`` is drawn in the neighborhood and ``P`` is its projection.
    ``proposal='ball'`` draws ``A'`` uniformly in the L21 ball of radius
    ``delta`` around ``P``; ``proposal='ray'`` draws it on the line through
    ``P`` and ``A``, which keeps far more pairs when the cloud is dense.
    Pairs with ``proj(A') != P`` are discarded and counted.
    """
    f = risk_fn or _risk_fn(model, minimum.arch)
    rng = np.random.default_rng(seed)
    arch = minimum.arch
    P0 = minimum.points[rng.integers(0, len(minimum), size=n_pairs)]
    A = P0 + _l21_ball_offsets(arch, rng, n_pairs, delta)
    # re-anchor on the actual projection of A; its distance can only shrink
    base, _ = minimum.nearest(A)
    P = minimum.points[base]
    if proposal == "ball":
        B = P + _l21_ball_offsets(arch, rng, n_pairs, delta)
    elif proposal == "ray":
        off = A - P
        nrm = l21_batch(arch, off)
        nrm[nrm == 0] = 1.0
        B = P + (rng.uniform(-1.0, 1.0, n_pairs) * delta / nrm)[:, None] * off
    else:
        raise ValueError(f"unknown proposal {proposal!r}")
    keep = (minimum.nearest(A)[0] == base) & (minimum.nearest(B)[0] == base)
    A, B = A[keep], B[keep]
    worst = -math.inf
    if len(A):
        fa, fb = f(A), f(B)
        for r in np.linspace(0.0, 1.0, n_r):
            worst = max(worst, float(np.max(f(r * A + (1 - r) * B) - (r * fa + (1 - r) * fb))))
    acc = int(keep.sum())
    return ConvexityReport(worst, n_pairs, acc, 1.0 - acc / n_pairs)


def estimate_smoothness_constant(minimum: Optional[Minimum], delta: float, model, n_pairs: int = 10**4,
                                 seed: int = 0, box: Optional[float] = None,
                                 arch: Optional[Architecture] = None) -> float:
    """Max over pairs and coordinates of ``|grad_j R(A) - grad_j R(A')| / ||A - A'||_F``.

    Pairs come from the delta-neighborhood of ``minimum`` or, with ``box=B``,
    uniformly from ``[-B, B]^D``. Pairs closer than 1e-8 are skipped.
    """
    arch = minimum.arch if minimum is not None else arch
    g = _grad_fn(model, arch)
    rng = np.random.default_rng(seed)
    if box is not None:
        A = rng.uniform(-box, box, size=(n_pairs, arch.D))
        B = rng.uniform(-box, box, size=(n_pairs, arch.D))
    else:
        _, A = sample_neighborhood(minimum, delta, n_pairs, rng)
        _, B = sample_neighborhood(minimum, delta, n_pairs, rng)
    sep = np.sqrt(np.sum((A - B) ** 2, axis=1))
    ok = sep >= 1e-8
    diff = np.abs(g(A[ok]) - g(B[ok]))
    if not ok.any():
        return 0.0
    return float(np.max(diff.max(axis=1) / sep[ok]))


def check_local_attraction(minimum: Minimum, delta: float, model, eta: float, n_samples: int = 2000,
                           seed: int = 0) -> float:
    """Fraction of sampled ``A in B_delta(mu) \\ mu`` where a deterministic step on R
    strictly decreases the L21 distance to the projection of ``A``."""
    g = _grad_fn(model, minimum.arch)
    rng = np.random.default_rng(seed)
    _, A = sample_neighborhood(minimum, delta, n_samples, rng)
    idx, d0 = minimum.nearest(A)
    A, idx, d0 = A[d0 > 0], idx[d0 > 0], d0[d0 > 0]
    step = A - eta * g(A)
    d1 = l21_batch(minimum.arch, step - minimum.points[idx])
    return float(np.mean(d1 < d0))


@dataclass(frozen=True)
class DimensionFit:
    d_hat: float
    c_mu_hat: float
    eps_grid: tuple
    counts: tuple


def default_eps_grid(points: np.ndarray, k: int = 6) -> np.ndarray:
    """Geometric grid from above the cloud spacing up to a quarter of its extent."""
    span = float(np.sqrt(np.sum((points.max(axis=0) - points.min(axis=0)) ** 2)))
    if span == 0:
        return np.geomspace(1e-3, 1e-1, k)
    # below ~2x the nearest-neighbour spacing every point is its own ball
    nn = cKDTree(points).query(points, k=2)[0][:, 1] if len(points) > 1 else np.zeros(1)
    lo = max(span / 64, 2.0 * float(np.median(nn)))
    return np.geomspace(min(lo, span / 8), span / 4, k)


def estimate_minimum_dimension(minimum, eps_grid: Optional[Sequence[float]] = None,
                               metric: str = "F") -> DimensionFit:
    """Least-squares fit of ``log N(eps)`` against ``-log eps``."""
    pts = minimum.points if isinstance(minimum, Minimum) else np.atleast_2d(np.asarray(minimum, dtype=float))
    arch = minimum.arch if isinstance(minimum, Minimum) else None
    if eps_grid is None:
        eps_grid = default_eps_grid(pts)
    eps_grid = np.asarray(eps_grid, dtype=float)
    if len(eps_grid) < 4:
        raise ValueError("eps_grid needs at least 4 scales")
    if pts.shape[0] == 1:
        return DimensionFit(0.0, 1.0, tuple(eps_grid), tuple([1] * len(eps_grid)))
    counts = np.array([greedy_covering_oracle(pts, e, metric, arch) for e in eps_grid])
    slope, intercept = np.polyfit(-np.log(eps_grid), np.log(counts), 1)
    return DimensionFit(float(max(slope, 0.0)), float(math.exp(intercept)), tuple(eps_grid), tuple(int(c) for c in counts))


def C_mu_from_fit(fit: DimensionFit) -> float:
    """Neighborhood-covering constant used by default: ``1 + max(0, log c_mu_hat)``."""
    return 1.0 + max(0.0, math.log(fit.c_mu_hat))
