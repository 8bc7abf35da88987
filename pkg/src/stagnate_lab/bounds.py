"""Closed-form bounds: zeta products, reaching / non-escape / stagnation
probabilities, covering numbers, Rademacher and Dudley terms, and the
generalization-gap and optimization-error envelopes.

Probability-valued results are clamped to [0, 1] and log-counts to >= 0;
whenever a clamp fires the returned ``BoundReport`` carries
``formula_valid=False`` and a note saying why.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .net_core import Architecture, ParamTuple, forward_batch, l21_batch, norm_spectral


class BoundReport(float):
    """A float carrying its formula id, inputs and validity flag."""

    def __new__(cls, value, formula_id: str, inputs: Optional[dict] = None, formula_valid: bool = True,
                notes: Sequence[str] = (), extra: Optional[dict] = None):
        obj = super().__new__(cls, value)
        obj.formula_id = formula_id
        obj.inputs = dict(inputs or {})
        obj.formula_valid = bool(formula_valid)
        obj.notes = list(notes)
        obj.extra = dict(extra or {})
        return obj

    @property
    def value(self) -> float:
        return float(self)

    def to_dict(self) -> dict:
        return {"formula_id": self.formula_id, "inputs": _plain(self.inputs), "value": self.value,
                "formula_valid": self.formula_valid, "notes": list(self.notes), "extra": _plain(self.extra)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_row(self, input_keys: Sequence[str]) -> list[str]:
        row = [self.formula_id, format(self.value, ".17g"), str(self.formula_valid).lower(), "; ".join(self.notes)]
        return row + [_fmt(self.inputs.get(k, "")) for k in input_keys]

    def __repr__(self):
        flag = "" if self.formula_valid else ", invalid"
        return f"BoundReport({self.formula_id}={self.value!r}{flag})"


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def reports_to_csv(reports: Sequence[BoundReport]) -> str:
    keys = sorted({k for r in reports for k in r.inputs})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["formula_id", "value", "formula_valid", "notes"] + keys)
    for r in reports:
        w.writerow(r.csv_row(keys))
    return buf.getvalue()


@dataclass(frozen=True)
class BoundInputs:
    """Constants feeding the closed forms. Unset constants default to 1."""

    L: int = 2
    hbar: int = 1
    h0: int = 1
    D: int = 2
    n: int = 100
    m: int = 1
    K: int = 1
    d: float = 1.0
    delta: float = 0.5
    alpha: float = 1.0
    eta_c: float = 1.0
    T: int = 1000
    t_lo: Optional[int] = None
    t_bar: Optional[int] = None
    S: float = 1.0
    s_list: tuple = ()
    cG: float = 1.0
    cG_lower: float = 1.0
    log_det_G: Optional[float] = None
    C_Theta: float = 1.0
    C_gradR: float = 1.0
    xi: float = 1.0
    c_mu: float = 1.0
    C_mu: float = 1.0
    C_front: float = 1.0
    C_opt: float = 1.0
    C_xi_mu: float = 1.0
    B: float = 1.0
    lam: float = 0.0
    C_tail: float = 1.0 / 128.0
    # n-size hypothesis constants (never made numeric upstream)
    beta: float = 1.0
    beta0: float = 1.0
    C_hyp: float = 1.0

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "BoundInputs":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown bound inputs {sorted(unknown)}")
        d = dict(d)
        if "s_list" in d:
            d["s_list"] = tuple(d["s_list"])
        return cls(**d)

    def replace(self, **kw) -> "BoundInputs":
        return BoundInputs.from_dict({**asdict(self), **kw})

    def eta(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.minimum(1.0, self.eta_c * t ** (-self.alpha))

    @property
    def C_G(self) -> float:
        """``2 sqrt(|I| / |G|)``, from ``log_det_G`` or conservatively from ``cG_lower``."""
        ld = self.log_det_G if self.log_det_G is not None else self.D * math.log(self.cG_lower)
        return 2.0 * math.exp(-0.5 * ld)

    @property
    def C_mLhD(self) -> float:
        return self.C_tail * self.D * self.m / (self.L * self.hbar)

    @property
    def log_C_mDG(self) -> float:
        return -math.log(self.m) - 0.5 * self.D * math.log(2.0 * math.pi * self.cG ** 2)

    @property
    def C_mDG(self) -> float:
        return math.exp(self.log_C_mDG)

    @property
    def C_mGTheta(self) -> float:
        return self.m * self.C_Theta ** 2 / self.cG_lower ** 2

    @property
    def small_step_threshold(self) -> float:
        return 1.0 / (4.0 * self.C_gradR * math.sqrt(self.L * self.hbar))


# ------------------------------------------------------------------ zeta

def _log_factors(c, c_prime, kappa, taus, log_c: Optional[float] = None):
    """``log(1 - c exp(-c' tau^kappa))`` per tau; ``-inf`` where the term is >= 1."""
    taus = np.asarray(taus, dtype=float)
    lc = math.log(c) if log_c is None else log_c
    log_term = lc - c_prime * taus ** kappa
    term = np.exp(log_term)
    out = np.full(taus.shape, -np.inf)
    ok = log_term < 0
    out[ok] = np.log1p(-term[ok])
    return out, bool(np.all(ok))


def zeta(t_lo: int, t_hi: int, c: float, c_prime: float, kappa: float) -> float:
    """``prod_{tau=t_lo}^{t_hi} (1 - c exp(-c' tau^kappa))``, summed in log space."""
    if not (0 < c < 1):
        raise ValueError("zeta needs 0 < c < 1")
    if c_prime <= 0:
        raise ValueError("zeta needs c' > 0")
    if kappa < 0:
        raise ValueError("zeta needs kappa >= 0")
    if int(t_lo) != t_lo or int(t_hi) != t_hi or t_lo < 1 or t_hi < 1:
        raise ValueError("t_lo and t_hi must be integers >= 1")
    if t_lo > t_hi:
        return 1.0
    lf, _ = _log_factors(c, c_prime, kappa, np.arange(t_lo, t_hi + 1))
    return float(np.exp(np.sum(lf)))


def _check_threshold_args(t_lo, t_hi, eps):
    if t_hi == t_lo:
        raise ValueError("t_hi == t_lo makes the exponent 1/(t_hi - t_lo) degenerate")
    if t_hi < t_lo or t_lo < 1:
        raise ValueError("need 1 <= t_lo < t_hi")
    if not (0 < eps < 1):
        raise ValueError("eps must lie in (0, 1)")


def zeta_threshold_upper(t_lo: int, t_hi: int, c: float, c_prime: float, kappa: float, eps: float,
                         literal: bool = False) -> bool:
    """Whether the sufficient condition for ``zeta <= eps`` holds.

    Default: ``exp(c' t_hi^kappa) (1 - eps^(1/N)) <= c`` with ``N = t_hi - t_lo + 1``
    factors, which bounds every factor by ``eps^(1/N)``. ``literal=True``
    evaluates the uncorrected form with ``t_lo`` and ``N = t_hi - t_lo``,
    which does not certify the claim in general.
    """
    _check_threshold_args(t_lo, t_hi, eps)
    if literal:
        N, tau = t_hi - t_lo, t_lo
    else:
        N, tau = t_hi - t_lo + 1, t_hi
    return bool(c_prime * tau ** kappa + math.log1p(-eps ** (1.0 / N)) <= math.log(c))


def zeta_threshold_lower(t_lo: int, t_hi: int, c: float, kappa: float, eps: float,
                         literal: bool = False) -> float:
    """Smallest ``c'`` of the sufficient condition for ``zeta >= 1 - eps``.

    Default: ``c' >= t_lo^-kappa log(c / (1 - (1-eps)^(1/N)))`` with
    ``N = t_hi - t_lo + 1``, clamped at 0. ``literal=True`` uses ``t_hi`` and
    ``N = t_hi - t_lo`` (not a valid certificate in general).
    """
    _check_threshold_args(t_lo, t_hi, eps)
    if literal:
        N, tau = t_hi - t_lo, t_hi
    else:
        N, tau = t_hi - t_lo + 1, t_lo
    root = -math.expm1(math.log1p(-eps) / N)
    val = float(tau) ** (-kappa) * math.log(c / root)
    return val if literal else max(0.0, val)


# ----------------------------------------------------------- probabilities

def reaching_prob_lower(inputs: BoundInputs, t_lo: int, t_hi: int) -> BoundReport:
    """``1 - prod_t (1 - lam C_{m,D,G} exp(-C_{m,G,Theta} eta_t^-2))``.

    With ``eta_c = 1`` this is ``1 - zeta(t_lo, t_hi, lam C_{m,D,G}, C_{m,G,Theta}, 2 alpha)``.
    """
    rec = {**inputs.to_dict(), "t_lo": t_lo, "t_hi": t_hi}
    if inputs.lam <= 0 or t_hi < t_lo:
        return BoundReport(0.0, "reaching_prob_lower", rec)
    taus = np.arange(t_lo, t_hi + 1)
    log_c = math.log(inputs.lam) + inputs.log_C_mDG
    lf, ok = _log_factors(1.0, inputs.C_mGTheta, 1.0, inputs.eta(taus) ** -2.0, log_c=log_c)
    if not ok:
        return BoundReport(0.0, "reaching_prob_lower", rec, False,
                           ["per-step reaching term exceeds 1; bound set to 0"])
    return BoundReport(max(0.0, float(-np.expm1(np.sum(lf)))), "reaching_prob_lower", rec)


def _non_escape_log_factors(inputs: BoundInputs, taus):
    arg = inputs.C_mLhD * inputs.delta ** 2 * inputs.eta(taus) ** -2.0
    return _log_factors(inputs.C_G, 1.0, 1.0, arg)


def non_escape_lower(inputs: BoundInputs, t_from: int, T: int) -> BoundReport:
    """``prod_{tau=t_from+1}^T (1 - C_G exp(-C_{m,L,hbar,D} delta^2 eta_tau^-2))``."""
    rec = {**inputs.to_dict(), "t_from": t_from, "T": T}
    if T <= t_from:
        return BoundReport(1.0, "non_escape_lower", rec)
    lf, ok = _non_escape_log_factors(inputs, np.arange(t_from + 1, T + 1))
    notes = [] if ok else ["C_G exp(...) > 1 for some step; those factors clamped to 0"]
    return BoundReport(float(np.exp(np.sum(lf))), "non_escape_lower", rec, ok, notes)


def noise_escape_bound(D: int, delta: float, eps: float, L: int, hbar: int, cG_lower: float) -> BoundReport:
    """``exp(-D (delta - eps)^2 / (128 L hbar c_G'))``."""
    if eps < 0 or eps > delta:
        raise ValueError("need 0 <= eps <= delta")
    if delta >= D:
        raise ValueError("need delta < D")
    v = math.exp(-D * (delta - eps) ** 2 / (128.0 * L * hbar * cG_lower))
    return BoundReport(v, "noise_escape_bound",
                       {"D": D, "delta": delta, "eps": eps, "L": L, "hbar": hbar, "cG_lower": cG_lower})


def stagnation_lower_bound(inputs: BoundInputs, t_lo: Optional[int] = None):
    """Maximize non-escape x reaching over ``t_bar in [t_lo, T]``; returns ``(p_star, t_bar)``.

    ``t_lo`` defaults to the first step with ``eta_t <= 1/(4 C_gradR sqrt(L hbar))``.
    ``p_star.extra`` holds the union-bound simplification ``c2 lam (1 - e^{-c1 delta^2})``.
    """
    T = inputs.T
    if t_lo is None:
        t_lo = _first_small(inputs)
    rec = {**inputs.to_dict(), "t_lo": t_lo}
    notes, valid = [], True
    if inputs.alpha < 1:
        notes.append("alpha < 1")
    hyp = _n_hypothesis(inputs, t_lo)
    if not hyp:
        notes.append("n-size hypothesis fails")
    if t_lo > T or inputs.lam <= 0:
        extra = {"hypotheses_ok": hyp, "simplified_form": 0.0, "c1": None, "c2": None, "t_lo": t_lo}
        return BoundReport(0.0, "stagnation_lower_bound", rec, valid, notes, extra), t_lo

    taus = np.arange(1, T + 1)
    log_reach_c = math.log(inputs.lam) + inputs.log_C_mDG
    lr, ok_r = _log_factors(1.0, inputs.C_mGTheta, 1.0, inputs.eta(taus) ** -2.0, log_c=log_reach_c)
    le, ok_e = _non_escape_log_factors(inputs, taus)
    # reaching over [t_lo, t_bar]; non-escape over (t_bar, T]
    reach_prefix = np.cumsum(lr[t_lo - 1:])
    reach = -np.expm1(reach_prefix)
    if not ok_r:
        first_bad = np.argmax(~np.isfinite(lr[t_lo - 1:]))
        reach[first_bad:] = 0.0
        valid = False
        notes.append("per-step reaching term exceeds 1; those t_bar give 0")
    suffix = np.concatenate([np.cumsum(le[::-1])[::-1], [0.0]])
    non_escape = np.exp(suffix[t_lo:])
    if not ok_e:
        valid = False
        notes.append("non-escape factors clamped to 0 where C_G exp(...) > 1")
    prod = non_escape * np.clip(reach, 0.0, 1.0)
    k = int(np.argmax(prod))
    t_bar = t_lo + k
    p = float(prod[k])

    # union-bound simplification at t_bar = t_lo
    log_c2 = inputs.log_C_mDG - inputs.C_mGTheta * float(inputs.eta(t_lo)) ** -2.0
    c2 = math.exp(log_c2)
    m_steps = T - t_lo
    if m_steps > 0:
        log_tail = math.log(m_steps * inputs.C_G) - inputs.C_mLhD * inputs.delta ** 2 * float(inputs.eta(t_lo + 1)) ** -2.0
        c1 = -log_tail / inputs.delta ** 2 if inputs.delta > 0 else 0.0
        keep = max(0.0, -math.expm1(log_tail)) if log_tail < 0 else 0.0
    else:
        c1, keep = math.inf, 1.0
    simplified = min(1.0, c2 * inputs.lam) * keep
    extra = {"hypotheses_ok": hyp, "simplified_form": simplified, "c1": c1, "c2": c2, "t_lo": t_lo,
             "reach_at_argmax": float(reach[k]), "non_escape_at_argmax": float(non_escape[k])}
    return BoundReport(p, "stagnation_lower_bound", rec, valid, notes, extra), t_bar


def _first_small(inputs: BoundInputs) -> int:
    thr = inputs.small_step_threshold
    if float(inputs.eta(1)) <= thr:
        return 1
    t = int(math.ceil((inputs.eta_c / thr) ** (1.0 / inputs.alpha)))
    while float(inputs.eta(t)) > thr:
        t += 1
    while t > 1 and float(inputs.eta(t - 1)) <= thr:
        t -= 1
    return t


def _n_hypothesis(inputs: BoundInputs, t_lo: int) -> bool:
    n = inputs.n
    if n < 2:
        return False
    need = (float(inputs.eta(t_lo)) + 1.0) ** (2.0 * (inputs.beta0 + 1.0)) * inputs.C_hyp ** 2 * inputs.xi ** 2 \
        * inputs.d / (inputs.beta * inputs.delta) ** 2 if inputs.delta > 0 else math.inf
    return n / math.log(n) >= need


# --------------------------------------------------------------- covering

def _nonneg(v, fid, rec, notes=()):
    if v < 0:
        return BoundReport(0.0, fid, rec, False, list(notes) + ["negative log-count clamped to 0"])
    return BoundReport(v, fid, rec, True, list(notes))


def covering_L21_ball_bound(a: float, d_cols: int, h: int, eps: float) -> BoundReport:
    """``a^2 d^2 / eps^2 log(2 d h)`` nats for ``{A in R^{h x d}: ||A||_{2,1} <= a}`` in Frobenius."""
    if a <= 0 or eps <= 0:
        raise ValueError("need a > 0 and eps > 0")
    v = a * a * d_cols * d_cols / (eps * eps) * math.log(2 * d_cols * h)
    return _nonneg(v, "covering_L21_ball", {"a": a, "d_cols": d_cols, "h": h, "eps": eps})


def covering_neighborhood_bound(L: int, hbar: int, delta: float, eps: float) -> BoundReport:
    """``L delta^2 hbar^2 / eps^2 log(2 hbar)`` nats for an L21 ball of radius delta."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    v = L * delta ** 2 * hbar ** 2 / eps ** 2 * math.log(2 * hbar)
    return _nonneg(v, "covering_neighborhood", {"L": L, "hbar": hbar, "delta": delta, "eps": eps})


def covering_union_bound(inputs: BoundInputs, eps: float) -> BoundReport:
    """``C_mu d log(K/eps) + 4 L delta^2 hbar^2 / eps^2 log(2 hbar)``, for ``eps <= sqrt(L hbar)``."""
    if not (0 < eps <= math.sqrt(inputs.L * inputs.hbar)):
        raise ValueError("eps must lie in (0, sqrt(L hbar)]")
    first = inputs.C_mu * inputs.d * math.log(inputs.K / eps) if inputs.d > 0 else 0.0
    v = first + 4.0 * inputs.L * inputs.delta ** 2 * inputs.hbar ** 2 / eps ** 2 * math.log(2 * inputs.hbar)
    return _nonneg(v, "covering_union", {**inputs.to_dict(), "eps": eps})


def covering_function_class_bound(inputs: BoundInputs, n: int, eps: float) -> BoundReport:
    """``C_mu d log(K/eps) + 4 n h0 S^2 L^2 delta^2 log(2 hbar^2) / eps^2`` nats."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    first = inputs.C_mu * inputs.d * math.log(inputs.K / eps) if inputs.d > 0 else 0.0
    v = first + 4.0 * n * inputs.h0 * inputs.S ** 2 * inputs.L ** 2 * inputs.delta ** 2 \
        * math.log(2 * inputs.hbar ** 2) / eps ** 2
    return _nonneg(v, "covering_function_class", {**inputs.to_dict(), "n": n, "eps": eps})


def _as_points(points, arch: Optional[Architecture]):
    if len(points) and isinstance(points[0], ParamTuple):
        arch = points[0].arch if arch is None else arch
        return np.stack([p.flat() for p in points]), arch
    return np.atleast_2d(np.asarray(points, dtype=float)), arch


def greedy_covering_oracle(points, eps: float, metric: str = "F", arch: Optional[Architecture] = None) -> int:
    """Farthest-point greedy cover count at radius ``eps``.

    Centers are pairwise more than ``eps`` apart, so the count is also an
    ``eps``-packing of the set. ``metric='L21'`` needs ``arch`` unless the
    points are ``ParamTuple``s.
    """
    X, arch = _as_points(points, arch)
    if X.shape[0] == 0:
        return 0
    if X.ndim == 1 or X.shape[0] == 1:
        return 1
    if metric == "F":
        dist = lambda i: np.sqrt(np.sum((X - X[i]) ** 2, axis=1))
    elif metric == "L21":
        if arch is None:
            raise ValueError("L21 metric needs an architecture")
        dist = lambda i: l21_batch(arch, X - X[i])
    else:
        raise ValueError(f"unknown metric {metric!r}")
    mind = dist(0)
    count = 1
    while True:
        i = int(np.argmax(mind))
        if mind[i] <= eps:
            return count
        count += 1
        mind = np.minimum(mind, dist(i))


# ------------------------------------------------------------ capacity

def spectral_sup(atlas, delta: Optional[float] = None):
    """Per-layer ``s_l = max_cloud ||A_l||_s + delta`` and ``S = prod s_l``."""
    delta = atlas.delta if delta is None else delta
    arch = atlas.arch
    s = np.zeros(arch.depth)
    for mu in atlas.minima:
        for row in mu.points:
            for i, a in enumerate(arch.split(row)):
                s[i] = max(s[i], norm_spectral(a))
    s = s + delta
    return float(np.prod(s)), [float(v) for v in s]


@dataclass(frozen=True)
class RademacherEstimate:
    value: float
    se: float
    n_draws: int


def rademacher_empirical(param_grid, dataset, model=None, n_draws: int = 2000, seed: int = 0,
                         absolute: bool = False, values: Optional[np.ndarray] = None) -> RademacherEstimate:
    """Monte-Carlo empirical Rademacher complexity of network outputs over ``param_grid``.

    The sup runs over the finite grid only, so this under-estimates the
    complexity of the continuous class. ``absolute=True`` uses
    ``sup |n^-1 sum u_i f(X_i)|``. ``values`` ``(G, n)`` bypasses the network.
    """
    if values is None:
        grid = list(param_grid)
        arch = grid[0].arch
        flat = np.stack([p.flat() for p in grid])
        values = forward_batch(arch, arch.split(flat), dataset.X)
    F = np.atleast_2d(np.asarray(values, dtype=float))
    n = F.shape[1]
    rng = np.random.default_rng(seed)
    sups = np.empty(n_draws)
    chunk = 1000
    for s in range(0, n_draws, chunk):
        k = min(chunk, n_draws - s)
        u = rng.integers(0, 2, size=(k, n)) * 2.0 - 1.0
        corr = u @ F.T / n
        if absolute:
            corr = np.abs(corr)
        sups[s:s + k] = corr.max(axis=1)
    return RademacherEstimate(float(sups.mean()), float(sups.std(ddof=1) / math.sqrt(n_draws)), n_draws)


def rademacher_abs_mean_exact(n: int) -> float:
    """``E |n^-1 sum_i u_i|`` for ``n`` independent signs."""
    k = np.arange(n + 1)
    return float(np.sum(stats.binom.pmf(k, n, 0.5) * np.abs(2 * k - n)) / n)


def dudley_bound(inputs: BoundInputs, n: Optional[int] = None, grid_size: int = 64) -> BoundReport:
    """Entropy-integral parts ``(T1, T2)``; ``extra`` holds both and the optimal alpha."""
    n = inputs.n if n is None else n
    B = inputs.B
    t1 = math.sqrt(inputs.C_mu * inputs.d / n) * (B * math.sqrt(math.log(inputs.K)) + math.sqrt(B) + math.sqrt(math.pi))
    a = math.sqrt(inputs.h0 * inputs.S ** 2 * inputs.L ** 2 * inputs.delta ** 2 * math.log(2 * inputs.hbar ** 2))
    alphas = np.geomspace(1.0 / n, math.sqrt(n), grid_size)
    vals = 4.0 * alphas / math.sqrt(n) + 12.0 * a / math.sqrt(n) * np.log(math.sqrt(n) / alphas)
    k = int(np.argmin(vals))
    t2 = float(vals[k])
    return BoundReport(t1 + t2, "dudley_bound", {**inputs.to_dict(), "n": n}, True, [],
                       {"T1": t1, "T2": t2, "alpha_star": float(alphas[k])})


# ------------------------------------------------------------- envelopes

def generalization_gap_bound(inputs: BoundInputs, n: Optional[int] = None, eps: float = 0.05) -> BoundReport:
    """``C (sqrt(d (1 + log K)) + S L delta sqrt(log hbar) log n) / sqrt(n) + 3 B sqrt(log(1/eps) / 2n)``."""
    n = inputs.n if n is None else n
    if not (0 < eps < 1):
        raise ValueError("eps must lie in (0, 1)")
    main = math.sqrt(inputs.d * (1.0 + math.log(inputs.K))) \
        + inputs.S * inputs.L * inputs.delta * math.sqrt(math.log(inputs.hbar)) * math.log(n)
    v = inputs.C_front * main / math.sqrt(n) + 3.0 * inputs.B * math.sqrt(math.log(1.0 / eps) / (2.0 * n))
    return BoundReport(v, "generalization_gap_bound", {**inputs.to_dict(), "n": n, "eps": eps})


class ScheduleError(ValueError):
    pass


def optimization_error_bound(inputs: BoundInputs, T: Optional[int] = None, schedule=None) -> BoundReport:
    """``C delta^2 (1 + 1/m + n^-1/2) / T``; only valid for ``eta_t = c / t``."""
    T = inputs.T if T is None else T
    alpha = inputs.alpha if schedule is None else schedule.alpha
    c = inputs.eta_c if schedule is None else schedule.c
    if alpha != 1.0 or c > 1.0:
        raise ScheduleError("the 1/T optimization bound requires eta_t = c/t (alpha = 1, c <= 1)")
    v = inputs.C_opt * inputs.delta ** 2 * (1.0 + 1.0 / inputs.m + inputs.n ** -0.5) / T
    return BoundReport(v, "optimization_error_bound", {**inputs.to_dict(), "T": T})


def xi_bound(n: int, eps: float, inputs: BoundInputs) -> BoundReport:
    """``C_xi_mu n^-1/4 sqrt(L^2 delta^2 hbar^4 / eps * log(hbar D / eps))``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    inner = inputs.L ** 2 * inputs.delta ** 2 * inputs.hbar ** 4 / eps * math.log(inputs.hbar * inputs.D / eps)
    notes = []
    if inner < 0:
        notes.append("log(hbar D / eps) < 0; clamped")
        inner = 0.0
    v = inputs.C_xi_mu * n ** -0.25 * math.sqrt(inner)
    return BoundReport(v, "xi_bound", {**inputs.to_dict(), "n": n, "eps": eps}, not notes, notes)
