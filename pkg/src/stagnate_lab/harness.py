"""Command-line front end: configs, experiment scenarios, check registry and writers.

Every command reads one JSON config (schema version 1, unknown keys
rejected) and writes plain CSV/JSON files into the output directory.
Floats go out with 17 significant digits; nothing time-dependent is
written, so equal (config, seed, thread cap) give equal bytes.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .bounds import (BoundInputs, BoundReport, _plain, covering_function_class_bound, covering_L21_ball_bound,
                     covering_neighborhood_bound, covering_union_bound, dudley_bound, generalization_gap_bound,
                     greedy_covering_oracle, noise_escape_bound, non_escape_lower, optimization_error_bound,
                     rademacher_abs_mean_exact, rademacher_empirical, reaching_prob_lower, reports_to_csv,
                     spectral_sup, stagnation_lower_bound, zeta, zeta_threshold_lower, zeta_threshold_upper)
from .geometry import (Minimum, MinimaAtlas, C_mu_from_fit, check_essential_convexity, check_local_attraction,
                       estimate_lebesgue_measure, estimate_minimum_dimension, estimate_smoothness_constant,
                       hit_times, sample_neighborhood, stagnation_estimate_from_flags, stagnation_flags, toy_atlas)
from .net_core import (Architecture, ParamSpace, ParamTuple, backprop, forward_batch, l21_batch, loss_value,
                       norm_F, norm_L21)
from .optimizer import GaussianSgdConfig, NoiseModel, NonFiniteGradientError, Schedule, run_ensemble
from .risk import (TOY_ARCH, Dataset, RiskModel, estimate_xi, sample_dataset, toy_relu_model)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG = 0, 1, 2
TOY_RISK_MIN = 0.25
TOY_GRAD_LIP_B1 = math.sqrt(2.0) * (1.0 + 4.0 / 3.0)


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------- config

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ArchCfg(_Section):
    widths: list[int] = [1, 1, 1]
    activation: Literal["identity", "relu"] = "relu"


class RiskCfg(_Section):
    oracle: Literal["toy_relu", "constant"] = "toy_relu"
    constant: float = 1.0
    n_data: int = Field(200, ge=1)
    data_seed: int = 1
    n_mc: int = Field(10**6, ge=1)
    # step on the expected risk instead of the empirical one
    expected: bool = False


class NoiseCfg(_Section):
    kind: Literal["scalar", "diagonal"] = "scalar"
    sigma2: float = Field(1.0, ge=0)
    diag: Optional[list[float]] = None
    m: int = Field(1, ge=1)


class ScheduleCfg(_Section):
    c: float = Field(0.5, gt=0)
    alpha: float = Field(1.0, gt=0)


class SpaceCfg(_Section):
    C_Theta: float = Field(4.0, gt=0)


class AtlasCfg(_Section):
    builtin: Optional[Literal["toy"]] = "toy"
    path: Optional[str] = None
    delta: float = Field(0.5, ge=0)
    a_lo: float = Field(0.75, gt=0)
    a_hi: float = Field(2.0, gt=0)
    n_points: Optional[int] = Field(None, ge=2)


class McCfg(_Section):
    n_runs: int = Field(500, ge=1)
    T: int = Field(1000, ge=1)
    t_bar: Optional[int] = Field(None, ge=0)
    deltas: list[float] = [0.1, 0.25, 0.5, 1.0]
    sigma2_sweep: list[float] = []
    n_lebesgue: int = Field(10**5, ge=1)
    parts: int = Field(8, ge=1)
    summary_rows: int = Field(1000, ge=2)


class BoundsCfg(_Section):
    C_tail: float = Field(1.0 / 128.0, gt=0)
    C_front: float = 1.0
    C_opt: float = 1.0
    C_xi_mu: float = 1.0
    beta: float = 1.0
    beta0: float = 1.0
    C_hyp: float = 1.0
    C_gradR: Optional[float] = Field(None, gt=0)
    xi: Optional[float] = Field(None, ge=0)
    d: Optional[float] = Field(None, ge=0)
    C_mu: Optional[float] = Field(None, ge=0)
    gap_eps: float = Field(0.05, gt=0, lt=1)
    smoothness_pairs: int = Field(10**4, ge=1)


class LandscapeCfg(_Section):
    center: Optional[list[float]] = None
    span: float = Field(1.0, gt=0)
    grid: int = Field(41, ge=2)
    traj_T: int = Field(200, ge=0)
    filter_normalize: bool = False


class ChecksCfg(_Section):
    escape_draws: int = Field(10**5, ge=100)
    mc_runs: int = Field(200, ge=100)
    mc_T: int = Field(300, ge=2)
    non_escape_sigma2: float = Field(4.0, gt=0)
    cover_points: int = Field(3000, ge=10)
    rademacher_draws: int = Field(2000, ge=10)
    convexity_pairs: int = Field(2000, ge=10)
    gap_n: int = Field(100, ge=2)


class ExperimentConfig(_Section):
    version: Literal[1] = 1
    scenario: Optional[str] = None
    seed: int = 0
    out: str = "out"
    arch: ArchCfg = ArchCfg()
    risk: RiskCfg = RiskCfg()
    noise: NoiseCfg = NoiseCfg()
    schedule: ScheduleCfg = ScheduleCfg()
    space: SpaceCfg = SpaceCfg()
    init: Optional[list[float]] = None
    atlas: AtlasCfg = AtlasCfg()
    mc: McCfg = McCfg()
    bounds: BoundsCfg = BoundsCfg()
    landscape: LandscapeCfg = LandscapeCfg()
    checks: ChecksCfg = ChecksCfg()

    def updated(self, **sections) -> "ExperimentConfig":
        """Copy with some fields replaced; section dicts are merged, not swapped."""
        data = self.model_dump()
        for k, v in sections.items():
            if isinstance(v, dict) and isinstance(data.get(k), dict):
                data[k] = {**data[k], **v}
            else:
                data[k] = v
        return parse_config(data)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config(data)


# ---------------------------------------------------------------- context

def _constant_model(value: float, arch: Architecture) -> RiskModel:
    def cf(p):
        return float(value)

    def cf_grad(p):
        return ParamTuple.zeros(p.arch)

    def sampler(rng, n):
        return rng.uniform(0.0, 1.0, size=(n, arch.h0)), np.zeros(n)

    return RiskModel(sampler=sampler, closed_form=cf, closed_form_grad=cf_grad,
                     closed_form_batch=lambda flat: np.full(len(flat), float(value)),
                     closed_form_grad_batch=lambda flat: np.zeros_like(flat),
                     B=float(value), domain=(0.0, 1.0), name="constant")


@dataclass
class Context:
    cfg: ExperimentConfig
    arch: Architecture
    model: RiskModel
    dataset: Dataset
    atlas: Optional[MinimaAtlas]
    space: ParamSpace
    noise: NoiseModel
    schedule: Schedule
    init: ParamTuple
    sgd_dataset: Optional[Dataset]

    def sgd(self, noise: Optional[NoiseModel] = None, T: Optional[int] = None,
            init: Optional[ParamTuple] = None) -> GaussianSgdConfig:
        return GaussianSgdConfig(self.init if init is None else init, self.model,
                                 self.noise if noise is None else noise, self.schedule,
                                 self.cfg.mc.T if T is None else T, self.space, self.sgd_dataset)

    def need_atlas(self) -> MinimaAtlas:
        if self.atlas is None:
            raise ConfigError("this command needs an atlas (atlas.builtin or atlas.path)")
        return self.atlas


def build_context(cfg: ExperimentConfig) -> Context:
    try:
        arch = Architecture(tuple(cfg.arch.widths), cfg.arch.activation)
    except ValueError as exc:
        raise ConfigError(f"bad architecture: {exc}") from exc
    if cfg.risk.oracle == "toy_relu":
        if arch != TOY_ARCH:
            raise ConfigError("the toy_relu oracle needs widths [1, 1, 1] and relu")
        model = toy_relu_model(n_mc=cfg.risk.n_mc, seed=cfg.risk.data_seed)
    else:
        model = _constant_model(cfg.risk.constant, arch)
    dataset = sample_dataset(model, cfg.risk.n_data, cfg.risk.data_seed)

    atlas = None
    a = cfg.atlas
    if a.path is not None:
        try:
            atlas = MinimaAtlas.from_json(Path(a.path).read_text(), delta=a.delta)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load atlas {a.path}: {exc}") from exc
        if atlas.arch != arch:
            raise ConfigError("atlas architecture differs from the configured one")
    elif a.builtin == "toy":
        if arch != TOY_ARCH:
            raise ConfigError("the builtin toy atlas needs the toy architecture")
        if not a.a_lo < a.a_hi:
            raise ConfigError("atlas needs a_lo < a_hi")
        atlas = toy_atlas(a.delta, a.a_lo, a.a_hi, a.n_points)

    try:
        if cfg.noise.kind == "scalar":
            noise = NoiseModel("scalar", sigma2=cfg.noise.sigma2, m=cfg.noise.m)
        else:
            if cfg.noise.diag is None or len(cfg.noise.diag) != arch.D:
                raise ConfigError(f"diagonal noise needs {arch.D} variances")
            noise = NoiseModel("diagonal", diag=np.array(cfg.noise.diag), m=cfg.noise.m)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if cfg.init is None:
        init_flat = np.full(arch.D, 0.5)
    else:
        if len(cfg.init) != arch.D:
            raise ConfigError(f"init needs {arch.D} numbers")
        init_flat = np.array(cfg.init, dtype=float)
    init = ParamTuple.from_flat(arch, init_flat)
    space = ParamSpace(cfg.space.C_Theta)
    if not space.contains(init):
        raise ConfigError("init lies outside the parameter ball")
    use_expected = cfg.risk.expected or cfg.risk.oracle == "constant"
    return Context(cfg, arch, model, dataset, atlas, space, noise,
                   Schedule(cfg.schedule.c, cfg.schedule.alpha), init,
                   None if use_expected else dataset)


# -------------------------------------------------------- estimated inputs

def risk_values(ctx: Context, flat: np.ndarray):
    """``(R, R_n)`` at each row of ``flat``; ``R`` needs a closed form."""
    flat = np.atleast_2d(flat)
    if ctx.model.closed_form_batch is None:
        raise ConfigError("risk values need a closed-form expected risk")
    R = ctx.model.closed_form_batch(flat)
    f = forward_batch(ctx.arch, ctx.arch.split(flat), ctx.dataset.X)
    Rn = np.mean(loss_value(ctx.dataset.Y[None, :], f, **ctx.model.loss_kwargs()), axis=1)
    return R, Rn


def loss_sup(ctx: Context, atlas: MinimaAtlas, n_params: int = 4000, seed: int = 0) -> float:
    """Largest loss over sampled neighborhood parameters and the training inputs
    (plus a grid of the input interval for scalar inputs)."""
    if ctx.model.name == "constant":
        return float(ctx.model.B)
    rng = np.random.default_rng(seed)
    X, Y = ctx.dataset.X, ctx.dataset.Y
    if ctx.model.domain is not None and ctx.arch.h0 == 1:
        grid = np.linspace(*ctx.model.domain, 65)[:, None]
        yfill = np.full(len(grid), float(np.max(np.abs(Y))))
        X, Y = np.vstack([X, grid]), np.concatenate([Y, yfill])
    worst = 0.0
    for mu in atlas.minima:
        _, P = sample_neighborhood(mu, atlas.delta, n_params, rng)
        f = forward_batch(ctx.arch, ctx.arch.split(P), X)
        worst = max(worst, float(np.max(loss_value(Y[None, :], f, **ctx.model.loss_kwargs()))))
    return worst


@dataclass
class Estimates:
    d: float
    C_mu: float
    c_mu: float
    C_gradR: float
    xi: float
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"d": self.d, "C_mu": self.C_mu, "c_mu": self.c_mu, "C_gradR": self.C_gradR,
                "xi": self.xi, "notes": list(self.notes)}


def estimate_constants(ctx: Context) -> Estimates:
    """Delta-free inputs: minimum dimension, covering constant, smoothness and xi."""
    b = ctx.cfg.bounds
    atlas = ctx.need_atlas()
    notes = list(ctx.schedule.warnings)
    fits = [estimate_minimum_dimension(mu) for mu in atlas.minima]
    d_hat = max(f.d_hat for f in fits) if fits else 0.0
    c_mu_hat = max(f.c_mu_hat for f in fits) if fits else 1.0
    C_mu_hat = max(C_mu_from_fit(f) for f in fits) if fits else 1.0
    d = b.d if b.d is not None else d_hat
    C_mu = b.C_mu if b.C_mu is not None else C_mu_hat

    if b.C_gradR is not None:
        C_gradR = b.C_gradR
    elif ctx.model.closed_form_grad_batch is not None:
        C_gradR = estimate_smoothness_constant(None, 0.0, ctx.model, n_pairs=b.smoothness_pairs,
                                               seed=ctx.cfg.seed, box=ctx.space.radius, arch=ctx.arch)
        notes.append("C_gradR estimated over the parameter box")
        if C_gradR <= 0:
            C_gradR = 1e-12
    else:
        C_gradR = 1.0
        notes.append("C_gradR defaulted to 1 (no closed-form gradient)")

    if b.xi is not None:
        xi = b.xi
    elif ctx.model.name == "constant":
        xi = 0.0
    else:
        rng = np.random.default_rng(ctx.cfg.seed)
        pts = [ParamTuple.from_flat(ctx.arch, row)
               for mu in atlas.minima for row in sample_neighborhood(mu, atlas.delta, 8, rng)[1]]
        est = estimate_xi(pts, ctx.model.sampler, ctx.model, n_draws=10**4, seed=ctx.cfg.seed)
        xi = est.xi if est.ok else 1.0
        notes += est.notes
    return Estimates(float(d), float(C_mu), float(c_mu_hat), float(C_gradR), float(xi), notes)


def bound_inputs(ctx: Context, est: Estimates, delta: float, T: int, noise: Optional[NoiseModel] = None,
                 lam: Optional[float] = None) -> BoundInputs:
    noise = ctx.noise if noise is None else noise
    b = ctx.cfg.bounds
    atlas = ctx.need_atlas().with_delta(delta)
    if lam is None:
        lam = estimate_lebesgue_measure(atlas, ctx.space, ctx.cfg.mc.n_lebesgue, ctx.cfg.seed)[0] \
            if delta > 0 else 0.0
    S, s_list = spectral_sup(atlas, delta) if atlas.minima else (1.0, [])
    B = loss_sup(ctx, atlas, seed=ctx.cfg.seed) if delta > 0 else loss_sup(ctx, atlas.with_delta(0.0))
    cg_up, cg_lo = noise.upper, noise.lower
    return BoundInputs(
        L=ctx.arch.depth, hbar=ctx.arch.hbar, h0=ctx.arch.h0, D=ctx.arch.D, n=ctx.dataset.n, m=noise.m,
        K=max(atlas.K, 1), d=est.d, delta=delta, alpha=ctx.schedule.alpha, eta_c=ctx.schedule.c, T=T,
        S=S, s_list=tuple(s_list), cG=cg_up if cg_up > 0 else 1.0, cG_lower=cg_lo if cg_lo > 0 else 1.0,
        log_det_G=noise.log_det(D=ctx.arch.D) if cg_lo > 0 else None, C_Theta=ctx.space.radius,
        C_gradR=est.C_gradR, xi=est.xi, c_mu=est.c_mu, C_mu=est.C_mu, C_front=b.C_front, C_opt=b.C_opt,
        C_xi_mu=b.C_xi_mu, B=B, lam=float(lam), C_tail=b.C_tail, beta=b.beta, beta0=b.beta0, C_hyp=b.C_hyp)


def p_star(inputs: BoundInputs, noise: NoiseModel):
    """``(report, t_bar)``; zero noise gives a vacuous 0 since the formula needs ``c_G' > 0``."""
    if noise.lower <= 0:
        rep = BoundReport(0.0, "stagnation_lower_bound", inputs.to_dict(), False,
                          ["zero noise: bound undefined, reported as vacuous 0"],
                          {"hypotheses_ok": False, "simplified_form": 0.0, "t_lo": 1})
        return rep, 1
    return stagnation_lower_bound(inputs)


# ---------------------------------------------------------------- writers

def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(_plain(obj), sort_keys=True, indent=1) + "\n")


def _out_dir(cfg: ExperimentConfig, out) -> Path:
    p = Path(out if out is not None else cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_reports(out: Path, reports) -> None:
    write_json(out / "bounds.json", [r.to_dict() for r in reports])
    (out / "bounds.csv").write_text(reports_to_csv(reports))


def _summary_rows(dist: np.ndarray, deltas, n_rows: int):
    T = dist.shape[1] - 1
    stride = max(1, int(math.ceil((T + 1) / n_rows)))
    ts = list(range(0, T + 1, stride))
    if ts[-1] != T:
        ts.append(T)
    rows = []
    for t in ts:
        col = dist[:, t]
        q = np.quantile(col, [0.1, 0.5, 0.9])
        rows.append([t, *q, *[float(np.mean(col <= d)) for d in deltas]])
    return rows


# -------------------------------------------------------------- scenarios

def toy_pipeline(cfg: ExperimentConfig, out: Optional[Path] = None) -> dict:
    """Ensemble, p-hat against p*, gap and 1/T bounds on the configured problem."""
    ctx = build_context(cfg)
    atlas = ctx.need_atlas()
    delta, T, R = atlas.delta, cfg.mc.T, cfg.mc.n_runs
    est = estimate_constants(ctx)
    inputs = bound_inputs(ctx, est, delta, T)
    pstar, t_bar = p_star(inputs, ctx.noise)
    if cfg.mc.t_bar is not None:
        t_bar = cfg.mc.t_bar
    t_bar = min(t_bar, T)

    ens = ctx.sgd().ensemble(cfg.seed, R, monitor=atlas.distance, parts=cfg.mc.parts)
    flags = stagnation_flags(ens.dist, delta, t_bar, T)
    ph = stagnation_estimate_from_flags(flags)
    hits = hit_times(ens.dist, delta)

    reports = [pstar]
    summary = {"version": __version__, "config": cfg.model_dump(), "estimates": est.to_dict(),
               "t_bar": t_bar, "p_hat": ph.__dict__, "p_star": pstar.value,
               "dominance": bool(pstar.value <= ph.ci_low)}
    final = ens.final
    run_cols = {}
    if ctx.model.closed_form_batch is not None:
        Rv, Rn = risk_values(ctx, final)
        gap = np.abs(Rv - Rn)
        run_cols = {"R": Rv, "R_n": Rn}
        gb = generalization_gap_bound(inputs, eps=cfg.bounds.gap_eps)
        reports.append(gb)
        summary["gap"] = _gap_summary(gap, flags, gb.value)
        if cfg.risk.oracle == "toy_relu":
            try:
                ob = optimization_error_bound(inputs, T, ctx.schedule)
                reports.append(ob)
                exc = Rv[flags] - TOY_RISK_MIN
                summary["excess_risk"] = {"mean": float(exc.mean()) if len(exc) else None,
                                          "n": int(len(exc)), "bound": ob.value}
            except ValueError as err:
                summary["excess_risk"] = {"skipped": str(err)}
            summary["final_curve_distance_max"] = float(np.max(toy_curve_distance(final, cfg.atlas.a_lo,
                                                                                   cfg.atlas.a_hi)))
    if ctx.noise.lower > 0 and delta < ctx.arch.D:
        reports.append(noise_escape_bound(ctx.arch.D, delta, 0.0, ctx.arch.depth, ctx.arch.hbar, ctx.noise.lower))
    if ctx.noise.lower > 0:
        reports.append(non_escape_lower(inputs, t_bar, T))
        reports.append(reaching_prob_lower(inputs, int(pstar.extra.get("t_lo", 1)), t_bar))
    summary["final_distance_max"] = float(np.max(ens.dist[:, -1]))

    if out is not None:
        _write_reports(out, reports)
        write_json(out / "summary.json", summary)
        header = ["member"] + [f"a{i}" for i in range(ctx.arch.D)] + ["dist_T", "first_hit", "stagnating"] \
            + list(run_cols)
        rows = [[k, *final[k], ens.dist[k, -1], int(hits[k]), bool(flags[k]), *[v[k] for v in run_cols.values()]]
                for k in range(R)]
        write_csv(out / "runs.csv", header, rows)
        ds = [delta] + [d for d in cfg.mc.deltas if d != delta]
        write_csv(out / "distance_summary.csv", ["t", "q10", "q50", "q90"] + [f"inside_{d:g}" for d in ds],
                  _summary_rows(ens.dist, ds, cfg.mc.summary_rows))
    summary["reports"] = reports
    summary["flags"] = flags
    summary["final"] = final
    return summary


def _gap_summary(gap, flags, bound):
    g = gap[flags]
    if not len(g):
        return {"n": 0, "bound": bound, "max": None, "mean": None, "ratio": None, "dominance": True}
    mx = float(g.max())
    return {"n": int(len(g)), "bound": bound, "max": mx, "mean": float(g.mean()),
            "ratio": bound / mx if mx > 0 else math.inf, "dominance": bool(mx <= bound)}


def toy_curve_distance(flat, a_lo: float = 0.75, a_hi: float = 2.0, n_grid: int = 200001) -> np.ndarray:
    """L21 (here l1) distance to the exact segment ``{a1 a2 = 3/2, a1 in [a_lo, a_hi]}``."""
    flat = np.atleast_2d(flat)
    a = np.linspace(a_lo, a_hi, n_grid)
    b = 1.5 / a
    return np.array([float(np.min(np.abs(x - a) + np.abs(y - b))) for x, y in flat])


def stagnation_sweep(cfg: ExperimentConfig) -> dict:
    """p-hat and p* across deltas (and noise levels) from shared ensembles."""
    ctx = build_context(cfg)
    atlas = ctx.need_atlas()
    T = cfg.mc.T
    est = estimate_constants(ctx)
    sigmas = [ctx.noise.sigma2] + [s for s in cfg.mc.sigma2_sweep if s != ctx.noise.sigma2] \
        if ctx.noise.kind == "scalar" else [None]
    deltas = sorted(set(cfg.mc.deltas) | {atlas.delta})
    rows, reports, ok = [], [], True
    monotone = True
    for s2 in sigmas:
        noise = ctx.noise if s2 is None else NoiseModel("scalar", sigma2=s2, m=ctx.noise.m)
        ens = ctx.sgd(noise=noise).ensemble(cfg.seed, cfg.mc.n_runs, monitor=atlas.distance, parts=cfg.mc.parts)
        per_delta = {}
        for d in deltas:
            inp = bound_inputs(ctx, est, d, T, noise=noise)
            ps, tb = p_star(inp, noise)
            reports.append(ps)
            per_delta[d] = (ps, min(tb, T))
        t_common = cfg.mc.t_bar if cfg.mc.t_bar is not None else per_delta[atlas.delta][1]
        t_common = min(t_common, T)
        prev = None
        for d in deltas:
            ps, tb = per_delta[d]
            own = stagnation_estimate_from_flags(stagnation_flags(ens.dist, d, tb, T))
            com = stagnation_estimate_from_flags(stagnation_flags(ens.dist, d, t_common, T))
            verdict = ps.value <= own.ci_low
            ok &= verdict
            if prev is not None and com.ci_high < prev.ci_low:
                monotone = False
            prev = com
            rows.append({"sigma2": s2, "delta": d, "t_bar": tb, "p_star": ps.value, "p_hat": own.p_hat,
                         "ci_low": own.ci_low, "ci_high": own.ci_high, "t_common": t_common,
                         "p_hat_common": com.p_hat, "ci_low_common": com.ci_low, "ci_high_common": com.ci_high,
                         "formula_valid": ps.formula_valid, "dominance": bool(verdict)})
    return {"rows": rows, "reports": reports, "dominance": bool(ok), "monotone": bool(monotone),
            "estimates": est.to_dict()}


def optimization_rate(cfg: ExperimentConfig, Ts=(100, 1000, 10000)) -> dict:
    """Mean excess risk over stagnating runs at several horizons, from one ensemble."""
    ctx = build_context(cfg)
    atlas = ctx.need_atlas()
    Tmax = max(Ts)
    t_bar = cfg.mc.t_bar if cfg.mc.t_bar is not None else 50
    ens = ctx.sgd(T=Tmax).ensemble(cfg.seed, cfg.mc.n_runs, monitor=atlas.distance, parts=cfg.mc.parts,
                                   snapshots=Ts)
    rows = []
    for T in Ts:
        flags = stagnation_flags(ens.dist[:, :T + 1], atlas.delta, t_bar, T)
        R, _ = risk_values(ctx, ens.snapshots[T])
        exc = R[flags] - TOY_RISK_MIN
        rows.append({"T": T, "n_stagnating": int(flags.sum()), "mean_excess": float(exc.mean()),
                     "se": float(exc.std(ddof=1) / math.sqrt(len(exc)))})
    x = np.log([r["T"] for r in rows])
    y = np.log([r["mean_excess"] for r in rows])
    slope = float(np.polyfit(x, y, 1)[0])
    return {"rows": rows, "slope": slope, "t_bar": t_bar}


def landscape(cfg: ExperimentConfig):
    """Grid rows ``(u, v, risk)`` and projected trajectory rows ``(t, u, v, risk)``."""
    ctx = build_context(cfg)
    D = ctx.arch.D
    if D < 2:
        raise ConfigError("a 2-d projection needs at least two parameters")
    lc = cfg.landscape
    center = np.array(lc.center if lc.center is not None else ctx.init.flat(), dtype=float)
    if center.shape != (D,):
        raise ConfigError(f"landscape center needs {D} numbers")
    rng = np.random.default_rng(cfg.seed)
    q, _ = np.linalg.qr(rng.standard_normal((D, 2)))
    dirs = q.T.copy()
    if lc.filter_normalize:
        for k in range(2):
            parts = ctx.arch.split(dirs[k])
            for p, c in zip(parts, ctx.arch.split(center)):
                nd = np.linalg.norm(p)
                if nd > 0:
                    p *= np.linalg.norm(c) / nd
    u = np.linspace(-lc.span, lc.span, lc.grid)
    U, V = np.meshgrid(u, u, indexing="ij")
    pts = center + U.reshape(-1, 1) * dirs[0] + V.reshape(-1, 1) * dirs[1]
    risk = _landscape_risk(ctx, pts)
    grid = list(zip(U.ravel(), V.ravel(), risk))
    traj_rows = []
    if lc.traj_T > 0:
        tr = ctx.sgd(T=lc.traj_T).run(cfg.seed)
        rel = tr.iterates - center
        G = dirs @ dirs.T
        coords = np.linalg.solve(G, dirs @ rel.T).T
        tr_risk = _landscape_risk(ctx, tr.iterates)
        traj_rows = [(int(t), c[0], c[1], r) for t, c, r in zip(tr.times, coords, tr_risk)]
    return grid, traj_rows, dirs, center


def _landscape_risk(ctx: Context, pts: np.ndarray) -> np.ndarray:
    if ctx.model.closed_form_batch is not None:
        return ctx.model.closed_form_batch(pts)
    return risk_values(ctx, pts)[1]


# ----------------------------------------------------------------- checks

@dataclass
class Check:
    name: str
    group: str
    formula_id: str
    passed: bool
    value: float
    reference: float
    inputs: dict = field(default_factory=dict)
    detail: str = ""

    def row(self):
        return [self.name, self.group, self.formula_id, self.passed, self.value, self.reference, self.detail,
                json.dumps(_plain(self.inputs), sort_keys=True)]


CHECKS: dict[str, tuple[str, Callable]] = {}


def register(name: str, group: str):
    def deco(fn):
        CHECKS[name] = (group, fn)
        return fn
    return deco


@register("zeta.monotone", "zeta")
def _check_zeta_monotone(cfg):
    """zeta rises with t_lo and c', falls with t_hi and c (4 axes x 8 points)."""
    base = dict(t_lo=2, t_hi=40, c=0.5, c_prime=0.05, kappa=1.0)
    axes = {"t_lo": (np.arange(1, 9) * 4, +1), "t_hi": (40 + np.arange(8) * 10, -1),
            "c": (np.linspace(0.05, 0.95, 8), -1), "c_prime": (np.geomspace(0.005, 0.5, 8), +1)}
    worst = 0.0
    for ax, (vals, sign) in axes.items():
        z = np.array([zeta(**{**base, ax: (int(v) if ax.startswith("t") else float(v))}) for v in vals])
        worst = max(worst, float(np.max(-sign * np.diff(z))))
    return Check("zeta.monotone", "zeta", "zeta", worst <= 1e-15, worst, 1e-15, base,
                 "largest step against the expected direction")


def _zeta_tuples(seed, k=50):
    rng = np.random.default_rng(seed)
    for _ in range(k):
        t_lo = int(rng.integers(1, 20))
        yield (t_lo, t_lo + int(rng.integers(1, 30)), float(rng.uniform(0.05, 0.95)),
               float(rng.uniform(0.01, 0.5)), float(rng.choice([0.5, 1.0, 2.0])))


@register("zeta.certificate_upper", "zeta")
def _check_zeta_upper(cfg):
    bad, tested = 0, 0
    rng = np.random.default_rng(cfg.seed + 1)
    for t_lo, t_hi, c, eps, kappa in _zeta_tuples(cfg.seed):
        # largest c' passing the certificate, so it is exercised at its edge
        N = t_hi - t_lo + 1
        cp = (math.log(c) - math.log1p(-eps ** (1.0 / N))) / t_hi ** kappa
        cp = cp * float(rng.uniform(0.5, 1.0)) if cp > 0 else cp
        if cp <= 0:
            continue
        tested += 1
        if zeta_threshold_upper(t_lo, t_hi, c, cp, kappa, eps) and zeta(t_lo, t_hi, c, cp, kappa) > eps * (1 + 1e-12):
            bad += 1
    return Check("zeta.certificate_upper", "zeta", "zeta_threshold_upper", bad == 0 and tested > 0, bad, 0,
                 {"tuples": tested}, "certified zeta <= eps violations")


@register("zeta.certificate_lower", "zeta")
def _check_zeta_lower(cfg):
    bad = 0
    for t_lo, t_hi, c, eps, kappa in _zeta_tuples(cfg.seed):
        cp = zeta_threshold_lower(t_lo, t_hi, c, kappa, eps)
        if cp > 0 and zeta(t_lo, t_hi, c, cp, kappa) < (1 - eps) * (1 - 1e-12):
            bad += 1
    return Check("zeta.certificate_lower", "zeta", "zeta_threshold_lower", bad == 0, bad, 0, {"tuples": 50},
                 "certified zeta >= 1 - eps violations")


@register("zeta.reaching_identity", "zeta")
def _check_reaching_identity(cfg):
    inp = BoundInputs(lam=0.1, cG=1.0, cG_lower=1.0, C_Theta=0.2, eta_c=1.0, alpha=1.0)
    r = reaching_prob_lower(inp, 1, 10).value
    z = 1.0 - zeta(1, 10, inp.lam * inp.C_mDG, inp.C_mGTheta, 2.0)
    err = abs(r - z)
    return Check("zeta.reaching_identity", "zeta", "reaching_prob_lower", err <= 1e-12, err, 1e-12,
                 inp.to_dict(), "|reaching - (1 - zeta)|")


def random_architecture(rng, max_width=4, max_depth=3, h0_le_hbar=False, activation="relu"):
    """Random widths ending in 1; ``h0_le_hbar`` caps the input width at the
    largest later width, the regime where the upper sandwich constant holds."""
    depth = int(rng.integers(1, max_depth + 1))
    hidden = [int(w) for w in rng.integers(1, max_width + 1, size=depth - 1)]
    hbar = max(hidden + [1])
    h0 = int(rng.integers(1, (hbar if h0_le_hbar else max_width) + 1))
    return Architecture(tuple([h0] + hidden + [1]), activation)


@register("norms.sandwich", "norms")
def _check_sandwich(cfg):
    rng = np.random.default_rng(cfg.seed)
    worst = -math.inf
    for _ in range(10):
        arch = random_architecture(rng, max_width=4, max_depth=3, h0_le_hbar=True)
        for _ in range(100):
            p = ParamTuple.random(arch, rng)
            f, l21 = norm_F(p), norm_L21(p)
            worst = max(worst, f - l21, l21 - math.sqrt(arch.depth * arch.hbar) * f)
    return Check("norms.sandwich", "norms", "norm_F_L21", worst <= 1e-12, worst, 1e-12, {"tuples": 1000},
                 "F <= L21 <= sqrt(L hbar) F on architectures with h0 <= hbar, worst slack")


@register("gradient.finite_difference", "gradient")
def _check_fd(cfg):
    rng = np.random.default_rng(cfg.seed)
    worst = 0.0
    h = 1e-6
    for _ in range(200):
        widths = tuple(int(w) for w in rng.integers(1, 4, size=int(rng.integers(1, 3)))) + (1,)
        arch = Architecture(widths, "identity")
        p = ParamTuple.random(arch, rng)
        x, y = rng.standard_normal(arch.h0), float(rng.standard_normal())
        g = backprop(p, x, y)
        flat = p.flat()
        fd = np.empty_like(flat)
        for j in range(len(flat)):
            e = np.zeros_like(flat)
            e[j] = h
            fp = forward_batch(arch, arch.split((flat + e)[None]), x[None])[0, 0]
            fm = forward_batch(arch, arch.split((flat - e)[None]), x[None])[0, 0]
            fd[j] = (loss_value(y, fp) - loss_value(y, fm)) / (2 * h)
        gf = g.flat()
        worst = max(worst, float(np.linalg.norm(gf - fd) / max(np.linalg.norm(fd), 1e-12)))
    return Check("gradient.finite_difference", "gradient", "backprop", worst <= 1e-5, worst, 1e-5,
                 {"configs": 200, "h": h}, "relative error, worst config")


def _unit_21_ball(rng, k):
    """Points of the unit (2,1)-ball in 2x2: the two column norms split the budget."""
    w = rng.dirichlet([1.0, 1.0, 1.0], size=k)[:, :2] * rng.uniform(size=(k, 1)) ** 0.25
    ang = rng.uniform(0, 2 * math.pi, size=(k, 2))
    cols = np.stack([w[:, 0, None] * np.c_[np.cos(ang[:, 0]), np.sin(ang[:, 0])],
                     w[:, 1, None] * np.c_[np.cos(ang[:, 1]), np.sin(ang[:, 1])]], axis=2)
    return cols.reshape(k, 4)


@register("covering.l21_ball", "covering")
def _check_cover_ball(cfg):
    rng = np.random.default_rng(cfg.seed)
    pts = _unit_21_ball(rng, cfg.checks.cover_points)
    worst, detail = -math.inf, []
    for eps in (0.5, 1.0):
        bound = covering_L21_ball_bound(1.0, 2, 2, eps).value
        lc = math.log(greedy_covering_oracle(pts, eps))
        worst = max(worst, lc - bound)
        detail.append(f"eps={eps:g}: {lc:.4g} <= {bound:.4g}")
    return Check("covering.l21_ball", "covering", "covering_L21_ball", worst <= 0, worst, 0.0,
                 {"points": cfg.checks.cover_points}, "; ".join(detail))


@register("covering.neighborhood", "covering")
def _check_cover_nbhd(cfg):
    rng = np.random.default_rng(cfg.seed)
    arch = TOY_ARCH
    z = rng.standard_normal((cfg.checks.cover_points, arch.D))
    z /= l21_batch(arch, z)[:, None]
    pts = z * rng.uniform(size=(len(z), 1)) ** (1.0 / arch.D)
    worst, detail = -math.inf, []
    for eps in (0.25, 0.5):
        bound = covering_neighborhood_bound(arch.depth, arch.hbar, 1.0, eps).value
        lc = math.log(greedy_covering_oracle(pts, eps))
        worst = max(worst, lc - bound)
        detail.append(f"eps={eps:g}: {lc:.4g} <= {bound:.4g}")
    return Check("covering.neighborhood", "covering", "covering_neighborhood", worst <= 0, worst, 0.0,
                 {"delta": 1.0}, "; ".join(detail))


def _toy_ctx(cfg) -> Context:
    return build_context(cfg.updated(arch={"widths": [1, 1, 1], "activation": "relu"},
                                     risk={"oracle": "toy_relu"}, atlas={"builtin": "toy", "path": None}))


@register("covering.union", "covering")
def _check_cover_union(cfg):
    ctx = _toy_ctx(cfg)
    est = estimate_constants(ctx)
    atlas = ctx.need_atlas()
    rng = np.random.default_rng(cfg.seed)
    _, pts = sample_neighborhood(atlas.minima[0], atlas.delta, cfg.checks.cover_points, rng)
    pts = np.vstack([pts, atlas.minima[0].points])
    inp = bound_inputs(ctx, est, atlas.delta, cfg.mc.T, lam=1.0)
    worst, detail = -math.inf, []
    for eps in (0.25, 0.5):
        bound = covering_union_bound(inp, eps).value
        lc = math.log(greedy_covering_oracle(pts, eps))
        worst = max(worst, lc - bound)
        detail.append(f"eps={eps:g}: {lc:.4g} <= {bound:.4g}")
    return Check("covering.union", "covering", "covering_union", worst <= 0, worst, 0.0,
                 {"d": inp.d, "C_mu": inp.C_mu, "delta": inp.delta}, "; ".join(detail))


@register("covering.function_class", "covering")
def _check_cover_fclass(cfg):
    ctx = _toy_ctx(cfg)
    est = estimate_constants(ctx)
    atlas = ctx.need_atlas()
    rng = np.random.default_rng(cfg.seed)
    _, P = sample_neighborhood(atlas.minima[0], atlas.delta, cfg.checks.cover_points, rng)
    X = rng.uniform(0, 1, size=(20, 1))
    F = forward_batch(ctx.arch, ctx.arch.split(P), X)
    inp = bound_inputs(ctx, est, atlas.delta, cfg.mc.T, lam=1.0)
    worst, detail = -math.inf, []
    for eps in (0.5, 1.0):
        bound = covering_function_class_bound(inp, 20, eps).value
        lc = math.log(greedy_covering_oracle(F, eps))
        worst = max(worst, lc - bound)
        detail.append(f"eps={eps:g}: {lc:.4g} <= {bound:.4g}")
    return Check("covering.function_class", "covering", "covering_function_class", worst <= 0, worst, 0.0,
                 {"n": 20, "S": inp.S}, "; ".join(detail))


@register("capacity.rademacher_exact", "capacity")
def _check_rad_exact(cfg):
    n = 25
    est = rademacher_empirical(None, None, n_draws=20000, seed=cfg.seed, absolute=True, values=np.ones((1, n)))
    exact = rademacher_abs_mean_exact(n)
    z = abs(est.value - exact) / est.se
    return Check("capacity.rademacher_exact", "capacity", "rademacher_empirical", z <= 4.0, z, 4.0,
                 {"n": n, "exact": exact}, "standard errors from the binomial value")


@register("capacity.dudley", "capacity")
def _check_dudley(cfg):
    ctx = _toy_ctx(cfg.updated(risk={"n_data": cfg.checks.gap_n}))
    est = estimate_constants(ctx)
    atlas = ctx.need_atlas()
    rng = np.random.default_rng(cfg.seed)
    _, P = sample_neighborhood(atlas.minima[0], atlas.delta, 500, rng)
    grid = [ParamTuple.from_flat(ctx.arch, r) for r in P]
    rad = rademacher_empirical(grid, ctx.dataset, n_draws=cfg.checks.rademacher_draws, seed=cfg.seed)
    inp = bound_inputs(ctx, est, atlas.delta, cfg.mc.T, lam=1.0)
    db = dudley_bound(inp)
    return Check("capacity.dudley", "capacity", "dudley_bound", rad.value <= db.value, rad.value, db.value,
                 {"n": inp.n, "grid": 500}, "empirical Rademacher over a parameter grid vs entropy integral")


@register("assumptions.smoothness", "assumptions")
def _check_smooth(cfg):
    est = estimate_smoothness_constant(None, 0.0, toy_relu_model(), n_pairs=10**4, seed=cfg.seed, box=1.0,
                                       arch=TOY_ARCH)
    return Check("assumptions.smoothness", "assumptions", "toy_grad_lipschitz", est <= TOY_GRAD_LIP_B1, est, TOY_GRAD_LIP_B1,
                 {"B": 1.0, "pairs": 10**4}, "empirical gradient Lipschitz ratio in the B=1 box")


@register("assumptions.local_attraction", "assumptions")
def _check_attraction(cfg):
    atlas = toy_atlas(0.5)
    eta = 1.0 / (4.0 * TOY_GRAD_LIP_B1 * math.sqrt(2.0))
    frac = check_local_attraction(atlas.minima[0], 0.5, toy_relu_model(), eta, n_samples=2000, seed=cfg.seed)
    return Check("assumptions.local_attraction", "assumptions", "local_attraction", frac >= 0.99, frac, 0.99,
                 {"delta": 0.5, "eta": eta}, "fraction of samples whose distance shrinks")


@register("assumptions.convexity", "assumptions")
def _check_convexity(cfg):
    atlas = toy_atlas(0.05)
    rep = check_essential_convexity(atlas.minima[0], 0.05, toy_relu_model(), n_pairs=cfg.checks.convexity_pairs,
                                    seed=cfg.seed, proposal="ray")
    return Check("assumptions.convexity", "assumptions", "essential_convexity", rep.max_violation <= 1e-9,
                 rep.max_violation, 1e-9, {"delta": 0.05, "accepted": rep.n_accepted},
                 "largest chord violation on equal-projection pairs")


ESCAPE_CONFIGS = (
    # (name, widths, activation, cloud, offset point distance eps, delta, sigma2)
    ("toy_on_curve", (1, 1, 1), "relu", "toy", 0.0, 1.0, 1.0),
    ("toy_off_curve", (1, 1, 1), "relu", "toy", 0.3, 1.0, 0.5),
    ("linear_origin", (3, 1), "identity", "origin", 0.0, 1.5, 1.0),
)


def noise_escape_mc(name, widths, act, cloud, eps, delta, sigma2, draws, seed):
    """Escape frequency of ``A + W``, ``W ~ N(0, sigma2 I)``, from a point at distance ``eps``."""
    arch = Architecture(widths, act)
    if cloud == "toy":
        mu = toy_atlas(delta).minima[0]
        base = np.array([math.sqrt(1.5), math.sqrt(1.5)])
    else:
        mu = Minimum(arch, np.zeros((1, arch.D)))
        base = np.zeros(arch.D)
    # push the base point off the minimum along a fixed direction, then measure its distance
    if eps > 0:
        direction = np.ones(arch.D) / l21_batch(arch, np.ones((1, arch.D)))[0]
        base = base + eps * direction
    eps_true = float(mu.distance(base[None])[0])
    atlas = MinimaAtlas(arch, (mu,), delta)
    rng = np.random.default_rng(seed)
    esc = 0
    for s in range(0, draws, 20000):
        k = min(20000, draws - s)
        W = math.sqrt(sigma2) * rng.standard_normal((k, arch.D))
        esc += int(np.sum(atlas.distance(base + W) > delta))
    bound = noise_escape_bound(arch.D, delta, min(eps_true, delta), arch.depth, arch.hbar, sigma2)
    return esc / draws, bound, eps_true


@register("noise.escape", "noise")
def _check_escape(cfg):
    worst, detail = -math.inf, []
    for i, conf in enumerate(ESCAPE_CONFIGS):
        freq, bound, e = noise_escape_mc(*conf, cfg.checks.escape_draws, cfg.seed + i)
        worst = max(worst, freq - bound.value)
        detail.append(f"{conf[0]}: {freq:.4g} <= {bound.value:.4g}")
    return Check("noise.escape", "noise", "noise_escape_bound", worst <= 0, worst, 0.0,
                 {"draws": cfg.checks.escape_draws}, "; ".join(detail))


def non_escape_mc(cfg: ExperimentConfig, t_from: int = 1):
    """Stay frequency from a point on the curve at time ``t_from`` vs the non-escape product."""
    sigma2 = cfg.checks.non_escape_sigma2
    ctx = _toy_ctx(cfg.updated(noise={"kind": "scalar", "sigma2": sigma2}))
    atlas = ctx.need_atlas()
    T = cfg.checks.mc_T
    start = ParamTuple.from_flat(ctx.arch, np.array([math.sqrt(1.5), math.sqrt(1.5)]))
    ens = run_ensemble(start, ctx.sgd_dataset, ctx.model, ctx.noise, ctx.schedule, T, ctx.space, cfg.seed,
                       cfg.checks.mc_runs, atlas.distance, parts=cfg.mc.parts, t0=t_from)
    flags = np.all(ens.dist[:, 1:] <= atlas.delta, axis=1)
    est = stagnation_estimate_from_flags(flags)
    inputs = BoundInputs(L=ctx.arch.depth, hbar=ctx.arch.hbar, h0=1, D=ctx.arch.D, m=ctx.noise.m,
                         delta=atlas.delta, alpha=ctx.schedule.alpha, eta_c=ctx.schedule.c, T=T,
                         cG=sigma2, cG_lower=sigma2, C_tail=cfg.bounds.C_tail)
    return est, non_escape_lower(inputs, t_from, T)


@register("stagnation.non_escape", "stagnation")
def _check_non_escape(cfg):
    est, bound = non_escape_mc(cfg)
    ok = bound.value <= est.ci_high
    return Check("stagnation.non_escape", "stagnation", "non_escape_lower", ok, bound.value, est.ci_high,
                 {"C_tail": cfg.bounds.C_tail, "sigma2": cfg.checks.non_escape_sigma2, "T": cfg.checks.mc_T,
                  "runs": cfg.checks.mc_runs, "p_hat": est.p_hat}, "bound <= upper 95% CI of the stay frequency")


@register("stagnation.dominance", "stagnation")
def _check_dominance(cfg):
    c = cfg.updated(mc={"n_runs": cfg.checks.mc_runs, "T": cfg.checks.mc_T, "t_bar": None},
                    arch={"widths": [1, 1, 1], "activation": "relu"}, risk={"oracle": "toy_relu"},
                    atlas={"builtin": "toy", "path": None})
    res = toy_pipeline(c)
    ph = res["p_hat"]
    return Check("stagnation.dominance", "stagnation", "stagnation_lower_bound", res["dominance"], res["p_star"],
                 ph["ci_low"], {"t_bar": res["t_bar"], "p_hat": ph["p_hat"], "C_tail": cfg.bounds.C_tail},
                 "p* <= lower 95% CI of p-hat")


@register("gap.dominance", "gap")
def _check_gap(cfg):
    c = cfg.updated(mc={"n_runs": cfg.checks.mc_runs, "T": cfg.checks.mc_T, "t_bar": None},
                    risk={"oracle": "toy_relu", "n_data": cfg.checks.gap_n},
                    arch={"widths": [1, 1, 1], "activation": "relu"}, atlas={"builtin": "toy", "path": None})
    g = toy_pipeline(c)["gap"]
    return Check("gap.dominance", "gap", "generalization_gap_bound", g["dominance"], g["max"] or 0.0, g["bound"],
                 {"n": cfg.checks.gap_n, "stagnating": g["n"]}, "largest |R - R_n| on stagnating runs")


def select_checks(only: Optional[str]):
    if not only:
        return list(CHECKS)
    wanted = [w.strip() for w in only.split(",") if w.strip()]
    names = [n for n in CHECKS if any(n == w or n.startswith(w + ".") or CHECKS[n][0] == w for w in wanted)]
    if not names:
        raise ConfigError(f"--only {only!r} matches no check")
    return names


def run_checks(cfg: ExperimentConfig, only: Optional[str] = None) -> list[Check]:
    return [CHECKS[n][1](cfg) for n in select_checks(only)]


# --------------------------------------------------------------- commands

def cmd_toy_relu(cfg: ExperimentConfig, out=None) -> int:
    out = _out_dir(cfg, out)
    res = toy_pipeline(cfg, out)
    gap_ok = res.get("gap", {}).get("dominance", True)
    print(f"t_bar={res['t_bar']} p_hat={res['p_hat']['p_hat']:.4g} "
          f"[{res['p_hat']['ci_low']:.4g}, {res['p_hat']['ci_high']:.4g}] p*={res['p_star']:.4g}")
    if "gap" in res and res["gap"]["max"] is not None:
        print(f"gap max={res['gap']['max']:.4g} bound={res['gap']['bound']:.4g} ratio={res['gap']['ratio']:.4g}")
    return EXIT_OK if res["dominance"] and gap_ok else EXIT_CHECK


def cmd_landscape_2d(cfg: ExperimentConfig, out=None) -> int:
    out = _out_dir(cfg, out)
    grid, traj, dirs, center = landscape(cfg)
    write_csv(out / "landscape.csv", ["u", "v", "risk"], grid)
    write_csv(out / "trajectory_projection.csv", ["t", "u", "v", "risk"], traj)
    write_json(out / "directions.json", {"center": center, "d1": dirs[0], "d2": dirs[1]})
    return EXIT_OK


def cmd_verify_bounds(cfg: ExperimentConfig, out=None, only=None) -> int:
    names = select_checks(only)
    out = _out_dir(cfg, out)
    checks = [CHECKS[n][1](cfg) for n in names]
    write_csv(out / "checks.csv", ["name", "group", "formula_id", "passed", "value", "reference", "detail",
                                   "inputs"], [c.row() for c in checks])
    for c in checks:
        tag = "PASS" if c.passed else "FAIL"
        print(f"{tag} {c.name:32s} {c.formula_id:26s} value={c.value:.6g} ref={c.reference:.6g}  {c.detail}")
        if not c.passed:
            print(f"     inputs: {json.dumps(_plain(c.inputs), sort_keys=True)}")
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_CHECK


def cmd_stagnation_mc(cfg: ExperimentConfig, out=None) -> int:
    out = _out_dir(cfg, out)
    res = stagnation_sweep(cfg)
    header = list(res["rows"][0])
    write_csv(out / "stagnation.csv", header, [[r[k] for k in header] for r in res["rows"]])
    _write_reports(out, res["reports"])
    write_json(out / "summary.json", {"dominance": res["dominance"], "monotone": res["monotone"],
                                      "estimates": res["estimates"], "config": cfg.model_dump()})
    for r in res["rows"]:
        print(f"sigma2={r['sigma2']} delta={r['delta']:g} p_hat={r['p_hat']:.4g} "
              f"ci_low={r['ci_low']:.4g} p*={r['p_star']:.4g} {'ok' if r['dominance'] else 'FAIL'}")
    return EXIT_OK if res["dominance"] and res["monotone"] else EXIT_CHECK


def cmd_run_sgd(cfg: ExperimentConfig, out=None) -> int:
    out = _out_dir(cfg, out)
    ctx = build_context(cfg)
    monitor = ctx.atlas.distance if ctx.atlas is not None else None
    tr = ctx.sgd().run(cfg.seed, monitor=monitor)
    deltas = cfg.mc.deltas if monitor is not None else ()
    tr.to_jsonl(out / "trajectory.jsonl", ctx.dataset, ctx.model, deltas)
    write_json(out / "final.json", tr.final.to_dict())
    return EXIT_OK


COMMANDS = {"toy-relu": cmd_toy_relu, "landscape-2d": cmd_landscape_2d, "verify-bounds": cmd_verify_bounds,
            "stagnation-mc": cmd_stagnation_mc, "run-sgd": cmd_run_sgd}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="stagnate-lab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON config (defaults apply when omitted)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--only", help="comma-separated check names or groups (verify-bounds)")
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg = cfg.updated(seed=args.seed)
        fn = COMMANDS[args.command]
        if args.command == "verify-bounds":
            return fn(cfg, args.out, args.only)
        if args.only:
            raise ConfigError("--only applies to verify-bounds")
        return fn(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteGradientError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
