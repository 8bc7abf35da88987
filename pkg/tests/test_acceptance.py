"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import itertools
import math
import time

import numpy as np
from stagnate_lab.bounds import (covering_L21_ball_bound, covering_neighborhood_bound, greedy_covering_oracle,
                                 zeta, zeta_threshold_lower, zeta_threshold_upper)
from stagnate_lab.geometry import estimate_smoothness_constant
from stagnate_lab.harness import (CHECKS, ESCAPE_CONFIGS, ExperimentConfig, main, noise_escape_mc,
                                  optimization_rate, random_architecture, stagnation_sweep, toy_pipeline)
from stagnate_lab.net_core import ParamTuple, backprop, forward, loss_value, norm_F, norm_L21, norm_21
from stagnate_lab.optimizer import batch_noise_gaussianity
from stagnate_lab.risk import TOY_ARCH, expected_risk, sample_dataset, toy_relu_model, toy_relu_risk

TOY_GRAD_LIP_B1 = math.sqrt(2) * (1 + 4 / 3)


def test_criterion_01_closed_form_vs_monte_carlo(criterion):
    rng = np.random.default_rng(1)
    model = toy_relu_model(closed_form=False)
    t0 = time.perf_counter()
    worst = 0.0
    for a1, a2 in zip(rng.uniform(0, 2, 20), rng.uniform(-2, 2, 20)):
        est = expected_risk(ParamTuple.from_flat(TOY_ARCH, [a1, a2]), model, n_mc=10**6, seed=int(rng.integers(2**31)))
        worst = max(worst, abs(est.value - toy_relu_risk(a1, a2)) / est.se)
    dt = time.perf_counter() - t0
    assert criterion(1, worst <= 3 and dt < 30, f"worst |MC - exact| = {worst:.2f} SE over 20 points, {dt:.1f}s")


def test_criterion_02_toy_smoothness_constant(criterion):
    t0 = time.perf_counter()
    lam = estimate_smoothness_constant(None, 0.0, toy_relu_model(), n_pairs=10**4, seed=0, box=1.0, arch=TOY_ARCH)
    dt = time.perf_counter() - t0
    assert criterion(2, lam <= TOY_GRAD_LIP_B1 and dt < 10, f"estimate {lam:.5f} <= {TOY_GRAD_LIP_B1:.5f}, {dt:.2f}s")


def _fd(params, x, y, h=1e-6):
    flat = params.flat()
    out = np.empty_like(flat)
    for j in range(len(flat)):
        e = np.zeros_like(flat)
        e[j] = h
        fp = forward(x, ParamTuple.from_flat(params.arch, flat + e))
        fm = forward(x, ParamTuple.from_flat(params.arch, flat - e))
        out[j] = (loss_value(y, fp) - loss_value(y, fm)) / (2 * h)
    return out


def _kink_margin(params, x):
    h, worst = np.asarray(x, float), math.inf
    for a in params.layers[:-1]:
        z = a @ h
        worst = min(worst, float(np.min(np.abs(z))))
        h = np.maximum(z, 0)
    return worst


def test_criterion_03_backprop_vs_finite_differences(criterion):
    rng = np.random.default_rng(3)
    worst, done = 0.0, 0
    while done < 200:
        arch = random_architecture(rng, max_width=5, max_depth=4)
        p = ParamTuple.random(arch, rng)
        x, y = rng.standard_normal(arch.h0), float(rng.standard_normal())
        if _kink_margin(p, x) < 1e-3:  # smooth at this configuration only
            continue
        fd = _fd(p, x, y)
        g = backprop(p, x, y).flat()
        worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)))
        done += 1
    assert criterion(3, worst <= 1e-5, f"worst relative error {worst:.2e} on 200 relu configurations")


def test_criterion_04_norm_sandwich(criterion):
    # as stated: F <= L21 <= sqrt(L hbar) F with hbar the largest of h_1..h_L
    rng = np.random.default_rng(4)
    lower_bad, upper_bad, general_bad, bad_archs = 0, 0, 0, set()
    for _ in range(10):
        arch = random_architecture(rng, max_width=4, max_depth=3)
        hmax_in = max(arch.widths[:-1])
        for _ in range(100):
            p = ParamTuple.random(arch, rng)
            f, l21 = norm_F(p), norm_L21(p)
            lower_bad += f > l21 * (1 + 1e-12)
            if l21 > math.sqrt(arch.depth * arch.hbar) * f * (1 + 1e-12):
                upper_bad += 1
                bad_archs.add(arch.widths)
            general_bad += l21 > math.sqrt(arch.depth * hmax_in) * f * (1 + 1e-12)
    ok = lower_bad == 0 and upper_bad == 0
    detail = (f"lower violations {lower_bad}/1000, upper violations {upper_bad}/1000 "
              f"(architectures {sorted(bad_archs)}); with sqrt(L max(h_0..h_(L-1))) upper violations {general_bad}")
    assert criterion(4, ok, detail)


def _rejection_21_ball(rng, k):
    out = []
    while sum(len(o) for o in out) < k:
        z = rng.uniform(-1, 1, size=(4 * k, 4))
        cols = z.reshape(-1, 2, 2)  # (row, col) layout: column j is cols[:, :, j]
        n21 = np.sqrt((cols ** 2).sum(axis=1)).sum(axis=1)
        out.append(z[n21 <= 1.0])
    return np.concatenate(out)[:k]


def test_criterion_05_covering_dominance(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    lines, ok = [], True
    ball = _rejection_21_ball(rng, 10**4)
    assert np.all([norm_21(r.reshape(2, 2)) <= 1 for r in ball[:200]])
    for eps in (0.5, 1.0):
        lc, b = math.log(greedy_covering_oracle(ball, eps)), covering_L21_ball_bound(1.0, 2, 2, eps).value
        ok &= lc <= b
        lines.append(f"(i) eps={eps:g} {lc:.3f}<={b:.3f}")
    z = rng.standard_normal((10**4, 2))
    z /= np.abs(z).sum(axis=1, keepdims=True)
    nb = z * np.sqrt(rng.uniform(size=(len(z), 1)))
    for eps in (0.25, 0.5):
        lc, b = math.log(greedy_covering_oracle(nb, eps)), covering_neighborhood_bound(2, 1, 1.0, eps).value
        ok &= lc <= b
        lines.append(f"(ii) eps={eps:g} {lc:.3f}<={b:.3f}")
    fc = CHECKS["covering.function_class"][1](ExperimentConfig())
    ok &= fc.passed
    lines.append(f"(iii) {fc.detail}")
    dt = time.perf_counter() - t0
    assert criterion(5, ok and dt < 120, "; ".join(lines) + f"; {dt:.1f}s")


GRID = dict(t_lo=[1, 2, 3, 5, 8, 13, 21, 34], t_hi=[34, 40, 50, 60, 70, 80, 90, 100],
            c=[0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 0.99], cp=[0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0])
# directions of the product: fewer or larger factors raise it
DIRECTION = {"t_lo": +1, "t_hi": -1, "c": -1, "cp": +1}


def test_criterion_06_zeta_machinery(criterion):
    worst = 0.0
    for axis, sign in DIRECTION.items():
        others = [k for k in GRID if k != axis]
        for vals in itertools.product(*(GRID[k][::2] for k in others)):
            kw = dict(zip(others, vals))
            seq = []
            for v in GRID[axis]:
                a = {**kw, axis: v}
                seq.append(zeta(a["t_lo"], a["t_hi"], a["c"], a["cp"], 0.5))
            worst = max(worst, max(-sign * (b - a) for a, b in zip(seq, seq[1:])))
    rng = np.random.default_rng(6)
    bad_lo = bad_up = certified_up = 0
    for _ in range(50):
        c, eps = rng.uniform(0.05, 0.95), rng.uniform(0.01, 0.9)
        t_lo = int(rng.integers(1, 20))
        t_hi = t_lo + int(rng.integers(1, 40))
        kappa = rng.uniform(0, 1.5)
        cp = zeta_threshold_lower(t_lo, t_hi, c, kappa, eps)
        if cp > 0:
            bad_lo += zeta(t_lo, t_hi, c, cp, kappa) < 1 - eps - 1e-12
        N = t_hi - t_lo + 1
        cp_max = (math.log(c) - math.log1p(-eps ** (1 / N))) / t_hi ** kappa
        for cp_try in (0.999 * cp_max, rng.uniform(0.01, 3.0)):
            if cp_try > 0 and zeta_threshold_upper(t_lo, t_hi, c, cp_try, kappa, eps):
                certified_up += 1
                bad_up += zeta(t_lo, t_hi, c, cp_try, kappa) > eps * (1 + 1e-12)
    ok = worst <= 1e-15 and bad_lo == 0 and bad_up == 0 and certified_up > 0
    assert criterion(6, ok, f"grid: worst step against direction {worst:.1e}; lower certificate failures {bad_lo}/50; "
                            f"upper certificate failures {bad_up}/{certified_up}")


def test_criterion_07_stagnation_dominance(criterion):
    t0 = time.perf_counter()
    res = stagnation_sweep(ExperimentConfig())
    dt = time.perf_counter() - t0
    main_row = next(r for r in res["rows"] if r["delta"] == 0.5)
    summary = ", ".join(f"d={r['delta']:g}: p*={r['p_star']:.3g} p_hat={r['p_hat_common']:.3f}"
                        f"[{r['ci_low_common']:.3f},{r['ci_high_common']:.3f}] valid={r['formula_valid']}"
                        for r in res["rows"])
    ok = res["dominance"] and res["monotone"] and main_row["p_star"] <= main_row["ci_low"] and dt < 300
    assert criterion(7, ok, f"{summary}; {dt:.1f}s")


def test_criterion_08_optimization_rate(criterion):
    t0 = time.perf_counter()
    cfg = ExperimentConfig().updated(risk={"n_data": 10**4}, mc={"n_runs": 1000, "t_bar": 50})
    res = optimization_rate(cfg)
    dt = time.perf_counter() - t0
    rows = "; ".join(f"T={r['T']}: {r['mean_excess']:.3g}+-{r['se']:.1g} (n={r['n_stagnating']})" for r in res["rows"])
    ok = -1.3 <= res["slope"] <= -0.7 and dt < 600
    assert criterion(8, ok, f"slope {res['slope']:.3f}; {rows}; {dt:.1f}s")


def test_criterion_09_noise_escape(criterion):
    parts, ok = [], True
    for i, conf in enumerate(ESCAPE_CONFIGS):
        freq, bound, _ = noise_escape_mc(*conf, 10**5, 9 + i)
        ok &= freq <= bound.value
        parts.append(f"{conf[0]} {freq:.4f}<={bound.value:.4f}")
    assert criterion(9, ok, "; ".join(parts))


def test_criterion_10_batch_noise_gaussianity(criterion):
    model = toy_relu_model()
    ds = sample_dataset(model, 10**4, seed=10)
    rep = batch_noise_gaussianity(ParamTuple.from_flat(TOY_ARCH, [1.0, 1.5]), ds, model, 512, 10**5, seed=10)
    detail = f"skew {np.round(rep.skewness, 4).tolist()}, excess kurtosis {np.round(rep.excess_kurtosis, 4).tolist()}"
    assert criterion(10, rep.within(0.1), detail)


def test_criterion_11_gap_dominance(criterion):
    parts, ok = [], True
    for n in (100, 1000):
        g = toy_pipeline(ExperimentConfig().updated(risk={"n_data": n}))["gap"]
        ok &= g["dominance"] and g["n"] > 0
        parts.append(f"n={n}: max gap {g['max']:.3g} <= bound {g['bound']:.3g} (ratio {g['ratio']:.3g}, "
                     f"{g['n']} stagnating)")
    assert criterion(11, ok, "; ".join(parts))


def test_criterion_12_determinism(criterion, tmp_path, monkeypatch):
    monkeypatch.setenv("STAGNATE_LAB_THREADS", "4")
    same = {}
    for cmd in ("verify-bounds", "toy-relu"):
        dirs = [tmp_path / f"{cmd}-{k}" for k in (0, 1)]
        for d in dirs:
            main([cmd, "--out", str(d), "--seed", "0"])
        files = sorted(p.name for p in dirs[0].iterdir())
        same[cmd] = bool(files) and all((dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes() for f in files) \
            and files == sorted(p.name for p in dirs[1].iterdir())
    assert criterion(12, all(same.values()), ", ".join(f"{k}: {'identical' if v else 'differs'}" for k, v in same.items()))
