"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The experiment trends (criteria 5-7) run at desk scale: 64 training epochs per
phase instead of 512, everything else at the published settings.
"""

import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from streamcl import continual, datagen, engine, experiment, metrics, nn

from .oracles import central_fd, max_rel_error

SEEDS = range(5)
DESK_EPOCHS = 64


@pytest.fixture
def verdict(capsys):
    def _verdict(n, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        assert ok, detail
    return _verdict


def desk_config(instance, seed, **extra):
    raw = {"experiment.instance": instance, "experiment.seed": seed, "data.seed": seed,
           **{f"train.epochs_{k}": DESK_EPOCHS for k in ("a_1", "p_1", "a_2", "p_2")}}
    raw.update(extra)
    return experiment.ExperimentConfig.from_dict(raw)


# ---- 1


def _gradient_errors(net, x, y, rng):
    """Relative errors of the data-loss and EWC-penalty gradients against central FD."""
    net.params[:] = net.params + 0.1 * rng.normal(size=net.n_params)
    g_data, _ = nn.backward(net, x, y, mode=nn.Mode.EVAL)

    def loss(p):
        out = nn.forward(nn.MLP(net.layers, p), x)
        return nn.mse(out, x if y is None else y.reshape(-1, 1))

    # central-difference round-off is about eps*|loss|/h, so the near-zero floor is
    # applied to the loss normalised to unit magnitude
    floor = 1e-6 * max(1.0, loss(net.params))
    e_data = max_rel_error(g_data, central_fd(loss, net.params), floor=floor)
    state = continual.ConsolidationState(net.n_params, lam=200.0)
    fisher = continual.estimate_fisher_diagonal(net, x, y)
    state = continual.consolidate(state, fisher, net.params + 0.05 * rng.normal(size=net.n_params))
    g_total, _ = nn.backward(net, x, y, penalty=state.penalty, mode=nn.Mode.EVAL)
    g_pen = g_total - g_data
    # the penalty is quadratic: central differences are exact for any step, and a
    # large one keeps round-off of the summed penalty value small
    e_pen = max_rel_error(g_pen, central_fd(lambda p: continual.ewc_penalty(p, state)[0],
                                            net.params, h=0.1))
    return e_data, e_pen


def test_criterion_1_gradient_suite(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = {}
    for latent in (4, 5):
        cfg = engine.EngineConfig(latent_dim=latent, seed=latent)
        ae, pred, layer = engine.build_networks(7, cfg, True, 0.0)
        x = rng.normal(size=(6, 7))
        worst[f"autoencoder latent {latent}"] = _gradient_errors(ae, x, None, rng)
        z = nn.forward(ae, x, upto=layer)
        worst[f"predictor latent {latent}"] = _gradient_errors(pred, z, rng.normal(size=6), rng)
    elapsed = time.perf_counter() - start
    top = max(max(v) for v in worst.values())
    detail = (f"max relative error {top:.2e} (< 1e-4) over "
              + ", ".join(f"{k}: data {d:.1e} penalty {p:.1e}" for k, (d, p) in worst.items())
              + f"; {elapsed:.1f}s (< 60s)")
    verdict(1, top < 1e-4 and elapsed < 60, detail)


# ---- 2


def test_criterion_2_ewc_closed_form_and_recursion(verdict):
    rng = np.random.default_rng(1)
    net = nn.MLP([nn.LayerSpec(1, 1, "identity", bias=False)], params=[0.0])

    def task(scale, b):
        x = rng.uniform(0.5, 1.5, size=(40, 1)) * scale
        y = b * x[:, 0] + 0.1 * rng.normal(size=40)
        a = float(np.mean(x[:, 0] ** 2))
        return x, y, a, float(np.mean(x[:, 0] * y)) / a

    def descend(x, y, penalty):
        for _ in range(20000):
            g, _ = nn.backward(net, x, y, penalty, mode=nn.Mode.EVAL)
            net.params -= 0.05 * g
            if abs(g[0]) < 1e-13:
                break
        return float(net.params[0])

    x1, y1, _, _ = task(1.0, 2.0)
    theta1 = descend(x1, y1, None)
    lam = 50.0
    state = continual.ConsolidationState(1, gamma=0.9, lam=lam)
    f1 = continual.estimate_fisher_diagonal(net, x1, y1)
    state = continual.consolidate(state, f1, net.params)
    x2, y2, a, b = task(1.2, -1.0)
    theta2 = descend(x2, y2, state.penalty)
    ft = state.fisher[0]
    expected = (2 * a * b + lam * ft * theta1) / (2 * a + lam * ft)
    closed_err = abs(theta2 - expected)

    # recursion on a real network's Fisher diagonals
    ae = engine.build_networks(7, engine.EngineConfig(), False, 0.0)[0]
    fa = continual.estimate_fisher_diagonal(ae, rng.normal(size=(20, 7)))
    fb = continual.estimate_fisher_diagonal(ae, rng.normal(size=(20, 7)) + 1.0)
    s = continual.ConsolidationState(ae.n_params, gamma=0.9)
    s = continual.consolidate(s, fa, ae.params)
    s = continual.consolidate(s, fb, ae.params)
    recursion_exact = np.array_equal(s.fisher, 0.9 * fa.values + fb.values)
    verdict(2, closed_err < 1e-6 and recursion_exact,
            f"closed-form deviation {closed_err:.2e} (< 1e-6); "
            f"F2 = gamma*F1 + F2 bit-exact: {recursion_exact}")


# ---- 3


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(1, 6), st.floats(0.3, 1.5), st.integers(0, 10**6))
def _buffer_semantics(capacity, alpha, seed):
    rng = np.random.default_rng(seed)
    ae, _, layer = engine.build_networks(3, engine.EngineConfig(encoder_hidden=(4,), latent_dim=2,
                                                                seed=seed % 97), False, 0.0)
    sub = engine.SubModel(ae, engine.ThresholdState(alpha, 0.0), engine.BufferPair(capacity),
                          continual.ConsolidationState(ae.n_params))
    model = engine.ClearModel(sub, layer, settings=engine.UpdateSettings(2, 2, 4, 2, seed=seed))
    engine.reestimate_threshold(model, engine.Which.AUTOENCODER, (rng.normal(size=(20, 3)), None))
    assert sub.threshold.threshold == alpha * sub.threshold.mse_min
    updates = 0
    for x in rng.normal(size=(40, 3)) * rng.uniform(0.2, 3.0):
        rec, _ = engine.score_sample(model, x)
        n_before = len(sub.buffers.novelty)
        novel = rec > sub.threshold.threshold
        full, _ = engine.route_sample(model, x, None, (rec, None))
        assert full == (novel and n_before + 1 == capacity)
        if full:
            engine.perform_update(model, engine.Which.AUTOENCODER)
            updates += 1
            assert not sub.buffers.novelty and not sub.buffers.familiarity
            assert sub.threshold.threshold == alpha * sub.threshold.mse_min
        else:
            assert len(sub.buffers.novelty) < capacity
    assert sub.update_count == updates
    # a score equal to the threshold is familiar
    n_fam = len(sub.buffers.familiarity)
    engine.route_sample(model, np.zeros(3), None, (sub.threshold.threshold, None))
    assert len(sub.buffers.familiarity) == n_fam + 1


def test_criterion_3_buffer_semantics(verdict):
    try:
        _buffer_semantics()
        ok, detail = True, "40 random streams: exact triggers, empty buffers, ties familiar, threshold = alpha*mse_min"
    except AssertionError as exc:
        ok, detail = False, f"property violated: {exc}"
    verdict(3, ok, detail)


# ---- 4


def test_criterion_4_generator_moments(verdict):
    start = time.perf_counter()
    cfg = datagen.GeneratorConfig()
    phases = datagen.draw_phases(cfg.dims, np.random.default_rng(2024))
    rng = np.random.default_rng(4)
    n = 10_000
    times = np.array([0, 5, 13, 100, 1000, 2190, 4380, 6000, 8000, 11999], dtype=float)
    mean, var = datagen.moments(times, phases, cfg)
    worst_mean = worst_var = 0.0
    for i, t0 in enumerate(times):
        xd, xy = datagen.sample_components(np.full(n, t0), phases, cfg, rng)
        x = xd + xy
        m_hat, v_hat = x.mean(axis=0), x.var(axis=0, ddof=1)
        # standard errors of the sample mean and the sample variance of Gaussian data
        se_m = np.sqrt(var[i] / n)
        se_v = var[i] * np.sqrt(2.0 / (n - 1))
        with np.errstate(divide="ignore", invalid="ignore"):
            zm = np.where(se_m > 0, np.abs(m_hat - mean[i]) / se_m, 0.0)
            zv = np.where(se_v > 0, np.abs(v_hat - var[i]) / se_v, 0.0)
        worst_mean, worst_var = max(worst_mean, zm.max()), max(worst_var, zv.max())
    elapsed = time.perf_counter() - start
    verdict(4, worst_mean <= 3 and worst_var <= 3 and elapsed < 60,
            f"worst |z| mean {worst_mean:.2f}, variance {worst_var:.2f} over 10 times x 7 dims "
            f"(<= 3); {elapsed:.1f}s")


# ---- 5


def test_criterion_5_fitting_error_trend(verdict):
    start = time.perf_counter()
    rows = []
    for seed in SEEDS:
        c = experiment.run_experiment(desk_config("C", seed))["metrics"]["fitting_error_ae"]
        b = experiment.run_experiment(desk_config("Baseline", seed))["metrics"]["fitting_error_ae"]
        rows.append((seed, c, b))
    elapsed = time.perf_counter() - start
    wins = sum(c < b for _, c, b in rows)
    verdict(5, wins >= 4 and elapsed < 600,
            f"Online-EWC beats baseline fitting error in {wins}/5 seeds ("
            + "; ".join(f"s{s}: {c:.3f} vs {b:.3f}" for s, c, b in rows)
            + f"); {elapsed:.0f}s")


# ---- 6


def test_criterion_6_forgetting_ordering(verdict):
    start = time.perf_counter()
    ratios = {"B": [], "C": []}
    for inst in ratios:
        for seed in SEEDS:
            m = experiment.run_experiment(desk_config(inst, seed, **{"data.supervised": "true"}))
            ratios[inst].append(m["metrics"]["forgetting_ratio_pred"])
    elapsed = time.perf_counter() - start
    mb, mc = np.mean(ratios["B"]), np.mean(ratios["C"])
    verdict(6, mc <= mb and elapsed < 900,
            f"mean predictor forgetting ratio C {mc:.3f} <= B {mb:.3f} "
            f"(C {np.round(ratios['C'], 3).tolist()}, B {np.round(ratios['B'], 3).tolist()}); "
            f"{elapsed:.0f}s")


# ---- 7


def test_criterion_7_update_frequency(verdict):
    means = {}
    for cap in (400, 800, 1600):
        counts = [experiment.run_experiment(
            desk_config("C", seed, **{"buffer.novelty_capacity": cap}))["metrics"]["update_count_ae"]
            for seed in SEEDS]
        means[cap] = float(np.mean(counts))
    vals = [means[c] for c in (400, 800, 1600)]
    verdict(7, vals[0] >= vals[1] >= vals[2],
            "mean update counts " + ", ".join(f"capacity {c}: {m:.1f}" for c, m in means.items())
            + " are non-increasing")


# ---- 8

MINI_GRID = """\
experiment.instance = C
experiment.seed = 11
data.length = 600
data.supervised = true
phases.warm_up = 150
phases.update = 350
phases.evaluation = 100
model.encoder = 8
model.predictor = 8
train.epochs_a_1 = 6
train.epochs_p_1 = 6
train.epochs_a_2 = 3
train.epochs_p_2 = 3
grid.buffer.novelty_capacity = 40, 80
grid.threshold.alpha = 0.75, 0.95
grid.repeats = 2
"""


def test_criterion_8_grid_determinism(verdict, tmp_path):
    grid = experiment.GridConfig.from_text(MINI_GRID)
    a, b = tmp_path / "p1.jsonl", tmp_path / "p8.jsonl"
    experiment.run_grid(grid, a, parallel=1)
    experiment.run_grid(grid, b, parallel=8)
    lines = a.read_text().splitlines()
    ok = a.read_bytes() == b.read_bytes() and len(lines) == 8
    verdict(8, ok, f"{len(lines)} records; parallel 1 vs 8 byte-identical: "
                   f"{a.read_bytes() == b.read_bytes()}")


# ---- 9


def test_criterion_9_forgetting_ratio_units(verdict):
    checks = {
        "fr(0.01, 0.03) == 2.0": metrics.forgetting_ratio(0.01, 0.03) == pytest.approx(2.0, abs=1e-15),
        "clamped when L2 < L1": metrics.forgetting_ratio(0.03, 0.01) == 0.0,
        "scale invariance (powers of two)": all(
            metrics.forgetting_ratio(0.01 * c, 0.03 * c) == metrics.forgetting_ratio(0.01, 0.03)
            for c in (0.25, 0.5, 2.0, 1024.0)),
    }
    verdict(9, all(checks.values()), ", ".join(f"{k}: {v}" for k, v in checks.items()))
