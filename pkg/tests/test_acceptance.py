"""One test per acceptance criterion, numbered 1 to 10."""

import copy
import itertools
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import spearmanr

from artoveq import channel as ch
from artoveq import gradcore as gc
from artoveq import harness as H
from artoveq import training as T
from artoveq import vq
from artoveq.cli import main
from artoveq.codebook import LBGConfig, NestedCodebook, lbg_fit, lbg_objective
from artoveq.harness import Benchmark, ExperimentConfig

from oracles import (activation_signs, budget_pmf, eq6_objective, frozen_level_objective, lloyd_oracle,
                     mlp_forward)


@pytest.fixture(scope="session")
def bench():
    """The benchmark configuration: M=1, d=2, L=8, seed 0."""
    return Benchmark(ExperimentConfig())


@pytest.fixture(scope="session")
def bench4():
    """Four segments, short schedule; used for the structural checks."""
    cfg = ExperimentConfig(num_segments=4, warmstart_epochs=5, epochs_per_level=1, fixed_rate_epochs=1)
    return Benchmark(cfg)


@pytest.fixture(scope="session")
def sweep(bench):
    return H.run_rate_sweep(bench.cfg, bench, schemes=("artoveq", "fixed_rate"))


# -- 1 -------------------------------------------------------------------------------


def _as_float64(model, cb):
    model, cb = copy.deepcopy(model), copy.deepcopy(cb)
    for p in model.parameters() + [cb.table]:
        p.data = p.data.astype(np.float64)
    return model, cb


@pytest.mark.slow
def test_c1_gradient_fidelity(bench4):
    model, cb = _as_float64(*bench4.variable_rate())
    cfg = bench4.cfg
    M, d, level = cfg.num_segments, cfg.dim, 4
    loss_cfg = cfg.plan().loss
    rng = np.random.default_rng(2024)
    pick = rng.choice(len(bench4.train), 32, replace=False)
    x, y = bench4.train.x[pick].astype(np.float64), bench4.train.y[pick]
    n_snap = 1 << (level - 1)
    snapshot = cb.codewords[:n_snap] + rng.normal(scale=0.05, size=(n_snap, d))

    with gc.precision(np.float64):
        fb = model.encode(x)
        T.level_loss(model, cb, fb, y, level, loss_cfg, snapshot).total.backward()

    enc = [(w.data, b.data) for w, b in model.encoder.layers]
    dec = [(w.data, b.data) for w, b in model.decoder.layers]
    book = cb.codewords

    # stop-gradient operands held at the base point
    xe0 = mlp_forward(enc, x)[0].reshape(-1, d)
    frozen = {}
    for j in range(1, level + 1):
        idx = np.argmin(((xe0[:, None, :] - book[None, : 1 << j]) ** 2).sum(-1), axis=1)
        frozen[j] = (idx, xe0.copy(), book[idx].copy())
    betas = loss_cfg.beta_per_level

    def objective():
        return frozen_level_objective(enc, dec, book, x, y, level, M, d, betas, loss_cfg.eta(level), snapshot, frozen)

    base_signs = activation_signs(enc, dec, x, frozen, M, d)
    params = [p for p in model.parameters()] + [cb.table]
    sizes = np.array([p.data.size for p in params])
    h, checked, skipped = 1e-4, 0, 0
    while checked < 50:
        k = rng.choice(len(params), p=sizes / sizes.sum())
        flat = params[k].data.reshape(-1)
        i = rng.integers(flat.size)
        orig = flat[i]
        vals, signs_ok = [], True
        for step in (h, -h):
            flat[i] = orig + step
            vals.append(objective())
            signs = activation_signs(enc, dec, x, frozen, M, d)
            signs_ok &= all(np.array_equal(a, b) for a, b in zip(signs, base_signs))
        flat[i] = orig
        if not signs_ok:  # central difference straddles a kink of the activation
            skipped += 1
            continue
        fd = (vals[0] - vals[1]) / (2 * h)
        g = params[k].grad.reshape(-1)[i]
        rel = abs(g - fd) / max(abs(g), abs(fd), 1e-8)
        assert rel <= 1e-4, (k, i, g, fd)
        checked += 1
    assert skipped < 50


@pytest.mark.slow
def test_c1_straight_through_matches_surrogate(bench4, monkeypatch):
    model, cb = _as_float64(*bench4.variable_rate())
    loss_cfg = bench4.cfg.plan().loss
    x, y = bench4.train.x[:16].astype(np.float64), bench4.train.y[:16]

    def grads():
        for p in model.parameters() + [cb.table]:
            p.grad = None
        with gc.precision(np.float64):
            T.level_loss(model, cb, model.encode(x), y, 3, loss_cfg).total.backward()
        return [p.grad.copy() for p in model.parameters() + [cb.table]]

    reference = grads()
    monkeypatch.setattr(vq, "straight_through", lambda xe, z: gc.add(xe, gc.stop_gradient(gc.sub(z, xe))))
    surrogate = grads()
    for a, b in zip(reference, surrogate):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


# -- 2 -------------------------------------------------------------------------------


@pytest.mark.parametrize("size", [2, 4, 8])
def test_c2_lbg_oracle_equivalence(size):
    pts = np.random.default_rng(size).uniform(size=(200, 2))
    res = lbg_fit(pts, LBGConfig(size))
    ref = lloyd_oracle(pts, size)
    assert abs(lbg_objective(pts, res.codewords) - eq6_objective(pts, ref)) <= 1e-6
    hist = res.distortion_history
    assert all(b <= a for a, b in zip(hist, hist[1:]))


# -- 3 -------------------------------------------------------------------------------


@pytest.mark.slow
def test_c3_nesting_and_minkowski(bench4):
    _, cb = bench4.variable_rate()
    assert len(cb) == 256 and cb.dim == 2
    for level in range(2, 9):
        lo, hi = cb.sub_codebook(level - 1), cb.sub_codebook(level)
        assert len(hi) == 2**level
        np.testing.assert_array_equal(lo.view(np.uint32), hi[: 1 << (level - 1)].view(np.uint32))

    _, pcb = bench4.progressive()
    for level in range(1, 9):
        words = pcb.materialize(level)
        assert len(words) == 2**level
        if level > 1:
            pair = pcb.pairs[level - 1].data
            np.testing.assert_array_equal(words, (pcb.materialize(level - 1)[:, None] + pair[None]).reshape(-1, 2))
    for bits in itertools.islice(itertools.product("01", repeat=8), 0, 256, 17):
        word = pcb.pairs[0].data[int(bits[0])]
        for j in range(1, 8):
            word = word + pcb.pairs[j].data[int(bits[j])]
        np.testing.assert_array_equal(pcb.materialize(8)[int("".join(bits), 2)], word)


# -- 4 -------------------------------------------------------------------------------


@pytest.mark.slow
def test_c4_rate_accuracy_trend(sweep):
    acc = [sweep.accuracy("artoveq")[(l,)] for l in range(1, 9)]
    assert acc[7] - acc[0] >= 0.10, acc
    assert spearmanr(range(1, 9), acc).statistic >= 0.8, acc


# -- 5 -------------------------------------------------------------------------------


@pytest.mark.slow
def test_c5_single_codebook_gap(sweep):
    var, fixed = sweep.accuracy("artoveq"), sweep.accuracy("fixed_rate")
    gaps = {l: fixed[(l,)] - var[(l,)] for l in range(1, 9)}
    assert all(abs(g) <= 0.05 for g in gaps.values()), gaps


# -- 6 -------------------------------------------------------------------------------


@pytest.mark.slow
def test_c6_mixed_granularity(bench4):
    cfg = bench4.cfg
    res = H.run_mixed_vs_identical(cfg, bench4)
    mixed = res.select("mixed")
    assert {r.bits for r in mixed} == set(range(4, 33))
    for r in mixed:
        assert r.bits == sum(r.allocation) and len(r.allocation) == 4
    # every allocation in {1..8}^4 is evaluable and its bits add up exactly
    model, cb = bench4.mixed()
    fb = model.encode(bench4.test.x[:4])
    budgets = set()
    for alloc in itertools.product(range(1, 9), repeat=4):
        used = vq.quantize_block(fb, cb, list(alloc)).bits_used
        assert used == sum(alloc)
        budgets.add(used)
    assert budgets == set(range(4, 33))


# -- 7 -------------------------------------------------------------------------------


@pytest.mark.parametrize("k", [-0.25, 0.0, 0.25])
def test_c7_scenario_distribution(k):
    draws = ch.draw_budgets(ch.ScenarioSpec(k), np.random.default_rng(7), 100_000)
    freq = np.bincount(draws, minlength=9)[1:] / len(draws)
    assert set(np.unique(draws)) <= set(range(1, 9))
    assert 0.5 * np.abs(freq - np.array(budget_pmf(k))).sum() <= 0.01
    if k == 0.0:
        assert np.all(ch.ScenarioSpec(k).probabilities() == 0.125)


# -- 8 -------------------------------------------------------------------------------


@pytest.mark.parametrize("rule", ch.LATENCY_RULES)
def test_c8_level_selection_grid(rule):
    M, L = 4, 8

    def fits(level, c, tau):
        lat = Fraction(level, M * c) if rule == "eq4" else Fraction(M * level, c)
        return lat <= tau

    for c in range(10, 1001):
        for i in range(1, 101):
            tau = Fraction(i, 1000)
            if not fits(1, c, tau):
                with pytest.raises(ch.ChannelInfeasible):
                    ch.select_level(c, M, i / 1000, L, rule)
                continue
            level = ch.select_level(c, M, i / 1000, L, rule)
            assert fits(level, c, tau)
            assert level == L or not fits(level + 1, c, tau)


# -- 9 -------------------------------------------------------------------------------


@pytest.mark.slow
def test_c9_dynamic_channel_ordering(bench, sweep):
    table = H.run_dynamic_table(bench.cfg, bench)
    acc = table.accuracy
    s1, s2, s3 = 0.0, -0.25, 0.25
    one, eight = acc["Single-Rate 1-bit"], acc["Single-Rate 8-bit"]
    art, multi, prog = acc["ARTOVeQ"], acc["Multiple Fixed-Rate"], acc["Progressive ARTOVeQ"]
    # (a)
    assert one[s1] == one[s2] == one[s3]
    # (b)
    assert eight[s2] < eight[s3]
    assert all(eight[k] < art[k] for k in (s1, s2, s3))
    # (c)
    assert all(abs(art[k] - multi[k]) <= 0.05 for k in (s1, s2, s3)), (art, multi)
    # (d)
    assert all(art[k] - prog[k] <= 0.06 for k in (s1, s2, s3)), (art, prog)


# -- 10 ------------------------------------------------------------------------------


TINY = dict(n_train=160, n_test=80, num_classes=4, input_dim=6, encoder_hidden=[8], decoder_hidden=[8],
            num_segments=2, max_level=3, warmstart_epochs=2, epochs_per_level=1, fixed_rate_epochs=1,
            k=[0.0, -0.25, 0.25], steps=50, single_rates=[1, 3], batch_size=32)

# (subcommand, output directory, extra flags, result files)
RUNS = [
    ("train", "nested", [], ["model.json", "codebook.json", "warmstart.json", "train_eval.csv"]),
    ("sweep", "nested", [], ["sweep.csv"]),
    ("eval", "nested", ["--levels", "3,2"], ["eval.csv"]),
    ("train-mixed", "mixed", [], ["model.json", "codebook.json", "train_eval.csv"]),
    ("mixed-sweep", "mixed", [], ["mixed_sweep.csv"]),
    ("train-progressive", "progressive", [], ["model.json", "codebook.json", "train_eval.csv"]),
    ("channel-sim", "channel", [], ["channel.csv", "channel.txt", "channel_trace.csv"]),
]


def test_c10_cli_determinism(tmp_path):
    ExperimentConfig(**TINY).save(tmp_path / "c.toml")
    pts = np.random.default_rng(0).normal(size=(64, 2))
    np.savetxt(tmp_path / "pts.txt", pts)
    produced = {}
    for run in ("first", "second"):
        out = {}
        for command, where, extra, names in RUNS:
            d = tmp_path / run / where
            cfg = tmp_path / "c.toml" if run == "first" else tmp_path / "first" / where / "config.toml"
            assert main([command, "--config", str(cfg), "--seed", "5", "--out", str(d)] + extra) == 0, command
            out.update({(command, n): (d / n).read_bytes() for n in names + ["config.toml"]})
        lbg = tmp_path / run / "lbg"
        cfg = tmp_path / "c.toml" if run == "first" else tmp_path / "first" / "lbg" / "config.toml"
        assert main(["lbg", "--config", str(cfg), "--points", str(tmp_path / "pts.txt"), "--size", "8",
                     "--out", str(lbg)]) == 0
        out.update({("lbg", n): (lbg / n).read_bytes() for n in ("codebook.json", "lbg.csv", "config.toml")})
        produced[run] = out
    assert produced["first"].keys() == produced["second"].keys()
    for key, blob in produced["first"].items():
        assert produced["second"][key] == blob, key
