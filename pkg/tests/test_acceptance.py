"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) and then
asserts at the stated tolerance. The end-to-end criteria share one set of
Gaussian-blob runs at seed 0.
"""

import dataclasses
import math

import numpy as np
import pytest
from oracles import c_args, max_fd_relative_error, oracle_policy1, oracle_policy2, oracle_value_only, random_case

from infolr.data import gen_gaussian_pair, load_mnist, read_idx_images, read_idx_labels
from infolr.data import write_idx_images, write_idx_labels
from infolr.mi_estimator import ksg_mi
from infolr.nn import NetworkSpec, init_network
from infolr.probe import mi_vs_sample_size
from infolr.runner import RunConfig, resume_with_batch_size, run_experiment, spearman
from infolr.scheduler import (
    PRESETS,
    PolicyConstants,
    SchedulerState,
    advance,
    bs_change_step,
    default_constants,
    initial_state,
    layerwise_step,
    observe,
    policy1_step,
    policy2_step,
)

# Desk-scale end-to-end setup: 10 classes in 10 dimensions, 400 training
# points per class, checkpoint every epoch so the batch-size experiment can
# branch off after epoch 3.
E2E = dict(
    dataset="blobs",
    blobs_per_class=500,
    blobs_classes=10,
    blobs_dim=10,
    blobs_separation=2.0,
    hidden_sizes=[64, 32],
    batch_size=128,
    lr=0.03,
    epochs=30,
    checkpoint_every=1,
    seed=0,
)
BS_BRANCH_EPOCH = 3


def first_epoch(values, pred):
    return next((i for i, v in enumerate(values) if pred(v)), None)


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    base = RunConfig(**E2E)
    runs = {
        "fixed": run_experiment(dataclasses.replace(base, policy="fixed"), out_dir=root / "fixed"),
        "dynamic": run_experiment(dataclasses.replace(base, policy="dynamic-change-value"), out_dir=root / "dynamic"),
        "layerwise": run_experiment(dataclasses.replace(base, policy="layerwise"), out_dir=root / "layerwise"),
    }
    ckpt = root / "dynamic" / "checkpoints" / f"ckpt_{BS_BRANCH_EPOCH:04d}.bin"
    runs["bs"] = resume_with_batch_size(ckpt, 2 * base.batch_size, 3, out_dir=root / "bs")
    return root, base, runs


def test_c01_estimator_oracle(report):
    worst = []
    ok = True
    for rho, tol in ((0.0, 0.1), (0.5, 0.1), (0.9, 0.1), (0.99, 0.15)):
        truth = -0.5 * math.log(1 - rho**2)
        est = float(np.mean([ksg_mi(*gen_gaussian_pair(1000, rho, seed=s), k=4).value for s in range(10)]))
        err = abs(est - truth)
        worst.append(f"rho={rho}: |{est:.4f}-{truth:.4f}|={err:.4f}<={tol}")
        ok &= err <= tol
    assert report(1, ok, "; ".join(worst))


def test_c02_curve_std_shrinks(report):
    x, y = gen_gaussian_pair(20000, 0.9, seed=0)
    pts = mi_vs_sample_size(x, y, [100, 500, 2000], repeats=10, seed=0)
    stds = [p.std for p in pts]
    ok = stds[0] > stds[1] > stds[2]
    assert report(2, ok, "std at 100/500/2000 = " + ", ".join(f"{s:.4f}" for s in stds))


def test_c03_scheduler_oracle_equivalence(report):
    rng = np.random.default_rng(2024)
    mismatches = {"policy1": 0, "policy2": 0, "bs_change": 0, "layerwise": 0}
    for _ in range(1000):
        s, c = random_case(rng)
        want = oracle_policy1(s.lr, s.ihyll_history, c.lr_min, c.lr_max, c.epsilon, c.gamma1, c.gamma2)
        mismatches["policy1"] += int(policy1_step(s, c).lr_next != want)
        s, c = random_case(rng)
        mismatches["policy2"] += int(policy2_step(s, c).lr_next != oracle_policy2(s.lr, s.ihyll_history, s.ixy, *c_args(c)))
        s, c = random_case(rng)
        s = dataclasses.replace(s, value_only_window=int(rng.integers(1, 4)))
        want = oracle_value_only(s.lr, s.ihyll_history, s.ixy, *c_args(c))
        mismatches["bs_change"] += int(bs_change_step(s, c).lr_next != want)
        _, c = random_case(rng)
        ixy = float(rng.uniform(0.5, 3.0))
        states = [
            SchedulerState(float(rng.uniform(c.lr_min, c.lr_max)), (float(rng.uniform(0.01, 3)),), ixy)
            for _ in range(int(rng.integers(1, 5)))
        ]
        new = [float(rng.uniform(-0.05, 3.0)) for _ in states]
        got = [d.lr_next for d in layerwise_step(states, new, c)]
        want = [oracle_policy2(st.lr, st.ihyll_history + (v,), ixy, *c_args(c)) for st, v in zip(states, new)]
        mismatches["layerwise"] += got != want
    ok = not any(mismatches.values())
    assert report(3, ok, "mismatches over 1000 cases each: " + str(mismatches))


def test_c04_quoted_constants(report):
    expected = {
        ("change", "mnist"): (0.1, 1.0),
        ("change", "cifar10"): (0.003, 0.003),
        ("change-value", "mnist"): (0.1, 0.1),
        ("change-value", "cifar10"): (0.001, 0.001),
    }
    ok = True
    for key, (g1, g2) in expected.items():
        p = PRESETS[key]
        ok &= (p["gamma1"], p["gamma2"]) == (g1, g2)
        ok &= p["epsilon"] == 0.01
        c = default_constants(*key, desired_lr=0.01)
        ok &= (c.gamma1, c.gamma2, c.epsilon) == (g1, g2, 0.01)
        if key[0] == "change-value":
            ok &= p["gamma3"] == 0.1 and c.gamma3 == 0.1
    assert report(4, ok, "presets " + str(PRESETS))


def test_c05_warmup_cooldown_shape(report):
    c = default_constants("change", "mnist", 0.01)
    state = initial_state(c)
    lrs = []
    for t in range(40):
        lrs.append(state.lr)
        state = observe(state, 2.3 / (1 + math.exp(-(t - 10) / 2)))
        state = advance(state, policy1_step(state, c))
    peak = int(np.argmax(lrs))
    rising = all(b >= a for a, b in zip(lrs[:peak], lrs[1 : peak + 1]))
    falling = all(b <= a for a, b in zip(lrs[peak:], lrs[peak + 1 :]))
    ok = rising and falling and max(lrs) > c.lr_min
    detail = f"peak {max(lrs):.4g} at epoch {peak}, final {lrs[-1]:.4g}, lr_min {c.lr_min:.4g}"
    assert report(5, ok, detail)


def test_c06_dpi_violation_lowers_lr(report):
    rng = np.random.default_rng(6)
    failures = 0
    for _ in range(1000):
        lr_min = 10 ** rng.uniform(-5, -2)
        c = PolicyConstants(lr_min, lr_min * 10 ** rng.uniform(0.1, 3), gamma3=10 ** rng.uniform(-3, 0))
        ixy = float(rng.uniform(0.2, 3.0))
        # excess down to 1e-12; at one ulp the step is below lr's resolution
        ihyll = ixy * (1 + 10 ** rng.uniform(-12, 0))
        lr = float(np.nextafter(lr_min, 1.0)) if rng.random() < 0.1 else float(rng.uniform(lr_min, c.lr_max))
        if lr <= lr_min:
            lr = float(np.nextafter(lr_min, 1.0))
        state = SchedulerState(lr, (float(rng.uniform(0.1, 4)), ihyll), ixy)
        failures += not policy2_step(state, c).lr_next < state.lr
    assert report(6, failures == 0, f"{failures} of 1000 random violation states failed to lower the LR")


@pytest.mark.parametrize("activation", ["relu"])
def test_c07_gradient_check(report, activation):
    rng = np.random.default_rng(7)
    net = init_network(NetworkSpec([4, 5, 3], activation, seed=7))
    err = max_fd_relative_error(net, rng.standard_normal((8, 4)), rng.integers(0, 3, 8))
    assert report(7, err <= 1e-4, f"max relative error {err:.2e} <= 1e-4")


def test_c08_end_to_end_directions(report, e2e):
    _, _, runs = e2e
    fixed, dyn = runs["fixed"].records, runs["dynamic"].records
    s_ihy = spearman([r.ihyll for r in dyn], range(len(dyn)))
    s_acc = spearman([r.test_acc for r in dyn], [r.ihyll for r in dyn])

    fixed_acc = [r.test_acc for r in fixed]
    dyn_acc = [r.test_acc for r in dyn]
    best = max(fixed_acc)
    best_epoch = fixed_acc.index(best)
    dyn_best_epoch = first_epoch(dyn_acc, lambda a: a >= best - 0.005)
    threshold = fixed_acc[-1] - 0.01
    fixed_thr, dyn_thr = first_epoch(fixed_acc, lambda a: a >= threshold), first_epoch(dyn_acc, lambda a: a >= threshold)

    ok_a = s_ihy > 0.8
    ok_b = s_acc > 0.8
    ok_c = dyn_best_epoch is not None and dyn_best_epoch <= best_epoch and dyn_thr is not None and dyn_thr <= fixed_thr
    detail = (
        f"(a) spearman(ihyll, epoch)={s_ihy:.3f}; (b) spearman(acc, ihyll)={s_acc:.3f}; "
        f"(c) fixed best {best:.3f} at epoch {best_epoch}, dynamic within 0.5pt at {dyn_best_epoch}; "
        f"threshold {threshold:.3f} reached at fixed {fixed_thr} / dynamic {dyn_thr}"
    )
    assert report(8, ok_a and ok_b and ok_c, detail)


def test_c09_batch_size_change(report, e2e):
    _, base, runs = e2e
    dyn, bs = runs["dynamic"].records, runs["bs"].records
    base_peak = max(r.lr for r in dyn)
    bs_peak = max(r.lr for r in bs)
    gap = abs(bs[-1].test_acc - dyn[-1].test_acc)
    ok = bs_peak > base_peak and gap <= 0.005 and bs[0].batch_size == 2 * base.batch_size
    detail = (
        f"resumed after epoch {BS_BRANCH_EPOCH} at batch {bs[0].batch_size}: peak lr {bs_peak:.4g} vs base {base_peak:.4g}; "
        f"final acc {bs[-1].test_acc:.3f} vs {dyn[-1].test_acc:.3f} (gap {gap:.3f} <= 0.005)"
    )
    assert report(9, ok, detail)


def test_c10_layerwise(report, e2e):
    _, base, runs = e2e
    lw, dyn = runs["layerwise"].records, runs["dynamic"].records
    c = base.constants()
    in_bounds = all(c.lr_min <= v <= c.lr_max for r in lw for v in r.lr_layers)
    differ = any(len(set(r.lr_layers)) > 1 for r in lw)
    gap = abs(lw[-1].test_acc - dyn[-1].test_acc)
    ok = in_bounds and differ and gap <= 0.01
    detail = f"bounds ok={in_bounds}, layers differ={differ}, final acc {lw[-1].test_acc:.3f} vs {dyn[-1].test_acc:.3f}"
    assert report(10, ok, detail + f" (gap {gap:.3f} <= 0.01)")


def test_c11_determinism(report, e2e, tmp_path):
    root, base, _ = e2e
    run_experiment(dataclasses.replace(base, policy="dynamic-change-value"), out_dir=tmp_path / "again")
    same = {
        name: (root / "dynamic" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()
        for name in ("epochs.csv", "decisions.csv")
    }
    assert report(11, all(same.values()), f"byte-identical: {same}")


def test_c12_idx_parsing(report, tmp_path, mnist_dir):
    data = load_mnist(mnist_dir)
    magics = {
        name: int.from_bytes((mnist_dir / name).read_bytes()[:4], "big")
        for name in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
        if (mnist_dir / name).exists()
    }
    counts_ok = (len(data.train_x), len(data.test_x)) == (60000, 10000) and data.train_x.shape[1] == 784
    magic_ok = all(m == (2051 if "images" in n else 2049) for n, m in magics.items())

    rng = np.random.default_rng(12)
    images = rng.integers(0, 256, (3, 28, 28), dtype=np.uint8)
    labels = np.array([3, 1, 4], dtype=np.uint8)
    write_idx_images(tmp_path / "i", images)
    write_idx_labels(tmp_path / "l", labels)
    round_trip = np.array_equal(read_idx_images(tmp_path / "i"), images) and np.array_equal(
        read_idx_labels(tmp_path / "l"), labels
    )
    ok = counts_ok and magic_ok and round_trip
    detail = f"train {len(data.train_x)}, test {len(data.test_x)}, magics {sorted(set(magics.values()))}, round-trip {round_trip}"
    assert report(12, ok, detail)


def test_dynamic_lr_profile(e2e):
    # lr starts at lr_min, warms up and cools down
    _, base, runs = e2e
    lrs = [r.lr for r in runs["dynamic"].records]
    c = base.constants()
    peak = int(np.argmax(lrs))
    assert lrs[0] == c.lr_min and 0 < peak < len(lrs) - 1 and lrs[-1] < lrs[peak]
