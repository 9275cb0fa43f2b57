"""Acceptance gate: one test per criterion, each printing a PASS line.

Criteria 4-6 train real models and dominate the runtime (run with -s to see
the printed lines; use -m "not slow" to skip the training-based ones during
development).
"""

import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from modsparse import optim, pruning, regularizer, rnn, tasks
from modsparse.geometry import (Embedding, ManifoldSpec, geodesic_distance,
                                lift_distances, sample_uniform)
from modsparse.inhibitors import InhibitorSpec, derivative, evaluate
from modsparse.experiment import (ExperimentConfig, NavigationTaskAdapter,
                                  _S_PARAMS, run_lottery, run_training)

from conftest import away_from_cut_loci, central_diff, rel_err

SMOOTH_MANIFOLDS = [
    ManifoldSpec.circle(),
    ManifoldSpec.sphere(),
    ManifoldSpec.torus2(),
    ManifoldSpec.klein_bottle(),
    ManifoldSpec.torus6(),
    ManifoldSpec.euclidean(3),
]


def _report(num, detail):
    print(f"\nACCEPTANCE {num}: PASS — {detail}")


# ---------------------------------------------------------------------------
# Criterion 1: gradient oracle suite (< 1 minute)

def _bptt_instance(seed, nonlinearity, layers, criterion):
    rng = np.random.default_rng(seed)
    T, B, d_in, d_out = 4, 2, 3, 2
    for attempt in range(50):
        params = rnn.init_rnn_params(
            d_in, [5] * layers, d_out, nonlinearity=nonlinearity,
            decoder_activation="softmax" if criterion == "ce" else "identity",
            seed=list(seed) + [attempt])
        X = rng.standard_normal((T, B, d_in))
        cache = rnn.forward(params, X)
        margin = min(np.min(np.abs(Z)) for Z in cache.preact)
        if nonlinearity != "relu" or margin > 1e-3:
            break
    if criterion == "ce":
        t = rng.uniform(0.1, 1.0, (B, d_out))
        target = t / t.sum(axis=1, keepdims=True)

        def loss(out):
            return float(-np.mean(np.sum(target * np.log(out), axis=-1)))

        def dloss(out):
            return -target / (out * out.shape[0])
    else:
        target = rng.standard_normal((B, d_out))

        def loss(out):
            return float(np.mean((out - target) ** 2))

        def dloss(out):
            return 2.0 * (out - target) / out.size
    return params, X, loss, dloss


def test_criterion_1_gradient_oracles():
    t0 = time.monotonic()

    # BPTT on >= 20 random small instances spanning the config grid
    combos = [(nl, L, crit) for nl in ("relu", "tanh") for L in (1, 2)
              for crit in ("mse", "ce")]
    count = 0
    worst_bptt = 0.0
    for rep in range(3):
        for nl, L, crit in combos:
            params, X, loss, dloss = _bptt_instance([211, rep, L], nl, L, crit)
            cache = rnn.forward(params, X)
            grads, _ = rnn.backward(params, cache, dloss(cache.output))
            tensors = params.tensors()
            names = sorted(tensors)
            vec = np.concatenate([tensors[n].ravel() for n in names])

            def f(v):
                i = 0
                for n in names:
                    size = tensors[n].size
                    tensors[n][...] = v[i:i + size].reshape(tensors[n].shape)
                    i += size
                return loss(rnn.forward(params, X).output)

            fd = central_diff(f, vec)
            f(vec)  # restore
            analytic = np.concatenate([grads[n].ravel() for n in names])
            worst_bptt = max(worst_bptt, rel_err(analytic, fd))
            count += 1
    assert count >= 20 and worst_bptt < 1e-4

    # penalty weight gradients
    rng = np.random.default_rng(212)
    worst_w = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 5))
        ell = float(rng.choice([1.0, 1.5, 2.0]))
        C = regularizer.CoefficientMatrix(rng.uniform(0.1, 10.0, (n, n)),
                                          "moduli", ell)
        W = rng.standard_normal((n, n))
        W[np.abs(W) < 1e-3] = 1e-2
        fd = central_diff(lambda w: regularizer.penalty(C, w.reshape(n, n)),
                          W.ravel())
        worst_w = max(worst_w,
                      rel_err(regularizer.penalty_weight_grad(C, W).ravel(), fd))
    assert worst_w < 1e-5

    # embedding gradients
    dog = InhibitorSpec.dog()
    worst_e = 0.0
    checked = 0
    for m in (ManifoldSpec.torus2(), ManifoldSpec.klein_bottle(),
              ManifoldSpec.circle(), ManifoldSpec.euclidean(3)):
        found, attempt = 0, 0
        while found < 5:
            attempt += 1
            emb = sample_uniform(m, 3, seed=[213, attempt])
            if not away_from_cut_loci(m, emb):
                continue
            W = rng.standard_normal((3, 3))
            grads, _ = regularizer.penalty_embedding_grad(emb, emb, dog, W, 1.0)

            def f(flat):
                e = Embedding(m, flat.reshape(3, m.coord_dim))
                return regularizer.penalty(
                    regularizer.build_coefficients(e, e, dog, 1.0), W)

            fd = central_diff(f, emb.points.ravel())
            worst_e = max(worst_e, rel_err(grads.ravel(), fd))
            found += 1
            checked += 1
    assert checked == 20 and worst_e < 1e-5

    # inhibitor derivatives: relative bound away from critical points,
    # absolute floor near them (finite differences bottom out at ~1e-9)
    worst_i = 0.0
    h = 1e-6
    for spec in (InhibitorSpec.dog(), InhibitorSpec.ricker(),
                 InhibitorSpec.diffusion(), InhibitorSpec.sinusoid(),
                 InhibitorSpec.constant()):
        for d in np.random.default_rng(214).uniform(0.01, 20.0, 20):
            fd = (evaluate(spec, d + h) - evaluate(spec, d - h)) / (2 * h)
            an = derivative(spec, d)
            scale = max(abs(an), abs(fd))
            assert abs(an - fd) < max(1e-9, 1e-6 * scale)
            if scale > 1e-3:
                worst_i = max(worst_i, abs(an - fd) / scale)
    assert worst_i < 1e-5

    elapsed = time.monotonic() - t0
    assert elapsed < 60.0
    _report(1, f"BPTT {worst_bptt:.2e}, weights {worst_w:.2e}, "
               f"embeddings {worst_e:.2e}, inhibitors {worst_i:.2e} "
               f"in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# Criterion 2: geometry suite

def test_criterion_2_geometry():
    t0 = time.monotonic()
    for m in SMOOTH_MANIFOLDS:
        pts = sample_uniform(m, 3000, seed=761).points
        x, y, z = pts[:1000], pts[1000:2000], pts[2000:]
        for i in range(1000):
            dxy = geodesic_distance(m, x[i], y[i])
            assert dxy == geodesic_distance(m, y[i], x[i])
            assert dxy <= (geodesic_distance(m, x[i], z[i])
                           + geodesic_distance(m, z[i], y[i]) + 1e-9)

    klein = ManifoldSpec.klein_bottle()
    # dyadic y keeps the identified point (10, 10 - y) exactly representable
    for k in range(0, 1024, 5):
        yv = k * (10.0 / 1024.0)
        assert geodesic_distance(klein, [0.0, yv], [10.0, 10.0 - yv]) == 0.0
    rng = np.random.default_rng(762)
    for _ in range(200):  # arbitrary y: identified up to input rounding
        yv = rng.uniform(0.0, 10.0)
        assert geodesic_distance(klein, [0.0, yv], [10.0, 10.0 - yv]) < 1e-12

    torus = ManifoldSpec.torus2()
    pts = sample_uniform(torus, 2000, seed=763).points
    maxd = max(geodesic_distance(torus, pts[i], pts[1000 + i])
               for i in range(1000))
    assert maxd <= np.sqrt(50.0) + 1e-9
    _report(2, f"metric axioms on 6 manifolds, torus diameter {maxd:.4f} "
               f"<= sqrt(50), in {time.monotonic() - t0:.1f}s")


# ---------------------------------------------------------------------------
# Criterion 3: pruning exactness

def test_criterion_3_pruning_schedule(tmp_path):
    rng = np.random.default_rng(907)
    for _ in range(50):
        n = int(rng.integers(2, 50))
        k = int(rng.integers(1, n + 1))
        p = float(rng.uniform(0, 99.9))
        assert pruning.scheduled_sparsity(k, n, p) == pytest.approx(
            (k - 1) * p / (n - 1), abs=1e-12)

    # standalone schedule on a 128x128 matrix
    W = rng.standard_normal((128, 128))
    for k in range(1, 11):
        level = pruning.scheduled_sparsity(k, 10, 90.0)
        mask = pruning.magnitude_prune(W, level)
        frac = float(np.mean(mask == 0))
        assert abs(frac - level / 100.0) <= 1.0 / 16384.0

    # through a real training run with a final checkpoint
    cfg = ExperimentConfig.from_dict({
        "task": "adding", "data": {"seq_len": 10},
        "model": {"hidden": 128, "nonlinearity": "relu", "bias": True},
        "regularizer": {"mode": "none"},
        "pruning": {"enabled": True, "target_percent": 90, "epochs": 10},
        "optimizer": {"kind": "adam", "lr": 1e-4, "grad_clip": 0.5},
        "run": {"seed": 5, "epochs": 10, "batches_per_epoch": 20,
                "batch_size": 8, "eval_every": 20, "eval_batches": 2},
    })
    result = run_training(cfg, out_dir=str(tmp_path / "sched"))
    for k, rec in enumerate(result.metrics, start=1):
        level = pruning.scheduled_sparsity(k, 10, 90.0)
        assert abs(rec.sparsity_percent - level) <= 100.0 / 16384.0
    from modsparse.checkpoint import load_checkpoint
    tensors, masks, _ = load_checkpoint(tmp_path / "sched" / "checkpoint")
    W_final = tensors["layers.0.W_hh"]
    n_zero = int(np.sum(W_final == 0.0))
    assert n_zero == int(np.floor(0.9 * 16384))  # 90% with floor rounding
    assert np.all(W_final[masks["layers.0.W_hh"] == 0] == 0.0)
    _report(3, f"schedule {{0,10,...,90}}%% within 1/16384 per epoch; final "
               f"checkpoint has {n_zero}/16384 exact zeros")


# ---------------------------------------------------------------------------
# Criterion 4: adding problem, desk scale, dense model

ADDING_DESK = {
    "task": "adding",
    "data": {"seq_len": 50},
    "model": {"hidden": 128, "nonlinearity": "relu", "bias": True},
    "regularizer": {"mode": "none"},
    "pruning": {"enabled": False},
    "optimizer": {"kind": "adam", "lr": 1e-4, "grad_clip": 0.5},
    "run": {"seed": 0, "epochs": 10, "batches_per_epoch": 2000,
            "batch_size": 32, "eval_every": 2000, "eval_batches": 8},
}


@pytest.mark.slow
def test_criterion_4_adding_dense():
    config = ExperimentConfig.from_dict(ADDING_DESK)
    result = run_training(config)
    # constant-1 predictor on the same eval targets
    targets = np.concatenate([
        tasks.gen_adding_batch(50, 32, [0, 5, j]).target for j in range(8)])
    baseline = float(np.sqrt(np.mean((1.0 - targets) ** 2)))
    assert baseline == pytest.approx(0.41, abs=0.04)
    assert result.final_eval < 0.20
    assert result.final_eval < baseline / 2.0
    _report(4, f"dense RMSE {result.final_eval:.4f} after 20k batches vs "
               f"constant-1 baseline {baseline:.3f}")


# ---------------------------------------------------------------------------
# Criterion 5: moduli sparsification at 95% beats plain magnitude pruning

C5_TOTAL_BATCHES = 10000
C5_SCHEDULE_EPOCHS = 10
C5_EXTRA_EPOCHS = 2
C5_LAMBDA = 1e-4


def _c5_config(mode, seed):
    reg = {"mode": "none"} if mode == "none" else {
        "mode": "moduli", "manifold": {"kind": "torus2"},
        "inhibitor": {"kind": "dog"}, "lambda": C5_LAMBDA}
    epochs = C5_SCHEDULE_EPOCHS + C5_EXTRA_EPOCHS
    bpe = C5_TOTAL_BATCHES // epochs
    return {
        "task": "adding", "data": {"seq_len": 50},
        "model": {"hidden": 128, "nonlinearity": "relu", "bias": True},
        "regularizer": reg,
        "pruning": {"enabled": True, "target_percent": 95,
                    "epochs": C5_SCHEDULE_EPOCHS},
        "optimizer": {"kind": "adam", "lr": 1e-4, "grad_clip": 0.5},
        "run": {"seed": seed, "epochs": epochs, "batches_per_epoch": bpe,
                "batch_size": 32, "eval_every": bpe, "eval_batches": 8},
    }


def _c5_final(args):
    mode, seed = args
    config = ExperimentConfig.from_dict(_c5_config(mode, seed))
    return run_training(config).final_eval


@pytest.mark.slow
def test_criterion_5_moduli_beats_plain_pruning_at_95():
    jobs = [("moduli", s) for s in range(5)] + [("none", s) for s in range(5)]
    with ProcessPoolExecutor(max_workers=2) as pool:
        finals = list(pool.map(_c5_final, jobs))
    moduli = finals[:5]
    plain = finals[5:]
    wins = sum(m < p for m, p in zip(moduli, plain))
    detail = ", ".join(f"s{s}: {m:.3f} vs {p:.3f}"
                       for s, (m, p) in enumerate(zip(moduli, plain)))
    assert wins >= 3, detail
    _report(5, f"moduli wins {wins}/5 at 95% sparsity ({detail})")


# ---------------------------------------------------------------------------
# Criterion 6: navigation, desk scale

NAV_DESK = {
    "task": "navigation",
    "data": {"seq_len": 20, "n_landmarks": 64, "landmark_seed": 0},
    "model": {"hidden": 256, "nonlinearity": "relu", "bias": False,
              "decoder_bias": False},
    "regularizer": {"mode": "none"},
    "pruning": {"enabled": False},
    "optimizer": {"kind": "adam", "lr": 1e-3},
    "run": {"seed": 0, "epochs": 4, "batches_per_epoch": 500,
            "batch_size": 50, "eval_every": 1000, "eval_batches": 4},
}


@pytest.mark.slow
def test_criterion_6_navigation_desk_scale():
    config = ExperimentConfig.from_dict(NAV_DESK)
    task = NavigationTaskAdapter(config)
    untrained = rnn.init_rnn_params(
        2, [256], 64, nonlinearity="relu", bias=False, decoder_bias=False,
        decoder_activation="softmax", seed=[config.run.seed, _S_PARAMS])
    err0 = task.eval_metric(untrained, task.init_extras(256))
    assert 80.0 <= err0 <= 120.0  # 200 eval trajectories

    result = run_training(config)
    assert result.final_eval < 40.0
    _report(6, f"untrained decode error {err0:.1f} cm in [80, 120]; trained "
               f"{result.final_eval:.1f} cm < 40 after 2000 batches")


# ---------------------------------------------------------------------------
# Criterion 7: degenerate-collapse guard for monotone inhibitors

def test_criterion_7_collapse_bound():
    rng = np.random.default_rng(421)
    torus = ManifoldSpec.torus2()
    for trial in range(100):
        spec = (InhibitorSpec.diffusion(c=float(rng.uniform(0.5, 3.0)),
                                        n_exp=float(rng.uniform(1.0, 3.0)))
                if trial % 2 == 0 else
                InhibitorSpec.constant(c=float(rng.uniform(0.5, 3.0))))
        n = int(rng.integers(2, 8))
        emb = sample_uniform(torus, n, seed=[421, trial])
        collapsed = Embedding(torus, np.tile(emb.points[:1], (n, 1)))
        W = rng.standard_normal((n, n))
        p_spread = regularizer.penalty(
            regularizer.build_coefficients(emb, emb, spec), W)
        p_flat = regularizer.penalty(
            regularizer.build_coefficients(collapsed, collapsed, spec), W)
        assert p_flat <= p_spread + 1e-12
    _report(7, "collapsed-embedding penalty <= spread penalty on 100 random "
               "(W, embedding) pairs for monotone inhibitors")


# ---------------------------------------------------------------------------
# Criterion 8: shuffled control preserves the coefficient multiset

def test_criterion_8_shuffle_multiset():
    emb = sample_uniform(ManifoldSpec.torus2(), 64, seed=5)
    C = regularizer.build_coefficients(emb, emb, InhibitorSpec.dog())
    for seed in range(10):
        S = regularizer.shuffle(C, seed)
        np.testing.assert_array_equal(np.sort(S.values.ravel()),
                                      np.sort(C.values.ravel()))
        assert S.source == "shuffled"
    _report(8, "10 seeded shuffles of a 64x64 coefficient matrix are "
               "bitwise multiset-identical to their source")


# ---------------------------------------------------------------------------
# Criterion 9: lottery protocol

def test_criterion_9_lottery_protocol(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "task": "adding", "data": {"seq_len": 8},
        "model": {"hidden": 16, "nonlinearity": "relu", "bias": True},
        "regularizer": {"mode": "moduli", "manifold": {"kind": "torus2"},
                        "inhibitor": {"kind": "dog"}, "lambda": 1e-3,
                        "trainable_embedding": True, "embedding_lr": 0.5},
        "pruning": {"enabled": True, "target_percent": 60, "epochs": 4},
        "optimizer": {"kind": "adam", "lr": 1e-3, "grad_clip": 0.5},
        "run": {"seed": 2, "epochs": 4, "batches_per_epoch": 5,
                "batch_size": 4, "eval_every": 5, "eval_batches": 1},
    })
    base = run_training(cfg, out_dir=str(tmp_path / "base"))
    mask = base.masks["layers.0.W_hh"].copy()
    emb_json = (tmp_path / "base" / "embedding_layer0.json").read_text()

    a = run_lottery(cfg, str(tmp_path / "base"), seed=77,
                    out_dir=str(tmp_path / "la"))
    b = run_lottery(cfg, str(tmp_path / "base"), seed=77,
                    out_dir=str(tmp_path / "lb"))

    np.testing.assert_array_equal(a.masks["layers.0.W_hh"], mask)
    W = a.params.tensors()["layers.0.W_hh"]
    assert np.all(W[mask == 0] == 0.0)
    # embeddings frozen: artifact untouched, coefficients reused bitwise
    assert (tmp_path / "base" / "embedding_layer0.json").read_text() == emb_json
    ca = regularizer.load_coefficients(tmp_path / "la" / "coefficients_layer0")
    cb = regularizer.load_coefficients(tmp_path / "base" / "coefficients_layer0")
    np.testing.assert_array_equal(ca.values, cb.values)
    # bitwise reproducibility across reruns with the same seed
    for name, arr in a.params.tensors().items():
        np.testing.assert_array_equal(arr, b.params.tensors()[name])
    _report(9, "masks and embeddings frozen through retraining; reruns "
               "bitwise identical")


# ---------------------------------------------------------------------------
# Criterion 10: the worked adding-problem example

def test_criterion_10_worked_example():
    values = np.array([[.2, .6, .9, .1, .4, .4, .7, .1, .8]])
    mask = np.array([[0., 0., 1., 0., 1., 0., 0., 0., 0.]])
    batch = tasks.AddingBatch(values, mask, np.sum(values * mask, axis=1))
    assert batch.target[0] == pytest.approx(1.3, abs=1e-12)
    assert batch.inputs.shape == (9, 1, 2)
    _report(10, "values/mask row pair sums to 1.3 through the two-row input "
                "encoding")
