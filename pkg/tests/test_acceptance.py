"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines; a pytest FAILED entry is the fail line for its criterion.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from vitforge import autodiff as ad
from vitforge.autodiff import cross_entropy_loss, gradients
from vitforge.checkpoint import ChecksumError, load_checkpoint, save_checkpoint
from vitforge.cli import main
from vitforge.data import kfold_split, make_batches
from vitforge.metrics import (
    ConfusionCounts,
    FoldMetrics,
    aggregate_folds,
    binary_metrics,
    confusion_binary,
    roc_auc,
)
from vitforge.model import (
    HEAD_NAMES,
    ViTConfig,
    attention_head,
    count_parameters,
    embed,
    encoder_block,
    forward,
    init_params,
    mlp_block,
    multi_head_self_attention,
    parameter_shapes,
    patchify,
)
from vitforge.ops import Rng, softmax_rows
from vitforge.training import AdamWState, TrainPlan, adamw_step, set_freeze, train

H_STEP = 1e-5
GRAD_TOL = 1e-4

TINY = ViTConfig(
    image_size=32, channels=3, patch_size=16, hidden_dim=16, mlp_dim=32,
    num_heads=2, num_layers=2, num_classes=2,
)

TRAIN_CFG = ViTConfig(
    image_size=32, channels=3, patch_size=16, hidden_dim=32, mlp_dim=64,
    num_heads=2, num_layers=2, num_classes=2,
)


def _passed(name):
    print(f"\nACCEPTANCE PASS: {name}")


def _rel_err(analytic, numeric):
    scale = max(1.0, float(np.abs(analytic).max(initial=0.0)),
                float(np.abs(numeric).max(initial=0.0)))
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def _fd_full(f, x):
    """Central finite differences over every element of x (in place)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + H_STEP
        fp = f()
        flat[i] = orig - H_STEP
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * H_STEP)
    return grad


def _fd_at(f, x, positions):
    out = {}
    flat = x.reshape(-1)
    for i in positions:
        orig = flat[i]
        flat[i] = orig + H_STEP
        fp = f()
        flat[i] = orig - H_STEP
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * H_STEP)
    return out


def _check_many(build_loss, arrays):
    """Full-element FD against tape gradients for every named input."""
    leaves = {n: ad.param(n, a) for n, a in arrays.items()}
    analytic = gradients(build_loss(leaves), leaves)
    for name, arr in arrays.items():
        numeric = _fd_full(lambda: float(ad.value_of(build_loss(arrays))), arr)
        err = _rel_err(analytic[name], numeric)
        assert err < GRAD_TOL, f"{name}: relative error {err:.3e}"


class TestGradientCorrectness:
    """Every differentiable op vs central differences (1e-5, 64-bit)."""

    def test_criterion_gradients(self):
        rng = np.random.default_rng(100)

        # matmul
        probe = rng.standard_normal((4, 5))
        _check_many(
            lambda t: ad.sum_all(ad.mul(ad.matmul(t["a"], t["b"]), probe)),
            {"a": rng.standard_normal((4, 3)), "b": rng.standard_normal((3, 5))},
        )
        # softmax
        probe = rng.standard_normal((5, 7))
        _check_many(
            lambda t: ad.sum_all(ad.mul(ad.softmax_rows(t["x"]), probe)),
            {"x": rng.standard_normal((5, 7)) * 3},
        )
        # layer norm
        probe = rng.standard_normal((4, 9))
        _check_many(
            lambda t: ad.sum_all(ad.mul(
                ad.layer_norm(t["x"], t["g"], t["b"], eps=1e-6), probe)),
            {
                "x": rng.standard_normal((4, 9)),
                "g": rng.standard_normal(9) + 1.0,
                "b": rng.standard_normal(9),
            },
        )
        # GELU
        probe = rng.standard_normal((6, 5))
        _check_many(
            lambda t: ad.sum_all(ad.mul(ad.gelu(t["x"]), probe)),
            {"x": rng.standard_normal((6, 5)) * 2},
        )
        # attention head
        probe = rng.standard_normal((5, 2))
        _check_many(
            lambda t: ad.sum_all(ad.mul(
                attention_head(t["x"], t["wq"], t["wk"], t["wv"]), probe)),
            {
                "x": rng.standard_normal((5, 8)),
                "wq": rng.standard_normal((8, 2)) * 0.5,
                "wk": rng.standard_normal((8, 2)) * 0.5,
                "wv": rng.standard_normal((8, 2)) * 0.5,
            },
        )

        params64 = init_params(TINY, Rng(0).child("init"), dtype=np.float64)
        d = TINY.hidden_dim
        # Give zero-initialized tensors mass so their gradients are generic.
        jitter = Rng(1).child("jitter")
        for name in params64.names():
            if np.all(params64[name] == 0):
                params64[name] = jitter.normal(params64[name].shape, std=0.05)

        # multi-head self-attention (whole layer-0 attention block)
        attn_names = [f"encoder.0.attn.{s}" for s in
                      ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o")]
        x = rng.standard_normal((5, d))
        probe = rng.standard_normal((5, d))

        def msa_loss(t):
            tensors = {n: params64[n] for n in params64.names()}
            tensors.update({n: t[n] for n in attn_names})
            out = multi_head_self_attention(t["x"], tensors, 0, TINY.num_heads)
            return ad.sum_all(ad.mul(out, probe))

        _check_many(msa_loss, {
            "x": x, **{n: params64[n].copy() for n in attn_names},
        })

        # MLP block
        mlp_names = [f"encoder.0.mlp.{s}" for s in ("w1", "b1", "w2", "b2")]
        probe = rng.standard_normal((5, d))

        def mlp_loss(t):
            tensors = {n: params64[n] for n in params64.names()}
            tensors.update({n: t[n] for n in mlp_names})
            return ad.sum_all(ad.mul(mlp_block(t["x"], tensors, 0), probe))

        _check_many(mlp_loss, {
            "x": rng.standard_normal((5, d)),
            **{n: params64[n].copy() for n in mlp_names},
        })

        # embedding
        embed_names = ["embed.patch.weight", "embed.patch.bias", "embed.cls", "embed.pos"]
        patches = patchify(rng.uniform(0, 1, (3, 32, 32)), TINY.patch_size)
        probe = rng.standard_normal((TINY.num_patches + 1, d))

        def embed_loss(t):
            return ad.sum_all(ad.mul(embed(patches, t), probe))

        _check_many(embed_loss, {n: params64[n].copy() for n in embed_names})

        # cross-entropy
        labels = rng.integers(0, 4, size=6)
        _check_many(
            lambda t: cross_entropy_loss(t["logits"], labels),
            {"logits": rng.standard_normal((6, 4)) * 2},
        )

        # full tiny-model forward: every parameter tensor, subsampled elements
        image = rng.uniform(0, 1, (1, 3, 32, 32))
        label = [1]
        arrays = {n: params64[n] for n in params64.names()}

        def model_loss_plain():
            return float(cross_entropy_loss(forward(image, arrays, TINY), label))

        leaves = {n: ad.param(n, a) for n, a in arrays.items()}
        loss = cross_entropy_loss(forward(image, leaves, TINY), label)
        analytic = gradients(loss, leaves)

        pick = np.random.default_rng(7)
        worst = 0.0
        for name, arr in arrays.items():
            count = min(arr.size, 24)
            positions = pick.choice(arr.size, size=count, replace=False)
            numeric = _fd_at(model_loss_plain, arr, positions)
            a = analytic[name].reshape(-1)
            for i, fd in numeric.items():
                scale = max(1.0, abs(a[i]), abs(fd))
                worst = max(worst, abs(a[i] - fd) / scale)
        assert worst < GRAD_TOL, f"full model: relative error {worst:.3e}"

        _passed(
            "gradient correctness: all ops + full tiny model vs central "
            f"finite differences, max rel err < {GRAD_TOL}"
        )


class TestArchitectureFidelity:
    def test_criterion_parameter_count(self):
        for k in (2, 3, 4):
            shapes = parameter_shapes(ViTConfig(num_classes=k))
            total = sum(int(np.prod(s)) for s in shapes.values())
            assert total == 85_798_656 + 768 * k + k

        # Real ViT-Base tensors, counted by count_parameters itself.
        config = ViTConfig(num_classes=2)
        params = init_params(config, Rng(0).child("init"), dtype=np.float32)
        total = count_parameters(params)
        assert total == 85_798_656 + 768 * 2 + 2
        assert round(total / 1e6) == 86

        set_freeze(params, "head_only")
        assert count_parameters(params, trainable_only=True) == 768 * 2 + 2
        _passed("architecture fidelity: ViT-Base count 85,798,656 + (768K + K)")


class TestAttentionInvariants:
    def test_criterion_attention(self):
        rng = np.random.default_rng(3)

        # Softmax rows sum to one within 1e-6.
        m = rng.uniform(-50, 50, size=(64, 17))
        sums = softmax_rows(m).sum(axis=-1)
        assert np.abs(sums - 1.0).max() <= 1e-6

        # Single-token attention returns its value vector exactly.
        x = rng.standard_normal((1, 8))
        w_q, w_k, w_v = (rng.standard_normal((8, 4)) for _ in range(3))
        np.testing.assert_array_equal(attention_head(x, w_q, w_k, w_v), x @ w_v)

        # Positional-ablation permutation equivariance, exact in 64-bit.
        params = init_params(TINY, Rng(2).child("init"), dtype=np.float64)
        params["embed.pos"] = np.zeros_like(params["embed.pos"])
        patches = patchify(rng.uniform(0, 1, (3, 32, 32)), TINY.patch_size)
        perm = np.array([3, 1, 0, 2])
        z_a = embed(patches, params)
        z_b = embed(patches[perm], params)
        for layer in range(TINY.num_layers):
            z_a = encoder_block(z_a, params, layer, TINY.num_heads)
            z_b = encoder_block(z_b, params, layer, TINY.num_heads)
        np.testing.assert_array_equal(z_b[0], z_a[0])
        np.testing.assert_array_equal(z_b[1:], z_a[1:][perm])
        _passed("attention invariants: softmax sums, single-token identity, "
                "exact permutation equivariance")


def _pair_count_auc(scores, truth):
    pos = scores[truth == 1]
    neg = scores[truth == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


class TestMetricOracleEquivalence:
    def test_criterion_metrics(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            n = int(rng.integers(2, 30))
            truth = rng.integers(0, 2, size=n)
            if truth.min() == truth.max():
                truth[0] = 1 - truth[0]
            pred = rng.integers(0, 2, size=n)
            scores = np.round(rng.uniform(0, 1, size=n), 1)

            c = confusion_binary(pred, truth, 1)
            m = binary_metrics(c)
            assert m["accuracy"] == float(Fraction(c.tp + c.tn, c.total))
            if c.tp + c.fp:
                assert m["precision"] == float(Fraction(c.tp, c.tp + c.fp))
            if c.tp + c.fn:
                assert m["recall"] == float(Fraction(c.tp, c.tp + c.fn))
            if c.tn + c.fp:
                assert m["specificity"] == float(Fraction(c.tn, c.tn + c.fp))
            if 2 * c.tp + c.fp + c.fn and c.tp:
                p = Fraction(c.tp, c.tp + c.fp)
                r = Fraction(c.tp, c.tp + c.fn)
                assert m["f1"] == float(2 * p * r / (p + r))

            assert abs(roc_auc(scores, truth) - _pair_count_auc(scores, truth)) < 1e-12

        # Table-average arithmetic on the reported per-fold accuracies.
        rows = [
            FoldMetrics(fold=str(i + 1), accuracy=a, precision=1.0,
                        sensitivity=1.0, f1=1.0, specificity=1.0, auc=1.0)
            for i, a in enumerate([1.0, 1.0, 1.0, 0.984, 0.976])
        ]
        report = aggregate_folds(rows)
        assert abs(report.average.accuracy - 0.992) < 1e-12
        _passed("metric oracle equivalence: 1000 random sets exact/1e-12 + "
                "fold-average arithmetic 0.992")


class TestFoldBatchProperties:
    def test_criterion_folds_and_batches(self):
        for n in range(5, 201):
            split = kfold_split(n, 5, seed=n)
            folds = [split.fold_indices(f) for f in range(5)]
            union = np.concatenate(folds)
            assert len(union) == n
            assert sorted(union.tolist()) == list(range(n))
            sizes = [len(f) for f in folds]
            assert max(sizes) - min(sizes) <= 1

        rng = Rng(9)
        for n in (1, 7, 8, 9, 16, 17, 33):
            batches = make_batches(list(range(n)), 8, rng.child("b", n))
            assert sorted(x for b in batches for x in b) == list(range(n))
            assert all(len(b) == 8 for b in batches[:-1])
        _passed("fold/batch properties: partitions for n in [5,200], "
                "exact epoch coverage")


class TestOptimizerContract:
    def test_criterion_optimizer(self):
        lr, wd = 0.1, 0.01
        params = init_params(TRAIN_CFG, Rng(5).child("init"), dtype=np.float64)
        jitter = Rng(6).child("jitter")
        for name in params.names():
            if np.all(params[name] == 0):
                params[name] = jitter.normal(params[name].shape, std=0.05)
        set_freeze(params, "full")
        state = AdamWState(params, lr=lr, weight_decay=wd)
        before = {n: params[n].copy() for n in params.names()}
        zero_grads = {n: np.zeros_like(params[n]) for n in params.trainable_names()}
        adamw_step(params, zero_grads, state)
        factor = 1.0 - lr * wd
        for n in params.names():
            np.testing.assert_array_equal(params[n], before[n] * factor)

        # head_only: backbone bitwise constant across 100 noisy steps.
        params = init_params(TRAIN_CFG, Rng(7).child("init"), dtype=np.float32)
        set_freeze(params, "head_only")
        snapshot = {n: params[n].copy() for n in params.names()}
        state = AdamWState(params, lr=0.01, weight_decay=0.01)
        noise = np.random.default_rng(8)
        for _ in range(100):
            grads = {
                n: noise.standard_normal(params[n].shape).astype(np.float32)
                for n in params.trainable_names()
            }
            adamw_step(params, grads, state)
        for n in params.names():
            if n not in HEAD_NAMES:
                np.testing.assert_array_equal(params[n], snapshot[n])
        _passed("optimizer contract: exact decoupled decay + bitwise-frozen backbone")


def _toy_images(n=32, seed=0):
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for i in range(n):
        label = i % 2
        base = 0.15 if label == 0 else 0.85
        img = np.full((3, 32, 32), base, dtype=np.float32)
        img += rng.uniform(-0.05, 0.05, size=img.shape).astype(np.float32)
        images.append(np.clip(img, 0, 1))
        labels.append(label)
    return images, np.array(labels, dtype=np.int64)


class TestEndToEndSmoke:
    def test_criterion_overfit_within_200_steps(self):
        images, labels = _toy_images(32)
        params = init_params(TRAIN_CFG, Rng(3).child("init"))
        # 32 images, batch 8: 4 steps/epoch; 50 epochs = 200 optimizer steps.
        plan = TrainPlan(epochs=50, batch_size=8, freeze_mode="full",
                         learning_rate=1e-3, seed=3)
        start = time.monotonic()
        result = train(images, labels, images, labels, params, TRAIN_CFG, plan)
        elapsed = time.monotonic() - start
        logits = forward(np.stack(images), result.final_params, TRAIN_CFG)
        accuracy = float(np.mean(np.argmax(logits, axis=1) == labels))
        assert accuracy == 1.0
        assert elapsed < 60.0
        _passed(f"end-to-end smoke: 100% train accuracy in 200 steps "
                f"({elapsed:.1f}s < 60s)")

    def test_criterion_crossval_reproducible(self, tmp_path):
        images, labels = _toy_images(32)
        data = tmp_path / "data"
        for name in ("bright", "dark"):
            (data / name).mkdir(parents=True)
        for i, (img, label) in enumerate(zip(images, labels)):
            name = "dark" if label == 0 else "bright"
            pixels = np.round(img.transpose(1, 2, 0) * 255).astype(np.uint8)
            (data / name / f"{i:02d}.ppm").write_bytes(
                b"P6\n32 32\n255\n" + pixels.tobytes()
            )
        cfg = tmp_path / "run.cfg"
        cfg.write_text("\n".join([
            f"dataset_root = {data}",
            "image_size = 32", "patch_size = 16", "hidden_dim = 32",
            "mlp_dim = 64", "num_heads = 2", "num_layers = 2",
            "epochs = 1", "batch_size = 8", "learning_rate = 0.001",
            "freeze = full", "augment = false", "stratified = true",
        ]) + "\n")

        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["crossval", "--config", str(cfg), "--seed", "5",
                     "--set", f"output_dir={out_a}"]) == 0
        assert main(["crossval", "--config", str(cfg), "--seed", "5",
                     "--set", f"output_dir={out_b}"]) == 0
        assert (out_a / "metrics.csv").read_bytes() == (out_b / "metrics.csv").read_bytes()
        assert (out_a / "metrics.json").read_bytes() == (out_b / "metrics.json").read_bytes()
        lines = (out_a / "metrics.csv").read_text().strip().split("\n")
        assert len(lines) == 7
        _passed("end-to-end smoke: crossval seed-reproducible byte-for-byte")


class TestCheckpointRoundTrip:
    def test_criterion_checkpoint(self, tmp_path):
        params = init_params(TINY, Rng(11).child("init"))
        path = tmp_path / "model.vitc"
        save_checkpoint(params, TINY, path)
        loaded = load_checkpoint(path)
        batch = np.random.default_rng(12).uniform(0, 1, (2, 3, 32, 32))
        np.testing.assert_array_equal(
            forward(batch, params, TINY), forward(batch, loaded.params, TINY)
        )
        for name in params.names():
            np.testing.assert_array_equal(loaded.params[name], params[name])

        corrupted = bytearray(path.read_bytes())
        corrupted[len(corrupted) // 2] ^= 0x01
        bad = tmp_path / "bad.vitc"
        bad.write_bytes(corrupted)
        with pytest.raises(ChecksumError):
            load_checkpoint(bad)
        _passed("checkpoint round-trip: bitwise save/load/forward + checksum rejection")
