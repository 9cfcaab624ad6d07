import numpy as np
import pytest
from conftest import bars_dataset

from sscnet.autograd import (SGD, AvgPool, BatchNorm, DenseConv, Flatten, Linear, MaxPool, Model,
                             OrthoPenalty, ReLU, Residual, Sequential, SscConv, StaleGradientError,
                             TrainConfig, build_model, dso_penalty, forward_backward, lr_at,
                             so_penalty, softmax_cross_entropy, train)
from sscnet.autograd.model import DivergenceError, penalty_term
from sscnet.layout import LayerSpec
from sscnet.tensorops import ConvGeometry
from sscnet.verify import finite_difference, rel_err


def check_layer(layer, x, rng, h=1e-5, tol=1e-6):
    """Compare analytic input and parameter gradients of ``sum(r * layer(x))``."""
    y = layer.forward(x)
    r = rng.standard_normal(y.shape)
    gx = layer.backward(r)
    f = lambda: float(np.sum(r * layer.forward(x)))  # noqa: E731
    assert rel_err(gx.ravel(), finite_difference(f, x, h)) < tol
    for p in layer.params():
        layer.forward(x)
        layer.backward(r)
        g = p.grad.copy()
        assert rel_err(g.ravel(), finite_difference(f, p.value, h)) < tol, p.name


class TestLayerGradients:
    def test_ssc_conv(self, rng):
        layer = SscConv(LayerSpec(4, 4, 3, 2, 2), rng, ConvGeometry(2, 1), bias=True,
                        dtype=np.float64)
        check_layer(layer, rng.standard_normal((2, 4, 5, 5)), rng)

    def test_dense_conv(self, rng):
        layer = DenseConv(3, 2, 3, rng, bias=True, dtype=np.float64)
        check_layer(layer, rng.standard_normal((2, 3, 4, 4)), rng)

    def test_linear(self, rng):
        check_layer(Linear(5, 3, rng, np.float64), rng.standard_normal((4, 5)), rng)

    def test_batchnorm(self, rng):
        bn = BatchNorm(3, np.float64)
        bn.gamma.value[:] = rng.uniform(0.5, 2, 3)
        bn.beta.value[:] = rng.standard_normal(3)
        check_layer(bn, rng.standard_normal((4, 3, 3, 3)), rng)

    def test_relu(self, rng):
        check_layer(ReLU(), rng.standard_normal((2, 2, 3, 3)), rng)

    def test_maxpool(self, rng):
        check_layer(MaxPool(2), rng.standard_normal((2, 2, 4, 6)), rng)

    @pytest.mark.parametrize("k", [2, None])
    def test_avgpool(self, rng, k):
        check_layer(AvgPool(k), rng.standard_normal((2, 2, 4, 4)), rng)

    @pytest.mark.parametrize("stride,cout", [(1, 4), (2, 8)])
    def test_residual(self, rng, stride, cout):
        body = Sequential([SscConv(LayerSpec(4, cout, 3, 2, 2), rng, ConvGeometry(stride, 1),
                                   dtype=np.float64),
                           BatchNorm(cout, np.float64)])
        check_layer(Residual(body, 4, cout, stride), rng.standard_normal((2, 4, 4, 4)), rng)

    def test_maxpool_ties_to_first(self):
        x = np.ones((1, 1, 2, 2))
        mp = MaxPool(2)
        mp.forward(x)
        np.testing.assert_array_equal(mp.backward(np.ones((1, 1, 1, 1))), [[[[1, 0], [0, 0]]]])

    def test_maxpool_size_check(self):
        with pytest.raises(ValueError):
            MaxPool(2).forward(np.zeros((1, 1, 3, 4)))


class TestLoss:
    def test_values(self):
        logits = np.array([[0.0, 0.0], [np.log(3.0), 0.0]])
        loss, g = softmax_cross_entropy(logits, np.array([0, 0]))
        assert loss == pytest.approx((np.log(2) + np.log(4 / 3)) / 2)
        np.testing.assert_allclose(g, [[-0.25, 0.25], [-0.125, 0.125]])

    def test_large_logits_stable(self):
        loss, g = softmax_cross_entropy(np.array([[1000.0, -1000.0]]), np.array([1]))
        assert loss == pytest.approx(2000.0) and np.all(np.isfinite(g))

    def test_shape_check(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(np.zeros((2, 3)), np.zeros(3, int))


class TestPenalties:
    def test_identity_zero(self):
        W = np.eye(4)[:, :3]
        assert so_penalty(W, 1.0)[0] == 0.0
        # W W^T is a projector, so the row term is 1 for the missing direction
        assert dso_penalty(W, 1.0)[0] == pytest.approx(1.0)

    def test_hand_example(self):
        W = 2 * np.eye(3)
        # W^T W - I = 3 I  ->  ||.||^2 = 27
        assert so_penalty(W, 0.1)[0] == pytest.approx(2.7)
        assert dso_penalty(W, 0.1)[0] == pytest.approx(5.4)
        np.testing.assert_allclose(so_penalty(W, 0.1)[1], 4 * 0.1 * W @ (3 * np.eye(3)))

    @pytest.mark.parametrize("fn", [so_penalty, dso_penalty])
    def test_fd(self, rng, fn):
        W = rng.standard_normal((7, 4))
        _, g = fn(W, 0.3)
        num = finite_difference(lambda: fn(W, 0.3)[0], W, 1e-3)
        assert rel_err(g.ravel(), num) < 1e-6

    def test_modes(self):
        W = np.ones((3, 2))
        assert OrthoPenalty("none", 1.0)(W)[0] == 0.0
        assert OrthoPenalty("dso", 1.0)(W)[0] > OrthoPenalty("so", 1.0)(W)[0]
        with pytest.raises(ValueError):
            OrthoPenalty("so", -1.0)

    def test_projected_penalty_grad(self, rng):
        conv = SscConv(LayerSpec(4, 4, 3, 2, 2), rng, dtype=np.float64)
        model = Model(Sequential([conv]))
        pen = OrthoPenalty("dso", 0.5)
        conv.weight.set_grad(np.zeros_like(conv.weight.value))
        penalty_term(model, pen)
        f = lambda: penalty_term(model, pen, add_grads=False)  # noqa: E731
        assert rel_err(conv.weight.grad, finite_difference(f, conv.weight.value, 1e-5)) < 1e-7


class TestModel:
    @pytest.mark.parametrize("arch,conv,kw", [
        ("tiny", "ssc", dict(in_channels=1, image_size=6)),
        ("tiny", "dense", dict(in_channels=1, image_size=6)),
        ("mnist_cnn4", "ssc", dict(in_channels=1, image_size=8, width=4)),
        ("resnet8", "ssc", dict(in_channels=3, image_size=8, width=4)),
    ])
    def test_whole_model_fd(self, rng, arch, conv, kw):
        model = build_model(arch, conv, num_classes=3, dtype="float64", seed=3, **kw)
        C, S = kw["in_channels"], kw["image_size"]
        x = rng.standard_normal((4, C, S, S))
        y = np.array([0, 1, 2, 1])
        pen = OrthoPenalty("so", 0.01)
        forward_backward(model, x, y, pen)
        grads = {n: p.grad.copy() for n, p in model.named_params().items()}

        def f():
            loss, _ = softmax_cross_entropy(model.forward(x), y)
            return loss + penalty_term(model, pen, add_grads=False)

        for name, p in model.named_params().items():
            idx = rng.choice(p.value.size, min(6, p.value.size), replace=False)
            num = finite_difference(f, p.value, 1e-5, idx)
            assert rel_err(grads[name].ravel()[idx], num) < 1e-5, name

    def test_duplicate_names(self, rng):
        a = Linear(2, 2, rng, name="fc")
        b = Linear(2, 2, rng, name="fc")
        with pytest.raises(ValueError):
            Model(Sequential([a, b])).named_params()

    def test_divergence(self, rng):
        model = build_model("tiny", "ssc", image_size=6, dtype="float64")
        with pytest.raises(DivergenceError):
            forward_backward(model, np.full((2, 1, 6, 6), 1e308), np.array([0, 1]))

    def test_unknown_arch(self):
        with pytest.raises(ValueError):
            build_model("vgg")

    def test_same_seed_same_init(self):
        a = build_model("mnist_cnn4", width=4, seed=7)
        b = build_model("mnist_cnn4", width=4, seed=7)
        for (n, p), (_, q) in zip(a.named_params().items(), b.named_params().items()):
            assert p.value.tobytes() == q.value.tobytes(), n


class TestOptimizer:
    def test_hand_step(self):
        from sscnet.autograd import Parameter
        p = Parameter("w", np.array([1.0, -2.0]))
        opt = SGD([p], lr=0.1, momentum=0.9, weight_decay=0.01)
        p.set_grad(np.array([0.5, 0.5]))
        opt.step()
        # v = g + wd w = [0.51, 0.48]
        np.testing.assert_allclose(p.value, [1.0 - 0.051, -2.0 - 0.048])
        p.set_grad(np.array([0.5, 0.5]))
        opt.step()
        v2 = 0.9 * np.array([0.51, 0.48]) + np.array([0.5, 0.5]) + 0.01 * np.array([0.949, -2.048])
        np.testing.assert_allclose(p.value, np.array([0.949, -2.048]) - 0.1 * v2)

    def test_no_decay_flag(self):
        from sscnet.autograd import Parameter
        p = Parameter("b", np.array([1.0]), decay=False)
        opt = SGD([p], lr=1.0, momentum=0.0, weight_decay=0.5)
        p.set_grad(np.zeros(1))
        opt.step()
        assert p.value[0] == 1.0

    def test_stale_gradient_refused(self, rng):
        model = build_model("tiny", image_size=6)
        opt = SGD(model.params(), 0.01)
        x = rng.standard_normal((2, 1, 6, 6)).astype(np.float32)
        forward_backward(model, x, np.array([0, 1]))
        opt.step()
        with pytest.raises(StaleGradientError):
            opt.step()

    def test_schedules(self):
        assert lr_at(0.1, "constant", 3, 10) == 0.1
        assert lr_at(0.1, "cosine", 0, 10) == pytest.approx(0.1)
        assert lr_at(0.1, "cosine", 5, 10) == pytest.approx(0.05)
        assert lr_at(0.1, "step", 8, 9) == pytest.approx(0.001)
        with pytest.raises(ValueError):
            lr_at(0.1, "linear", 0, 1)


class TestStructuralZeros:
    def test_zeros_survive_long_training(self, rng):
        conv = SscConv(LayerSpec(4, 4, 3, 2, 2), rng, dtype=np.float64)
        model = Model(Sequential([conv, ReLU(), AvgPool(None), Flatten(), Linear(4, 2, rng, np.float64)]))
        opt = SGD(model.params(), 0.05, 0.9, 1e-3)
        pen = OrthoPenalty("dso", 0.1)
        mask = ~conv.layout.support.reshape(4, 4, 3, 3)
        for step in range(10_000):
            x = rng.standard_normal((2, 4, 5, 5))
            forward_backward(model, x, np.array([step % 2, 1 - step % 2]), pen)
            opt.step()
        d = conv.dense_weight()
        assert np.all(d[mask] == 0.0)
        assert np.count_nonzero(d[~mask]) == (~mask).sum()


class TestTraining:
    def test_toy_two_class(self, tmp_path):
        tr = bars_dataset(400, seed=1)
        te = bars_dataset(200, seed=2, split="test").with_stats(tr.mean, tr.std)
        cfg = TrainConfig(dataset="bars", arch="tiny", epochs=4, batch_size=16, lr=0.05, seed=0,
                          schedule="constant")
        res = train(cfg, tr, te, out_dir=tmp_path)
        assert res.last("test").accuracy >= 0.95
        for c in res.model.ssc_layers():
            assert np.all(c.dense_weight()[~c.layout.support.reshape(c.dense_weight().shape)] == 0.0)
        assert (tmp_path / "metrics.csv").read_text().startswith("epoch,split,loss,accuracy,wall_time_s")
        assert (tmp_path / "model.ckpt").exists()

    def test_deterministic(self):
        tr = bars_dataset(96, seed=1)
        cfg = TrainConfig(arch="tiny", epochs=2, batch_size=16, seed=5)
        a = train(cfg, tr).model
        b = train(cfg, tr).model
        for (n, p), (_, q) in zip(a.named_params().items(), b.named_params().items()):
            assert p.value.tobytes() == q.value.tobytes(), n

    def test_diverged_row(self, tmp_path):
        tr = bars_dataset(64, seed=1)
        cfg = TrainConfig(arch="tiny", epochs=3, batch_size=16, lr=1e30, momentum=0.0,
                          schedule="constant")
        with pytest.raises(DivergenceError):
            train(cfg, tr, out_dir=tmp_path)
        assert "diverged" in (tmp_path / "metrics.csv").read_text()
