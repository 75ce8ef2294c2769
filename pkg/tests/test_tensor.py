import numpy as np
import pytest

from hierseg import checkpoint
from hierseg.optim import halving_schedule, sgd_step
from hierseg.tensor import (ShapeError, Tape, TapeError, Tensor, _record, add, conv2d, relu, scale,
                            softmax, sum_squares, total, upsample)


def conv_reference(x, w, b, stride=1):
    """Six nested loops over a zero-padded input."""
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (wd + 2 * pw - kw) // stride + 1
    out = np.zeros((n, k, ho, wo))
    for ni in range(n):
        for ki in range(k):
            for i in range(ho):
                for j in range(wo):
                    acc = b[ki]
                    for ci in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                y, xx = i * stride + di - ph, j * stride + dj - pw
                                if 0 <= y < h and 0 <= xx < wd:
                                    acc += w[ki, ci, di, dj] * x[ni, ci, y, xx]
                    out[ni, ki, i, j] = acc
    return out


def upsample_reference(x, f):
    """Per-output-pixel bilinear formula with half-pixel centres, clamped at edges."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, h * f, w * f))

    def taps(o, size):
        src = max((o + 0.5) / f - 0.5, 0.0)
        i0 = min(int(np.floor(src)), size - 1)
        return i0, min(i0 + 1, size - 1), src - i0

    for a in range(h * f):
        y0, y1, fy = taps(a, h)
        for bb in range(w * f):
            x0, x1, fx = taps(bb, w)
            out[:, :, a, bb] = ((1 - fy) * ((1 - fx) * x[:, :, y0, x0] + fx * x[:, :, y0, x1])
                                + fy * ((1 - fx) * x[:, :, y1, x0] + fx * x[:, :, y1, x1]))
    return out


def numeric_grad(f, t, eps=1e-5):
    g = np.zeros_like(t.data)
    for idx in np.ndindex(t.data.shape):
        orig = t.data[idx]
        t.data[idx] = orig + eps
        up = f()
        t.data[idx] = orig - eps
        down = f()
        t.data[idx] = orig
        g[idx] = (up - down) / (2 * eps)
    return g


def rel_err(a, b, floor=1e-8):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


class TestConv:
    def test_ones_times_two(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        out = conv2d(x, Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), 2.0))

    def test_only_center_tap_inside(self):
        out = conv2d(Tensor([[[[5.0]]]]), Tensor(np.ones((1, 1, 3, 3))), Tensor([1.0]))
        assert out.data.shape == (1, 1, 1, 1)
        assert out.data[0, 0, 0, 0] == 6.0

    @pytest.mark.parametrize("stride", [1, 2])
    def test_matches_loop_reference(self, rng, stride):
        x = rng.normal(size=(2, 3, 5, 5))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride)
        np.testing.assert_allclose(out.data, conv_reference(x, w, b, stride), rtol=0, atol=1e-12)

    def test_backends_agree(self, backend, rng):
        x = rng.normal(size=(2, 3, 7, 6))
        w = rng.normal(size=(5, 3, 3, 3))
        b = rng.normal(size=5)
        for stride in (1, 2):
            out = backend.conv2d_forward(x, w, b, stride, 1)
            np.testing.assert_allclose(out, conv_reference(x, w, b, stride), atol=1e-12)

    def test_shape_error_names_dimension(self):
        with pytest.raises(ShapeError, match="'C'"):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))
        with pytest.raises(ShapeError, match="odd"):
            conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros(1)))

    @pytest.mark.parametrize("stride", [1, 2])
    def test_gradients_finite_difference(self, rng, stride):
        x = Tensor(rng.normal(size=(2, 2, 5, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        up = rng.normal(size=conv_reference(x.data, w.data, b.data, stride).shape)

        def f():
            return float((conv2d(x, w, b, stride).data * up).sum())

        with Tape() as tape:
            y = conv2d(x, w, b, stride)
            loss = total(_weighted(y, up))
        tape.backward(loss)
        for t in (x, w, b):
            assert rel_err(t.grad, numeric_grad(f, t)) < 1e-4


def _weighted(y, up):
    # elementwise product with a constant, so sum() probes a random direction
    return _record("mul_const", (y,), Tensor(y.data * up), lambda g: (g * up,))


class TestRelu:
    def test_values(self):
        np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_all_negative_blocks_gradient(self):
        x = Tensor(-np.ones((2, 3)), requires_grad=True)
        with Tape() as tape:
            loss = total(relu(x))
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, np.zeros((2, 3)))
        np.testing.assert_array_equal(relu(x).data, np.zeros((2, 3)))

    def test_gradient_is_indicator(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        up = rng.normal(size=(3, 4))
        with Tape() as tape:
            loss = total(_weighted(relu(x), up))
        tape.backward(loss)
        fd = numeric_grad(lambda: float((np.maximum(x.data, 0) * up).sum()), x)
        np.testing.assert_allclose(x.grad, (x.data > 0) * up, atol=0)
        np.testing.assert_allclose(x.grad, fd, atol=1e-8)


class TestUpsample:
    def test_identity_factor(self, rng):
        x = rng.normal(size=(1, 2, 3, 3))
        np.testing.assert_array_equal(upsample(Tensor(x), 1).data, x)

    def test_constant_field(self):
        np.testing.assert_array_equal(upsample(Tensor([[[[3.0]]]]), 2).data, np.full((1, 1, 2, 2), 3.0))

    def test_zero_factor_rejected(self):
        with pytest.raises(ValueError):
            upsample(Tensor(np.zeros((1, 1, 2, 2))), 0)

    def test_matches_formula(self, rng):
        x = rng.normal(size=(1, 1, 2, 2))
        np.testing.assert_allclose(upsample(Tensor(x), 2).data, upsample_reference(x, 2), atol=1e-12)

    @pytest.mark.parametrize("factor", [2, 3, 4])
    def test_backends_match_formula(self, backend, rng, factor):
        x = rng.normal(size=(2, 3, 3, 5))
        np.testing.assert_allclose(backend.upsample_forward(x, factor), upsample_reference(x, factor),
                                   atol=1e-12)

    def test_backward_is_adjoint(self, backend, rng):
        x = rng.normal(size=(2, 2, 3, 4))
        g = rng.normal(size=(2, 2, 12, 16))
        lhs = (backend.upsample_forward(x, 4) * g).sum()
        rhs = (x * backend.upsample_backward(g, 4)).sum()
        assert abs(lhs - rhs) < 1e-10

    def test_gradient_finite_difference(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 2, 3)), requires_grad=True)
        up = rng.normal(size=(1, 2, 4, 6))
        with Tape() as tape:
            loss = total(_weighted(upsample(x, 2), up))
        tape.backward(loss)
        fd = numeric_grad(lambda: float((upsample(x, 2).data * up).sum()), x)
        assert rel_err(x.grad, fd) < 1e-4


class TestSoftmax:
    def test_equal_logits_uniform(self):
        s = softmax(Tensor(np.full((1, 4, 2, 2), 3.7))).data
        np.testing.assert_allclose(s, 0.25, atol=1e-15)

    def test_stable_for_large_logits(self):
        x = np.zeros((1, 2, 1, 1))
        x[0, 0] = 1000.0
        s = softmax(Tensor(x)).data
        assert np.all(np.isfinite(s))
        assert s[0, 0, 0, 0] == pytest.approx(1.0)
        assert s[0, 1, 0, 0] == pytest.approx(0.0, abs=1e-300)

    def test_channels_sum_to_one(self, rng):
        s = softmax(Tensor(rng.normal(scale=5, size=(3, 5, 4, 4)))).data
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
        assert np.all((s > 0) & (s < 1))

    def test_needs_two_channels(self):
        with pytest.raises(ShapeError):
            softmax(Tensor(np.zeros((1, 1, 2, 2))))

    def test_gradient_finite_difference(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 2, 2)), requires_grad=True)
        up = rng.normal(size=(2, 3, 2, 2))
        with Tape() as tape:
            loss = total(_weighted(softmax(x), up))
        tape.backward(loss)
        fd = numeric_grad(lambda: float((softmax(x).data * up).sum()), x)
        assert rel_err(x.grad, fd) < 1e-4


class TestBackward:
    def test_sum_of_params_gives_ones(self, rng):
        ps = [Tensor(rng.normal(size=s), requires_grad=True) for s in [(2, 3), (4,)]]
        with Tape() as tape:
            loss = add(total(ps[0]), total(ps[1]))
        tape.backward(loss)
        for p in ps:
            np.testing.assert_array_equal(p.grad, np.ones_like(p.data))

    def test_zero_scaled_loss(self, rng):
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        with Tape() as tape:
            loss = total(scale(x, 0.0))
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, np.zeros(3))

    def test_backward_before_forward(self):
        with pytest.raises(TapeError):
            Tape().backward(Tensor([1.0]))

    def test_reverse_order(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 2, 2)), requires_grad=True)
        seen = []
        with Tape() as tape:
            loss = total(softmax(relu(x)))
        tape.backward(loss, visit=seen.append)
        assert seen == ["sum", "softmax", "relu"]
        assert [r[0] for r in tape.records] == seen[::-1]

    def test_gradient_shapes_match(self, rng):
        w = Tensor(rng.normal(size=(2, 3, 3, 3)), requires_grad=True)
        x = Tensor(rng.normal(size=(1, 3, 4, 4)), requires_grad=True)
        b = Tensor(np.zeros(2), requires_grad=True)
        with Tape() as tape:
            y = conv2d(x, w, b)
            loss = total(y)
        tape.backward(loss)
        for t in (w, x, b, y):
            assert t.grad.shape == t.data.shape

    def test_sum_squares_gradient(self, rng):
        ws = [Tensor(rng.normal(size=(2, 2)), requires_grad=True) for _ in range(2)]
        with Tape() as tape:
            loss = sum_squares(ws, 0.3)
        tape.backward(loss)
        for w in ws:
            np.testing.assert_allclose(w.grad, 0.6 * w.data)

    def test_deterministic(self, rng):
        x0 = rng.normal(size=(2, 3, 6, 6))
        w0 = rng.normal(size=(4, 3, 3, 3))

        def run():
            x, w = Tensor(x0, requires_grad=True), Tensor(w0, requires_grad=True)
            b = Tensor(np.zeros(4), requires_grad=True)
            with Tape() as tape:
                loss = total(softmax(upsample(relu(conv2d(x, w, b, 2)), 2)))
            tape.backward(loss)
            return x.grad.tobytes() + w.grad.tobytes()

        assert run() == run()


class TestSGD:
    def test_plain_step(self):
        p = {"a": np.array([1.0, 2.0])}
        sgd_step(p, {"a": np.array([0.5, -1.0])}, {}, lr=1.0, momentum=0.0, weight_decay=0.0)
        np.testing.assert_array_equal(p["a"], [0.5, 3.0])

    def test_zero_grad_no_decay_unchanged(self):
        p = {"a": np.array([1.0, 2.0])}
        state = {}
        for _ in range(3):
            sgd_step(p, {"a": np.zeros(2)}, state, lr=0.1, momentum=0.9)
        np.testing.assert_array_equal(p["a"], [1.0, 2.0])

    def test_two_steps_hand_unrolled(self):
        p0, g1, g2 = np.array([1.0, -2.0]), np.array([0.3, 0.1]), np.array([-0.2, 0.4])
        lr, m, wd = 0.05, 0.9, 0.01
        p = {"a": p0.copy()}
        state = {}
        sgd_step(p, {"a": g1}, state, lr, m, wd)
        sgd_step(p, {"a": g2}, state, lr, m, wd)
        v1 = g1 + wd * p0
        q1 = p0 - lr * v1
        v2 = m * v1 + g2 + wd * q1
        q2 = q1 - lr * v2
        np.testing.assert_allclose(p["a"], q2, atol=1e-12, rtol=0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            sgd_step({"a": np.zeros(2)}, {"a": np.zeros(3)}, {}, 0.1)

    def test_halving_schedule(self):
        sched = halving_schedule(0.02, 26)
        assert len(sched) == 26
        distinct = list(dict.fromkeys(sched))
        assert distinct == [0.02, 0.01, 0.005, 0.0025]
        spans = [sched.count(v) for v in distinct]
        assert max(spans) - min(spans) <= 1


class TestCheckpoint:
    def test_roundtrip(self, rng, tmp_path):
        t = {"a.w": rng.normal(size=(2, 3, 1, 1)), "b": np.array([1.5]), "s": rng.normal(size=())}
        path = tmp_path / "x.hseg"
        checkpoint.save(path, t)
        back = checkpoint.load(path)
        assert list(back) == list(t)
        for k in t:
            np.testing.assert_array_equal(back[k], t[k])

    def test_layout(self):
        buf = checkpoint.dumps({"ab": np.array([[1.0, 2.0]])})
        assert buf[:4] == b"HSEG"
        expected = (b"HSEG" + (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
                    + (2).to_bytes(4, "little") + b"ab" + (2).to_bytes(4, "little")
                    + (1).to_bytes(8, "little") + (2).to_bytes(8, "little")
                    + np.array([1.0, 2.0], dtype="<f8").tobytes())
        assert buf == expected

    def test_bad_magic(self):
        with pytest.raises(checkpoint.FormatError):
            checkpoint.loads(b"NOPE" + bytes(8))

    def test_coverage_roundtrip(self, rng):
        m = {"vehicle": rng.random((5, 7)) > 0.5}
        back = checkpoint.loads_coverage(checkpoint.dumps_coverage(m))
        np.testing.assert_array_equal(back["vehicle"], m["vehicle"])
