import numpy as np
import pytest

from selrel import fixtures
from selrel.exceptions import InputError
from selrel.explain import (
    DeepTaylorDecomposition,
    backward,
    dtd_explain,
    explainer_for,
    gradcam_explain,
    guided_backprop_explain,
    guided_gradcam_explain,
)
from selrel.net import Model, forward, parse_architecture
from selrel.volume import Volume3, trilinear_resize


def _single_dense(weights, biases=None, input_dims=(3, 1, 1, 1), name="out"):
    c, t, h, w = input_dims
    n_in = c * t * h * w
    weights = np.asarray(weights, np.float32)
    text = f"input channels={c} t={t} h={h} w={w}\nflatten\ndense name={name} out={weights.shape[0]}\n"
    layers, input_shape = parse_architecture(text)
    b = np.zeros(weights.shape[0], np.float32) if biases is None else np.asarray(biases, np.float32)
    return Model(layers, {name: (weights, b)}, input_shape)


class TestBackward:
    def test_single_dense_gradient_is_class_row(self):
        w = np.array([[1.0, 2.0, -3.0], [4.0, 5.0, 6.0]], np.float32)
        model = _single_dense(w, input_dims=(3, 1, 1, 1))
        clip = np.array([0.5, -1.0, 2.0], np.float32).reshape(3, 1, 1, 1)
        _, trace = forward(model, clip)
        g = backward(model, trace, 1, "standard", "input").values
        np.testing.assert_allclose(g.reshape(-1), w[1], atol=1e-7)

    def test_blocked_relu_zeroes_gradient_both_modes(self):
        # two neurons: the hidden pre-activation is negative, so nothing flows
        text = "input channels=3 t=1 h=1 w=1\nflatten\ndense name=a out=1\nrelu\ndense name=b out=1\n"
        layers, input_shape = parse_architecture(text)
        weights = {
            "a": (np.full((1, 3), -1.0, np.float32), np.zeros(1, np.float32)),
            "b": (np.ones((1, 1), np.float32), np.zeros(1, np.float32)),
        }
        model = Model(layers, weights, input_shape)
        clip = np.ones((3, 1, 1, 1), np.float32)
        _, trace = forward(model, clip)
        for mode in ("standard", "guided"):
            g = backward(model, trace, 0, mode, "input").values
            assert np.all(g == 0.0)

    @pytest.mark.parametrize("preset", ["tiny-linear", "tiny-conv", "tiny-gap", "tiny-cam"])
    def test_matches_finite_differences(self, preset):
        model = fixtures.make_model(preset, seed=3, bias_scale=0.05)
        rng = np.random.default_rng(17)
        clip = rng.uniform(0.0, 255.0, size=model.input_shape)  # float64 path
        _, trace = forward(model, clip)
        g = backward(model, trace, 1, "standard", "input").values
        step = 1e-3
        for _ in range(20):
            idx = tuple(rng.integers(0, s) for s in model.input_shape)
            hi = clip.copy()
            hi[idx] += step
            lo = clip.copy()
            lo[idx] -= step
            fd = (forward(model, hi)[0][1] - forward(model, lo)[0][1]) / (2 * step)
            assert abs(fd - g[idx]) <= 1e-3 * max(abs(fd), abs(g[idx]), 1e-6)

    def test_foreign_trace_rejected(self, rng):
        model_a = fixtures.make_model("tiny-linear", seed=1)
        model_b = fixtures.make_model("tiny-linear", seed=2)
        clip = rng.uniform(0, 1, size=model_a.input_shape).astype(np.float32)
        _, trace = forward(model_a, clip)
        with pytest.raises(InputError):
            backward(model_b, trace, 0)

    def test_unknown_layer_rejected(self, rng):
        model = fixtures.make_model("tiny-linear", seed=1)
        clip = rng.uniform(0, 1, size=model.input_shape).astype(np.float32)
        _, trace = forward(model, clip)
        with pytest.raises(InputError):
            backward(model, trace, 0, "standard", "nope")


class TestDeepTaylor:
    def test_hand_computed_single_dense(self):
        # z+ split of logit 3 over two unit inputs with weights (2,1): (2,1);
        # the weighted inputs sit at distinct voxels so the channel sum keeps
        # them apart
        w = np.zeros((1, 6), np.float32)
        w[0, 0] = 2.0  # channel 0, voxel (0,0,0)
        w[0, 1] = 1.0  # channel 0, voxel (0,0,1)
        model = _single_dense(w, input_dims=(3, 1, 1, 2))
        clip = np.zeros((3, 1, 1, 2), np.float32)
        clip[0] = 1.0
        logits, trace = forward(model, clip)
        assert logits[0] == 3.0
        rv = dtd_explain(model, trace, 0)
        np.testing.assert_allclose(
            rv.volume.data.reshape(-1), np.array([2.0, 1.0]), atol=1e-6
        )

    @pytest.mark.parametrize("preset", ["tiny-conv", "tiny-gap"])
    def test_conservation_zero_bias(self, preset):
        for seed in range(5):
            model = fixtures.make_model(preset, seed=seed)
            rng = np.random.default_rng(100 + seed)
            clip = rng.uniform(0, 255, size=model.input_shape).astype(np.float32)
            logits, trace = forward(model, clip)
            k = int(np.argmax(logits))
            if logits[k] <= 0:
                continue
            rv = dtd_explain(model, trace, k)
            total = float(rv.volume.data.sum(dtype=np.float64))
            assert abs(total - logits[k]) <= 1e-4 * abs(logits[k])

    def test_bias_absorbs_mass(self):
        model = fixtures.make_model("tiny-conv", seed=4, bias_scale=0.5)
        rng = np.random.default_rng(9)
        clip = rng.uniform(0, 255, size=model.input_shape).astype(np.float32)
        logits, trace = forward(model, clip)
        k = int(np.argmax(logits))
        assert logits[k] > 0
        rv = dtd_explain(model, trace, k)
        total = float(rv.volume.data.sum(dtype=np.float64))
        assert total <= logits[k] * (1 + 1e-6)

    def test_single_active_path_carries_all_relevance(self):
        # weights pick exactly one input voxel; everything lands there
        w = np.zeros((1, 12), np.float32)
        w[0, 5] = 2.0
        model = _single_dense(w, input_dims=(3, 1, 2, 2))
        clip = np.ones((3, 1, 2, 2), np.float32)
        logits, trace = forward(model, clip)
        rv = dtd_explain(model, trace, 0)
        flat = rv.volume.data.reshape(-1)
        # voxel 5 of the flattened (c,t,h,w) input is (t,h,w)=(0,0,1) via channel 1
        assert flat.sum() == pytest.approx(float(logits[0]), rel=1e-6)
        assert rv.volume.data[0, 0, 1] == pytest.approx(float(logits[0]), rel=1e-6)
        assert np.count_nonzero(rv.volume.data) == 1

    def test_nonpositive_seed_flagged(self):
        model = _single_dense(np.array([[-1.0, -1.0, -1.0]], np.float32))
        clip = np.ones((3, 1, 1, 1), np.float32)
        _, trace = forward(model, clip)
        rv = dtd_explain(model, trace, 0)
        assert rv.flag == "nonpositive-seed"
        assert np.all(rv.volume.data == 0.0)

    def test_nonnegative_output(self, rng):
        model = fixtures.make_model("tiny-conv", seed=11)
        clip = rng.uniform(0, 255, size=model.input_shape).astype(np.float32)
        logits, trace = forward(model, clip)
        rv = dtd_explain(model, trace, int(np.argmax(logits)))
        assert rv.volume.data.min() >= 0.0


class TestGradCam:
    def test_equals_cam_on_gap_head(self, rng):
        model = fixtures.make_model("tiny-cam", seed=9)
        clip = rng.uniform(0, 255, size=model.input_shape).astype(np.float32)
        _, trace = forward(model, clip)
        got = gradcam_explain(model, trace, 2).volume.data
        # CAM oracle straight from the dense weights; both maps are defined up
        # to a positive scale, so compare peak-normalized
        activation = trace.entry("conv1").x_out.astype(np.float64)
        w = model.weights["out"][0].astype(np.float64)
        cam = np.maximum(np.tensordot(w[2], activation, axes=([0], [0])), 0.0)
        cam = trilinear_resize(Volume3(cam.astype(np.float32)), model.input_shape[1:]).data
        np.testing.assert_allclose(
            got / max(got.max(), 1e-30), cam / max(cam.max(), 1e-30), atol=1e-5
        )

    def test_rectified(self, rng):
        model = fixtures.make_model("tiny-conv", seed=1)
        clip = rng.uniform(0, 255, size=model.input_shape).astype(np.float32)
        _, trace = forward(model, clip)
        assert gradcam_explain(model, trace, 0).volume.data.min() >= 0.0

    def test_output_resized_to_input_geometry(self, rng):
        model = fixtures.make_model("tiny-conv", seed=1)
        clip = rng.uniform(0, 255, size=model.input_shape).astype(np.float32)
        _, trace = forward(model, clip)
        assert gradcam_explain(model, trace, 0).volume.shape == model.input_shape[1:]

    def test_non_conv_target_rejected(self, rng):
        model = fixtures.make_model("tiny-conv", seed=1)
        clip = rng.uniform(0, 255, size=model.input_shape).astype(np.float32)
        _, trace = forward(model, clip)
        with pytest.raises(InputError):
            gradcam_explain(model, trace, 0, target_layer="out")

    def test_argmax_voxel_invariant_to_head_rescale(self, rng):
        model = fixtures.make_model("tiny-gap", seed=21)
        clip = rng.uniform(0, 255, size=model.input_shape).astype(np.float32)
        _, trace = forward(model, clip)
        base = gradcam_explain(model, trace, 1).volume.data
        w, b = model.weights["out"]
        scaled = Model(model.layers, {**model.weights, "out": (3.0 * w, 3.0 * b)}, model.input_shape)
        _, trace2 = forward(scaled, clip)
        rescaled = gradcam_explain(scaled, trace2, 1).volume.data
        assert np.unravel_index(base.argmax(), base.shape) == np.unravel_index(
            rescaled.argmax(), rescaled.shape
        )


class TestGuided:
    def test_relu_free_model_equals_plain_gradient(self, rng):
        model = fixtures.make_model("tiny-cam", seed=5)  # no hidden relu
        clip = rng.uniform(0, 255, size=model.input_shape).astype(np.float32)
        _, trace = forward(model, clip)
        guided = guided_backprop_explain(model, trace, 1).volume.data
        plain = backward(model, trace, 1, "standard", "input").values.sum(axis=0)
        np.testing.assert_allclose(guided, plain, atol=1e-6)

    def test_blocked_path_gives_zero_volume(self):
        text = "input channels=3 t=1 h=1 w=1\nflatten\ndense name=a out=1\nrelu\ndense name=b out=1\n"
        layers, input_shape = parse_architecture(text)
        weights = {
            "a": (np.full((1, 3), -2.0, np.float32), np.zeros(1, np.float32)),
            "b": (np.ones((1, 1), np.float32), np.zeros(1, np.float32)),
        }
        model = Model(layers, weights, input_shape)
        _, trace = forward(model, np.ones((3, 1, 1, 1), np.float32))
        assert np.all(guided_backprop_explain(model, trace, 0).volume.data == 0.0)

    def test_guided_support_within_standard_support(self, rng):
        for seed in (3, 4, 5):
            model = fixtures.make_model("tiny-conv", seed=seed)
            clip = rng.uniform(0, 255, size=model.input_shape).astype(np.float32)
            _, trace = forward(model, clip)
            g_std = backward(model, trace, 0, "standard", "input").values
            g_gui = backward(model, trace, 0, "guided", "input").values
            assert np.all((np.abs(g_gui) > 0) <= (np.abs(g_std) > 0))


class TestGuidedGradCam:
    def test_zero_parent_gives_zero(self):
        text = "input channels=3 t=1 h=1 w=1\nconv3d name=c out=1 kernel=1,1,1\nrelu\nflatten\ndense name=b out=1\n"
        layers, input_shape = parse_architecture(text)
        weights = {
            "c": (np.full((1, 3, 1, 1, 1), -1.0, np.float32), np.zeros(1, np.float32)),
            "b": (np.ones((1, 1), np.float32), np.zeros(1, np.float32)),
        }
        model = Model(layers, weights, input_shape)
        _, trace = forward(model, np.ones((3, 1, 1, 1), np.float32))
        assert np.all(guided_gradcam_explain(model, trace, 0).volume.data == 0.0)

    def test_exact_hadamard_product(self, rng):
        model = fixtures.make_model("tiny-conv", seed=6)
        clip = rng.uniform(0, 255, size=model.input_shape).astype(np.float32)
        _, trace = forward(model, clip)
        combined = guided_gradcam_explain(model, trace, 2).volume.data
        cam = gradcam_explain(model, trace, 2).volume.data
        gbp = guided_backprop_explain(model, trace, 2).volume.data
        want = (cam.astype(np.float64) * gbp.astype(np.float64)).astype(np.float32)
        np.testing.assert_array_equal(combined, want)

    def test_support_is_intersection(self, rng):
        model = fixtures.make_model("tiny-conv", seed=6)
        clip = rng.uniform(0, 255, size=model.input_shape).astype(np.float32)
        _, trace = forward(model, clip)
        combined = guided_gradcam_explain(model, trace, 2).volume.data
        cam = gradcam_explain(model, trace, 2).volume.data
        gbp = guided_backprop_explain(model, trace, 2).volume.data
        np.testing.assert_array_equal(combined != 0, (cam != 0) & (gbp != 0))


class TestEstimators:
    def test_explainer_for_and_get_params(self):
        model = fixtures.make_model("tiny-conv", seed=0)
        est = explainer_for("gradcam", model, target_layer="conv2")
        assert est.get_params()["target_layer"] == "conv2"
        est.set_params(target_layer=None)
        assert est.get_params()["target_layer"] is None

    def test_explain_defaults_to_argmax_class(self, rng):
        model = fixtures.make_model("tiny-conv", seed=0)
        clip = rng.uniform(0, 255, size=model.input_shape).astype(np.float32)
        logits, _ = forward(model, clip)
        rv = DeepTaylorDecomposition(model).explain(clip)
        assert rv.class_idx == int(np.argmax(logits))

    def test_unknown_method(self):
        with pytest.raises(InputError):
            explainer_for("mystery", None)
