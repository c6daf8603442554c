"""Encoder, classifier, segmenter and Grad-CAM."""

import numpy as np
import pytest

from src.core import ops
from src.core.errors import ShapeError
from src.core.gradcheck import check_gradients
from src.core.tensor import Tensor, no_grad
from src.modules.cuecan.module import CueCanConfig
from src.modules.network.gradcam import grad_cam
from src.modules.network.module import (
    CueClassifier,
    MissingSignSegmenter,
    forward_classify,
    forward_segment,
)

TINY_WIDTHS = (2, 3, 4, 4, 4)


def image_batch(rng, n=1, size=64):
    return Tensor(rng.uniform(0.0, 1.0, size=(n, size, size, 3)))


class TestEncoder:
    def test_blocks_halve_spatially(self, rng):
        model = CueClassifier(rng, widths=TINY_WIDTHS)
        with no_grad():
            features = model.encoder.forward_features(image_batch(rng))
        for i in range(1, 6):
            assert features[f"pool{i}"].shape[1:3] == (64 >> i, 64 >> i)
            assert features[f"block{i}"].shape[3] == TINY_WIDTHS[i - 1]

    @pytest.mark.parametrize("size", [(48, 64), (64, 40), (16, 16)])
    def test_non_divisible_input(self, rng, size):
        model = CueClassifier(rng, widths=TINY_WIDTHS)
        with pytest.raises(ShapeError):
            forward_classify(Tensor(np.zeros((1, *size, 3))), model)

    def test_grayscale_rejected(self, rng):
        model = CueClassifier(rng, widths=TINY_WIDTHS)
        with pytest.raises(ShapeError):
            forward_classify(Tensor(np.zeros((1, 32, 32, 1))), model)


class TestClassifier:
    def test_reproducible_logits(self, rng):
        x = image_batch(rng, n=2)
        with no_grad():
            a = forward_classify(x, CueClassifier(np.random.default_rng(0), CueCanConfig.parse("5e5e3")))
            b = forward_classify(x, CueClassifier(np.random.default_rng(0), CueCanConfig.parse("5e5e3")))
        assert np.array_equal(a.data, b.data)

    def test_duplicated_image_same_logit(self, rng):
        model = CueClassifier(rng, CueCanConfig.parse("333"))
        one = rng.uniform(size=(1, 64, 64, 3))
        with no_grad():
            logits = forward_classify(Tensor(np.concatenate([one, one])), model)
        assert logits.shape == (2,)
        np.testing.assert_allclose(logits.data[0], logits.data[1], rtol=0, atol=1e-12)

    def test_logits_finite(self, rng):
        with no_grad():
            logits = forward_classify(image_batch(rng, n=3), CueClassifier(rng, CueCanConfig.parse("553")))
        assert np.all(np.isfinite(logits.data))

    def test_tiny_classifier_gradients(self):
        rng = np.random.default_rng(11)
        model = CueClassifier(rng, CueCanConfig.parse("333"), widths=TINY_WIDTHS)
        x = image_batch(rng, n=2, size=32)
        weights = np.array([0.7, -1.3])
        chosen = [p for name, p in model.named_parameters() if name.endswith("weight")][::3]

        def loss():
            return ops.sum_all(ops.mul(forward_classify(x, model), Tensor(weights)))

        result = check_gradients(loss, chosen, max_entries=2, rng=np.random.default_rng(1))
        assert result.checked >= 10
        assert result.passed, result.max_rel_error


class TestSegmenter:
    def test_output_matches_input_size(self, rng):
        model = MissingSignSegmenter(rng, widths=TINY_WIDTHS)
        with no_grad():
            assert forward_segment(image_batch(rng, n=2), model).shape == (2, 64, 64, 1)

    def test_zero_score_convs_give_constant_map(self, rng):
        model = MissingSignSegmenter(rng, widths=TINY_WIDTHS)
        for score in (model.decoder.score3, model.decoder.score4, model.decoder.score5):
            score.weight.data[:] = 0.0
            score.bias.data[:] = 0.0
        with no_grad():
            logits = forward_segment(image_batch(rng), model).data
        assert np.all(logits == logits.flat[0])

    def test_skip_ablation_changes_output(self, rng):
        model = MissingSignSegmenter(rng, widths=TINY_WIDTHS)
        x = image_batch(rng)
        with no_grad():
            before = forward_segment(x, model).data.copy()
            model.decoder.score3.weight.data[:] = 0.0
            after = forward_segment(x, model).data
        assert not np.allclose(before, after)

    def test_score_map_is_translation_consistent(self):
        rng = np.random.default_rng(2)
        model = MissingSignSegmenter(rng, widths=TINY_WIDTHS)
        patch = rng.uniform(size=(32, 32, 3))
        base = np.zeros((1, 256, 256, 3))
        moved = np.zeros((1, 256, 256, 3))
        base[0, 96:128, 112:144] = patch
        moved[0, 128:160, 112:144] = patch
        with no_grad():
            a = model.forward_with_activations(Tensor(base))[1]["score5"].data[0, :, :, 0]
            b = model.forward_with_activations(Tensor(moved))[1]["score5"].data[0, :, :, 0]
        np.testing.assert_allclose(b[1:, :], a[:-1, :], rtol=0, atol=1e-10)

    def test_encoder_names_match_classifier(self, rng):
        cfg = CueCanConfig.parse("5e5e3")
        seg = dict(MissingSignSegmenter(rng, cfg).encoder_parameters())
        cls = dict(CueClassifier(rng, cfg).encoder_parameters())
        assert seg.keys() == cls.keys()
        for name in seg:
            assert seg[name].shape == cls[name].shape


class _ExposedActivation:
    """Model whose single activation is the input's first batch item itself."""

    def forward_with_activations(self, image):
        act = ops.relu(ops.scale(image, 1.0))
        return {"logits": act, "act": act}, {"block1": act}

    def zero_grad(self):
        pass


class TestGradCam:
    def test_range_and_dims(self, rng):
        model = CueClassifier(rng, CueCanConfig.parse("333"), widths=TINY_WIDTHS)
        x = Tensor(rng.uniform(size=(1, 64, 64, 3)))
        cam = grad_cam(model, x, "cls", 3)
        assert cam.shape == (16, 16)
        assert cam.min() >= 0.0 and cam.max() <= 1.0

    def test_segmentation_pixel_target(self, rng):
        model = MissingSignSegmenter(rng, widths=TINY_WIDTHS)
        x = Tensor(rng.uniform(size=(1, 64, 64, 3)))
        cam = grad_cam(model, x, ("seg", 30, 20), 4)
        assert cam.shape == (8, 8)
        assert 0.0 <= cam.min() and cam.max() <= 1.0

    def test_unknown_layer(self, rng):
        model = CueClassifier(rng, widths=TINY_WIDTHS)
        with pytest.raises(ShapeError):
            grad_cam(model, Tensor(rng.uniform(size=(1, 32, 32, 3))), "cls", 9)

    def test_channel_mean_target_is_relu_of_channel(self, rng):
        data = rng.normal(size=(1, 5, 4, 3))
        image = Tensor(data, requires_grad=True)

        def channel_mean(outputs):
            act = outputs["act"]
            selector = np.zeros(act.shape)
            selector[0, :, :, 1] = 1.0 / 20
            return ops.sum_all(ops.mul(act, Tensor(selector)))

        cam = grad_cam(_ExposedActivation(), image, channel_mean, "block1")
        expected = np.maximum(data[0, :, :, 1], 0.0)
        np.testing.assert_allclose(cam, expected / expected.max(), atol=1e-12)

    def test_parameter_grads_cleared(self, rng):
        model = CueClassifier(rng, widths=TINY_WIDTHS)
        grad_cam(model, Tensor(rng.uniform(size=(1, 32, 32, 3))), "cls", 5)
        assert all(p.grad is None for p in model.parameters())
