"""CueCAn unit: masks, config grammar, forward pass and mask persistence."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.core import ops
from src.core.errors import ConfigError, ShapeError
from src.core.gradcheck import check_gradients
from src.core.tensor import Tensor
from src.modules.cuecan.module import (
    CueCanConfig,
    CueCanUnit,
    Orientation,
    Placement,
    Variant,
    build_mask,
    cuecan_forward,
    cuecan_parts,
)
from src.modules.encoder.module import MiniVggEncoder
from src.modules.network.module import CueClassifier
from src.train.optim import Adam


def uniform_fill(unit: CueCanUnit) -> None:
    """Filling weights 1/(live taps * Cin), zero biases, identity merge on the first C channels."""
    for kernel in (unit.rowfill, unit.colfill):
        live = np.count_nonzero(kernel.spatial_mask)
        kernel.weight.data = kernel.weight.mask / (live * unit.channels)
        kernel.bias.data[:] = 0.0
    merge = np.zeros((1, 1, 3 * unit.channels, unit.channels))
    merge[0, 0, :unit.channels, :] = np.eye(unit.channels)
    unit.merge.weight.data = merge
    unit.merge.bias.data[:] = 0.0


class TestBuildMask:
    def test_three_center_row(self):
        np.testing.assert_array_equal(
            build_mask(3, Variant.CENTER_MASKED, Orientation.ROW_FILL),
            [[1, 1, 1], [0, 0, 0], [1, 1, 1]],
        )

    def test_five_center_row(self):
        mask = build_mask(5, Variant.CENTER_MASKED, Orientation.ROW_FILL)
        assert np.all(mask[[0, 4]] == 1)
        assert np.all(mask[1:4] == 0)

    def test_five_edge_column(self):
        mask = build_mask(5, Variant.EDGE_ONLY, Orientation.COLUMN_FILL)
        assert np.all(mask[:, [0, 4]] == 1)
        assert np.all(mask[:, 1:4] == 0)

    def test_column_is_transpose_of_row(self):
        for k in (3, 5, 7):
            for variant in Variant:
                row = build_mask(k, variant, Orientation.ROW_FILL)
                np.testing.assert_array_equal(build_mask(k, variant, Orientation.COLUMN_FILL), row.T)

    def test_variants_differ_only_at_seven(self):
        for k in (3, 5):
            np.testing.assert_array_equal(
                build_mask(k, Variant.EDGE_ONLY, Orientation.ROW_FILL),
                build_mask(k, Variant.CENTER_MASKED, Orientation.ROW_FILL),
            )
        center = build_mask(7, Variant.CENTER_MASKED, Orientation.ROW_FILL)
        edge = build_mask(7, Variant.EDGE_ONLY, Orientation.ROW_FILL)
        assert center[:, 0].tolist() == [1, 1, 0, 0, 0, 1, 1]
        assert edge[:, 0].tolist() == [1, 0, 0, 0, 0, 0, 1]

    @pytest.mark.parametrize("k", [2, 4, 9, 1])
    def test_unsupported_sizes(self, k):
        with pytest.raises(ConfigError):
            build_mask(k, Variant.CENTER_MASKED, Orientation.ROW_FILL)


class TestConfigGrammar:
    def test_parse_5e5e3(self):
        cfg = CueCanConfig.parse("5e5e3")
        assert cfg.placements == (
            Placement(3, 5, True),
            Placement(4, 5, True),
            Placement(5, 3, False),
        )

    def test_five_tokens_cover_all_blocks(self):
        cfg = CueCanConfig.parse("33333")
        assert [p.block for p in cfg.placements] == [1, 2, 3, 4, 5]

    def test_empty_is_vanilla(self):
        assert CueCanConfig.parse("").placements == ()
        assert CueCanConfig.parse("").render() == ""

    @pytest.mark.parametrize("text", ["34", "3e3", "55", "5e5e3x", "e53", "3333"])
    def test_malformed(self, text):
        with pytest.raises(ConfigError):
            CueCanConfig.parse(text)

    @given(st.lists(st.tuples(st.sampled_from([3, 5]), st.booleans()), min_size=3, max_size=3))
    def test_round_trip(self, tokens):
        cfg = CueCanConfig(tuple(Placement(b, k, e) for b, (k, e) in zip((3, 4, 5), tokens)))
        assert CueCanConfig.parse(cfg.render()) == cfg


class TestForward:
    @pytest.mark.parametrize("shape", [(1, 8, 8, 2), (2, 16, 10, 3), (1, 9, 5, 1), (3, 32, 32, 4)])
    def test_shape_identity(self, rng, shape):
        unit = CueCanUnit(shape[3], 3, rng)
        out = cuecan_forward(Tensor(rng.normal(size=shape)), unit)
        assert out.shape == shape

    def test_intermediate_shapes(self, rng):
        unit = CueCanUnit(3, 5, rng, edge_only=True)
        parts = cuecan_parts(Tensor(rng.normal(size=(2, 16, 12, 3))), unit)
        assert parts.pooled.shape == (2, 8, 6, 3)
        assert parts.f_horiz.shape == (2, 8, 6, 3)
        assert parts.d_vert.shape == (2, 16, 12, 3)
        assert parts.f_concat.shape == (2, 16, 12, 9)

    def test_short_input_rejected(self, rng):
        with pytest.raises(ShapeError):
            cuecan_forward(Tensor(np.ones((1, 7, 8, 2))), CueCanUnit(2, 3, rng))

    def test_narrow_input_rejected(self, rng):
        with pytest.raises(ShapeError):
            cuecan_forward(Tensor(np.ones((1, 8, 1, 2))), CueCanUnit(2, 3, rng))

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            cuecan_forward(Tensor(np.ones((1, 8, 8, 3))), CueCanUnit(2, 3, rng))

    def test_clamped_rows_accept_shallow_maps(self, rng):
        unit = CueCanUnit(2, 3, rng, clamp_rows=True)
        assert cuecan_forward(Tensor(rng.normal(size=(1, 4, 4, 2))), unit).shape == (1, 4, 4, 2)

    def test_zero_filling_passes_features(self, rng):
        unit = CueCanUnit(2, 3, rng)
        uniform_fill(unit)
        unit.rowfill.weight.data[:] = 0.0
        unit.colfill.weight.data[:] = 0.0
        f = Tensor(rng.normal(size=(1, 8, 8, 2)))
        parts = cuecan_parts(f, unit)
        np.testing.assert_array_equal(parts.d_horiz.data, f.data)
        np.testing.assert_array_equal(parts.d_vert.data, f.data)
        np.testing.assert_allclose(parts.output.data, np.maximum(f.data, 0.0), atol=1e-15)

    def test_constant_interior_fills_exactly(self, rng):
        unit = CueCanUnit(2, 3, rng)
        uniform_fill(unit)
        parts = cuecan_parts(Tensor(np.full((1, 32, 32, 2), 2.0)), unit)
        # Pooled interior rows 1-6 and cols 1-14 see full context
        np.testing.assert_allclose(parts.d_horiz.data[:, 6:26, 3:29, :], 0.0, atol=1e-12)
        np.testing.assert_allclose(parts.d_vert.data[:, 6:26, 3:29, :], 0.0, atol=1e-12)

    def test_ridge_maximizes_row_difference(self, rng):
        unit = CueCanUnit(1, 3, rng)
        uniform_fill(unit)
        f = np.zeros((1, 32, 32, 1))
        f[0, 13, :, 0] = 1.0
        d = np.abs(cuecan_parts(Tensor(f), unit).d_horiz.data[0, :, :, 0])
        row = np.unravel_index(d.argmax(), d.shape)[0]
        assert 12 <= row <= 15

    def test_depthwise_is_channel_diagonal(self, rng):
        unit = CueCanUnit(3, 3, rng, depthwise=True)
        w = unit.rowfill.weight.data
        off_diagonal = w * (1.0 - np.eye(3))[None, None, :, :]
        assert np.all(off_diagonal == 0.0)

    def test_gradients_through_unit(self):
        rng = np.random.default_rng(5)
        unit = CueCanUnit(2, 3, rng)
        f = Tensor(rng.normal(size=(1, 8, 8, 2)), requires_grad=True)
        weights = rng.normal(size=(1, 8, 8, 2))

        def loss():
            out = cuecan_forward(f, unit)
            return ops.sum_all(ops.mul(out, Tensor(weights)))

        inputs = [f] + unit.parameters()
        result = check_gradients(loss, inputs, max_entries=24, rng=np.random.default_rng(0))
        assert result.passed, result.max_rel_error


class TestPlacement:
    def test_333_adds_three_units(self, rng):
        encoder = MiniVggEncoder(rng, cuecan_config=CueCanConfig.parse("333"))
        assert sorted(encoder.cuecan) == ["b3", "b4", "b5"]
        for unit in encoder.cuecan.values():
            assert unit.rowfill.k == 3
            assert unit.rowfill.variant == Variant.CENTER_MASKED

    def test_5e5e3_variants(self, rng):
        encoder = MiniVggEncoder(rng, cuecan_config=CueCanConfig.parse("5e5e3"))
        assert encoder.cuecan["b3"].rowfill.variant == Variant.EDGE_ONLY
        assert encoder.cuecan["b4"].rowfill.k == 5
        assert encoder.cuecan["b5"].rowfill.variant == Variant.CENTER_MASKED
        assert encoder.cuecan["b5"].rowfill.k == 3

    def test_empty_config_leaves_encoder(self, rng):
        encoder = MiniVggEncoder(rng)
        assert encoder.cuecan == {}

    def test_short_encoder_rejected(self, rng):
        with pytest.raises(ConfigError):
            MiniVggEncoder(rng, widths=(4, 4, 4, 4), cuecan_config=CueCanConfig.parse("333"))

    def test_parameter_count_closed_form(self):
        vanilla = CueClassifier(np.random.default_rng(0))
        cued = CueClassifier(np.random.default_rng(0), CueCanConfig.parse("333"))
        extra = 0
        for c in (32, 64, 64):
            filling = 6 * c * c + c          # six live taps per k=3 kernel
            merge = 3 * c * c + c
            extra += 2 * filling + merge
        assert cued.parameter_count() - vanilla.parameter_count() == extra

    def test_masked_names_registered(self, rng):
        names = [n for n, _ in CueClassifier(rng, CueCanConfig.parse("553")).named_parameters()]
        assert "cuecan.b3.rowfill.weight" in names
        assert "cuecan.b5.merge.bias" in names


class TestMaskPersistence:
    def test_masked_weights_stay_zero_under_adam(self):
        rng = np.random.default_rng(3)
        unit = CueCanUnit(2, 5, rng, edge_only=True)
        optimizer = Adam(unit.parameters(), lr=1e-2)
        x = Tensor(rng.normal(size=(1, 8, 8, 2)))
        for _ in range(100):
            optimizer.zero_grad()
            target = Tensor(rng.normal(size=(1, 8, 8, 2)))
            ops.sum_all(ops.mul(cuecan_forward(x, unit), target)).backward()
            # Inject gradient into masked taps as well
            for kernel in (unit.rowfill, unit.colfill):
                kernel.weight.grad = kernel.weight.grad + 1.0
            optimizer.step()

        for kernel in (unit.rowfill, unit.colfill):
            masked = kernel.weight.mask == 0
            assert np.all(kernel.weight.data[masked] == 0.0)
        for param, state in zip(optimizer.params, optimizer.states):
            if param.mask is not None:
                assert np.all(state.m[param.mask == 0] == 0.0)
                assert np.all(state.v[param.mask == 0] == 0.0)
