# -*- coding: utf-8 -*-

import dataclasses

import numpy as np
import pytest

from conftest import TINY_DIMS
from dynfusion import data
from dynfusion import model as daf
from dynfusion import tensor as T
from dynfusion import training
from dynfusion.exceptions import ConfigError, DataError, DimensionError


def padded_copy(batch, extra, rng):
    """Copy of a single-sample batch with `extra` masked junk frames appended to audio and video"""
    changes = dict()
    for modality in ('audio', 'video'):
        frames = getattr(batch, modality)
        mask = getattr(batch, modality + '_mask')
        junk = rng.normal(scale=100.0, size=(frames.shape[0], extra, frames.shape[2]))
        changes[modality] = np.concatenate([frames, junk], axis=1)
        changes[modality + '_mask'] = np.concatenate([mask, np.zeros((mask.shape[0], extra), dtype=bool)], axis=1)
    return dataclasses.replace(batch, **changes)


class TestParameters:

    def test_names_of_the_default_architecture(self, tiny_config):
        params = daf.init_params(tiny_config)
        names = set(params.names())
        assert {'text.W', 'text.b', 'audio.attn.W', 'video.attn.W', 'gate.W1', 'gate.b1', 'gate.W2', 'gate.b2',
                'head.W_h', 'head.b_h', 'head.W_out', 'head.b_out'} <= names
        for direction in ('fwd', 'bwd'):
            for weight in ('W_z', 'U_z', 'b_z', 'W_r', 'U_r', 'b_r', 'W_n', 'U_n', 'b_n'):
                assert f'audio.{direction}.{weight}' in names
        assert params['gate.W2'].shape == (tiny_config.d_hidden, 3)
        assert params['head.W_h'].shape == (tiny_config.d_attn, tiny_config.d_hidden)

    def test_initialization_is_seeded(self, tiny_config):
        first = daf.init_params(tiny_config).state()
        second = daf.init_params(tiny_config).state()
        other = daf.init_params(dataclasses.replace(tiny_config, seed=1)).state()
        assert all(np.array_equal(first[name], second[name]) for name in first)
        assert not np.array_equal(first['text.W'], other['text.W'])

    @pytest.mark.parametrize('gate_kind, fused_width', [
        ('softmax3', 4), ('sigmoid2', 8), ('static_concat', 12), ('fixed_mean', 4)])
    def test_fused_width_per_variant(self, tiny_config, gate_kind, fused_width):
        cfg = dataclasses.replace(tiny_config, gate_kind=gate_kind)
        assert cfg.fused_width == fused_width
        assert daf.init_params(cfg)['head.W_h'].shape[0] == fused_width

    def test_text_only_model_has_no_gate(self, tiny_config, tiny_batch):
        cfg = dataclasses.replace(tiny_config, modalities=('text',))
        params = daf.init_params(cfg)
        assert not any(name.startswith(('gate.', 'audio.', 'video.')) for name in params.names())
        trace = daf.forward(tiny_batch, params, cfg)
        assert trace.gates is None
        assert trace.prediction.shape == (3,)

    def test_invalid_configuration(self, tiny_config):
        with pytest.raises(ConfigError) as excinfo:
            daf.DafModel(dataclasses.replace(tiny_config, modalities=('audio',), gate_kind='magic'))
        assert len(excinfo.value.problems) == 2


class TestForward:

    def test_simplex_and_bounds_over_random_passes(self, tiny_config):
        rng = np.random.default_rng(99)
        cfg = tiny_config
        params = daf.init_params(cfg)
        for param in params.values():
            param.data *= 20.0  # saturate the output
        for _ in range(1000):
            batch = data.random_batch(TINY_DIMS, 2, int(rng.integers(1, 6)), rng)
            trace = daf.forward(batch, params, cfg)
            gates = trace.gates.data
            assert np.all(gates >= 0)
            np.testing.assert_allclose(gates.sum(axis=1), 1.0, atol=1e-9)
            for alpha in trace.attention.values():
                assert np.all(alpha.data >= 0)
                np.testing.assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-9)
            assert np.all(np.abs(trace.prediction.data) <= 3.0)

    def test_padding_invariance(self, tiny_config):
        rng = np.random.default_rng(5)
        params = daf.init_params(tiny_config)
        for _ in range(100):
            batch = data.random_batch(TINY_DIMS, 1, int(rng.integers(1, 6)), rng)
            padded = padded_copy(batch, int(rng.integers(1, 17)), rng)
            original = daf.forward(batch, params, tiny_config).prediction.data
            extended = daf.forward(padded, params, tiny_config).prediction.data
            assert np.max(np.abs(original - extended)) < 1e-9

    def test_masked_attention_weights_are_exactly_zero(self, tiny_config, rng):
        batch = padded_copy(data.random_batch(TINY_DIMS, 1, 3, rng), 4, rng)
        trace = daf.forward(batch, daf.init_params(tiny_config), tiny_config)
        assert np.all(trace.attention['audio'].data[0, 3:] == 0.0)
        assert np.all(trace.encoded['audio'].data[0, 3:] == trace.encoded['audio'].data[0, 3])

    def test_linear_encoder_and_linear_output(self, tiny_config, tiny_batch):
        cfg = dataclasses.replace(tiny_config, encoder_kind='linear', output_activation='linear')
        trace = daf.forward(tiny_batch, daf.init_params(cfg), cfg)
        assert trace.encoded['audio'].shape == tiny_batch.audio.shape[:2] + (cfg.d_attn,)
        assert trace.prediction.shape == (len(tiny_batch),)

    def test_sigmoid_gate_weights_are_independent(self, tiny_config, tiny_batch):
        cfg = dataclasses.replace(tiny_config, gate_kind='sigmoid2')
        trace = daf.forward(tiny_batch, daf.init_params(cfg), cfg)
        assert trace.gate_names == ('audio', 'video')
        assert np.all((trace.gates.data > 0) & (trace.gates.data < 1))
        assert trace.fused.shape == (len(tiny_batch), 2 * cfg.d_attn)

    def test_fixed_mean_fusion_averages(self, rng):
        text = T.Tensor(rng.normal(size=(2, 3)))
        contexts = [T.Tensor(rng.normal(size=(2, 3))) for _ in range(2)]
        fused = daf.fuse('fixed_mean', text, contexts)
        np.testing.assert_allclose(fused.data, (text.data + contexts[0].data + contexts[1].data) / 3)

    def test_gate_arity_mismatch(self, rng):
        text = T.Tensor(rng.normal(size=(2, 3)))
        contexts = [T.Tensor(rng.normal(size=(2, 3)))]
        with pytest.raises(DimensionError):
            daf.fuse('softmax3', text, contexts, T.Tensor(np.full((2, 3), 1 / 3)))

    def test_wrong_text_width(self, tiny_config, rng):
        batch = data.random_batch({'text': 7, 'audio': 4, 'video': 3}, 2, 2, rng)
        with pytest.raises(DimensionError):
            daf.forward(batch, daf.init_params(tiny_config), tiny_config)

    def test_dropout_needs_generator_and_eval_is_deterministic(self, tiny_config, tiny_batch):
        cfg = dataclasses.replace(tiny_config, input_dropout=0.5)
        model = daf.DafModel(cfg)
        with pytest.raises(ValueError):
            model.forward(tiny_batch, mode='train')
        np.testing.assert_array_equal(model.predict(tiny_batch), model.predict(tiny_batch))
        first = model.forward(tiny_batch, mode='train', rng=np.random.default_rng(3)).prediction.data
        again = model.forward(tiny_batch, mode='train', rng=np.random.default_rng(3)).prediction.data
        np.testing.assert_array_equal(first, again)


class TestGradients:

    @pytest.mark.parametrize('gate_kind', daf.GATE_KINDS)
    def test_model_gradients(self, tiny_config, gate_kind, rng):
        cfg = dataclasses.replace(tiny_config, gate_kind=gate_kind)
        batch = data.random_batch(TINY_DIMS, 2, 3, rng)
        report = training.check_model_gradients(cfg, batch, max_elements=5, rng=rng)
        assert report.passed, report.lines()
        assert set(report.checks) == set(daf.init_params(cfg).names())

    def test_full_check_covers_every_element(self, tiny_config, rng):
        batch = data.random_batch(TINY_DIMS, 2, 3, rng)
        params = daf.init_params(tiny_config)
        report = training.check_model_gradients(tiny_config, batch, params=params)
        assert report.passed, report.lines()
        for name, check in report.checks.items():
            assert check.n_checked + check.n_kinks == params[name].data.size


class TestCheckpoint:

    def test_round_trip_restores_predictions(self, tiny_config, tiny_batch, tmp_path):
        model = daf.DafModel(tiny_config)
        filename = str(tmp_path / 'model.dafckpt')
        content = model.checkpoint_bytes(extra={'note': 'x'})
        with open(filename, 'wb') as handle:
            handle.write(content)
        restored, header = daf.DafModel.from_checkpoint(filename)
        assert header['extra'] == {'note': 'x'}
        assert restored.cfg == tiny_config
        np.testing.assert_array_equal(restored.predict(tiny_batch), model.predict(tiny_batch))
        assert restored.checkpoint_bytes(extra={'note': 'x'}) == content

    def test_truncated_checkpoint(self, tiny_config, tmp_path):
        filename = str(tmp_path / 'model.dafckpt')
        with open(filename, 'wb') as handle:
            handle.write(daf.DafModel(tiny_config).checkpoint_bytes()[:-8])
        with pytest.raises(DataError):
            daf.DafModel.from_checkpoint(filename)
