# -*- coding: utf-8 -*-

import json
import os

import numpy as np
import pytest

from conftest import TINY_DIMS
from dynfusion import data
from dynfusion import dataformat
from dynfusion import model as daf
from dynfusion.exceptions import ConfigError, DataError


DIMS = {'text': 3, 'audio': 2, 'video': 2}


def write_records(path, records, dims=DIMS):
    """Writes a jsonl dataset whose train split holds the given raw JSON records"""
    os.makedirs(path, exist_ok=True)
    manifest = dataformat.write_manifest(path, dims)
    for name in dataformat.SPLIT_NAMES:
        with open(os.path.join(path, manifest['splits'][name]), 'w') as handle:
            if name == 'train':
                for record in records:
                    handle.write(record if isinstance(record, str) else json.dumps(record))
                    handle.write('\n')
    return path


def record(sample_id, label=0.5, audio=True, video=True):
    return {
        'id': sample_id,
        'label': label,
        'text': [1.0, 2.0, 3.0],
        'audio': [[1.0, 0.0], [0.0, 2.0]] if audio else [],
        'video': [[3.0, 4.0]] if video else [],
    }


def read_tree(path):
    result = dict()
    for name in sorted(os.listdir(path)):
        with open(os.path.join(path, name), 'rb') as handle:
            result[name] = handle.read()
    return result


class TestSynthetic:

    def test_split_sizes_and_oracle(self):
        splits = data.gen_synthetic(data.SyntheticSpec(n_samples=300, d_text=6, d_audio=4, d_video=3, seed=2))
        assert [len(splits[name]) for name in ('train', 'val', 'test')] == [210, 45, 45]
        assert all(u.oracle in ('text', 'audio', 'video') for split in splits.values() for u in split)
        assert splits.dims == {'text': 6, 'audio': 4, 'video': 3}

    def test_generation_is_seeded(self, tiny_spec):
        first = data.gen_synthetic(tiny_spec)
        second = data.gen_synthetic(tiny_spec)
        np.testing.assert_array_equal(first['train'][0].audio, second['train'][0].audio)
        assert [u.label for u in first['test']] == [u.label for u in second['test']]

    def test_modality_distribution(self):
        splits = data.gen_synthetic(data.SyntheticSpec(n_samples=3000, d_text=4, d_audio=3, d_video=2,
                                                       modality_probs=(1 / 3, 1 / 3, 1 / 3), seed=11))
        oracles = [u.oracle for split in splits.values() for u in split]
        for modality in ('text', 'audio', 'video'):
            assert abs(oracles.count(modality) - 1000) <= 90

    def test_invalid_spec(self):
        with pytest.raises(ConfigError) as excinfo:
            data.gen_synthetic(data.SyntheticSpec(n_samples=0, modality_probs=(0.5, 0.5, 0.5)))
        assert len(excinfo.value.problems) == 2


class TestStorage:

    @pytest.mark.parametrize('encoding', ['jsonl', 'binary'])
    def test_save_load_save_is_byte_identical(self, tiny_spec, tmp_path, encoding):
        splits = data.gen_synthetic(tiny_spec)
        data.save_dataset(splits, str(tmp_path / 'a'), encoding=encoding)
        loaded = data.load_dataset(str(tmp_path / 'a'))
        assert loaded.n_dropped == 0
        data.save_dataset(loaded, str(tmp_path / 'b'), encoding=encoding)
        assert read_tree(tmp_path / 'a') == read_tree(tmp_path / 'b')

    def test_encodings_load_identical_values(self, tiny_spec, tmp_path):
        splits = data.gen_synthetic(tiny_spec)
        data.save_dataset(splits, str(tmp_path / 'json'), encoding='jsonl')
        data.save_dataset(splits, str(tmp_path / 'bin'), encoding='binary')
        from_json = data.load_dataset(str(tmp_path / 'json'))
        from_binary = data.load_dataset(str(tmp_path / 'bin'))
        assert from_json.dims == from_binary.dims
        for name in ('train', 'val', 'test'):
            assert len(from_json[name]) == len(from_binary[name])
            for a, b in zip(from_json[name], from_binary[name]):
                assert (a.id, a.label, a.oracle) == (b.id, b.label, b.oracle)
                for modality in ('text', 'audio', 'video'):
                    np.testing.assert_array_equal(getattr(a, modality), getattr(b, modality))

    def test_non_finite_values_survive_and_are_scrubbed(self, tmp_path):
        raw = record('nan-1')
        raw['audio'] = [['NaN', 1.0], ['Inf', '-Inf']]
        splits = data.load_dataset(write_records(str(tmp_path), [raw]))
        audio = splits['train'][0].audio
        assert np.isnan(audio[0, 0]) and np.isposinf(audio[1, 0])
        batch = data.collate(splits['train'], l2_norm=False)
        np.testing.assert_array_equal(batch.audio[0], [[0.0, 1.0], [0.0, 0.0]])

    def test_label_out_of_range(self, tmp_path):
        with pytest.raises(DataError) as excinfo:
            data.load_dataset(write_records(str(tmp_path), [record('a'), record('b', label=3.5)]))
        assert excinfo.value.record == 'b'

    def test_missing_modality_is_dropped_and_counted(self, tmp_path):
        records = [record('a'), record('b', audio=False), record('c', video=False)]
        splits = data.load_dataset(write_records(str(tmp_path), records))
        assert [u.id for u in splits['train']] == ['a']
        assert splits.dropped['train'] == 2
        assert splits.n_dropped == 2

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError) as excinfo:
            data.load_dataset(str(tmp_path))
        assert excinfo.value.filename.endswith('manifest.json')

    def test_malformed_line_names_file_and_line(self, tmp_path):
        bad = record('b')
        bad['text'] = [1.0]
        with pytest.raises(DataError) as excinfo:
            data.load_dataset(write_records(str(tmp_path), [record('a'), 'not json', bad]))
        assert excinfo.value.filename.endswith('train.jsonl')
        assert excinfo.value.record == 'line 2'

    def test_manifest_problems(self, tmp_path):
        with open(tmp_path / 'manifest.json', 'w') as handle:
            json.dump({'format_version': 9, 'dims': {'text': 3}, 'splits': {}}, handle)
        with pytest.raises(DataError, match='format version'):
            data.load_dataset(str(tmp_path))

    def test_truncated_binary_split(self, tiny_spec, tmp_path):
        data.save_dataset(data.gen_synthetic(tiny_spec), str(tmp_path), encoding='binary')
        filename = tmp_path / 'val.bin'
        filename.write_bytes(filename.read_bytes()[:-5])
        with pytest.raises(DataError):
            data.load_dataset(str(tmp_path))


class TestPreprocessing:

    def test_l2_normalize(self):
        frames = np.array([[3.0, 4.0], [0.0, 0.0], [1e-14, 0.0]])
        normalized = data.l2_normalize(frames)
        np.testing.assert_allclose(normalized[0], [0.6, 0.8])
        np.testing.assert_array_equal(normalized[1:], frames[1:])
        np.testing.assert_array_equal(data.l2_normalize(frames, enabled=False), frames)

    def test_collate_pads_and_masks(self):
        samples = [
            data.Utterance('a', 1.0, np.ones(3), np.ones((3, 2)), np.ones((1, 2))),
            data.Utterance('b', -1.0, np.ones(3), np.ones((1, 2)), np.ones((2, 2))),
        ]
        batch = data.collate(samples, l2_norm=False)
        assert batch.audio.shape == (2, 3, 2)
        np.testing.assert_array_equal(batch.audio_mask, [[True, True, True], [True, False, False]])
        np.testing.assert_array_equal(batch.video_mask, [[True, False], [True, True]])
        assert np.all(batch.audio[1, 1:] == 0.0)
        assert batch.ids == ['a', 'b']
        np.testing.assert_array_equal(batch.labels, [1.0, -1.0])

    @pytest.mark.parametrize('l2_norm', [True, False])
    def test_batched_predictions_match_single_samples(self, tiny_config, rng, l2_norm):
        samples = [data.Utterance(id=f'u{i}', label=0.0, text=rng.normal(size=TINY_DIMS['text']),
                                  audio=rng.normal(size=(length, TINY_DIMS['audio'])),
                                  video=rng.normal(size=(7 - length, TINY_DIMS['video'])))
                   for i, length in enumerate((1, 6, 3, 2, 5, 4))]
        params = daf.init_params(tiny_config)
        batched = daf.forward(data.collate(samples, l2_norm), params, tiny_config).prediction.numpy()
        for i, sample in enumerate(samples):
            alone = daf.forward(data.collate([sample], l2_norm), params, tiny_config).prediction.numpy()
            assert abs(batched[i] - alone[0]) < 1e-9

    def test_collate_rejects_mixed_presence(self):
        samples = [
            data.Utterance('a', 1.0, np.ones(3), np.ones((3, 2)), np.ones((1, 2))),
            data.Utterance('b', -1.0, np.ones(3), None, np.ones((2, 2))),
        ]
        with pytest.raises(DataError):
            data.collate(samples)

    def test_iter_batches(self, tiny_spec, rng):
        split = data.gen_synthetic(tiny_spec)['train']
        ordered = list(data.iter_batches(split, 10))
        assert [len(b) for b in ordered] == [10, 10, 10, 10, 2]
        assert ordered[0].ids == [u.id for u in split[:10]]
        shuffled = [i for b in data.iter_batches(split, 10, rng) for i in b.ids]
        assert sorted(shuffled) == sorted(u.id for u in split)
        assert shuffled != [u.id for u in split]


class TestModalitySets:

    def test_text_cannot_be_dropped(self, tiny_spec):
        split = data.gen_synthetic(tiny_spec)['train']
        with pytest.raises(ConfigError):
            data.drop_modality(split, 'text')
        with pytest.raises(ConfigError):
            data.apply_modality_set(data.gen_synthetic(tiny_spec), ('audio',))

    def test_reduce_gate_removes_the_modality(self, tiny_spec):
        splits = data.apply_modality_set(data.gen_synthetic(tiny_spec), ('text', 'video'))
        assert all(u.audio is None and u.video is not None for u in splits['train'])
        assert splits.dims == tiny_spec.dims

    def test_zero_input_replaces_with_one_zero_frame(self, tiny_spec):
        splits = data.apply_modality_set(data.gen_synthetic(tiny_spec), ('text',), policy='zero_input')
        utterance = splits['val'][0]
        np.testing.assert_array_equal(utterance.audio, np.zeros((1, tiny_spec.d_audio)))
        np.testing.assert_array_equal(utterance.video, np.zeros((1, tiny_spec.d_video)))

    def test_unknown_policy(self, tiny_spec):
        with pytest.raises(ConfigError):
            data.apply_modality_set(data.gen_synthetic(tiny_spec), ('text',), policy='impute')

    def test_add_noise(self, tiny_spec, rng):
        split = data.gen_synthetic(tiny_spec)['test']
        assert all(a is b for a, b in zip(data.add_noise(split, 0.0, rng), split))
        noisy = data.add_noise(split, 0.5, rng)
        np.testing.assert_array_equal(noisy[0].text, split[0].text)
        assert not np.array_equal(noisy[0].audio, split[0].audio)
        assert noisy[0].audio.shape == split[0].audio.shape
