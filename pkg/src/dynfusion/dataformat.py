# -*- coding: utf-8 -*-

"""dataformat.py: Portable on-disk formats: dataset manifest, JSON-lines and packed binary split files, parameter checkpoints."""

# Binary split layout (all integers uint32, all reals float64, little-endian):
#   b'DAFSPLIT' | version | n_records | records...
#   record: id_len | id (utf-8) | label | oracle_len | oracle (utf-8)
#           | d_text | text[d_text]
#           | T_audio | d_audio | audio[T_audio * d_audio]
#           | T_video | d_video | video[T_video * d_video]
# A sequence with T = 0 stands for a missing modality.
#
# Checkpoint layout:
#   b'DAFCKPT\n' | uint32 version | uint64 header_len | JSON header (utf-8) | float64 payload
#   The header lists every tensor with name, shape and offset (in values) into the payload.

import json
import logging
import math
import os
import struct

import numpy as np

from .exceptions import DataError


logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = 'manifest.json'
SPLIT_NAMES = ('train', 'val', 'test')
ENCODINGS = {'jsonl': '.jsonl', 'binary': '.bin'}
SPLIT_MAGIC = b'DAFSPLIT'
CHECKPOINT_MAGIC = b'DAFCKPT\n'
_NONFINITE = {'NaN': math.nan, 'Inf': math.inf, '-Inf': -math.inf}


def _encode_value(value):
    if math.isnan(value):
        return 'NaN'
    if math.isinf(value):
        return 'Inf' if value > 0 else '-Inf'
    return value


def encode_nonfinite(obj):
    """Copy of a JSON-like structure with non-finite floats replaced by "NaN", "Inf" and "-Inf" """
    if isinstance(obj, dict):
        return {key: encode_nonfinite(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [encode_nonfinite(value) for value in obj]
    if isinstance(obj, (float, np.floating)):
        return _encode_value(float(obj))
    return obj


def _encode_array(array):
    """Converts an array to nested lists with non-finite values as strings"""
    if array.ndim == 1:
        return [_encode_value(v) for v in array.tolist()]
    return [_encode_array(row) for row in array]


def _decode_value(value):
    if isinstance(value, str):
        try:
            return _NONFINITE[value]
        except KeyError:
            raise ValueError(f'unexpected string value [{value}]') from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f'unexpected value [{value}]')
    return float(value)


def dumps_json(obj):
    """Deterministic compact JSON"""
    return json.dumps(obj, separators=(',', ':'), allow_nan=False)


def write_manifest(path, dims, encoding='jsonl', extra=None):
    """Writes the dataset manifest"""
    manifest = {
        'format': 'dynfusion-dataset',
        'format_version': FORMAT_VERSION,
        'dims': {'text': dims['text'], 'audio': dims['audio'], 'video': dims['video']},
        'label_range': [-3.0, 3.0],
        'encoding': encoding,
        'splits': {name: name + ENCODINGS[encoding] for name in SPLIT_NAMES},
    }
    if extra:
        manifest['extra'] = extra
    with open(os.path.join(path, MANIFEST_NAME), 'w') as handle:
        handle.write(json.dumps(manifest, indent=2, sort_keys=True, allow_nan=False))
        handle.write('\n')
    return manifest


def read_manifest(path):
    """Reads and checks the dataset manifest"""
    filename = os.path.join(path, MANIFEST_NAME)
    try:
        with open(filename, 'r') as handle:
            manifest = json.load(handle)
    except FileNotFoundError:
        raise DataError('Manifest not found', filename=filename) from None
    except json.JSONDecodeError as e:
        raise DataError(f'Manifest is not valid JSON ({e})', filename=filename) from None
    problems = []
    if manifest.get('format_version') != FORMAT_VERSION:
        problems.append(f'unsupported format version [{manifest.get("format_version")}]')
    dims = manifest.get('dims', dict())
    for modality in ('text', 'audio', 'video'):
        if not isinstance(dims.get(modality), int) or dims.get(modality) <= 0:
            problems.append(f'dims.{modality} missing or invalid')
    if manifest.get('encoding', 'jsonl') not in ENCODINGS:
        problems.append(f'unknown encoding [{manifest.get("encoding")}]')
    if not isinstance(manifest.get('splits'), dict):
        problems.append('splits missing')
    if problems:
        raise DataError('; '.join(problems), filename=filename)
    manifest.setdefault('encoding', 'jsonl')
    return manifest


def encode_record_json(utterance):
    """Encodes one utterance as a JSON line"""
    record = {
        'id': utterance.id,
        'label': _encode_value(float(utterance.label)),
        'text': _encode_array(np.asarray(utterance.text, dtype=np.float64)),
        'audio': [] if utterance.audio is None else _encode_array(np.asarray(utterance.audio, dtype=np.float64)),
        'video': [] if utterance.video is None else _encode_array(np.asarray(utterance.video, dtype=np.float64)),
    }
    if utterance.oracle is not None:
        record['oracle'] = utterance.oracle
    return dumps_json(record)


def _decode_frames(values, width, name):
    if values is None:
        return None
    if not isinstance(values, list):
        raise ValueError(f'[{name}] must be a list of frames')
    if not values:
        return None
    frames = np.empty((len(values), width))
    for i, frame in enumerate(values):
        if not isinstance(frame, list) or len(frame) != width:
            raise ValueError(f'[{name}] frame {i} does not have width {width}')
        frames[i] = [_decode_value(v) for v in frame]
    return frames


def decode_record_json(line, dims):
    """Decodes one JSON line into the raw record fields (audio/video None when missing)"""
    record = json.loads(line)
    if not isinstance(record, dict):
        raise ValueError('record is not a JSON object')
    text = record.get('text')
    if not isinstance(text, list) or len(text) != dims['text']:
        raise ValueError(f'[text] must have width {dims["text"]}')
    return {
        'id': str(record['id']),
        'label': _decode_value(record['label']),
        'text': np.array([_decode_value(v) for v in text], dtype=np.float64),
        'audio': _decode_frames(record.get('audio'), dims['audio'], 'audio'),
        'video': _decode_frames(record.get('video'), dims['video'], 'video'),
        'oracle': record.get('oracle'),
    }


def _pack_string(value):
    data = (value or '').encode('utf-8')
    return struct.pack('<I', len(data)) + data


def _pack_frames(frames, width):
    if frames is None:
        return struct.pack('<II', 0, width)
    frames = np.asarray(frames, dtype='<f8')
    return struct.pack('<II', frames.shape[0], frames.shape[1]) + frames.tobytes()


def encode_split_binary(utterances):
    """Encodes a list of utterances in the packed binary layout"""
    chunks = [SPLIT_MAGIC, struct.pack('<II', FORMAT_VERSION, len(utterances))]
    for utterance in utterances:
        text = np.asarray(utterance.text, dtype='<f8')
        chunks.append(_pack_string(utterance.id))
        chunks.append(struct.pack('<d', float(utterance.label)))
        chunks.append(_pack_string(utterance.oracle))
        chunks.append(struct.pack('<I', text.shape[0]) + text.tobytes())
        chunks.append(_pack_frames(utterance.audio, _width(utterance.audio)))
        chunks.append(_pack_frames(utterance.video, _width(utterance.video)))
    return b''.join(chunks)


def _width(frames):
    return 0 if frames is None else np.asarray(frames).shape[1]


class _Reader():
    """Sequential reader over a bytes buffer"""

    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, count):
        if self.pos + count > len(self.data):
            raise ValueError('unexpected end of data')
        chunk = self.data[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def uint32(self):
        return struct.unpack('<I', self.take(4))[0]

    def float64(self):
        return struct.unpack('<d', self.take(8))[0]

    def string(self):
        return self.take(self.uint32()).decode('utf-8')

    def floats(self, count):
        return np.frombuffer(self.take(8 * count), dtype='<f8').astype(np.float64)


def decode_split_binary(data, dims):
    """Decodes the packed binary layout into raw record dicts; yields (index, record or exception)"""
    reader = _Reader(data)
    if reader.take(len(SPLIT_MAGIC)) != SPLIT_MAGIC:
        raise ValueError('not a binary split file')
    version, count = reader.uint32(), reader.uint32()
    if version != FORMAT_VERSION:
        raise ValueError(f'unsupported binary version [{version}]')
    for index in range(count):
        record = {'id': reader.string(), 'label': reader.float64()}
        record['oracle'] = reader.string() or None
        d_text = reader.uint32()
        if d_text != dims['text']:
            raise ValueError(f'record {index}: [text] must have width {dims["text"]}')
        record['text'] = reader.floats(d_text)
        for modality in ('audio', 'video'):
            length, width = reader.uint32(), reader.uint32()
            if length == 0:
                record[modality] = None
                continue
            if width != dims[modality]:
                raise ValueError(f'record {index}: [{modality}] frames must have width {dims[modality]}')
            record[modality] = reader.floats(length * width).reshape(length, width)
        yield record
    if reader.pos != len(data):
        raise ValueError('trailing bytes after last record')


def write_split(filename, utterances, encoding):
    """Writes one split file in the given encoding"""
    if encoding == 'binary':
        with open(filename, 'wb') as handle:
            handle.write(encode_split_binary(utterances))
    else:
        with open(filename, 'w', newline='\n') as handle:
            for utterance in utterances:
                handle.write(encode_record_json(utterance))
                handle.write('\n')


def read_split(filename, dims, encoding):
    """Reads one split file; yields raw record dicts"""
    try:
        if encoding == 'binary':
            with open(filename, 'rb') as handle:
                data = handle.read()
            try:
                yield from decode_split_binary(data, dims)
            except (ValueError, UnicodeDecodeError, struct.error) as e:
                raise DataError(f'Malformed binary split ({e})', filename=filename) from None
            return
        with open(filename, 'r') as handle:
            for lineno, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    yield decode_record_json(line, dims)
                except (ValueError, KeyError, TypeError) as e:
                    raise DataError(f'Malformed record ({e})', filename=filename, record=f'line {lineno}') from None
    except FileNotFoundError:
        raise DataError('Split file not found', filename=filename) from None


def encode_checkpoint(params, model_config, seed, extra=None):
    """Encodes parameters and model configuration into the checkpoint container"""
    tensors, payload, offset = [], [], 0
    for name, value in params.state().items():
        tensors.append({'name': name, 'shape': list(value.shape), 'offset': offset})
        payload.append(np.ascontiguousarray(value, dtype='<f8').tobytes())
        offset += value.size
    header = {
        'format': 'dynfusion-checkpoint',
        'format_version': FORMAT_VERSION,
        'model_config': model_config.to_dict(),
        'seed': seed,
        'tensors': tensors,
        'extra': extra or dict(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(',', ':'), allow_nan=False).encode('utf-8')
    return b''.join([CHECKPOINT_MAGIC, struct.pack('<IQ', FORMAT_VERSION, len(header_bytes)), header_bytes] + payload)


def save_checkpoint(filename, params, model_config, seed, extra=None):
    """Writes a checkpoint file"""
    with open(filename, 'wb') as handle:
        handle.write(encode_checkpoint(params, model_config, seed, extra))
    logger.info(f'Checkpoint written to [{filename}]')


def load_checkpoint(filename):
    """Reads a checkpoint; returns (header, name -> array)"""
    try:
        with open(filename, 'rb') as handle:
            data = handle.read()
    except FileNotFoundError:
        raise DataError('Checkpoint not found', filename=filename) from None
    try:
        reader = _Reader(data)
        if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError('not a checkpoint file')
        version, header_len = struct.unpack('<IQ', reader.take(12))
        if version != FORMAT_VERSION:
            raise ValueError(f'unsupported checkpoint version [{version}]')
        header = json.loads(reader.take(header_len).decode('utf-8'))
        start = reader.pos
        values = dict()
        for entry in header['tensors']:
            count = int(np.prod(entry['shape'], dtype=np.int64))
            begin = start + 8 * entry['offset']
            chunk = data[begin:begin + 8 * count]
            if len(chunk) != 8 * count:
                raise ValueError(f'payload too short for [{entry["name"]}]')
            values[entry['name']] = np.frombuffer(chunk, dtype='<f8').astype(np.float64).reshape(entry['shape'])
    except (ValueError, KeyError, struct.error, UnicodeDecodeError) as e:
        raise DataError(f'Malformed checkpoint ({e})', filename=filename) from None
    return header, values
