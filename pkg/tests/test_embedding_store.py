import json
import math
import struct

import numpy as np
import pytest

from errors import (
    ContractError,
    DanglingReferenceError,
    DatasetParseError,
    MatrixFormatError,
    MatrixLengthError,
    MatrixWriteError,
)
from storage.dataset import load_dataset, write_dataset
from storage.embedding_io import (
    HEADER_SIZE,
    EmbeddingMatrix,
    decode_matrix,
    encode_matrix,
    read_matrix,
    write_matrix,
)
from storage.vector_math import cosine, cosine_checked, cosine_matrix, pairwise_cosine

from conftest import make_sample


# ---------------------------------------------------------------------------
# Binary matrices
# ---------------------------------------------------------------------------

def test_one_by_one_zero_matrix_is_28_bytes(tmp_path):
    path = tmp_path / 'm.bin'
    write_matrix(EmbeddingMatrix.from_rows([[0.0]]), path)
    payload = path.read_bytes()
    assert len(payload) == 28
    assert payload[:4] == b'SAVR'
    assert payload[HEADER_SIZE:] == b'\x00\x00\x00\x00'


def test_two_by_three_matrix_size_and_values(tmp_path):
    rows = [[1.0, -2.5, 0.125], [3.0, 0.0, -0.75]]
    path = tmp_path / 'm.bin'
    write_matrix(EmbeddingMatrix.from_rows(rows), path)
    assert path.stat().st_size == 16 + 8 + 24
    back = read_matrix(path)
    assert back.rows == 2 and back.dim == 3
    assert back.data.tolist() == rows


def test_round_trip_is_bit_exact_for_random_matrices(rng):
    for _ in range(1000):
        rows = int(rng.integers(0, 6))
        dim = int(rng.integers(1, 9))
        m = EmbeddingMatrix(rng.normal(scale=10.0, size=(rows, dim)))
        assert decode_matrix(encode_matrix(m)) == m


def test_file_round_trip(tmp_path, rng):
    m = EmbeddingMatrix(rng.normal(size=(5, 7)))
    path = tmp_path / 'm.bin'
    write_matrix(m, path)
    assert read_matrix(path) == m


def test_bad_magic_is_format_error(tmp_path):
    path = tmp_path / 'bad.bin'
    path.write_bytes(b'XXXX' + struct.pack('<IQQ', 1, 1, 1) + b'\x00' * 4)
    with pytest.raises(MatrixFormatError):
        read_matrix(path)


def test_bad_version_is_format_error():
    payload = struct.pack('<4sIQQ', b'SAVR', 7, 1, 1) + b'\x00' * 4
    with pytest.raises(MatrixFormatError):
        decode_matrix(payload)


def test_truncated_payload_is_length_error(tmp_path):
    m = EmbeddingMatrix(np.ones((9, 3)))
    header = struct.pack('<4sIQQ', b'SAVR', 1, 10, 3)
    path = tmp_path / 'short.bin'
    path.write_bytes(header + m.data.tobytes())
    with pytest.raises(MatrixLengthError):
        read_matrix(path)


def test_short_header_is_length_error():
    with pytest.raises(MatrixLengthError):
        decode_matrix(b'SAVR\x01')


def test_non_finite_values_rejected():
    with pytest.raises(MatrixFormatError):
        EmbeddingMatrix(np.array([[1.0, np.nan]]))


def test_write_into_missing_directory_raises_write_error(tmp_path):
    target = tmp_path / 'missing' / 'm.bin'
    with pytest.raises(MatrixWriteError) as info:
        write_matrix(EmbeddingMatrix.from_rows([[1.0]]), target)
    assert info.value.path == target
    assert isinstance(info.value, OSError)


# ---------------------------------------------------------------------------
# Cosine
# ---------------------------------------------------------------------------

@pytest.mark.parametrize('a, b, expected', [
    ([1, 0], [1, 0], 1.0),
    ([1, 0], [0, 1], 0.0),
    ([1, 1], [1, 0], 1 / math.sqrt(2)),
])
def test_cosine_examples(a, b, expected):
    assert cosine(a, b) == pytest.approx(expected, abs=1e-8)


def test_cosine_zero_norm_is_flagged():
    sim, degenerate = cosine_checked([0.0, 0.0], [1.0, 0.0])
    assert sim == 0.0
    assert degenerate


def test_cosine_dim_mismatch():
    with pytest.raises(ContractError):
        cosine([1.0, 0.0], [1.0, 0.0, 0.0])


def test_cosine_symmetric_bounded_and_scale_invariant(rng):
    for _ in range(200):
        a = rng.normal(size=5)
        b = rng.normal(size=5)
        assert cosine(a, b) == cosine(b, a)
        assert abs(cosine(a, b)) <= 1 + 1e-7
        for c in (1e-3, 1.0, 1e3):
            assert cosine(c * a, b) == pytest.approx(cosine(a, b), abs=1e-6)


def test_cosine_accepts_float32(rng):
    a = rng.normal(size=8).astype(np.float32)
    b = rng.normal(size=8).astype(np.float32)
    assert cosine(a, b) == pytest.approx(cosine(a.astype(np.float64), b.astype(np.float64)), abs=1e-12)


def test_cosine_matrix_matches_scalar(rng):
    q = rng.normal(size=4)
    m = rng.normal(size=(6, 4))
    m[2] = 0.0
    sims, degenerate = cosine_matrix(q, m)
    assert degenerate.tolist() == [False, False, True, False, False, False]
    for i in range(6):
        assert sims[i] == pytest.approx(cosine(q, m[i]), abs=1e-12)


def test_pairwise_cosine_symmetric_unit_diagonal(rng):
    s = pairwise_cosine(rng.normal(size=(5, 3)))
    assert np.array_equal(s, s.T)
    assert np.all(np.diag(s) == 1.0)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def _write_lines(path, records):
    with open(path, 'w') as f:
        for r in records:
            f.write((r if isinstance(r, str) else json.dumps(r)) + '\n')


def test_empty_file_gives_empty_list(tmp_path):
    path = tmp_path / 'empty.jsonl'
    path.write_text('')
    assert load_dataset(path) == []


def test_one_record_one_span_unit(tmp_path):
    path = tmp_path / 'd.jsonl'
    _write_lines(path, [{
        'id': 's0',
        'tokens': [[1, 0], [0, 1], [1, 1]],
        'units': [{'kind': 'span', 'span': [0, 1], 'gold': 0}],
    }])
    samples = load_dataset(path)
    assert len(samples) == 1
    assert samples[0].n_tokens == 3
    assert len(samples[0].units) == 1
    unit = samples[0].units[0]
    assert unit.unit_id == 'u0' and unit.span == (0, 1) and unit.gold == 0


def test_span_outside_tokens_is_parse_error_with_line(tmp_path):
    path = tmp_path / 'd.jsonl'
    _write_lines(path, [
        {'id': 's0', 'tokens': [[1.0]], 'units': []},
        {'id': 's1', 'tokens': [[1, 0], [0, 1], [1, 1]],
         'units': [{'kind': 'span', 'span': [2, 5]}]},
    ])
    with pytest.raises(DatasetParseError) as info:
        load_dataset(path)
    assert info.value.line_number == 2
    assert str(info.value).startswith('line 2:')


def test_invalid_json_is_parse_error(tmp_path):
    path = tmp_path / 'd.jsonl'
    _write_lines(path, ['{"id": "s0", '])
    with pytest.raises(DatasetParseError) as info:
        load_dataset(path)
    assert info.value.line_number == 1


def test_invalid_utf8_is_parse_error(tmp_path):
    path = tmp_path / 'd.jsonl'
    path.write_bytes(json.dumps({'id': 's0', 'tokens': [[1.0]]}).encode() + b'\n{"id": "\xff"}\n')
    with pytest.raises(DatasetParseError) as info:
        load_dataset(path)
    assert info.value.line_number == 2


@pytest.mark.parametrize('field, value', [('units', 5), ('images', 'img0'), ('units', {'kind': 'span'})])
def test_non_list_images_or_units_is_parse_error(tmp_path, field, value):
    path = tmp_path / 'd.jsonl'
    _write_lines(path, [{'id': 's0', 'tokens': [[1.0]], field: value}])
    with pytest.raises(DatasetParseError) as info:
        load_dataset(path)
    assert info.value.line_number == 1
    assert field in str(info.value)


def test_pair_unit_without_gold_rejected(tmp_path):
    path = tmp_path / 'd.jsonl'
    _write_lines(path, [{
        'id': 's0', 'tokens': [[1.0], [2.0]],
        'units': [{'kind': 'pair', 'head_span': [0, 0], 'tail_span': [1, 1]}],
    }])
    with pytest.raises(DatasetParseError):
        load_dataset(path)


def test_mixed_global_dims_rejected(tmp_path):
    path = tmp_path / 'd.jsonl'
    _write_lines(path, [{
        'id': 's0', 'tokens': [[1.0]],
        'images': [{'image_id': 'a', 'global': [1.0, 0.0]}, {'image_id': 'b', 'global': [1.0]}],
    }])
    with pytest.raises(DatasetParseError):
        load_dataset(path)


def test_dangling_reference(tmp_path):
    path = tmp_path / 'd.jsonl'
    _write_lines(path, [{'id': 's0', 'tokens': {'ref': 'nope.bin'}}])
    with pytest.raises(DanglingReferenceError):
        load_dataset(path)


def test_write_then_load_dataset(tmp_path):
    samples = [make_sample('s0', seed=1), make_sample('s1', n_images=0, seed=2)]
    path = write_dataset(samples, tmp_path / 'data' / 'd.jsonl')
    loaded = load_dataset(path)

    assert [s.id for s in loaded] == ['s0', 's1']
    assert loaded[0].tokens == samples[0].tokens
    assert loaded[0].units == samples[0].units
    assert loaded[1].images == []
    for orig, back in zip(samples[0].images, loaded[0].images):
        assert back.image_id == orig.image_id
        assert np.array_equal(back.global_vec, orig.global_vec)
        assert back.regions.is_file
        assert back.regions.load() == orig.regions.load()
