"""
Tests for helper functions
"""

import numpy as np
import pytest

from crowdmap.exceptions import ValidationError
from crowdmap.utils.helpers import (
    atomic_write_text,
    decode_dmap,
    encode_dmap,
    file_digest,
    format_float,
    load_dmap,
    load_pgm,
    parallel_map,
    save_dmap,
    save_pgm,
    split_shape,
    to_uint8,
)


class TestDmap:
    def test_header_layout(self):
        data = encode_dmap(np.zeros((2, 3)))
        assert data[:4] == b'DMAP'
        assert data[4] == 1
        assert int.from_bytes(data[5:9], 'little') == 2
        assert int.from_bytes(data[9:13], 'little') == 3
        assert len(data) == 13 + 4 * 6

    def test_values_are_float32(self, tmp_path):
        values = np.array([[0.1, 2.5], [1e-8, 0.0]])
        restored = load_dmap(save_dmap(tmp_path / 'm.dmap', values))
        np.testing.assert_array_equal(restored, values.astype(np.float32).astype(np.float64))
        assert restored.dtype == np.float64

    def test_bad_magic(self):
        data = bytearray(encode_dmap(np.zeros((1, 1))))
        data[0:4] = b'XXXX'
        with pytest.raises(ValidationError):
            decode_dmap(bytes(data))

    def test_truncated(self):
        with pytest.raises(ValidationError):
            decode_dmap(encode_dmap(np.zeros((2, 2)))[:-1])


class TestPgm:
    def test_binary_grayscale(self, tmp_path):
        pixels = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
        path = save_pgm(tmp_path / 'a.pgm', pixels)
        assert path.read_bytes().startswith(b'P5')
        np.testing.assert_array_equal(load_pgm(path), pixels.astype(np.float64))

    def test_to_uint8_clamps(self):
        np.testing.assert_array_equal(to_uint8(np.array([-3.0, 12.6, 300.0])), [0, 13, 255])


class TestMisc:
    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        path = atomic_write_text(tmp_path / 'sub' / 'x.txt', 'hello\n')
        assert path.read_text(encoding='utf-8') == 'hello\n'
        assert [p.name for p in path.parent.iterdir()] == ['x.txt']

    def test_digest_changes_with_content(self, tmp_path):
        first = file_digest(atomic_write_text(tmp_path / 'a', 'one'))
        second = file_digest(atomic_write_text(tmp_path / 'a', 'two'))
        assert first != second and len(first) == 64

    def test_format_float_round_trips(self):
        for value in (0.1, 1 / 3, 7.0, 1e-20):
            assert float(format_float(value)) == value
        assert format_float(3.0) == '3.0'

    def test_parallel_map_keeps_order(self):
        assert parallel_map(lambda x: x * x, range(20), workers=4) == [x * x for x in range(20)]

    def test_split_shape(self):
        assert split_shape((3, 4)) == (3, 4)
        with pytest.raises(ValidationError):
            split_shape((0, 4))
