import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadsketch.errors import DecodeError, TrainingError
from quadsketch.tokenizer import (Codebook, decode_tokens, encode_tile, fit_codebook, patches_to_tile,
                                  perplexity, quantization_radius, read_codebook, tile_patches,
                                  write_codebook)


def brute_nearest(codebook, tile):
    out = []
    sub, g = codebook.sub_side, codebook.g
    for gy in range(g):
        for gx in range(g):
            v = tile[gy * sub:(gy + 1) * sub, gx * sub:(gx + 1) * sub].ravel()
            best, idx = math.inf, -1
            for j, e in enumerate(codebook.entries):
                d = float(((v - e) ** 2).sum())
                if d < best:
                    best, idx = d, j
            out.append(idx)
    return out


def random_codebook(rng, Q=16, g=2, sub=4):
    return Codebook(rng.uniform(-1, 1, (Q, sub * sub)), g, sub)


def test_patch_layout_roundtrip():
    tile = np.arange(64.0).reshape(8, 8)
    patches = tile_patches(tile, 2)
    np.testing.assert_array_equal(patches[1], tile[:4, 4:].ravel())
    np.testing.assert_array_equal(patches_to_tile(patches, 2), tile)


class TestFit:
    def test_single_entry_is_global_mean(self):
        rng = np.random.default_rng(0)
        tiles = [rng.uniform(-1, 1, (8, 8)) for _ in range(5)]
        cb = fit_codebook(tiles, Q=1, g=2, seed=0)
        mean = np.concatenate([tile_patches(t, 2) for t in tiles]).mean(0)
        np.testing.assert_allclose(cb.entries[0], mean, atol=1e-6)

    def test_two_separated_clusters(self):
        rng = np.random.default_rng(1)
        a = rng.normal(-0.6, 0.05, (200, 16))
        b = rng.normal(0.6, 0.05, (300, 16))
        tiles = [p.reshape(4, 4) for p in np.concatenate([a, b])]
        cb = fit_codebook(tiles, Q=2, g=1, seed=3)
        got = sorted(cb.entries.tolist(), key=lambda e: e[0])
        np.testing.assert_allclose(got[0], a.mean(0), atol=1e-3)
        np.testing.assert_allclose(got[1], b.mean(0), atol=1e-3)

    def test_saturation(self):
        base = [np.full((4, 4), v) for v in (-1.0, 0.0, 0.5)]
        tiles = base * 4
        cb = fit_codebook(tiles, Q=8, g=1, seed=0)
        assert cb.Q == 8
        for t in base:
            assert np.allclose(decode_tokens(cb, encode_tile(cb, t)).values, t)
        assert quantization_radius(cb, tiles) == 0.0

    def test_empty(self):
        with pytest.raises(TrainingError):
            fit_codebook([], Q=4, g=2)

    def test_grid_must_divide(self):
        with pytest.raises(ValueError):
            fit_codebook([np.zeros((8, 8))], Q=1, g=3)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        tiles = [rng.uniform(-1, 1, (8, 8)) for _ in range(20)]
        assert fit_codebook(tiles, 12, 2, seed=9) == fit_codebook(tiles, 12, 2, seed=9)

    def test_distortion_non_increasing_in_q(self):
        rng = np.random.default_rng(2)
        centers = rng.uniform(-1, 1, (12, 16))
        pts = centers[rng.integers(0, 12, 600)] + rng.normal(0, 0.05, (600, 16))
        tiles = [p.reshape(4, 4) for p in pts]
        errors = []
        for Q in (1, 2, 4, 8, 16, 32):
            cb = fit_codebook(tiles, Q, 1, seed=0)
            errors.append(np.mean([((decode_tokens(cb, encode_tile(cb, t)).values - t) ** 2).sum()
                                   for t in tiles]))
        assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))


class TestEncodeDecode:
    def test_assembled_tile_recovers_indices(self):
        cb = random_codebook(np.random.default_rng(0))
        z = np.array([3, 0, 15, 7])
        tile = patches_to_tile(cb.entries[z], cb.g)
        np.testing.assert_array_equal(encode_tile(cb, tile), z)

    def test_token_count(self):
        cb = random_codebook(np.random.default_rng(0), g=4, sub=2)
        assert len(encode_tile(cb, np.zeros((8, 8)))) == 16

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        cb = random_codebook(rng, Q=int(rng.integers(1, 40)))
        tile = rng.uniform(-1, 1, (8, 8))
        assert encode_tile(cb, tile).tolist() == brute_nearest(cb, tile)

    def test_ties_pick_lowest_index(self):
        cb = Codebook(np.array([[1.0], [-1.0], [1.0]]), 1, 1)
        assert encode_tile(cb, np.zeros((1, 1))).tolist() == [0]

    def test_side_mismatch(self):
        with pytest.raises(ValueError):
            encode_tile(random_codebook(np.random.default_rng(0)), np.zeros((4, 4)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_encode_decode_identity(self, seed):
        rng = np.random.default_rng(seed)
        cb = random_codebook(rng)
        z = rng.integers(0, cb.Q, cb.K)
        np.testing.assert_array_equal(encode_tile(cb, decode_tokens(cb, z)), z)

    def test_constant_entry_gives_constant_tile(self):
        entries = np.random.default_rng(0).uniform(-1, 1, (4, 16))
        entries[2] = 0.3
        cb = Codebook(entries, 2, 4)
        np.testing.assert_allclose(decode_tokens(cb, [2, 2, 2, 2]).values, 0.3)

    def test_out_of_range(self):
        cb = random_codebook(np.random.default_rng(0))
        with pytest.raises(DecodeError):
            decode_tokens(cb, [0, 1, 2, 16])

    def test_decode_clamps(self):
        cb = Codebook(np.full((1, 4), 3.0), 1, 2)
        assert decode_tokens(cb, [0]).values.max() == 1.0

    def test_reconstruction_within_radius(self):
        rng = np.random.default_rng(4)
        tiles = [rng.uniform(-1, 1, (8, 8)) for _ in range(40)]
        cb = fit_codebook(tiles, 10, 2, seed=1)
        r = quantization_radius(cb, tiles)
        for t in tiles:
            err = np.abs(decode_tokens(cb, encode_tile(cb, t)).values - t).max()
            assert err <= r + 1e-9


class TestPerplexity:
    def test_uniform(self):
        assert perplexity(np.ones(512)) == pytest.approx(512, abs=1e-9)

    def test_single_token(self):
        assert perplexity([0, 9, 0]) == pytest.approx(1.0)

    def test_two_point(self):
        assert perplexity([5, 5, 0, 0]) == pytest.approx(2.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            perplexity(np.zeros(4))


def test_codebook_file(tmp_path):
    cb = fit_codebook([np.random.default_rng(0).uniform(-1, 1, (8, 8)) for _ in range(10)], 6, 2, 0)
    write_codebook(tmp_path / "c.vqcb", cb)
    data = (tmp_path / "c.vqcb").read_bytes()
    assert data[:4] == b"VQCB"
    assert struct.unpack("<IIII", data[4:20]) == (6, 16, 2, 4)
    assert len(data) == 20 + 4 * 6 * 16
    assert read_codebook(tmp_path / "c.vqcb") == cb
