import random

import numpy as np
import pytest

from mftts.errors import AlignmentError, CorruptFile, NonFiniteValue
from mftts.featalign import FeatureMatrix, read_matrix, upsample, write_matrix

from oracles import loop_upsample


def test_upsample_example():
    out = upsample(np.array([[1, 2], [3, 4]]), [0, 0, 1, -1])
    np.testing.assert_array_equal(out, [[1, 2, 1], [1, 2, 1], [3, 4, 1], [0, 0, 0]])


def test_upsample_no_words():
    out = upsample(np.zeros((0, 3)), [-1])
    np.testing.assert_array_equal(out, [[0, 0, 0, 0]])


def test_upsample_word_count_mismatch():
    with pytest.raises(AlignmentError) as exc:
        upsample(np.ones((3, 2)), [0, 1, -1])
    assert (exc.value.expected, exc.value.got) == (2, 3)


def random_alignment(rng):
    W = rng.randint(0, 8)
    counts = [rng.randint(1, 5) for _ in range(W)]
    word_index = []
    for w, c in enumerate(counts):
        if rng.random() < 0.3:
            word_index.append(-1)
        word_index += [w] * c
    word_index.append(-1)
    return W, word_index


def test_upsample_matches_loop_oracle():
    rng = random.Random(11)
    nrng = np.random.default_rng(11)
    for _ in range(100):
        W, wi = random_alignment(rng)
        D = rng.randint(1, 6)
        feats = nrng.standard_normal((W, D)).astype(np.float32)
        out = upsample(feats, wi)
        np.testing.assert_array_equal(out, loop_upsample(feats, wi))
        assert len(out) == len(wi)
        assert out[:, -1].sum() == sum(1 for w in wi if w >= 0)
        # dedupe consecutive flag-1 rows -> original word rows
        rows = [tuple(r[:-1]) for r in out if r[-1] == 1]
        dedup = [r for k, r in enumerate(rows) if k == 0 or r != rows[k - 1]]
        if W and len({tuple(r) for r in feats}) == W:
            assert dedup == [tuple(r) for r in feats]


def test_roundtrip_bit_exact(tmp_path):
    m = FeatureMatrix(np.array([[1.5, -2.0, 3.25], [0.0, 1e-30, -7.0]]), {"utt_id": "u1", "kind": "word"})
    write_matrix(m, tmp_path / "a.fmat")
    back = read_matrix(tmp_path / "a.fmat")
    assert back == m
    assert back.data.tobytes() == m.data.tobytes()


def test_header_layout(tmp_path):
    write_matrix(FeatureMatrix(np.zeros((2, 3)), {}), tmp_path / "a.fmat")
    raw = (tmp_path / "a.fmat").read_bytes()
    assert raw[:4] == b"FMAT" and raw[4] == 1
    assert int.from_bytes(raw[5:9], "little") == 2 and int.from_bytes(raw[9:13], "little") == 3
    assert len(raw) == 13 + 24 + 4


def test_truncated(tmp_path):
    p = tmp_path / "a.fmat"
    write_matrix(FeatureMatrix(np.ones((4, 4)), {"k": "v"}), p)
    p.write_bytes(p.read_bytes()[:30])
    with pytest.raises(CorruptFile):
        read_matrix(p)


def test_bad_magic(tmp_path):
    p = tmp_path / "a.fmat"
    p.write_bytes(b"XMAT" + bytes(20))
    with pytest.raises(CorruptFile):
        read_matrix(p)


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_non_finite(tmp_path, bad):
    with pytest.raises(NonFiniteValue):
        write_matrix(FeatureMatrix(np.array([[1.0, bad]])), tmp_path / "a.fmat")
    assert not list(tmp_path.iterdir())
