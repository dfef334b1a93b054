import numpy as np
import pytest

from chunkstore.core import BOS, EOS, SentencePair
from chunkstore.errors import BadMagic, EmptyCorpus, PrefixMissingBOS, TruncatedFile
from chunkstore.model import ToyModel, train_toy

PAIRS = [SentencePair([4, 5], [6, 7]), SentencePair([4, 8], [6, 9]), SentencePair([5], [7])]


@pytest.fixture
def tiny():
    return train_toy(PAIRS, seed=3, alpha=0.1, d_full=16, vocab_size=12)


def test_trigram_counts_drive_prediction(tiny):
    # after <s>: 6 seen twice, 7 once
    p = tiny.trigram_dense(BOS, BOS)
    assert p[6] > p[7] > p[4]
    assert p.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(tiny.trigram_dense(11, 11), np.full(12, 1 / 12))


def test_cooc_excludes_eos(tiny):
    assert tiny.cooc[4][0].tolist() == [6, 7, 9]
    assert EOS not in tiny.cooc[5][0].tolist()


def test_step_distribution_is_normalized(tiny):
    ctx = tiny.encode([4, 5])
    for prefix in ([BOS], [BOS, 6], [BOS, 6, 7], [BOS, 11, 10]):
        state, p = tiny.step_dense(ctx, prefix)
        assert state.shape == (16,)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(p > 0)


def test_forced_states_match_single_steps_bitwise(tiny):
    ctx = tiny.encode([4, 8, 5])
    target = [6, 9, 7, EOS]
    forced = tiny.forced_states(ctx, target)
    for t in range(len(target)):
        single = tiny.decoder_step(ctx, [BOS] + target[:t])[0]
        assert np.array_equal(forced[t], single)


def test_deterministic_for_seed():
    a = train_toy(PAIRS, seed=1, d_full=8, vocab_size=12)
    b = train_toy(PAIRS, seed=1, d_full=8, vocab_size=12)
    c = train_toy(PAIRS, seed=2, d_full=8, vocab_size=12)
    ctx = [4, 5]
    sa = a.step_dense(a.encode(ctx), [BOS, 6])[0]
    assert np.array_equal(sa, b.step_dense(b.encode(ctx), [BOS, 6])[0])
    assert not np.array_equal(sa, c.step_dense(c.encode(ctx), [BOS, 6])[0])


def test_prefix_must_start_with_bos(tiny):
    with pytest.raises(PrefixMissingBOS):
        tiny.decoder_step(tiny.encode([4]), [6])
    with pytest.raises(PrefixMissingBOS):
        tiny.decoder_step(tiny.encode([4]), [])


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        train_toy([])


def test_serialization_roundtrip(tiny, tmp_path):
    tiny.save(tmp_path / "m.bin")
    back = ToyModel.load(tmp_path / "m.bin")
    assert back.to_bytes() == tiny.to_bytes()
    ctx_a, ctx_b = tiny.encode([4, 5]), back.encode([4, 5])
    for prefix in ([BOS], [BOS, 6, 7]):
        sa, pa = tiny.step_dense(ctx_a, prefix)
        sb, pb = back.step_dense(ctx_b, prefix)
        assert np.array_equal(sa, sb) and np.array_equal(pa, pb)


def test_serialization_errors(tiny):
    data = tiny.to_bytes()
    with pytest.raises(BadMagic):
        ToyModel.from_bytes(b"XXXX" + data[4:])
    with pytest.raises(TruncatedFile):
        ToyModel.from_bytes(data[:-3])
