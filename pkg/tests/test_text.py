import numpy as np
import pytest

from subjectcraft import ToyTextEncoder
from subjectcraft.text import PAD_TOKEN, UNK_TOKEN, position_encoding

from conftest import checksum, embedding_row_checksums


def make_encoder(**kw):
    return ToyTextEncoder(embed_dim=16, max_length=8, extra_words=("teddybear",), seed=0, **kw)


def test_register_copies_init_row_and_grows_vocab_by_one():
    enc = make_encoder()
    before = len(enc.vocabulary)
    teddy_row = enc.embedding_table[enc.vocabulary["teddybear"]].copy()
    token_id = enc.register_token("V*", "teddybear")
    assert len(enc.vocabulary) == before + 1
    assert token_id == before
    assert np.array_equal(enc.embedding_table[token_id], teddy_row)
    assert token_id in enc.learned_token_ids


def test_register_twice_conflicts():
    enc = make_encoder()
    enc.register_token("V*", "teddybear")
    with pytest.raises(ValueError, match="already"):
        enc.register_token("V*", "teddybear")
    with pytest.raises(ValueError):
        enc.register_token("w*", "notaword")


def test_encode_prompt_rows_are_lookup_plus_position_encoding():
    enc = make_encoder()
    vid = enc.register_token("V*", "teddybear")
    out = enc.encode("V* teddybear")
    pe = position_encoding(enc.max_length, enc.embed_dim)
    assert out.shape == (enc.max_length, enc.embed_dim)
    assert np.allclose(out[0], enc.embedding_table[vid] + pe[0])
    assert np.allclose(out[1], enc.embedding_table[enc.vocabulary["teddybear"]] + pe[1])
    for pos in range(2, enc.max_length):  # PAD rows are zero before the encoding
        assert np.allclose(out[pos], pe[pos])


def test_encode_prompt_deterministic():
    enc = make_encoder()
    a = enc.encode("a red ball on the table")
    b = enc.encode("a red ball on the table")
    assert np.array_equal(a, b)


def test_unknown_word_maps_to_unk_row():
    enc = make_encoder()
    out = enc.encode("a zxqv ball")
    pe = position_encoding(enc.max_length, enc.embed_dim)
    unk_row = enc.embedding_table[enc.vocabulary[UNK_TOKEN]]
    assert np.allclose(out[1], unk_row + pe[1])
    assert enc.token_ids("a zxqv ball")[1] == enc.vocabulary[UNK_TOKEN]


def test_empty_prompt_rejected():
    enc = make_encoder()
    for prompt in ("", "   ", "\t\n"):
        with pytest.raises(ValueError):
            enc.encode(prompt)


def test_prompt_locality():
    enc = make_encoder()
    a = enc.encode("a red ball on the table")
    b = enc.encode("a blue ball on the table")
    diff = np.abs(a - b).sum(axis=1)
    assert diff[1] > 0
    assert np.all(diff[np.arange(enc.max_length) != 1] == 0)


def test_truncation_and_padding():
    enc = make_encoder()
    long_prompt = " ".join(["ball"] * 20)
    ids = enc.token_ids(long_prompt)
    assert len(ids) == enc.max_length
    assert all(i == enc.vocabulary["ball"] for i in ids)
    short_ids = enc.token_ids("ball")
    assert short_ids[0] == enc.vocabulary["ball"]
    assert all(i == enc.vocabulary[PAD_TOKEN] for i in short_ids[1:])


def test_empty_condition_is_all_pad_plus_position_encoding():
    enc = make_encoder()
    out = enc.empty_condition()
    pe = position_encoding(enc.max_length, enc.embed_dim)
    assert np.array_equal(out, pe)


def test_case_insensitive_lookup():
    enc = make_encoder()
    enc.register_token("V*", "teddybear")
    assert np.array_equal(enc.encode("V* Teddybear"), enc.encode("v* teddybear"))


def test_frozen_rows_stable_under_manual_subject_row_updates():
    enc = make_encoder()
    vid = enc.register_token("V*", "teddybear")
    before = embedding_row_checksums(enc)
    enc.embedding_table[vid] += 0.5  # what a training step does
    after = embedding_row_checksums(enc)
    changed = {i for i in before if before[i] != after[i]}
    assert changed == {vid}


def test_copy_is_independent():
    enc = make_encoder()
    vid = enc.register_token("V*", "teddybear")
    clone = enc.copy()
    clone.embedding_table[vid] += 1.0
    assert checksum(enc.embedding_table[vid]) != checksum(clone.embedding_table[vid])
