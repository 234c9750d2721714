import pytest
from hypothesis import given
from hypothesis import strategies as st

from emotts.errors import EncodingError, InvariantError, UnknownWordError
from emotts.frontend import FrontEnd, PhonemeInventory, PhonemeSequence, decode, encode

INV0 = ["b", "a", "k"]
INV1 = ["ma_T1", "ma_T2", "o"]


@pytest.fixture
def fe():
    return FrontEnd({0: INV0, 1: INV1}, {0: {"ba": ("b", "a"), "k": ("k",)}, 1: {"mo": ("ma_T1", "o")}})


def test_lexicon_concatenation(fe):
    assert fe.grapheme_to_phoneme("ba ba", 0).symbols == ("b", "a", "b", "a")


def test_longest_prefix_segmentation(fe):
    assert fe.grapheme_to_phoneme("bak", 0).symbols == ("b", "a", "k")


def test_empty_text(fe):
    assert fe.grapheme_to_phoneme("", 0).symbols == ()


def test_unknown_word_names_token(fe):
    with pytest.raises(UnknownWordError, match="zz"):
        fe.grapheme_to_phoneme("ba zz", 0)


def test_encode_ids():
    inv = PhonemeInventory(0, ("s0", "s1"))
    assert encode(["s0", "s1"], inv) == [1, 2]


def test_language_ranges_are_disjoint(fe):
    r0, r1 = fe.inventory(0).id_range, fe.inventory(1).id_range
    assert set(r0).isdisjoint(r1)
    assert 0 not in r0 and 0 not in r1
    assert fe.n_symbols == 6


def test_cross_language_symbol_rejected(fe):
    with pytest.raises(EncodingError):
        encode(["ma_T1"], fe.inventory(0))
    with pytest.raises(EncodingError):
        decode([1], fe.inventory(1))


def test_overlapping_inventories_rejected():
    with pytest.raises(InvariantError):
        FrontEnd({0: ["a"], 1: ["a"]})


@given(st.lists(st.sampled_from(INV1), max_size=20))
def test_encode_decode_roundtrip(symbols):
    fe = FrontEnd({0: INV0, 1: INV1})
    seq = PhonemeSequence(tuple(symbols), 1)
    assert decode(fe.encode(seq), fe.inventory(1)) == seq


def test_save_load_roundtrip(fe, tmp_path):
    fe.save(tmp_path)
    assert (tmp_path / "inventory_1.txt").read_text().splitlines() == INV1
    back = FrontEnd.load(tmp_path)
    assert back.to_dict() == fe.to_dict()
