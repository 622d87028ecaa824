import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mftts.errors import InvalidCharacter, OovWord
from mftts.textfront import (
    EOS, SIL, Lexicon, Token, TokenKind, read_manifest, to_phones, tokenize,
)

W, P = TokenKind.WORD, TokenKind.PUNCT


@pytest.fixture
def lex():
    return Lexicon.from_entries({"the": ["DH", "AH0"], "cat": ["K", "AE1", "T"], "sat": ["S", "AE1", "T"]})


def test_tokenize_sentence():
    assert tokenize("The cat sat.") == [Token("the", W), Token("cat", W), Token("sat", W), Token(".", P)]


def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_keeps_apostrophe():
    assert tokenize("don't know?") == [Token("don't", W), Token("know", W), Token("?", P)]


def test_tokenize_rejects_digits_with_position():
    with pytest.raises(InvalidCharacter) as exc:
        tokenize("the 3 cats")
    assert exc.value.position == 4


@given(st.text(alphabet="abcXYZ' .,;:!?\"()-\t", max_size=40))
def test_tokenize_recovers_input(text):
    toks = tokenize(text)
    assert "".join(t.text for t in toks) == "".join(text.split()).lower()


def test_lexicon_strips_stress_and_reserves(tmp_path):
    path = tmp_path / "lex.txt"
    path.write_text(";;; comment\nTHE  DH AH0\nTHE(2)  DH IY0\nCAT  K AE1 T\n", encoding="utf-8")
    lex = Lexicon.load(path)
    assert lex.entries == {"the": ("DH", "AH"), "cat": ("K", "AE", "T")}
    assert lex.inventory[:2] == (SIL, EOS)
    for pron in lex.entries.values():
        assert set(pron) <= set(lex.inventory)


def test_to_phones_example(lex):
    seq = to_phones(tokenize("the cat ."), lex)
    assert seq.symbols == ["DH", "AH", "K", "AE", "T", SIL, EOS]
    assert seq.word_index == (0, 0, 1, 1, 1, -1, -1)


def test_to_phones_empty(lex):
    seq = to_phones([], lex)
    assert seq.symbols == [EOS]
    assert seq.word_index == (-1,)


def test_to_phones_oov_fail(lex):
    with pytest.raises(OovWord) as exc:
        to_phones(tokenize("zzzq"), lex)
    assert exc.value.word == "zzzq"


def test_to_phones_oov_spell(lex):
    seq = to_phones(tokenize("the cab"), lex, oov="spell")
    assert seq.symbols[-1] == EOS
    assert [s for s, w in zip(seq.symbols, seq.word_index) if w == 1] == ["S", "IY", "EY", "B", "IY"]


def test_quotes_and_dashes_are_dropped(lex):
    seq = to_phones(tokenize('"the" - (cat), sat!'), lex)
    assert seq.symbols.count(SIL) == 2


def test_manifest(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("u1\tHello there.\n\nu2\tBye\n", encoding="utf-8")
    assert read_manifest(p) == {"u1": "Hello there.", "u2": "Bye"}


def random_lexicon(rng):
    phones = ["AA", "AE", "B", "D", "K", "S", "T", "IY", "N", "M"]
    words = {"".join(rng.choice("abcdefgh") for _ in range(rng.randint(1, 6))) for _ in range(rng.randint(1, 12))}
    return Lexicon.from_entries({w: [rng.choice(phones) for _ in range(rng.randint(1, 5))] for w in words})


def check_laws(text, lex):
    tokens = tokenize(text)
    seq = to_phones(tokens, lex)
    words = [t.text for t in tokens if t.is_word]
    n_pause = sum(1 for t in tokens if t.text in ".,;:!?")
    assert len(seq) == sum(len(lex.entries[w]) for w in words) + n_pause + 1
    for i, w in enumerate(words):
        assert [seq.inventory[p] for p, wi in zip(seq.phones, seq.word_index) if wi == i] == list(lex.entries[w])
    nonneg = [w for w in seq.word_index if w >= 0]
    assert nonneg == sorted(nonneg)
    assert seq.symbols[-1] == EOS and seq.word_index[-1] == -1


def test_length_law_and_alignment_random():
    rng = random.Random(7)
    for _ in range(300):
        lex = random_lexicon(rng)
        vocab = sorted(lex.entries)
        pieces = [rng.choice(vocab + list(".,;:!?\"()-")) for _ in range(rng.randint(0, 15))]
        check_laws(" ".join(pieces), lex)


def test_to_phones_is_deterministic(lex):
    toks = tokenize("the cat sat, the cat.")
    assert to_phones(toks, lex) == to_phones(toks, lex)
