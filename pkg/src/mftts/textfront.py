"""Text front end: tokenization and lexicon lookup.

The front end turns normalized text into a phone sequence and records, for
every phone, which word it came from.  That word index is what later lets
word-level features be repeated once per phone.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

from .errors import InvalidCharacter, LexiconError, OovWord

logger = logging.getLogger(__name__)

SIL = "SIL"
EOS = "EOS"
RESERVED = (SIL, EOS)

PUNCTUATION = frozenset('.,;:!?"()-')
PAUSE_PUNCTUATION = frozenset(".,;:!?")

_WORD_CHARS = re.compile(r"[a-z']+")
_STRESS = re.compile(r"\d+$")

# Letter-name pronunciations used by the SPELL fallback.
LETTER_PHONES: Dict[str, Tuple[str, ...]] = {
    "a": ("EY",), "b": ("B", "IY"), "c": ("S", "IY"), "d": ("D", "IY"),
    "e": ("IY",), "f": ("EH", "F"), "g": ("JH", "IY"), "h": ("EY", "CH"),
    "i": ("AY",), "j": ("JH", "EY"), "k": ("K", "EY"), "l": ("EH", "L"),
    "m": ("EH", "M"), "n": ("EH", "N"), "o": ("OW",), "p": ("P", "IY"),
    "q": ("K", "Y", "UW"), "r": ("AA", "R"), "s": ("EH", "S"), "t": ("T", "IY"),
    "u": ("Y", "UW"), "v": ("V", "IY"),
    "w": ("D", "AH", "B", "AH", "L", "Y", "UW"),
    "x": ("EH", "K", "S"), "y": ("W", "AY"), "z": ("Z", "IY"),
}


class TokenKind(enum.Enum):
    WORD = "WORD"
    PUNCT = "PUNCT"


class OovPolicy(enum.Enum):
    FAIL = "fail"
    SPELL = "spell"


@dataclass(frozen=True)
class Token:
    text: str
    kind: TokenKind

    @property
    def is_word(self) -> bool:
        return self.kind is TokenKind.WORD


@dataclass(frozen=True)
class Lexicon:
    """Word to phone mapping with a fixed phone inventory.

    The inventory always starts with the reserved symbols (SIL, EOS), followed
    by every phone used in the entries or in the letter-spelling table, sorted.
    """

    entries: Mapping[str, Tuple[str, ...]]
    inventory: Tuple[str, ...]

    @classmethod
    def from_entries(cls, entries: Mapping[str, Sequence[str]]) -> "Lexicon":
        clean: Dict[str, Tuple[str, ...]] = {}
        phones = set()
        for word, pron in entries.items():
            pron = tuple(_STRESS.sub("", p.upper()) for p in pron)
            if not pron:
                raise LexiconError(f"empty pronunciation for {word!r}")
            for p in pron:
                if p in RESERVED:
                    raise LexiconError(f"reserved symbol {p} used in entry {word!r}")
            clean[word.lower()] = pron
            phones.update(pron)
        for pron in LETTER_PHONES.values():
            phones.update(pron)
        return cls(clean, RESERVED + tuple(sorted(phones)))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Lexicon":
        """Read a CMU-dictionary style file.

        Alternate pronunciations (``WORD(2)``) are ignored; the first listed
        pronunciation wins.
        """
        entries: Dict[str, List[str]] = {}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith(";;;"):
                    continue
                parts = line.split()
                if len(parts) < 2:
                    raise LexiconError(f"{path}:{lineno}: entry without phones")
                word = parts[0].lower()
                if re.search(r"\(\d+\)$", word):
                    continue
                entries.setdefault(word, parts[1:])
        return cls.from_entries(entries)

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for word in sorted(self.entries):
                f.write(f"{word.upper()}  {' '.join(self.entries[word])}\n")

    @property
    def phone_to_id(self) -> Dict[str, int]:
        return {p: i for i, p in enumerate(self.inventory)}

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class PhoneSequence:
    phones: Tuple[int, ...]
    word_index: Tuple[int, ...]
    inventory: Tuple[str, ...] = field(default=(), compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.phones)

    @property
    def symbols(self) -> List[str]:
        return [self.inventory[i] for i in self.phones]

    @property
    def num_words(self) -> int:
        return len({w for w in self.word_index if w >= 0})


def tokenize(text: str) -> List[Token]:
    tokens: List[Token] = []
    lowered = text.lower()
    i = 0
    while i < len(lowered):
        ch = lowered[i]
        if ch.isspace():
            i += 1
        elif ch in PUNCTUATION:
            tokens.append(Token(ch, TokenKind.PUNCT))
            i += 1
        else:
            m = _WORD_CHARS.match(lowered, i)
            if m is None:
                raise InvalidCharacter(text[i], i)
            tokens.append(Token(m.group(), TokenKind.WORD))
            i = m.end()
    return tokens


def _pronounce(word: str, lexicon: Lexicon, policy: OovPolicy) -> Tuple[str, ...]:
    pron = lexicon.entries.get(word)
    if pron is not None:
        return pron
    if policy is OovPolicy.FAIL:
        raise OovWord(word)
    logger.warning("spelling out-of-vocabulary word %r", word)
    spelled = tuple(p for ch in word for p in LETTER_PHONES.get(ch, ()))
    if not spelled:
        raise OovWord(word)
    return spelled


def to_phones(
    tokens: Iterable[Token],
    lexicon: Lexicon,
    oov: Union[OovPolicy, str] = OovPolicy.FAIL,
) -> PhoneSequence:
    policy = OovPolicy(oov)
    ids = lexicon.phone_to_id
    phones: List[int] = []
    word_index: List[int] = []
    n_words = 0
    for tok in tokens:
        if tok.kind is TokenKind.WORD:
            for p in _pronounce(tok.text, lexicon, policy):
                phones.append(ids[p])
                word_index.append(n_words)
            n_words += 1
        elif tok.text in PAUSE_PUNCTUATION:
            phones.append(ids[SIL])
            word_index.append(-1)
    phones.append(ids[EOS])
    word_index.append(-1)
    return PhoneSequence(tuple(phones), tuple(word_index), lexicon.inventory)


def text_to_phones(text: str, lexicon: Lexicon, oov="fail") -> Tuple[List[Token], PhoneSequence]:
    tokens = tokenize(text)
    return tokens, to_phones(tokens, lexicon, oov)


def read_manifest(path: Union[str, Path]) -> Dict[str, str]:
    """Read ``<utt_id>\\t<payload>`` lines into an ordered dict."""
    out: Dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: expected '<utt_id>\\t<text>'")
            utt_id, payload = line.split("\t", 1)
            out[utt_id.strip()] = payload.strip()
    return out
