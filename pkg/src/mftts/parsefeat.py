"""Constituency-tree reading and per-word phrase features.

Each word gets an 11-dimensional vector: a one-hot over eight phrase types,
begin/end border flags, and its relative position inside the lowest
enclosing phrase.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import MalformedTree, TokenizationMismatch
from .textfront import Token

PHRASE_TYPES = ("NP", "VP", "PP", "ADJP", "ADVP", "S", "SBAR", "OTHER")
PHRASE_LABELS = frozenset(PHRASE_TYPES[:-1])
FEATURE_DIM = len(PHRASE_TYPES) + 3

_PUNCT_POS = frozenset({"-LRB-", "-RRB-", "``", "''", ",", ".", ":", "#", "$", "HYPH", "NFP"})
_SPECIAL_LABELS = frozenset({"-NONE-", "-LRB-", "-RRB-", "-LCB-", "-RCB-"})
_TOKEN_RE = re.compile(r"\(|\)|[^\s()]+")


@dataclass
class ParseTree:
    label: str
    children: List["ParseTree"] = field(default_factory=list)
    leaf_text: str = ""

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self) -> List["ParseTree"]:
        if self.is_leaf:
            return [self]
        out = []
        for child in self.children:
            out.extend(child.leaves())
        return out

    def words(self) -> List[str]:
        return [leaf.leaf_text for leaf in self.leaves()]

    def __str__(self) -> str:
        if self.is_leaf:
            return f"({self.label} {self.leaf_text})"
        return f"({self.label} {' '.join(str(c) for c in self.children)})"


def strip_function_tags(label: str) -> str:
    """``NP-SBJ-1`` -> ``NP``, ``PP=2`` -> ``PP``; bracket labels are kept."""
    if label in _SPECIAL_LABELS or not label:
        return label
    base = re.split(r"[-=]", label, maxsplit=1)[0]
    return base or label


def _tokens(text: str) -> Iterator[Tuple[str, int]]:
    for m in _TOKEN_RE.finditer(text):
        yield m.group(), m.start()


def read_ptb(text: str) -> ParseTree:
    """Parse one bracketed tree.

    Function tags are stripped from labels, ``-NONE-`` trace leaves are
    deleted (along with any constituent left empty), and a ``ROOT`` or
    unlabeled wrapper around a single child is removed.
    """
    toks = list(_tokens(text))
    if not toks:
        raise MalformedTree("empty input", 0)
    pos = 0

    def parse_node() -> Optional[ParseTree]:
        nonlocal pos
        tok, off = toks[pos]
        if tok != "(":
            raise MalformedTree(f"expected '(' but found {tok!r}", off)
        pos += 1
        if pos >= len(toks):
            raise MalformedTree("unbalanced parentheses", len(text))
        label = ""
        if toks[pos][0] not in "()":
            label = toks[pos][0]
            pos += 1
        children: List[ParseTree] = []
        words: List[str] = []
        saw_child = False
        while True:
            if pos >= len(toks):
                raise MalformedTree("unbalanced parentheses", len(text))
            tok = toks[pos][0]
            if tok == ")":
                pos += 1
                break
            if tok == "(":
                saw_child = True
                child = parse_node()
                if child is not None:
                    children.append(child)
            else:
                words.append(tok)
                pos += 1
        if words:
            if children or len(words) > 1 or not label:
                raise MalformedTree(f"node {label!r} mixes words and constituents", off)
            if label == "-NONE-":
                return None
            return ParseTree(label, [], words[0])
        if not children:
            if saw_child:
                return None
            raise MalformedTree("empty node", off)
        return ParseTree(strip_function_tags(label), children)

    tree = parse_node()
    if pos != len(toks):
        raise MalformedTree("trailing input after tree", toks[pos][1])
    if tree is None:
        raise MalformedTree("tree contains no words", 0)
    while tree.label in ("ROOT", "TOP", "") and len(tree.children) == 1 and not tree.children[0].is_leaf:
        tree = tree.children[0]
    return tree


@dataclass(frozen=True)
class WordParseFeatures:
    phrase_type: str
    begin: int
    end: int
    rel_pos: float

    def vector(self) -> np.ndarray:
        v = np.zeros(FEATURE_DIM, dtype=np.float32)
        v[PHRASE_TYPES.index(self.phrase_type)] = 1.0
        v[8] = self.begin
        v[9] = self.end
        v[10] = self.rel_pos
        return v


def extract_features(tree: ParseTree) -> List[WordParseFeatures]:
    # One top-down pass that carries the current enclosing phrase.
    leaves = tree.leaves()
    if not leaves:
        raise ValueError("tree has no leaves")
    feats: List[WordParseFeatures] = []
    start: dict = {}
    size: dict = {}

    def index(node: ParseTree, offset: int) -> int:
        start[id(node)] = offset
        n = 1 if node.is_leaf else 0
        for child in node.children:
            n += index(child, offset + n)
        size[id(node)] = n
        return n

    index(tree, 0)

    def walk(node: ParseTree, enclosing: ParseTree, ptype: str) -> None:
        if node.is_leaf:
            i = start[id(node)] - start[id(enclosing)]
            n = size[id(enclosing)]
            feats.append(WordParseFeatures(ptype, int(i == 0), int(i == n - 1), (i + 0.5) / n))
            return
        for child in node.children:
            if not child.is_leaf and child.label in PHRASE_LABELS:
                walk(child, child, child.label)
            else:
                walk(child, enclosing, ptype)

    if tree.label in PHRASE_LABELS and not tree.is_leaf:
        walk(tree, tree, tree.label)
    elif tree.is_leaf:
        feats.append(WordParseFeatures("OTHER", 1, 1, 0.5))
    else:
        walk(tree, tree, "OTHER")
    return feats


def feature_matrix(features: Sequence[WordParseFeatures]) -> np.ndarray:
    if not features:
        return np.zeros((0, FEATURE_DIM), dtype=np.float32)
    return np.stack([f.vector() for f in features])


def _is_punct_leaf(text: str) -> bool:
    return text in _PUNCT_POS or not any(ch.isalnum() for ch in text)


def align_to_tokens(
    features: Sequence[WordParseFeatures],
    tree_leaves: Sequence[str],
    tokens: Sequence[Token],
) -> List[WordParseFeatures]:
    """Keep the feature rows of word leaves, checked against the WORD tokens."""
    if len(features) != len(tree_leaves):
        raise ValueError(f"{len(features)} feature rows for {len(tree_leaves)} leaves")
    kept = [(leaf.lower(), f) for leaf, f in zip(tree_leaves, features) if not _is_punct_leaf(leaf)]
    words = [t.text for t in tokens if t.is_word]
    for pos in range(max(len(kept), len(words))):
        leaf = kept[pos][0] if pos < len(kept) else None
        word = words[pos] if pos < len(words) else None
        if leaf != word:
            raise TokenizationMismatch(leaf, word, pos)
    return [f for _, f in kept]
