"""Synthetic "sine-word" corpus for smoke tests and demos.

Every phone is rendered as a short tone at its own frequency, so the audio is
a deterministic function of the phone sequence and an attention model can
learn the alignment quickly.  Sentences come from a tiny phrase-structure
grammar, which also yields their bracketed parse trees.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from .audiofeat import HOP, SAMPLE_RATE, write_wav
from .textfront import SIL, Lexicon, text_to_phones

# word -> (POS, phones)
VOCABULARY: Dict[str, Tuple[str, Tuple[str, ...]]] = {
    "the": ("DT", ("DH", "AH")),
    "a": ("DT", ("AH",)),
    "cat": ("NN", ("K", "AE", "T")),
    "dog": ("NN", ("D", "AO", "G")),
    "mat": ("NN", ("M", "AE", "T")),
    "bird": ("NN", ("B", "ER", "D")),
    "big": ("JJ", ("B", "IH", "G")),
    "red": ("JJ", ("R", "EH", "D")),
    "sat": ("VBD", ("S", "AE", "T")),
    "saw": ("VBD", ("S", "AO")),
    "ran": ("VBD", ("R", "AE", "N")),
    "on": ("IN", ("AA", "N")),
    "near": ("IN", ("N", "IH", "R")),
}

SENTENCES = [
    "The cat sat.",
    "A big dog ran.",
    "The bird sat on a mat.",
    "A red cat saw the dog.",
    "The dog ran near the big bird.",
]


def _phone_frequency(phones: List[str]) -> Dict[str, float]:
    # Spread phone tones log-uniformly over 150..3500 Hz.
    freqs = np.geomspace(150.0, 3500.0, len(phones))
    return {p: float(f) for p, f in zip(phones, freqs)}


def _phone_frames(phone: str) -> int:
    return 3 + sum(map(ord, phone)) % 3


def render(symbols: List[str], freqs: Dict[str, float], rng: np.random.Generator) -> np.ndarray:
    chunks = []
    for p in symbols:
        if p == "EOS":
            continue
        n = (_phone_frames(p) if p != SIL else 4) * HOP
        if p == SIL:
            chunks.append(0.001 * rng.standard_normal(n))
            continue
        t = np.arange(n) / SAMPLE_RATE
        f0 = freqs[p]
        tone = 0.5 * np.sin(2 * np.pi * f0 * t) + 0.2 * np.sin(2 * np.pi * 2 * f0 * t)
        ramp = np.minimum(1.0, np.minimum(np.arange(n), np.arange(n)[::-1]) / 64.0)
        chunks.append(tone * ramp)
    tail = 0.001 * rng.standard_normal(2 * HOP)
    return np.concatenate(chunks + [tail]) * 0.8


def _np(rng: random.Random) -> Tuple[str, List[str]]:
    det = rng.choice([w for w, (pos, _) in VOCABULARY.items() if pos == "DT"])
    noun = rng.choice([w for w, (pos, _) in VOCABULARY.items() if pos == "NN"])
    if rng.random() < 0.4:
        adj = rng.choice([w for w, (pos, _) in VOCABULARY.items() if pos == "JJ"])
        return f"(NP (DT {det}) (JJ {adj}) (NN {noun}))", [det, adj, noun]
    return f"(NP (DT {det}) (NN {noun}))", [det, noun]


def parse_tree_for(sentence: str) -> str:
    """Bracketed tree for one of the grammar's sentences (S -> NP VP .)."""
    words = [w.strip(".").lower() for w in sentence.split()]

    def node(w):
        return f"({VOCABULARY[w][0]} {w})"

    i = 2 if VOCABULARY[words[1]][0] == "NN" else 3
    subject = "(NP " + " ".join(node(w) for w in words[:i]) + ")"
    verb, rest = words[i], words[i + 1 :]
    if not rest:
        vp = f"(VP {node(verb)})"
    elif VOCABULARY[rest[0]][0] == "IN":
        obj = "(NP " + " ".join(node(w) for w in rest[1:]) + ")"
        vp = f"(VP {node(verb)} (PP {node(rest[0])} {obj}))"
    else:
        obj = "(NP " + " ".join(node(w) for w in rest) + ")"
        vp = f"(VP {node(verb)} {obj})"
    return f"(ROOT (S {subject} {vp} (. .)))"


def random_sentence(rng: random.Random) -> str:
    _, subj = _np(rng)
    verb = rng.choice([w for w, (pos, _) in VOCABULARY.items() if pos == "VBD"])
    words = subj + [verb]
    r = rng.random()
    if r < 0.33:
        prep = rng.choice([w for w, (pos, _) in VOCABULARY.items() if pos == "IN"])
        words += [prep] + _np(rng)[1]
    elif r < 0.66:
        words += _np(rng)[1]
    text = " ".join(words)
    return text[0].upper() + text[1:] + "."


@dataclass
class SynthCorpus:
    root: Path
    utt_ids: List[str]


def make_corpus(
    root: Union[str, Path],
    sentences: List[str] = SENTENCES,
    embedding_dim: int = 16,
    seed: int = 0,
    with_trees: bool = True,
    with_embeddings: bool = True,
) -> SynthCorpus:
    """Write lexicon.txt, transcripts.tsv, trees.tsv, embeddings.txt and wavs/."""
    root = Path(root)
    (root / "wavs").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lex = Lexicon.from_entries({w: p for w, (_, p) in VOCABULARY.items()})
    lex.save(root / "lexicon.txt")
    freqs = _phone_frequency([p for p in lex.inventory if p not in ("SIL", "EOS")])

    utt_ids = []
    with open(root / "transcripts.tsv", "w", encoding="utf-8") as tf:
        for i, text in enumerate(sentences):
            utt_id = f"utt{i:03d}"
            utt_ids.append(utt_id)
            tf.write(f"{utt_id}\t{text}\n")
            _, seq = text_to_phones(text, lex)
            write_wav(root / "wavs" / f"{utt_id}.wav", render(seq.symbols, freqs, rng))
    if with_trees:
        with open(root / "trees.tsv", "w", encoding="utf-8") as f:
            for utt_id, text in zip(utt_ids, sentences):
                f.write(f"{utt_id}\t{parse_tree_for(text)}\n")
    if with_embeddings:
        with open(root / "embeddings.txt", "w", encoding="utf-8") as f:
            for w in VOCABULARY:
                vec = rng.standard_normal(embedding_dim)
                f.write(w + " " + " ".join(f"{x:.6f}" for x in vec) + "\n")
    return SynthCorpus(root, utt_ids)
