"""Per-utterance featurization and on-disk dataset layout.

An utterance directory under ``<work>/fmat/`` holds one ``.fmat`` file per
feature kind::

    <utt_id>.phones.fmat   [T x 2]  phone id, word index
    <utt_id>.word.fmat     [T x (word_dim + 1)]
    <utt_id>.parser.fmat   [T x 12]
    <utt_id>.mel.fmat      [F x 80]
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from . import parsefeat
from .audiofeat import AudioClip, trim_silence, wav_to_mel
from .embedstore import EmbeddingTable, utterance_embeddings
from .featalign import FeatureMatrix, read_matrix, upsample, write_matrix
from .textfront import Lexicon, PhoneSequence, Token, text_to_phones

KINDS = ("phones", "word", "parser", "mel")


@dataclass
class Utterance:
    utt_id: str
    phone_ids: np.ndarray  # [T] int64
    word_index: np.ndarray  # [T] int64
    word_feats: Optional[np.ndarray] = None  # [T x (D+1)]
    parser_feats: Optional[np.ndarray] = None  # [T x 12]
    mel: Optional[np.ndarray] = None  # [F x 80]

    @property
    def num_phones(self) -> int:
        return len(self.phone_ids)

    @property
    def num_frames(self) -> int:
        return 0 if self.mel is None else len(self.mel)


def parser_stream(tree_text: str, tokens: Sequence[Token], seq: PhoneSequence) -> np.ndarray:
    tree = parsefeat.read_ptb(tree_text)
    feats = parsefeat.extract_features(tree)
    aligned = parsefeat.align_to_tokens(feats, tree.words(), tokens)
    return upsample(parsefeat.feature_matrix(aligned), seq)


def word_stream(
    tokens: Sequence[Token],
    seq: PhoneSequence,
    table: Optional[EmbeddingTable],
    contextual: Optional[Union[str, Path]] = None,
    utt_id: str = "",
) -> np.ndarray:
    return upsample(utterance_embeddings(tokens, table, contextual, utt_id), seq)


def featurize_text(
    utt_id: str,
    text: str,
    lexicon: Lexicon,
    tree: Optional[str] = None,
    table: Optional[EmbeddingTable] = None,
    contextual: Optional[Union[str, Path]] = None,
    need_word: bool = False,
    need_parser: bool = False,
    oov: str = "fail",
) -> Utterance:
    tokens, seq = text_to_phones(text, lexicon, oov)
    utt = Utterance(utt_id, np.asarray(seq.phones, dtype=np.int64), np.asarray(seq.word_index, dtype=np.int64))
    if need_word:
        utt.word_feats = word_stream(tokens, seq, table, contextual, utt_id)
    if need_parser:
        if tree is None:
            raise ValueError(f"no parse tree for {utt_id}")
        utt.parser_feats = parser_stream(tree, tokens, seq)
    return utt


def mel_for_clip(clip: AudioClip, trim: bool = True) -> np.ndarray:
    samples = trim_silence(clip.samples) if trim else clip.samples
    if len(samples) < len(clip.samples) and len(samples) >= 1024:
        clip = AudioClip(samples, clip.rate)
    return wav_to_mel(clip).frames.astype(np.float32)


def utterance_paths(fmat_dir: Union[str, Path], utt_id: str) -> Dict[str, Path]:
    fmat_dir = Path(fmat_dir)
    return {k: fmat_dir / f"{utt_id}.{k}.fmat" for k in KINDS}


def save_utterance(utt: Utterance, fmat_dir: Union[str, Path], kinds: Sequence[str] = KINDS) -> List[Path]:
    paths = utterance_paths(fmat_dir, utt.utt_id)
    written = []
    arrays = {
        "phones": np.stack([utt.phone_ids, utt.word_index], axis=1).astype(np.float32),
        "word": utt.word_feats,
        "parser": utt.parser_feats,
        "mel": utt.mel,
    }
    for kind in kinds:
        arr = arrays[kind]
        if arr is None:
            continue
        meta = {"utt_id": utt.utt_id, "kind": kind, "dims": f"{arr.shape[0]}x{arr.shape[1]}"}
        write_matrix(FeatureMatrix(arr, meta), paths[kind])
        written.append(paths[kind])
    return written


def load_utterance(fmat_dir: Union[str, Path], utt_id: str, need_word=False, need_parser=False,
                   need_mel=True) -> Utterance:
    paths = utterance_paths(fmat_dir, utt_id)
    ph = read_matrix(paths["phones"]).data
    utt = Utterance(utt_id, ph[:, 0].astype(np.int64), ph[:, 1].astype(np.int64))
    if need_word:
        utt.word_feats = read_matrix(paths["word"]).data
    if need_parser:
        utt.parser_feats = read_matrix(paths["parser"]).data
    if need_mel:
        utt.mel = read_matrix(paths["mel"]).data
    return utt
