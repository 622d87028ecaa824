import pytest

from mftts import synthdata
from mftts.audiofeat import read_wav
from mftts.data import featurize_text, mel_for_clip
from mftts.embedstore import load_table
from mftts.model import Variant
from mftts.textfront import EOS, Lexicon, read_manifest


class Corpus:
    """Synthetic five-sentence corpus plus featurized utterances per variant."""

    def __init__(self, root):
        synthdata.make_corpus(root)
        self.root = root
        self.lexicon = Lexicon.load(root / "lexicon.txt")
        self.transcripts = read_manifest(root / "transcripts.tsv")
        self.trees = read_manifest(root / "trees.tsv")
        self.table = load_table(root / "embeddings.txt")
        self.eos_id = self.lexicon.phone_to_id[EOS]
        self._mels = {u: mel_for_clip(read_wav(root / "wavs" / f"{u}.wav")) for u in self.transcripts}

    def utterances(self, variant):
        variant = Variant(variant)
        out = []
        for u, text in self.transcripts.items():
            utt = featurize_text(u, text, self.lexicon, self.trees[u], self.table,
                                 need_word=variant.uses_word, need_parser=variant.uses_parser)
            utt.mel = self._mels[u]
            out.append(utt)
        return out


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    return Corpus(tmp_path_factory.mktemp("corpus"))


# acceptance summary: one line per criterion, printed even when output is captured
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, name, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {name}: {detail}")
