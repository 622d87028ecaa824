"""Command line entry point: ``mftts featurize|train|synth|eval|inspect-fmat``.

Layout::

    <data>/  lexicon.txt transcripts.tsv [trees.tsv] [embeddings.txt] [<utt>.emb | emb/<utt>.emb] wavs/<utt>.wav
    <work>/  featurize.json fmat/ checkpoints/<VARIANT>/ reports/

Configuration keys not consumed by a subcommand's own flags are passed as
``--key value`` overrides (see :mod:`mftts.config`).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from . import __version__
from .audiofeat import read_wav, write_wav
from .config import Settings, load_settings, parse_overrides
from .data import featurize_text, load_utterance, mel_for_clip, save_utterance, utterance_paths
from .embedstore import EmbeddingTable, load_table
from .errors import ConfigError, MfttsError, MissingInput
from .evalharness import ordering_comparison, screen_corpus, summary_line
from .featalign import read_matrix
from .model import Variant
from .textfront import EOS, Lexicon, read_manifest
from .trainer import latest_checkpoint, load_checkpoint, train
from .vocoder import vocode

logger = logging.getLogger("mftts")

# bump when feature extraction changes so stale .fmat files get rebuilt
FEATURE_VERSION = "1"
STATE_FILE = "featurize.json"


# layout helpers


def _data_file(data: Path, name: str, required: bool = True, why: str = "") -> Optional[Path]:
    path = data / name
    if not path.is_file():
        if required:
            raise MissingInput(f"{path} not found{why}")
        return None
    return path


def _emb_file(data: Path, utt_id: str) -> Optional[Path]:
    for cand in (data / f"{utt_id}.emb", data / "emb" / f"{utt_id}.emb"):
        if cand.is_file():
            return cand
    return None


def _sha(*parts) -> str:
    h = hashlib.sha256(FEATURE_VERSION.encode())
    for p in parts:
        h.update(b"\0")
        h.update(p if isinstance(p, bytes) else str(p).encode("utf-8"))
    return h.hexdigest()


def _file_sha(path: Optional[Path]) -> str:
    return "" if path is None else hashlib.sha256(path.read_bytes()).hexdigest()


def _write_if_changed(path: Path, text: str) -> bool:
    if path.is_file() and path.read_text(encoding="utf-8") == text:
        return False
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    return True


def _read_state(work: Path) -> dict:
    path = work / STATE_FILE
    if not path.is_file():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))


def _word_source(data: Path, utt_ids: Sequence[str]) -> Tuple[Optional[Path], Dict[str, Path]]:
    """Static table (if any) plus per-utterance contextual files."""
    table = _data_file(data, "embeddings.txt", required=False)
    ctx = {u: p for u in utt_ids if (p := _emb_file(data, u)) is not None}
    missing = [u for u in utt_ids if u not in ctx]
    if missing and table is None:
        raise MissingInput(
            f"{data / 'embeddings.txt'} not found and no .emb file for {missing[0]}; word variants need embeddings"
        )
    return table, ctx


# featurize


def _featurize_one(job: dict) -> Tuple[str, Dict[str, str], int, Optional[int]]:
    """Worker: rebuild the stale feature files of one utterance."""
    utt_id = job["utt_id"]
    stale = job["stale"]
    lex = Lexicon.load(job["lexicon"])
    table = load_table(job["table"]) if job.get("table") and "word" in stale else None
    utt = featurize_text(
        utt_id, job["text"], lex, job.get("tree"), table, job.get("emb"),
        need_word="word" in stale, need_parser="parser" in stale,
    )
    if "mel" in stale:
        utt.mel = mel_for_clip(read_wav(job["wav"]))
    written = save_utterance(utt, job["fmat"], kinds=list(stale))
    word_dim = None if utt.word_feats is None else utt.word_feats.shape[1] - 1
    return utt_id, job["hashes"], len(written), word_dim


def cmd_featurize(args, settings: Settings) -> int:
    data, work = Path(args.data), Path(args.work)
    variant = Variant(args.variant)
    transcripts = read_manifest(_data_file(data, "transcripts.tsv"))
    lexicon_path = _data_file(data, "lexicon.txt")
    trees: Dict[str, str] = {}
    if variant.uses_parser:
        trees = read_manifest(_data_file(data, "trees.tsv", why=f"; variant {variant.value} needs parse trees"))
        missing = [u for u in transcripts if u not in trees]
        if missing:
            raise MissingInput(f"{data / 'trees.tsv'} has no tree for {missing[0]}")
    table_path, ctx = _word_source(data, list(transcripts)) if variant.uses_word else (None, {})

    fmat = work / "fmat"
    fmat.mkdir(parents=True, exist_ok=True)
    state = _read_state(work)
    done: Dict[str, Dict[str, str]] = state.get("utterances", {})
    lex_sha = _file_sha(lexicon_path)
    table_sha = _file_sha(table_path)

    jobs = []
    for utt_id, text in transcripts.items():
        wav = data / "wavs" / f"{utt_id}.wav"
        if not wav.is_file():
            raise MissingInput(f"{wav} not found")
        hashes = {"phones": _sha(text, lex_sha), "mel": _sha(_file_sha(wav))}
        if variant.uses_word:
            hashes["word"] = _sha(text, lex_sha, _file_sha(ctx.get(utt_id)) or table_sha)
        if variant.uses_parser:
            hashes["parser"] = _sha(text, lex_sha, trees[utt_id])
        paths = utterance_paths(fmat, utt_id)
        prev = done.get(utt_id, {})
        stale = [k for k, h in hashes.items() if prev.get(k) != h or not paths[k].is_file()]
        if not stale:
            continue
        jobs.append(dict(
            utt_id=utt_id, text=text, lexicon=str(lexicon_path), tree=trees.get(utt_id),
            table=str(table_path) if table_path else None, emb=str(ctx[utt_id]) if utt_id in ctx else None,
            wav=str(wav), fmat=str(fmat), stale=stale, hashes={**prev, **hashes},
        ))

    n_written = 0
    word_dims = set()
    if jobs:
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(args.jobs) as pool:
                results = list(pool.map(_featurize_one, jobs))
        else:
            results = [_featurize_one(j) for j in jobs]
        for utt_id, hashes, count, word_dim in results:
            done[utt_id] = hashes
            n_written += count
            if word_dim is not None:
                word_dims.add(word_dim)
    if len(word_dims) > 1:
        raise ConfigError(f"inconsistent word feature widths across utterances: {sorted(word_dims)}")

    new_state = {
        "data": str(data.resolve()),
        "inventory": list(Lexicon.load(lexicon_path).inventory),
        "word_dim": word_dims.pop() if word_dims else state.get("word_dim"),
        "utterances": {u: done[u] for u in sorted(done)},
    }
    _write_if_changed(work / STATE_FILE, json.dumps(new_state, indent=1, sort_keys=True) + "\n")
    print(f"featurize: {n_written} files written, {len(transcripts) - len(jobs)} utterances up to date")
    return 0


# train


def _training_set(work: Path, variant: Variant) -> Tuple[dict, list]:
    state = _read_state(work)
    if not state:
        raise MissingInput(f"{work / STATE_FILE} not found; run featurize first")
    need = {"phones", "mel"} | ({"word"} if variant.uses_word else set()) | ({"parser"} if variant.uses_parser else set())
    utts = []
    for utt_id, hashes in state["utterances"].items():
        missing = need - set(hashes)
        if missing:
            raise MissingInput(f"{utt_id} has no {sorted(missing)[0]} features; run featurize --variant {variant.value}")
        utts.append(load_utterance(work / "fmat", utt_id, variant.uses_word, variant.uses_parser))
    if not utts:
        raise MissingInput("no featurized utterances")
    return state, utts


def cmd_train(args, settings: Settings) -> int:
    work = Path(args.work)
    variant = Variant(args.variant)
    ckpt_dir = work / "checkpoints" / variant.value
    resume = latest_checkpoint(ckpt_dir) if args.resume else None
    if resume is not None:
        load_checkpoint(resume, variant)  # variant check before any compute
    state, utts = _training_set(work, variant)
    inventory = state["inventory"]
    mcfg = settings.model(
        variant=variant, n_phones=len(inventory), word_dim=state["word_dim"] if variant.uses_word else 0
    )
    tcfg = settings.train()
    if args.seed is not None:
        tcfg.seed = args.seed
    if args.steps is not None:
        tcfg.max_steps = args.steps
    torch.manual_seed(tcfg.seed)
    from .model import Tacotron

    model = Tacotron(mcfg)
    extra = {"inventory": inventory, "data": state["data"]}
    eos_id = inventory.index(EOS)
    result = train(model, utts, tcfg, ckpt_dir, eos_id=eos_id, resume_from=resume, extra=extra)
    final = result.losses[-1] if result.losses else float("nan")
    print(f"train: {variant.value} step {result.step}, loss {final:.4f}, checkpoint {result.checkpoints[-1]}")
    return 0


# synth / eval helpers


def _resolve_checkpoint(args) -> Path:
    if args.checkpoint:
        return Path(args.checkpoint)
    if not (args.work and args.variant):
        raise ConfigError("give --checkpoint, or --work together with --variant")
    path = latest_checkpoint(Path(args.work) / "checkpoints" / Variant(args.variant).value)
    if path is None:
        raise ConfigError(f"no checkpoint for {args.variant} under {args.work}")
    return path


def _lexicon_for(ckpt: dict, data: Optional[Path]) -> Lexicon:
    data = data or Path(ckpt["extra"].get("data", "."))
    lex = Lexicon.load(_data_file(data, "lexicon.txt"))
    inventory = ckpt["extra"].get("inventory")
    if inventory is not None and list(lex.inventory) != list(inventory):
        raise ConfigError(f"{data / 'lexicon.txt'} has a different phone inventory than the checkpoint")
    return lex


def _static_table(data: Path, required: bool) -> Optional[EmbeddingTable]:
    path = _data_file(data, "embeddings.txt", required=required, why="; word variants need embeddings")
    return load_table(path) if path else None


def cmd_synth(args, settings: Settings) -> int:
    path = _resolve_checkpoint(args)
    model, ckpt = load_checkpoint(path, args.variant)
    variant = model.cfg.variant
    # the architecture comes from the checkpoint; only the decoding limit may be overridden
    if "max_decoder_frames" in settings.values["model"]:
        model.cfg.max_decoder_frames = settings.values["model"]["max_decoder_frames"]
    if args.tree and not variant.uses_parser:
        logger.warning("--tree ignored: variant %s does not use parse features", variant.value)
    if args.emb and not variant.uses_word:
        logger.warning("--emb ignored: variant %s does not use word embeddings", variant.value)
    tree = None
    if variant.uses_parser:
        if not args.tree:
            raise MissingInput(f"variant {variant.value} needs --tree FILE with a bracketed parse")
        tree = Path(args.tree).read_text(encoding="utf-8").strip()
    data = Path(args.data) if args.data else Path(ckpt["extra"].get("data", "."))
    lex = _lexicon_for(ckpt, data)
    table = None
    if variant.uses_word and not args.emb:
        table = _static_table(data, required=True)
    utt = featurize_text(
        "synth", args.text, lex, tree, table, args.emb if variant.uses_word else None,
        need_word=variant.uses_word, need_parser=variant.uses_parser, oov=args.oov,
    )
    if variant.uses_word and utt.word_feats.shape[1] - 1 != model.cfg.word_dim:
        raise ConfigError(f"embedding width {utt.word_feats.shape[1] - 1} differs from the model's {model.cfg.word_dim}")
    from .trainer import collate

    model.eval()
    torch.manual_seed(args.seed)
    with torch.no_grad():
        res = model.infer(collate([utt], lex.phone_to_id[EOS], variant, model.cfg.mel_dim).encoder_input())
    if not res.stopped:
        logger.warning("decoder did not emit a stop token within %d frames", model.cfg.max_decoder_frames)
    audio = vocode(res.mel_after.numpy(), settings.griffin_lim(), seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_wav(out, audio)
    print(f"synth: {len(res.mel_after)} frames -> {out}")
    return 0


def cmd_eval(args, settings: Settings) -> int:
    work = Path(args.work)
    checkpoints: Dict[str, Path] = {}
    for spec in args.checkpoint or []:
        if "=" not in spec:
            raise ConfigError(f"--checkpoint expects VARIANT=PATH, got {spec!r}")
        name, p = spec.split("=", 1)
        checkpoints[Variant(name).value] = Path(p)
    for name in args.variants or []:
        v = Variant(name).value
        p = latest_checkpoint(work / "checkpoints" / v)
        checkpoints[v] = p if p is not None else work / "checkpoints" / v / "missing"
    if not checkpoints:
        raise ConfigError("nothing to evaluate: give --variants or --checkpoint")
    for v, p in checkpoints.items():
        if not p.is_file():
            raise ConfigError(f"no checkpoint for {v}: {p}")
        load_checkpoint(p, v)

    state = _read_state(work)
    data = Path(args.data) if args.data else Path(state.get("data", "."))
    manifest = read_manifest(Path(args.manifest) if args.manifest else _data_file(data, "transcripts.tsv"))
    lex = Lexicon.load(_data_file(data, "lexicon.txt"))
    variants = [Variant(v) for v in checkpoints]
    trees = (
        read_manifest(_data_file(data, "trees.tsv", why="; parser variants need parse trees"))
        if any(v.uses_parser for v in variants) else {}
    )
    table, ctx = _word_source(data, list(manifest)) if any(v.uses_word for v in variants) else (None, {})
    table = load_table(table) if table else None

    def utterances_for(variant: Variant):
        for utt_id, text in manifest.items():
            if variant.uses_parser and utt_id not in trees:
                raise MissingInput(f"{data / 'trees.tsv'} has no tree for {utt_id}")
            yield featurize_text(
                utt_id, text, lex, trees.get(utt_id), table, ctx.get(utt_id),
                need_word=variant.uses_word, need_parser=variant.uses_parser, oov=args.oov,
            )

    reports_dir = work / "reports"
    reports = screen_corpus(
        checkpoints, utterances_for, lex.phone_to_id[EOS], seed=args.seed,
        tsv_path=reports_dir / "report.tsv", json_path=reports_dir / "summary.json",
    )
    print(summary_line(reports))
    print(ordering_comparison(reports))
    print(f"eval: report written to {reports_dir / 'report.tsv'}")
    return 0


def cmd_inspect(args, settings: Settings) -> int:
    m = read_matrix(args.file)
    print(f"shape: {m.data.shape[0]} x {m.data.shape[1]}")
    for k, v in sorted(m.meta.items()):
        print(f"meta {k}: {v}")
    if m.data.size:
        print(f"min {m.data.min():.6g} max {m.data.max():.6g} mean {m.data.mean():.6g}")
        with np.printoptions(precision=4, suppress=True, linewidth=120):
            for row in m.data[: args.rows]:
                print(row)
    return 0


# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="TOML configuration file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for every stochastic stage")
    common.add_argument("--work", default=argparse.SUPPRESS, help="work directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="mftts", parents=[common], description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mftts {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    variants = [v.value for v in Variant]

    f = sub.add_parser("featurize", parents=[common], help="extract phone, word, parser and mel features")
    f.add_argument("--data", required=True)
    f.add_argument("--variant", choices=variants, required=True)
    f.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    f.set_defaults(func=cmd_featurize)

    t = sub.add_parser("train", parents=[common], help="train one variant on featurized data")
    t.add_argument("--variant", choices=variants, required=True)
    t.add_argument("--steps", type=int, help="stop after this many optimizer steps")
    t.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", parents=[common], help="synthesize one sentence to a WAV file")
    s.add_argument("--text", required=True)
    s.add_argument("--out", required=True, help="output WAV path")
    s.add_argument("--checkpoint")
    s.add_argument("--variant", choices=variants)
    s.add_argument("--tree", help="file holding a bracketed parse of the text")
    s.add_argument("--emb", help="contextual embedding file (.emb) for the text")
    s.add_argument("--data", help="data directory with lexicon.txt and embeddings.txt")
    s.add_argument("--oov", choices=["fail", "spell"], default="fail")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", parents=[common], help="screen checkpoints for attention failures")
    e.add_argument("--variants", nargs="+", choices=variants)
    e.add_argument("--checkpoint", action="append", metavar="VARIANT=PATH")
    e.add_argument("--data")
    e.add_argument("--manifest", help="utt_id<TAB>text file (default: <data>/transcripts.tsv)")
    e.add_argument("--oov", choices=["fail", "spell"], default="fail")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect-fmat", parents=[common], help="print a .fmat file summary")
    i.add_argument("file")
    i.add_argument("--rows", type=int, default=5)
    i.set_defaults(func=cmd_inspect)
    return p


_ACCEPTS_OVERRIDES = {"train", "synth", "eval"}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    for name, default in (("config", None), ("seed", None), ("work", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if rest and args.command not in _ACCEPTS_OVERRIDES:
            parser.error(f"unrecognized arguments: {' '.join(rest)}")
        if args.command in ("featurize", "train") and not args.work:
            raise ConfigError(f"{args.command} needs --work")
        if args.command == "eval" and not args.work:
            raise ConfigError("eval needs --work")
        settings = load_settings(args.config, parse_overrides(rest))
        if args.seed is None:
            args.seed = settings.train().seed
        return args.func(args, settings)
    except MfttsError as exc:
        print(f"ERROR[{exc.code}] {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"ERROR[missing-input] {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # bad enum values and similar user input
        print(f"ERROR[invalid-argument] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
