"""Mini-batch training with padding, masking, checkpointing and resume."""

from __future__ import annotations

import dataclasses
import logging
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .data import Utterance
from .errors import ConfigError, NumericalError
from .model import EncoderInput, ModelConfig, Tacotron, Variant, stop_targets, tts_loss

logger = logging.getLogger(__name__)

_CKPT_RE = re.compile(r"step_(\d+)\.pt$")


@dataclass
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 1e-3
    final_learning_rate: float = 1e-5
    decay_steps: int = 50000
    grad_clip: float = 1.0
    optimizer: str = "adam"
    seed: int = 0
    max_steps: int = 1000
    checkpoint_every: int = 500
    bucket: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.grad_clip <= 0:
            raise ConfigError("grad_clip must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def lr_at(self, step: int) -> float:
        frac = min(step, self.decay_steps) / self.decay_steps
        return self.learning_rate * (self.final_learning_rate / self.learning_rate) ** frac

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


class Batch(NamedTuple):
    utt_ids: Tuple[str, ...]
    phone_ids: torch.Tensor  # [B, T_max]
    phone_lengths: torch.Tensor  # [B]
    word_feats: Optional[torch.Tensor]  # [B, T_max, D+1]
    parser_feats: Optional[torch.Tensor]  # [B, T_max, 12]
    mel: torch.Tensor  # [B, F_max, 80]
    mel_lengths: torch.Tensor  # [B]
    stop_target: torch.Tensor  # [B, F_max]

    def encoder_input(self) -> EncoderInput:
        return EncoderInput(self.phone_ids, self.phone_lengths, self.word_feats, self.parser_feats)

    def to(self, dtype: torch.dtype) -> "Batch":
        conv = lambda t: None if t is None else t.to(dtype)
        return self._replace(word_feats=conv(self.word_feats), parser_feats=conv(self.parser_feats),
                             mel=conv(self.mel), stop_target=conv(self.stop_target))


def _pad(arrays: Sequence[np.ndarray], length: int, value: float = 0.0) -> np.ndarray:
    shape = (len(arrays), length) + arrays[0].shape[1:]
    out = np.full(shape, value, dtype=arrays[0].dtype)
    for i, a in enumerate(arrays):
        out[i, : len(a)] = a
    return out


def _mel(u: Utterance, mel_dim: int) -> np.ndarray:
    return np.zeros((0, mel_dim), np.float32) if u.mel is None else u.mel.astype(np.float32)


def collate(utts: Sequence[Utterance], eos_id: int, variant: Variant, mel_dim: int = 80) -> Batch:
    """Pad a list of utterances into one batch.  Utterances without a mel
    target (synthesis inputs) get an empty ``[B, 0, mel_dim]`` target."""
    t_max = max(u.num_phones for u in utts)
    f_max = max(u.num_frames for u in utts)
    word = parser = None
    if variant.uses_word:
        word = torch.from_numpy(_pad([u.word_feats for u in utts], t_max))
    if variant.uses_parser:
        parser = torch.from_numpy(_pad([u.parser_feats for u in utts], t_max))
    mel_lengths = torch.tensor([u.num_frames for u in utts], dtype=torch.long)
    return Batch(
        utt_ids=tuple(u.utt_id for u in utts),
        phone_ids=torch.from_numpy(_pad([u.phone_ids for u in utts], t_max, eos_id)),
        phone_lengths=torch.tensor([u.num_phones for u in utts], dtype=torch.long),
        word_feats=word,
        parser_feats=parser,
        mel=torch.from_numpy(_pad([_mel(u, mel_dim) for u in utts], f_max)),
        mel_lengths=mel_lengths,
        stop_target=stop_targets(mel_lengths, f_max),
    )


def batch_indices(lengths: Sequence[int], batch_size: int, rng: np.random.Generator, bucket: bool = True) -> List[List[int]]:
    """Group utterance indices into batches.

    With bucketing, utterances are sorted by length (ties broken randomly)
    and cut into consecutive groups; the group order is then shuffled.
    """
    n = len(lengths)
    perm = rng.permutation(n)
    if bucket:
        perm = perm[np.argsort(np.asarray(lengths)[perm], kind="stable")]
    groups = [perm[i : i + batch_size].tolist() for i in range(0, n, batch_size)]
    order = rng.permutation(len(groups))
    return [groups[i] for i in order]


def padding_fraction(groups: Sequence[Sequence[int]], lengths: Sequence[int]) -> float:
    padded = sum(len(g) * max(lengths[i] for i in g) for g in groups)
    return 1.0 - sum(lengths[i] for g in groups for i in g) / padded


def make_batches(
    dataset: Sequence[Utterance],
    cfg: TrainConfig,
    variant: Variant,
    eos_id: int,
    epoch: int = 0,
    max_frames: int = 2000,
) -> Iterator[Batch]:
    if not dataset:
        raise ValueError("dataset is empty")
    usable = []
    for u in dataset:
        if u.num_frames > max_frames:
            logger.warning("skipping %s: %d frames exceeds max_decoder_frames=%d", u.utt_id, u.num_frames, max_frames)
        else:
            usable.append(u)
    if not usable:
        raise ValueError("every utterance exceeds max_decoder_frames")
    rng = np.random.default_rng([cfg.seed, epoch])
    for group in batch_indices([u.num_phones for u in usable], cfg.batch_size, rng, cfg.bucket):
        yield collate([usable[i] for i in group], eos_id, variant)


def build_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(model.parameters(), lr=cfg.learning_rate)
    return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-6)


def compute_loss(model: Tacotron, batch: Batch) -> torch.Tensor:
    out = model(batch.encoder_input(), batch.mel, batch.mel_lengths)
    return tts_loss(out.mel_before, out.mel_after, out.stop_logits, batch.mel, batch.stop_target, batch.mel_lengths)


def _atomic_save(obj, path: Path) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        torch.save(obj, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, model: Tacotron, optimizer=None, step: int = 0, train_cfg: Optional[TrainConfig] = None,
                    extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_save(
        {
            "model_config": model.cfg.to_dict(),
            "train_config": dataclasses.asdict(train_cfg) if train_cfg else None,
            "model": model.state_dict(),
            "optimizer": optimizer.state_dict() if optimizer is not None else None,
            "step": step,
            "torch_rng": torch.get_rng_state(),
            "extra": extra or {},
        },
        path,
    )
    return path


def load_checkpoint(path, expected_variant: Optional[Union[Variant, str]] = None) -> Tuple[Tacotron, dict]:
    """Rebuild the model from the config stored in the checkpoint."""
    if not Path(path).exists():
        raise ConfigError(f"checkpoint not found: {path}")
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    cfg = ModelConfig.from_dict(ckpt["model_config"])
    if expected_variant is not None and cfg.variant is not Variant(expected_variant):
        raise ConfigError(f"checkpoint {path} is variant {cfg.variant.value}, expected {Variant(expected_variant).value}")
    model = Tacotron(cfg)
    model.load_state_dict(ckpt["model"])
    return model, ckpt


def latest_checkpoint(ckpt_dir: Union[str, Path]) -> Optional[Path]:
    ckpt_dir = Path(ckpt_dir)
    if not ckpt_dir.is_dir():
        return None
    found = [(int(m.group(1)), p) for p in ckpt_dir.iterdir() if (m := _CKPT_RE.search(p.name))]
    return max(found)[1] if found else None


@dataclass
class TrainResult:
    losses: List[float]
    checkpoints: List[Path]
    step: int


def train(
    model: Tacotron,
    data: Sequence[Utterance],
    cfg: TrainConfig,
    ckpt_dir: Optional[Union[str, Path]] = None,
    eos_id: int = 1,
    resume_from: Optional[Union[str, Path]] = None,
    extra: Optional[dict] = None,
    callback: Optional[Callable[[int, float], bool]] = None,
) -> TrainResult:
    """Teacher-forced training until ``cfg.max_steps``.

    ``callback(step, loss)`` runs after each update; returning True stops
    training early (a final checkpoint is still written).
    """
    variant = model.variant
    for u in data:
        if (u.word_feats is not None) != variant.uses_word or (u.parser_feats is not None) != variant.uses_parser:
            raise ConfigError(f"utterance {u.utt_id} was featurized for a different variant than {variant.value}")
    dtype = next(model.parameters()).dtype
    optimizer = build_optimizer(model, cfg)
    step = 0
    if resume_from is not None:
        ckpt = torch.load(resume_from, map_location="cpu", weights_only=False)
        if ModelConfig.from_dict(ckpt["model_config"]).variant is not variant:
            raise ConfigError("checkpoint variant differs from model variant")
        model.load_state_dict(ckpt["model"])
        if ckpt["optimizer"] is not None:
            optimizer.load_state_dict(ckpt["optimizer"])
        step = ckpt["step"]
        torch.set_rng_state(ckpt["torch_rng"])
    else:
        torch.manual_seed(cfg.seed)

    max_frames = model.cfg.max_decoder_frames
    n_batches = sum(1 for _ in batch_indices([0] * len([u for u in data if u.num_frames <= max_frames]),
                                              cfg.batch_size, np.random.default_rng(0)))
    ckpt_dir = Path(ckpt_dir) if ckpt_dir is not None else None
    losses: List[float] = []
    written: List[Path] = []
    last_good: Optional[Path] = None

    def checkpoint():
        if ckpt_dir is None:
            return None
        return save_checkpoint(ckpt_dir / f"step_{step:06d}.pt", model, optimizer, step, cfg, extra)

    model.train()
    stop_early = False
    while step < cfg.max_steps and not stop_early:
        epoch, skip = divmod(step, n_batches)
        for i, batch in enumerate(make_batches(data, cfg, variant, eos_id, epoch, max_frames)):
            if i < skip:
                continue
            batch = batch.to(dtype)
            try:
                loss = compute_loss(model, batch)
                if not torch.isfinite(loss):
                    raise NumericalError("non-finite loss")
            except NumericalError as exc:
                msg = f"{exc} at step {step + 1}"
                if last_good is not None:
                    msg += f"; last good checkpoint is {last_good}"
                raise NumericalError(msg) from exc
            for group in optimizer.param_groups:
                group["lr"] = cfg.lr_at(step)
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            step += 1
            losses.append(loss.item())
            if step % 50 == 0 or step == 1:
                logger.info("step %d loss %.5f lr %.2e", step, losses[-1], cfg.lr_at(step - 1))
            if ckpt_dir is not None and step % cfg.checkpoint_every == 0:
                last_good = checkpoint()
                written.append(last_good)
            if callback is not None and callback(step, losses[-1]):
                stop_early = True
            if step >= cfg.max_steps or stop_early:
                break
    if ckpt_dir is not None and (not written or written[-1].name != f"step_{step:06d}.pt"):
        written.append(checkpoint())
    model.eval()
    return TrainResult(losses, written, step)
