"""Sequence-to-sequence acoustic model with a multi-input encoder.

Four encoder variants share one location-sensitive attention decoder:

* ``PHONE``: phone embedding -> conv stack -> BLSTM.
* ``PHONE_WORD``: a phone stream and a word stream, each conv stack -> BLSTM,
  concatenated per time step.
* ``PHONE_PARSER``: parse features -> dense layers, concatenated with the
  phone embedding, then the shared conv stack -> BLSTM.
* ``PHONE_WORD_PARSER``: word and parse features each through their own dense
  layers, concatenated with the phone embedding, then shared conv -> BLSTM.

All tensors are batch-first.  Padded positions are masked everywhere so an
utterance produces the same outputs alone or inside a padded batch.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from typing import NamedTuple, Optional

import torch
from torch import Tensor, nn
from torch.nn import functional as F
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .errors import ConfigError, NumericalError, ShapeError
from .parsefeat import FEATURE_DIM

PARSER_INPUT_DIM = FEATURE_DIM + 1


class Variant(str, enum.Enum):
    PHONE = "PHONE"
    PHONE_WORD = "PHONE_WORD"
    PHONE_PARSER = "PHONE_PARSER"
    PHONE_WORD_PARSER = "PHONE_WORD_PARSER"

    @property
    def uses_word(self) -> bool:
        return self in (Variant.PHONE_WORD, Variant.PHONE_WORD_PARSER)

    @property
    def uses_parser(self) -> bool:
        return self in (Variant.PHONE_PARSER, Variant.PHONE_WORD_PARSER)


@dataclass
class ModelConfig:
    variant: Variant = Variant.PHONE
    n_phones: int = 64
    word_dim: int = 0
    phone_emb_dim: int = 256
    enc_conv_layers: int = 3
    enc_conv_kernel: int = 5
    enc_conv_channels: int = 256
    enc_blstm_units: int = 128
    word_stream_conv_channels: int = 128
    word_stream_blstm_units: int = 64
    word_dense_units: int = 128
    parser_dense_units: int = 32
    side_dense_layers: int = 2
    attention_dim: int = 128
    attention_location_filters: int = 32
    attention_location_kernel: int = 31
    prenet_units: int = 256
    prenet_layers: int = 2
    prenet_dropout: float = 0.5
    prenet_dropout_at_inference: bool = True
    decoder_units: int = 512
    postnet_layers: int = 5
    postnet_channels: int = 256
    postnet_kernel: int = 5
    conv_dropout: float = 0.5
    mel_dim: int = 80
    reduction_factor: int = 1
    max_decoder_frames: int = 2000
    width_multiplier: float = 1.0

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.reduction_factor != 1:
            raise ConfigError("only reduction factor 1 is supported")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and f.name not in (
                "word_dim", "prenet_dropout", "conv_dropout",
            ):
                if v <= 0:
                    raise ConfigError(f"{f.name} must be positive, got {v}")
        if self.variant.uses_word and self.word_dim <= 0:
            raise ConfigError(f"variant {self.variant.value} needs word_dim > 0")
        if self.enc_conv_kernel % 2 == 0 or self.postnet_kernel % 2 == 0:
            raise ConfigError("convolution kernels must have odd width")

    def scaled(self, n: int) -> int:
        return max(1, int(round(n * self.width_multiplier)))

    @property
    def word_input_dim(self) -> int:
        return self.word_dim + 1

    @property
    def encoder_dim(self) -> int:
        d = 2 * self.scaled(self.enc_blstm_units)
        if self.variant is Variant.PHONE_WORD:
            d += 2 * self.scaled(self.word_stream_blstm_units)
        return d

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class EncoderInput(NamedTuple):
    phone_ids: Tensor  # [B, T] long
    lengths: Tensor  # [B] long
    word_feats: Optional[Tensor] = None  # [B, T, word_dim + 1]
    parser_feats: Optional[Tensor] = None  # [B, T, 12]


class DecoderOutput(NamedTuple):
    mel_before: Tensor  # [B, F, mel]
    mel_after: Tensor  # [B, F, mel]
    stop_logits: Tensor  # [B, F]
    attention: Tensor  # [B, F, T]


class InferenceResult(NamedTuple):
    mel_after: Tensor  # [F, mel]
    attention: Tensor  # [F, T]
    stopped: bool


def lengths_to_mask(lengths: Tensor, max_len: Optional[int] = None) -> Tensor:
    max_len = int(lengths.max()) if max_len is None else max_len
    return torch.arange(max_len, device=lengths.device)[None, :] < lengths[:, None]


class MaskedConvStack(nn.Module):
    """Conv1d layers with zeroed padding between layers.

    Input and output are [B, T, C].
    """

    def __init__(self, in_dim, channels, n_layers, kernel, dropout, final_activation="relu"):
        super().__init__()
        dims = [in_dim] + list(channels if isinstance(channels, (list, tuple)) else [channels] * n_layers)
        self.convs = nn.ModuleList(
            nn.Conv1d(dims[i], dims[i + 1], kernel, padding=kernel // 2) for i in range(len(dims) - 1)
        )
        self.dropout = dropout
        self.final_activation = final_activation

    def forward(self, x: Tensor, mask: Tensor, activation="relu") -> Tensor:
        m = mask.unsqueeze(1).to(x.dtype)
        h = x.transpose(1, 2) * m
        for i, conv in enumerate(self.convs):
            h = conv(h)
            last = i == len(self.convs) - 1
            act = self.final_activation if last else activation
            if act == "relu":
                h = F.relu(h)
            elif act == "tanh":
                h = torch.tanh(h)
            h = F.dropout(h, self.dropout, self.training) * m
        return h.transpose(1, 2)


class BLSTM(nn.Module):
    def __init__(self, in_dim: int, units: int):
        super().__init__()
        self.lstm = nn.LSTM(in_dim, units, batch_first=True, bidirectional=True)

    def forward(self, x: Tensor, lengths: Tensor) -> Tensor:
        packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, _ = self.lstm(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=x.shape[1])
        return out


class DenseStack(nn.Module):
    def __init__(self, in_dim: int, units: int, n_layers: int):
        super().__init__()
        dims = [in_dim] + [units] * n_layers
        self.layers = nn.ModuleList(nn.Linear(dims[i], dims[i + 1]) for i in range(n_layers))

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = F.relu(layer(x))
        return x


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        s = cfg.scaled
        self.variant = cfg.variant
        self.embedding = nn.Embedding(cfg.n_phones, s(cfg.phone_emb_dim))
        nn.init.normal_(self.embedding.weight, 0.0, 1.0)

        conv_in = s(cfg.phone_emb_dim)
        if cfg.variant is Variant.PHONE_WORD:
            self.word_convs = MaskedConvStack(
                cfg.word_input_dim, s(cfg.word_stream_conv_channels), cfg.enc_conv_layers,
                cfg.enc_conv_kernel, cfg.conv_dropout,
            )
            self.word_blstm = BLSTM(s(cfg.word_stream_conv_channels), s(cfg.word_stream_blstm_units))
        if cfg.variant is Variant.PHONE_WORD_PARSER:
            self.word_dense = DenseStack(cfg.word_input_dim, s(cfg.word_dense_units), cfg.side_dense_layers)
            conv_in += s(cfg.word_dense_units)
        if cfg.variant.uses_parser:
            self.parser_dense = DenseStack(PARSER_INPUT_DIM, s(cfg.parser_dense_units), cfg.side_dense_layers)
            conv_in += s(cfg.parser_dense_units)
        self.convs = MaskedConvStack(
            conv_in, s(cfg.enc_conv_channels), cfg.enc_conv_layers, cfg.enc_conv_kernel, cfg.conv_dropout
        )
        self.blstm = BLSTM(s(cfg.enc_conv_channels), s(cfg.enc_blstm_units))

    def check_input(self, inp: EncoderInput) -> None:
        v = self.variant
        if (inp.word_feats is not None) != v.uses_word:
            raise ConfigError(f"variant {v.value} {'needs' if v.uses_word else 'does not take'} word features")
        if (inp.parser_feats is not None) != v.uses_parser:
            raise ConfigError(f"variant {v.value} {'needs' if v.uses_parser else 'does not take'} parser features")
        B, T = inp.phone_ids.shape
        if inp.word_feats is not None and inp.word_feats.shape != (B, T, self.cfg.word_input_dim):
            raise ShapeError(f"word features {tuple(inp.word_feats.shape)}, expected {(B, T, self.cfg.word_input_dim)}")
        if inp.parser_feats is not None and inp.parser_feats.shape != (B, T, PARSER_INPUT_DIM):
            raise ShapeError(f"parser features {tuple(inp.parser_feats.shape)}, expected {(B, T, PARSER_INPUT_DIM)}")

    def forward(self, inp: EncoderInput) -> Tensor:
        self.check_input(inp)
        mask = lengths_to_mask(inp.lengths, inp.phone_ids.shape[1])
        x = self.embedding(inp.phone_ids)
        parts = [x]
        if self.variant is Variant.PHONE_WORD_PARSER:
            parts.append(self.word_dense(inp.word_feats.to(x.dtype)))
        if self.variant.uses_parser:
            parts.append(self.parser_dense(inp.parser_feats.to(x.dtype)))
        h = self.blstm(self.convs(torch.cat(parts, dim=-1), mask), inp.lengths)
        if self.variant is Variant.PHONE_WORD:
            w = self.word_convs(inp.word_feats.to(x.dtype), mask)
            h = torch.cat([h, self.word_blstm(w, inp.lengths)], dim=-1)
        return h


class LocationSensitiveAttention(nn.Module):
    def __init__(self, query_dim, memory_dim, attention_dim, n_filters, kernel):
        super().__init__()
        self.query = nn.Linear(query_dim, attention_dim, bias=False)
        self.memory = nn.Linear(memory_dim, attention_dim, bias=False)
        self.location_conv = nn.Conv1d(2, n_filters, kernel, padding=kernel // 2, bias=False)
        self.location_dense = nn.Linear(n_filters, attention_dim, bias=False)
        self.v = nn.Linear(attention_dim, 1, bias=True)

    def forward(self, query, processed_memory, memory, prev_weights, cum_weights, mask):
        loc = self.location_conv(torch.stack([prev_weights, cum_weights], dim=1))
        loc = self.location_dense(loc.transpose(1, 2))
        energies = self.v(torch.tanh(self.query(query).unsqueeze(1) + loc + processed_memory)).squeeze(-1)
        energies = energies.masked_fill(~mask, float("-inf"))
        weights = F.softmax(energies, dim=-1)
        context = torch.bmm(weights.unsqueeze(1), memory).squeeze(1)
        return context, weights


class Prenet(nn.Module):
    def __init__(self, in_dim, units, n_layers, dropout, at_inference):
        super().__init__()
        dims = [in_dim] + [units] * n_layers
        self.layers = nn.ModuleList(nn.Linear(dims[i], dims[i + 1]) for i in range(n_layers))
        self.dropout = dropout
        self.at_inference = at_inference

    def forward(self, x: Tensor) -> Tensor:
        active = self.training or self.at_inference
        for layer in self.layers:
            x = F.dropout(F.relu(layer(x)), self.dropout, active)
        return x


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        s = cfg.scaled
        self.cfg = cfg
        enc_dim = cfg.encoder_dim
        units = s(cfg.decoder_units)
        self.prenet = Prenet(cfg.mel_dim, s(cfg.prenet_units), cfg.prenet_layers, cfg.prenet_dropout,
                             cfg.prenet_dropout_at_inference)
        self.attention_rnn = nn.LSTMCell(s(cfg.prenet_units) + enc_dim, units)
        self.attention = LocationSensitiveAttention(
            units, enc_dim, s(cfg.attention_dim), s(cfg.attention_location_filters), cfg.attention_location_kernel
        )
        self.decoder_rnn = nn.LSTMCell(units + enc_dim, units)
        self.mel_proj = nn.Linear(units + enc_dim, cfg.mel_dim)
        self.stop_proj = nn.Linear(units + enc_dim, 1)

    def init_state(self, memory: Tensor):
        B, T, D = memory.shape
        units = self.attention_rnn.hidden_size
        z = memory.new_zeros
        return {
            "att_h": z(B, units), "att_c": z(B, units),
            "dec_h": z(B, units), "dec_c": z(B, units),
            "weights": z(B, T), "cum": z(B, T), "context": z(B, D),
        }

    def step(self, prenet_out, state, memory, processed_memory, mask):
        att_h, att_c = self.attention_rnn(torch.cat([prenet_out, state["context"]], -1), (state["att_h"], state["att_c"]))
        context, weights = self.attention(att_h, processed_memory, memory, state["weights"], state["cum"], mask)
        dec_h, dec_c = self.decoder_rnn(torch.cat([att_h, context], -1), (state["dec_h"], state["dec_c"]))
        out = torch.cat([dec_h, context], -1)
        new = {
            "att_h": att_h, "att_c": att_c, "dec_h": dec_h, "dec_c": dec_c,
            "weights": weights, "cum": state["cum"] + weights, "context": context,
        }
        return self.mel_proj(out), self.stop_proj(out).squeeze(-1), weights, new


class Postnet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ch = cfg.scaled(cfg.postnet_channels)
        channels = [ch] * (cfg.postnet_layers - 1) + [cfg.mel_dim]
        self.convs = MaskedConvStack(cfg.mel_dim, channels, cfg.postnet_layers, cfg.postnet_kernel,
                                     cfg.conv_dropout, final_activation=None)

    def forward(self, mel: Tensor, mask: Tensor) -> Tensor:
        return self.convs(mel, mask, activation="tanh")


class Tacotron(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        self.postnet = Postnet(cfg)

    @property
    def variant(self) -> Variant:
        return self.cfg.variant

    def embed_phones(self, phone_ids: Tensor) -> Tensor:
        n = self.cfg.n_phones
        if phone_ids.numel() and (int(phone_ids.max()) >= n or int(phone_ids.min()) < 0):
            raise IndexError(f"phone id out of range for inventory of {n}")
        return self.encoder.embedding(phone_ids)

    def encode(self, inp: EncoderInput) -> Tensor:
        if inp.phone_ids.numel() and int(inp.phone_ids.max()) >= self.cfg.n_phones:
            raise IndexError(f"phone id out of range for inventory of {self.cfg.n_phones}")
        return self.encoder(inp)

    def decode_teacher_forced(
        self, memory: Tensor, enc_lengths: Tensor, mel_target: Tensor, mel_lengths: Optional[Tensor] = None
    ) -> DecoderOutput:
        B, n_frames, _ = mel_target.shape
        if n_frames < 1:
            raise ShapeError("need at least one target frame")
        if mel_lengths is None:
            mel_lengths = torch.full((B,), n_frames, dtype=torch.long)
        enc_mask = lengths_to_mask(enc_lengths, memory.shape[1])
        prev = torch.cat([mel_target.new_zeros(B, 1, mel_target.shape[2]), mel_target[:, :-1]], dim=1)
        prenet_out = self.decoder.prenet(prev)
        processed = self.decoder.attention.memory(memory)
        state = self.decoder.init_state(memory)
        mels, stops, weights = [], [], []
        for f in range(n_frames):
            mel, stop, w, state = self.decoder.step(prenet_out[:, f], state, memory, processed, enc_mask)
            mels.append(mel)
            stops.append(stop)
            weights.append(w)
        mel_before = torch.stack(mels, 1)
        frame_mask = lengths_to_mask(mel_lengths, n_frames)
        mel_after = mel_before + self.postnet(mel_before, frame_mask)
        out = DecoderOutput(mel_before, mel_after, torch.stack(stops, 1), torch.stack(weights, 1))
        if not (torch.isfinite(out.mel_after).all() and torch.isfinite(out.stop_logits).all()):
            raise NumericalError("non-finite activations in decoder")
        return out

    def forward(self, inp: EncoderInput, mel_target: Tensor, mel_lengths: Optional[Tensor] = None) -> DecoderOutput:
        memory = self.encode(inp)
        return self.decode_teacher_forced(memory, inp.lengths, mel_target, mel_lengths)

    @torch.no_grad()
    def infer(self, inp: EncoderInput, max_frames: Optional[int] = None) -> InferenceResult:
        """Free-running decoding of a single utterance (batch of one)."""
        if inp.phone_ids.shape[0] != 1:
            raise ShapeError("infer decodes one utterance at a time")
        max_frames = self.cfg.max_decoder_frames if max_frames is None else max_frames
        memory = self.encode(inp)
        return self.infer_from_memory(memory, inp.lengths, max_frames)

    @torch.no_grad()
    def infer_from_memory(self, memory: Tensor, enc_lengths: Tensor, max_frames: int) -> InferenceResult:
        enc_mask = lengths_to_mask(enc_lengths, memory.shape[1])
        processed = self.decoder.attention.memory(memory)
        state = self.decoder.init_state(memory)
        frame = memory.new_zeros(1, self.cfg.mel_dim)
        mels, weights = [], []
        stopped = False
        for _ in range(max_frames):
            mel, stop, w, state = self.decoder.step(self.decoder.prenet(frame), state, memory, processed, enc_mask)
            mels.append(mel)
            weights.append(w)
            frame = mel
            if torch.sigmoid(stop).item() > 0.5:
                stopped = True
                break
        mel_before = torch.stack(mels, 1)
        mask = torch.ones(1, mel_before.shape[1], dtype=torch.bool)
        mel_after = mel_before + self.postnet(mel_before, mask)
        return InferenceResult(mel_after[0], torch.stack(weights, 1)[0], stopped)


def tts_loss(
    mel_before: Tensor,
    mel_after: Tensor,
    stop_logits: Tensor,
    mel_target: Tensor,
    stop_target: Tensor,
    mel_lengths: Optional[Tensor] = None,
    stop_pos_weight: float = 6.0,
) -> Tensor:
    """Masked MSE (before and after postnet) plus weighted stop-token BCE."""
    if not (mel_before.shape == mel_after.shape == mel_target.shape):
        raise ShapeError(f"mel shapes differ: {mel_before.shape}, {mel_after.shape}, {mel_target.shape}")
    if stop_logits.shape != stop_target.shape or stop_logits.shape != mel_target.shape[:2]:
        raise ShapeError(f"stop shapes {stop_logits.shape}, {stop_target.shape} vs mel {mel_target.shape}")
    B, n_frames, n_mel = mel_target.shape
    if mel_lengths is None:
        mask = torch.ones(B, n_frames, dtype=torch.bool, device=mel_target.device)
    else:
        mask = lengths_to_mask(mel_lengths, n_frames)
    m = mask.to(mel_target.dtype)
    n_valid = m.sum()
    # where() keeps junk in padded frames (even NaN) out of the sums
    def mse(pred):
        diff = torch.where(mask.unsqueeze(-1), pred - mel_target, torch.zeros_like(pred))
        return (diff**2).sum() / (n_valid * n_mel)

    pos_weight = torch.tensor(stop_pos_weight, dtype=stop_logits.dtype, device=stop_logits.device)
    safe_logits = torch.where(mask, stop_logits, torch.zeros_like(stop_logits))
    safe_target = torch.where(mask, stop_target.to(stop_logits.dtype), torch.zeros_like(stop_logits))
    bce = F.binary_cross_entropy_with_logits(safe_logits, safe_target, pos_weight=pos_weight, reduction="none")
    return mse(mel_before) + mse(mel_after) + (bce * m).sum() / n_valid


def stop_targets(mel_lengths: Tensor, n_frames: int) -> Tensor:
    t = torch.zeros(len(mel_lengths), n_frames)
    rows = torch.nonzero(mel_lengths > 0).flatten()
    t[rows, mel_lengths[rows] - 1] = 1.0
    return t
