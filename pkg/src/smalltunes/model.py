"""Skeleton-conditioned encoder-decoder transformer.

The encoder reads the skeleton tokens, the decoder reads the full melody.
Both inputs are a fused pitch/duration/segment embedding plus a sum of two
sinusoidal encodings (token index and phrase index). Self-attention in both
stacks uses learned relative-position logits; the decoder's cross-attention is
restricted by a block mask so a token only sees skeleton tokens from its own
phrase.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation, DataError
from .representation import DURATION_VOCAB, PITCH_VOCAB, TokenSequence


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 256
    n_layers_encoder: int = 6
    n_layers_decoder: int = 6
    n_heads: int = 8
    d_ff: int = 1024
    max_relative_distance: int = 256
    dropout: float = 0.1
    max_segments: int = 128
    pitch_vocab: int = len(PITCH_VOCAB)
    duration_vocab: int = len(DURATION_VOCAB)
    # "d_model" divides cross-attention logits by sqrt(d_model); "d_head" by sqrt(d_model / n_heads)
    cross_attention_scale: str = "d_model"
    use_phrase_mask: bool = True

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, int) and not isinstance(value, bool) and value < 1:
                raise ValueError(f"ModelConfig.{f.name} must be >= 1, got {value}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.cross_attention_scale not in ("d_model", "d_head"):
            raise ValueError(f"unknown cross_attention_scale {self.cross_attention_scale!r}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# positional encodings and masks


def sinusoid(positions: np.ndarray, d_model: int) -> np.ndarray:
    """Transformer sinusoid table evaluated at arbitrary integer positions."""
    pos = np.asarray(positions, dtype=np.float64)[..., None]
    i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d_model)
    out = np.zeros(pos.shape[:-1] + (d_model,), dtype=np.float64)
    out[..., 0::2] = np.sin(angle)
    out[..., 1::2] = np.cos(angle)[..., : d_model // 2]
    return out.astype(np.float32)


def positional_encoding(length: int, segments: Sequence[int] | np.ndarray, d_model: int) -> np.ndarray:
    """Index encoding plus phrase encoding evaluated at ``segment - 1``."""
    seg = np.asarray(segments)
    index = sinusoid(np.arange(length), d_model)
    phrase = sinusoid(np.maximum(seg - 1, 0), d_model)
    return index + phrase


def build_phrase_mask(full_segments: Sequence[int], skeleton_segments: Sequence[int]) -> np.ndarray:
    """``n x m`` matrix: 0 where the two tokens share a phrase id, -inf elsewhere."""
    full = np.asarray(full_segments)
    skel = np.asarray(skeleton_segments)
    missing = set(full.tolist()) - set(skel.tolist())
    if missing:
        raise ContractViolation(f"phrase ids {sorted(missing)} have no skeleton tokens; "
                                "their cross-attention rows would be fully masked")
    return np.where(full[:, None] == skel[None, :], 0.0, -np.inf).astype(np.float32)


def causal_mask(length: int) -> np.ndarray:
    return np.triu(np.ones((length, length), dtype=bool), k=1)


# ---------------------------------------------------------------------------
# batches


@dataclass
class TokenBatch:
    pitch: np.ndarray     # (B, L) int
    duration: np.ndarray  # (B, L) int
    segment: np.ndarray   # (B, L) int; 0 on padding
    lengths: np.ndarray   # (B,)

    @property
    def pad(self) -> np.ndarray:
        return np.arange(self.pitch.shape[1])[None, :] >= self.lengths[:, None]

    @classmethod
    def from_arrays(cls, rows: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]]) -> "TokenBatch":
        lengths = np.array([len(r[0]) for r in rows], dtype=np.int64)
        width = int(lengths.max())
        out = np.zeros((3, len(rows), width), dtype=np.int64)
        for b, row in enumerate(rows):
            for c in range(3):
                out[c, b, : len(row[c])] = row[c]
        return cls(out[0], out[1], out[2], lengths)

    @classmethod
    def from_sequences(cls, seqs: Sequence[TokenSequence]) -> "TokenBatch":
        return cls.from_arrays([s.arrays() for s in seqs])


def batch_phrase_mask(full: TokenBatch, skeleton: TokenBatch) -> np.ndarray:
    """Stack per-example phrase masks into ``(B, n, m)``.

    Padded decoder rows see everything (their outputs are never scored);
    padded skeleton columns are masked for every real row.
    """
    B, n = full.segment.shape
    m = skeleton.segment.shape[1]
    out = np.full((B, n, m), -np.inf, dtype=np.float32)
    for b in range(B):
        ln, lm = full.lengths[b], skeleton.lengths[b]
        out[b, :ln, :lm] = build_phrase_mask(full.segment[b, :ln], skeleton.segment[b, :lm])
        out[b, ln:, :] = 0.0
    return out


# ---------------------------------------------------------------------------
# parameters


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    d, f = cfg.d_model, cfg.d_ff
    params: dict[str, np.ndarray] = {}

    def linear(name: str, n_in: int, n_out: int, std: float | None = None) -> None:
        std = math.sqrt(1.0 / n_in) if std is None else std
        params[f"{name}.W"] = rng.normal(0.0, std, (n_in, n_out))
        params[f"{name}.b"] = np.zeros(n_out)

    def norm(name: str) -> None:
        params[f"{name}.g"] = np.ones(d)
        params[f"{name}.b"] = np.zeros(d)

    def attention(name: str, relative: bool) -> None:
        for proj in ("q", "k", "v", "o"):
            linear(f"{name}.{proj}", d, d)
        if relative:
            params[f"{name}.rel"] = rng.normal(0.0, math.sqrt(1.0 / cfg.d_head),
                                               (2 * cfg.max_relative_distance + 1, d))

    def feed_forward(name: str) -> None:
        linear(f"{name}.1", d, f)
        linear(f"{name}.2", f, d)

    params["emb.pitch"] = rng.normal(0.0, 1.0, (cfg.pitch_vocab, d))
    params["emb.duration"] = rng.normal(0.0, 1.0, (cfg.duration_vocab, d))
    params["emb.segment"] = rng.normal(0.0, 1.0, (cfg.max_segments + 1, d))
    linear("fusion", 3 * d, d)
    for layer in range(cfg.n_layers_encoder):
        p = f"enc.{layer}"
        attention(f"{p}.self", relative=True)
        norm(f"{p}.ln1")
        feed_forward(f"{p}.ff")
        norm(f"{p}.ln2")
    for layer in range(cfg.n_layers_decoder):
        p = f"dec.{layer}"
        attention(f"{p}.self", relative=True)
        norm(f"{p}.ln1")
        attention(f"{p}.cross", relative=False)
        norm(f"{p}.ln2")
        feed_forward(f"{p}.ff")
        norm(f"{p}.ln3")
    linear("head.pitch", d, cfg.pitch_vocab, std=0.02)
    linear("head.duration", d, cfg.duration_vocab, std=0.02)
    return {k: Tensor.param(v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# layers


def linear(x: Tensor, params: dict[str, Tensor], name: str) -> Tensor:
    return ad.matmul(x, params[f"{name}.W"]) + params[f"{name}.b"]


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    B, L, d = x.shape
    return ad.permute(ad.reshape(x, (B, L, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    B, H, L, dh = x.shape
    return ad.reshape(ad.permute(x, (0, 2, 1, 3)), (B, L, H * dh))


def music_fusion(params: dict[str, Tensor], pitch: np.ndarray, duration: np.ndarray,
                 segment: np.ndarray) -> Tensor:
    """Project the concatenated pitch/duration/segment embeddings to ``d_model``."""
    if not (np.shape(pitch) == np.shape(duration) == np.shape(segment)):
        raise DataError("pitch, duration and segment id arrays differ in shape")
    parts = [ad.embedding(params["emb.pitch"], pitch),
             ad.embedding(params["emb.duration"], duration),
             ad.embedding(params["emb.segment"], segment)]
    return linear(ad.concat(parts, axis=-1), params, "fusion")


def relative_logits(q: Tensor, table: Tensor, max_distance: int) -> Tensor:
    """Per-position relative logits ``q_i . E[clip(j - i)]`` for every key ``j``.

    ``q`` is ``(B, H, L, dh)``; ``table`` stores one row per clipped offset with
    the heads laid out along the feature axis.
    """
    B, H, L, dh = q.shape
    offsets = np.clip(np.arange(-(L - 1), L), -max_distance, max_distance) + max_distance
    e = ad.embedding(table, offsets)                                      # (2L-1, H*dh)
    e = ad.permute(ad.reshape(e, (2 * L - 1, H, dh)), (1, 2, 0))          # (H, dh, 2L-1)
    return ad.rel_shift(ad.matmul(q, e))                                  # (B, H, L, L)


def relative_self_attention(x: Tensor, params: dict[str, Tensor], name: str, cfg: ModelConfig,
                            mask: np.ndarray | None, rng: np.random.Generator | None = None) -> Tensor:
    """Multi-head self-attention with learned, clipped relative-position logits.

    ``mask`` is boolean (True = blocked) and broadcasts to ``(B, H, L, L)``.
    """
    H = cfg.n_heads
    q = _split_heads(linear(x, params, f"{name}.q"), H)
    k = _split_heads(linear(x, params, f"{name}.k"), H)
    v = _split_heads(linear(x, params, f"{name}.v"), H)
    logits = ad.matmul(q, ad.transpose(k)) + relative_logits(q, params[f"{name}.rel"],
                                                              cfg.max_relative_distance)
    logits = ad.scale(logits, 1.0 / math.sqrt(cfg.d_head))
    if mask is not None:
        logits = ad.masked_add(logits, mask)
    weights = ad.dropout(ad.softmax(logits), cfg.dropout, rng)
    return linear(_merge_heads(ad.matmul(weights, v)), params, f"{name}.o")


def phrase_cross_attention(h: Tensor, g: Tensor, params: dict[str, Tensor], name: str,
                           cfg: ModelConfig, mask: np.ndarray | None,
                           rng: np.random.Generator | None = None,
                           return_weights: bool = False):
    """Decoder-to-skeleton attention under a ``{0, -inf}`` phrase mask.

    ``h`` is ``(B, n, d)``, ``g`` is ``(B, m, d)`` and ``mask`` ``(B, n, m)`` or
    ``(n, m)``. Masked weights are exactly zero, so a row never depends on
    skeleton tokens outside its phrase.
    """
    H = cfg.n_heads
    q = _split_heads(linear(h, params, f"{name}.q"), H)
    k = _split_heads(linear(g, params, f"{name}.k"), H)
    v = _split_heads(linear(g, params, f"{name}.v"), H)
    d_scale = cfg.d_model if cfg.cross_attention_scale == "d_model" else cfg.d_head
    logits = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d_scale))
    if mask is not None and cfg.use_phrase_mask:
        mask = np.asarray(mask)
        logits = ad.masked_add(logits, np.expand_dims(mask, -3))
    weights = ad.softmax(logits)
    out = linear(_merge_heads(ad.matmul(ad.dropout(weights, cfg.dropout, rng), v)),
                 params, f"{name}.o")
    return (out, weights) if return_weights else out


def feed_forward(x: Tensor, params: dict[str, Tensor], name: str, cfg: ModelConfig,
                 rng: np.random.Generator | None) -> Tensor:
    hidden = ad.dropout(ad.relu(linear(x, params, f"{name}.1")), cfg.dropout, rng)
    return linear(hidden, params, f"{name}.2")


def add_norm(x: Tensor, sub: Tensor, params: dict[str, Tensor], name: str, cfg: ModelConfig,
             rng: np.random.Generator | None) -> Tensor:
    return ad.layer_norm(x + ad.dropout(sub, cfg.dropout, rng), params[f"{name}.g"], params[f"{name}.b"])


# ---------------------------------------------------------------------------
# model


class SkeletonTransformer:
    """Parameters plus the forward pass.

    ``forward`` takes batched skeleton and decoder-input tokens and returns
    next-token pitch and duration logits at every decoder position.
    """

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None,
                 seed: int = 0) -> None:
        self.config = config
        self.params = init_params(config, seed) if params is None else params

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def embed(self, batch: TokenBatch, rng: np.random.Generator | None = None) -> Tensor:
        cfg = self.config
        if batch.segment.max() > cfg.max_segments:
            raise DataError(f"phrase id {batch.segment.max()} exceeds max_segments={cfg.max_segments}")
        mf = music_fusion(self.params, batch.pitch, batch.duration, batch.segment)
        pe = np.stack([positional_encoding(batch.pitch.shape[1], seg, cfg.d_model)
                       for seg in batch.segment])
        return ad.dropout(mf + Tensor(pe), cfg.dropout, rng)

    def encode(self, skeleton: TokenBatch, rng: np.random.Generator | None = None) -> Tensor:
        cfg, p = self.config, self.params
        x = self.embed(skeleton, rng)
        key_pad = skeleton.pad[:, None, None, :]
        for layer in range(cfg.n_layers_encoder):
            name = f"enc.{layer}"
            x = add_norm(x, relative_self_attention(x, p, f"{name}.self", cfg, key_pad, rng),
                         p, f"{name}.ln1", cfg, rng)
            x = add_norm(x, feed_forward(x, p, f"{name}.ff", cfg, rng), p, f"{name}.ln2", cfg, rng)
        return x

    def decode(self, memory: Tensor, full: TokenBatch, cross_mask: np.ndarray | None,
               rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        cfg, p = self.config, self.params
        x = self.embed(full, rng)
        causal = causal_mask(full.pitch.shape[1])
        for layer in range(cfg.n_layers_decoder):
            name = f"dec.{layer}"
            x = add_norm(x, relative_self_attention(x, p, f"{name}.self", cfg, causal, rng),
                         p, f"{name}.ln1", cfg, rng)
            x = add_norm(x, phrase_cross_attention(x, memory, p, f"{name}.cross", cfg, cross_mask, rng),
                         p, f"{name}.ln2", cfg, rng)
            x = add_norm(x, feed_forward(x, p, f"{name}.ff", cfg, rng), p, f"{name}.ln3", cfg, rng)
        return linear(x, p, "head.pitch"), linear(x, p, "head.duration")

    def forward(self, skeleton: TokenBatch, full: TokenBatch,
                rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """Logits ``(B, n, |pitch vocab|)`` and ``(B, n, |duration vocab|)``."""
        memory = self.encode(skeleton, rng)
        return self.decode(memory, full, batch_phrase_mask(full, skeleton), rng)

    def forward_sequences(self, skeleton: TokenSequence, full: TokenSequence) -> tuple[np.ndarray, np.ndarray]:
        """Unbatched evaluation helper returning plain arrays."""
        with ad.no_grad():
            pl, dl = self.forward(TokenBatch.from_sequences([skeleton]),
                                  TokenBatch.from_sequences([full]))
        return pl.data[0], dl.data[0]

    def save(self, path: str | Path, meta: dict | None = None,
             extra: dict[str, np.ndarray] | None = None) -> None:
        save_checkpoint(path, self.config, {k: v.data for k, v in self.params.items()}, meta, extra)

    @classmethod
    def load(cls, path: str | Path) -> "SkeletonTransformer":
        cfg, arrays, _, _ = load_checkpoint(path)
        return cls(cfg, {k: Tensor.param(v) for k, v in arrays.items()})


# ---------------------------------------------------------------------------
# checkpoints
#
#   magic      8 bytes  b"SKELCKPT"
#   version    u32
#   meta_len   u32, then meta_len bytes of UTF-8 JSON {"model": {...}, "meta": {...}}
#   count      u32
#   count x { name_len u16, name (UTF-8), ndim u8, ndim x u32 dims,
#             prod(dims) x f32 }
# All integers and floats little-endian. Entries named "extra/<key>" hold
# optimizer state and other non-parameter arrays.

MAGIC = b"SKELCKPT"
FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, config: ModelConfig, params: dict[str, np.ndarray],
                    meta: dict | None = None, extra: dict[str, np.ndarray] | None = None) -> None:
    header = json.dumps({"model": asdict(config), "meta": meta or {}}, sort_keys=True).encode("utf-8")
    items = list(params.items()) + [(f"extra/{k}", v) for k, v in (extra or {}).items()]
    out = bytearray(MAGIC)
    out += struct.pack("<II", FORMAT_VERSION, len(header)) + header
    out += struct.pack("<I", len(items))
    for name, arr in items:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw_name = name.encode("utf-8")
        out += struct.pack("<H", len(raw_name)) + raw_name
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path: str | Path):
    """Return ``(ModelConfig, params, meta, extra)``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    version, meta_len = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    header = json.loads(data[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    params: dict[str, np.ndarray] = {}
    extra: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * size
        if name.startswith("extra/"):
            extra[name[len("extra/"):]] = arr
        else:
            params[name] = arr
    return ModelConfig.from_dict(header["model"]), params, header["meta"], extra
