"""Teacher-forced training with Adam."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation, DataError
from .model import ModelConfig, SkeletonTransformer, TokenBatch, batch_phrase_mask, load_checkpoint
from .representation import TokenSequence

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: int = 1000
    checkpoint_interval: int = 0  # 0 = only the final checkpoint
    seed: int = 0
    max_seq_len: int = 512

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) <= 0 and f.name not in ("checkpoint_interval", "seed"):
                raise ValueError(f"TrainConfig.{f.name} must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise DataError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


class Adam:
    """Bias-corrected Adam over a dict of named parameters."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8) -> None:
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, Tensor]) -> None:
        for name, p in params.items():
            if not np.all(np.isfinite(p.grad)):
                raise ContractViolation(f"non-finite gradient in parameter {name!r}; step aborted")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = p.grad
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(np.float32)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam.m/{k}": v for k, v in self.m.items()}
        out.update({f"adam.v/{k}": v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        self.m = {k[len("adam.m/"):]: v.copy() for k, v in arrays.items() if k.startswith("adam.m/")}
        self.v = {k[len("adam.v/"):]: v.copy() for k, v in arrays.items() if k.startswith("adam.v/")}


def sequence_loss(pitch_logits: Tensor, duration_logits: Tensor,
                  targets: tuple[np.ndarray, np.ndarray]) -> Tensor:
    """Pitch cross-entropy plus duration cross-entropy, each averaged over non-PAD targets."""
    tp, td = targets
    if pitch_logits.shape[:-1] != tp.shape or duration_logits.shape[:-1] != td.shape:
        raise DataError(f"logits {pitch_logits.shape[:-1]} / {duration_logits.shape[:-1]} "
                        f"do not match targets {tp.shape}")
    return ad.cross_entropy(pitch_logits, tp, 0) + ad.cross_entropy(duration_logits, td, 0)


@dataclass(frozen=True)
class Example:
    skeleton: TokenSequence
    full: TokenSequence


def make_batch(examples: Sequence[Example], max_len: int):
    """Decoder inputs are the full tokens minus the last; targets are shifted by one."""
    skel_rows, in_rows, tgt_rows = [], [], []
    for ex in examples:
        p, d, s = ex.full.arrays()
        p, d, s = p[: max_len + 1], d[: max_len + 1], s[: max_len + 1]
        in_rows.append((p[:-1], d[:-1], s[:-1]))
        tgt_rows.append((p[1:], d[1:], s[1:]))
        kp, kd, ks = ex.skeleton.arrays()
        # drop skeleton tokens of phrases lost to truncation
        keep = ks <= s[:-1].max()
        skel_rows.append((kp[keep][:max_len], kd[keep][:max_len], ks[keep][:max_len]))
    full = TokenBatch.from_arrays(in_rows)
    tgt = TokenBatch.from_arrays(tgt_rows)
    return TokenBatch.from_arrays(skel_rows), full, (tgt.pitch, tgt.duration)


def batch_order(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Indices of the examples used at ``step``; each epoch is reshuffled by seed."""
    bs = min(batch_size, n)
    per_epoch = math.ceil(n / bs)
    epoch, slot = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return perm[slot * bs:(slot + 1) * bs]


@dataclass
class TrainResult:
    model: SkeletonTransformer
    losses: list[tuple[int, float]]
    optimizer: Adam


def train(examples: Sequence[Example], model: SkeletonTransformer, cfg: TrainConfig,
          out_dir: str | Path | None = None, optimizer: Adam | None = None, start_step: int = 0,
          meta: dict | None = None, on_step: Callable[[int, float], None] | None = None) -> TrainResult:
    """Run steps ``start_step .. cfg.max_steps - 1``.

    With ``out_dir`` the per-step loss goes to ``loss.log`` and checkpoints to
    ``step_XXXXXX.ckpt`` (every ``checkpoint_interval`` steps) and ``final.ckpt``.
    Data order and dropout are functions of ``(seed, step)`` only, so a resumed
    run retraces an uninterrupted one.
    """
    if not examples:
        raise DataError("no training examples")
    opt = optimizer or Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    out = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = open(out / "loss.log", "a" if start_step else "w", encoding="utf-8")
    losses: list[tuple[int, float]] = []
    try:
        for step in range(start_step, cfg.max_steps):
            idx = batch_order(len(examples), cfg.batch_size, cfg.seed, step)
            skel, full, targets = make_batch([examples[i] for i in idx], cfg.max_seq_len)
            rng = np.random.default_rng([cfg.seed, step, 1]) if model.config.dropout > 0 else None
            model.zero_grad()
            memory = model.encode(skel, rng)
            pl, dl = model.decode(memory, full, batch_phrase_mask(full, skel), rng)
            loss = sequence_loss(pl, dl, targets)
            loss.backward()
            opt.step(model.params)
            value = float(loss.data)
            losses.append((step, value))
            if log_file is not None:
                log_file.write(f"{step}\t{value:.6f}\n")
            if on_step is not None:
                on_step(step, value)
            done = step + 1
            if out is not None and cfg.checkpoint_interval and done % cfg.checkpoint_interval == 0:
                save_training_state(out / f"step_{done:06d}.ckpt", model, opt, done, cfg, meta)
    finally:
        if log_file is not None:
            log_file.close()
    if out is not None:
        save_training_state(out / "final.ckpt", model, opt, cfg.max_steps, cfg, meta)
    return TrainResult(model, losses, opt)


def save_training_state(path: Path, model: SkeletonTransformer, opt: Adam, step: int,
                        cfg: TrainConfig, meta: dict | None = None) -> None:
    info = dict(meta or {})
    info.update(step=step, adam_t=opt.t, train=asdict(cfg))
    model.save(path, meta=info, extra=opt.state_arrays())


def resume(path: str | Path) -> tuple[SkeletonTransformer, Adam, int, dict]:
    """Load a checkpoint with its optimizer state; returns ``(model, adam, step, meta)``."""
    cfg, params, meta, extra = load_checkpoint(path)
    model = SkeletonTransformer(cfg, {k: Tensor.param(v) for k, v in params.items()})
    tc = TrainConfig.from_dict(meta["train"]) if "train" in meta else TrainConfig()
    opt = Adam(tc.learning_rate, tc.beta1, tc.beta2, tc.eps)
    opt.load_state_arrays(extra, int(meta.get("adam_t", 0)))
    return model, opt, int(meta.get("step", 0)), meta


def build_examples(prepared) -> list[Example]:
    return [Example(p.skeleton, p.full) for p in prepared]


def initial_loss_estimate(config: ModelConfig) -> float:
    """Loss of uniform logits over both vocabularies."""
    return math.log(config.pitch_vocab) + math.log(config.duration_vocab)
