"""Run configuration: one JSON file holding every knob of a pipeline run.

Unknown keys are rejected at every level. The top-level ``seed`` drives model
initialisation, batch order, dropout, skeleton removal and sampling, so the
nested sections must not carry their own.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .errors import DataError
from .generation import GenConfig
from .model import ModelConfig
from .pipeline import Variant
from .segmentation import HeuristicConfig, SegmenterKind
from .skeleton import SkeletonConfig
from .training import TrainConfig


def _section(cls, data: Any, where: str, drop_seed: bool = False):
    if not isinstance(data, dict):
        raise DataError(f"config section {where!r} must be an object")
    known = {f.name for f in fields(cls)} - ({"seed"} if drop_seed else set())
    unknown = set(data) - known
    if unknown:
        hint = " (use the top-level seed)" if "seed" in unknown else ""
        raise DataError(f"unknown keys in {where!r}: {sorted(unknown)}{hint}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise DataError(f"config section {where!r}: {exc}") from None


@dataclass(frozen=True)
class SynthConfig:
    songs: int = 8
    style: str = "pentatonic"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    generate: GenConfig = field(default_factory=GenConfig)
    segmenter: SegmenterKind = SegmenterKind.HEURISTIC
    base_segmenter: SegmenterKind = SegmenterKind.HEURISTIC
    remove_half: bool = False
    heuristic: HeuristicConfig = field(default_factory=HeuristicConfig)
    skeleton: SkeletonConfig = field(default_factory=SkeletonConfig)
    prompt_bars: int = 2
    corpus: str | None = None  # directory; None synthesises one from ``synth``
    synth: SynthConfig = field(default_factory=SynthConfig)

    @property
    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)

    @property
    def gen_config(self) -> GenConfig:
        return replace(self.generate, seed=self.seed)

    @property
    def variant(self) -> Variant:
        return Variant(self.segmenter, self.base_segmenter, self.remove_half, self.seed,
                       self.heuristic, self.skeleton)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise DataError("config must be a JSON object")
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        kw: dict[str, Any] = dict(data)
        for name, sub, drop_seed in (("model", ModelConfig, False), ("train", TrainConfig, True),
                                     ("generate", GenConfig, True), ("heuristic", HeuristicConfig, False),
                                     ("skeleton", SkeletonConfig, False), ("synth", SynthConfig, False)):
            if name in kw:
                kw[name] = _section(sub, kw[name], name, drop_seed)
        for name in ("segmenter", "base_segmenter"):
            if name in kw:
                try:
                    kw[name] = SegmenterKind(kw[name])
                except ValueError:
                    raise DataError(f"unknown {name} {kw[name]!r}") from None
        cfg = cls(**kw)
        if cfg.prompt_bars < 1:
            raise DataError("prompt_bars must be >= 1")
        return cfg

    def to_dict(self) -> dict:
        out = asdict(self)
        out["segmenter"] = self.segmenter.value
        out["base_segmenter"] = self.base_segmenter.value
        del out["train"]["seed"], out["generate"]["seed"]
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    return RunConfig.from_dict(data)


def echo_config(cfg: RunConfig, out_dir: str | Path) -> None:
    """Write the resolved config next to a command's outputs."""
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / "config.json").write_text(cfg.dumps(), encoding="utf-8")
