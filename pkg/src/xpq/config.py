"""Run configuration: one strict JSON file with per-component sections.

Top-level keys: "synth", "codebook", "train", "adapt", "seed". Unknown keys
are rejected, naming the key and (best effort) its line in the file. Omitted
sections and fields fall back to the component defaults; command-line flags
override file values. The fully resolved configuration is written next to the
outputs as resolved_config.json.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Any

from .adaptation import AdaptConfig
from .codebook import CodebookConfig
from .errors import ConfigError
from .synth import SynthConfig, SynthLanguage
from .trainer import TrainConfig

_TOP_KEYS = ("synth", "codebook", "train", "adapt", "seed")


def _find_line(text: str, key: str) -> str:
    for lineno, line in enumerate(text.splitlines(), start=1):
        if f'"{key}"' in line:
            return f" (line {lineno})"
    return ""


def _build_dataclass(cls, obj: dict, context: str, text: str):
    field_map = {f.name: f for f in dataclasses.fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in obj.items():
        if key not in field_map:
            raise ConfigError(
                f"{context}: unknown key {key!r}{_find_line(text, key)}"
            )
        kwargs[key] = value
    return kwargs


def _tuple2(value, context: str) -> tuple[int, int]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{context} must be a [min, max] pair, got {value!r}")
    return (int(value[0]), int(value[1]))


def parse_synth(obj: dict, text: str = "") -> SynthConfig:
    kwargs = _build_dataclass(SynthConfig, obj, "synth", text)
    if "languages" in kwargs:
        languages = []
        for i, lang in enumerate(kwargs["languages"]):
            lang_kwargs = _build_dataclass(SynthLanguage, lang, f"synth.languages[{i}]", text)
            languages.append(SynthLanguage(**lang_kwargs))
        kwargs["languages"] = tuple(languages)
    for key in ("segments_per_utterance", "frames_per_segment"):
        if key in kwargs:
            kwargs[key] = _tuple2(kwargs[key], f"synth.{key}")
    return SynthConfig(**kwargs)


def parse_codebook(obj: dict, text: str = "") -> CodebookConfig:
    return CodebookConfig(**_build_dataclass(CodebookConfig, obj, "codebook", text))


def parse_train(obj: dict, text: str = "") -> TrainConfig:
    return TrainConfig(**_build_dataclass(TrainConfig, obj, "train", text))


def parse_adapt(obj: dict, text: str = "") -> AdaptConfig:
    kwargs = _build_dataclass(AdaptConfig, obj, "adapt", text)
    if "eval_checkpoints" in kwargs:
        kwargs["eval_checkpoints"] = tuple(int(x) for x in kwargs["eval_checkpoints"])
    return AdaptConfig(**kwargs)


@dataclasses.dataclass
class RunConfig:
    synth: SynthConfig | None = None
    codebook: CodebookConfig | None = None
    train: TrainConfig | None = None
    adapt: AdaptConfig | None = None
    seed: int | None = None


def load_run_config(path) -> RunConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(obj, dict):
        raise ConfigError(f"config {path}: top level must be a JSON object")
    for key in obj:
        if key not in _TOP_KEYS:
            raise ConfigError(
                f"config {path}: unknown key {key!r}{_find_line(text, key)}"
            )
    try:
        return RunConfig(
            synth=parse_synth(obj["synth"], text) if "synth" in obj else None,
            codebook=parse_codebook(obj["codebook"], text) if "codebook" in obj else None,
            train=parse_train(obj["train"], text) if "train" in obj else None,
            adapt=parse_adapt(obj["adapt"], text) if "adapt" in obj else None,
            seed=int(obj["seed"]) if "seed" in obj else None,
        )
    except TypeError as e:
        raise ConfigError(f"config {path}: {e}") from e


def write_resolved_config(path, **sections) -> None:
    """Dump the effective configuration (dataclasses or plain values) as JSON."""
    obj = {}
    for name, value in sections.items():
        if value is None:
            continue
        obj[name] = dataclasses.asdict(value) if dataclasses.is_dataclass(value) else value
    Path(path).write_text(
        json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
