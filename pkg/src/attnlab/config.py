"""Experiment configuration: a small sectioned key = value syntax.

Document format:

    # comment
    [attention]
    seq_len = 512
    format = "bf16"          # preset or explicit "e<E>m<M>"
    [sweep]
    formats = ["bf16", "fp16", "fp32", "fp64"]

Values are integers, floats, booleans (true/false), double-quoted strings
or flat lists of those. Unknown sections or keys are rejected; every run's
resolved config is echoed into the output metadata together with its hash.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from typing import Any

from .attention import BlockGeometry, default_block_geometry
from .formats import FloatFormat, parse_format

__all__ = [
    "ConfigError",
    "ConfigSyntaxError",
    "UnknownConfigKeyError",
    "ConfigValueError",
    "AttentionSettings",
    "SweepSettings",
    "TrainSettings",
    "ExperimentConfig",
    "parse_config",
    "resolve_config",
    "render_config",
    "config_digest",
    "COMMANDS",
]

COMMANDS = ("sweep-precision", "sweep-seqlen", "sweep-blocks", "train-compare", "validate")


class ConfigError(Exception):
    """Base class for configuration problems (CLI exit code 2)."""


class ConfigSyntaxError(ConfigError):
    def __init__(self, line: int, col: int, msg: str):
        super().__init__(f"line {line}, column {col}: {msg}")
        self.line = line
        self.col = col


class UnknownConfigKeyError(ConfigError):
    pass


class ConfigValueError(ConfigError):
    pass


@dataclass(frozen=True)
class AttentionSettings:
    seq_len: int = 512
    head_dim: int = 64
    format: str = "bf16"
    sram_elems: int = 2048
    block_rows: int = 0  # 0: derive from sram_elems
    block_cols: int = 0
    accumulate_in_carrier: bool = True
    distribution: str = "normal"
    input_scale: float = 1.7

    def resolved_format(self) -> FloatFormat:
        return parse_format(self.format)

    def geometry(self) -> BlockGeometry:
        if self.block_rows > 0 and self.block_cols > 0:
            return BlockGeometry(self.block_rows, self.block_cols)
        if self.block_rows > 0 or self.block_cols > 0:
            raise ConfigValueError("block_rows and block_cols must be set together")
        return default_block_geometry(self.sram_elems, self.head_dim)


@dataclass(frozen=True)
class SweepSettings:
    seeds: int = 10
    formats: tuple[str, ...] = ("bf16", "fp16", "fp32", "fp64")
    seq_lens: tuple[int, ...] = (64, 128, 256, 512)
    block_areas: tuple[float, ...] = (0.25, 1.0, 4.0, 16.0)
    perturbation: str = "none"
    golden_inputs: str = "format"


@dataclass(frozen=True)
class TrainSettings:
    steps: int = 2000
    learning_rate: float = 0.5
    checkpoint_every: int = 100
    train_format: str = "bf16"
    vocab: int = 256
    seq_len: int = 8
    head_dim: int = 64
    classes: int = 4
    batch_size: int = 4
    data_seed: int = 1234
    base_seeds: int = 5
    accumulate_in_carrier: bool = False
    save_checkpoints: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    attention: AttentionSettings = field(default_factory=AttentionSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    output_dir: str = "results"
    threads: int = 1


# command-specific defaults layered over the dataclass defaults; the block
# sweep runs a rectangular base geometry (swap_dims is vacuous on a square
# one) at the input scale / seed count its trend margins were calibrated at
_COMMAND_DEFAULTS: dict[str, dict[str, dict[str, Any]]] = {
    "sweep-blocks": {
        "attention": {"head_dim": 16, "input_scale": 1.4},
        "sweep": {"seeds": 20},
    },
}

_RANGES: dict[tuple[str, str], tuple[float, float]] = {
    ("attention", "seq_len"): (1, 1 << 20),
    ("attention", "head_dim"): (1, 1 << 16),
    ("attention", "sram_elems"): (4, 1 << 30),
    ("attention", "block_rows"): (0, 1 << 20),
    ("attention", "block_cols"): (0, 1 << 20),
    ("attention", "input_scale"): (1e-6, 1e6),
    ("sweep", "seeds"): (1, 100000),
    ("train", "steps"): (1, 10**9),
    ("train", "learning_rate"): (1e-12, 1e6),
    ("train", "checkpoint_every"): (1, 10**9),
    ("train", "vocab"): (2, 1 << 24),
    ("train", "seq_len"): (1, 1 << 16),
    ("train", "head_dim"): (1, 1 << 16),
    ("train", "classes"): (2, 1 << 16),
    ("train", "batch_size"): (1, 1 << 16),
    ("train", "data_seed"): (0, (1 << 63) - 1),
    ("train", "base_seeds"): (1, 100000),
}

_CHOICES: dict[tuple[str, str], tuple[str, ...]] = {
    ("attention", "distribution"): ("normal", "uniform"),
    ("sweep", "perturbation"): ("none", "swap_dims", "square_of_equal_area"),
    ("sweep", "golden_inputs"): ("format", "carrier"),
}

_SECTIONS = {"attention": AttentionSettings, "sweep": SweepSettings, "train": TrainSettings}


def _tokenize_value(raw: str, line: int, col: int):
    raw = raw.strip()
    if not raw:
        raise ConfigSyntaxError(line, col, "missing value")
    if raw.startswith("["):
        if not raw.endswith("]"):
            raise ConfigSyntaxError(line, col, "unterminated list")
        inner = raw[1:-1].strip()
        if not inner:
            return []
        return [_tokenize_value(part, line, col) for part in _split_list(inner, line, col)]
    if raw.startswith('"'):
        if len(raw) < 2 or not raw.endswith('"') or "\\" in raw:
            raise ConfigSyntaxError(line, col, f"malformed string {raw!r}")
        return raw[1:-1]
    if raw in ("true", "false"):
        return raw == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        raise ConfigSyntaxError(line, col, f"cannot parse value {raw!r}") from None


def _split_list(inner: str, line: int, col: int) -> list[str]:
    parts = []
    depth = 0
    cur = ""
    in_str = False
    for ch in inner:
        if ch == '"':
            in_str = not in_str
        if ch == "," and depth == 0 and not in_str:
            parts.append(cur)
            cur = ""
            continue
        if ch == "[" and not in_str:
            depth += 1
        if ch == "]" and not in_str:
            depth -= 1
        cur += ch
    if in_str or depth != 0:
        raise ConfigSyntaxError(line, col, "malformed list")
    parts.append(cur)
    return parts


def parse_config(text: str) -> dict[str, dict[str, Any]]:
    """Parse the sectioned key = value document into nested dicts."""
    data: dict[str, dict[str, Any]] = {}
    section: str | None = None
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        stripped = rawline.split("#", 1)[0].rstrip()
        if not stripped.strip():
            continue
        line = stripped.strip()
        col = rawline.index(line[0]) + 1
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigSyntaxError(lineno, col, "unterminated section header")
            name = line[1:-1].strip()
            if not name:
                raise ConfigSyntaxError(lineno, col, "empty section name")
            section = name
            data.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigSyntaxError(lineno, col, "expected 'key = value'")
        if section is None:
            raise ConfigSyntaxError(lineno, col, "key outside any [section]")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigSyntaxError(lineno, col, "empty key")
        vcol = rawline.index("=") + 2
        data[section][key] = _tokenize_value(value, lineno, vcol)
    return data


def _check_value(section: str, key: str, value, target_type) -> Any:
    rng = _RANGES.get((section, key))
    choices = _CHOICES.get((section, key))
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigValueError(f"[{section}] {key}: expected true/false, got {value!r}")
        return value
    if target_type is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigValueError(f"[{section}] {key}: expected integer, got {value!r}")
    if target_type is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigValueError(f"[{section}] {key}: expected number, got {value!r}")
        value = float(value)
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigValueError(f"[{section}] {key}: expected string, got {value!r}")
        if choices and value not in choices:
            raise ConfigValueError(
                f"[{section}] {key}: {value!r} not one of {', '.join(choices)}"
            )
        if key in ("format", "train_format"):
            try:
                parse_format(value)
            except ValueError as e:
                raise ConfigValueError(f"[{section}] {key}: {e}") from None
    if rng is not None and isinstance(value, (int, float)):
        lo, hi = rng
        if not (lo <= value <= hi):
            raise ConfigValueError(
                f"[{section}] {key}: {value!r} out of range [{lo}, {hi}]"
            )
    return value


def _apply_section(obj, section: str, overrides: dict[str, Any]):
    valid = {f.name: f.type for f in fields(obj)}
    updates = {}
    for key, value in overrides.items():
        if key not in valid:
            raise UnknownConfigKeyError(
                f"unknown key {key!r} in [{section}] "
                f"(valid: {', '.join(sorted(valid))})"
            )
        current = getattr(obj, key)
        if isinstance(current, tuple):
            if not isinstance(value, list):
                raise ConfigValueError(f"[{section}] {key}: expected a list")
            elem_type = type(current[0]) if current else str
            checked = tuple(_check_value(section, key, v, elem_type) for v in value)
            if elem_type is float:
                checked = tuple(float(v) for v in checked)
            updates[key] = checked
        else:
            updates[key] = _check_value(section, key, value, type(current))
    return replace(obj, **updates)


def resolve_config(
    command: str,
    text: str = "",
    output_dir: str | None = None,
    seeds: int | None = None,
    threads: int | None = None,
    env_output: str | None = None,
) -> ExperimentConfig:
    """Defaults -> command defaults -> env output dir -> file -> CLI flags."""
    if command not in COMMANDS:
        raise ConfigValueError(f"unknown command {command!r}")
    cfg = ExperimentConfig(command=command)
    for section, over in _COMMAND_DEFAULTS.get(command, {}).items():
        cfg = replace(cfg, **{section: replace(getattr(cfg, section), **over)})
    if env_output:
        cfg = replace(cfg, output_dir=env_output)

    data = parse_config(text) if text else {}
    for section, entries in data.items():
        if section == "output":
            for key, value in entries.items():
                if key != "dir":
                    raise UnknownConfigKeyError(f"unknown key {key!r} in [output] (valid: dir)")
                cfg = replace(cfg, output_dir=_check_value("output", "dir", value, str))
            continue
        if section not in _SECTIONS:
            raise UnknownConfigKeyError(
                f"unknown section [{section}] (valid: {', '.join([*_SECTIONS, 'output'])})"
            )
        cfg = replace(cfg, **{section: _apply_section(getattr(cfg, section), section, entries)})

    if output_dir is not None:
        cfg = replace(cfg, output_dir=output_dir)
    if seeds is not None:
        if seeds < 1:
            raise ConfigValueError(f"--seeds must be >= 1, got {seeds}")
        cfg = replace(cfg, sweep=replace(cfg.sweep, seeds=seeds),
                      train=replace(cfg.train, base_seeds=seeds))
    if threads is not None:
        if threads < 1:
            raise ConfigValueError(f"--threads must be >= 1, got {threads}")
        cfg = replace(cfg, threads=threads)

    # cross-field checks that only make sense on the resolved form
    t = cfg.train
    if t.steps % t.checkpoint_every != 0:
        raise ConfigValueError(
            f"[train] checkpoint_every={t.checkpoint_every} must divide steps={t.steps}"
        )
    if t.vocab < t.classes:
        raise ConfigValueError("[train] vocab must be >= classes")
    try:
        cfg.attention.geometry()  # validates block fields against sram_elems
    except ValueError as e:
        raise ConfigValueError(f"[attention] {e}") from None
    return cfg


def _render_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_render_value(x) for x in v) + "]"
    return str(v)


def render_config(cfg: ExperimentConfig) -> str:
    """Deterministic resolved form (the --print-config output)."""
    lines = [f"# resolved configuration for command: {cfg.command}"]
    for section in ("attention", "sweep", "train"):
        obj = getattr(cfg, section)
        lines.append(f"[{section}]")
        for f in fields(obj):
            lines.append(f"{f.name} = {_render_value(getattr(obj, f.name))}")
        lines.append("")
    lines.append("[output]")
    lines.append(f'dir = "{cfg.output_dir}"')
    return "\n".join(lines) + "\n"


def config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(render_config(cfg).encode()).hexdigest()
