"""Run configuration: a flat UTF-8 key=value file with dotted sections.

Example::

    seed=7
    corpus_dir=runs/corpus
    out_dir=runs/exp1
    generator.n_pairs=10
    contrast.temperature=0.07

Unknown keys are rejected. Section seeds default to the master seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .augment import AugmentPolicy
from .contrast import ContrastConfig
from .corpus import GeneratorConfig
from .model import ModelConfig
from .pretrain import PretrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    clip_len: int = 16
    stride: int = 16
    mode: str = "sliding"
    iou_threshold: float = 0.5


@dataclass
class RunConfig:
    seed: int
    corpus_dir: str
    out_dir: str
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    contrast: ContrastConfig = field(default_factory=ContrastConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def finalize(self):
        """Propagate the master seed and derive dependent dimensions."""
        self.generator.seed = self.seed
        self.pretrain.seed = self.seed
        self.contrast.seed = self.seed
        g = self.generator
        self.model.cube_dim = 2 * 16 * 16 * 3
        self.model.n_tokens = ((self.pretrain.clip_len // 2)
                               * (g.height // 16) * (g.width // 16))
        self.contrast.policy.output_size = (g.height, g.width)
        return self


_AUGMENT_KEYS = {
    "augment.crop_scale_min": ("crop_scale_range", 0),
    "augment.crop_scale_max": ("crop_scale_range", 1),
    "augment.flip_prob": ("flip_prob", None),
    "augment.blur_sigma_min": ("blur_sigma_range", 0),
    "augment.blur_sigma_max": ("blur_sigma_range", 1),
    "augment.jitter_range": ("jitter_range", None),
}

_SECTIONS = ("generator", "model", "pretrain", "contrast", "eval")
_TOP_KEYS = ("seed", "corpus_dir", "out_dir")


def _section_fields(section_obj):
    return {f.name: f.type for f in fields(section_obj)}


def _convert(raw: str, current):
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"bad boolean value '{raw}'")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def parse_config_text(text: str) -> RunConfig:
    entries = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value, got '{line}'")
        key, _, val = line.partition("=")
        entries[key.strip()] = val.strip()

    for req in _TOP_KEYS:
        if req not in entries:
            raise ConfigError(f"missing required key '{req}'")
    cfg = RunConfig(seed=int(entries.pop("seed")),
                    corpus_dir=entries.pop("corpus_dir"),
                    out_dir=entries.pop("out_dir"))

    for key, raw in entries.items():
        if key in _AUGMENT_KEYS:
            attr, idx = _AUGMENT_KEYS[key]
            pol = cfg.contrast.policy
            if idx is None:
                setattr(pol, attr, float(raw))
            else:
                pair = list(getattr(pol, attr))
                pair[idx] = float(raw)
                setattr(pol, attr, tuple(pair))
            continue
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not name:
            raise ConfigError(f"unknown key '{key}'")
        obj = getattr(cfg, section)
        if not hasattr(obj, name) or name in ("policy",):
            raise ConfigError(f"unknown key '{key}'")
        try:
            setattr(obj, name, _convert(raw, getattr(obj, name)))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad value for '{key}': {e}") from e
    return cfg.finalize()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def serialize_config(cfg: RunConfig) -> str:
    """Full key=value dump (every default made explicit), reproducible."""
    lines = [f"seed={cfg.seed}", f"corpus_dir={cfg.corpus_dir}",
             f"out_dir={cfg.out_dir}"]
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            if f.name == "policy":
                continue
            lines.append(f"{section}.{f.name}={getattr(obj, f.name)!r}"
                         .replace("'", ""))
    pol = cfg.contrast.policy
    lines.append(f"augment.crop_scale_min={pol.crop_scale_range[0]!r}")
    lines.append(f"augment.crop_scale_max={pol.crop_scale_range[1]!r}")
    lines.append(f"augment.flip_prob={pol.flip_prob!r}")
    lines.append(f"augment.blur_sigma_min={pol.blur_sigma_range[0]!r}")
    lines.append(f"augment.blur_sigma_max={pol.blur_sigma_range[1]!r}")
    lines.append(f"augment.jitter_range={pol.jitter_range!r}")
    return "\n".join(lines) + "\n"


def write_config_copy(cfg: RunConfig, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.txt").write_text(serialize_config(cfg),
                                            encoding="utf-8")
