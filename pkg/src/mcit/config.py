"""INI-style run configuration with strict unknown-key rejection.

One file describes a full run: model shape ([backbone], [cif], [head]),
training schedule ([train]), inference behavior ([tracker]), the
synthetic data distribution ([data]), and the ablation sweep
([ablation]).  Every key is optional — defaults come from the owning
dataclasses — but any key or section the schema does not know is an
error, so typos cannot silently skew an experiment.  `write_config`
emits a fully resolved snapshot whose reload reproduces the run exactly.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .backbone import BackboneConfig
from .errors import ConfigError
from .model import ModelConfig
from .synth import SynthConfig
from .tracker import TrackerConfig
from .train import TrainConfig

ABLATION_AXES = ("cif_blocks", "hidden_size", "clip_length", "context")
ABLATION_VALUES = {
    "cif_blocks": (2, 4, 6),
    "hidden_size": (4, 8, 16, 32),
    "clip_length": (2, 3, 4, 5, 6),
    "context": ("baseline", "wo_ci"),
}


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_list(s: str) -> tuple:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _parse_float_pair(s: str) -> tuple:
    parts = [float(v) for v in s.split(",") if v.strip()]
    if len(parts) != 2:
        raise ValueError(f"need two comma-separated floats: {s!r}")
    return tuple(parts)


# section -> key -> parser; every key the loader accepts appears here
_SCHEMA = {
    "backbone": {
        "dim": int, "depth": int, "heads": int, "template_size": int,
        "search_size": int, "clip_len": int,
    },
    "cif": {
        "n_blocks": int, "state_size": int, "context_tokens": int,
        "heads": int, "in_mode": str, "out_mode": str, "context": str,
        "residual_from_norm": _parse_bool, "use_skip": _parse_bool,
    },
    "head": {
        "score_bias": float,
    },
    "train": {
        "lr_backbone": float, "lr_rest": float, "weight_decay": float,
        "epochs": int, "samples_per_epoch": int, "batch_size": int,
        "lr_drop_epoch": int, "warmup_epochs": int, "clip_norm": float,
        "carry_gradients": _parse_bool,
        "checkpoint_every": int, "seed": int, "num_sequences": int,
    },
    "tracker": {
        "update_interval": int, "score_threshold": float,
        "bank_capacity": int,
    },
    "data": {
        "length": int, "image_size": int, "distractors": int,
        "occluders": int, "max_step": float, "accel": float,
        "noise": float, "size_range": _parse_float_pair,
        "occluder_width": _parse_float_pair,
        "eval_sequences": int, "eval_seed_offset": int,
    },
    "ablation": {
        "axis": str, "seeds": _parse_int_list,
    },
}

_CONTEXT_NAMES = {"cif": "cif", "baseline": "cif", "none": "none",
                  "wo_ci": "none"}


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    eval_sequences: int = 50
    eval_seed_offset: int = 10_000
    ablation_axis: str = "context"
    ablation_seeds: tuple = (0,)

    def __post_init__(self):
        if self.ablation_axis not in ABLATION_AXES:
            raise ConfigError(
                f"ablation axis must be one of {ABLATION_AXES}, got "
                f"{self.ablation_axis!r}")
        if self.eval_sequences < 1:
            raise ConfigError("eval_sequences must be >= 1")
        if not self.ablation_seeds:
            raise ConfigError("need at least one ablation seed")

    @property
    def model(self) -> ModelConfig:
        return self.train.model

    @property
    def data(self) -> SynthConfig:
        return self.train.data


def _read_sections(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    text = Path(path).read_text(encoding="utf-8")
    parser.read_string(text, source=str(path))
    out = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        known = _SCHEMA[section]
        values = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(
                    f"unknown key {key!r} in section [{section}] "
                    f"(known: {', '.join(sorted(known))})")
            try:
                values[key] = known[key](raw)
            except ValueError as err:
                raise ConfigError(
                    f"bad value for [{section}] {key} = {raw!r}: {err}")
        out[section] = values
    return out


def load_config(path) -> RunConfig:
    """Parse, validate, and assemble a RunConfig from an INI file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    sec = _read_sections(path)

    bb_kw = dict(sec.get("backbone", {}))
    cif = dict(sec.get("cif", {}))
    if "n_blocks" in cif:
        bb_kw["n_groups"] = cif.pop("n_blocks")
    bb = BackboneConfig(**bb_kw)
    model_kw = {}
    if "context" in cif:
        name = cif.pop("context")
        if name not in _CONTEXT_NAMES:
            raise ConfigError(
                f"[cif] context must be one of {sorted(_CONTEXT_NAMES)}")
        model_kw["context_mode"] = _CONTEXT_NAMES[name]
    if "heads" in cif:
        model_kw["cif_heads"] = cif.pop("heads")
    model_kw.update(cif)
    head = sec.get("head", {})
    if "score_bias" in head:
        model_kw["head_score_bias"] = head["score_bias"]
    model = ModelConfig(backbone=bb, **model_kw)

    data_kw = dict(sec.get("data", {}))
    eval_sequences = data_kw.pop("eval_sequences", 50)
    eval_seed_offset = data_kw.pop("eval_seed_offset", 10_000)
    data = SynthConfig(**data_kw)

    train = TrainConfig(model=model, data=data, **sec.get("train", {}))
    tracker = TrackerConfig(**sec.get("tracker", {}))

    abl = sec.get("ablation", {})
    return RunConfig(
        train=train, tracker=tracker,
        eval_sequences=eval_sequences,
        eval_seed_offset=eval_seed_offset,
        ablation_axis=abl.get("axis", "context"),
        ablation_seeds=abl.get("seeds", (0,)))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def write_config(run: RunConfig, path) -> None:
    """Write a fully resolved snapshot; loading it reproduces `run`."""
    m, bb, d, t = run.model, run.model.backbone, run.data, run.train
    sections = {
        "backbone": {
            "dim": bb.dim, "depth": bb.depth, "heads": bb.heads,
            "template_size": bb.template_size,
            "search_size": bb.search_size, "clip_len": bb.clip_len,
        },
        "cif": {
            "n_blocks": bb.n_groups, "state_size": m.state_size,
            "context_tokens": m.context_tokens, "heads": m.cif_heads,
            "in_mode": m.in_mode, "out_mode": m.out_mode,
            "context": m.context_mode,
            "residual_from_norm": m.residual_from_norm,
            "use_skip": m.use_skip,
        },
        "head": {"score_bias": m.head_score_bias},
        "train": {
            "lr_backbone": t.lr_backbone, "lr_rest": t.lr_rest,
            "weight_decay": t.weight_decay, "epochs": t.epochs,
            "samples_per_epoch": t.samples_per_epoch,
            "batch_size": t.batch_size, "lr_drop_epoch": t.lr_drop_epoch,
            "warmup_epochs": t.warmup_epochs, "clip_norm": t.clip_norm,
            "carry_gradients": t.carry_gradients,
            "checkpoint_every": t.checkpoint_every, "seed": t.seed,
            "num_sequences": t.num_sequences,
        },
        "tracker": {
            "update_interval": run.tracker.update_interval,
            "score_threshold": run.tracker.score_threshold,
            "bank_capacity": run.tracker.bank_capacity,
        },
        "data": {
            "length": d.length, "image_size": d.image_size,
            "distractors": d.distractors, "occluders": d.occluders,
            "max_step": d.max_step, "accel": d.accel, "noise": d.noise,
            "size_range": d.size_range,
            "occluder_width": d.occluder_width,
            "eval_sequences": run.eval_sequences,
            "eval_seed_offset": run.eval_seed_offset,
        },
        "ablation": {
            "axis": run.ablation_axis,
            "seeds": run.ablation_seeds,
        },
    }
    lines = []
    for section, values in sections.items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            lines.append(f"{key} = {_fmt(value)}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")
