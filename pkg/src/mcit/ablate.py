"""Ablation sweeps: train axis variants under shared seeds and data,
evaluate on a held-out synthetic set, and report deltas vs the baseline.
"""

from __future__ import annotations

import dataclasses
import time
from pathlib import Path

from .config import ABLATION_VALUES, RunConfig
from .errors import ConfigError
from .metrics import run_one_pass_eval
from .model import ModelConfig
from .synth import generate_sequence
from .train import TrainConfig, fit


def make_eval_set(run: RunConfig):
    """Held-out sequences: seeds disjoint from the training pool by
    construction (offset beyond every training seed)."""
    return [generate_sequence(run.data, run.eval_seed_offset + i)
            for i in range(run.eval_sequences)]


def variant_configs(run: RunConfig, axis: str):
    """(label, TrainConfig) per axis value.  The label matching the
    incoming config is tagged as the baseline row."""
    if axis not in ABLATION_VALUES:
        raise ConfigError(f"unknown ablation axis {axis!r}")
    base_model = run.model.to_dict()
    out = []
    for value in ABLATION_VALUES[axis]:
        model = {k: (dict(v) if isinstance(v, dict) else v)
                 for k, v in base_model.items()}
        if axis == "cif_blocks":
            model["backbone"]["n_groups"] = value
            is_base = value == run.model.backbone.n_groups
        elif axis == "hidden_size":
            model["state_size"] = value
            is_base = value == run.model.state_size
        elif axis == "clip_length":
            model["backbone"]["clip_len"] = value
            is_base = value == run.model.backbone.clip_len
        else:   # context
            model["context_mode"] = "cif" if value == "baseline" \
                else "none"
            is_base = model["context_mode"] == run.model.context_mode
        train = dataclasses.replace(run.train,
                                    model=ModelConfig.from_dict(model))
        out.append((f"{axis}={value}", train, is_base))
    return out


def run_ablation(run: RunConfig, axis: str = None, out_dir=None,
                 log_fn=None) -> dict:
    """Train and evaluate every variant for every ablation seed.

    Returns {label: {"per_seed": {seed: ao}, "mean_ao": float,
    "is_baseline": bool}} plus a formatted table under "_table".
    """
    axis = axis or run.ablation_axis
    eval_set = make_eval_set(run)
    results = {}
    for label, train_cfg, is_base in variant_configs(run, axis):
        per_seed = {}
        for seed in run.ablation_seeds:
            cfg = dataclasses.replace(train_cfg, seed=seed)
            t0 = time.time()
            model, history = fit(cfg)
            report = run_one_pass_eval(model, eval_set, run.tracker)
            per_seed[seed] = report.ao
            if log_fn is not None:
                log_fn(f"{label} seed={seed} ao={report.ao:.4f} "
                       f"auc={report.auc:.4f} "
                       f"loss={history[-1]['loss_total']:.4f} "
                       f"({time.time() - t0:.1f}s)")
        results[label] = {
            "per_seed": per_seed,
            "mean_ao": sum(per_seed.values()) / len(per_seed),
            "is_baseline": is_base,
        }
    results["_table"] = format_table(results)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "ablation.txt").write_text(results["_table"] + "\n",
                                              encoding="utf-8")
    return results


def format_table(results: dict) -> str:
    rows = [(label, r) for label, r in results.items()
            if not label.startswith("_")]
    base = next((r["mean_ao"] for _, r in rows if r["is_baseline"]), None)
    width = max(len(label) for label, _ in rows)
    lines = [f"{'variant':<{width}}  {'AO':>7}  {'dAO':>7}"]
    for label, r in rows:
        delta = "" if base is None else f"{r['mean_ao'] - base:+.4f}"
        mark = " *" if r["is_baseline"] else ""
        lines.append(f"{label:<{width}}  {r['mean_ao']:7.4f}  "
                     f"{delta:>7}{mark}")
    if base is not None:
        lines.append("(* baseline)")
    return "\n".join(lines)
