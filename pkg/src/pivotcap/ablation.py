"""Directional ablation study over seeds.

Trains the full four-stage pipeline and seven reduced variants (structure
removed from either encoder, fusion disabled, or one training objective
dropped) on a compact corpus, several seeds each, then compares mean
held-out metrics. The study asserts directions, not magnitudes: every
variant's mean target BLEU-1 should fall below the full model's, the
graph-coincidence rate should fall when the cross-modal alignment loss is
disabled, and the tree-coincidence rate should fall when the cross-lingual
alignment loss is disabled.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import replace
from typing import Dict, List, Optional, Sequence

from .config import TrainingConfig
from .data import Dataset
from .evaluation import evaluate
from .training import STAGES, Trainer

# Variant name -> TrainingConfig overrides. "full" trains the unmodified
# pipeline and anchors every comparison.
ABLATION_VARIANTS: Dict[str, Dict[str, object]] = {
    "full": {},
    "wo_sg": {"ablate_sg_structure": True},
    "wo_sc": {"ablate_sc_structure": True},
    "wo_resiconn": {"fusion_mode": "none"},
    "wo_cma": {"disable_cma": True},
    "wo_cla": {"disable_cla": True},
    "wo_ipb": {"disable_ipb": True},
    "wo_ptb": {"disable_ptb": True},
}

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def ablation_corpus_config() -> dict:
    """Corpus size used by the committed ablation study (kept small so the
    full grid of variants x seeds trains in minutes)."""
    return {
        "n_caption_train": 96,
        "n_caption_test": 32,
        "n_parallel_train": 96,
        "n_parallel_test": 32,
        "noise_sigma": 0.1,
        "base_seed": 11,
    }


def ablation_reference_config(data_dir: str, out_dir: str) -> TrainingConfig:
    """Compact training recipe for the ablation grid.

    Deliberately underfit (short stage 1, small model) so the alignment and
    back-translation objectives still carry useful signal; at convergence
    their effect on a saturated supervised model washes out.
    """
    return TrainingConfig(
        data_dir=data_dir,
        out_dir=out_dir,
        hidden_dim=32,
        heads=2,
        dec_layers=1,
        ffn_dim=64,
        gcn_layers=2,
        stage1_steps=240,
        stage2_steps=20,
        stage3_steps=16,
        stage4_steps=120,
        checkpoint_interval=10_000,
        average_last_k=1,
        include_positive_in_denominator=True,
        tau_m=0.5,
        tau_l=0.5,
        generator_sigma=0.1,
        lambda_cma_start=0.2,
        lambda_cma_end=0.2,
        lambda_cla_start=0.2,
        lambda_cla_end=0.2,
        lambda_ipb_start=0.1,
        lambda_ipb_end=0.4,
        lambda_ptb_start=0.1,
        lambda_ptb_end=0.4,
    )


def run_single(cfg: TrainingConfig, dataset: Dataset, eval_split: str = "parallel_test") -> dict:
    """Trains all four stages under cfg and scores the final weights."""
    trainer = Trainer(cfg, dataset)
    trainer.run_stages(STAGES)
    report = evaluate(
        trainer.model,
        dataset.split(eval_split),
        ontology=trainer.ontology,
        parser=trainer.parser,
    )
    return report.to_dict()


def run_ablations(
    base_cfg: TrainingConfig,
    dataset: Dataset,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    variants: Optional[Sequence[str]] = None,
    eval_split: str = "parallel_test",
    progress=None,
) -> dict:
    """Full grid: every requested variant trained once per seed.

    Returns a report dict with per-run metrics, per-variant means, the
    full-minus-variant margins, and the directional verdicts.
    """
    names = list(variants) if variants is not None else list(ABLATION_VARIANTS)
    unknown = [n for n in names if n not in ABLATION_VARIANTS]
    if unknown:
        raise ValueError(f"unknown ablation variants {unknown}; known: {list(ABLATION_VARIANTS)}")
    if "full" not in names:
        names.insert(0, "full")
    if not seeds:
        raise ValueError("ablation study needs at least one seed")

    runs: Dict[str, List[dict]] = {}
    with tempfile.TemporaryDirectory(prefix="ablation_runs_") as scratch:
        for name in names:
            overrides = ABLATION_VARIANTS[name]
            per_seed = []
            for seed in seeds:
                cfg = replace(
                    base_cfg,
                    seed=int(seed),
                    out_dir=os.path.join(scratch, f"{name}_s{seed}"),
                    **overrides,
                )
                rep = run_single(cfg, dataset, eval_split)
                per_seed.append(rep)
                if progress is not None:
                    progress(name, int(seed), rep)
            runs[name] = per_seed

    def mean(name: str, key: str) -> float:
        vals = [r[key] for r in runs[name]]
        return sum(vals) / len(vals)

    means = {
        name: {key: mean(name, key) for key in ("bleu_1", "pivot_bleu_1", "beta_g", "beta_c")}
        for name in names
    }
    margins = {
        name: means["full"]["bleu_1"] - means[name]["bleu_1"]
        for name in names
        if name != "full"
    }
    checks = {f"bleu_drop[{name}]": margin > 0.0 for name, margin in margins.items()}
    if "wo_cma" in names:
        checks["beta_g_drop[wo_cma]"] = means["full"]["beta_g"] > means["wo_cma"]["beta_g"]
    if "wo_cla" in names:
        checks["beta_c_drop[wo_cla]"] = means["full"]["beta_c"] > means["wo_cla"]["beta_c"]

    return {
        "seeds": [int(s) for s in seeds],
        "eval_split": eval_split,
        "variants": names,
        "runs": runs,
        "means": means,
        "bleu_margins": margins,
        "checks": checks,
        "all_directions_hold": all(checks.values()),
    }


def write_report(report: dict, path: str) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path
