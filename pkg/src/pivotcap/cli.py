"""Operator entry points.

Subcommands: gen-data, train, evaluate, probe-alignment, ablate, grad-check.
Every flag mirrors a TrainingConfig key one-to-one (--hidden-dim <-> hidden_dim);
precedence is defaults, then --config file, then flags. Each run writes a
reproducibility record holding the config, its fingerprint, the seed, the
content hash of the data it consumed, and the active kernel backend.

Exit codes: 0 success, 1 failure (bad inputs, failed checks), 2 usage.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import fields
from typing import List, Optional

import numpy as np

from . import __version__
from .config import TrainingConfig
from .corpus import CorpusConfig, default_ontology, emit_dataset
from .data import content_hash, load_dataset
from .evaluation import evaluate as run_evaluate
from .evaluation import probe_alignment as run_probe
from .kernels import backend as kernel_backend
from .training import Trainer, load_checkpoint

SCHEMA_VERSION = 1


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="config file of key = value lines")
    for f in fields(TrainingConfig):
        parser.add_argument(_flag(f.name), dest=f"cfg_{f.name}", metavar=f.name.upper())


def _build_config(args: argparse.Namespace) -> TrainingConfig:
    overrides = {}
    if getattr(args, "config", None):
        base = TrainingConfig.from_file(args.config)
        overrides = {f.name: getattr(base, f.name) for f in fields(TrainingConfig)}
        cfg = dataclasses.replace(TrainingConfig(), **overrides)
    else:
        cfg = TrainingConfig()
    flag_overrides = {}
    for f in fields(TrainingConfig):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            flag_overrides[f.name] = raw
    if flag_overrides:
        parsed = TrainingConfig.from_overrides(flag_overrides, source="<flags>")
        for key in flag_overrides:
            setattr(cfg, key, getattr(parsed, key))
    return cfg


def _repro_record(command: str, cfg: TrainingConfig, data_hash: Optional[str]) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "package_version": __version__,
        "kernel_backend": kernel_backend(),
        "seed": cfg.seed,
        "config": dataclasses.asdict(cfg),
        "config_fingerprint": cfg.fingerprint(),
        "data_content_hash": data_hash,
    }


def _write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _parse_stages(spec: str) -> List[int]:
    spec = spec.strip()
    if not spec:
        return []
    out: List[int] = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, _, hi = part.partition("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    for s in out:
        if s not in (1, 2, 3, 4):
            raise ValueError(f"stage {s} out of range 1-4")
    return out


# -- subcommands -----------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    out_dir = args.out or cfg.data_dir
    ccfg = CorpusConfig(
        n_caption_train=cfg.n_caption_train,
        n_caption_test=cfg.n_caption_test,
        n_parallel_train=cfg.n_parallel_train,
        n_parallel_test=cfg.n_parallel_test,
        feature_width=cfg.feature_width,
        noise_sigma=cfg.noise_sigma,
        base_seed=cfg.corpus_seed,
    )
    emit_dataset(ccfg, out_dir)
    ds = load_dataset(out_dir)
    record = _repro_record("gen-data", cfg, content_hash(ds))
    _write_json(os.path.join(out_dir, "reproducibility.json"), record)
    manifest_path = os.path.join(out_dir, "manifest.json")
    print(f"dataset written: {manifest_path}")
    for name, exs in sorted(ds.splits.items()):
        print(f"  {name}: {len(exs)} samples")
    return 0


def _load_run_config(args: argparse.Namespace) -> TrainingConfig:
    """For evaluate/probe: an explicit --config wins; otherwise look for the
    config_used.cfg that train wrote next to the checkpoint directory."""
    if getattr(args, "config", None) or any(
        getattr(args, f"cfg_{f.name}", None) is not None for f in fields(TrainingConfig)
    ):
        return _build_config(args)
    guess = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(args.checkpoint))), "config_used.cfg")
    if os.path.isfile(guess):
        ns = argparse.Namespace(**vars(args))
        ns.config = guess
        return _build_config(ns)
    raise FileNotFoundError(
        f"no --config given and {guess!r} does not exist; pass the training config"
    )


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    if args.data:
        cfg.data_dir = args.data
    if args.out:
        cfg.out_dir = args.out
    stages = _parse_stages(args.stages)
    ds = load_dataset(cfg.data_dir)
    trainer = Trainer(cfg, ds)
    os.makedirs(cfg.out_dir, exist_ok=True)
    cfg.to_file(os.path.join(cfg.out_dir, "config_used.cfg"))
    if args.resume:
        meta = trainer.load(args.resume)
        print(f"resumed from {args.resume} (stage {meta.get('stage')}, global step {meta.get('global_step')})")
    t0 = time.time()
    if stages:
        trainer.run_stages(stages)
        last_stage = stages[-1]
    else:
        last_stage = 0
        trainer.save(trainer._ckpt_path(), stage=0, stage_step=0)
    trainer.write_log()
    record = _repro_record("train", cfg, content_hash(ds))
    record["stages"] = stages
    _write_json(os.path.join(cfg.out_dir, "reproducibility.json"), record)
    ckpts = sorted(f for f in os.listdir(trainer.checkpoint_dir) if f.endswith(".ckpt"))
    final = os.path.join(trainer.checkpoint_dir, ckpts[-1])
    if stages and cfg.average_last_k > 1:
        averaged = trainer.average_recent()
        avg_path = os.path.join(trainer.checkpoint_dir, "averaged.ckpt")
        trainer.model.registry.load_state(averaged)
        trainer.save(avg_path, stage=last_stage, stage_step=-1)
        final = avg_path
    print(f"trained stages {stages or '[]'} in {time.time() - t0:.1f}s")
    print(f"final checkpoint: {final}")
    return 0


def _restore_model(args: argparse.Namespace, cfg: TrainingConfig, ds):
    trainer = Trainer(cfg, ds)
    state, meta = load_checkpoint(args.checkpoint)
    trainer.model.registry.load_state(state)
    return trainer, meta


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _load_run_config(args)
    if args.data:
        cfg.data_dir = args.data
    ds = load_dataset(cfg.data_dir)
    trainer, meta = _restore_model(args, cfg, ds)
    examples = ds.split(args.split)
    report = run_evaluate(
        trainer.model,
        examples,
        ontology=trainer.ontology,
        parser=trainer.parser,
        max_samples=args.max_samples or cfg.eval_max_samples,
    )
    payload = {
        "schema_version": SCHEMA_VERSION,
        "split": args.split,
        "checkpoint_meta": meta,
        "report": report.to_dict(),
        "reproducibility": _repro_record("evaluate", cfg, content_hash(ds)),
    }
    out_path = args.json or os.path.join(os.path.dirname(args.checkpoint), f"eval_{args.split}.json")
    _write_json(out_path, payload)
    print(f"split: {args.split}  samples: {report.sample_count}")
    order = [
        "bleu_1", "bleu_2", "bleu_3", "bleu_4", "rouge_l", "cider",
        "beta_g", "beta_c", "pivot_bleu_1", "pivot_bleu_4",
    ]
    for key in order:
        print(f"  {key:<14} {getattr(report, key):.4f}")
    print(f"report written: {out_path}")
    return 0


def cmd_probe_alignment(args: argparse.Namespace) -> int:
    cfg = _load_run_config(args)
    if args.data:
        cfg.data_dir = args.data
    ds = load_dataset(cfg.data_dir)
    trainer, meta = _restore_model(args, cfg, ds)
    examples = ds.split(args.split)
    probe = run_probe(
        trainer.model,
        examples,
        ontology=trainer.ontology,
        parser=trainer.parser,
        max_samples=args.max_samples or cfg.eval_max_samples,
    )
    payload = {
        "schema_version": SCHEMA_VERSION,
        "split": args.split,
        "checkpoint_meta": meta,
        "probe": probe,
        "reproducibility": _repro_record("probe-alignment", cfg, content_hash(ds)),
    }
    out_path = args.json or os.path.join(os.path.dirname(args.checkpoint), f"probe_{args.split}.json")
    _write_json(out_path, payload)
    print(f"split: {args.split}  samples: {probe['sample_count']}")
    for side in ("gold", "predicted"):
        row = probe[side]
        print(
            f"  {side:<9} beta_g mean {row['beta_g_mean']:.4f} (min {row['beta_g_min']:.4f})"
            f"  beta_c mean {row['beta_c_mean']:.4f} (min {row['beta_c_min']:.4f})"
        )
    print(f"report written: {out_path}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    from .ablation import (
        DEFAULT_SEEDS,
        ablation_corpus_config,
        ablation_reference_config,
        run_ablations,
        write_report,
    )

    os.makedirs(args.out, exist_ok=True)
    if not os.path.isfile(os.path.join(args.data, "manifest.json")):
        emit_dataset(CorpusConfig(**ablation_corpus_config()), args.data)
        print(f"ablation corpus written to {args.data}")
    ds = load_dataset(args.data)
    if getattr(args, "config", None) or any(
        getattr(args, f"cfg_{f.name}", None) is not None for f in fields(TrainingConfig)
    ):
        cfg = _build_config(args)
        cfg.data_dir = args.data
        cfg.out_dir = args.out
    else:
        cfg = ablation_reference_config(args.data, args.out)
    seeds = (
        [int(s) for s in args.seeds.split(",") if s.strip()]
        if args.seeds
        else list(DEFAULT_SEEDS)
    )
    variants = (
        [v.strip() for v in args.variants.split(",") if v.strip()]
        if args.variants
        else None
    )
    t0 = time.time()

    def progress(name: str, seed: int, rep: dict) -> None:
        print(
            f"  {name:<12} seed {seed}  bleu_1 {rep['bleu_1']:.4f}"
            f"  beta_g {rep['beta_g']:.4f}  beta_c {rep['beta_c']:.4f}",
            flush=True,
        )

    report = run_ablations(cfg, ds, seeds=seeds, variants=variants, progress=progress)
    report["schema_version"] = SCHEMA_VERSION
    report["reproducibility"] = _repro_record("ablate", cfg, content_hash(ds))
    path = write_report(report, os.path.join(args.out, "ablation_report.json"))
    for check, ok in sorted(report["checks"].items()):
        print(f"  {'PASS' if ok else 'FAIL'}  {check}")
    print(f"all directions hold: {report['all_directions_hold']}  ({time.time() - t0:.1f}s)")
    print(f"report written: {path}")
    return 0 if report["all_directions_hold"] else 1


def cmd_grad_check(args: argparse.Namespace) -> int:
    from .gradcheck import run_grad_checks

    t0 = time.time()
    rows = run_grad_checks(seed=args.seed)
    failed = 0
    for name, err in rows:
        ok = err < 1e-4
        failed += 0 if ok else 1
        print(f"  {'PASS' if ok else 'FAIL'}  {name:<38} {err:.3e}")
    print(f"{len(rows) - failed}/{len(rows)} checks passed in {time.time() - t0:.1f}s")
    return 0 if failed == 0 else 1


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="pivotcap",
        description="structure-pivoted cross-lingual captioning on a synthetic corpus",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="emit the synthetic dataset")
    _add_config_flags(p)
    p.add_argument("--out", help="output directory (default: data_dir from config)")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="run training stages")
    _add_config_flags(p)
    p.add_argument("--data", help="dataset directory (overrides data_dir)")
    p.add_argument("--out", help="run directory (overrides out_dir)")
    p.add_argument("--stages", default="1,2,3,4", help='e.g. "1", "2-4", "" for none')
    p.add_argument("--resume", help="checkpoint to load before running")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a split")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset directory (overrides data_dir)")
    p.add_argument("--split", default="caption_test")
    p.add_argument("--max-samples", type=int, default=0)
    p.add_argument("--json", help="where to write the JSON report")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("probe-alignment", help="structure-coincidence probe")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset directory (overrides data_dir)")
    p.add_argument("--split", default="parallel_test")
    p.add_argument("--max-samples", type=int, default=0)
    p.add_argument("--json", help="where to write the JSON report")
    p.set_defaults(fn=cmd_probe_alignment)

    p = sub.add_parser("ablate", help="component-removal study over several seeds")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="ablation corpus dir (generated if absent)")
    p.add_argument("--out", required=True, help="where to write ablation_report.json")
    p.add_argument("--seeds", help='comma list, default "0,1,2,3,4"')
    p.add_argument("--variants", help="comma list, default: all known variants")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("grad-check", help="numeric gradient checks for ops and losses")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_grad_check)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
