"""Run configuration: one flat dataclass, one flat file format.

The file format is `key = value` lines with `#` comments. Every key is a
field of TrainingConfig; unknown keys, duplicate keys, and unparseable
values are errors that name the offending line. Files written by to_file
round-trip exactly through from_file.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields


@dataclass
class TrainingConfig:
    # reproducibility
    seed: int = 0
    data_dir: str = "data"
    out_dir: str = "runs/default"

    # corpus generation
    n_caption_train: int = 256
    n_caption_test: int = 64
    n_parallel_train: int = 256
    n_parallel_test: int = 64
    noise_sigma: float = 0.1
    corpus_seed: int = 7

    # model dimensions
    hidden_dim: int = 64
    heads: int = 4
    dec_layers: int = 2
    ffn_dim: int = 128
    gcn_layers: int = 2
    feature_width: int = 32
    max_len: int = 40
    fusion_mode: str = "residual"

    # optimization
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    batch_size: int = 8
    stage1_steps: int = 600
    stage2_steps: int = 150
    stage3_steps: int = 120
    stage4_steps: int = 300
    checkpoint_interval: int = 50
    average_last_k: int = 10

    # alignment
    rho_m: float = 0.6
    rho_l: float = 0.3
    tau_m: float = 0.1
    tau_l: float = 0.1
    include_positive_in_denominator: bool = False
    symmetric_anchors: bool = False

    # loss-weight schedules for the joint stage (start, end)
    lambda_cap_start: float = 1.0
    lambda_cap_end: float = 0.7
    lambda_trans_start: float = 1.0
    lambda_trans_end: float = 0.7
    lambda_cma_start: float = 0.7
    lambda_cma_end: float = 0.7
    lambda_cla_start: float = 0.7
    lambda_cla_end: float = 0.7
    lambda_ipb_start: float = 0.3
    lambda_ipb_end: float = 0.7
    lambda_ptb_start: float = 0.3
    lambda_ptb_end: float = 0.7

    # ablation switches
    ablate_sg_structure: bool = False
    ablate_sc_structure: bool = False
    disable_cma: bool = False
    disable_cla: bool = False
    disable_ipb: bool = False
    disable_ptb: bool = False

    # back-translation oracles: "dictionary" / "seeded" select the built-in
    # implementations; "subprocess:<command line>" runs an external program
    # speaking the line protocol documented in backtranslation.py
    translator_oracle: str = "dictionary"
    generator_oracle: str = "seeded"
    generator_sigma: float = 0.0

    # evaluation
    eval_max_samples: int = 0  # 0 means the whole split

    def fingerprint(self) -> str:
        """Digest of the run semantics. Workspace paths are excluded so the
        same experiment written to two directories fingerprints identically;
        data identity is tracked separately by the dataset content hash."""
        payload = dataclasses.asdict(self)
        payload.pop("data_dir", None)
        payload.pop("out_dir", None)
        blob = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def to_file(self, path: str) -> None:
        lines = [f"{f.name} = {_format_value(getattr(self, f.name))}" for f in fields(self)]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path: str) -> "TrainingConfig":
        overrides: dict = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
                key, _, value = line.partition("=")
                key = key.strip()
                if key in overrides:
                    raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
                overrides[key] = (value.strip(), lineno)
        return cls.from_overrides(overrides, path)

    @classmethod
    def from_overrides(cls, overrides: dict, source: str = "<overrides>") -> "TrainingConfig":
        """Build a config from {key: (raw_string, lineno)} or {key: raw_string}."""
        by_name = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, packed in overrides.items():
            raw, lineno = packed if isinstance(packed, tuple) else (packed, 0)
            if key not in by_name:
                raise ValueError(f"{source}:{lineno}: unknown config key {key!r}")
            kwargs[key] = _parse_value(by_name[key].type, raw, key, source, lineno)
        return cls(**kwargs)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(ftype, raw: str, key: str, source: str, lineno: int):
    # dataclass field types arrive as strings under `from __future__ annotations`
    tname = ftype if isinstance(ftype, str) else ftype.__name__
    try:
        if tname == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if tname == "int":
            return int(raw)
        if tname == "float":
            return float(raw)
        if tname == "str":
            return raw
        raise ValueError(f"unsupported field type {tname!r}")
    except ValueError as e:
        raise ValueError(f"{source}:{lineno}: bad value for {key!r}: {e}") from None
