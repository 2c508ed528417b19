"""Run configuration and end-to-end orchestration: data -> SAE pre-training
-> stage-wise (or conventional) training -> archives, plus bundle loading."""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import archive
from .data import Dataset, SyntheticConfig, generate_synthetic, load_cache, resolve_data_dir, SitePlan, ScalerParams
from .errors import ConfigError, DataError
from .evaluation import ErrorModelConfig
from .models import (
    LINKS, MODEL_KINDS, PRETRAINED_ENCODER, STAGE_COUNT, ModelBundle, SaeConfig, build_sae,
    build_stage_networks, pretrain_sae,
)
from .staged import InitRule, StagePlan, StageResult, TrainConfig, run_hst, train_reference

log = logging.getLogger(__name__)

RUN_MANIFEST = "manifest.json"
RUN_FORMAT = "hstloc-run/1"

# learning rates, batch sizes and schedulers per model family
DEFAULTS = {
    "linked-dnn": {
        "sae": {"learning_rate": 1e-4, "batch_size": 24},
        "stages": [{"learning_rate": 1e-4, "batch_size": 24}, {"learning_rate": 1e-3, "batch_size": 24}],
    },
    "linked-cnnloc": {
        "sae": {"learning_rate": 1e-4, "batch_size": 26},
        "stages": [
            {"learning_rate": 1e-4, "batch_size": 26},
            {"learning_rate": 1e-4, "batch_size": 26, "scheduler_factor": 0.1, "scheduler_patience": 5},
            {"learning_rate": 1e-4, "batch_size": 26, "scheduler_factor": 0.5, "scheduler_patience": 5},
        ],
    },
    "reference-dnn": {
        "sae": {"learning_rate": 1e-4, "batch_size": 24},
        "stages": [{"learning_rate": 1e-4, "batch_size": 24, "block_lr": {"R": 1e-3}}],
        "loss_weights": {"building_floor": 1.0, "location": 1.0},
    },
    "reference-cnnloc": {
        "sae": {"learning_rate": 1e-4, "batch_size": 26},
        "stages": [{"learning_rate": 1e-4, "batch_size": 26}],
        "loss_weights": {"building": 1.0, "floor": 1.0, "location": 1.0},
    },
}
REFERENCE_OF = {"linked-dnn": "reference-dnn", "linked-cnnloc": "reference-cnnloc"}
TOP_LEVEL_KEYS = {"model", "data", "seed", "sae", "stages", "loss_weights", "error_model", "output_dir",
                  "precision", "common"}


@dataclass
class RunConfig:
    model: str
    data: dict
    seed: int
    sae: TrainConfig
    stages: list[TrainConfig]
    error_model: ErrorModelConfig = field(default_factory=ErrorModelConfig)
    loss_weights: dict[str, float] = field(default_factory=dict)
    output_dir: str = "runs/default"
    precision: str = "float32"
    raw: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return np.dtype(self.precision)


def parse_config(doc: dict, mode: str | None = None, seed: int | None = None) -> RunConfig:
    """Validate a run-config document; every problem is reported at once.

    ``common`` holds training options applied to the SAE and every stage
    (e.g. epochs, patience) before the per-stage entries.
    """
    problems = []
    unknown = set(doc) - TOP_LEVEL_KEYS
    if unknown:
        problems.append(f"unknown keys {sorted(unknown)}")
    kind = doc.get("model")
    if kind not in MODEL_KINDS:
        problems.append(f"model must be one of {MODEL_KINDS}, got {kind!r}")
        raise ConfigError("invalid run config:\n  " + "\n  ".join(problems))
    if mode == "reference" and kind in REFERENCE_OF:
        kind = REFERENCE_OF[kind]
    elif mode == "hst" and kind.startswith("reference"):
        problems.append(f"--mode hst needs a linked model, config has {kind}")
    if seed is None:
        seed = doc.get("seed")
    if not isinstance(seed, int):
        problems.append("an explicit integer seed is required")
        seed = 0
    data = doc.get("data")
    if not isinstance(data, dict) or not ({"cache", "synthetic"} & set(data)):
        problems.append("data must name a 'cache' directory or a 'synthetic' config")

    defaults = DEFAULTS[kind]
    common = dict(doc.get("common", {}))
    n_stages = STAGE_COUNT[kind]
    given = doc.get("stages", [])
    if kind in REFERENCE_OF.values() and len(given) > 1:
        given = given[:1]
    if given and len(given) != n_stages:
        problems.append(f"{kind} has {n_stages} stage(s), config lists {len(given)}")

    def tcfg(base, override, s):
        merged = {**base, **common, **(override or {})}
        merged.setdefault("seed", seed * 1000 + s)
        try:
            return TrainConfig.from_dict(merged)
        except (ConfigError, TypeError) as exc:
            problems.append(f"stage {s}: {exc}")
            return TrainConfig()

    sae = tcfg(defaults["sae"], doc.get("sae"), 0)
    stages = [tcfg(defaults["stages"][s], given[s] if s < len(given) else None, s + 1) for s in range(n_stages)]
    for s, t in enumerate([sae, *stages]):
        if t.learning_rate <= 0 or t.batch_size < 1 or t.epochs < 0:
            problems.append(f"stage {s}: learning rate, batch size and epochs must be positive")
    try:
        error_model = ErrorModelConfig(**doc.get("error_model", {}))
    except (ConfigError, TypeError) as exc:
        problems.append(f"error_model: {exc}")
        error_model = ErrorModelConfig()
    precision = doc.get("precision", "float32")
    if precision not in ("float32", "float64"):
        problems.append(f"precision must be float32 or float64, got {precision!r}")
    if problems:
        raise ConfigError("invalid run config:\n  " + "\n  ".join(problems))
    weights = {**defaults.get("loss_weights", {}), **doc.get("loss_weights", {})}
    return RunConfig(kind, data, seed, sae, stages, error_model, weights,
                     doc.get("output_dir", "runs/default"), precision, doc)


def load_config(path, mode=None, seed=None) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(doc, mode, seed)


def load_datasets(data: dict) -> dict[str, Dataset]:
    if "cache" in data:
        return load_cache(resolve_data_dir(data["cache"]))
    syn = SyntheticConfig.from_dict(data["synthetic"])
    train, test, _ = generate_synthetic(syn, data.get("seed", 0))
    return {"train": train, "test": test}


# -- plans -----------------------------------------------------------------------------

def _targets(kind: str, ds: Dataset) -> list:
    if kind == "linked-dnn":
        return [ds.bf_onehot, ds.coords_scaled]
    if kind == "linked-cnnloc":
        return [ds.building_onehot, ds.floor_onehot, ds.coords_scaled]
    if kind == "reference-dnn":
        return [{"building_floor": ds.bf_onehot, "location": ds.coords_scaled}]
    return [{"building": ds.building_onehot, "floor": ds.floor_onehot, "location": ds.coords_scaled}]


LOSSES = {
    "linked-dnn": ["bce", "mse"],
    "linked-cnnloc": ["ce", "ce", "mse"],
    "reference-dnn": [{"building_floor": "bce", "location": "mse"}],
    "reference-cnnloc": [{"building": "ce", "floor": "ce", "location": "mse"}],
}
OUTPUT_DOMAINS = {
    "linked-dnn": ["one-hot(N_B)+one-hot(N_F)", "scaled 2-D coordinates"],
    "linked-cnnloc": ["one-hot(N_B)", "one-hot(N_F)", "scaled 2-D coordinates"],
}


def make_hst_plans(kind: str, networks, train: Dataset, stage_cfgs: list[TrainConfig], encoder) -> list[StagePlan]:
    """Stage plans for a linked model. ``encoder`` is an :class:`InitRule`
    for the stage-1 encoder block (pre-trained SAE), or None for random."""
    plans = []
    for s, (net, target, loss, tcfg) in enumerate(zip(networks, _targets(kind, train), LOSSES[kind], stage_cfgs), 1):
        links = LINKS.get(kind, {}).get(s, {})
        init = {}
        for j, symbol in enumerate(net.blocks):
            if symbol in links:
                init[symbol] = InitRule.linked(links[symbol], s - 1)
            elif s == 1 and symbol == PRETRAINED_ENCODER[kind] and encoder is not None:
                init[symbol] = encoder
            else:
                init[symbol] = InitRule.random(tcfg.seed * 100 + j)
        plans.append(StagePlan(s, net, train.features, target, loss, init, tcfg, train.strata,
                               output_domain=OUTPUT_DOMAINS.get(kind, [""] * 3)[s - 1]))
    return plans


@dataclass
class RunOutput:
    results: list[StageResult]
    networks: list
    timing: dict
    checksums: dict


def train_run(cfg: RunConfig, datasets: dict[str, Dataset] | None = None, out_dir=None) -> RunOutput:
    """Pre-train the SAE, train every stage, and (if ``out_dir``) write
    archives, loss traces, timing and the run manifest."""
    datasets = datasets if datasets is not None else load_datasets(cfg.data)
    train = datasets["train"]
    site = train.site
    kind = cfg.model
    dtype = cfg.dtype
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    timing = {}
    t0 = time.perf_counter()
    sae = build_sae(SaeConfig(input_dim=site.n_aps), seed=[cfg.seed, 0], dtype=dtype)
    encoder_arrays = pretrain_sae(sae, train.features, cfg.sae)
    timing["sae"] = time.perf_counter() - t0
    checksums = {}
    if out is not None:
        checksums["sae"] = archive.save(out / "sae.weights.json", {"encoder": encoder_arrays},
                                        {"model": "sae", "stage": 0})
        encoder = InitRule.pretrained("encoder", path=out / "sae.weights.json")
    else:
        encoder = InitRule.pretrained("encoder", arrays=encoder_arrays)

    networks = build_stage_networks(kind, site, seed=[cfg.seed, 1], dtype=dtype)
    if kind.startswith("reference"):
        ds_targets = _targets(kind, train)[0]
        results = [train_reference(networks[0], train.features, ds_targets, LOSSES[kind][0], cfg.stages[0],
                                   cfg.loss_weights, {PRETRAINED_ENCODER[kind]: encoder}, train.strata)]
    else:
        plans = make_hst_plans(kind, networks, train, cfg.stages, encoder)
        results = run_hst(plans)
    for r in results:
        timing[f"stage{r.stage}"] = r.duration
    timing["total"] = time.perf_counter() - t0

    if out is not None:
        for r in results:
            checksums[f"stage{r.stage}"] = archive.save(
                out / f"stage{r.stage}.weights.json", r.params, {"model": kind, "stage": r.stage})
            with open(out / f"loss_stage{r.stage}.csv", "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "lr"])
                writer.writeheader()
                writer.writerows(r.trace)
        (out / "timing.json").write_text(json.dumps({"model": kind, "seed": cfg.seed, "seconds": timing}, indent=2) + "\n")
        manifest = {
            "format": RUN_FORMAT,
            "model": kind,
            "seed": cfg.seed,
            "precision": cfg.precision,
            "site": site.to_dict(),
            "scaler": train.scaler.to_dict(),
            "stages": [f"stage{r.stage}.weights.json" for r in results],
            "checksums": checksums,
            "error_model": cfg.error_model.to_dict(),
            "config_sha256": hashlib.sha256(json.dumps(cfg.raw, sort_keys=True).encode()).hexdigest(),
        }
        (out / RUN_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return RunOutput(results, networks, timing, checksums)


def load_bundle(run_dir, expect_model: str | None = None) -> ModelBundle:
    run = Path(run_dir)
    mpath = run / RUN_MANIFEST
    if not mpath.is_file():
        raise DataError(f"{run}: no run manifest")
    manifest = json.loads(mpath.read_text())
    kind = manifest.get("model")
    if expect_model is not None and kind != expect_model:
        raise ConfigError(f"{run}: weights are for {kind}, expected {expect_model}")
    site = SitePlan.from_dict(manifest["site"])
    scaler = ScalerParams.from_dict(manifest["scaler"]) if manifest.get("scaler") else None
    networks = build_stage_networks(kind, site, dtype=np.dtype(manifest.get("precision", "float32")))
    for s, (net, fname) in enumerate(zip(networks, manifest["stages"]), 1):
        params, meta = archive.load(run / fname)
        if meta.get("model") != kind or meta.get("stage") != s:
            raise ConfigError(f"{fname}: archive is {meta.get('model')} stage {meta.get('stage')}, "
                              f"expected {kind} stage {s}")
        if set(params) != set(net.blocks):
            raise ConfigError(f"{fname}: blocks {sorted(params)} do not match {kind} {sorted(net.blocks)}")
        for symbol, arrays in params.items():
            try:
                net.set_block_params(symbol, arrays)
            except ValueError as exc:
                raise ConfigError(f"{fname}: {exc}") from None
    return ModelBundle(kind, site, scaler, networks)


def default_config(kind: str, data: dict, seed: int = 0, **overrides) -> dict:
    doc = {"model": kind, "data": copy.deepcopy(data), "seed": seed}
    doc.update(overrides)
    return doc
