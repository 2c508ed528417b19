"""Hierarchical stage-wise training of linked networks.

Each stage builds its initial parameter set block by block (random,
pre-trained, or copied from the linked block of the previous stage), trains
it with mini-batch Adam, then stores the learned set as read-only arrays
that no later stage may modify.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import archive
from .data import split_indices
from .errors import ConfigError, HstError, NumericError
from .nn import AdamState, Network, PlateauSchedulerState, TreeNetwork, adam_step, loss_eval, plateau_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 24
    epochs: int = 300
    patience: int | None = 20  # early stopping; None disables it
    val_fraction: float = 0.1  # 0 trains on everything and monitors the training loss
    scheduler_factor: float | None = None
    scheduler_patience: int = 5
    seed: int = 0
    block_lr: dict[str, float] = field(default_factory=dict)
    trainable: tuple[str, ...] | None = None  # None trains every block

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training options {sorted(unknown)}")
        d = dict(d)
        if d.get("trainable") is not None:
            d["trainable"] = tuple(d["trainable"])
        return cls(**d)


@dataclass
class FitResult:
    trace: list[dict]
    best_epoch: int
    epochs_run: int


def _take(targets, idx):
    if isinstance(targets, dict):
        return {k: v[idx] for k, v in targets.items()}
    return targets[idx]


def _length(targets):
    return len(next(iter(targets.values()))) if isinstance(targets, dict) else len(targets)


def make_objective(losses, weights=None):
    """Objective over a network's outputs.

    ``losses`` is a loss kind for single-output networks, or a dict of
    ``head -> kind`` (optionally weighted) for multi-head networks.
    """
    if isinstance(losses, str):
        return lambda out, y: loss_eval(losses, out, y)
    weights = weights or {}

    def objective(out, y):
        total, grads = 0.0, {}
        for head, kind in losses.items():
            w = weights.get(head, 1.0)
            value, g = loss_eval(kind, out[head], y[head])
            total += w * value
            grads[head] = (w * g).astype(g.dtype, copy=False)
        return total, grads

    return objective


def _evaluate(model, inputs, targets, objective, batch=2048):
    total, n = 0.0, len(inputs)
    for s in range(0, n, batch):
        idx = slice(s, s + batch)
        out = model(inputs[idx])
        value, _ = objective(out, _take(targets, idx))
        total += value * len(inputs[idx])
    return total / n


def fit(model: Network | TreeNetwork, inputs, targets, objective, cfg: TrainConfig, strata=None) -> FitResult:
    """Mini-batch Adam with seeded shuffling, optional plateau scheduling and
    early stopping. On return ``model`` holds the best-monitored parameters."""
    inputs = np.asarray(inputs, dtype=model.dtype)
    if isinstance(targets, dict):
        targets = {k: np.asarray(v, dtype=model.dtype) for k, v in targets.items()}
    else:
        targets = np.asarray(targets, dtype=model.dtype)
    n = len(inputs)
    if n == 0 or _length(targets) != n:
        raise HstError(f"empty or misaligned training set ({n} inputs)")
    if cfg.epochs == 0:
        return FitResult([], 0, 0)

    rng = np.random.default_rng(cfg.seed)
    if cfg.val_fraction > 0:
        strata = np.zeros(n, dtype=np.int64) if strata is None else strata
        tr_idx, va_idx = split_indices(strata, cfg.val_fraction, rng.integers(2**32))
        x_tr, y_tr = inputs[tr_idx], _take(targets, tr_idx)
        x_va, y_va = inputs[va_idx], _take(targets, va_idx)
    else:
        x_tr, y_tr, x_va, y_va = inputs, targets, None, None

    params = model.parameters()
    trainable = set(cfg.trainable) if cfg.trainable is not None else set(model.blocks)
    keys = [k for k in params if model.block_of(k) in trainable]
    state = AdamState(learning_rate=cfg.learning_rate)
    for k in keys:
        block_lr = cfg.block_lr.get(model.block_of(k))
        if block_lr is not None:
            state.lr_scale[k] = block_lr / cfg.learning_rate
    sched = None
    if cfg.scheduler_factor:
        sched = PlateauSchedulerState(cfg.learning_rate, cfg.scheduler_factor, cfg.scheduler_patience)

    best = math.inf
    best_params = {k: v.copy() for k, v in params.items()}
    best_epoch, stale, trace = 0, 0, []
    n_tr = len(x_tr)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n_tr)
        running = 0.0
        for b, s in enumerate(range(0, n_tr, cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            fwd = model.forward(x_tr[idx])
            value, grad = objective(model.outputs(fwd), _take(y_tr, idx))
            if not math.isfinite(value):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {b}, lr {state.learning_rate:g}")
            _, grads = model.backward(fwd, grad)
            adam_step(state, params, {k: grads[k] for k in keys})
            running += value * len(idx)
        train_loss = running / n_tr
        val_loss = _evaluate(model, x_va, y_va, objective) if x_va is not None else None
        monitored = val_loss if val_loss is not None else train_loss
        if not math.isfinite(monitored):
            raise NumericError(f"non-finite monitored loss at epoch {epoch}, lr {state.learning_rate:g}")
        trace.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": state.learning_rate})
        if monitored < best:
            best, best_epoch, stale = monitored, epoch, 0
            best_params = {k: v.copy() for k, v in params.items()}
        else:
            stale += 1
        if sched is not None:
            plateau_step(sched, monitored)
            state.learning_rate = sched.current_lr
        if cfg.patience is not None and stale > cfg.patience:
            break

    for k, v in best_params.items():
        params[k][...] = v
    return FitResult(trace, best_epoch, len(trace))


# -- Algorithm: stage plans ------------------------------------------------------------

@dataclass
class InitRule:
    kind: str  # "random" | "pretrained" | "linked"
    seed: int | None = None
    path: str | None = None
    symbol: str | None = None
    source_stage: int | None = None
    arrays: list | None = None  # in-memory pre-trained weights

    @classmethod
    def random(cls, seed: int) -> "InitRule":
        return cls("random", seed=seed)

    @classmethod
    def pretrained(cls, symbol: str, path=None, arrays=None) -> "InitRule":
        if (path is None) == (arrays is None):
            raise ConfigError("pretrained init needs exactly one of path / arrays")
        return cls("pretrained", path=None if path is None else str(path), symbol=symbol, arrays=arrays)

    @classmethod
    def linked(cls, symbol: str, source_stage: int) -> "InitRule":
        return cls("linked", symbol=symbol, source_stage=source_stage)


@dataclass
class StagePlan:
    stage: int
    network: Network | TreeNetwork
    inputs: np.ndarray
    targets: np.ndarray | dict
    loss: str | dict
    init: dict[str, InitRule]
    train: TrainConfig = field(default_factory=TrainConfig)
    strata: np.ndarray | None = None
    loss_weights: dict[str, float] | None = None
    output_domain: str = ""


@dataclass
class StageResult:
    stage: int
    params: dict[str, list[np.ndarray]]
    trace: list[dict]
    duration: float
    frozen: bool = False
    best_epoch: int = 0

    def digest(self) -> str:
        return archive.params_digest(self.params)


def validate_plans(plans: list[StagePlan]) -> None:
    """Check stage numbering and linked-block compatibility before any training."""
    problems = []
    for i, plan in enumerate(plans, start=1):
        if plan.stage != i:
            problems.append(f"plan #{i} has stage index {plan.stage}")
        blocks = set(plan.network.blocks)
        if set(plan.init) != blocks:
            problems.append(f"stage {plan.stage}: init rules for {sorted(plan.init)} but blocks are {sorted(blocks)}")
        for symbol, rule in plan.init.items():
            if rule.kind == "linked":
                if plan.stage == 1 or rule.source_stage != plan.stage - 1:
                    problems.append(f"stage {plan.stage}: {symbol} links to stage {rule.source_stage}")
                    continue
                src = plans[rule.source_stage - 1].network
                if rule.symbol not in src.blocks:
                    problems.append(f"stage {plan.stage}: linked source {rule.symbol} missing in stage {rule.source_stage}")
                elif symbol in blocks and src.block_shapes(rule.symbol) != plan.network.block_shapes(symbol):
                    problems.append(f"stage {plan.stage}: {symbol} and {rule.symbol} differ in shape")
            elif rule.kind not in ("random", "pretrained"):
                problems.append(f"stage {plan.stage}: unknown init kind {rule.kind!r}")
    if problems:
        raise ConfigError("invalid stage plans:\n  " + "\n  ".join(problems))


def resolve_init(plan: StagePlan, prior: list[StageResult]) -> dict[str, list[np.ndarray]]:
    """Initial parameter set for ``plan``; every array is a fresh copy."""
    by_stage = {r.stage: r for r in prior}
    init = {}
    for i, (symbol, rule) in enumerate(plan.init.items()):
        if rule.kind == "random":
            seed = rule.seed if rule.seed is not None else [plan.train.seed, plan.stage, i]
            arrays = plan.network.fresh_block_params(symbol, seed)
        elif rule.kind == "pretrained":
            if rule.arrays is not None:
                arrays = rule.arrays
            else:
                params, _ = archive.load(rule.path)
                if rule.symbol not in params:
                    raise ConfigError(f"{rule.path}: no block {rule.symbol!r}")
                arrays = params[rule.symbol]
        elif rule.kind == "linked":
            src = by_stage.get(rule.source_stage)
            if src is None or rule.symbol not in src.params:
                raise ConfigError(f"stage {plan.stage}: linked source {rule.symbol}@{rule.source_stage} not trained")
            arrays = src.params[rule.symbol]
        else:
            raise ConfigError(f"unknown init kind {rule.kind!r}")
        expected = plan.network.block_shapes(symbol)
        if [tuple(np.shape(a)) for a in arrays] != expected:
            raise ConfigError(f"stage {plan.stage}: init for {symbol} has shapes "
                              f"{[np.shape(a) for a in arrays]}, expected {expected}")
        init[symbol] = [np.array(a, dtype=plan.network.dtype, copy=True) for a in arrays]
    return init


def _freeze(net, symbols) -> dict[str, list[np.ndarray]]:
    out = {}
    for symbol in symbols:
        arrays = [a.copy() for a in net.block_params(symbol)]
        for a in arrays:
            a.setflags(write=False)
        out[symbol] = arrays
    return out


def train_stage(plan: StagePlan, init: dict[str, list[np.ndarray]]) -> StageResult:
    net = plan.network
    for symbol, arrays in init.items():
        net.set_block_params(symbol, arrays)
    objective = make_objective(plan.loss, plan.loss_weights)
    start = time.perf_counter()
    result = fit(net, plan.inputs, plan.targets, objective, plan.train, plan.strata)
    duration = time.perf_counter() - start
    if result.trace:
        last = result.trace[-1]
        log.info("stage %d: %d epochs, best epoch %d, final train loss %.5f, %.1fs",
                 plan.stage, result.epochs_run, result.best_epoch, last["train_loss"], duration)
    return StageResult(plan.stage, _freeze(net, net.blocks), result.trace, duration, True, result.best_epoch)


def run_hst(plans: list[StagePlan]) -> list[StageResult]:
    validate_plans(plans)
    results: list[StageResult] = []
    for plan in plans:
        before = [r.digest() for r in results]
        init = resolve_init(plan, results)
        result = train_stage(plan, init)
        after = [r.digest() for r in results]
        if before != after:
            raise HstError(f"stage {plan.stage} modified a frozen parameter set")
        results.append(result)
    return results


def train_reference(
    model: TreeNetwork,
    inputs,
    targets: dict[str, np.ndarray],
    losses: dict[str, str],
    cfg: TrainConfig,
    weights: dict[str, float] | None = None,
    init: dict[str, InitRule] | None = None,
    strata=None,
) -> StageResult:
    """Conventional single-phase training of a multi-head model on the
    weighted sum of its head losses."""
    if not isinstance(model, TreeNetwork):
        raise ConfigError("reference training needs a multi-head model")
    rules = {s: InitRule.random(None) for s in model.blocks}
    rules.update(init or {})
    plan = StagePlan(1, model, inputs, targets, losses, rules, cfg, strata, weights)
    return train_stage(plan, resolve_init(plan, []))
