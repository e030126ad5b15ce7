"""Experiment flows: original training, one-shot and iterative prune/retrain,
soft filter pruning, and training pruned architectures from scratch."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable

import numpy as np

from prunelab import optim
from prunelab.data import Dataset, batches, load_cifar10, make_synthetic, num_batches, split
from prunelab.errors import ConfigurationError
from prunelab.metrics import accuracy, count_cost, reduction
from prunelab.nn.arch import Architecture, build_architecture
from prunelab.nn.network import backward, cross_entropy, forward
from prunelab.nn.store import ParamStore
from prunelab.pruning import (
    FilterMask,
    PruneSpec,
    apply_mask,
    build_mask,
    filter_units,
    score,
    sfp_epoch_hook,
    sfp_keep_count,
    shrink_structured,
)
from prunelab.pruning.masks import round_half_up
from prunelab.rng import substream
from prunelab.schedules import Schedule, build_original, build_schedule, get_profile

log = logging.getLogger(__name__)

MODES = ("train", "oneshot", "iterative", "sfp", "scratch_e", "scratch_b")


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "oneshot"
    arch: str = "cnn-small"
    dataset: str = "tiny-images"
    n_samples: int = 2000
    test_samples: int = 1000
    data_seed: int = 0
    profile: str = "cifar"
    original_epochs: int | None = None
    retrain_schedule: str = "clr"
    retrain_epochs: int = 40
    warmup_frac: float = 0.1
    lr_max: float | None = None
    lr_min: float = 1e-5
    method: str = "l1_filter"
    ratio: float = 0.5
    policy: str | None = None
    per_layer: tuple | None = None
    rounds: int = 1
    sfp_rate: float = 0.0
    seed: int = 0
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 1e-4
    nesterov: bool = True
    reset_momentum: bool = True
    augment: bool = False
    val_frac: float = 0.0
    best_val: bool = False
    shrink: bool = True
    dtype: str = "float32"
    data_dir: str | None = None
    taylor_batches: int = 8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.mode == "iterative" and self.rounds < 2:
            raise ConfigurationError("iterative mode needs rounds >= 2")
        if self.retrain_epochs < 0:
            raise ConfigurationError("retrain_epochs must be >= 0")
        if self.best_val and self.val_frac <= 0:
            raise ConfigurationError("best_val needs a validation split (val_frac > 0)")
        if self.per_layer is not None:
            object.__setattr__(self, "per_layer", tuple(self.per_layer))

    @property
    def optim(self) -> optim.OptimConfig:
        return optim.OptimConfig(self.momentum, self.weight_decay, self.batch_size, self.nesterov, self.reset_momentum)

    @property
    def prune_spec(self) -> PruneSpec:
        return PruneSpec(self.method, self.ratio, self.policy, self.seed, self.rounds, self.per_layer)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def original_profile(self):
        return get_profile(self.profile, self.original_epochs)

    @property
    def hash(self) -> str:
        """Hash of the config, independent of the run seed and of local paths."""
        d = self.to_dict()
        d.pop("seed")
        d.pop("data_dir")
        return config_hash(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["per_layer"] is not None:
            d["per_layer"] = list(d["per_layer"])
        return d


def config_hash(cfg: dict) -> str:
    """Hash of the canonical (sorted-key, compact) JSON form."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    rows: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    wall_seconds: float = 0.0
    lr_trace: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


@dataclass
class DataBundle:
    train: Dataset
    val: Dataset | None
    test: Dataset


def load_data(cfg: PipelineConfig) -> DataBundle:
    """Datasets for one run. The sample subset is fixed by ``data_seed``;
    the train/val split varies with the run seed."""
    if cfg.dataset == "cifar10":
        full_train, full_test = load_cifar10(cfg.data_dir)
        rng = substream(cfg.data_seed, "subset")
        train = full_train
        if cfg.n_samples and cfg.n_samples < len(full_train):
            train = full_train.subset(np.sort(rng.choice(len(full_train), cfg.n_samples, replace=False)))
        test = full_test
        if cfg.test_samples and cfg.test_samples < len(full_test):
            test = full_test.subset(np.sort(rng.choice(len(full_test), cfg.test_samples, replace=False)))
    else:
        full = make_synthetic(cfg.dataset, cfg.n_samples + cfg.test_samples, cfg.data_seed)
        train, test = split(full, cfg.n_samples / len(full), cfg.data_seed)
    val = None
    if cfg.val_frac > 0:
        train, val = split(train, 1 - cfg.val_frac, cfg.seed)
    return DataBundle(train, val, test)


def architecture_for(cfg: PipelineConfig, data: DataBundle) -> Architecture:
    return build_architecture(cfg.arch, data.train.num_classes, data.train.sample_shape)


def fit_schedule(
    store: ParamStore,
    arch: Architecture,
    schedule: Schedule,
    train: Dataset,
    cfg: optim.OptimConfig,
    seed: int,
    val: Dataset | None = None,
    augment: bool = False,
    epoch_hook: Callable | None = None,
    phase: str = "train",
    epoch_offset: int = 0,
    keep_best: bool = False,
):
    """Train ``store`` in place for every step of ``schedule``.

    Returns ``(rows, lr_trace, best)`` where ``best`` is ``(val_acc, store
    copy)`` of the best validation epoch when ``keep_best`` is set.
    """
    spe = num_batches(len(train), cfg.batch_size)
    if schedule.total_steps and schedule.steps_per_epoch != spe:
        raise ConfigurationError(f"schedule has {schedule.steps_per_epoch} steps/epoch, data gives {spe}")
    rows, trace, best = [], [], None
    step_idx = 0
    for e in range(schedule.budget_epochs):
        epoch = epoch_offset + e
        loss_sum, correct, seen = 0.0, 0, 0
        for xb, yb in batches(train, cfg.batch_size, seed, epoch, augment, dtype=store.dtype):
            lr = schedule.lr(step_idx)
            logits, cache = forward(store, arch, xb, "train")
            loss, g = cross_entropy(logits, yb)
            backward(store, arch, cache, g)
            optim.step(store, cfg, lr)
            trace.append(lr)
            loss_sum += loss * len(yb)
            correct += int(np.sum(logits.argmax(axis=1) == yb))
            seen += len(yb)
            step_idx += 1
        if epoch_hook is not None:
            epoch_hook(store, arch, epoch)
        row = {
            "phase": phase,
            "epoch": epoch,
            "lr": schedule.epoch_lr(e),
            "train_loss": loss_sum / seen,
            "train_acc": correct / seen,
            "val_acc": accuracy(store, arch, val) if val is not None else None,
        }
        rows.append(row)
        log.debug("%s epoch %d lr %.5g loss %.4f acc %.4f", phase, epoch, row["lr"], row["train_loss"], row["train_acc"])
        if keep_best and val is not None and (best is None or row["val_acc"] > best[0]):
            best = (row["val_acc"], store.copy())
    return rows, trace, best


def _original_schedule(cfg, data, epochs=None):
    profile = cfg.original_profile()
    if epochs is not None:
        profile = profile.scaled(epochs)
    return build_original(profile, num_batches(len(data.train), cfg.batch_size))


def _finalize(cfg, data, store, arch, best, unpruned: Architecture | None = None) -> dict:
    eval_store = best[1] if (cfg.best_val and best is not None) else store
    cost = count_cost(arch, eval_store)
    final = {
        "test_acc": accuracy(eval_store, arch, data.test),
        "params": cost.params,
        "flops": cost.flops,
        "sparsity": eval_store.sparsity(),
    }
    if best is not None:
        final["best_val_acc"] = best[0]
    if unpruned is not None:
        pd, fd = reduction(count_cost(unpruned), cost)
        final["params_down_pct"] = pd
        final["flops_down_pct"] = fd
    return final


def train_original(cfg: PipelineConfig, data: DataBundle | None = None):
    """Train a fresh network on the original step schedule. Returns ``(store, arch, record)``."""
    t0 = time.perf_counter()
    data = data or load_data(cfg)
    arch = architecture_for(cfg, data)
    store = ParamStore.initialize(arch, cfg.seed, cfg.np_dtype)
    schedule = _original_schedule(cfg, data)
    rows, trace, best = fit_schedule(store, arch, schedule, data.train, cfg.optim, cfg.seed, data.val, cfg.augment, keep_best=cfg.best_val)
    rec = RunRecord(cfg.hash, cfg.seed, rows, _finalize(cfg, data, store, arch, best), 0.0, trace, {"mode": "train", "epochs": schedule.budget_epochs})
    rec.wall_seconds = time.perf_counter() - t0
    return store, arch, rec


def _scores(store, arch, spec, cfg, data, units=None):
    batch_iter = None
    if spec.method == "taylor_fo":
        it = batches(data.train, cfg.batch_size, cfg.seed, -1, False, dtype=store.dtype)
        batch_iter = [b for _, b in zip(range(cfg.taylor_batches), it)]
    return score(store, arch, spec, batch_iter, units)


def prune_once(store, arch, spec: PruneSpec, cfg: PipelineConfig, data: DataBundle, ratio: float | None = None, previous=None):
    """Score, build and install one mask at ``ratio`` (default ``spec.ratio``).

    Random methods copy the per-layer keep counts of their methodical
    counterpart (l1 for filters, magnitude for weights) so both produce the
    same structure.
    """
    spec_r = replace(spec, ratio=spec.ratio if ratio is None else ratio)
    keep_counts = None
    if spec.method in ("random_filter", "random_weight"):
        ref_spec = replace(spec_r, method="l1_filter" if spec.structured else "magnitude_global")
        ref = build_mask(_scores(store, arch, ref_spec, cfg, data), ref_spec, arch, previous=previous)
        keep_counts = ref.keep_counts()
    mask = build_mask(_scores(store, arch, spec_r, cfg, data), spec_r, arch, keep_counts, previous)
    for w in mask.warnings:
        log.warning("prune: %s", w)
    apply_mask(store, mask, arch)
    return mask


def can_shrink(arch, mask) -> bool:
    if not isinstance(mask, FilterMask):
        return False
    consumers = {u.conv: u.consumer for u in filter_units(arch, include_residual=True)}
    return all(keep.all() or consumers.get(c) is not None for c, keep in mask.keep.items())


def _prune_retrain(cfg: PipelineConfig, data: DataBundle, trained, rounds: int) -> RunRecord:
    t0 = time.perf_counter()
    store, arch = trained[0].copy(), trained[1]
    unpruned = arch
    spec = cfg.prune_spec
    original = _original_schedule(cfg, data)
    rows, trace, best, mask = [], [], None, None
    for k in range(1, rounds + 1):
        ratio_k = 1 - (1 - spec.ratio) ** (k / rounds)
        mask = prune_once(store, arch, spec, cfg, data, ratio_k, previous=mask)
        if cfg.reset_momentum:
            optim.reset_state(store)
        if cfg.retrain_epochs == 0:
            continue
        schedule = build_schedule(
            cfg.retrain_schedule, original, cfg.retrain_epochs, cfg.warmup_frac, cfg.lr_max, cfg.lr_min
        )
        r, tr, b = fit_schedule(
            store, arch, schedule, data.train, cfg.optim, cfg.seed, data.val, cfg.augment,
            phase=f"retrain{k}", epoch_offset=original.budget_epochs + (k - 1) * cfg.retrain_epochs,
            keep_best=cfg.best_val,
        )
        rows += r
        trace += tr
        if b is not None and (best is None or b[0] > best[0]):
            best = b
    if cfg.shrink and can_shrink(arch, mask):
        store, arch = shrink_structured(store, arch, mask)
        if best is not None:
            best = (best[0], shrink_structured(best[1], unpruned, mask)[0])
    final = _finalize(cfg, data, store, arch, best, unpruned)
    final["original_test_acc"] = accuracy(trained[0], unpruned, data.test)
    meta = {
        "mode": cfg.mode,
        "method": cfg.method,
        "schedule": cfg.retrain_schedule,
        "budget_epochs": cfg.retrain_epochs,
        "ratio": cfg.ratio,
        "rounds": rounds,
        "keep_counts": mask.keep_counts() if isinstance(mask, FilterMask) else None,
        "architecture": arch.to_dict(),
    }
    return RunRecord(cfg.hash, cfg.seed, rows, final, time.perf_counter() - t0, trace, meta)


def oneshot(cfg: PipelineConfig, data: DataBundle | None = None, trained=None) -> RunRecord:
    """Prune once to ``cfg.ratio`` then retrain ``cfg.retrain_epochs`` epochs.

    ``trained`` is an optional ``(store, arch)`` pair; without it the
    original network is trained first (and not counted in the history).
    """
    data = data or load_data(cfg)
    if trained is None:
        s, a, _ = train_original(cfg, data)
        trained = (s, a)
    return _prune_retrain(cfg, data, trained, 1)


def iterative(cfg: PipelineConfig, data: DataBundle | None = None, trained=None) -> RunRecord:
    """``cfg.rounds`` prune/retrain rounds on a geometric ratio ladder.

    After round k the kept fraction is ``(1 - ratio) ** (k / rounds)``.
    Retraining follows every prune, including the last.
    """
    if cfg.rounds < 2:
        raise ConfigurationError("iterative pruning needs rounds >= 2")
    data = data or load_data(cfg)
    if trained is None:
        s, a, _ = train_original(cfg, data)
        trained = (s, a)
    return _prune_retrain(cfg, data, trained, cfg.rounds)


def scratch_epochs(original_epochs: int, retrain_epochs: int, flops_unpruned: float, flops_pruned: float, mode: str) -> int:
    """Scratch-E: original + retrain epochs. Scratch-B: Scratch-E scaled by the FLOPs ratio."""
    epochs_e = original_epochs + retrain_epochs
    if mode.upper() == "E":
        return epochs_e
    if mode.upper() != "B":
        raise ConfigurationError(f"scratch mode must be 'E' or 'B', got {mode!r}")
    if flops_pruned <= 0:
        raise ConfigurationError("pruned FLOPs must be positive")
    return round_half_up(epochs_e * flops_unpruned / flops_pruned)


def pruned_architecture(arch: Architecture, spec: PruneSpec, seed: int = 0) -> Architecture:
    """Shape of ``arch`` after filter pruning under a count-determined policy.

    Only valid for ``uniform_per_block`` and ``per_layer_list``, whose keep
    counts do not depend on the weights.
    """
    if not spec.structured or spec.layer_policy == "global":
        raise ConfigurationError("a weight-independent pruned architecture needs a structured, non-global policy")
    store = ParamStore.initialize(arch, seed, np.float64)
    mask = build_mask(score(store, arch, replace(spec, method="l1_filter")), spec, arch)
    apply_mask(store, mask, arch)
    return shrink_structured(store, arch, mask)[1]


def scratch_baseline(cfg: PipelineConfig, mode: str, data: DataBundle | None = None, pruned_arch: Architecture | None = None) -> RunRecord:
    """Train the pruned architecture from a fresh init for the Scratch-E/B epoch count,
    with the original step schedule stretched to that length."""
    t0 = time.perf_counter()
    data = data or load_data(cfg)
    unpruned = architecture_for(cfg, data)
    if pruned_arch is None:
        pruned_arch = pruned_architecture(unpruned, cfg.prune_spec, cfg.seed)
    profile = cfg.original_profile()
    epochs = scratch_epochs(profile.total_epochs, cfg.retrain_epochs, count_cost(unpruned).flops, count_cost(pruned_arch).flops, mode)
    store = ParamStore.initialize(pruned_arch, cfg.seed, cfg.np_dtype)
    schedule = _original_schedule(cfg, data, epochs)
    rows, trace, best = fit_schedule(store, pruned_arch, schedule, data.train, cfg.optim, cfg.seed, data.val, cfg.augment, phase=f"scratch_{mode.lower()}", keep_best=cfg.best_val)
    final = _finalize(cfg, data, store, pruned_arch, best, unpruned)
    meta = {"mode": f"scratch_{mode.lower()}", "method": cfg.method, "schedule": "step", "budget_epochs": epochs, "ratio": cfg.ratio}
    return RunRecord(cfg.hash, cfg.seed, rows, final, time.perf_counter() - t0, trace, meta)


def sfp_train(cfg: PipelineConfig, data: DataBundle | None = None) -> RunRecord:
    """Train with soft filter pruning, hard-prune the zeroed filters at the end,
    then optionally retrain ``cfg.retrain_epochs`` epochs with ``cfg.retrain_schedule``."""
    t0 = time.perf_counter()
    data = data or load_data(cfg)
    arch = architecture_for(cfg, data)
    store = ParamStore.initialize(arch, cfg.seed, cfg.np_dtype)
    schedule = _original_schedule(cfg, data)
    rate = cfg.sfp_rate

    def hook(s, a, epoch):
        sfp_epoch_hook(s, a, rate, epoch)

    rows, trace, best = fit_schedule(store, arch, schedule, data.train, cfg.optim, cfg.seed, data.val, cfg.augment, hook, "sfp", keep_best=cfg.best_val)
    units = filter_units(arch, include_residual=True)
    spec = PruneSpec("sfp", rate, "uniform_per_block", cfg.seed)
    counts = {u.conv: sfp_keep_count(u.out_channels, rate) for u in units}
    mask = build_mask(score(store, arch, spec, units=units), spec, arch, counts)
    apply_mask(store, mask, arch)
    if cfg.retrain_epochs > 0:
        if cfg.reset_momentum:
            optim.reset_state(store)
        rs = build_schedule(cfg.retrain_schedule, schedule, cfg.retrain_epochs, cfg.warmup_frac, cfg.lr_max, cfg.lr_min)
        r, tr, b = fit_schedule(store, arch, rs, data.train, cfg.optim, cfg.seed, data.val, cfg.augment, phase="retrain", epoch_offset=schedule.budget_epochs, keep_best=cfg.best_val)
        rows += r
        trace += tr
        best = b if b is not None else best
    final = _finalize(cfg, data, store, arch, best, arch)
    meta = {"mode": "sfp", "method": "sfp", "schedule": cfg.retrain_schedule if cfg.retrain_epochs else "none",
            "budget_epochs": cfg.retrain_epochs, "ratio": rate, "keep_counts": mask.keep_counts()}
    return RunRecord(cfg.hash, cfg.seed, rows, final, time.perf_counter() - t0, trace, meta)


def run_pipeline(cfg: PipelineConfig, data: DataBundle | None = None, trained=None) -> RunRecord:
    """Dispatch on ``cfg.mode``."""
    if cfg.mode == "train":
        return train_original(cfg, data)[2]
    if cfg.mode == "oneshot":
        return oneshot(cfg, data, trained)
    if cfg.mode == "iterative":
        return iterative(cfg, data, trained)
    if cfg.mode == "sfp":
        return sfp_train(cfg, data)
    return scratch_baseline(cfg, cfg.mode[-1].upper(), data)
