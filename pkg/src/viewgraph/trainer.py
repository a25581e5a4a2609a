"""Mini-batch SGD training loop and a finite-difference gradient checker.

Everything here is deterministic for a given (dataset, config): parameter
init draws from one seeded stream, epoch shuffles from another, and batch
gradients are reduced in sample order even when per-sample work is spread
across threads.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataio import Dataset
from .model import (
    Gradients,
    ModelParams,
    TrainConfig,
    backward,
    forward,
    init_model,
    sample_loss,
    validate_params,
)


@dataclass
class EpochStats:
    """One epoch's running statistics, measured during the training pass."""

    epoch: int
    loss: float
    accuracy: float
    seconds: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list
    stopped_early: bool

    @property
    def epochs_run(self) -> int:
        return len(self.history)


def _check_compat(dataset: Dataset, config: TrainConfig) -> Dataset:
    if dataset.num_samples == 0:
        raise ValueError("cannot train on an empty dataset")
    if dataset.num_classes != config.num_classes:
        raise ValueError(
            f"dataset has {dataset.num_classes} classes, config expects "
            f"{config.num_classes}"
        )
    if dataset.views != config.views or dataset.feature_dim != config.input_dim:
        raise ValueError(
            f"dataset is {dataset.views} views x {dataset.feature_dim} dims, config "
            f"expects {config.views} x {config.input_dim}"
        )
    if not config.no_spatiality and not config.pooled_mode:
        if any(s.graph.sigma != config.sigma for s in dataset.samples):
            dataset = dataset.with_sigma(config.sigma)
    return dataset


def _sample_pass(sample, params, config):
    trace = forward(sample, params, config)
    loss = sample_loss(trace, sample)
    grads = backward(trace, sample, params, config)
    correct = int(np.argmax(trace.probs)) == sample.label
    return loss, grads, correct


def train(
    dataset: Dataset,
    config: TrainConfig,
    params: ModelParams = None,
    callback=None,
) -> TrainResult:
    """Train for ``config.epochs`` epochs of shuffled mini-batch SGD.

    ``params`` resumes from an existing parameter set instead of a fresh
    seeded init. ``callback``, if given, receives each epoch's
    :class:`EpochStats`; returning a truthy value stops training after that
    epoch. Training also stops once the epoch loss has gone
    ``plateau_patience`` consecutive epochs without improving on its best
    value by a relative ``plateau_rel_tol`` (patience 0 disables this).
    Raises RuntimeError if the loss or any parameter goes non-finite.
    """
    dataset = _check_compat(dataset, config)
    if params is None:
        params = init_model(config, np.random.default_rng([config.seed, 0]))
    else:
        params = params.copy()
        validate_params(params, config)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    num = dataset.num_samples
    pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None

    history = []
    stopped_early = False
    best_loss = np.inf
    stall = 0
    try:
        for epoch in range(config.epochs):
            started = time.perf_counter()
            order = shuffle_rng.permutation(num)
            loss_sum = 0.0
            hits = 0
            for lo in range(0, num, config.batch_size):
                batch = [dataset.samples[i] for i in order[lo : lo + config.batch_size]]
                if pool is None:
                    results = [_sample_pass(s, params, config) for s in batch]
                else:
                    results = list(
                        pool.map(lambda s: _sample_pass(s, params, config), batch)
                    )
                total = Gradients.zeros_like(params)
                for loss, grads, correct in results:
                    if not np.isfinite(loss):
                        raise RuntimeError(
                            f"training diverged: non-finite loss in epoch {epoch}, "
                            f"batch starting at {lo} (learning rate "
                            f"{config.learning_rate}, sigma {config.sigma})"
                        )
                    loss_sum += loss
                    hits += correct
                    total.add_(grads)
                total.scale_(1.0 / len(batch))
                step = config.learning_rate
                for name, arr in params.blocks():
                    arr -= step * getattr(total, name)
            for name, arr in params.blocks():
                if not np.isfinite(arr).all():
                    raise RuntimeError(
                        f"training diverged: block '{name}' went non-finite during "
                        f"epoch {epoch} (learning rate {config.learning_rate})"
                    )
            stats = EpochStats(
                epoch=epoch,
                loss=loss_sum / num,
                accuracy=hits / num,
                seconds=time.perf_counter() - started,
            )
            history.append(stats)
            if callback is not None and callback(stats):
                stopped_early = True
                break
            if config.plateau_patience > 0:
                if stats.loss < best_loss * (1.0 - config.plateau_rel_tol):
                    best_loss = stats.loss
                    stall = 0
                else:
                    stall += 1
                    if stall >= config.plateau_patience:
                        stopped_early = True
                        break
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(params=params, history=history, stopped_early=stopped_early)


# Denominator floor for the per-block relative error. Central differences at
# h = 1e-5 on an O(1) loss carry ~1e-11 of roundoff noise; blocks whose true
# gradient is exactly zero (the score terms shared across views) would divide
# that noise by itself. The floor maps such noise to ~1e-7 while an actual
# gradient bug, which shows up at absolute size >= 1e-9, still exceeds any
# reasonable tolerance.
GRAD_CHECK_FLOOR = 1e-4


def grad_check(
    sample,
    params: ModelParams,
    config: TrainConfig,
    h: float = 1e-5,
    grad_hook=None,
) -> dict:
    """Compare analytic gradients against central finite differences.

    Returns {block name: relative error}, where the relative error is the
    block's max absolute analytic/numeric difference over the larger of the
    block's max absolute numeric gradient and a small floor (so blocks with
    genuinely zero gradient compare cleanly). ``grad_hook`` can mutate the
    analytic gradients before comparison; tests use it to confirm the check
    actually fails on wrong gradients.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    work = params.copy()
    trace = forward(sample, work, config)
    analytic = backward(trace, sample, work, config)
    if grad_hook is not None:
        grad_hook(analytic)

    def loss_at() -> float:
        return sample_loss(forward(sample, work, config), sample)

    report = {}
    for name, arr in work.blocks():
        a = getattr(analytic, name)
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss_at()
            flat[i] = keep - h
            down = loss_at()
            flat[i] = keep
            nflat[i] = (up - down) / (2.0 * h)
        scale = max(np.abs(numeric).max(initial=0.0), GRAD_CHECK_FLOOR)
        report[name] = float(np.abs(a - numeric).max(initial=0.0) / scale)
    return report


def corrupt_block(grads: Gradients, name: str) -> None:
    """Add 1.0 to one gradient block in place (negative control for grad_check)."""
    getattr(grads, name).__iadd__(1.0)
