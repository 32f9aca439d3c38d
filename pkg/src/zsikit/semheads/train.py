"""Training loop with per-step background synchronization."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .embeddings import WordVectorTable, sync_background
from .heads import ZsiParams
from .losses import FeatureBatch, LossConfig, loss_and_grad

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Loss or gradients became non-finite during training."""

    def __init__(self, step: int, components: dict):
        bad = sorted(k for k, v in components.items() if not np.isfinite(v))
        what = ", ".join(bad) or "gradients"
        super().__init__(f"training diverged at step {step} (non-finite: {what})")
        self.step = step
        self.components = components


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 100
    lr: float = 0.1
    momentum: float = 0.0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ValueError("need lr >= 0 and 0 <= momentum < 1")


@dataclass
class TrainResult:
    params: ZsiParams
    table: WordVectorTable  # synchronized with params.rpn.v_b
    losses: np.ndarray
    components: list[dict]


DataSource = Union[FeatureBatch, Callable[[int], FeatureBatch]]


def train_loop(
    data: DataSource,
    params: ZsiParams,
    w: WordVectorTable,
    config: TrainConfig = TrainConfig(),
) -> TrainResult:
    """Plain SGD (optionally with momentum) on the composite loss.

    ``data`` is either one batch reused every step or a callable returning
    the batch for a step index. Every step runs the BA-RPN forward, copies
    ``v_b`` into both background rows, runs the other heads against that
    table, and updates all blocks; the table is re-synchronized after the
    update so callers always receive a coherent pair.
    """
    params = params.copy()
    table = sync_background(params.rpn.v_b, w)
    velocity = {k: np.zeros_like(v) for k, v in params.blocks().items()}
    losses, comps = [], []
    for step in range(config.steps):
        batch = data(step) if callable(data) else data
        table = sync_background(params.rpn.v_b, table)
        # overflow is reported below as divergence rather than as numpy warnings
        with np.errstate(over="ignore", invalid="ignore"):
            total, comp, grads = loss_and_grad(batch, params, table, config.loss, sync=True)
        if not np.isfinite(total) or not all(np.isfinite(g).all() for g in grads.blocks.values()):
            raise DivergenceError(step, comp)
        losses.append(total)
        comps.append(comp)
        if config.lr == 0.0:
            continue
        blocks = params.blocks()
        new = {}
        for name, value in blocks.items():
            v = velocity[name]
            v *= config.momentum
            v += grads.blocks[name]
            new[name] = value - config.lr * v
        params = ZsiParams.from_blocks(new)
        table = sync_background(params.rpn.v_b, table)
        if log.isEnabledFor(logging.DEBUG):
            log.debug("step %d loss %.6f", step, total)
    return TrainResult(params, table, np.array(losses), comps)
