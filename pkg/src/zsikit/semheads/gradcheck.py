"""Central finite-difference verification of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import WordVectorTable
from .heads import ZsiParams, init_params
from .losses import FeatureBatch, LossConfig, _run, loss_and_grad

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass(frozen=True)
class ProblemSizes:
    batch: int = 6
    visual: int = 24
    channels: int = 5
    mask: int = 6  # mask feature maps are mask x mask
    seen: int = 4
    unseen: int = 3
    semantic: int = 300


@dataclass(frozen=True)
class BlockCheck:
    name: str
    rel_error: float
    analytic_norm: float
    numeric_norm: float
    passed: bool


def random_problem(seed: int, sizes: ProblemSizes = ProblemSizes()):
    """Generic random (batch, params, table) with both fore- and background proposals."""
    rng = np.random.default_rng(seed)
    z = sizes
    vecs = rng.standard_normal((1 + z.seen + z.unseen, z.semantic))
    names = [f"class{i}" for i in range(z.seen + z.unseen)]
    table = WordVectorTable.from_vectors(
        {"background": vecs[0], **dict(zip(names, vecs[1:]))}, names[: z.seen], names[z.seen :]
    )
    params = init_params(z.visual, z.channels, table, rng, scale=0.1)
    # move v_b off the table row so the synchronized row genuinely differs
    params = params.map(
        lambda k, a: a + np.stack([0.1 * rng.standard_normal(z.semantic), np.zeros(z.semantic)], 1)
        if k == "rpn.W_bf"
        else a
    )
    labels = rng.integers(0, z.seen + 1, z.batch)
    labels[:2] = [0, 1 + rng.integers(z.seen)]
    batch = FeatureBatch(
        features=rng.standard_normal((z.batch, z.visual)),
        mask_features=rng.standard_normal((z.batch, z.channels, z.mask, z.mask)),
        labels=labels,
        # wide targets put some residuals beyond the smooth-l1 knee
        box_targets=rng.uniform(-2.5, 2.5, (z.batch, 4)),
        mask_targets=(rng.random((z.batch, z.mask, z.mask)) < 0.4).astype(np.uint8),
    )
    return batch, params, table


def _rel(a, n) -> float:
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12))


def gradient_check(
    batch: FeatureBatch,
    params: ZsiParams,
    table: WordVectorTable,
    config: LossConfig = LossConfig(),
    seed: int = 0,
    coords: int = 16,
    directions: int = 2,
    step: float = STEP,
    tol: float = TOLERANCE,
    corrupt: str | None = None,
) -> list[BlockCheck]:
    """Compare analytic and numeric gradients with background sync active.

    Each block is probed on ``coords`` sampled coordinates plus ``directions``
    random directional derivatives. ``rpn.W_bf`` is reported as its two
    columns ``rpn.v_b`` and ``rpn.v_f``, and the three paths through which
    ``v_b`` reaches the loss are checked separately. ``corrupt`` names one
    reported row whose analytic gradient is perturbed, for testing the
    checker itself.
    """
    if np.dtype(config.dtype) != np.float64:
        raise ValueError("gradient checks require double precision")
    rng = np.random.default_rng(seed)
    _, _, grads = loss_and_grad(batch, params, table, config, sync=True)
    blocks = params.blocks()
    W = table.seen
    v_b = params.rpn.v_b

    def total(bl, bg_det=None, bg_mask=None):
        p = ZsiParams.from_blocks(bl)
        vb = p.rpn.v_b
        return _run(
            batch, p, W, vb if bg_det is None else bg_det, vb if bg_mask is None else bg_mask, config, False
        )[0]

    # (name, analytic vector over the probed subspace, function of a perturbation vector)
    rows = []
    for name, value in blocks.items():
        if name == "rpn.W_bf":
            for col, sub in ((0, "rpn.v_b"), (1, "rpn.v_f")):
                rows.append((sub, grads.blocks[name][:, col], _setter(blocks, name, col, total)))
        else:
            rows.append((name, grads.blocks[name].ravel(), _setter(blocks, name, None, total)))
    rows.append(("rpn.v_b[rpn]", grads.v_b_paths["rpn"], lambda d: total(_bump(blocks, "rpn.W_bf", 0, d), v_b, v_b)))
    rows.append(("rpn.v_b[det]", grads.v_b_paths["det"], lambda d: total(blocks, v_b + d, v_b)))
    rows.append(("rpn.v_b[mask]", grads.v_b_paths["mask"], lambda d: total(blocks, v_b, v_b + d)))

    known = {r[0] for r in rows}
    if corrupt is not None and corrupt not in known:
        raise KeyError(f"unknown block {corrupt!r}; expected one of {sorted(known)}")

    out = []
    for name, analytic, f in rows:
        analytic = np.array(analytic, dtype=np.float64)
        n = analytic.size
        if name == corrupt:
            analytic = analytic + 1e-2 * (1.0 + np.abs(analytic))
        idx = rng.choice(n, size=min(coords, n), replace=False)
        dirs = rng.standard_normal((directions, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        probes = [np.eye(1, n, int(i)).ravel() for i in idx] + list(dirs)
        a = np.array([analytic @ d for d in probes])
        num = np.array([(f(step * d) - f(-step * d)) / (2 * step) for d in probes])
        err = _rel(a, num)
        ok = err < tol
        if name.startswith("rpn.v_b["):
            ok = ok and np.linalg.norm(num) > 1e-8  # every path must actually contribute
        out.append(BlockCheck(name, err, float(np.linalg.norm(a)), float(np.linalg.norm(num)), bool(ok)))
    return out


def _bump(blocks, name, col, d):
    new = dict(blocks)
    a = np.array(blocks[name], copy=True)
    if col is None:
        a += d.reshape(a.shape)
    else:
        a[:, col] += d
    new[name] = a
    return new


def _setter(blocks, name, col, total):
    return lambda d: total(_bump(blocks, name, col, d))
