"""Composite training loss and its analytic gradient.

L = L_BA + L_ZSD + L_SMH, where

* L_BA  = smooth-l1(rpn boxes) + 2-way CE(background / foreground)
* L_ZSD = smooth-l1(det boxes) + (S+1)-way CE + lambda_zsd * L_R(features)
* L_SMH = per-pixel BCE + lambda_smh * L_R(mask features)

Box terms and the mask BCE cover foreground proposals only. L_R is the mean
squared reconstruction error. The mask BCE logit for a proposal of class c is
the difference between the class-c and background score channels, which is
how the synchronized background row enters the mask head.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .embeddings import WordVectorTable, sync_background
from .heads import ShapeError, ZsiParams, _det, _mask, _rpn, softmax


class LabelError(ValueError):
    """Label indices or targets outside the valid range."""


@dataclass(frozen=True)
class LossConfig:
    lambda_zsd: float = 0.5
    lambda_smh: float = 0.5
    temperature: float = 1.0  # logits are scores / temperature
    smooth_l1_beta: float = 1.0
    dtype: type = np.float64

    def __post_init__(self):
        if self.temperature <= 0 or self.smooth_l1_beta <= 0:
            raise ValueError("temperature and smooth-l1 beta must be positive")
        if self.lambda_zsd < 0 or self.lambda_smh < 0:
            raise ValueError("loss weights must be non-negative")
        if np.dtype(self.dtype) not in (np.float32, np.float64):
            raise ValueError("dtype must be float32 or float64")


@dataclass(frozen=True, eq=False)
class FeatureBatch:
    """Proposal features with their supervision.

    ``labels`` are seen-table rows: 0 is background, 1..S are seen classes.
    """

    features: np.ndarray  # B x dv
    mask_features: np.ndarray  # B x C x H x W
    labels: np.ndarray  # B
    box_targets: np.ndarray  # B x 4
    mask_targets: np.ndarray  # B x H x W, binary

    def __post_init__(self):
        x = np.asarray(self.features)
        m = np.asarray(self.mask_features)
        c = np.asarray(self.labels)
        r = np.asarray(self.box_targets)
        y = np.asarray(self.mask_targets)
        if x.ndim != 2 or m.ndim != 4 or c.ndim != 1 or r.ndim != 2 or y.ndim != 3:
            raise ShapeError("batch arrays must be B x dv, B x C x H x W, B, B x 4 and B x H x W")
        b = x.shape[0]
        if not (m.shape[0] == c.shape[0] == r.shape[0] == y.shape[0] == b):
            raise ShapeError("batch dimensions disagree")
        if r.shape[1] != 4:
            raise ShapeError("box targets must have 4 columns")
        if y.shape[1:] != m.shape[2:]:
            raise ShapeError(f"mask targets {y.shape[1:]} do not match feature map {m.shape[2:]}")
        if not np.issubdtype(c.dtype, np.integer):
            raise LabelError("labels must be integers")
        if ((y != 0) & (y != 1)).any():
            raise LabelError("mask targets must be binary")
        for name, a in (("features", x), ("mask_features", m), ("box_targets", r)):
            object.__setattr__(self, name, _ro(a.astype(np.float64) if a.dtype.kind != "f" else a))
        object.__setattr__(self, "labels", _ro(c.astype(np.int64)))
        object.__setattr__(self, "mask_targets", _ro(y.astype(np.float64)))

    def __len__(self):
        return self.features.shape[0]

    @property
    def foreground(self) -> np.ndarray:
        return self.labels > 0


def _ro(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def reconstruction_loss(O, R, reduction: str = "mean") -> float:
    """Squared reconstruction error, as a mean over elements or a raw sum."""
    O = np.asarray(O, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if O.shape != R.shape:
        raise ShapeError(f"reconstruction shapes differ: {O.shape} vs {R.shape}")
    sq = float(np.sum((O - R) ** 2))
    if reduction == "sum":
        return sq
    if reduction == "mean":
        return sq / O.size if O.size else 0.0
    raise ValueError(f"unknown reduction {reduction!r}")


def _smooth_l1(e, beta):
    a = np.abs(e)
    val = np.where(a < beta, 0.5 * e * e / beta, a - 0.5 * beta)
    grad = np.clip(e / beta, -1.0, 1.0)
    return val, grad


def _ce(logits, labels):
    """Mean cross-entropy and its gradient wrt logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    n = logits.shape[0]
    loss = float(np.sum(lse - z[np.arange(n), labels]) / n) if n else 0.0
    g = softmax(logits)
    g[np.arange(n), labels] -= 1.0
    return loss, g / max(n, 1)


def _bce(logits, targets):
    """Sum of binary cross-entropies with logits and the elementwise gradient."""
    loss = np.logaddexp(0.0, logits) - targets * logits
    return float(loss.sum()), expit(logits) - targets


@dataclass
class Gradients:
    """Gradient of the total loss per parameter block.

    ``v_b_paths`` splits the gradient reaching the background vector into its
    rpn, det and mask contributions. With synchronization active,
    ``blocks['rpn.W_bf'][:, 0]`` is their sum.
    """

    blocks: dict[str, np.ndarray]
    v_b_paths: dict[str, np.ndarray] = field(default_factory=dict)


def _validate(batch: FeatureBatch, params: ZsiParams, w: WordVectorTable):
    dv = params.det.visual_dim
    if batch.features.shape[1] != dv:
        raise ShapeError(f"features have width {batch.features.shape[1]}, parameters expect {dv}")
    if batch.mask_features.shape[1] != params.mask.channels:
        raise ShapeError(
            f"mask features have {batch.mask_features.shape[1]} channels, parameters expect {params.mask.channels}"
        )
    if w.dim != params.semantic_dim:
        raise ShapeError(f"table width {w.dim} differs from semantic dimension {params.semantic_dim}")
    n = w.seen.shape[0]
    if batch.labels.size and (batch.labels.min() < 0 or batch.labels.max() >= n):
        raise LabelError(f"labels must lie in [0, {n - 1}]")


def _run(batch, params, W, bg_det, bg_mask, cfg: LossConfig, grad: bool):
    """Total loss, components and (optionally) gradients.

    ``bg_det`` and ``bg_mask`` are the background rows seen by the detector
    and mask head; passing them separately lets callers probe each path.
    """
    dt = np.dtype(cfg.dtype)
    P = params.astype(dt) if params.det.T_e.dtype != dt else params
    x = batch.features.astype(dt)
    g_map = np.ascontiguousarray(batch.mask_features.transpose(0, 2, 3, 1), dtype=dt)
    c = batch.labels
    r_hat = batch.box_targets.astype(dt)
    y_hat = batch.mask_targets.astype(dt)
    fg = batch.foreground
    n_fg = int(fg.sum())
    B = x.shape[0]
    tau = cfg.temperature
    beta = cfg.smooth_l1_beta

    W_det = np.array(W, dtype=dt)
    W_det[0] = bg_det
    W_mask = np.array(W, dtype=dt)
    W_mask[0] = bg_mask

    comp = {}

    # BA-RPN
    bf, u = _rpn(P.rpn, x)
    comp["ba_cls"], d_bf = _ce(bf / tau, fg.astype(np.int64))
    d_bf /= tau
    q = x @ P.rpn.W_reg + P.rpn.b_reg
    val, sg = _smooth_l1(q - r_hat, beta)
    comp["ba_reg"] = float(val[fg].sum() / n_fg) if n_fg else 0.0
    d_q = np.where(fg[:, None], sg, 0.0) / max(n_fg, 1)

    # detector
    z, s, R = _det(P.det, W_det, x)
    comp["zsd_cls"], d_z = _ce(z / tau, c)
    d_z /= tau
    e = x @ P.det.W_reg + P.det.b_reg
    val, sg = _smooth_l1(e - r_hat, beta)
    comp["zsd_reg"] = float(val[fg].sum() / n_fg) if n_fg else 0.0
    d_e = np.where(fg[:, None], sg, 0.0) / max(n_fg, 1)
    diff = R - x
    comp["zsd_rec_sum"] = float(np.sum(diff * diff))
    comp["zsd_rec"] = comp["zsd_rec_sum"] / diff.size if diff.size else 0.0

    # mask head, channels-last
    Z, sem, Rm = _mask(P.mask, W_mask, g_map)
    hw = Z.shape[1] * Z.shape[2]
    idx = np.flatnonzero(fg)
    if n_fg:
        logit = (Z[idx, :, :, c[idx]] - Z[idx, :, :, 0]) / tau
        bce, d_logit = _bce(logit, y_hat[idx])
        comp["smh_bce"] = bce / (n_fg * hw)
        d_logit = d_logit / (n_fg * hw * tau)
    else:
        comp["smh_bce"] = 0.0
    diff_m = Rm - g_map
    comp["smh_rec_sum"] = float(np.sum(diff_m * diff_m))
    comp["smh_rec"] = comp["smh_rec_sum"] / diff_m.size if diff_m.size else 0.0

    comp["ba"] = comp["ba_cls"] + comp["ba_reg"]
    comp["zsd"] = comp["zsd_cls"] + comp["zsd_reg"] + cfg.lambda_zsd * comp["zsd_rec"]
    comp["smh"] = comp["smh_bce"] + cfg.lambda_smh * comp["smh_rec"]
    total = comp["ba"] + comp["zsd"] + comp["smh"]
    if not grad:
        return total, comp, None

    gb = {}
    # rpn
    gb["rpn.W_bf"] = u.T @ d_bf
    d_u = d_bf @ P.rpn.W_bf.T
    gb["rpn.T"] = x.T @ d_u
    gb["rpn.b_T"] = d_u.sum(axis=0)
    gb["rpn.W_reg"] = x.T @ d_q
    gb["rpn.b_reg"] = d_q.sum(axis=0)

    # detector
    d_R = (2.0 * cfg.lambda_zsd / max(diff.size, 1)) * diff
    gb["det.T_d"] = s.T @ d_R
    gb["det.b_d"] = d_R.sum(axis=0)
    d_s = d_z @ W_det + d_R @ P.det.T_d.T
    gb["det.T_e"] = x.T @ d_s
    gb["det.b_e"] = d_s.sum(axis=0)
    gb["det.W_reg"] = x.T @ d_e
    gb["det.b_reg"] = d_e.sum(axis=0)
    path_det = d_z[:, 0] @ s

    # mask head
    d_Z = np.zeros_like(Z)
    if n_fg:
        d_Z[idx, :, :, c[idx]] += d_logit
        d_Z[idx, :, :, 0] -= d_logit
    d_Rm = (2.0 * cfg.lambda_smh / max(diff_m.size, 1)) * diff_m
    d = sem.shape[-1]
    C = g_map.shape[-1]
    sem2 = sem.reshape(-1, d)
    d_Rm2 = d_Rm.reshape(-1, C)
    d_Z2 = d_Z.reshape(-1, d_Z.shape[-1])
    d_sem = d_Z2 @ W_mask + d_Rm2 @ P.mask.D.T
    gb["mask.D"] = sem2.T @ d_Rm2
    gb["mask.b_D"] = d_Rm2.sum(axis=0)
    gb["mask.E"] = g_map.reshape(-1, C).T @ d_sem
    gb["mask.b_E"] = d_sem.sum(axis=0)
    path_mask = d_Z2[:, 0] @ sem2

    paths = {"rpn": gb["rpn.W_bf"][:, 0].copy(), "det": path_det, "mask": path_mask}
    return total, comp, Gradients(gb, paths)


def _tables(params, w, sync):
    if sync:
        v = params.rpn.v_b
        return w.seen, v, v
    return w.seen, w.seen[0], w.seen[0]


def zsi_loss(
    batch: FeatureBatch,
    params: ZsiParams,
    w: WordVectorTable,
    config: LossConfig = LossConfig(),
    sync: bool = True,
) -> tuple[float, dict]:
    """Total training loss and its named components.

    With ``sync`` the background rows used for scoring are ``params.rpn.v_b``,
    as after :func:`sync_background`; otherwise the table's own row 0.
    """
    _validate(batch, params, w)
    W, bd, bm = _tables(params, w, sync)
    total, comp, _ = _run(batch, params, W, bd, bm, config, grad=False)
    return total, comp


def loss_and_grad(
    batch: FeatureBatch,
    params: ZsiParams,
    w: WordVectorTable,
    config: LossConfig = LossConfig(),
    sync: bool = True,
):
    """(total, components, Gradients) in one pass."""
    _validate(batch, params, w)
    W, bd, bm = _tables(params, w, sync)
    total, comp, g = _run(batch, params, W, bd, bm, config, grad=True)
    if sync:
        g.blocks["rpn.W_bf"][:, 0] += g.v_b_paths["det"] + g.v_b_paths["mask"]
    return total, comp, g


def backward(
    batch: FeatureBatch,
    params: ZsiParams,
    w: WordVectorTable,
    config: LossConfig = LossConfig(),
    sync: bool = True,
) -> Gradients:
    """Analytic gradient of :func:`zsi_loss` for every trainable block.

    The class rows of the table are fixed and receive no gradient.
    """
    return loss_and_grad(batch, params, w, config, sync)[2]


def synced_table(params: ZsiParams, w: WordVectorTable) -> WordVectorTable:
    return sync_background(params.rpn.v_b, w)
