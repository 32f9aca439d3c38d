"""Parameter containers and forward passes of the three semantic heads.

Row-vector convention throughout: a batch of ``B`` features is a ``B x d``
matrix and a linear map is ``x @ T + b``. Mask tensors are ``B x C x H x W``;
the 1x1 convolutions are applied to the channels-last reshape.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from .embeddings import WordVectorTable


class ShapeError(ValueError):
    """Inputs whose shapes do not fit the parameters."""


def _check(cond: bool, msg: str):
    if not cond:
        raise ShapeError(msg)


class _Block:
    """Mixin for dataclasses whose fields are all numpy arrays."""

    prefix = ""

    def arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for f in fields(self):
            yield f"{self.prefix}.{f.name}", getattr(self, f.name)


@dataclass(frozen=True, eq=False)
class DetectorHeadParams(_Block):
    T_e: np.ndarray  # visual -> semantic encoder
    b_e: np.ndarray
    T_d: np.ndarray  # semantic -> visual decoder
    b_d: np.ndarray
    W_reg: np.ndarray  # class-agnostic box regression
    b_reg: np.ndarray

    prefix = "det"

    def __post_init__(self):
        dv, d = self.T_e.shape
        _check(self.b_e.shape == (d,), "det.b_e must match T_e columns")
        _check(self.T_d.shape == (d, dv), f"det.T_d must be {d}x{dv}, the transpose shape of T_e")
        _check(self.b_d.shape == (dv,), "det.b_d must match T_d columns")
        _check(self.W_reg.shape == (dv, 4) and self.b_reg.shape == (4,), "det box regressor must be dv x 4")

    @property
    def visual_dim(self) -> int:
        return self.T_e.shape[0]


@dataclass(frozen=True, eq=False)
class MaskHeadParams(_Block):
    E: np.ndarray  # C -> semantic, per pixel
    b_E: np.ndarray
    D: np.ndarray  # semantic -> C, per pixel
    b_D: np.ndarray

    prefix = "mask"

    def __post_init__(self):
        c, d = self.E.shape
        _check(self.b_E.shape == (d,), "mask.b_E must match E columns")
        _check(self.D.shape == (d, c), f"mask.D must be {d}x{c}, the transpose shape of E")
        _check(self.b_D.shape == (c,), "mask.b_D must match D columns")

    @property
    def channels(self) -> int:
        return self.E.shape[0]


@dataclass(frozen=True, eq=False)
class BaRpnParams(_Block):
    T: np.ndarray
    b_T: np.ndarray
    W_bf: np.ndarray  # column 0 = v_b, column 1 = v_f
    W_reg: np.ndarray
    b_reg: np.ndarray

    prefix = "rpn"

    def __post_init__(self):
        dv, d = self.T.shape
        _check(self.b_T.shape == (d,), "rpn.b_T must match T columns")
        _check(self.W_bf.shape == (d, 2), f"rpn.W_bf must be {d}x2")
        _check(self.W_reg.shape == (dv, 4) and self.b_reg.shape == (4,), "rpn box regressor must be dv x 4")

    @property
    def v_b(self) -> np.ndarray:
        return self.W_bf[:, 0]

    @property
    def v_f(self) -> np.ndarray:
        return self.W_bf[:, 1]


@dataclass(frozen=True, eq=False)
class ZsiParams:
    """All trainable parameters, addressable as named blocks such as ``det.T_e``."""

    det: DetectorHeadParams
    mask: MaskHeadParams
    rpn: BaRpnParams

    def __post_init__(self):
        d = self.det.T_e.shape[1]
        _check(self.mask.E.shape[1] == d and self.rpn.T.shape[1] == d, "heads disagree on semantic dimension")
        _check(self.rpn.T.shape[0] == self.det.visual_dim, "heads disagree on visual dimension")

    @property
    def semantic_dim(self) -> int:
        return self.det.T_e.shape[1]

    def blocks(self) -> dict[str, np.ndarray]:
        out = {}
        for head in (self.det, self.mask, self.rpn):
            out.update(head.arrays())
        return out

    @classmethod
    def from_blocks(cls, blocks: dict[str, np.ndarray]) -> "ZsiParams":
        heads = {}
        for name, kind in (("det", DetectorHeadParams), ("mask", MaskHeadParams), ("rpn", BaRpnParams)):
            kw = {f.name: np.asarray(blocks[f"{name}.{f.name}"]) for f in fields(kind)}
            heads[name] = kind(**kw)
        return cls(**heads)

    def map(self, fn) -> "ZsiParams":
        """Apply ``fn(name, array)`` to every block."""
        return ZsiParams.from_blocks({k: fn(k, v) for k, v in self.blocks().items()})

    def copy(self) -> "ZsiParams":
        return self.map(lambda _, a: np.array(a, copy=True))

    def astype(self, dtype) -> "ZsiParams":
        return self.map(lambda _, a: a.astype(dtype))


def init_params(
    visual_dim: int,
    channels: int,
    table: WordVectorTable,
    rng: np.random.Generator | None = None,
    scale: float = 0.0,
    dtype=np.float64,
) -> ZsiParams:
    """Fresh parameters.

    Linear maps are zero when ``scale`` is 0, else N(0, scale^2). In both cases
    ``v_b`` starts from the table's background row and ``v_f`` from the
    normalized mean of the seen class rows.
    """
    d = table.dim
    rng = rng if rng is not None else np.random.default_rng(0)

    def lin(*shape):
        if scale == 0.0:
            return np.zeros(shape, dtype=dtype)
        return (scale * rng.standard_normal(shape)).astype(dtype)

    v_b = np.array(table.background_row, dtype=dtype)
    mean = table.seen[1:].mean(axis=0) if len(table.seen_names) else np.zeros(d)
    norm = np.linalg.norm(mean)
    v_f = (mean / norm if norm > 0 else mean).astype(dtype)
    det = DetectorHeadParams(lin(visual_dim, d), lin(d), lin(d, visual_dim), lin(visual_dim), lin(visual_dim, 4), lin(4))
    mask = MaskHeadParams(lin(channels, d), lin(d), lin(d, channels), lin(channels))
    rpn = BaRpnParams(lin(visual_dim, d), lin(d), np.stack([v_b, v_f], axis=1), lin(visual_dim, 4), lin(4))
    return ZsiParams(det, mask, rpn)


# -- forward passes ---------------------------------------------------------


def _features(feats, dv) -> np.ndarray:
    feats = np.asarray(feats)
    _check(feats.ndim == 2 and feats.shape[1] == dv, f"features must be B x {dv}, got {feats.shape}")
    return feats


def _det(p: DetectorHeadParams, W: np.ndarray, x: np.ndarray):
    s = x @ p.T_e + p.b_e
    return s @ W.T, s, s @ p.T_d + p.b_d


def detector_forward(p: DetectorHeadParams, w: WordVectorTable, feats, which: str = "seen"):
    """(scores B x (n+1), semantic B x d, reconstruction B x dv)."""
    x = _features(feats, p.visual_dim)
    W = w.matrix(which)
    _check(W.shape[1] == p.T_e.shape[1], "table width differs from encoder output")
    return _det(p, W, x)


def _mask(p: MaskHeadParams, W: np.ndarray, g: np.ndarray):
    # g is channels-last (..., C); flattened so each product is one 2-D matmul
    lead = g.shape[:-1]
    g2 = np.ascontiguousarray(g).reshape(-1, g.shape[-1])
    sem = g2 @ p.E + p.b_E
    scores, recon = sem @ W.T, sem @ p.D + p.b_D
    return scores.reshape(*lead, -1), sem.reshape(*lead, -1), recon.reshape(*lead, -1)


def mask_head_forward(p: MaskHeadParams, w: WordVectorTable, feats, which: str = "seen"):
    """(pixel scores B x (n+1) x H x W, semantic map B x d x H x W, reconstruction B x C x H x W)."""
    feats = np.asarray(feats)
    _check(
        feats.ndim == 4 and feats.shape[1] == p.channels,
        f"mask features must be B x {p.channels} x H x W, got {feats.shape}",
    )
    W = w.matrix(which)
    _check(W.shape[1] == p.E.shape[1], "table width differs from mask encoder output")
    scores, sem, recon = _mask(p, W, feats.transpose(0, 2, 3, 1))
    back = (0, 3, 1, 2)
    return scores.transpose(back), sem.transpose(back), recon.transpose(back)


def _rpn(p: BaRpnParams, x: np.ndarray):
    u = x @ p.T + p.b_T
    return u @ p.W_bf, u


def ba_rpn_forward(p: BaRpnParams, feats):
    """(background/foreground scores B x 2, semantic B x d)."""
    return _rpn(p, _features(feats, p.T.shape[0]))


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def merge_scores(seen_scores, unseen_scores, temperature: float = 1.0) -> np.ndarray:
    """Combine the two branches into ``B x (1 + S + U)`` probabilities.

    Each branch is softmaxed on its own. Column 0 is the seen branch's
    background probability, followed by the seen then unseen class
    probabilities. Rows need not sum to one.
    """
    s = np.atleast_2d(np.asarray(seen_scores, dtype=np.float64))
    u = np.atleast_2d(np.asarray(unseen_scores, dtype=np.float64))
    _check(s.shape[0] == u.shape[0], "branches disagree on batch size")
    ps = softmax(s / temperature)
    pu = softmax(u / temperature)
    return np.concatenate([ps[:, :1], ps[:, 1:], pu[:, 1:]], axis=1)
