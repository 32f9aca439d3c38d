"""Synthetic linear-generative scenarios for zero-shot transfer experiments.

A class ``c`` with embedding ``w_c`` produces visual features
``x = M @ w_c + sigma * noise``. Since ``M`` has full column rank, a linear
encoder can invert it, so a model trained on seen classes scores unseen
classes correctly exactly when the embeddings share structure across the two
sets. One-hot embeddings share none.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.stats import chi2_contingency

from .semheads import (
    FeatureBatch,
    LossConfig,
    TrainConfig,
    WordVectorTable,
    init_params,
    sync_background,
    train_loop,
)

EMBEDDINGS = ("structured", "one-hot", "orthonormal")


class ScenarioError(ValueError):
    """Invalid synthetic scenario."""


@dataclass(frozen=True, eq=False)
class SyntheticScenario:
    n_seen: int = 12
    n_unseen: int = 5
    embedding: str = "structured"
    subspace_rank: int = 8  # structured embeddings only
    semantic_dim: int = 300
    visual_dim: int = 320
    channels: int = 8
    mask_size: int = 5
    noise_sigma: float = 0.1
    samples_per_class: int = 40
    background_samples: int = 80
    test_samples_per_class: int = 200
    seed: int = 0
    M: np.ndarray | None = field(default=None, repr=False)  # generated from the seed when omitted

    def __post_init__(self):
        if self.embedding not in EMBEDDINGS:
            raise ScenarioError(f"embedding must be one of {EMBEDDINGS}, got {self.embedding!r}")
        if min(self.n_seen, self.n_unseen, self.samples_per_class, self.test_samples_per_class) < 1:
            raise ScenarioError("class and sample counts must be positive")
        if self.background_samples < 0 or self.noise_sigma < 0 or not np.isfinite(self.noise_sigma):
            raise ScenarioError("background_samples and noise_sigma must be non-negative")
        if self.mask_size < 2 or self.channels < 1:
            raise ScenarioError("mask_size must be >= 2 and channels >= 1")
        n = self.n_seen + self.n_unseen + 1
        if self.embedding != "structured" and n > self.semantic_dim:
            raise ScenarioError(f"{self.embedding} embeddings need semantic_dim >= {n}")
        if self.embedding == "structured" and not 1 <= self.subspace_rank <= self.semantic_dim:
            raise ScenarioError("subspace_rank must lie in [1, semantic_dim]")
        M = self.generator
        if M.shape != (self.visual_dim, self.semantic_dim):
            raise ScenarioError(f"M must be {self.visual_dim}x{self.semantic_dim}, got {M.shape}")
        if np.linalg.matrix_rank(M) < self.semantic_dim:
            raise ScenarioError("generative matrix M is rank deficient")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticScenario":
        names = {f.name for f in fields(cls)} - {"M"}
        unknown = set(d) - names
        if unknown:
            raise ScenarioError(f"unknown scenario keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ScenarioError(f"invalid scenario value: {exc}") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("M")
        return d

    def _rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream])

    @cached_property
    def generator(self) -> np.ndarray:
        if self.M is not None:
            return np.asarray(self.M, dtype=np.float64)
        return self._rng(0).standard_normal((self.visual_dim, self.semantic_dim))

    @cached_property
    def _embeddings(self):
        rng = self._rng(1)
        d, n = self.semantic_dim, self.n_seen + self.n_unseen
        if self.embedding == "one-hot":
            vecs = np.eye(n + 1, d)
        elif self.embedding == "orthonormal":
            q, _ = np.linalg.qr(rng.standard_normal((d, n + 1)))
            vecs = q.T
        else:
            basis, _ = np.linalg.qr(rng.standard_normal((d, self.subspace_rank)))
            cls = rng.standard_normal((n, self.subspace_rank)) @ basis.T
            bg = rng.standard_normal(d)
            vecs = np.vstack([bg, cls])
        return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)

    @property
    def seen_names(self) -> tuple[str, ...]:
        return tuple(f"seen{i}" for i in range(self.n_seen))

    @property
    def unseen_names(self) -> tuple[str, ...]:
        return tuple(f"unseen{i}" for i in range(self.n_unseen))

    @cached_property
    def table(self) -> WordVectorTable:
        v = self._embeddings
        names = self.seen_names + self.unseen_names
        vectors = {"background": v[0], **dict(zip(names, v[1:]))}
        return WordVectorTable.from_vectors(vectors, self.seen_names, self.unseen_names)

    @cached_property
    def class_embeddings(self) -> np.ndarray:
        """Rows for combined labels 1..S+U (row 0 unused)."""
        return self._embeddings

    @cached_property
    def _latent(self):
        # hidden background direction, mask generator, box map, per-class regions
        rng = self._rng(2)
        d = self.semantic_dim
        h = rng.standard_normal(d)
        P = rng.standard_normal((self.channels, d))
        G = rng.standard_normal((4, d))
        k = self.mask_size
        regions = []
        for _ in range(self.n_seen + self.n_unseen):
            y0, x0 = rng.integers(0, k - 1, 2)
            y1 = int(rng.integers(y0 + 2, k + 1))
            x1 = int(rng.integers(x0 + 2, k + 1))
            regions.append((int(y0), y1, int(x0), x1))
        return h / np.linalg.norm(h), P, G, regions


def _sample(s: SyntheticScenario, labels: np.ndarray, rng: np.random.Generator) -> FeatureBatch:
    """Features for combined labels (0 background, 1..S seen, S+1..S+U unseen)."""
    h, P, G, regions = s._latent
    W = s.class_embeddings.copy()
    W[0] = h
    w = W[labels]
    b = labels.size
    k = s.mask_size
    x = w @ s.generator.T + s.noise_sigma * rng.standard_normal((b, s.visual_dim))
    region = np.zeros((b, k, k))
    for i, c in enumerate(labels):
        if c > 0:
            y0, y1, x0, x1 = regions[c - 1]
            region[i, y0:y1, x0:x1] = 1.0
    fg_feat = w @ P.T  # b x C
    bg_feat = h @ P.T
    m = region[..., None] * fg_feat[:, None, None, :] + (1 - region[..., None]) * bg_feat
    m = m + s.noise_sigma * rng.standard_normal(m.shape)
    boxes = w @ G.T
    return FeatureBatch(x, m.transpose(0, 3, 1, 2), labels, boxes, region.astype(np.uint8))


def generate(s: SyntheticScenario) -> tuple[FeatureBatch, FeatureBatch]:
    """(train, test) batches.

    Train holds seen classes and background, labelled by seen-table row.
    Test holds seen and unseen objects under combined labels, so unseen class
    ``j`` (1-based within the unseen table) has label ``S + j``.
    """
    rng = s._rng(3)
    train_labels = np.concatenate(
        [np.zeros(s.background_samples, dtype=np.int64), np.repeat(np.arange(1, s.n_seen + 1), s.samples_per_class)]
    )
    test_labels = np.repeat(np.arange(1, s.n_seen + s.n_unseen + 1), s.test_samples_per_class)
    return _sample(s, train_labels, rng), _sample(s, test_labels, rng)


@dataclass
class TransferReport:
    unseen_accuracy: float
    seen_accuracy: float
    chance: float
    per_class: dict[str, dict]
    unseen_true: np.ndarray = field(repr=False)
    unseen_pred: np.ndarray = field(repr=False)
    losses: np.ndarray = field(repr=False)
    v_b_shift: float = 0.0
    independence_p: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "unseen_accuracy": self.unseen_accuracy,
            "seen_accuracy": self.seen_accuracy,
            "chance": self.chance,
            "independence_p": self.independence_p,
            "v_b_shift": self.v_b_shift,
            "steps": int(self.losses.size),
            "final_loss": float(self.losses[-1]) if self.losses.size else None,
            "per_class": self.per_class,
        }


def _argmax_random_ties(scores: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # exact ties are common with one-hot embeddings; break them uniformly
    top = scores == scores.max(axis=1, keepdims=True)
    noise = rng.random(scores.shape)
    return np.argmax(np.where(top, noise, -1.0), axis=1)


def label_independence_p(true: np.ndarray, pred: np.ndarray) -> float:
    """Chi-square test p-value for independence of true and predicted labels."""
    _, ti = np.unique(true, return_inverse=True)
    _, pi = np.unique(pred, return_inverse=True)
    table = np.zeros((ti.max() + 1, pi.max() + 1))
    np.add.at(table, (ti, pi), 1)
    if min(table.shape) < 2:
        return 1.0  # a constant is independent of anything
    return float(chi2_contingency(table, correction=False).pvalue)


DEFAULT_TRAINING = TrainConfig(steps=40, lr=0.002, momentum=0.9, loss=LossConfig())


def run_transfer_experiment(s: SyntheticScenario, config: TrainConfig = DEFAULT_TRAINING) -> TransferReport:
    """Train on the seen split with background sync, then classify test objects.

    Seen test objects are classified among seen classes and unseen test
    objects among unseen classes, both by the argmax over non-background
    columns of the detector's semantic scores.
    """
    train, test = generate(s)
    table = s.table
    params = init_params(s.visual_dim, s.channels, table)
    result = train_loop(train, params, table, config)
    p, table = result.params, sync_background(result.params.rpn.v_b, result.table)

    sem = test.features @ p.det.T_e + p.det.b_e
    rng = s._rng(4)
    S = s.n_seen
    labels = test.labels
    seen_mask = labels <= S
    seen_pred = 1 + _argmax_random_ties(sem[seen_mask] @ table.seen[1:].T, rng)
    unseen_pred = 1 + _argmax_random_ties(sem[~seen_mask] @ table.unseen[1:].T, rng)
    seen_true = labels[seen_mask]
    unseen_true = labels[~seen_mask] - S

    per_class = {}
    for name, true, pred, j in (
        [(n, seen_true, seen_pred, i + 1) for i, n in enumerate(s.seen_names)]
        + [(n, unseen_true, unseen_pred, i + 1) for i, n in enumerate(s.unseen_names)]
    ):
        sel = true == j
        per_class[name] = {"n": int(sel.sum()), "accuracy": float(np.mean(pred[sel] == j))}

    return TransferReport(
        unseen_accuracy=float(np.mean(unseen_pred == unseen_true)),
        seen_accuracy=float(np.mean(seen_pred == seen_true)),
        chance=1.0 / s.n_unseen,
        per_class=per_class,
        unseen_true=unseen_true,
        unseen_pred=unseen_pred,
        losses=result.losses,
        v_b_shift=float(np.linalg.norm(result.params.rpn.v_b - params.rpn.v_b)),
        independence_p=label_independence_p(unseen_true, unseen_pred),
    )


def check_thresholds(report: TransferReport, embedding: str, thresholds: dict | None = None) -> list[tuple]:
    """(criterion, value, bound, passed) rows for the embedding kind's frozen thresholds."""
    t = thresholds if thresholds is not None else default_thresholds()
    rows = [("v_b_shift", report.v_b_shift, t["v_b_shift_min"], report.v_b_shift > t["v_b_shift_min"])]
    if embedding == "structured":
        lo = t["structured_unseen_accuracy_min"]
        rows.append(("unseen_accuracy >=", report.unseen_accuracy, lo, report.unseen_accuracy >= lo))
    elif embedding == "one-hot":
        hi = t["one_hot_unseen_accuracy_max_chance_multiple"] * report.chance
        p = t["one_hot_independence_p_min"]
        rows.append(("unseen_accuracy <=", report.unseen_accuracy, hi, report.unseen_accuracy <= hi))
        rows.append(("independence_p >", report.independence_p, p, report.independence_p > p))
    return rows


def _data(name: str) -> dict:
    return json.loads(resources.files("zsikit").joinpath("data", name).read_text(encoding="utf-8"))


def default_thresholds() -> dict:
    return _data("synthlab_thresholds.json")


def default_config() -> tuple[SyntheticScenario, TrainConfig]:
    """The shipped scenario and training configuration."""
    return config_from_dict(_data("synthlab_default.json"))


def config_from_dict(d: dict) -> tuple[SyntheticScenario, TrainConfig]:
    if not isinstance(d, dict):
        raise ScenarioError("config must be a JSON object")
    scenario = SyntheticScenario.from_dict(d.get("scenario", {}))
    t = dict(d.get("training", {}))
    try:
        loss = LossConfig(**t.pop("loss", {}))
        return scenario, TrainConfig(loss=loss, **t)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid training config: {exc}") from None


def load_config(path: str | Path) -> tuple[SyntheticScenario, TrainConfig]:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))
