"""Fixed class word-vector tables and background synchronization."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

DEFAULT_DIM = 300
BACKGROUND_TOKEN = "background"


class EmbeddingError(ValueError):
    """Missing, malformed or unusable word vectors."""


def _frozen(a, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WordVectorTable:
    """Seen and unseen class embeddings, each with the shared background in row 0."""

    seen: np.ndarray
    unseen: np.ndarray
    seen_names: tuple[str, ...]
    unseen_names: tuple[str, ...]
    background: str = BACKGROUND_TOKEN
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        seen = np.asarray(self.seen)
        unseen = np.asarray(self.unseen)
        if seen.ndim != 2 or unseen.ndim != 2 or seen.shape[1] != unseen.shape[1]:
            raise EmbeddingError(f"incompatible table shapes {seen.shape} and {unseen.shape}")
        if len(self.seen_names) + 1 != seen.shape[0] or len(self.unseen_names) + 1 != unseen.shape[0]:
            raise EmbeddingError("row counts must be number of classes plus one background row")
        if not (np.isfinite(seen).all() and np.isfinite(unseen).all()):
            raise EmbeddingError("table contains non-finite values")
        if not np.array_equal(seen[0], unseen[0]):
            raise EmbeddingError("seen and unseen background rows differ")
        names = tuple(self.seen_names) + tuple(self.unseen_names)
        if len(set(names)) != len(names) or self.background in names:
            raise EmbeddingError("class names must be unique and distinct from the background token")
        dtype = seen.dtype if seen.dtype in (np.float32, np.float64) else np.float64
        object.__setattr__(self, "seen", _frozen(seen, dtype))
        object.__setattr__(self, "unseen", _frozen(unseen, dtype))
        object.__setattr__(self, "seen_names", tuple(self.seen_names))
        object.__setattr__(self, "unseen_names", tuple(self.unseen_names))
        index = {self.background: ("seen", 0)}
        index.update({n: ("seen", i) for i, n in enumerate(self.seen_names, start=1)})
        index.update({n: ("unseen", i) for i, n in enumerate(self.unseen_names, start=1)})
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_vectors(
        cls,
        vectors: Mapping[str, Sequence[float]],
        seen: Sequence[str],
        unseen: Sequence[str] = (),
        background: str = BACKGROUND_TOKEN,
    ) -> "WordVectorTable":
        """Build an l2-normalized table from a name -> vector mapping."""
        missing = [n for n in (background, *seen, *unseen) if n not in vectors]
        if missing:
            raise EmbeddingError(f"no vector for {missing}")
        bg = _unit(vectors[background], background)
        s = np.stack([bg] + [_unit(vectors[n], n) for n in seen])
        u = np.stack([bg] + [_unit(vectors[n], n) for n in unseen])
        return cls(s, u, tuple(seen), tuple(unseen), background)

    @property
    def dim(self) -> int:
        return self.seen.shape[1]

    @property
    def background_row(self) -> np.ndarray:
        return self.seen[0]

    def matrix(self, which: str) -> np.ndarray:
        if which == "seen":
            return self.seen
        if which == "unseen":
            return self.unseen
        raise ValueError(f"which must be 'seen' or 'unseen', got {which!r}")

    def names(self, which: str) -> tuple[str, ...]:
        return self.seen_names if which == "seen" else self.unseen_names

    def index(self, name: str) -> tuple[str, int]:
        """(which, row) for a class name or the background token."""
        try:
            return self._index[name]
        except KeyError:
            raise EmbeddingError(f"unknown class {name!r}") from None

    def astype(self, dtype) -> "WordVectorTable":
        return WordVectorTable(
            self.seen.astype(dtype), self.unseen.astype(dtype), self.seen_names, self.unseen_names, self.background
        )


def _unit(v, name) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if not np.isfinite(v).all():
        raise EmbeddingError(f"vector for {name!r} is not finite")
    n = np.linalg.norm(v)
    if n == 0:
        raise EmbeddingError(f"vector for {name!r} is zero and cannot be normalized")
    return v / n


def sync_background(v_b: np.ndarray, w: WordVectorTable) -> WordVectorTable:
    """New table whose seen and unseen background rows are both exactly ``v_b``.

    ``v_b`` is used as learned, without re-normalization.
    """
    v_b = np.asarray(v_b, dtype=w.seen.dtype)
    if v_b.shape != (w.dim,):
        raise EmbeddingError(f"background vector has shape {v_b.shape}, expected ({w.dim},)")
    if not np.isfinite(v_b).all():
        raise EmbeddingError("background vector is not finite")
    if np.array_equal(v_b, w.seen[0]):
        return w
    seen = np.array(w.seen)
    unseen = np.array(w.unseen)
    seen[0] = v_b
    unseen[0] = v_b
    return WordVectorTable(seen, unseen, w.seen_names, w.unseen_names, w.background)


def _candidates(name: str) -> list[tuple[str, ...]]:
    words = name.replace("_", " ").split()
    out = [(name,), ("_".join(words),)]
    if len(words) > 1:
        out.append(tuple(words))
    return out


def load_embeddings(
    path: str | Path,
    seen: Sequence[str],
    unseen: Sequence[str] = (),
    background: str = BACKGROUND_TOKEN,
    dim: int = DEFAULT_DIM,
) -> WordVectorTable:
    """Read a word2vec text file and build a normalized table.

    A multi-word class name is looked up as given, then underscore-joined,
    then as the mean of its words' vectors.
    """
    wanted = {}
    for name in (background, *seen, *unseen):
        wanted[name] = _candidates(name)
    tokens = {t for cands in wanted.values() for cand in cands for t in cand}
    found: dict[str, np.ndarray] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2 or not all(h.isdigit() for h in header):
                raise EmbeddingError(f"{path}: first line must be '<count> <dim>'")
            if int(header[1]) != dim:
                raise EmbeddingError(f"{path}: vectors have dimension {header[1]}, expected {dim}")
            for lineno, line in enumerate(fh, start=2):
                token, _, rest = line.rstrip("\n").partition(" ")
                if token not in tokens or token in found:
                    continue
                try:
                    vec = np.array(rest.split(), dtype=np.float64)
                except ValueError:
                    raise EmbeddingError(f"{path}:{lineno}: non-numeric vector for {token!r}") from None
                if vec.shape != (dim,):
                    raise EmbeddingError(f"{path}:{lineno}: {token!r} has {vec.size} values, expected {dim}")
                found[token] = vec
    except UnicodeDecodeError as exc:
        raise EmbeddingError(f"{path}: not a UTF-8 text file ({exc.reason})") from None

    vectors = {}
    for name, cands in wanted.items():
        for cand in cands:
            if all(t in found for t in cand):
                vectors[name] = np.mean([found[t] for t in cand], axis=0)
                break
        else:
            raise EmbeddingError(f"{path}: no vector for {name!r}")
    return WordVectorTable.from_vectors(vectors, seen, unseen, background)
