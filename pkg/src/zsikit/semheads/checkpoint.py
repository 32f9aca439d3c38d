"""Parameter checkpoints as ``.npz`` archives of named arrays."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .embeddings import WordVectorTable
from .heads import ZsiParams

FORMAT = "zsikit-params-1"


def save_checkpoint(path: str | Path, params: ZsiParams, table: WordVectorTable | None = None) -> None:
    arrays = {f"param/{k}": v for k, v in params.blocks().items()}
    if table is not None:
        arrays["table/seen"] = table.seen
        arrays["table/unseen"] = table.unseen
        arrays["table/seen_names"] = np.array(table.seen_names, dtype=str)
        arrays["table/unseen_names"] = np.array(table.unseen_names, dtype=str)
        arrays["table/background"] = np.array(table.background)
    arrays["format"] = np.array(FORMAT)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[ZsiParams, WordVectorTable | None]:
    with np.load(path, allow_pickle=False) as z:
        if "format" not in z.files or str(z["format"]) != FORMAT:
            raise ValueError(f"{path}: not a zsikit parameter checkpoint")
        blocks = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
        params = ZsiParams.from_blocks(blocks)
        table = None
        if "table/seen" in z.files:
            table = WordVectorTable(
                z["table/seen"],
                z["table/unseen"],
                tuple(str(s) for s in z["table/seen_names"]),
                tuple(str(s) for s in z["table/unseen_names"]),
                str(z["table/background"]),
            )
    return params, table
