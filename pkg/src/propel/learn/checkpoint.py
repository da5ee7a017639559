"""Model checkpoints: a JSON header plus one flat float64 parameter array.

Files are ``.npz`` archives with two members, ``header`` (UTF-8 JSON stored as
bytes) and ``params``. The header carries the format version and a ``kind``
tag so a Q-network file is never mistaken for a fix-model file.
"""

from __future__ import annotations

import io
import json
import os
from pathlib import Path

import numpy as np

from ..exceptions import CheckpointError

FORMAT = "propel-ckpt/1"


def save_checkpoint(path: str | os.PathLike, kind: str, header: dict, params: np.ndarray) -> None:
    head = dict(header, format=FORMAT, kind=kind)
    blob = np.frombuffer(json.dumps(head, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, header=blob, params=np.asarray(params, dtype=np.float64))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike, kind: str) -> tuple[dict, np.ndarray]:
    try:
        with np.load(Path(path), allow_pickle=False) as z:
            head = json.loads(bytes(z["header"]).decode())
            params = np.array(z["params"], dtype=np.float64)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint {path} does not exist") from None
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if head.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {head.get('format')!r}")
    if head.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind!r} checkpoint, found {head.get('kind')!r}")
    return head, params
