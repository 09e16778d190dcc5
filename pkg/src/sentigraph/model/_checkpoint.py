"""Binary encoder checkpoints: JSON header, float64 blob, sha256 trailer."""

import hashlib
import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._encoder import Encoder, EncoderConfig
from ._optim import Adam
from ._params import ParamSet

logger = logging.getLogger(__name__)

MAGIC = b"SGCKPT01"
_DIGEST_SIZE = hashlib.sha256().digest_size


@dataclass
class Checkpoint:
    """Everything needed to rebuild an encoder and continue training it."""

    encoder: Encoder
    step: int = 0
    optimizer: Adam | None = None
    extra: dict = field(default_factory=dict)


def _layout(params: ParamSet) -> list[dict]:
    return [{"name": name, "shape": list(array.shape)} for name, array in params.items()]


def _from_layout(layout: list[dict], blob: np.ndarray) -> tuple[ParamSet, int]:
    params, offset = ParamSet(), 0
    for entry in layout:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        params[entry["name"]] = blob[offset : offset + size].reshape(entry["shape"])
        offset += size
    return params, offset


def save_checkpoint(
    path: Path | str,
    encoder: Encoder,
    step: int = 0,
    optimizer: Adam | None = None,
    extra: dict | None = None,
) -> None:
    """Write a checkpoint atomically.

    Parameters
    ----------
    path : Path | str
        Destination file; replaced only once the new file is complete.
    encoder : Encoder
        Encoder whose config and parameters are stored.
    step : int
        Number of optimizer steps taken so far.
    optimizer : Adam | None
        Optimizer whose hyperparameters and moment estimates are stored, if any.
    extra : dict | None
        JSON-serialisable metadata (e.g. the pretraining variant).
    """
    path = Path(path)
    params = encoder.params
    has_moments = optimizer is not None and optimizer.m is not None
    header = {
        "config": encoder.config.to_dict(),
        "layout": _layout(params),
        "step": step,
        "optimizer": optimizer.state() if optimizer is not None else None,
        "has_moments": has_moments,
        "extra": extra or {},
    }
    chunks = [params.flat()]
    if has_moments:
        chunks += [optimizer.m.flat(), optimizer.v.flat()]
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes + np.concatenate(chunks).astype("<f8").tobytes()
    payload = body + hashlib.sha256(body).digest()

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=path.name, suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    logger.info(f"Saved checkpoint at step {step} to {path}")


def load_checkpoint(path: Path | str) -> Checkpoint:
    """Read and verify a checkpoint written by `save_checkpoint`.

    Raises
    ------
    ValueError
        If the file is truncated, has the wrong magic bytes or fails its checksum.
    """
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 + _DIGEST_SIZE or not data.startswith(MAGIC):
        raise ValueError(f"{path} is not an encoder checkpoint")
    body, digest = data[:-_DIGEST_SIZE], data[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise ValueError(f"Checksum mismatch in checkpoint {path}")

    (header_len,) = struct.unpack_from("<Q", body, len(MAGIC))
    start = len(MAGIC) + 8
    try:
        header = json.loads(body[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"Invalid checkpoint header in {path}") from e
    blob = np.frombuffer(body[start + header_len :], dtype="<f8").astype(np.float64)

    params, offset = _from_layout(header["layout"], blob)
    optimizer = None
    if header["optimizer"] is not None:
        m = v = None
        if header["has_moments"]:
            m, used = _from_layout(header["layout"], blob[offset:])
            v, _ = _from_layout(header["layout"], blob[offset + used :])
            offset += 2 * used
        optimizer = Adam.from_state(header["optimizer"], m, v)
    if offset != blob.size:
        raise ValueError(f"Checkpoint {path} holds {blob.size} values, header describes {offset}")

    encoder = Encoder(EncoderConfig(**header["config"]), params)
    return Checkpoint(encoder=encoder, step=header["step"], optimizer=optimizer, extra=header["extra"])
