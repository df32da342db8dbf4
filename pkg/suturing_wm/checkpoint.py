"""
Named-tensor checkpoints.

Every artifact (codec, denoiser, adapter) is a safetensors archive: a header
listing each tensor's name, dtype, shape and byte offsets, the contiguous
little-endian payloads, and a string metadata block carrying the artifact
kind and its JSON-encoded config.
"""

__all__ = [
    "save_checkpoint",
    "load_checkpoint",
    "check_config",
    "parameter_hash",
]

import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

import torch
from safetensors import safe_open
from safetensors.torch import save_file

from suturing_wm.errors import ArtifactMissing, CorruptCheckpoint
from suturing_wm.logger import logger

FORMAT_VERSION = "1"


def save_checkpoint(
        tensors: Mapping[str, torch.Tensor],
        path: str | Path,
        kind: str,
        config: Mapping[str, Any]) -> Path:
    """
    Write tensors and their config to a safetensors archive.

    Args:
        tensors (Mapping[str, torch.Tensor]): named tensors.
        path (str | Path): target file, parent directories are created.
        kind (str): artifact kind, checked again on load.
        config (Mapping[str, Any]): JSON-serialisable config.

    Returns:
        Path: the written file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {name: t.detach().cpu().contiguous() for name, t in tensors.items()}  # noqa: E501
    metadata = {
        "format": FORMAT_VERSION,
        "kind": kind,
        "config": json.dumps(dict(config), sort_keys=True),
    }
    save_file(payload, str(path), metadata=metadata)
    logger.info(f"Saved {kind} checkpoint with {len(payload)} tensors to {path}")  # noqa  # pylint: disable=logging-fstring-interpolation
    return path


def load_checkpoint(path: str | Path,
                    kind: str) -> tuple[dict[str, torch.Tensor], dict[str, Any]]:  # noqa: E501
    """
    Read a checkpoint written by save_checkpoint.

    Args:
        path (str | Path): checkpoint file.
        kind (str): expected artifact kind.

    Raises:
        ArtifactMissing: if the file does not exist.
        CorruptCheckpoint: if the header or payload cannot be read, or the
            file holds another kind of artifact.

    Returns:
        tuple[dict[str, torch.Tensor], dict[str, Any]]: tensors and config.
    """
    path = Path(path)
    if not path.is_file():
        raise ArtifactMissing(f"checkpoint {path} does not exist")
    try:
        with safe_open(str(path), framework="pt", device="cpu") as f:
            metadata = f.metadata() or {}
            tensors = {name: f.get_tensor(name) for name in f.keys()}
        config = json.loads(metadata["config"])
    except (KeyError, json.JSONDecodeError) as e:
        raise CorruptCheckpoint(f"{path}: metadata block is missing or unreadable ({e})") from e  # noqa: E501
    except Exception as e:  # safetensors raises its own error types
        raise CorruptCheckpoint(f"{path}: {e}") from e

    found = metadata.get("kind")
    if found != kind:
        raise CorruptCheckpoint(f"{path}: expected a {kind} checkpoint, found {found!r}")  # noqa: E501
    logger.info(f"Loaded {kind} checkpoint from {path}")  # noqa  # pylint: disable=logging-fstring-interpolation
    return tensors, config


def check_config(saved: Mapping[str, Any],
                 expected: Mapping[str, Any],
                 error: type[Exception] = CorruptCheckpoint,
                 source: str = "checkpoint") -> None:
    """
    Compare a saved config against the one the caller expects.

    Raises:
        error: naming the first field that differs.
    """
    for field, value in expected.items():
        if field not in saved:
            raise error(f"{source}: field {field!r} missing from saved config")
        if saved[field] != value:
            raise error(
                f"{source}: field {field!r} is {saved[field]!r} in the "
                f"checkpoint but {value!r} was expected")


def parameter_hash(module: torch.nn.Module) -> str:
    """
    SHA-256 over every named tensor of a module (parameters and buffers),
    in name order.

    Returns:
        str: hex digest.
    """
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        t = tensor.detach().cpu().contiguous()
        digest.update(name.encode("utf-8"))
        digest.update(str(t.dtype).encode("utf-8"))
        digest.update(str(tuple(t.shape)).encode("utf-8"))
        digest.update(t.reshape(-1).view(torch.uint8).numpy().tobytes())
    return digest.hexdigest()
