"""
Clip storage: directories of numbered lossless PNG frames.
"""

__all__ = [
    "FRAME_PATTERN",
    "to_uint8",
    "from_uint8",
    "write_frames",
    "read_frames",
    "list_frames",
    "export_container",
]

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from suturing_wm.errors import ArtifactMissing, ShapeError
from suturing_wm.logger import logger

FRAME_PATTERN = "{index:05d}.png"


def to_uint8(video: torch.Tensor) -> np.ndarray:
    """
    Map a [-1, 1] video onto the 8-bit grid.

    Args:
        video (torch.Tensor): (T, H, W, 3) values in [-1, 1].

    Returns:
        np.ndarray: (T, H, W, 3) uint8.
    """
    x = video.detach().to(torch.float64).clamp(-1.0, 1.0)
    return torch.round((x + 1.0) * 127.5).to(torch.uint8).cpu().numpy()


def from_uint8(frames: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(frames.astype(np.float32) / np.float32(127.5) - np.float32(1.0))  # noqa: E501


def list_frames(directory: str | Path) -> list[Path]:
    """
    List the frame files of a clip directory in frame order.

    Args:
        directory (str | Path): clip directory.

    Returns:
        list[Path]: sorted frame paths.
    """
    return sorted(Path(directory).glob("[0-9]" * 5 + ".png"))


def write_frames(video: torch.Tensor, directory: str | Path) -> list[Path]:
    """
    Write a clip as zero-padded PNG frames.

    Args:
        video (torch.Tensor): (T, H, W, 3) values in [-1, 1].
        directory (str | Path): target directory, created if needed.

    Returns:
        list[Path]: written frame paths.
    """
    if video.ndim != 4 or video.shape[-1] != 3:
        raise ShapeError(f"expected a (T, H, W, 3) clip, got {tuple(video.shape)}")  # noqa: E501
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for index, frame in enumerate(to_uint8(video)):
        path = directory / FRAME_PATTERN.format(index=index)
        Image.fromarray(frame).save(path, format="PNG")
        paths.append(path)
    logger.debug(f"Wrote {len(paths)} frames to {directory}")  # noqa  # pylint: disable=logging-fstring-interpolation
    return paths


def read_frames(directory: str | Path) -> torch.Tensor:
    """
    Read a clip directory back into a [-1, 1] video.

    Args:
        directory (str | Path): clip directory.

    Raises:
        ArtifactMissing: if the directory holds no frames.

    Returns:
        torch.Tensor: (T, H, W, 3) float32.
    """
    paths = list_frames(directory)
    if not paths:
        raise ArtifactMissing(f"no frames found in {directory}")
    frames = []
    for path in paths:
        with Image.open(path) as img:
            frames.append(np.asarray(img.convert("RGB"), dtype=np.uint8))
    return from_uint8(np.stack(frames))


def export_container(video: torch.Tensor, path: str | Path) -> Path:
    """
    Export a clip as a single compressed numpy archive. The frame directory
    stays the source of truth.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, frames=to_uint8(video))
    logger.info(f"Exported container {path}")  # noqa  # pylint: disable=logging-fstring-interpolation
    return path
