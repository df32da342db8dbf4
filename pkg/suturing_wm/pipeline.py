"""
Facade module bundling the codec, the denoiser and an optional adapter
into one generative world model.
"""

__all__ = [
    "CODEC_FILE",
    "DENOISER_FILE",
    "ADAPTER_FILE",
    "SuturingWorldModel",
]

from pathlib import Path
from typing import Optional

import torch

from suturing_wm.adapters import LoRAAdapter, load_adapter, merge, save_adapter
from suturing_wm.buckets import ResolutionBucket
from suturing_wm.checkpoint import parameter_hash
from suturing_wm.codec import VideoCodec, load_codec, save_codec
from suturing_wm.denoiser import Denoiser, load_denoiser, save_denoiser
from suturing_wm.diffusion import generate_video
from suturing_wm.errors import ArtifactMissing, ConfigMismatch
from suturing_wm.guidance import GuidanceConfig
from suturing_wm.logger import logger

CODEC_FILE = "codec.safetensors"
DENOISER_FILE = "denoiser.safetensors"
ADAPTER_FILE = "adapter.safetensors"


class SuturingWorldModel:
    """
    Codec plus denoiser plus an optional LoRA adapter
    """

    def __init__(self, codec: VideoCodec, denoiser: Denoiser,
                 adapter: Optional[LoRAAdapter] = None):
        if codec.config.latent_channels != denoiser.config.latent_channels:
            raise ConfigMismatch(
                f"codec emits {codec.config.latent_channels} latent channels, "
                f"denoiser expects {denoiser.config.latent_channels}")
        self.codec = codec
        self.denoiser = denoiser
        self.adapter = adapter

    def encode(self, clip: torch.Tensor) -> torch.Tensor:
        """
        Encode a pixel clip

        Returns
        -------
        torch.Tensor
            (T', H', W', C_lat) latent.
        """
        with torch.no_grad():
            return self.codec.encode(clip)

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        """
        Decode a latent

        Returns
        -------
        torch.Tensor
            (T, H, W, 3) clip in [-1, 1].
        """
        with torch.no_grad():
            return self.codec.decode(latent)

    def attach_adapter(self, adapter: LoRAAdapter) -> None:
        """
        Use an adapter for every following generation
        """
        self.adapter = adapter

    def detach_adapter(self) -> Optional[LoRAAdapter]:
        """
        Stop using the current adapter

        Returns
        -------
        LoRAAdapter | None
            The adapter that was in use.
        """
        adapter, self.adapter = self.adapter, None
        return adapter

    def merged(self) -> "SuturingWorldModel":
        """
        Copy of the model with the adapter folded into the denoiser

        Returns
        -------
        SuturingWorldModel
            A model without adapter.
        """
        if self.adapter is None:
            return SuturingWorldModel(self.codec, self.denoiser)
        return SuturingWorldModel(self.codec, merge(self.denoiser, self.adapter))  # noqa: E501

    def generate(self, caption: str, guidance: GuidanceConfig, steps: int,
                 bucket: ResolutionBucket, seed: int,
                 first_frame: Optional[torch.Tensor] = None) -> torch.Tensor:
        """
        Generate a clip from a caption, and optionally a first frame

        Returns
        -------
        torch.Tensor
            (T, H, W, 3) clip in [-1, 1].
        """
        return generate_video(self.denoiser, self.codec, caption, guidance,
                              steps, bucket, seed, adapter=self.adapter,
                              first_frame=first_frame)

    def parameter_hash(self) -> str:
        """
        Hash of the base denoiser tensors

        Returns
        -------
        str
            Hex digest, unchanged by adapter training or evaluation.
        """
        return parameter_hash(self.denoiser)

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        save_codec(self.codec, directory / CODEC_FILE)
        save_denoiser(self.denoiser, directory / DENOISER_FILE)
        if self.adapter is not None:
            save_adapter(self.adapter, directory / ADAPTER_FILE)
        return directory

    @classmethod
    def load(cls, directory: str | Path, with_adapter: bool = True) -> "SuturingWorldModel":  # noqa: E501
        """
        Load a model saved with save()

        Raises
        ------
        ArtifactMissing
            If the codec or the denoiser checkpoint is missing.
        """
        directory = Path(directory)
        for name in (CODEC_FILE, DENOISER_FILE):
            if not (directory / name).is_file():
                raise ArtifactMissing(f"{directory / name} not found")
        codec = load_codec(directory / CODEC_FILE)
        denoiser = load_denoiser(directory / DENOISER_FILE)
        adapter = None
        if with_adapter and (directory / ADAPTER_FILE).is_file():
            adapter = load_adapter(directory / ADAPTER_FILE, denoiser)
        logger.info(f"Loaded world model from {directory} (adapter: {adapter is not None})")  # noqa  # pylint: disable=logging-fstring-interpolation
        return cls(codec, denoiser, adapter)
