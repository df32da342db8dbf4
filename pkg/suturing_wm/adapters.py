"""
Low-rank adapters for the denoiser's linear layers.

An adapter owns one (A, B) pair per target layer. Attaching it swaps each
target ``nn.Linear`` for a ``LoRALinear`` that adds
(alpha / rank) * B @ A @ x to the frozen base output; detaching swaps the
original layers back. Base weights are never written to, except by merge,
which works on a copy.
"""

__all__ = [
    "LoRAConfig",
    "LoRALayer",
    "LoRALinear",
    "LoRAAdapter",
    "default_targets",
    "create_adapter",
    "attach",
    "detach",
    "attached",
    "inject",
    "merge",
    "save_adapter",
    "load_adapter",
]

import contextlib
import copy
import dataclasses
import math
from pathlib import Path
from typing import Iterator, Sequence

import torch
from torch import nn

from suturing_wm.checkpoint import load_checkpoint, save_checkpoint
from suturing_wm.errors import (
    ConfigError,
    ConfigMismatch,
    CorruptCheckpoint,
    PreconditionError,
    RankTooLarge,
    UnknownTarget,
)
from suturing_wm.logger import logger

ADAPTER_KIND = "adapter"

TARGET_SUFFIXES = ("attn.qkv", "attn.proj", "mlp.fc1", "mlp.fc2")


@dataclasses.dataclass(frozen=True)
class LoRAConfig:
    """
    Attributes
    ----------
    rank: Rank of every (A, B) pair.
    alpha: Scale numerator; the delta is (alpha / rank) * B @ A.
    targets: Dotted names of the linear layers to adapt; empty means every
        attention projection and feed-forward layer.
    """
    rank: int = 8
    alpha: float = 8.0
    targets: tuple[str, ...] = ()

    def __post_init__(self):
        if int(self.rank) < 1:
            raise ConfigError("lora.rank", f"must be >= 1, got {self.rank}")
        if float(self.alpha) <= 0:
            raise ConfigError("lora.alpha", f"must be positive, got {self.alpha}")  # noqa: E501
        object.__setattr__(self, "targets", tuple(self.targets))

    @property
    def scaling(self) -> float:
        return float(self.alpha) / int(self.rank)


def default_targets(num_layers: int) -> list[str]:
    """Attention and feed-forward linears of every block."""
    return [f"blocks.{i}.{suffix}" for i in range(num_layers) for suffix in TARGET_SUFFIXES]  # noqa: E501


class LoRALayer(nn.Module):
    """One (A, B) pair. B starts at zero so a fresh layer adds nothing."""

    def __init__(self, in_features: int, out_features: int, rank: int):
        super().__init__()
        self.lora_A = nn.Parameter(torch.zeros(rank, in_features))
        self.lora_B = nn.Parameter(torch.zeros(out_features, rank))

    @property
    def in_features(self) -> int:
        return self.lora_A.shape[1]

    @property
    def out_features(self) -> int:
        return self.lora_B.shape[0]

    def delta_weight(self, scaling: float) -> torch.Tensor:
        return scaling * (self.lora_B @ self.lora_A)

    def forward(self, x: torch.Tensor, scaling: float) -> torch.Tensor:
        return scaling * ((x @ self.lora_A.T) @ self.lora_B.T)


class LoRALinear(nn.Module):
    """
    A frozen linear layer plus a low-rank update.
    """

    def __init__(self, base: nn.Linear, lora: LoRALayer, scaling: float):
        super().__init__()
        self.base = base
        self.lora = lora
        self.scaling = scaling

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.lora(x, self.scaling)


def _key(target: str) -> str:
    return target.replace(".", "__")


class LoRAAdapter(nn.Module):
    """
    Trainable low-rank update over a set of target layers.

    Attributes
    ----------
    config: rank, alpha and resolved targets.
    layers: One LoRALayer per target, keyed by the target name with dots
        replaced by double underscores.
    """

    def __init__(self, config: LoRAConfig, shapes: dict[str, tuple[int, int]]):  # noqa: E501
        super().__init__()
        self.config = dataclasses.replace(config, targets=tuple(shapes))
        self.layers = nn.ModuleDict({
            _key(target): LoRALayer(d_in, d_out, config.rank)
            for target, (d_in, d_out) in shapes.items()
        })

    @property
    def targets(self) -> tuple[str, ...]:
        return self.config.targets

    @property
    def rank(self) -> int:
        return self.config.rank

    @property
    def alpha(self) -> float:
        return self.config.alpha

    @property
    def scaling(self) -> float:
        return self.config.scaling

    def layer(self, target: str) -> LoRALayer:
        return self.layers[_key(target)]

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "alpha": self.alpha,
            "targets": list(self.targets),
            "shapes": {t: [self.layer(t).in_features, self.layer(t).out_features]  # noqa: E501
                       for t in self.targets},
        }


def _resolve(model: nn.Module, target: str) -> nn.Linear:
    try:
        module = model.get_submodule(target)
    except AttributeError as e:
        raise UnknownTarget(f"{target!r} is not a module of the model") from e
    if isinstance(module, LoRALinear):
        module = module.base
    if not isinstance(module, nn.Linear):
        raise UnknownTarget(f"{target!r} is a {type(module).__name__}, not a linear layer")  # noqa: E501
    return module


def _set_submodule(model: nn.Module, target: str, module: nn.Module) -> None:
    parent_name, _, child = target.rpartition(".")
    parent = model.get_submodule(parent_name) if parent_name else model
    setattr(parent, child, module)


def create_adapter(model: nn.Module,
                   targets: Sequence[str] | None = None,
                   rank: int = 8,
                   alpha: float = 8.0,
                   seed: int = 0) -> LoRAAdapter:
    """
    Build a fresh adapter for a model without attaching it.

    A is drawn uniformly from [-1/sqrt(d_in), 1/sqrt(d_in)] with a seeded
    generator, B is zero.

    Raises:
        UnknownTarget: if a target names no linear layer.
        RankTooLarge: if rank exceeds min(d_in, d_out) of a target.
    """
    if rank < 1:
        raise PreconditionError(f"rank must be >= 1, got {rank}")
    if targets is None or len(targets) == 0:
        targets = default_targets(len(getattr(model, "blocks", [])))
    shapes: dict[str, tuple[int, int]] = {}
    for target in targets:
        linear = _resolve(model, target)
        if rank > min(linear.in_features, linear.out_features):
            raise RankTooLarge(
                f"rank {rank} exceeds min(d_in, d_out) = "
                f"{min(linear.in_features, linear.out_features)} of {target!r}")
        shapes[target] = (linear.in_features, linear.out_features)

    adapter = LoRAAdapter(LoRAConfig(rank=rank, alpha=alpha), shapes)
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for target in adapter.targets:
            layer = adapter.layer(target)
            bound = 1.0 / math.sqrt(layer.in_features)
            layer.lora_A.copy_((torch.rand(layer.lora_A.shape, generator=generator) * 2.0 - 1.0) * bound)  # noqa: E501
    return adapter


def attach(model: nn.Module, adapter: LoRAAdapter) -> None:
    """
    Swap every target linear of ``model`` for a LoRALinear sharing the
    adapter's parameters.

    Raises:
        UnknownTarget: if a target is missing from the model.
        ConfigMismatch: if a target layer has different dims.
    """
    for target in adapter.targets:
        linear = _resolve(model, target)
        layer = adapter.layer(target)
        if (linear.in_features, linear.out_features) != (layer.in_features, layer.out_features):  # noqa: E501
            raise ConfigMismatch(
                f"{target!r}: adapter is {layer.in_features}->{layer.out_features}, "  # noqa: E501
                f"model layer is {linear.in_features}->{linear.out_features}")
    reference = next(model.parameters())
    adapter.to(device=reference.device, dtype=reference.dtype)
    for target in adapter.targets:
        linear = _resolve(model, target)
        _set_submodule(model, target, LoRALinear(linear, adapter.layer(target), adapter.scaling))  # noqa: E501
    logger.debug(f"Attached adapter on {len(adapter.targets)} layers")  # noqa  # pylint: disable=logging-fstring-interpolation


def detach(model: nn.Module, adapter: LoRAAdapter | None = None) -> None:
    """
    Restore LoRALinear layers of ``model`` to their base layer.

    With ``adapter`` only the layers carrying that adapter are restored;
    other adapters stay attached.
    """
    owned = None if adapter is None else {id(m) for m in adapter.layers.values()}  # noqa: E501
    wrapped = [name for name, m in model.named_modules()
               if isinstance(m, LoRALinear) and (owned is None or id(m.lora) in owned)]  # noqa: E501
    for name in wrapped:
        _set_submodule(model, name, model.get_submodule(name).base)


@contextlib.contextmanager
def attached(model: nn.Module, adapter: LoRAAdapter | None) -> Iterator[nn.Module]:  # noqa: E501
    """
    Attach an adapter for the duration of a block; a None adapter is a no-op.

    On exit every target layer is put back as it was, so an adapter that
    was attached before the block is attached again afterwards.
    """
    if adapter is None:
        yield model
        return
    for target in adapter.targets:
        _resolve(model, target)
    previous = {target: model.get_submodule(target) for target in adapter.targets}  # noqa: E501
    attach(model, adapter)
    try:
        yield model
    finally:
        for target, module in previous.items():
            _set_submodule(model, target, module)


def inject(model: nn.Module,
           targets: Sequence[str] | None = None,
           rank: int = 8,
           alpha: float = 8.0,
           seed: int = 0) -> LoRAAdapter:
    """
    Create a fresh adapter and attach it to ``model``.

    Because B starts at zero the model's outputs are unchanged.

    Args:
        model (nn.Module): denoiser to adapt.
        targets (Sequence[str] | None): dotted layer names; None or empty
            selects every attention and feed-forward linear.
        rank (int): adapter rank, at least 1.
        alpha (float): scale numerator.
        seed (int): seed of A's initialisation.

    Raises:
        UnknownTarget: if a target names no linear layer.
        RankTooLarge: if rank exceeds a target's smallest dim.

    Returns:
        LoRAAdapter: the attached adapter.
    """
    adapter = create_adapter(model, targets, rank, alpha, seed)
    attach(model, adapter)
    return adapter


def merge(model: nn.Module, adapter: LoRAAdapter) -> nn.Module:
    """
    Fold an adapter into a copy of the model's weights.

    The copy has no adapter structure. Merging the same adapter into an
    already merged model adds the delta a second time.

    Raises:
        UnknownTarget: if a target is missing from the model.
        ConfigMismatch: if a target layer has different dims.
    """
    merged = copy.deepcopy(model)
    detach(merged)
    with torch.no_grad():
        for target in adapter.targets:
            linear = _resolve(merged, target)
            layer = adapter.layer(target)
            delta = layer.delta_weight(adapter.scaling)
            if delta.shape != linear.weight.shape:
                raise ConfigMismatch(
                    f"{target!r}: adapter delta {tuple(delta.shape)} does not fit "  # noqa: E501
                    f"weight {tuple(linear.weight.shape)}")
            linear.weight.add_(delta.to(dtype=linear.weight.dtype, device=linear.weight.device))  # noqa: E501
    return merged


def save_adapter(adapter: LoRAAdapter, path: str | Path) -> Path:
    tensors = {}
    for target in adapter.targets:
        layer = adapter.layer(target)
        tensors[f"{target}.lora_A"] = layer.lora_A
        tensors[f"{target}.lora_B"] = layer.lora_B
    return save_checkpoint(tensors, path, ADAPTER_KIND, adapter.to_dict())


def load_adapter(path: str | Path, model: nn.Module | None = None) -> LoRAAdapter:  # noqa: E501
    """
    Load an adapter, optionally checking it against a model.

    Args:
        path (str | Path): adapter checkpoint.
        model (nn.Module | None): model the adapter will be attached to.

    Raises:
        CorruptCheckpoint: if the file or its metadata is unreadable.
        UnknownTarget: if a saved target is missing from ``model``.
        ConfigMismatch: if a target layer of ``model`` has other dims.
    """
    tensors, saved = load_checkpoint(path, ADAPTER_KIND)
    try:
        shapes = {t: (int(s[0]), int(s[1])) for t, s in saved["shapes"].items()}  # noqa: E501
        adapter = LoRAAdapter(LoRAConfig(rank=int(saved["rank"]), alpha=float(saved["alpha"])), shapes)  # noqa: E501
        state = {f"layers.{_key(t)}.{p}": tensors[f"{t}.{p}"]
                 for t in shapes for p in ("lora_A", "lora_B")}
        adapter.load_state_dict(state, strict=True)
    except (KeyError, TypeError, ValueError, RuntimeError) as e:
        raise CorruptCheckpoint(f"{path}: adapter tensors do not match its metadata ({e})") from e  # noqa: E501

    if model is not None:
        for target in adapter.targets:
            linear = _resolve(model, target)
            layer = adapter.layer(target)
            if (linear.in_features, linear.out_features) != (layer.in_features, layer.out_features):  # noqa: E501
                raise ConfigMismatch(
                    f"{target!r}: adapter was saved for {layer.in_features}->{layer.out_features}, "  # noqa: E501
                    f"model layer is {linear.in_features}->{linear.out_features}")
    logger.info(f"Loaded rank-{adapter.rank} adapter over {len(adapter.targets)} layers from {path}")  # noqa  # pylint: disable=logging-fstring-interpolation
    return adapter
