from importlib import metadata

try:
    __version__ = metadata.version("suturing_wm")
except Exception:
    __version__ = "0.dev0+unknown"

from suturing_wm import (
    adapters,
    buckets,
    codec,
    dataset,
    denoiser,
    diffusion,
    errors,
    evaluation,
    guidance,
    oracle,
    pipeline,
    profiles,
    simulator,
    storage,
    taxonomy,
)

# flake8: noqa: F405
from .taxonomy import *  # noqa
from .buckets import *  # noqa
from .storage import *  # noqa
from .dataset import *  # noqa
from .simulator import *  # noqa
from .oracle import *  # noqa
from .codec import *  # noqa
from .denoiser import *  # noqa
from .adapters import *  # noqa
from .guidance import *  # noqa
from .diffusion import *  # noqa
from .evaluation import *  # noqa
from .profiles import *  # noqa
from .pipeline import *  # noqa
from .errors import *  # noqa
from .checkpoint import parameter_hash  # noqa
from suturing_wm.logger import logger  # noqa: F401


__all__ = []
__all__.extend(taxonomy.__all__)
__all__.extend(buckets.__all__)
__all__.extend(storage.__all__)
__all__.extend(dataset.__all__)
__all__.extend(simulator.__all__)
__all__.extend(oracle.__all__)
__all__.extend(codec.__all__)
__all__.extend(denoiser.__all__)
__all__.extend(adapters.__all__)
__all__.extend(guidance.__all__)
__all__.extend(diffusion.__all__)
__all__.extend(evaluation.__all__)
__all__.extend(profiles.__all__)
__all__.extend(pipeline.__all__)
__all__.extend(errors.__all__)
__all__.append("parameter_hash")
__all__.append("logger")
