"""Skeleton action recognition with shift graph convolutions and a selective
state-space core, built on a small numpy autodiff engine.

SIMBA_THREADS caps BLAS worker threads; it must take effect before numpy
loads, hence the env propagation at the top of this module.
"""

import os as _os

_threads = _os.environ.get("SIMBA_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMBA_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)
# the default TBB layer warns on older TBB builds; workqueue is always present
_os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

from .config import PRESETS, TrainConfig  # noqa: E402
from .data import (  # noqa: E402
    Modality,
    SkeletonDataset,
    derive_modality,
    load_dataset,
    sample_window,
    save_dataset,
    synth_generate,
)
from .model import PartitionGate, SimbaModel, SimbaModule, flatten_vertices, unflatten_vertices  # noqa: E402
from .ssm import (  # noqa: E402
    IMambaBlock,
    ScanInputs,
    SsmParams,
    lti_conv,
    lti_kernel,
    selective_scan_parallel,
    selective_scan_sequential,
    zoh_discretize,
)
from .shift_gcn import (  # noqa: E402
    ShiftSGcnBlock,
    ShiftTcnBlock,
    UnitTcnResidual,
    spatial_shift,
    temporal_shift,
)
from .tensor import Tensor, no_grad, set_default_dtype, using_dtype  # noqa: E402
from .train import SGD, build_model, evaluate, fuse_scores, lr_at, train  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "IMambaBlock", "Modality", "PRESETS", "PartitionGate", "SGD", "ScanInputs",
    "ShiftSGcnBlock", "ShiftTcnBlock", "SimbaModel", "SimbaModule",
    "SkeletonDataset", "SsmParams", "Tensor", "TrainConfig", "UnitTcnResidual",
    "build_model", "derive_modality", "evaluate", "flatten_vertices",
    "fuse_scores", "load_dataset", "lr_at", "lti_conv", "lti_kernel", "no_grad",
    "sample_window", "save_dataset", "selective_scan_parallel",
    "selective_scan_sequential", "set_default_dtype", "spatial_shift",
    "synth_generate", "temporal_shift", "train", "unflatten_vertices",
    "using_dtype", "zoh_discretize",
]
