from dida.config import DidaConfig
from dida.mixstyle import MixStyle, mixstyle
from dida.module import (
    DidaModule,
    DynamicKernels,
    closed_form_param_count,
    dida_residual,
    fuse,
    generate_kernels,
    reduce_channels,
    static_cnn_variant,
)

__all__ = [
    "DidaConfig", "DidaModule", "DynamicKernels", "MixStyle", "closed_form_param_count", "dida_residual",
    "fuse", "generate_kernels", "mixstyle", "reduce_channels", "static_cnn_variant",
]
