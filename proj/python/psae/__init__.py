# Copyright 2026 The psae Authors
# SPDX-License-Identifier: Apache-2.0
"""TopK and Matryoshka sparse autoencoders."""

from ._psae import (  # noqa: F401
    ArgumentError,
    FormatError,
    Sae,
    ScalingLawParams,
    eigen_spectrum,
    fit_power_law,
    fit_scaling_law,
    fvu,
    gen_superposition,
    predict_loss,
    rsa,
    train,
)

__version__ = "0.1.0"
