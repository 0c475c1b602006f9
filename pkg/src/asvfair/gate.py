"""Local complementary gate: soft mask, additive routing, regularizers.

The mask is a sigmoid over a per-channel temporal convolution of the
features, so every [channel, frame] location gets its own routing weight in
(0,1). Routing splits the features into two additive parts whose sum
reconstructs the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import AutodiffError, Tensor


@dataclass
class GateParams:
    """Depthwise kernel [C,K] (K odd) and per-channel bias [C]."""

    kernel: Tensor
    bias: Tensor


def init_gate(channels, kernel_width=5, rng=None, kernel_std=0.01):
    """Near-zero kernel and zero bias, so the initial mask sits at 0.5
    and neither branch is favored before training."""
    if kernel_width % 2 == 0:
        raise AutodiffError(f"gate kernel width must be odd, got {kernel_width}")
    rng = rng or np.random.default_rng(0)
    kernel = Tensor(rng.normal(0.0, kernel_std, size=(channels, kernel_width)),
                    requires_grad=True)
    bias = Tensor(np.zeros(channels), requires_grad=True)
    return GateParams(kernel=kernel, bias=bias)


def compute_mask(u, params):
    """Soft routing mask: sigmoid(depthwise_conv1d(U)). Shape follows U."""
    return ad.sigmoid(ad.depthwise_conv1d(u, params.kernel, params.bias))


def route(u, mask):
    """Split U into an identity part and a complementary remainder.

    u_id = A * U and u_sex = U - u_id. The subtraction form is equivalent
    to (1-A) * U but keeps u_id + u_sex within 1 ulp of U elementwise.
    """
    if u.data.shape != mask.data.shape:
        raise AutodiffError(
            f"route: features {u.data.shape} vs mask {mask.data.shape}"
        )
    u_id = ad.mul(mask, u)
    u_sex = ad.sub(u, u_id)
    return u_id, u_sex


def cap_loss(mask, rho_id):
    """Squared gap between the global mean of the mask and the routing
    target rho_id in (0,1)."""
    rho_id = float(rho_id)
    if not 0.0 < rho_id < 1.0:
        raise AutodiffError(f"rho_id must be in (0,1), got {rho_id}")
    d = ad.sub(ad.tmean(mask), rho_id)
    return ad.mul(d, d)


def sat_loss(mask):
    """Mean of A*(1-A); in [0, 0.25], zero iff the mask is binary."""
    return ad.tmean(ad.mul(mask, ad.sub(1.0, mask)))
