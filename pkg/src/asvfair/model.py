"""Encoder stub, branch embedding extractors, heads, and cosine scoring.

The encoder is a small stack of same-padded 1-D convolutions standing in
for a full speaker-embedding backbone; it only needs to be expressive
enough to exercise the gate and the training objectives. Each branch pools
frame features with single-head attentive statistics pooling and projects
to a fixed embedding dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import AutodiffError, DegenerateEmbeddingError, Tensor

STD_EPS = 1e-8   # floor inside the pooled-variance sqrt
COS_EPS = 1e-8   # zero-embedding guard for cosine scoring


@dataclass
class ConvLayer:
    kernel: Tensor           # [Co,Ci,K]
    bias: Tensor             # [Co]
    activation: str = "relu"  # "relu" or "linear"


@dataclass
class EncoderParams:
    layers: list


@dataclass
class PoolParams:
    """Single-head attention: alpha_t = softmax_t(v . tanh(W h_t + b))."""

    w: Tensor   # [A,C,1] width-1 conv kernel
    b: Tensor   # [A]
    v: Tensor   # [A]


@dataclass
class BranchParams:
    pool: PoolParams
    proj_w: Tensor  # [2C,D]
    proj_b: Tensor  # [D]


@dataclass
class HeadParams:
    spk_w: Tensor   # [D,N_spk], columns normalized inside aam_logits
    sex_w: Tensor   # [D,2]
    sex_b: Tensor   # [2]
    adv_w: Tensor   # [D,2]
    adv_b: Tensor   # [2]


@dataclass
class ModelConfig:
    feature_bins: int = 12
    channels: int = 32
    embed_dim: int = 16
    attn_dim: int = 16
    n_speakers: int = 12
    encoder_widths: tuple = (3, 3, 3)
    gate_kernel_width: int = 5
    aam_scale: float = 30.0
    aam_margin: float = 0.2

    def to_dict(self):
        return {
            "feature_bins": self.feature_bins,
            "channels": self.channels,
            "embed_dim": self.embed_dim,
            "attn_dim": self.attn_dim,
            "n_speakers": self.n_speakers,
            "encoder_widths": list(self.encoder_widths),
            "gate_kernel_width": self.gate_kernel_width,
            "aam_scale": self.aam_scale,
            "aam_margin": self.aam_margin,
        }

    @staticmethod
    def from_dict(d):
        d = dict(d)
        d["encoder_widths"] = tuple(d.get("encoder_widths", (3, 3, 3)))
        return ModelConfig(**d)


@dataclass
class ModelParams:
    config: ModelConfig
    encoder: EncoderParams
    gate: "GateParams"
    id_branch: BranchParams
    sex_branch: BranchParams
    heads: HeadParams

    def named_parameters(self):
        """Fixed-order name -> Tensor map; the order pins down checkpoint
        layout and the SGD update sequence."""
        out = {}
        for i, layer in enumerate(self.encoder.layers):
            out[f"encoder.{i}.kernel"] = layer.kernel
            out[f"encoder.{i}.bias"] = layer.bias
        out["gate.kernel"] = self.gate.kernel
        out["gate.bias"] = self.gate.bias
        for tag, br in (("id", self.id_branch), ("sex", self.sex_branch)):
            out[f"{tag}.pool.w"] = br.pool.w
            out[f"{tag}.pool.b"] = br.pool.b
            out[f"{tag}.pool.v"] = br.pool.v
            out[f"{tag}.proj.w"] = br.proj_w
            out[f"{tag}.proj.b"] = br.proj_b
        out["head.spk_w"] = self.heads.spk_w
        out["head.sex_w"] = self.heads.sex_w
        out["head.sex_b"] = self.heads.sex_b
        out["head.adv_w"] = self.heads.adv_w
        out["head.adv_b"] = self.heads.adv_b
        return out

    def scoring_parameter_names(self):
        """Parameters the verification score may depend on: encoder, gate,
        identity branch. Everything else is training-only."""
        return [n for n in self.named_parameters()
                if n.startswith(("encoder.", "gate.", "id."))]


def _param(rng, shape, std):
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def init_model(config, seed=0):
    """Seeded Gaussian init; the creation order below is part of the
    determinism contract (it fixes the RNG stream layout)."""
    from .gate import init_gate

    rng = np.random.default_rng([seed, 0xA5])
    layers = []
    c_in = config.feature_bins
    n = len(config.encoder_widths)
    for i, k in enumerate(config.encoder_widths):
        if k % 2 == 0:
            raise AutodiffError(f"encoder kernel width must be odd, got {k}")
        std = 1.0 / np.sqrt(c_in * k)
        act = "relu" if i < n - 1 else "linear"
        layers.append(ConvLayer(
            kernel=_param(rng, (config.channels, c_in, k), std),
            bias=Tensor(np.zeros(config.channels), requires_grad=True),
            activation=act,
        ))
        c_in = config.channels
    encoder = EncoderParams(layers=layers)
    gate = init_gate(config.channels, config.gate_kernel_width, rng)

    def make_branch():
        c, a, d = config.channels, config.attn_dim, config.embed_dim
        pool = PoolParams(
            w=_param(rng, (a, c, 1), 1.0 / np.sqrt(c)),
            b=Tensor(np.zeros(a), requires_grad=True),
            v=_param(rng, (a,), 1.0 / np.sqrt(a)),
        )
        return BranchParams(
            pool=pool,
            proj_w=_param(rng, (2 * c, d), 1.0 / np.sqrt(2 * c)),
            proj_b=Tensor(np.zeros(d), requires_grad=True),
        )

    id_branch = make_branch()
    sex_branch = make_branch()
    d = config.embed_dim
    heads = HeadParams(
        spk_w=_param(rng, (d, config.n_speakers), 1.0 / np.sqrt(d)),
        sex_w=_param(rng, (d, 2), 1.0 / np.sqrt(d)),
        sex_b=Tensor(np.zeros(2), requires_grad=True),
        adv_w=_param(rng, (d, 2), 1.0 / np.sqrt(d)),
        adv_b=Tensor(np.zeros(2), requires_grad=True),
    )
    return ModelParams(config=config, encoder=encoder, gate=gate,
                       id_branch=id_branch, sex_branch=sex_branch, heads=heads)


# ---------------------------------------------------------------------------
# forward pieces


def encode(x, encoder):
    """Stack of same-padded 1-D convolutions: [B,F,T] -> [B,C,T]."""
    x = ad._wrap(x)
    if x.data.ndim != 3 or x.data.shape[1] < 1 or x.data.shape[2] < 1:
        raise AutodiffError("encoder input must be a non-empty [B,F,T] block")
    h = x
    for layer in encoder.layers:
        h = ad.conv1d(h, layer.kernel, layer.bias)
        if layer.activation == "relu":
            h = ad.relu(h)
        elif layer.activation != "linear":
            raise AutodiffError(f"unknown activation {layer.activation!r}")
    return h


def attentive_stats_pool(h, pool):
    """Attention-weighted mean and std over frames: [B,C,T] -> [B,2C].

    alpha_t = softmax_t(v . tanh(W h_t + b)); the weighted variance is
    floored at STD_EPS before the square root.
    """
    e = ad.tanh(ad.conv1d(h, pool.w, pool.b))          # [B,A,T]
    a_dim = pool.v.data.shape[0]
    logits = ad.tsum(ad.mul(e, ad.reshape(pool.v, (1, a_dim, 1))), axis=1)
    alpha = ad.softmax(logits, axis=1)                  # [B,T]
    b, _, t = h.data.shape
    alpha3 = ad.reshape(alpha, (b, 1, t))
    mean = ad.tsum(ad.mul(h, alpha3), axis=2)           # [B,C]
    second = ad.tsum(ad.mul(ad.mul(h, h), alpha3), axis=2)
    var = ad.sub(second, ad.mul(mean, mean))
    # max(var, eps) == relu(var - eps) + eps, exact and differentiable a.e.
    var = ad.add(ad.relu(ad.sub(var, STD_EPS)), STD_EPS)
    return ad.concat_last([mean, ad.sqrt(var)])


def embed(pooled, branch):
    """Affine projection of pooled stats to the embedding dimension."""
    return ad.add(ad.matmul(pooled, branch.proj_w), branch.proj_b)


def extract_embedding(u_branch, branch):
    return embed(attentive_stats_pool(u_branch, branch.pool), branch)


def grl(z, gamma):
    """Gradient reversal layer (identity forward, -gamma backward)."""
    return ad.grl(z, gamma)


def aam_logits(z, targets, spk_w, s, m):
    """Additive-angular-margin cosine logits, [B,D] -> [B,N_spk].

    Embeddings and class columns are L2-normalized internally; the target
    column gets cos(theta+m), everything is scaled by s.
    """
    zb = ad.l2_normalize(z, axis=1)
    wb = ad.l2_normalize(spk_w, axis=0)
    cosine = ad.matmul(zb, wb)
    return ad.aam_margin(cosine, targets, s, m)


def cosine_score(z_a, z_b, eps=COS_EPS):
    """Cosine similarity of two embedding vectors (plain numpy)."""
    a = np.asarray(z_a, dtype=np.float64).ravel()
    b = np.asarray(z_b, dtype=np.float64).ravel()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    if na <= eps or nb <= eps:
        raise DegenerateEmbeddingError("zero embedding cannot be scored")
    return float((a @ b) / (na * nb))


@dataclass
class PipelineOut:
    features: "Tensor"   # U  [B,C,T]
    mask: "Tensor"       # A  [B,C,T]
    u_id: "Tensor"
    u_sex: "Tensor"
    z_id: "Tensor"       # [B,D]
    z_sex: "Tensor"      # [B,D]


def forward_pipeline(params, x, id_only=False):
    """encoder -> gate -> route -> branch embeddings.

    With id_only=True the sex branch is skipped entirely, which is the
    deployment path: verification must not touch sex-branch parameters.
    """
    from .gate import compute_mask, route

    u = encode(x, params.encoder)
    mask = compute_mask(u, params.gate)
    u_id, u_sex = route(u, mask)
    z_id = extract_embedding(u_id, params.id_branch)
    z_sex = None if id_only else extract_embedding(u_sex, params.sex_branch)
    return PipelineOut(features=u, mask=mask, u_id=u_id, u_sex=u_sex,
                       z_id=z_id, z_sex=z_sex)


def identity_embeddings(params, feats_list, batch_size=64):
    """Deployment-path embeddings for a list of [F,T] feature arrays."""
    out = []
    for i in range(0, len(feats_list), batch_size):
        x = np.stack(feats_list[i:i + batch_size])
        z = forward_pipeline(params, Tensor(x), id_only=True).z_id
        out.append(z.data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, 0))
