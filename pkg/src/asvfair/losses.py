"""Training objectives: branch losses, decorrelation, group-risk penalty,
and their weighted combination.

Every term is computed on the same forward pass and the weighted total is
returned as a differentiable scalar alongside a float-valued breakdown for
logging.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from . import gate as gate_mod
from . import model as model_mod
from .autodiff import AutodiffError, Tensor

GROUPS = ("M", "F")


@dataclass
class LossWeights:
    """Coefficients of the combined objective plus the two gate knobs.

    Only lambda_rex has a literature-sourced default; the rest are toy-scale
    choices and are exposed in the training config.
    """

    lambda_s: float = 1.0
    lambda_adv: float = 0.1
    lambda_decor: float = 0.1
    lambda_cap: float = 0.1
    lambda_sat: float = 0.01
    lambda_rex: float = 0.005
    gamma: float = 1.0      # gradient-reversal strength
    rho_id: float = 0.5     # routing-mass target

    def validate(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "rho_id":
                if not 0.0 < v < 1.0:
                    raise AutodiffError(f"rho_id must be in (0,1), got {v}")
            elif v < 0:
                raise AutodiffError(f"{f.name} must be nonnegative, got {v}")


@dataclass
class RiskStats:
    """Per-group mean risks and the variance penalty of the group means."""

    risk_by_group: dict
    mean_risk: float
    penalty: float
    applicable: bool


@dataclass
class LossBreakdown:
    spk: float
    sex: float
    adv: float
    decor: float
    cap: float
    sat: float
    rex: float
    total: float
    rex_applicable: bool

    def recombine(self, w):
        """Re-derive the total from the parts; used as a logging invariant."""
        return (self.spk + w.lambda_s * self.sex + w.lambda_adv * self.adv
                + w.lambda_decor * self.decor + w.lambda_cap * self.cap
                + w.lambda_sat * self.sat + w.lambda_rex * self.rex)

    def to_dict(self):
        return {
            "spk": self.spk, "sex": self.sex, "adv": self.adv,
            "decor": self.decor, "cap": self.cap, "sat": self.sat,
            "rex": self.rex, "total": self.total,
            "rex_applicable": self.rex_applicable,
        }


def spk_loss(z_id, speakers, heads, s, m):
    """Mean cross-entropy over margin logits; also returns the per-sample
    risk vector so the group penalty can reuse the same computation."""
    logits = model_mod.aam_logits(z_id, speakers, heads.spk_w, s, m)
    per_sample = ad.cross_entropy_per_sample(logits, speakers)
    return ad.tmean(per_sample), per_sample


def sex_loss(z_sex, group_idx, heads):
    logits = ad.add(ad.matmul(z_sex, heads.sex_w), heads.sex_b)
    return ad.cross_entropy_logits(logits, group_idx)


def adv_loss(z_id, group_idx, heads, gamma):
    """Sex classification on the identity embedding through a reversal
    layer: the head trains normally, z_id receives -gamma times the
    cooperative gradient."""
    rev = ad.grl(z_id, gamma)
    logits = ad.add(ad.matmul(rev, heads.adv_w), heads.adv_b)
    return ad.cross_entropy_logits(logits, group_idx)


def decor_loss(z_id, z_sex):
    """Batch mean of the squared inner product of the normalized embeddings."""
    zi = ad.l2_normalize(z_id, axis=1)
    zs = ad.l2_normalize(z_sex, axis=1)
    dots = ad.tsum(ad.mul(zi, zs), axis=1)
    return ad.tmean(ad.mul(dots, dots))


def rex_penalty(per_sample_risk, group_labels, min_per_group=2, groups=GROUPS):
    """Variance of per-group mean risks over the given groups.

    Groups smaller than min_per_group make the penalty inapplicable: the
    returned tensor is a constant zero and the stats flag is False. The
    formula generalizes to n groups but the protocol here is binary.
    """
    labels = np.asarray(group_labels)
    if labels.shape[0] != per_sample_risk.data.shape[0]:
        raise AutodiffError("risk vector and group labels disagree in length")
    counts = {g: int((labels == g).sum()) for g in groups}
    if any(c < min_per_group for c in counts.values()):
        stats = RiskStats(risk_by_group={g: float("nan") for g in groups},
                          mean_risk=float("nan"), penalty=0.0, applicable=False)
        return Tensor(0.0), stats

    group_means = []
    for g in groups:
        sel = (labels == g).astype(np.float64) / counts[g]
        group_means.append(ad.inner(per_sample_risk, Tensor(sel)))
    mean_risk = ad.scale(group_means[0], 1.0 / len(groups))
    for gm in group_means[1:]:
        mean_risk = ad.add(mean_risk, ad.scale(gm, 1.0 / len(groups)))
    penalty = None
    for gm in group_means:
        d = ad.sub(gm, mean_risk)
        sq = ad.mul(d, d)
        penalty = sq if penalty is None else ad.add(penalty, sq)
    penalty = ad.scale(penalty, 1.0 / len(groups))

    stats = RiskStats(
        risk_by_group={g: float(gm.data) for g, gm in zip(groups, group_means)},
        mean_risk=float(mean_risk.data),
        penalty=float(penalty.data),
        applicable=True,
    )
    return penalty, stats


def total_loss(params, x, speakers, group_labels, weights, min_per_group=2):
    """One forward pass through the whole pipeline plus every loss term.

    x: [B,F,T] features, speakers: [B] class indices, group_labels: [B]
    'M'/'F' strings. Returns (total tensor, LossBreakdown, RiskStats).
    """
    weights.validate()
    cfg = params.config
    group_idx = np.asarray([GROUPS.index(g) for g in group_labels])

    out = model_mod.forward_pipeline(params, x)
    l_spk, per_sample = spk_loss(out.z_id, speakers, params.heads,
                                 cfg.aam_scale, cfg.aam_margin)
    l_sex = sex_loss(out.z_sex, group_idx, params.heads)
    l_adv = adv_loss(out.z_id, group_idx, params.heads, weights.gamma)
    l_decor = decor_loss(out.z_id, out.z_sex)
    l_cap = gate_mod.cap_loss(out.mask, weights.rho_id)
    l_sat = gate_mod.sat_loss(out.mask)
    l_rex, risk_stats = rex_penalty(per_sample, group_labels, min_per_group)

    total = l_spk
    total = ad.add(total, ad.scale(l_sex, weights.lambda_s))
    total = ad.add(total, ad.scale(l_adv, weights.lambda_adv))
    total = ad.add(total, ad.scale(l_decor, weights.lambda_decor))
    total = ad.add(total, ad.scale(l_cap, weights.lambda_cap))
    total = ad.add(total, ad.scale(l_sat, weights.lambda_sat))
    total = ad.add(total, ad.scale(l_rex, weights.lambda_rex))

    breakdown = LossBreakdown(
        spk=float(l_spk.data), sex=float(l_sex.data), adv=float(l_adv.data),
        decor=float(l_decor.data), cap=float(l_cap.data), sat=float(l_sat.data),
        rex=float(l_rex.data), total=float(total.data),
        rex_applicable=risk_stats.applicable,
    )
    return total, breakdown, risk_stats
