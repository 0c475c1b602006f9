"""Finite-difference verification of every differentiable primitive and of
the composite losses built from them.

Each registered op gets a seeded scenario; analytic gradients from
backward() are compared against central differences (step 1e-5) entrywise.
The reversal layer is the one op whose analytic gradient must NOT match a
plain finite difference, so it is checked against its defining contract
instead (identity forward, -gamma times the upstream gradient backward).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import gate as gate_mod
from . import losses as losses_mod
from . import model as model_mod
from .autodiff import Tensor

FD_STEP = 1e-5
REL_FLOOR = 1e-6


@dataclass
class GradReport:
    op: str
    max_rel_err: float
    passed: bool


def numerical_grad(fn, inputs, which, h=FD_STEP):
    """Central finite differences of scalar fn w.r.t. inputs[which]."""
    t = inputs[which]
    flat = t.data.reshape(-1)
    g = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn(*inputs).data)
        flat[i] = orig - h
        fm = float(fn(*inputs).data)
        flat[i] = orig
        g[i] = (fp - fm) / (2.0 * h)
    return g.reshape(t.data.shape)


def max_rel_err(analytic, numeric, floor=REL_FLOOR):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_function(fn, inputs, h=FD_STEP):
    """Worst relative error between backward() and central differences,
    taken over every entry of every input."""
    out = fn(*inputs)
    if out.data.shape != ():
        raise ValueError("gradcheck target must be scalar")
    ad.zero_grad(inputs)
    out.backward()
    worst = 0.0
    for i, t in enumerate(inputs):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_grad(fn, inputs, i, h)
        worst = max(worst, max_rel_err(analytic, numeric))
    return worst


def _t(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _proj(rng, shape):
    # fixed random projection turning a tensor output into a scalar
    return Tensor(rng.normal(size=shape))


# ---------------------------------------------------------------------------
# scenarios; each builder returns (fn, inputs) with fn(*inputs) scalar


def _s_add(rng):
    a, b = _t(rng, (3, 4)), _t(rng, (4,))
    p = _proj(rng, (3, 4))
    return lambda a, b: ad.inner(ad.add(a, b), p), [a, b]


def _s_sub(rng):
    a, b = _t(rng, (3, 4)), _t(rng, (3, 4))
    p = _proj(rng, (3, 4))
    return lambda a, b: ad.inner(ad.sub(a, b), p), [a, b]


def _s_mul(rng):
    a, b = _t(rng, (3, 4)), _t(rng, (3, 1))
    p = _proj(rng, (3, 4))
    return lambda a, b: ad.inner(ad.mul(a, b), p), [a, b]


def _s_scale(rng):
    a = _t(rng, (5,))
    p = _proj(rng, (5,))
    return lambda a: ad.inner(ad.scale(a, -1.7), p), [a]


def _s_matmul(rng):
    a, b = _t(rng, (3, 4)), _t(rng, (4, 2))
    p = _proj(rng, (3, 2))
    return lambda a, b: ad.inner(ad.matmul(a, b), p), [a, b]


def _s_tanh(rng):
    a = _t(rng, (3, 4), -2.0, 2.0)
    p = _proj(rng, (3, 4))
    return lambda a: ad.inner(ad.tanh(a), p), [a]


def _s_relu(rng):
    # keep inputs away from the kink at 0
    mag = rng.uniform(0.2, 1.5, size=(3, 4))
    sign = np.where(rng.uniform(size=(3, 4)) < 0.5, -1.0, 1.0)
    a = Tensor(mag * sign, requires_grad=True)
    p = _proj(rng, (3, 4))
    return lambda a: ad.inner(ad.relu(a), p), [a]


def _s_sigmoid(rng):
    a = _t(rng, (3, 4), -3.0, 3.0)
    p = _proj(rng, (3, 4))
    return lambda a: ad.inner(ad.sigmoid(a), p), [a]


def _s_sqrt(rng):
    a = _t(rng, (3, 4), 0.5, 2.0)
    p = _proj(rng, (3, 4))
    return lambda a: ad.inner(ad.sqrt(a), p), [a]


def _s_reshape(rng):
    a = _t(rng, (3, 4))
    p = _proj(rng, (2, 6))
    return lambda a: ad.inner(ad.reshape(a, (2, 6)), p), [a]


def _s_sum(rng):
    a = _t(rng, (3, 4, 2))
    p = _proj(rng, (3, 2))
    return lambda a: ad.inner(ad.tsum(a, axis=1), p), [a]


def _s_mean(rng):
    a = _t(rng, (3, 4, 2))
    p = _proj(rng, (4, 2))
    return lambda a: ad.inner(ad.tmean(a, axis=0), p), [a]


def _s_inner(rng):
    a, b = _t(rng, (7,)), _t(rng, (7,))
    return lambda a, b: ad.inner(a, b), [a, b]


def _s_concat(rng):
    a, b = _t(rng, (3, 2)), _t(rng, (3, 3))
    p = _proj(rng, (3, 5))
    return lambda a, b: ad.inner(ad.concat_last([a, b]), p), [a, b]


def _s_softmax(rng):
    a = _t(rng, (3, 5), -2.0, 2.0)
    p = _proj(rng, (3, 5))
    return lambda a: ad.inner(ad.softmax(a, axis=-1), p), [a]


def _s_dwconv(rng):
    x, k, b = _t(rng, (2, 3, 7)), _t(rng, (3, 3)), _t(rng, (3,))
    p = _proj(rng, (2, 3, 7))
    return (lambda x, k, b: ad.inner(ad.depthwise_conv1d(x, k, b), p),
            [x, k, b])


def _s_conv(rng):
    x, k, b = _t(rng, (2, 3, 7)), _t(rng, (4, 3, 3)), _t(rng, (4,))
    p = _proj(rng, (2, 4, 7))
    return lambda x, k, b: ad.inner(ad.conv1d(x, k, b), p), [x, k, b]


def _s_cross_entropy(rng):
    logits = _t(rng, (4, 5), -2.0, 2.0)
    targets = rng.integers(0, 5, size=4)
    return lambda l: ad.cross_entropy_logits(l, targets), [logits]


def _s_l2_normalize(rng):
    v = rng.normal(size=(3, 5))
    v = v / np.sqrt((v * v).sum(axis=1, keepdims=True))
    v = v * rng.uniform(0.8, 2.0, size=(3, 1))
    v = Tensor(v, requires_grad=True)
    p = _proj(rng, (3, 5))
    return lambda v: ad.inner(ad.l2_normalize(v, axis=1), p), [v]


def _s_aam_margin(rng):
    c = _t(rng, (4, 6), -0.9, 0.9)
    targets = rng.integers(0, 6, size=4)
    p = _proj(rng, (4, 6))
    return lambda c: ad.inner(ad.aam_margin(c, targets, 5.0, 0.3), p), [c]


def _s_cap_loss(rng):
    a = _t(rng, (2, 3, 4), 0.1, 0.9)
    return lambda a: gate_mod.cap_loss(a, 0.4), [a]


def _s_sat_loss(rng):
    a = _t(rng, (2, 3, 4), 0.1, 0.9)
    return lambda a: gate_mod.sat_loss(a), [a]


def _s_gate_mask(rng):
    # cap + sat taken through the mask computation itself
    u = _t(rng, (2, 3, 6))
    k = Tensor(rng.normal(0, 0.3, size=(3, 5)), requires_grad=True)
    b = _t(rng, (3,), -0.5, 0.5)
    params = gate_mod.GateParams(kernel=k, bias=b)

    def fn(u, k, b):
        mask = gate_mod.compute_mask(u, params)
        return ad.add(gate_mod.cap_loss(mask, 0.55), gate_mod.sat_loss(mask))

    return fn, [u, k, b]


def _s_routing(rng):
    u = _t(rng, (2, 3, 5))
    a = _t(rng, (2, 3, 5), 0.05, 0.95)
    p1, p2 = _proj(rng, (2, 3, 5)), _proj(rng, (2, 3, 5))

    def fn(u, a):
        u_id, u_sex = gate_mod.route(u, a)
        return ad.add(ad.inner(u_id, p1), ad.inner(u_sex, p2))

    return fn, [u, a]


def _s_attentive_pool(rng):
    h = _t(rng, (2, 4, 6))
    pool = model_mod.PoolParams(
        w=Tensor(rng.normal(0, 0.5, size=(3, 4, 1)), requires_grad=True),
        b=_t(rng, (3,), -0.3, 0.3),
        v=Tensor(rng.normal(0, 0.5, size=(3,)), requires_grad=True),
    )
    p = _proj(rng, (2, 8))

    def fn(h, w, b, v):
        return ad.inner(model_mod.attentive_stats_pool(h, pool), p)

    return fn, [h, pool.w, pool.b, pool.v]


def _s_pool_embed(rng):
    h = _t(rng, (2, 4, 6))
    branch = model_mod.BranchParams(
        pool=model_mod.PoolParams(
            w=Tensor(rng.normal(0, 0.5, size=(3, 4, 1)), requires_grad=True),
            b=_t(rng, (3,), -0.3, 0.3),
            v=Tensor(rng.normal(0, 0.5, size=(3,)), requires_grad=True)),
        proj_w=Tensor(rng.normal(0, 0.4, size=(8, 4)), requires_grad=True),
        proj_b=_t(rng, (4,), -0.2, 0.2),
    )
    p = _proj(rng, (2, 4))

    def fn(h, w, b, v, pw, pb):
        return ad.inner(model_mod.extract_embedding(h, branch), p)

    return fn, [h, branch.pool.w, branch.pool.b, branch.pool.v,
                branch.proj_w, branch.proj_b]


def _s_encode(rng):
    x = _t(rng, (2, 3, 6))
    layers = [
        model_mod.ConvLayer(
            kernel=Tensor(rng.normal(0, 0.4, size=(4, 3, 3)), requires_grad=True),
            bias=_t(rng, (4,), -0.3, 0.3), activation="relu"),
        model_mod.ConvLayer(
            kernel=Tensor(rng.normal(0, 0.4, size=(4, 4, 3)), requires_grad=True),
            bias=_t(rng, (4,), -0.3, 0.3), activation="linear"),
    ]
    enc = model_mod.EncoderParams(layers=layers)
    p = _proj(rng, (2, 4, 6))

    def fn(x, k0, b0, k1, b1):
        return ad.inner(model_mod.encode(x, enc), p)

    return fn, [x, layers[0].kernel, layers[0].bias,
                layers[1].kernel, layers[1].bias]


def _s_spk_loss(rng):
    z = _t(rng, (4, 4))
    heads = _tiny_heads(rng, 4, 3)
    y = rng.integers(0, 3, size=4)

    def fn(z, w):
        return losses_mod.spk_loss(z, y, heads, 10.0, 0.2)[0]

    return fn, [z, heads.spk_w]


def _s_sex_loss(rng):
    z = _t(rng, (4, 3))
    heads = _tiny_heads(rng, 3, 3)
    s = np.array([0, 1, 1, 0])

    def fn(z, w, b):
        return losses_mod.sex_loss(z, s, heads)

    return fn, [z, heads.sex_w, heads.sex_b]


def _s_adv_loss_head(rng):
    # FD w.r.t. the adversarial head only: below the reversal layer the
    # analytic gradient intentionally disagrees with plain differences,
    # which the 'grl' contract scenario covers.
    z = Tensor(rng.normal(size=(4, 3)))
    heads = _tiny_heads(rng, 3, 3)
    s = np.array([0, 1, 0, 1])

    def fn(w, b):
        return losses_mod.adv_loss(z, s, heads, gamma=0.7)

    return fn, [heads.adv_w, heads.adv_b]


def _s_decor_loss(rng):
    zi, zs = _t(rng, (4, 5), -1.5, 1.5), _t(rng, (4, 5), -1.5, 1.5)
    return lambda a, b: losses_mod.decor_loss(a, b), [zi, zs]


def _s_rex_penalty(rng):
    logits = _t(rng, (6, 4), -2.0, 2.0)
    targets = rng.integers(0, 4, size=6)
    groups = np.array(["M", "M", "F", "F", "M", "F"])

    def fn(l):
        risks = ad.cross_entropy_per_sample(l, targets)
        return losses_mod.rex_penalty(risks, groups)[0]

    return fn, [logits]


def _tiny_heads(rng, d, n_spk):
    return model_mod.HeadParams(
        spk_w=Tensor(rng.normal(0, 0.6, size=(d, n_spk)), requires_grad=True),
        sex_w=Tensor(rng.normal(0, 0.6, size=(d, 2)), requires_grad=True),
        sex_b=_t(rng, (2,), -0.2, 0.2),
        adv_w=Tensor(rng.normal(0, 0.6, size=(d, 2)), requires_grad=True),
        adv_b=_t(rng, (2,), -0.2, 0.2),
    )


# ---------------------------------------------------------------------------
# contract checks that are not plain finite differences


def _check_grl(rng, tolerance):
    worst = 0.0
    for gamma in (0.0, 0.5, 1.0):
        z = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        p = _proj(rng, (3, 4))
        y = ad.grl(z, gamma)
        if y.data.tobytes() != z.data.tobytes():
            return GradReport("grl", float("inf"), False)
        out = ad.inner(y, p)
        out.backward()
        expected = -gamma * p.data
        dev = float(np.max(np.abs(z.grad - expected)))
        worst = max(worst, dev)
    return GradReport("grl", worst, worst <= tolerance)


def _tiny_model(rng):
    cfg = model_mod.ModelConfig(
        feature_bins=4, channels=4, embed_dim=4, attn_dim=3, n_speakers=3,
        encoder_widths=(3, 3), gate_kernel_width=3,
        aam_scale=8.0, aam_margin=0.2)
    params = model_mod.init_model(cfg, seed=int(rng.integers(2 ** 31)))
    x = Tensor(rng.normal(size=(4, 4, 8)), requires_grad=True)
    y = np.array([0, 1, 2, 1])
    glabels = np.array(["M", "M", "F", "F"])
    return params, x, y, glabels


def _check_total_loss(rng, tolerance):
    """End-to-end check on a tiny model.

    The reversal layer makes the analytic gradient of the total differ from
    a plain finite difference of its forward value, by design. The
    reference is therefore assembled from two plain finite differences:
    the total without the adversarial term, plus the adversarial
    cross-entropy taken without reversal, weighted by +lambda_adv for the
    adversarial head and by -gamma * lambda_adv for everything upstream.
    """
    weights = losses_mod.LossWeights(
        lambda_s=0.7, lambda_adv=0.3, lambda_decor=0.2, lambda_cap=0.15,
        lambda_sat=0.05, lambda_rex=0.1, gamma=0.8, rho_id=0.45)
    params, x, y, glabels = _tiny_model(rng)
    named = dict(params.named_parameters())
    named["input"] = x
    tensors = list(named.values())
    group_idx = np.array([losses_mod.GROUPS.index(g) for g in glabels])

    total, _, _ = losses_mod.total_loss(params, x, y, glabels, weights)
    ad.zero_grad(tensors)
    total.backward()
    analytic = {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for name, t in named.items()}

    no_adv = replace(weights, lambda_adv=0.0)

    def f_noadv(*_):
        return losses_mod.total_loss(params, x, y, glabels, no_adv)[0]

    def f_advce(*_):
        out = model_mod.forward_pipeline(params, x)
        logits = ad.add(ad.matmul(out.z_id, params.heads.adv_w),
                        params.heads.adv_b)
        return ad.cross_entropy_logits(logits, group_idx)

    worst = 0.0
    for i, (name, t) in enumerate(named.items()):
        n1 = numerical_grad(f_noadv, tensors, i)
        n2 = numerical_grad(f_advce, tensors, i)
        mult = 1.0 if name in ("head.adv_w", "head.adv_b") else -weights.gamma
        ref = n1 + weights.lambda_adv * mult * n2
        worst = max(worst, max_rel_err(analytic[name], ref))
    return GradReport("total_loss", worst, worst <= tolerance)


# ---------------------------------------------------------------------------
# registry and driver

FD_SCENARIOS = [
    ("add", _s_add),
    ("sub", _s_sub),
    ("mul", _s_mul),
    ("scale", _s_scale),
    ("matmul", _s_matmul),
    ("tanh", _s_tanh),
    ("relu", _s_relu),
    ("sigmoid", _s_sigmoid),
    ("sqrt", _s_sqrt),
    ("reshape", _s_reshape),
    ("sum", _s_sum),
    ("mean", _s_mean),
    ("inner", _s_inner),
    ("concat", _s_concat),
    ("softmax", _s_softmax),
    ("depthwise_conv1d", _s_dwconv),
    ("conv1d", _s_conv),
    ("cross_entropy", _s_cross_entropy),
    ("l2_normalize", _s_l2_normalize),
    ("aam_margin", _s_aam_margin),
    ("cap_loss", _s_cap_loss),
    ("sat_loss", _s_sat_loss),
    ("gate_mask", _s_gate_mask),
    ("routing", _s_routing),
    ("attentive_pool", _s_attentive_pool),
    ("pool_embed", _s_pool_embed),
    ("encode", _s_encode),
    ("spk_loss", _s_spk_loss),
    ("sex_loss", _s_sex_loss),
    ("adv_loss_head", _s_adv_loss_head),
    ("decor_loss", _s_decor_loss),
    ("rex_penalty", _s_rex_penalty),
]

CUSTOM_SCENARIOS = [
    ("grl", _check_grl),
    ("total_loss", _check_total_loss),
]


def _broken_tanh_scenario(rng):
    # deliberately corrupted gradient rule; used as a negative control
    a = _t(rng, (3, 4), -2.0, 2.0)
    p = _proj(rng, (3, 4))

    def broken(t):
        y = np.tanh(t.data)

        def backward(g):
            ad._accum(t, g * (1.0 - y * y) * 1.05)

        return ad._make(y, (t,), backward)

    return lambda a: ad.inner(broken(a), p), [a]


def all_op_names(include_bug=False):
    names = [n for n, _ in FD_SCENARIOS]
    if include_bug:
        names.append("broken_tanh")
    return names + [n for n, _ in CUSTOM_SCENARIOS]


def gradcheck_all(seed=0, tolerance=1e-4, inject_bug=False):
    """One GradReport per registered op; deterministic for a given seed.

    inject_bug adds a scenario whose gradient rule is wrong on purpose, so
    the harness itself can be seen to fail when it should.
    """
    reports = []
    scenarios = list(FD_SCENARIOS)
    if inject_bug:
        scenarios = scenarios + [("broken_tanh", _broken_tanh_scenario)]
    for i, (name, builder) in enumerate(scenarios):
        rng = np.random.default_rng([seed, i])
        fn, inputs = builder(rng)
        err = check_function(fn, inputs)
        reports.append(GradReport(name, err, err <= tolerance))
    for j, (name, checker) in enumerate(CUSTOM_SCENARIOS):
        rng = np.random.default_rng([seed, 1000 + j])
        reports.append(checker(rng, tolerance))
    return reports
