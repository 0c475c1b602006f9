"""Deterministic toy training loop: encoder -> gate -> branches ->
objectives, with group-stratified batching, periodic held-out evaluation,
and checkpointing.

Plain SGD with momentum keeps each run bitwise reproducible from
(config, seed); there is no adaptive state to drift.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import io as io_mod
from .autodiff import Tensor, cross_entropy_per_sample, zero_grad
from .losses import GROUPS, LossWeights, total_loss
from .metrics import ReportConfig, fairness_report
from .model import (ModelConfig, aam_logits, cosine_score, forward_pipeline,
                    identity_embeddings, init_model)
from .synthdata import CorpusSpec, generate_corpus


class DivergenceError(RuntimeError):
    """Total loss became non-finite; carries the offending step."""

    def __init__(self, step):
        self.step = step
        super().__init__(f"training diverged at step {step}")


@dataclass
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    channels: int = 16
    embed_dim: int = 8
    attn_dim: int = 8
    encoder_widths: tuple = (3, 3, 3)
    gate_kernel_width: int = 5
    aam_scale: float = 30.0
    aam_margin: float = 0.2
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    steps: int = 2000
    eval_interval: int = 500
    seed: int = 0
    min_per_group: int = 2

    def validate(self):
        self.weights.validate()
        self.corpus.validate()
        if self.lr <= 0:
            raise ValueError("step size must be > 0")
        if self.batch_size < 2 * self.min_per_group:
            raise ValueError(
                f"batch_size {self.batch_size} cannot hold {self.min_per_group} "
                "utterances of each group")
        if self.steps < 1 or self.eval_interval < 1:
            raise ValueError("steps and eval_interval must be >= 1")

    def model_config(self, n_speakers):
        return ModelConfig(
            feature_bins=self.corpus.feature_bins,
            channels=self.channels,
            embed_dim=self.embed_dim,
            attn_dim=self.attn_dim,
            n_speakers=n_speakers,
            encoder_widths=tuple(self.encoder_widths),
            gate_kernel_width=self.gate_kernel_width,
            aam_scale=self.aam_scale,
            aam_margin=self.aam_margin,
        )


# ---------------------------------------------------------------------------
# key = value schema (used by the CLI and samples/toy.config)

_CASTERS = {
    "int": int,
    "float": float,
    "widths": lambda v: tuple(int(x) for x in v.split(",")),
}

# key -> (section, attribute, caster name)
CONFIG_SCHEMA = {
    "lambda_s": ("weights", "lambda_s", "float"),
    "lambda_adv": ("weights", "lambda_adv", "float"),
    "lambda_decor": ("weights", "lambda_decor", "float"),
    "lambda_cap": ("weights", "lambda_cap", "float"),
    "lambda_sat": ("weights", "lambda_sat", "float"),
    "lambda_rex": ("weights", "lambda_rex", "float"),
    "gamma": ("weights", "gamma", "float"),
    "rho_id": ("weights", "rho_id", "float"),
    "lr": ("train", "lr", "float"),
    "momentum": ("train", "momentum", "float"),
    "batch_size": ("train", "batch_size", "int"),
    "steps": ("train", "steps", "int"),
    "eval_interval": ("train", "eval_interval", "int"),
    "seed": ("train", "seed", "int"),
    "min_per_group": ("train", "min_per_group", "int"),
    "channels": ("train", "channels", "int"),
    "embed_dim": ("train", "embed_dim", "int"),
    "attn_dim": ("train", "attn_dim", "int"),
    "encoder_widths": ("train", "encoder_widths", "widths"),
    "gate_kernel_width": ("train", "gate_kernel_width", "int"),
    "aam_scale": ("train", "aam_scale", "float"),
    "aam_margin": ("train", "aam_margin", "float"),
    "corpus.speakers_per_group": ("corpus", "speakers_per_group", "int"),
    "corpus.utterances_per_speaker": ("corpus", "utterances_per_speaker", "int"),
    "corpus.frames": ("corpus", "frames", "int"),
    "corpus.feature_bins": ("corpus", "feature_bins", "int"),
    "corpus.shortcut_strength": ("corpus", "shortcut_strength", "float"),
    "corpus.identity_scale": ("corpus", "identity_scale", "float"),
    "corpus.noise_scale": ("corpus", "noise_scale", "float"),
    "corpus.seed": ("corpus", "seed", "int"),
    "corpus.eval_utterances_per_speaker":
        ("corpus", "eval_utterances_per_speaker", "int"),
    "corpus.trials_per_speaker": ("corpus", "trials_per_speaker", "int"),
}


def config_from_kv(kv):
    """Build a TrainConfig from parsed key=value pairs; unknown keys are
    rejected by name."""
    weights_kw, corpus_kw, train_kw = {}, {}, {}
    dest = {"weights": weights_kw, "corpus": corpus_kw, "train": train_kw}
    for key, raw in kv.items():
        if key not in CONFIG_SCHEMA:
            raise io_mod.ConfigError(f"unknown config key {key!r}")
        section, attr, caster = CONFIG_SCHEMA[key]
        try:
            dest[section][attr] = _CASTERS[caster](raw)
        except ValueError:
            raise io_mod.ConfigError(
                f"bad value for {key!r}: {raw!r} (expected {caster})") from None
    cfg = TrainConfig(weights=LossWeights(**weights_kw),
                      corpus=CorpusSpec(**corpus_kw), **train_kw)
    cfg.validate()
    return cfg


def load_config(path):
    return config_from_kv(io_mod.read_kv_file(path))


def default_config_text():
    """The full key list with defaults, suitable as a starting config file."""
    cfg = TrainConfig()
    lines = ["# toy training configuration: key = value, '#' comments"]
    for key, (section, attr, _) in CONFIG_SCHEMA.items():
        src = {"weights": cfg.weights, "corpus": cfg.corpus, "train": cfg}[section]
        v = getattr(src, attr)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# batching


def _epoch_batches(rng, group_indices, batch_size, min_per_group):
    queues = {g: list(rng.permutation(idx)) for g, idx in group_indices.items()}
    total = sum(len(q) for q in queues.values())
    n_batches = total // batch_size
    batches = [[] for _ in range(n_batches)]
    for batch in batches:
        for g in queues:
            q = queues[g]
            for _ in range(min(min_per_group, len(q))):
                batch.append(int(q.pop()))
    rest = [int(i) for g in queues for i in queues[g]]
    if rest:
        rest = [rest[i] for i in rng.permutation(len(rest))]
    for batch in batches:
        while len(batch) < batch_size and rest:
            batch.append(rest.pop())
    return [b for b in batches if len(b) == batch_size]


def make_batches(utterances, batch_size, seed, min_per_group=2):
    """Endless stream of index batches: seeded shuffle each epoch,
    stratified so every batch holds at least min_per_group utterances of
    each proxy group whenever the corpus allows it."""
    if batch_size > len(utterances):
        raise ValueError("batch size exceeds corpus size")
    groups = sorted({u.group for u in utterances})
    if len(groups) < 2:
        warnings.warn("corpus has a single proxy group; the risk-variance "
                      "penalty will stay disabled", stacklevel=2)
    group_indices = {
        g: np.array([i for i, u in enumerate(utterances) if u.group == g],
                    dtype=int)
        for g in groups
    }
    rng = np.random.default_rng([seed, 0xBA7C])

    def stream():
        while True:
            for batch in _epoch_batches(rng, group_indices, batch_size,
                                        min_per_group):
                yield batch

    return stream()


# ---------------------------------------------------------------------------
# evaluation (deployment path: identity branch only)


def score_trials(params, utterances, trials):
    """Cosine-score every trial from identity embeddings of the given
    utterances. The sex branch and all heads are never touched."""
    feats = [u.features for u in utterances]
    emb = identity_embeddings(params, feats)
    index = {u.utt_id: i for i, u in enumerate(utterances)}
    scored = []
    for t in trials:
        s = cosine_score(emb[index[t.enroll_id]], emb[index[t.test_id]])
        scored.append(replace(t, score=s))
    return scored


def held_out_risks(params, corpus, config, batch_size=64):
    """Per-group mean speaker-classification risk on held-out utterances."""
    speakers = sorted(corpus.speakers)
    spk_index = {sid: i for i, sid in enumerate(speakers)}
    per_sample, labels = [], []
    utts = corpus.eval
    for i in range(0, len(utts), batch_size):
        chunk = utts[i:i + batch_size]
        x = Tensor(np.stack([u.features for u in chunk]))
        y = np.array([spk_index[u.speaker_id] for u in chunk])
        out = forward_pipeline(params, x, id_only=True)
        logits = aam_logits(out.z_id, y, params.heads.spk_w,
                            config.aam_scale, config.aam_margin)
        per_sample.append(cross_entropy_per_sample(logits, y).data)
        labels.extend(u.group for u in chunk)
    risk = np.concatenate(per_sample)
    labels = np.array(labels)
    out = {}
    for g in GROUPS:
        sel = labels == g
        out[g] = float(risk[sel].mean()) if sel.any() else float("nan")
    out["gap"] = abs(out["M"] - out["F"])
    return out


def evaluate(params, corpus, config, report_config=None):
    """Score the held-out trial list through the identity branch only and
    run the full fairness report, plus per-group held-out risks."""
    scored = score_trials(params, corpus.eval, corpus.trials)
    report = fairness_report(scored, report_config or ReportConfig())
    risks = held_out_risks(params, corpus, config)
    return report, risks


# ---------------------------------------------------------------------------
# training


def train(config, out_dir=None):
    """Run the toy loop; returns (params, run log records).

    The run log holds one record per step (the full loss breakdown) and one
    per evaluation (fairness report + held-out risks). With out_dir set,
    checkpoints land there at every eval and at the end.
    """
    config.validate()
    corpus = generate_corpus(config.corpus)
    speakers = sorted(corpus.speakers)
    spk_index = {sid: i for i, sid in enumerate(speakers)}
    params = init_model(config.model_config(len(speakers)), config.seed)
    named = params.named_parameters()
    velocity = {name: np.zeros_like(t.data) for name, t in named.items()}
    stream = make_batches(corpus.train, config.batch_size, config.seed,
                          config.min_per_group)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    records = []

    def run_eval(step):
        report, risks = evaluate(params, corpus, config)
        records.append({
            "kind": "eval", "step": step,
            "report": report.to_dict(),
            "held_out_risk": risks,
        })
        if out_dir:
            _save(params, os.path.join(out_dir, f"checkpoint_{step:06d}.ckpt"))

    for step in range(1, config.steps + 1):
        batch = next(stream)
        utts = [corpus.train[i] for i in batch]
        x = Tensor(np.stack([u.features for u in utts]))
        y = np.array([spk_index[u.speaker_id] for u in utts])
        glabels = np.array([u.group for u in utts])
        total, breakdown, risk_stats = total_loss(params, x, y, glabels,
                                                  config.weights,
                                                  config.min_per_group)
        if not np.isfinite(breakdown.total):
            raise DivergenceError(step)
        zero_grad(named.values())
        total.backward()
        for name, t in named.items():
            g = t.grad if t.grad is not None else 0.0
            v = velocity[name]
            v *= config.momentum
            v -= config.lr * g
            t.data += v
        rec = {"kind": "train", "step": step, **breakdown.to_dict()}
        if risk_stats.applicable:
            rec["risk_m"] = risk_stats.risk_by_group["M"]
            rec["risk_f"] = risk_stats.risk_by_group["F"]
        records.append(rec)
        if step % config.eval_interval == 0 or step == config.steps:
            run_eval(step)

    if out_dir:
        _save(params, os.path.join(out_dir, "checkpoint_final.ckpt"))
        io_mod.write_runlog(os.path.join(out_dir, "runlog.jsonl"), records)
    return params, records


def _save(params, path):
    named = {name: t.data for name, t in params.named_parameters().items()}
    meta = {"model": params.config.to_dict(),
            "activations": [l.activation for l in params.encoder.layers]}
    io_mod.save_checkpoint(path, named, meta)


def load_params(path):
    """Rebuild ModelParams from a checkpoint written by _save."""
    from .gate import GateParams
    from .model import (BranchParams, ConvLayer, EncoderParams, HeadParams,
                        ModelParams, PoolParams)

    arrays, meta = io_mod.load_checkpoint(path)
    cfg = ModelConfig.from_dict(meta["model"])
    acts = meta.get("activations")

    def t(name):
        return Tensor(arrays[name], requires_grad=True)

    layers = []
    for i in range(len(cfg.encoder_widths)):
        act = acts[i] if acts else ("relu" if i < len(cfg.encoder_widths) - 1
                                    else "linear")
        layers.append(ConvLayer(kernel=t(f"encoder.{i}.kernel"),
                                bias=t(f"encoder.{i}.bias"), activation=act))

    def branch(tag):
        return BranchParams(
            pool=PoolParams(w=t(f"{tag}.pool.w"), b=t(f"{tag}.pool.b"),
                            v=t(f"{tag}.pool.v")),
            proj_w=t(f"{tag}.proj.w"), proj_b=t(f"{tag}.proj.b"))

    return ModelParams(
        config=cfg,
        encoder=EncoderParams(layers=layers),
        gate=GateParams(kernel=t("gate.kernel"), bias=t("gate.bias")),
        id_branch=branch("id"),
        sex_branch=branch("sex"),
        heads=HeadParams(spk_w=t("head.spk_w"), sex_w=t("head.sex_w"),
                         sex_b=t("head.sex_b"), adv_w=t("head.adv_w"),
                         adv_b=t("head.adv_b")),
    )
