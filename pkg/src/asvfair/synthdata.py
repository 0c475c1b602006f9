"""Deterministic two-group synthetic speaker corpus with a controllable
group-shortcut cue.

Every frame is speaker prototype + shortcut offset + Gaussian noise. The
offset is a fixed random unit direction scaled by the shortcut strength and
is applied to group M only: a one-sided spectral displacement, the simplest
way to make score distributions shift differently per group under a shared
threshold. At strength 0 the two groups are statistically identical.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import io as io_mod
from .metrics import GROUPS, TrialRecord


@dataclass(frozen=True)
class CorpusSpec:
    speakers_per_group: int = 8
    utterances_per_speaker: int = 10
    frames: int = 16
    feature_bins: int = 12
    shortcut_strength: float = 0.0
    identity_scale: float = 1.0
    noise_scale: float = 0.5
    seed: int = 0
    eval_utterances_per_speaker: int = 4
    trials_per_speaker: int = 10

    def validate(self):
        for name in ("speakers_per_group", "utterances_per_speaker", "frames",
                     "feature_bins", "eval_utterances_per_speaker",
                     "trials_per_speaker"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.shortcut_strength < 0:
            raise ValueError("shortcut_strength must be >= 0")
        if self.eval_utterances_per_speaker < 2:
            raise ValueError("need >= 2 eval utterances per speaker for mated trials")


@dataclass(frozen=True)
class Utterance:
    utt_id: str
    speaker_id: str
    group: str
    features: np.ndarray  # [F,T]


@dataclass
class Corpus:
    spec: CorpusSpec
    train: list
    eval: list
    trials: list  # TrialRecords over eval utterances, scores left at 0.0

    @property
    def speakers(self):
        seen = {}
        for u in self.train:
            seen.setdefault(u.speaker_id, u.group)
        return seen


def _speaker_ids(spec):
    ids = []
    for g in GROUPS:
        ids += [f"{g}{i:02d}" for i in range(spec.speakers_per_group)]
    return ids


def generate_corpus(spec):
    """Build (train utterances, held-out utterances, trial list), all fully
    determined by the spec including its seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    f_bins, t_len = spec.feature_bins, spec.frames

    direction = rng.normal(size=f_bins)
    direction /= np.sqrt(direction @ direction)
    offsets = {"M": spec.shortcut_strength * direction,
               "F": np.zeros(f_bins)}

    speaker_ids = _speaker_ids(spec)
    prototypes = {
        sid: rng.normal(size=f_bins) * spec.identity_scale for sid in speaker_ids
    }

    def make_utt(sid, tag, j):
        group = sid[0]
        base = prototypes[sid] + offsets[group]
        noise = rng.normal(size=(f_bins, t_len)) * spec.noise_scale
        feats = base[:, None] + noise
        return Utterance(utt_id=f"{sid}-{tag}{j:02d}", speaker_id=sid,
                         group=group, features=feats)

    train, eval_utts = [], []
    for sid in speaker_ids:
        for j in range(spec.utterances_per_speaker):
            train.append(make_utt(sid, "t", j))
        for j in range(spec.eval_utterances_per_speaker):
            eval_utts.append(make_utt(sid, "e", j))

    by_speaker = {}
    for u in eval_utts:
        by_speaker.setdefault(u.speaker_id, []).append(u)

    def pick(utts):
        return utts[rng.integers(len(utts))]

    trials = []

    def add_trial(a, b, mated):
        trials.append(TrialRecord(
            enroll_id=a.utt_id, test_id=b.utt_id, score=0.0, mated=mated,
            group_enroll=a.group, group_test=b.group))

    for sid in speaker_ids:
        own = by_speaker[sid]
        group = sid[0]
        same_group_others = [s for s in speaker_ids
                             if s != sid and s[0] == group]
        other_group = [s for s in speaker_ids if s[0] != group]
        for _ in range(spec.trials_per_speaker):
            i = rng.integers(len(own))
            k = rng.integers(len(own) - 1)
            j = k if k < i else k + 1  # distinct second utterance
            add_trial(own[i], own[j], mated=True)
        if same_group_others:
            for _ in range(spec.trials_per_speaker):
                imp = by_speaker[pick(same_group_others)]
                add_trial(pick(own), pick(imp), mated=False)
        for _ in range(spec.trials_per_speaker):
            imp = by_speaker[pick(other_group)]
            add_trial(pick(own), pick(imp), mated=False)

    return Corpus(spec=spec, train=train, eval=eval_utts, trials=trials)


def _utterance_means(utts):
    feats = np.stack([u.features.mean(axis=1) for u in utts])
    labels = np.array([u.group for u in utts])
    return feats, labels


def shortcut_severity(corpus):
    """Held-out accuracy of a linear two-class group probe on
    utterance-mean features. 0.5 means no usable group cue.

    The probe is fit and scored on disjoint speaker halves: with shared
    speakers a centroid direction can memorize which side of a random
    hyperplane each prototype falls on, which would read as a group cue
    even when none was injected."""
    speakers = sorted({u.speaker_id for u in corpus.train})
    fit_spk = {s for g in GROUPS
               for s in [x for x in speakers if x[0] == g][0::2]}
    utts = corpus.train + corpus.eval
    fit = [u for u in utts if u.speaker_id in fit_spk]
    held = [u for u in utts if u.speaker_id not in fit_spk]
    xf, yf = _utterance_means(fit)
    xh, yh = _utterance_means(held)
    mu = {g: xf[yf == g].mean(axis=0) for g in GROUPS}
    w = mu["M"] - mu["F"]
    c = w @ (mu["M"] + mu["F"]) / 2.0
    pred = np.where(xh @ w - c >= 0.0, "M", "F")
    return float((pred == yh).mean())


def with_seed(spec, seed):
    return replace(spec, seed=seed)


def export_corpus(corpus, out_dir):
    """Write one binary feature file per utterance, a manifest, and the
    trial list (score column absent)."""
    import os

    feat_dir = os.path.join(out_dir, "features")
    os.makedirs(feat_dir, exist_ok=True)
    rows = []
    for u in corpus.train + corpus.eval:
        rel = os.path.join("features", f"{u.utt_id}.feat")
        io_mod.write_feature_file(os.path.join(out_dir, rel), u.features)
        rows.append((u.utt_id, u.speaker_id, u.group, rel))
    io_mod.write_manifest(os.path.join(out_dir, "manifest.csv"), rows)
    io_mod.write_trial_list(os.path.join(out_dir, "trials.csv"), corpus.trials)
