"""Score-level evaluation: FMR/FNMR, EER, minDCF, operating-point
calibration, Gini dispersion, GARBE, and per-subgroup error tables.

Conventions, fixed here because they change third-decimal results:
  - a trial is accepted iff score >= threshold (ties accept);
  - threshold sweeps run over all distinct scores plus one endpoint below
    the minimum (accept everything) and one above the maximum (reject
    everything);
  - EER is linearly interpolated between the two operating points that
    bracket the FMR = FNMR crossing;
  - the Gini coefficient uses the n/(n-1) sample correction, which for two
    groups reduces to |a-b| / (a+b).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

SCHEMA_VERSION = 1
GROUPS = ("M", "F")
SUBGROUP_POLICIES = ("both-sides", "enroll-side")


class EvaluationProtocolError(ValueError):
    """Trial set cannot support the requested metric (e.g. empty class)."""


@dataclass(frozen=True)
class TrialRecord:
    enroll_id: str
    test_id: str
    score: float
    mated: bool
    group_enroll: str
    group_test: str


@dataclass
class ErrorRates:
    threshold: float
    fmr: float
    fnmr: float
    n_mated: int
    n_nonmated: int
    false_matches: int
    false_nonmatches: int


@dataclass
class SubgroupRates:
    threshold: float
    policy: str
    rates: dict            # group -> ErrorRates
    missing: list          # groups with no trials under the policy


@dataclass
class ReportConfig:
    alpha: float = 0.5
    p_target: float = 0.01
    c_fnmr: float = 1.0
    c_fmr: float = 1.0
    fmr_target: float = 0.01
    policy: str = "both-sides"
    normalized_dcf: bool = True


def _split_scores(trials):
    mated = np.array([t.score for t in trials if t.mated], dtype=np.float64)
    nonmated = np.array([t.score for t in trials if not t.mated], dtype=np.float64)
    if mated.size == 0:
        raise EvaluationProtocolError("no mated trials")
    if nonmated.size == 0:
        raise EvaluationProtocolError("no non-mated trials")
    if not (np.isfinite(mated).all() and np.isfinite(nonmated).all()):
        raise EvaluationProtocolError("non-finite score in trial set")
    return np.sort(mated), np.sort(nonmated)


def _rates_at(mated_sorted, nonmated_sorted, taus):
    """FMR/FNMR at each threshold via order statistics (accept iff >= tau)."""
    taus = np.atleast_1d(np.asarray(taus, dtype=np.float64))
    fm = nonmated_sorted.size - np.searchsorted(nonmated_sorted, taus, side="left")
    fnm = np.searchsorted(mated_sorted, taus, side="left")
    return fm / nonmated_sorted.size, fnm / mated_sorted.size


def _candidates(mated_sorted, nonmated_sorted):
    uniq = np.unique(np.concatenate([mated_sorted, nonmated_sorted]))
    return np.concatenate([[uniq[0] - 1.0], uniq, [uniq[-1] + 1.0]])


def error_rates(trials, tau):
    """Pooled FMR/FNMR at one threshold, with the underlying counts."""
    mated, nonmated = _split_scores(trials)
    fm = int(nonmated.size - np.searchsorted(nonmated, tau, side="left"))
    fnm = int(np.searchsorted(mated, tau, side="left"))
    return ErrorRates(
        threshold=float(tau),
        fmr=fm / nonmated.size,
        fnmr=fnm / mated.size,
        n_mated=int(mated.size),
        n_nonmated=int(nonmated.size),
        false_matches=fm,
        false_nonmatches=fnm,
    )


def eer(trials):
    """Equal error rate and the threshold where FMR = FNMR.

    Sweeps every distinct score; when the rates never coincide exactly the
    crossing is linearly interpolated between the two bracketing operating
    points (threshold interpolated the same way).
    """
    mated, nonmated = _split_scores(trials)
    taus = _candidates(mated, nonmated)
    fmr, fnmr = _rates_at(mated, nonmated, taus)
    diff = fnmr - fmr  # monotone, runs from -1 to +1
    idx = int(np.searchsorted(diff > 0, True))  # first strictly positive
    if diff[idx - 1] == 0.0:
        return float(fmr[idx - 1]), float(taus[idx - 1])
    lo, hi = idx - 1, idx
    denom = (fnmr[hi] - fnmr[lo]) - (fmr[hi] - fmr[lo])
    t = (fmr[lo] - fnmr[lo]) / denom
    value = fmr[lo] + t * (fmr[hi] - fmr[lo])
    tau_eer = taus[lo] + t * (taus[hi] - taus[lo])
    return float(value), float(tau_eer)


def min_dcf(trials, p_target=0.01, c_fnmr=1.0, c_fmr=1.0, normalized=True):
    """Minimum detection cost over the full threshold sweep.

    DCF(tau) = c_fnmr * p_target * FNMR(tau) + c_fmr * (1-p_target) * FMR(tau).
    When normalized, the minimum is divided by the best trivial-decision
    cost min(c_fnmr * p_target, c_fmr * (1-p_target)).
    """
    mated, nonmated = _split_scores(trials)
    taus = _candidates(mated, nonmated)
    fmr, fnmr = _rates_at(mated, nonmated, taus)
    dcf = c_fnmr * p_target * fnmr + c_fmr * (1.0 - p_target) * fmr
    i = int(np.argmin(dcf))  # first minimum wins: deterministic tie-break
    value = float(dcf[i])
    if normalized:
        value /= min(c_fnmr * p_target, c_fmr * (1.0 - p_target))
    return value, float(taus[i])


def threshold_at_fmr(trials, target=0.01):
    """Smallest swept threshold whose pooled FMR is <= target.

    This is the conservative side of the FMR step function. A thin
    non-mated set (< 100 trials) only supports a coarse operating point,
    so it triggers a warning.
    """
    mated, nonmated = _split_scores(trials)
    if nonmated.size < 100:
        warnings.warn(
            f"only {nonmated.size} non-mated trials; FMR target {target} "
            "is poorly resolved", stacklevel=2)
    taus = _candidates(mated, nonmated)
    fmr, _ = _rates_at(mated, nonmated, taus)
    idx = int(np.searchsorted(fmr <= target, True))  # fmr is non-increasing
    return float(taus[idx])


def sweep_rows(trials, p_target=0.01, c_fnmr=1.0, c_fmr=1.0, normalized=True):
    """(tau, fmr, fnmr, dcf) for every candidate threshold, tau ascending."""
    mated, nonmated = _split_scores(trials)
    taus = _candidates(mated, nonmated)
    fmr, fnmr = _rates_at(mated, nonmated, taus)
    dcf = c_fnmr * p_target * fnmr + c_fmr * (1.0 - p_target) * fmr
    if normalized:
        dcf = dcf / min(c_fnmr * p_target, c_fmr * (1.0 - p_target))
    return [(float(t), float(a), float(b), float(d))
            for t, a, b, d in zip(taus, fmr, fnmr, dcf)]


def gini(values):
    """Sample-corrected Gini coefficient of nonnegative values.

    G = (n/(n-1)) * sum_ij |x_i - x_j| / (2 n^2 mean). An all-zero input
    is defined as 0 (no dispersion). Needs at least two values.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 2:
        raise EvaluationProtocolError("gini needs at least two values")
    if np.any(x < 0):
        raise EvaluationProtocolError("gini inputs must be nonnegative")
    mean = x.mean()
    if mean == 0.0:
        return 0.0
    n = x.size
    total = np.abs(x[:, None] - x[None, :]).sum()
    return float((n / (n - 1)) * total / (2.0 * n * n * mean))


def garbe_from_rates(fmr_values, fnmr_values, alpha=0.5):
    """alpha * Gini(subgroup FMRs) + (1-alpha) * Gini(subgroup FNMRs)."""
    if not 0.0 <= alpha <= 1.0:
        raise EvaluationProtocolError(f"alpha must be in [0,1], got {alpha}")
    return alpha * gini(fmr_values) + (1.0 - alpha) * gini(fnmr_values)


def garbe(subgroup, alpha=0.5):
    """GARBE at the shared threshold captured in a SubgroupRates table."""
    if subgroup.missing:
        raise EvaluationProtocolError(
            f"groups without trials: {subgroup.missing}")
    order = [g for g in GROUPS if g in subgroup.rates]
    fmrs = [subgroup.rates[g].fmr for g in order]
    fnmrs = [subgroup.rates[g].fnmr for g in order]
    return garbe_from_rates(fmrs, fnmrs, alpha)


def _trial_group(trial, policy):
    if policy == "both-sides":
        # Cross-group trials stay in the pooled metrics only.
        return trial.group_enroll if trial.group_enroll == trial.group_test else None
    if policy == "enroll-side":
        return trial.group_enroll
    raise EvaluationProtocolError(f"unknown subgroup policy {policy!r}")


def subgroup_rates(trials, tau, policy="both-sides"):
    """Per-group FMR/FNMR at one shared threshold.

    Groups with no trials under the policy are listed in .missing; a group
    that has trials but lacks a whole class raises, since its rates would
    be undefined.
    """
    buckets = {g: [] for g in GROUPS}
    for t in trials:
        g = _trial_group(t, policy)
        if g is not None:
            if g not in buckets:
                raise EvaluationProtocolError(f"unknown group label {g!r}")
            buckets[g].append(t)
    rates, missing = {}, []
    for g in GROUPS:
        if not buckets[g]:
            missing.append(g)
            continue
        try:
            rates[g] = error_rates(buckets[g], tau)
        except EvaluationProtocolError as e:
            raise EvaluationProtocolError(f"group {g}: {e}") from e
    return SubgroupRates(threshold=float(tau), policy=policy,
                         rates=rates, missing=missing)


@dataclass
class FairnessReport:
    config: ReportConfig
    n_trials: int
    n_mated: int
    n_nonmated: int
    eer: float
    eer_threshold: float
    min_dcf_normalized: float
    min_dcf_unnormalized: float
    min_dcf_threshold: float
    fmr_threshold: float
    pooled_at_threshold: ErrorRates
    subgroups: SubgroupRates
    gini_fmr: float | None
    gini_fnmr: float | None
    garbe: float | None

    def to_dict(self):
        def rate(x):
            return {"fraction": x, "percent": 100.0 * x}

        def group_entry(er):
            return {
                "fnmr": rate(er.fnmr), "fmr": rate(er.fmr),
                "n_mated": er.n_mated, "n_nonmated": er.n_nonmated,
                "false_nonmatches": er.false_nonmatches,
                "false_matches": er.false_matches,
            }

        return {
            "schema_version": SCHEMA_VERSION,
            "protocol": {
                "n_trials": self.n_trials,
                "n_mated": self.n_mated,
                "n_nonmated": self.n_nonmated,
                "alpha": self.config.alpha,
                "p_target": self.config.p_target,
                "c_fnmr": self.config.c_fnmr,
                "c_fmr": self.config.c_fmr,
                "fmr_target": self.config.fmr_target,
                "subgroup_policy": self.config.policy,
            },
            "eer": {**rate(self.eer), "threshold": self.eer_threshold},
            "min_dcf": {
                "normalized": self.min_dcf_normalized,
                "unnormalized": self.min_dcf_unnormalized,
                "threshold": self.min_dcf_threshold,
            },
            "operating_point": {
                "fmr_target": self.config.fmr_target,
                "threshold": self.fmr_threshold,
                "pooled_fmr": rate(self.pooled_at_threshold.fmr),
                "pooled_fnmr": rate(self.pooled_at_threshold.fnmr),
            },
            "subgroups": {
                g: group_entry(er) for g, er in self.subgroups.rates.items()
            },
            "missing_groups": list(self.subgroups.missing),
            "gini": {"fmr": self.gini_fmr, "fnmr": self.gini_fnmr},
            "garbe": self.garbe,
        }


def fairness_report(trials, config=None):
    """EER, minDCF, the FMR-target operating point, subgroup rates there,
    and GARBE, bundled into one deterministic report."""
    cfg = config or ReportConfig()
    trials = list(trials)
    eer_val, eer_tau = eer(trials)
    dcf_norm, dcf_tau = min_dcf(trials, cfg.p_target, cfg.c_fnmr, cfg.c_fmr,
                                normalized=True)
    dcf_raw, _ = min_dcf(trials, cfg.p_target, cfg.c_fnmr, cfg.c_fmr,
                         normalized=False)
    tau = threshold_at_fmr(trials, cfg.fmr_target)
    pooled = error_rates(trials, tau)
    sub = subgroup_rates(trials, tau, cfg.policy)
    if len(sub.rates) >= 2:
        order = [g for g in GROUPS if g in sub.rates]
        g_fmr = gini([sub.rates[g].fmr for g in order])
        g_fnmr = gini([sub.rates[g].fnmr for g in order])
        garbe_val = cfg.alpha * g_fmr + (1.0 - cfg.alpha) * g_fnmr
    else:
        # Single-group protocol: disparity is undefined, flagged via missing.
        g_fmr = g_fnmr = garbe_val = None
    return FairnessReport(
        config=cfg,
        n_trials=len(trials),
        n_mated=pooled.n_mated,
        n_nonmated=pooled.n_nonmated,
        eer=eer_val,
        eer_threshold=eer_tau,
        min_dcf_normalized=dcf_norm,
        min_dcf_unnormalized=dcf_raw,
        min_dcf_threshold=dcf_tau,
        fmr_threshold=tau,
        pooled_at_threshold=pooled,
        subgroups=sub,
        gini_fmr=g_fmr,
        gini_fnmr=g_fnmr,
        garbe=garbe_val,
    )
