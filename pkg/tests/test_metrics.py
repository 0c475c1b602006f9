import numpy as np
import pytest

from asvfair import metrics as m
from asvfair.metrics import (EvaluationProtocolError, ReportConfig, TrialRecord,
                             eer, error_rates, fairness_report, garbe,
                             garbe_from_rates, gini, min_dcf, subgroup_rates,
                             sweep_rows, threshold_at_fmr)

from oracles import eer_brute_force, gini_pairwise, min_dcf_brute_force


def make_trials(mated_scores, nonmated_scores, group="M"):
    ts = [TrialRecord("e", "t", float(s), True, group, group)
          for s in mated_scores]
    ts += [TrialRecord("e", "t", float(s), False, group, group)
           for s in nonmated_scores]
    return ts


def random_trials(rng, n, separation=1.0):
    n_mated = max(1, int(n * rng.uniform(0.2, 0.8)))
    n_non = max(1, n - n_mated)
    mated = rng.normal(separation, 1.0, size=n_mated)
    nonmated = rng.normal(0.0, 1.0, size=n_non)
    return make_trials(mated, nonmated), mated, nonmated


class TestErrorRates:
    def test_separated(self):
        er = error_rates(make_trials([0.9], [0.1]), 0.5)
        assert er.fmr == 0.0 and er.fnmr == 0.0

    def test_accept_all(self):
        er = error_rates(make_trials([0.9, 0.8], [0.1, 0.2]), 0.0)
        assert er.fmr == 1.0 and er.fnmr == 0.0

    def test_hand_count(self):
        er = error_rates(make_trials([0.2, 0.6, 0.9], [0.3, 0.7]), 0.5)
        assert er.fnmr == pytest.approx(1 / 3)
        assert er.fmr == pytest.approx(1 / 2)
        assert er.false_nonmatches == 1 and er.false_matches == 1

    def test_ties_accept(self):
        er = error_rates(make_trials([0.5], [0.5]), 0.5)
        assert er.fmr == 1.0 and er.fnmr == 0.0

    def test_empty_class_raises(self):
        with pytest.raises(EvaluationProtocolError):
            error_rates([TrialRecord("e", "t", 0.5, True, "M", "M")], 0.5)


class TestEer:
    def test_separated(self):
        value, _ = eer(make_trials([0.8, 0.9], [0.1, 0.2]))
        assert value == 0.0

    def test_identical_multisets_give_half(self):
        scores = [0.1, 0.4, 0.7]
        value, _ = eer(make_trials(scores, scores))
        assert value == pytest.approx(0.5, abs=1e-12)

    def test_matches_brute_force_on_random_sets(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            trials, mated, nonmated = random_trials(rng, int(rng.integers(20, 800)))
            fast, _ = eer(trials)
            slow = eer_brute_force(mated, nonmated)
            assert fast == pytest.approx(slow, abs=1e-9)

    def test_threshold_is_consistent(self):
        rng = np.random.default_rng(1)
        trials, _, _ = random_trials(rng, 300)
        value, tau = eer(trials)
        er = error_rates(trials, tau)
        # at the interpolated threshold the two step-function rates bracket
        assert min(er.fmr, er.fnmr) - 1e-9 <= value <= max(er.fmr, er.fnmr) + 1e-9


class TestMinDcf:
    def test_separated_is_zero(self):
        value, _ = min_dcf(make_trials([0.9], [0.1]))
        assert value == 0.0

    def test_degenerate_equal_scores(self):
        trials = make_trials([0.5] * 20, [0.5] * 30)
        assert min_dcf(trials)[0] == 1.0
        assert min_dcf(trials, normalized=False)[0] == pytest.approx(0.01)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            trials, mated, nonmated = random_trials(rng, int(rng.integers(20, 800)))
            fast, _ = min_dcf(trials)
            slow = min_dcf_brute_force(mated, nonmated)
            assert fast == pytest.approx(slow, abs=1e-12)

    def test_unnormalized_bounded_by_trivial_decisions(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            trials, _, _ = random_trials(rng, 200, separation=0.2)
            raw, _ = min_dcf(trials, normalized=False)
            assert raw <= 0.01 + 1e-15
            norm, _ = min_dcf(trials)
            assert 0.0 <= norm <= 1.0


class TestThresholdAtFmr:
    def test_uniform_hundred(self):
        nonmated = [i / 100 for i in range(1, 101)]
        trials = make_trials([2.0], nonmated)
        tau = threshold_at_fmr(trials, 0.01)
        assert error_rates(trials, tau).fmr == pytest.approx(0.01)
        assert tau == pytest.approx(1.0)

    def test_target_one_accepts_all(self):
        trials = make_trials([0.9] * 5, np.linspace(0.1, 0.5, 120))
        tau = threshold_at_fmr(trials, 1.0)
        assert tau <= 0.1
        assert error_rates(trials, tau).fmr == 1.0

    def test_target_zero(self):
        trials = make_trials([0.9] * 5, np.linspace(0.1, 0.5, 120))
        tau = threshold_at_fmr(trials, 0.0)
        assert tau > 0.5
        assert error_rates(trials, tau).fmr == 0.0

    def test_warns_on_thin_nonmated(self):
        trials = make_trials([0.9] * 5, [0.1, 0.2, 0.3])
        with pytest.warns(UserWarning):
            threshold_at_fmr(trials, 0.01)


class TestMonotonicity:
    def test_fmr_fnmr_monotone_in_tau(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            trials, _, _ = random_trials(rng, int(rng.integers(30, 500)))
            rows = sweep_rows(trials)
            taus = [r[0] for r in rows]
            fmrs = [r[1] for r in rows]
            fnmrs = [r[2] for r in rows]
            assert taus == sorted(taus)
            assert all(a >= b for a, b in zip(fmrs, fmrs[1:]))
            assert all(a <= b for a, b in zip(fnmrs, fnmrs[1:]))

    def test_shuffle_invariance(self):
        import warnings

        rng = np.random.default_rng(5)
        trials, _, _ = random_trials(rng, 200)
        shuffled = list(trials)
        rng.shuffle(shuffled)
        assert eer(trials) == eer(shuffled)
        assert min_dcf(trials) == min_dcf(shuffled)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert threshold_at_fmr(trials, 0.05) == threshold_at_fmr(shuffled, 0.05)


class TestGini:
    def test_equal_values(self):
        assert gini([0.3, 0.3]) == 0.0

    def test_table_round_trip_fmr(self):
        assert gini([3.80, 4.49]) == pytest.approx(0.69 / 8.29, abs=1e-12)

    def test_table_round_trip_fnmr(self):
        assert gini([0.96, 1.07]) == pytest.approx(0.11 / 2.03, abs=1e-12)

    def test_two_value_closed_form(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            a, b = rng.uniform(0, 5, size=2)
            expected = abs(a - b) / (a + b) if a + b > 0 else 0.0
            assert gini([a, b]) == pytest.approx(expected, abs=1e-12)

    def test_matches_pairwise_oracle_general_n(self):
        rng = np.random.default_rng(7)
        for n in (2, 3, 5, 8):
            x = rng.uniform(0, 3, size=n)
            assert gini(x) == pytest.approx(gini_pairwise(x), abs=1e-12)

    def test_zero_mean_defined_as_zero(self):
        assert gini([0.0, 0.0, 0.0]) == 0.0

    def test_preconditions(self):
        with pytest.raises(EvaluationProtocolError):
            gini([0.5])
        with pytest.raises(EvaluationProtocolError):
            gini([0.5, -0.1])


class TestGarbe:
    def test_equal_rates_zero(self):
        assert garbe_from_rates([2.0, 2.0], [1.0, 1.0]) == 0.0

    def test_paper_main_full_row(self):
        value = garbe_from_rates([3.80, 4.49], [0.96, 1.07], alpha=0.5)
        assert value == pytest.approx(0.0687, abs=5e-4)
        assert round(value, 2) == 0.07

    def test_paper_without_cap_row(self):
        value = garbe_from_rates([4.76, 6.30], [1.03, 0.95], alpha=0.5)
        assert value == pytest.approx(0.0898, abs=5e-4)
        assert round(value, 2) == 0.09

    def test_relabel_and_rescale_invariance(self):
        fmrs, fnmrs = [3.80, 4.49], [0.96, 1.07]
        v = garbe_from_rates(fmrs, fnmrs)
        assert garbe_from_rates(fmrs[::-1], fnmrs[::-1]) == pytest.approx(v, abs=1e-15)
        scaled = garbe_from_rates([x / 100 for x in fmrs],
                                  [x / 100 for x in fnmrs])
        assert scaled == pytest.approx(v, abs=1e-12)

    def test_alpha_weighting(self):
        v0 = garbe_from_rates([1.0, 3.0], [1.0, 1.0], alpha=1.0)
        assert v0 == pytest.approx(0.5, abs=1e-12)     # gini(1,3) = 2/4
        v1 = garbe_from_rates([1.0, 1.0], [1.0, 3.0], alpha=0.0)
        assert v1 == pytest.approx(0.5, abs=1e-12)


def eight_trial_set():
    # per-group counts chosen for easy hand arithmetic at tau = 0.5
    return [
        TrialRecord("m1", "m1b", 0.9, True, "M", "M"),
        TrialRecord("m2", "m2b", 0.3, True, "M", "M"),   # false non-match
        TrialRecord("f1", "f1b", 0.8, True, "F", "F"),
        TrialRecord("f2", "f2b", 0.7, True, "F", "F"),
        TrialRecord("m3", "m4", 0.6, False, "M", "M"),   # false match
        TrialRecord("m5", "m6", 0.1, False, "M", "M"),
        TrialRecord("f3", "f4", 0.2, False, "F", "F"),
        TrialRecord("f5", "m7", 0.9, False, "F", "M"),   # cross-group
    ]


class TestSubgroupRates:
    def test_hand_built_counts(self):
        sub = subgroup_rates(eight_trial_set(), 0.5)
        assert sub.rates["M"].fnmr == pytest.approx(0.5)   # 1 of 2
        assert sub.rates["M"].fmr == pytest.approx(0.5)    # 1 of 2
        assert sub.rates["F"].fnmr == pytest.approx(0.0)
        assert sub.rates["F"].fmr == pytest.approx(0.0)    # cross excluded
        assert sub.missing == []

    def test_cross_group_counts_in_enroll_policy(self):
        sub = subgroup_rates(eight_trial_set(), 0.5, policy="enroll-side")
        # the cross-group impostor (enroll F, score .9) now lands in F
        assert sub.rates["F"].fmr == pytest.approx(0.5)

    def test_all_single_group_flags_missing(self):
        trials = make_trials([0.9, 0.8], [0.1, 0.2], group="M")
        sub = subgroup_rates(trials, 0.5)
        assert sub.missing == ["F"]
        assert set(sub.rates) == {"M"}

    def test_group_with_one_class_raises(self):
        trials = make_trials([0.9], [0.1], group="M")
        trials.append(TrialRecord("f", "f2", 0.7, True, "F", "F"))
        with pytest.raises(EvaluationProtocolError):
            subgroup_rates(trials, 0.5)

    def test_symmetric_groups_identical_rates(self):
        trials = (make_trials([0.9, 0.3], [0.6, 0.1], group="M")
                  + make_trials([0.9, 0.3], [0.6, 0.1], group="F"))
        sub = subgroup_rates(trials, 0.5)
        assert sub.rates["M"].fmr == sub.rates["F"].fmr
        assert sub.rates["M"].fnmr == sub.rates["F"].fnmr
        assert garbe(sub) == 0.0

    def test_unknown_policy(self):
        with pytest.raises(EvaluationProtocolError):
            subgroup_rates(eight_trial_set(), 0.5, policy="test-side")


class TestFairnessReport:
    def _symmetric_separated(self):
        trials = []
        for g in ("M", "F"):
            trials += make_trials(np.linspace(0.8, 0.95, 120),
                                  np.linspace(0.05, 0.2, 150), group=g)
        return trials

    def test_separated_symmetric(self):
        rep = fairness_report(self._symmetric_separated())
        assert rep.eer == 0.0
        assert rep.min_dcf_normalized == 0.0
        assert rep.garbe == 0.0

    def test_internal_garbe_reconstruction(self):
        rng = np.random.default_rng(8)
        trials = []
        for g, sep in (("M", 1.4), ("F", 1.0)):
            mated = rng.normal(sep, 1.0, size=300)
            nonmated = rng.normal(0.0, 1.0, size=400)
            trials += make_trials(mated, nonmated, group=g)
        rep = fairness_report(trials)
        alpha = rep.config.alpha
        assert rep.garbe == pytest.approx(
            alpha * rep.gini_fmr + (1 - alpha) * rep.gini_fnmr, abs=1e-15)

    def test_deterministic_dict(self):
        import json
        trials = self._symmetric_separated()
        a = json.dumps(fairness_report(trials).to_dict())
        b = json.dumps(fairness_report(trials).to_dict())
        assert a == b

    def test_single_group_flagged(self):
        trials = make_trials(np.linspace(0.6, 0.9, 150),
                             np.linspace(0.1, 0.4, 150), group="M")
        rep = fairness_report(trials)
        assert rep.garbe is None
        assert rep.subgroups.missing == ["F"]
        d = rep.to_dict()
        assert d["missing_groups"] == ["F"]


class TestSweepRows:
    def test_row_count_and_consistency(self):
        rng = np.random.default_rng(9)
        trials, mated, nonmated = random_trials(rng, 300)
        rows = sweep_rows(trials)
        distinct = len(np.unique(np.concatenate([mated, nonmated])))
        assert len(rows) == distinct + 2
        assert min(r[3] for r in rows) == pytest.approx(min_dcf(trials)[0],
                                                        abs=1e-15)
