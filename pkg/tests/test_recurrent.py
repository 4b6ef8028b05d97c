import numpy as np
import pandas as pd
import pytest

from seqsurv import recurrent as rc
from seqsurv import survival as sv


def make_records(patients):
    """patients: {pid: [(start, stop, status), ...]} with baseline covariates."""
    rows = []
    rng = np.random.default_rng(0)
    for pid, intervals in patients.items():
        treatment = int(rng.integers(1, 3))
        number = int(rng.integers(1, 4))
        size = float(rng.integers(1, 5))
        for enum, (start, stop, status) in enumerate(intervals, start=1):
            rows.append({
                "id": pid, "treatment": treatment, "number": number, "size": size,
                "recur": sum(1 for iv in intervals if iv[2] == 1),
                "start": float(start), "stop": float(stop), "status": status,
                "rtumor": 0.0, "rsize": 0.0, "enum": enum,
            })
    return pd.DataFrame(rows)


@pytest.fixture
def multi_event_records():
    rng = np.random.default_rng(7)
    patients = {}
    for pid in range(1, 31):
        t = 0.0
        intervals = []
        n_events = int(rng.integers(0, 4))
        for _ in range(n_events):
            gap = float(rng.integers(1, 8))
            intervals.append((t, t + gap, 1))
            t += gap
        intervals.append((t, t + float(rng.integers(1, 8)), 0))
        patients[pid] = intervals
    return make_records(patients)


@pytest.fixture
def single_event_records():
    rng = np.random.default_rng(3)
    patients = {}
    for pid in range(1, 26):
        stop = float(rng.integers(1, 15))
        status = int(rng.random() < 0.7)
        patients[pid] = [(0.0, stop, status)]
    return make_records(patients)


COVS = ["treatment", "number", "size"]


class TestExpansions:
    def test_ag_direct_mapping(self):
        records = make_records({1: [(0, 5, 1), (5, 20, 0)]})
        table = rc.expand_ag(records, COVS)
        assert len(table) == 2
        assert list(table["event"]) == [1, 0]
        assert list(table["start"]) == [0.0, 5.0]
        assert set(table.columns) >= set(rc.META_COLUMNS + COVS)

    def test_ag_row_count_audit(self, multi_event_records):
        table = rc.expand_ag(multi_event_records, COVS)
        assert len(table) == len(multi_event_records)  # no zero-length rows here

    def test_ag_drops_zero_length_with_warning(self):
        records = make_records({1: [(0, 0, 1), (0, 6, 0)], 2: [(0, 4, 0)]})
        with pytest.warns(UserWarning, match="zero-length"):
            table = rc.expand_ag(records, COVS)
        assert len(table) == 2

    def test_ag_no_recurrences_all_censored(self):
        records = make_records({1: [(0, 5, 0)], 2: [(0, 3, 0)]})
        table = rc.expand_ag(records, COVS)
        assert table["event"].sum() == 0

    def test_pwp_strata_follow_event_order(self):
        records = make_records({1: [(0, 2, 1), (2, 5, 1), (5, 9, 1), (9, 12, 0)]})
        table = rc.expand_pwp(records, COVS)
        assert list(table["stratum"]) == [1, 2, 3, 4]

    def test_pwp_gap_resets_clock(self):
        records = make_records({1: [(0, 2, 1), (2, 7, 0)]})
        table = rc.expand_pwp(records, COVS, timescale="gap")
        assert list(table["start"]) == [0.0, 0.0]
        assert list(table["stop"]) == [2.0, 5.0]

    def test_pwp_gap_equals_total_when_starts_zero(self, single_event_records):
        total = rc.expand_pwp(single_event_records, COVS, timescale="total")
        gap = rc.expand_pwp(single_event_records, COVS, timescale="gap")
        pd.testing.assert_frame_equal(total, gap)

    def test_wlw_row_count_is_k_times_patients(self, multi_event_records):
        table = rc.expand_wlw(multi_event_records, COVS, k_max=4)
        assert len(table) == 4 * multi_event_records["id"].nunique()

    def test_wlw_censors_missing_orders_at_followup(self):
        records = make_records({1: [(0, 4, 1), (4, 11, 0)]})
        table = rc.expand_wlw(records, COVS, k_max=3)
        assert list(table["stratum"]) == [1, 2, 3]
        assert list(table["event"]) == [1, 0, 0]
        assert list(table["stop"]) == [4.0, 11.0, 11.0]

    def test_cox_first_takes_first_event(self):
        records = make_records({1: [(0, 4, 1), (4, 11, 1), (11, 20, 0)], 2: [(0, 9, 0)]})
        table = rc.expand_cox_first(records, COVS)
        assert list(table["stop"]) == [4.0, 9.0]
        assert list(table["event"]) == [1, 0]

    def test_cox_interval_ignores_entry_times(self):
        records = make_records({1: [(0, 4, 1), (4, 11, 0)]})
        table = rc.expand_cox_interval(records, COVS)
        assert list(table["start"]) == [0.0, 0.0]
        assert list(table["stop"]) == [4.0, 11.0]

    def test_expansions_invariant_to_row_permutation(self, multi_event_records):
        shuffled = multi_event_records.sample(frac=1.0, random_state=5).reset_index(drop=True)
        for expand in (rc.expand_ag, rc.expand_cox_first, rc.expand_cox_interval):
            pd.testing.assert_frame_equal(expand(multi_event_records, COVS), expand(shuffled, COVS))
        pd.testing.assert_frame_equal(
            rc.expand_wlw(multi_event_records, COVS), rc.expand_wlw(shuffled, COVS)
        )


class TestFitClassical:
    def test_ag_equals_standard_cox_with_single_events(self, single_event_records):
        ag = rc.run_classical(single_event_records, "ag", COVS)
        cox = rc.run_classical(single_event_records, "cox_first", COVS)
        np.testing.assert_allclose(ag.beta, cox.beta, atol=1e-8)

    def test_wlw_k1_equals_standard_cox(self, single_event_records):
        wlw = rc.run_classical(single_event_records, "wlw", COVS, wlw_k=1)
        cox = rc.run_classical(single_event_records, "cox_first", COVS)
        np.testing.assert_allclose(wlw.beta, cox.beta, atol=1e-8)

    def test_pwp_single_interval_equals_standard_cox(self, single_event_records):
        pwp = rc.run_classical(single_event_records, "pwp", COVS)
        cox = rc.run_classical(single_event_records, "cox_first", COVS)
        np.testing.assert_allclose(pwp.beta, cox.beta, atol=1e-8)

    def test_pwp_drops_sparse_strata(self):
        patients = {pid: [(0, 2 + pid % 5, 1), (2 + pid % 5, 9 + pid, 0)] for pid in range(1, 11)}
        patients[1] = [(0, 2, 1), (2, 5, 1), (5, 8, 0)]  # single stratum-2 event
        records = make_records(patients)
        with pytest.warns(UserWarning, match="fewer than 2 events"):
            fit = rc.run_classical(records, "pwp", COVS)
        assert fit.n_strata < 3

    def test_model_metadata_in_summary(self, multi_event_records):
        fit = rc.run_classical(multi_event_records, "ag", COVS)
        d = fit.to_dict()
        assert d["model_kind"] == "ag"
        assert d["n_clusters"] == multi_event_records["id"].nunique()
        assert np.isfinite(d["aic"])

    def test_ag_and_wlw_differ_but_finite(self, multi_event_records):
        ag = rc.run_classical(multi_event_records, "ag", COVS)
        wlw = rc.run_classical(multi_event_records, "wlw", COVS)
        assert np.isfinite(ag.aic) and np.isfinite(wlw.aic)
        assert ag.n != wlw.n

    def test_unknown_kind_rejected(self, multi_event_records):
        with pytest.raises(ValueError, match="unknown kind"):
            rc.fit_classical(rc.expand_ag(multi_event_records, COVS), "frailty")
