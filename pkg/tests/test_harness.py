"""Batch execution, aggregation and sweeps."""

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from statsmodels.stats.proportion import proportion_confint

from sqkd.channel import NoiseModel
from sqkd.harness import (
    SWEEP_COLUMNS,
    Accumulator,
    BatchStats,
    TrialBatch,
    _chunk_size,
    _run_chunk,
    collect,
    rows_to_csv,
    run_batch,
    sweep,
    wilson_interval,
)
from sqkd.parties import ProtocolConfig, RoundClass, simulate


class TestWilson:
    @given(st.integers(1, 5000), st.data())
    def test_matches_statsmodels(self, total, data):
        k = data.draw(st.integers(0, total))
        lo, hi = proportion_confint(k, total, alpha=0.05, method="wilson")
        np.testing.assert_allclose(wilson_interval(k, total), (lo, hi), atol=1e-9)

    def test_empty(self):
        assert wilson_interval(0, 0) == (0.0, 1.0)


class TestBatch:
    def test_trial_ids(self):
        np.testing.assert_array_equal(TrialBatch(ProtocolConfig(), trials=3, first_trial=5).trial_ids(), [5, 6, 7])

    def test_canonical_attack(self):
        assert TrialBatch(ProtocolConfig(), "IR:Z:RET").attack == "ir:z:ret"

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            TrialBatch(ProtocolConfig(), trials=0)

    def test_chunk_size_bounded(self):
        assert _chunk_size(TrialBatch(ProtocolConfig(), trials=5000), None) <= 1024
        # retained probe states cost memory: large N shrinks the chunk
        big = TrialBatch(ProtocolConfig(n=4000), "probe:0.1:ret", trials=5000)
        assert _chunk_size(big, None) < 1024


class TestDeterminism:
    CFG = ProtocolConfig("p1", n=8, seed=77)

    @pytest.mark.parametrize("attack", ["none", "probe:pi/4:ret"])
    def test_chunking_and_workers(self, attack):
        batch = TrialBatch(self.CFG, attack, trials=60)
        reference = run_batch(batch, workers=1, chunk_size=60).to_json()
        assert run_batch(batch, workers=1, chunk_size=7).to_json() == reference
        assert run_batch(batch, workers=2, chunk_size=13).to_json() == reference

    def test_merge_order(self):
        batch = TrialBatch(self.CFG, "ir:z:ret", trials=30)
        parts = [_run_chunk(batch, a, b, False) for a, b in [(0, 10), (10, 17), (17, 30)]]
        outputs = set()
        for order in itertools.permutations(range(3)):
            acc = Accumulator()
            for i in order:
                acc.merge(parts[i])
            outputs.add(BatchStats(batch, acc).to_json())
        assert len(outputs) == 1

    def test_collect_matches_simulate(self):
        batch = TrialBatch(self.CFG, "none", trials=12, first_trial=3)
        a = [r.to_json() for r in collect(batch, chunk_size=5)]
        b = [r.to_json() for r in simulate(self.CFG, "none", range(3, 15))]
        assert a == b

    def test_exchange_only_agrees_with_full(self):
        batch = TrialBatch(self.CFG, "probe:0.6:ret", trials=40)
        full = run_batch(batch)
        fast = run_batch(batch, exchange_only=True)
        assert full.outcome_distribution() == fast.outcome_distribution()
        assert full.error_rate(RoundClass.X_CTRL) == fast.error_rate(RoundClass.X_CTRL)


class TestStats:
    def test_no_eve(self):
        stats = run_batch(TrialBatch(ProtocolConfig("p1", n=8), trials=50))
        d = stats.to_dict()
        assert d["trials"] == 50 and d["detection_rate"] == 0.0
        assert d["error_rates"]["X_CTRL"]["errors"] == 0
        assert stats.sift_mean == pytest.approx(20, abs=3)
        assert sum(d["abort_histogram"].values()) == 50
        assert d["measurements"].get("bob", 0) == 0

    def test_qsdc_fields(self):
        d = run_batch(TrialBatch(ProtocolConfig("qsdc", n=8), "mitm", trials=10)).to_dict()
        assert d["withheld"] == 10 and d["detected_and_withheld"] == 10
        assert d["eve_payload_info_mean"] == 0.0

    def test_json_layout(self):
        text = run_batch(TrialBatch(ProtocolConfig(n=4), trials=3)).to_json()
        assert text.endswith("\n") and text.startswith('{\n  "abort_histogram"')


class TestSweep:
    def test_threshold_completion_monotone(self):
        base = ProtocolConfig("p1", n=8, seed=3)
        values = [0.0, 0.2, 0.4, 0.6, 1.0]
        rows = sweep("threshold", values, base, "probe:pi/3:ret", trials=40)
        rates = [r["completion_rate"] for r in rows]
        assert rates == sorted(rates)

    def test_noise_axis(self):
        rows = sweep("noise", [0.0, 0.1], ProtocolConfig("p1", n=8), trials=20)
        assert rows[0]["z_ctrl_error"] == 0.0 and rows[1]["z_ctrl_error"] > 0

    def test_theta_axis(self):
        rows = sweep("theta", [0.0, 1.2], ProtocolConfig("p1", n=8), "probe:0:ret", trials=20)
        assert rows[0]["x_ctrl_error"] == 0.0 and rows[1]["x_ctrl_error"] > 0

    def test_unknown_axis(self):
        with pytest.raises(ValueError):
            sweep("colour", [1], ProtocolConfig())

    def test_csv(self):
        rows = [{"a": 0.1, "b": None, "c": 3}, {"a": 1 / 3, "b": "x", "c": 0}]
        assert rows_to_csv(rows) == "a,b,c\n0.1,,3\n0.3333333333333333,x,0\n"

    def test_csv_columns_stable(self):
        rows = sweep("noise", [0.0], ProtocolConfig("p1", n=4, noise=NoiseModel("depolarizing", 0.1)), trials=2)
        assert rows_to_csv(rows, SWEEP_COLUMNS).splitlines()[0] == ",".join(SWEEP_COLUMNS)
