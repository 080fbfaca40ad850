# SPDX-License-Identifier: MIT

import csv
import io

from dataclasses import fields, replace
from functools import lru_cache

import pytest

from hypothesis import given
from hypothesis import strategies as st

from rezone.cost import (
    ACU_SLOWDOWN,
    CostWeights,
    account,
    compare,
    workloads,
)
from rezone.monitor import Deployment, SimConfig
from rezone.trace import Trace


ALL = [Deployment.NORZ, Deployment.RZ, Deployment.RZ_NOIRQ]


@lru_cache(maxsize=None)
def trace_of(name, deployment):
    return workloads()[name].simulate(SimConfig(deployment=deployment))


weight_vectors = st.builds(
    CostWeights,
    **{f.name: st.floats(0, 100) for f in fields(CostWeights)},
)


def total(name, deployment, weights=None):
    return account(trace_of(name, deployment), weights)


class TestCostWeights:
    def test_defaults(self):
        """
        The gatekeeper round trip carries the clock ratio; units are all 1.
        """
        assert ACU_SLOWDOWN == CostWeights().mq_roundtrip
        assert 1.0 == CostWeights.units().mq_roundtrip

    def test_negative(self):
        """
        Negative weights are refused by name.
        """
        with pytest.raises(ValueError, match="'tlb_invalidate'"):
            CostWeights(tlb_invalidate=-1)

    def test_types(self):
        """
        Weights are numbers.
        """
        with pytest.raises(TypeError, match="'zone_work' must be a"):
            CostWeights(zone_work="1")


class TestAccount:
    def test_synthetic(self):
        """
        Events are charged by kind and bucketed by the phase they were
        emitted in.
        """
        trace = Trace()
        trace.phase = "A"
        trace.emit("FLUSH", core=0, lines=3)
        trace.phase = "B"
        trace.emit("TLBI", entries=2)
        trace.phase = "IN_ZONE"
        trace.emit("WORK", core=0, units=5)
        trace.emit("MEM", fetch=False, hit="miss")

        b = account(trace, CostWeights.units())

        assert {"A": 3.0, "B": 1.0, "zone": 5.0} == b.by_phase
        assert 9.0 == b.total
        assert sum(b.by_kind.values()) == b.total

    def test_cluster_config_writes_only(self):
        """
        Controller writes by the gatekeeper aren't charged as EL3 work.
        """
        trace = Trace()
        trace.phase = "D"
        trace.emit("PPC_CONFIG", requester=0, edit="x", applied=True)
        trace.emit("PPC_CONFIG", requester=0, edit="x", applied=False)
        trace.emit("PPC_CONFIG", requester=1, edit="x", applied=True)

        assert 1.0 == account(trace).total

    def test_phases_sum_to_total(self):
        """
        Both decompositions add up.
        """
        b = total("chatty", Deployment.RZ)

        assert b.total == pytest.approx(sum(b.by_phase.values()))
        assert b.total == pytest.approx(sum(b.by_kind.values()))


class TestOrderings:
    def test_isolation_costs_more(self):
        """
        Zone isolation costs more than a plain context switch.
        """
        assert (
            total("batched", Deployment.RZ).total
            > total("batched", Deployment.NORZ).total
        )

    def test_cross_zone_pays_tlbi(self):
        """
        Switching zones adds one TLB invalidation over reentering the same
        one.
        """
        cross = total("cross-zone", Deployment.RZ)
        same = total("same-zone", Deployment.RZ)

        assert 1.0 == (
            cross.by_kind["tlb_invalidate"] - same.by_kind["tlb_invalidate"]
        )
        assert cross.total > same.total

    def test_cross_zone_difference_is_exactly_one_tlbi(self):
        """
        With unit weights nothing but the invalidation tells the two apart.
        """
        units = CostWeights.units()

        cross = total("cross-zone", Deployment.RZ, units)
        same = total("same-zone", Deployment.RZ, units)

        assert units.tlb_invalidate == cross.total - same.total

    def test_batching_amortizes(self):
        """
        Relative overhead grows with the number of zone calls.
        """
        batched = compare(ALL, workloads()["batched"])
        chatty = compare(ALL, workloads()["chatty"])

        assert chatty["rz"].ratio > batched["rz"].ratio > 1.0

    def test_idle_is_free(self):
        """
        Workloads that never call a zone cost the same everywhere.
        """
        table = compare(ALL, workloads()["idle"])

        assert [1.0, 1.0, 1.0] == [r.ratio for r in table.rows]

    def test_norz_has_no_protocol(self):
        """
        The baseline charges contexts and work and nothing else.
        """
        b = total("batched", Deployment.NORZ)

        assert {"context_save_restore", "zone_work"} == set(b.by_kind)

    @given(weight_vectors)
    def test_isolation_never_cheaper(self, weights):
        """
        Whatever the weights, isolation costs at least the baseline: it does
        everything the baseline does and more.
        """
        for name in ("batched", "chatty", "cross-zone"):
            rz = total(name, Deployment.RZ, weights).total
            norz = total(name, Deployment.NORZ, weights).total

            assert rz >= norz - 1e-9, name

    @given(weight_vectors, st.sampled_from([f.name for f in fields(CostWeights)]))
    def test_weights_are_monotone(self, weights, name):
        """
        Raising one weight never lowers a total.
        """
        heavier = replace(weights, **{name: getattr(weights, name) + 1})

        assert (
            total("chatty", Deployment.RZ, heavier).total
            >= total("chatty", Deployment.RZ, weights).total
        )


class TestComparisonTable:
    def test_without_baseline(self):
        """
        Ratios need the baseline.
        """
        table = compare([Deployment.RZ], workloads()["batched"])

        assert None is table["rz"].ratio
        with pytest.raises(KeyError):
            table["norz"]  # noqa: B018

    def test_csv(self):
        """
        One CSV row per deployment, phases as columns.
        """
        table = compare(ALL, workloads()["batched"])

        rows = list(csv.DictReader(io.StringIO(table.to_csv())))

        assert ["norz", "rz", "rz-noirq"] == [r["config"] for r in rows]
        assert "1.0000" == rows[0]["ratio"]
        assert {"workload", "config", "total", "ratio", "zone"} <= set(rows[0])

    def test_records(self):
        """
        Records carry the totals and the per-phase split.
        """
        table = compare(ALL, workloads()["batched"])

        recs = table.to_records()

        assert [r.total for r in table.rows] == [r["total"] for r in recs]
        assert all("phase.zone" in r for r in recs)
