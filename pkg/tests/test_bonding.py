import numpy as np
import pytest

from mlosim.bonding import BondedLink, as_link, punctured_txop, select_primary, txop_payload
from mlosim.engine import ScriptedSource, run
from mlosim.errors import SimulationError
from mlosim.harness import saturated_throughput
from mlosim.trace import BinaryTrace, gen_onoff_trace
from mlosim.traffic import poisson_arrivals


def idle(ch=36, n=1000):
    return BinaryTrace(ch, np.zeros(n, bool))


def busy_at(slots, ch=40, n=1000):
    bits = np.zeros(n, bool)
    bits[list(slots)] = True
    return BinaryTrace(ch, bits)


def with_occupancy(occ, ch, n=100):
    k = int(round(occ * n))
    return BinaryTrace(ch, [True] * k + [False] * (n - k))


class TestPuncturing:
    def test_all_idle_80(self):
        link = BondedLink(tuple(idle(36 + 4 * i) for i in range(4)))
        assert punctured_txop(link, 80) == {0, 1, 2, 3}

    def test_non_contiguous_subset(self):
        # 40 busy over [70, 80) and 48 busy long before: {36, 44, 48} remain.
        link = BondedLink((idle(36), busy_at([7], 40), idle(44), busy_at([2], 48)))
        assert punctured_txop(link, 80) == {0, 2, 3}

    def test_busy_primary_still_included(self):
        link = BondedLink((busy_at(range(1000), 36), idle(40)))
        assert 0 in punctured_txop(link, 500)

    def test_window_is_pifs_before_expiry(self):
        link = BondedLink((idle(36), busy_at([5], 40)))  # busy over [50, 60)
        assert punctured_txop(link, 80) == {0, 1}
        assert punctured_txop(link, 70) == {0}

    def test_non_zero_primary_index(self):
        link = BondedLink((busy_at([7], 36), idle(40)), primary_index=1)
        assert punctured_txop(link, 80) == {1}


class TestPayload:
    def test_capped_by_queue(self):
        assert txop_payload(4, 2) == 2
        assert txop_payload(2, 9) == 2

    def test_empty_queue_is_an_error(self):
        with pytest.raises(SimulationError):
            txop_payload(2, 0)

    def test_bonded_run_sends_one_packet_per_channel(self):
        link = BondedLink(tuple(idle(36 + 4 * i) for i in range(4)))
        # Draws are indexed by head packet, so the second TXOP uses draw #4.
        recs = run("slo", [link], [(0, 12000)] * 6, source=ScriptedSource({0: [5, 0, 0, 0, 5]}))
        assert [r.t_tx_start_us for r in recs] == [80] * 4 + [252 + 30 + 50] * 2


class TestSelectPrimary:
    def test_argmin(self):
        link = BondedLink(tuple(with_occupancy(o, 36 + 4 * i) for i, o in enumerate([0.3, 0.1, 0.5, 0.2])))
        assert select_primary(link) == 1

    def test_tie_goes_to_lowest_index(self):
        link = BondedLink((with_occupancy(0.2, 36), with_occupancy(0.2, 40)))
        assert select_primary(link) == 0


def test_link_validation():
    with pytest.raises(ValueError):
        BondedLink(())
    with pytest.raises(ValueError):
        BondedLink(tuple(idle() for _ in range(5)))
    with pytest.raises(ValueError):
        BondedLink((idle(),), primary_index=1)
    with pytest.raises(TypeError):
        as_link([1, 2])
    assert BondedLink((idle(), idle()), 0).width_mhz == 40


@pytest.mark.parametrize("policy", ["slo", "str", "nstr", "str+"])
def test_single_channel_link_matches_bare_trace(policy):
    a = gen_onoff_trace(0.3, 17.2, 20000, 1)
    b = gen_onoff_trace(0.5, 17.2, 20000, 2)
    arr = poisson_arrivals(20e6, 12000, 200_000, 3)
    bare = run(policy, [a, b], arr, seed=4, horizon_us=200_000)
    wrapped = run(policy, [BondedLink.single(a), BondedLink.single(b)], arr, seed=4, horizon_us=200_000)
    assert bare == wrapped


def test_idle_80mhz_saturated_is_four_times_20mhz():
    one = saturated_throughput("slo", [idle()], seed=2, horizon_us=2_000_000)
    four = saturated_throughput("slo", [BondedLink(tuple(idle(36 + 4 * i) for i in range(4)))],
                                seed=2, horizon_us=2_000_000)
    assert four / one == pytest.approx(4.0, rel=0.02)


def test_bonding_helps_when_secondaries_are_quiet():
    prim = gen_onoff_trace(0.4, 17.2, 20000, 5, 36)
    sec = gen_onoff_trace(0.1, 17.2, 20000, 6, 40)
    narrow = saturated_throughput("slo", [prim], seed=1, horizon_us=500_000)
    wide = saturated_throughput("slo", [BondedLink((prim, sec))], seed=1, horizon_us=500_000)
    assert narrow < wide <= 2 * narrow
