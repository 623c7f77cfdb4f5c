import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from victimtag.domain import ScenarioConfig, generate_instance, make_instance
from victimtag.policies import (
    Policy,
    PolicyKind,
    lcvp_select,
    lgap_select,
    lnvp_select,
    nvp_select,
    partition_cells,
    rvp_select,
)
from victimtag.sim import WorldState, apply_select, run_experiment


def world_of(victims, responders=((0, 0),), health=None, zeta=1.0):
    inst = make_instance(victims, n=len(responders), health=health, width=100, height=60)
    w = WorldState(inst, zeta)
    w.pos[:] = np.asarray(responders, float)
    return w


def claim(world, i, k):
    world.claimant[k] = i
    world.claim[i] = k


rng = np.random.default_rng(0)


class TestRVP:
    def test_singleton(self):
        w = world_of([[1, 0], [2, 0], [3, 0], [4, 0], [5, 0]], responders=[(0, 0), (9, 9)])
        w.tagged[:4] = True
        assert all(rvp_select(0, w, rng) == 4 for _ in range(20))

    def test_all_tagged(self):
        w = world_of([[1, 0]])
        w.tagged[:] = True
        assert rvp_select(0, w, rng) is None

    def test_skips_claimed(self):
        w = world_of([[1, 0], [2, 0]], responders=[(0, 0), (5, 5)])
        claim(w, 1, 1)
        assert {rvp_select(0, w, rng) for _ in range(50)} == {0}

    def test_excludes_own_claim(self):
        w = world_of([[1, 0], [2, 0]])
        claim(w, 0, 0)
        assert {rvp_select(0, w, rng) for _ in range(50)} == {1}

    def test_roughly_uniform(self):
        w = world_of([[1, 0], [2, 0], [3, 0]])
        counts = np.bincount([rvp_select(0, w, np.random.default_rng(s)) for s in range(3000)], minlength=3)
        assert np.all(np.abs(counts - 1000) < 120)


class TestNVP:
    def test_strict_nearest(self):
        assert nvp_select(0, world_of([[1, 0], [5, 0]])) == 0

    def test_skips_claimed(self):
        w = world_of([[1, 0], [5, 0]], responders=[(0, 0), (1, 1)])
        claim(w, 1, 0)
        assert nvp_select(0, w) == 1

    @pytest.mark.parametrize("order", [[[3, 4], [4, 3]], [[4, 3], [3, 4]]])
    def test_tie_goes_to_lowest_index(self, order):
        assert nvp_select(0, world_of(order)) == 0


class TestLNVP:
    def test_preempts_farther_claimant(self):
        w = world_of([[10, 0]], responders=[(8, 0), (15, 0)])
        claim(w, 1, 0)
        assert lnvp_select(0, w, 1.0) == 0
        apply_select(w, 0, 0)
        assert w.claimant[0] == 0 and w.claim[1] == -1 and w.state[1] == 1
        assert w.preemptions and w.preemptions[0][1:3] == (0, 1)

    def test_no_preemption_within_zeta(self):
        w = world_of([[10, 0]], responders=[(10, 0.1), (10.5, 0)])
        claim(w, 1, 0)
        assert lnvp_select(0, w, 1.0) is None

    def test_exhausted(self):
        w = world_of([[1, 0]])
        w.tagged[:] = True
        assert lnvp_select(0, w) is None

    @given(st.floats(0.1, 50), st.floats(0.1, 50), st.floats(0.1, 5))
    def test_preemption_condition(self, d_own, d_other, zeta):
        w = world_of([[50, 0]], responders=[(50 - d_own, 0), (50 + d_other, 0)], zeta=zeta)
        claim(w, 1, 0)
        got = lnvp_select(0, w, zeta)
        mine, theirs = w.dist(0, 0), w.dist(1, 0)
        expected = theirs > mine and theirs > zeta
        assert (got == 0) == expected


class TestLCVP:
    def test_prefers_critical(self):
        w = world_of([[2, 0], [40, 0]], health=[0.9, 0.3])
        assert lcvp_select(0, w) == 1

    def test_falls_back_when_no_critical(self):
        w = world_of([[2, 0], [40, 0]], health=[0.9, 0.3])
        w.tagged[1] = True
        assert lcvp_select(0, w) == 0

    @pytest.mark.parametrize("order", [[[3, 4], [4, 3]], [[4, 3], [3, 4]]])
    def test_equidistant_critical_lowest_index(self, order):
        assert lcvp_select(0, world_of(order, health=[0.1, 0.2])) == 0

    def test_falls_back_when_critical_held_by_closer_claimant(self):
        w = world_of([[2, 0], [40, 0]], responders=[(0, 0), (40, 0.5)], health=[0.9, 0.3])
        claim(w, 1, 1)
        assert lcvp_select(0, w) == 0


class TestLGAP:
    def test_own_cell_only(self):
        inst = make_instance([[45, 10], [60, 10]], n=2, width=100, height=60)
        cells = partition_cells(100, 60, 2, "strips")
        w = WorldState(inst)
        w.pos[:] = [[49, 10], [99, 59]]
        assert lgap_select(0, w, cells) == 0
        assert lgap_select(1, w, cells) == 1

    def test_empty_cell_idles(self):
        inst = make_instance([[70, 10]], n=2, width=100, height=60)
        w = WorldState(inst)
        assert lgap_select(0, w, partition_cells(100, 60, 2, "strips")) is None

    def test_singleton(self):
        inst = make_instance([[10, 10]], n=1, width=100, height=60)
        assert lgap_select(0, WorldState(inst), partition_cells(100, 60, 1)) == 0


class TestPartition:
    def test_single_cell_is_area(self):
        (c,) = partition_cells(100, 60, 1).cells
        assert (c.x0, c.y0, c.x1, c.y1) == (0, 0, 100, 60)

    def test_four_cells_grid(self):
        cells = partition_cells(100, 60, 4).cells
        assert sorted((c.x0, c.y0, c.x1, c.y1) for c in cells) == [(0, 0, 50, 30), (0, 30, 50, 60), (50, 0, 100, 30), (50, 30, 100, 60)]

    @pytest.mark.parametrize("layout", ["grid", "strips"])
    @pytest.mark.parametrize("n", [1, 2, 3, 5, 7, 20, 80])
    def test_cells_tile_area(self, n, layout):
        part = partition_cells(100, 60, n, layout)
        assert len(part) == n
        assert sum(c.area for c in part.cells) == pytest.approx(6000)
        pts = np.random.default_rng(n).uniform([0, 0], [100, 60], size=(2000, 2))
        pts = np.vstack([pts, [[100, 60], [0, 0], [100, 0], [0, 60], [50, 30]]])
        member = np.stack([part.membership(i, pts) for i in range(n)])
        assert np.all(member.sum(axis=0) == 1)

    def test_five_cells_have_three_columns(self):
        xs = {c.x0 for c in partition_cells(100, 60, 5).cells}
        assert len(xs) == 3


def test_policy_validation():
    with pytest.raises(ValueError):
        Policy(PolicyKind.NVP, zeta=0)
    inst = make_instance([[1, 1]], n=3)
    with pytest.raises(ValueError):
        Policy(PolicyKind.LGAP, cells=partition_cells(10, 10, 2)).for_instance(inst)


def test_e1_ordering_small_scale():
    cfg = ScenarioConfig(5, 10)
    means = {p: run_experiment(cfg, p, 50).mean for p in ("lnvp", "nvp", "rvp")}
    assert means["lnvp"] <= means["nvp"] <= means["rvp"]


@given(st.integers(0, 10_000))
def test_selections_are_valid(seed):
    inst = generate_instance(ScenarioConfig(4, 8, 40, 30), seed)
    w = WorldState(inst)
    r = np.random.default_rng(seed)
    w.pos[:] = r.uniform([0, 0], [40, 30], size=(4, 2))
    w.tagged[:] = r.random(8) < 0.3
    for i, k in enumerate(r.integers(-1, 8, size=4)):
        if k >= 0 and not w.tagged[k] and w.claimant[k] < 0:
            claim(w, i, k)
    cells = partition_cells(40, 30, 4)
    for i in range(4):
        for k in (nvp_select(i, w), rvp_select(i, w, r), lnvp_select(i, w), lcvp_select(i, w), lgap_select(i, w, cells)):
            assert k is None or not w.tagged[k]
        k = nvp_select(i, w)
        assert k is None or w.claimant[k] < 0
        k = lgap_select(i, w, cells)
        assert k is None or cells.membership(i, w.victim_pos[k])[0]
