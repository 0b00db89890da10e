"""Scenario generation, determinism, and JSON snapshot round-trips."""

import json

import numpy as np
import pytest

from mbnsim.config import ScenarioConfig
from mbnsim.phy import Band
from mbnsim.scenario import (AERIAL_HEIGHT_M, TERRESTRIAL_HEIGHT_M, UserClass,
                             UserKind, generate_scenario, refresh_fading,
                             state_from_json, state_to_json)


def desk_cfg(**overrides) -> ScenarioConfig:
    return ScenarioConfig.desk_default().replace(**overrides)


class TestGeneration:
    def test_same_seed_bit_identical(self):
        a = generate_scenario(desk_cfg(), seed=42)
        b = generate_scenario(desk_cfg(), seed=42)
        assert np.array_equal(a.gains, b.gains)
        assert np.array_equal(a.fading, b.fading)
        for ua, ub in zip(a.users, b.users):
            assert np.array_equal(ua.position, ub.position)
        for ta, tb in zip(a.topology.tbs_list, b.topology.tbs_list):
            assert np.array_equal(ta.position, tb.position)

    def test_different_seed_differs(self):
        a = generate_scenario(desk_cfg(), seed=1)
        b = generate_scenario(desk_cfg(), seed=2)
        assert not np.array_equal(a.gains, b.gains)

    def test_full_default_counts(self):
        state = generate_scenario(ScenarioConfig.full_default(), seed=7)
        assert state.n_users == 20
        assert len(state.fembb_users) == 10
        assert len(state.eurllc_users) == 10
        assert state.n_bs == 21
        assert state.n_subchannels == 20
        assert state.n_minislots == 7

    def test_empty_fembb_is_valid(self):
        state = generate_scenario(desk_cfg(n_fembb=0), seed=3)
        assert state.fembb_users == []
        assert len(state.eurllc_users) == 4

    def test_rbs_at_center(self):
        state = generate_scenario(desk_cfg(), seed=5)
        assert np.allclose(state.topology.rbs.position[:2], 0.0)
        assert state.topology.rbs.band is Band.RF

    def test_everything_inside_disc(self):
        cfg = desk_cfg(n_tbs=8, n_fembb=12, n_eurllc=12)
        state = generate_scenario(cfg, seed=11)
        for u in state.users:
            assert np.hypot(u.position[0], u.position[1]) <= cfg.cell_radius_m + 1e-9
        for t in state.topology.tbs_list:
            assert np.hypot(t.position[0], t.position[1]) <= cfg.cell_radius_m + 1e-9
            assert t.coverage_radius_m == cfg.tbs_coverage_m
            assert t.band is Band.THZ

    def test_heights_by_kind(self):
        state = generate_scenario(desk_cfg(), seed=9)
        for u in state.users:
            expected = (AERIAL_HEIGHT_M if u.kind is UserKind.AERIAL
                        else TERRESTRIAL_HEIGHT_M)
            assert u.position[2] == expected

    def test_deterministic_class_splits(self):
        # 4 users per class at aerial_fraction 0.25: exactly 1 aerial each
        state = generate_scenario(desk_cfg(), seed=13)
        for cls in (UserClass.FEMBB, UserClass.EURLLC):
            kinds = [u.kind for u in state.users if u.user_class is cls]
            assert kinds.count(UserKind.AERIAL) == 1

    def test_hotspot_users_reach_a_tbs(self):
        # hotspot_fraction 0.5 of 3 terrestrial users -> 2 in TBS coverage
        state = generate_scenario(desk_cfg(), seed=17)
        for cls_ids in (state.fembb_users, state.eurllc_users):
            in_coverage = sum(bool(state.reachable[i, 1:].any())
                              for i in cls_ids)
            assert in_coverage == 2

    def test_rbs_always_reachable(self):
        state = generate_scenario(desk_cfg(), seed=19)
        assert state.reachable[:, 0].all()

    def test_aerial_never_in_tbs_coverage(self):
        state = generate_scenario(desk_cfg(n_tbs=10, aerial_fraction=1.0),
                                  seed=23)
        assert not state.reachable[:, 1:].any()

    def test_gain_tensor_shape_and_sign(self):
        state = generate_scenario(desk_cfg(), seed=29)
        assert state.gains.shape == (8, 3, 4)
        assert (state.gains >= 0).all()
        assert np.isfinite(state.gains).all()


class TestFadingRefresh:
    def test_refresh_changes_rf_only(self):
        state = generate_scenario(desk_cfg(), seed=31)
        thz_before = state.gains[:, 1:, :].copy()
        rf_before = state.gains[:, 0, :].copy()
        refresh_fading(state, np.random.default_rng(0))
        assert np.array_equal(state.gains[:, 1:, :], thz_before)
        assert not np.array_equal(state.gains[:, 0, :], rf_before)

    def test_unit_mean_exponential(self):
        state = generate_scenario(desk_cfg(n_fembb=200, n_eurllc=200,
                                           subchannels_per_band=8), seed=37)
        draws = state.fading.ravel()
        assert draws.mean() == pytest.approx(1.0, abs=0.05)
        assert draws.var() == pytest.approx(1.0, abs=0.15)


class TestJsonSnapshot:
    def test_round_trip_exact(self):
        state = generate_scenario(desk_cfg(), seed=41)
        state.serving_bs = np.array([0, 1, 2, 0, 1, 2, 0, 0])
        data = json.loads(json.dumps(state_to_json(state)))
        back = state_from_json(data)
        assert np.array_equal(back.gains, state.gains)
        assert np.array_equal(back.fading, state.fading)
        assert np.array_equal(back.reachable, state.reachable)
        assert np.array_equal(back.serving_bs, state.serving_bs)
        assert back.gain_log_bounds == state.gain_log_bounds
        assert back.qos == state.qos
        assert back.channel == state.channel
        assert [u.position.tolist() for u in back.users] == \
            [u.position.tolist() for u in state.users]

    def test_unknown_schema_rejected(self):
        state = generate_scenario(desk_cfg(), seed=43)
        data = state_to_json(state)
        data["schema_version"] = 99
        with pytest.raises(ValueError):
            state_from_json(data)

    def test_copy_is_deep_enough(self):
        state = generate_scenario(desk_cfg(), seed=47)
        clone = state.copy()
        clone.gains[0, 0, 0] = 123.0
        clone.users[0].position[0] = 999.0
        assert state.gains[0, 0, 0] != 123.0
        assert state.users[0].position[0] != 999.0
