import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from converse_mcts.env import (
    ASK,
    REC,
    Action,
    EpisodeConfig,
    UserResponse,
    cumulative_return,
    init_session,
    is_terminal,
    reward,
    simulate_user,
    step,
    transition,
)


class IndexRng:
    """Stub rng whose integers() always returns a fixed index."""

    def __init__(self, idx: int) -> None:
        self.idx = idx

    def integers(self, lo, hi):
        assert lo <= self.idx < hi
        return self.idx


CFG = EpisodeConfig()


def brute_candidates(catalog, p0, accepted, rejected_values, rejected_items):
    out = set()
    for v in catalog.items:
        pv = catalog.values_of_item(v)
        if p0 in pv and v not in rejected_items:
            if pv & accepted and not pv & rejected_values:
                out.add(v)
    return out


class TestInitSession:
    def test_singleton_shared_value_is_deterministic(self, toy_catalog, rng):
        # user 1's items share exactly one value: "medium"
        st0 = init_session(toy_catalog, 1, toy_catalog.interactions[1], rng)
        medium = toy_catalog.value_offset + 1
        assert st0.seed_value == medium
        assert st0.accepted_values == {medium}

    def test_single_valued_type_infers_other_values_rejected(self, toy_catalog, rng):
        # opening with "medium" (price, single-valued) rejects low and high
        st0 = init_session(toy_catalog, 1, toy_catalog.interactions[1], rng)
        low, high = toy_catalog.value_offset + 0, toy_catalog.value_offset + 2
        assert st0.rejected_values == {low, high}

    def test_multi_valued_type_infers_nothing(self, toy_catalog):
        # force p0 = "thai" (cuisine is multi-valued: one item is thai+sushi)
        targets = frozenset({toy_catalog.item_offset + 0, toy_catalog.item_offset + 1})
        st0 = init_session(toy_catalog, 0, targets, IndexRng(1))
        assert toy_catalog.type_of_value(st0.seed_value) == 1
        assert st0.rejected_values == frozenset()

    def test_candidates_match_enumeration(self, toy_catalog, rng):
        st0 = init_session(toy_catalog, 1, toy_catalog.interactions[1], rng)
        expected = {v for v in toy_catalog.items
                    if st0.seed_value in toy_catalog.values_of_item(v)}
        assert st0.candidate_items == expected

    def test_empty_shared_set_is_an_error(self, toy_catalog, rng):
        # items 1 (low,thai,sushi) and 4 (high,pizza) share nothing
        targets = frozenset({toy_catalog.item_offset + 1, toy_catalog.item_offset + 4})
        with pytest.raises(ValueError):
            init_session(toy_catalog, 0, targets, rng)


class TestSimulateUser:
    def test_partial_accept(self, toy_catalog, rng):
        targets = frozenset({toy_catalog.item_offset + 0, toy_catalog.item_offset + 1})
        st0 = init_session(toy_catalog, 0, targets, IndexRng(0))
        sushi, pizza = toy_catalog.value_offset + 4, toy_catalog.value_offset + 5
        resp = simulate_user(st0, Action(ASK, (sushi, pizza)), targets, toy_catalog)
        assert resp.accepted_values == (sushi,)   # only item 1 carries sushi
        assert resp.rejected_values == (pizza,)

    def test_rec_hit_and_miss(self, toy_catalog, rng):
        targets = frozenset({toy_catalog.item_offset + 2})
        st0 = init_session(toy_catalog, 1, targets, rng)
        hit = simulate_user(st0, Action(REC, (toy_catalog.item_offset + 2,)), targets, toy_catalog)
        assert hit.hit and hit.accepted_item == toy_catalog.item_offset + 2
        miss = simulate_user(st0, Action(REC, (toy_catalog.item_offset + 3,)), targets, toy_catalog)
        assert not miss.hit

    def test_all_foreign_values_rejected(self, toy_catalog, rng):
        targets = frozenset({toy_catalog.item_offset + 2})
        st0 = init_session(toy_catalog, 1, targets, rng)
        pizza = toy_catalog.value_offset + 5
        resp = simulate_user(st0, Action(ASK, (pizza,)), targets, toy_catalog)
        assert resp.accepted_values == ()


class TestReward:
    def test_multi_choice_arithmetic(self, toy_catalog, rng):
        st0 = init_session(toy_catalog, 1, toy_catalog.interactions[1], rng)
        action = Action(ASK, tuple(range(100, 105)))
        resp = UserResponse(accepted_values=(100, 101), rejected_values=(102, 103, 104))
        assert reward(action, resp, st0, CFG) == pytest.approx(2 * 0.01 + 3 * -0.1)
        assert reward(action, resp, st0, CFG) == pytest.approx(-0.28)

    def test_rec_hit_is_one(self, toy_catalog, rng):
        st0 = init_session(toy_catalog, 1, toy_catalog.interactions[1], rng)
        r = reward(Action(REC, (1,)), UserResponse(hit=True), st0, CFG)
        assert r == 1.0

    def test_final_failed_turn_adds_quit(self, toy_catalog, rng):
        st0 = init_session(toy_catalog, 1, toy_catalog.interactions[1], rng)
        from dataclasses import replace
        st14 = replace(st0, turn=CFG.max_turns - 1)
        r = reward(Action(REC, (1,)), UserResponse(hit=False), st14, CFG)
        assert r == pytest.approx(-0.1 - 0.3)
        assert r == pytest.approx(-0.4)


class TestTransition:
    def test_rec_miss_moves_items_to_rejected(self, toy_catalog, rng):
        targets = toy_catalog.interactions[1]
        st0 = init_session(toy_catalog, 1, targets, rng)
        payload = (toy_catalog.item_offset + 2,)
        resp = UserResponse(hit=False)
        st1 = transition(st0, Action(REC, payload), resp, toy_catalog)
        assert set(payload) <= st1.rejected_items
        assert not (set(payload) & st1.candidate_items)
        assert st1.turn == 1

    def test_ask_updates_value_sets(self, toy_catalog, rng):
        targets = toy_catalog.interactions[1]   # items carrying sushi / pizza
        st0 = init_session(toy_catalog, 1, targets, rng)
        sushi, thai = toy_catalog.value_offset + 4, toy_catalog.value_offset + 3
        action = Action(ASK, (sushi, thai))
        resp = simulate_user(st0, action, targets, toy_catalog)
        st1 = transition(st0, action, resp, toy_catalog)
        assert sushi in st1.accepted_values
        assert thai in st1.rejected_values
        assert sushi not in st1.candidate_values
        assert thai not in st1.candidate_values
        # rejected value prunes the items carrying it
        assert st1.candidate_items == brute_candidates(
            toy_catalog, st0.seed_value, st1.accepted_values,
            st1.rejected_values, st1.rejected_items,
        )

    def test_rec_hit_freezes_feedback_sets(self, toy_catalog, rng):
        targets = toy_catalog.interactions[1]
        st0 = init_session(toy_catalog, 1, targets, rng)
        action = Action(REC, tuple(sorted(targets)))
        resp = simulate_user(st0, action, targets, toy_catalog)
        st1 = transition(st0, action, resp, toy_catalog)
        assert st1.succeeded
        assert st1.accepted_values == st0.accepted_values
        assert st1.rejected_items == st0.rejected_items
        with pytest.raises(ValueError):
            transition(st1, action, resp, toy_catalog)


class TestTerminal:
    def test_fresh_session_running(self, toy_catalog, rng):
        st0 = init_session(toy_catalog, 1, toy_catalog.interactions[1], rng)
        assert is_terminal(st0, CFG) == "running"

    def test_turn_cap_fails(self, toy_catalog, rng):
        st0 = init_session(toy_catalog, 1, toy_catalog.interactions[1], rng)
        from dataclasses import replace
        st15 = replace(st0, turn=15)
        assert is_terminal(st15, CFG) == "fail"

    def test_success_state(self, toy_catalog, rng):
        targets = toy_catalog.interactions[1]
        st0 = init_session(toy_catalog, 1, targets, rng)
        action = Action(REC, tuple(sorted(targets)))
        resp = simulate_user(st0, action, targets, toy_catalog)
        st1, r, status = step(st0, action, resp, toy_catalog, CFG)
        assert status == "success" and r == 1.0


class TestCumulativeReturn:
    def test_hand_example(self):
        assert cumulative_return([-0.1, 1.0], 0.999) == pytest.approx(-0.1 + 0.999 * 1.0)

    def test_single_reward(self):
        assert cumulative_return([0.42], 0.5) == 0.42

    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=10),
           st.floats(0.01, 0.99))
    @settings(max_examples=50, deadline=None)
    def test_matches_loop_oracle(self, rewards, gamma):
        expected = sum(r * gamma**k for k, r in enumerate(rewards))
        assert cumulative_return(rewards, gamma) == pytest.approx(expected, rel=1e-12, abs=1e-12)

    def test_start_index(self):
        rewards = [0.5, -0.1, 1.0]
        assert cumulative_return(rewards, 0.9, start=1) == pytest.approx(-0.1 + 0.9)


def random_episode(catalog, user, rng, config=CFG):
    """Drive an episode with random (valid) actions; yields every transition."""
    targets = catalog.interactions[user]
    state = init_session(catalog, user, targets, rng)
    while is_terminal(state, config) == "running":
        can_ask = bool(state.candidate_values)
        do_ask = can_ask and rng.random() < 0.5
        if do_ask:
            vals = sorted(state.candidate_values)
            k = min(len(vals), int(rng.integers(1, config.ask_size + 1)))
            picked = rng.choice(len(vals), size=k, replace=False)
            action = Action(ASK, tuple(vals[i] for i in sorted(picked)))
        else:
            items = sorted(state.candidate_items)
            k = min(len(items), config.rec_size)
            picked = rng.choice(len(items), size=k, replace=False)
            action = Action(REC, tuple(items[i] for i in sorted(picked)))
        response = simulate_user(state, action, targets, catalog)
        nxt, r, status = step(state, action, response, catalog, config)
        yield state, action, response, r, nxt
        state = nxt


class TestEpisodeInvariants:
    def test_random_episodes(self, small_catalog):
        rng = np.random.default_rng(77)
        cfg = EpisodeConfig(rec_size=2)
        for ep in range(40):
            user = int(rng.integers(0, small_catalog.n_users))
            targets = small_catalog.interactions[user]
            for state, action, response, r, nxt in random_episode(small_catalog, user, rng, cfg):
                # candidate sets shrink, rejected sets grow
                assert nxt.candidate_items <= state.candidate_items
                assert nxt.rejected_values >= state.rejected_values
                assert nxt.rejected_items >= state.rejected_items
                # disjointness
                assert not (nxt.accepted_values & nxt.rejected_values)
                assert not (nxt.candidate_values & (nxt.accepted_values | nxt.rejected_values))
                assert not (nxt.rejected_items & nxt.candidate_items)
                # per-turn reward bounds
                lo = cfg.ask_size * cfg.rewards.ask_reject + cfg.rewards.quit
                assert lo <= r <= cfg.rewards.rec_accept
                # incremental transition equals the batch set-builder
                if not nxt.succeeded:
                    assert nxt.candidate_items == brute_candidates(
                        small_catalog, state.seed_value, nxt.accepted_values,
                        nxt.rejected_values, nxt.rejected_items,
                    )
                    # targets persist until success
                    assert targets <= nxt.candidate_items
