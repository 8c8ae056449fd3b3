import numpy as np
import pytest
import torch

from converse_mcts.agent import Agent, DuelingQHead, PolicyHead, apply_type_mask, sync_target
from converse_mcts.catalog import build_global_graph
from converse_mcts.encoder import EncoderConfig, StateEncoder
from converse_mcts.env import ASK, REC, EpisodeConfig, init_session

CFG8 = EncoderConfig(dim=8, gat_heads=2, seq_heads=2, max_seq_len=32)
EP = EpisodeConfig()


@pytest.fixture()
def toy_agent(toy_catalog):
    enc = StateEncoder(toy_catalog, build_global_graph(toy_catalog), CFG8, seed=10)
    return Agent.fresh(enc, seed=10)


@pytest.fixture()
def toy_state(toy_catalog, rng):
    return init_session(toy_catalog, 1, toy_catalog.interactions[1], rng)


def zero_(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


class TestActionTypeProbs:
    def test_zero_logits_symmetric(self, toy_agent, toy_state):
        zero_(toy_agent.policy)
        s = toy_agent.encoder.encode_state(toy_state)
        probs = toy_agent.action_type_probs(s, toy_state)
        assert probs.detach().numpy() == pytest.approx([0.5, 0.5])

    def test_ask_masked_renormalizes(self, toy_agent, toy_state):
        from dataclasses import replace

        no_values = replace(toy_state, candidate_values=frozenset())
        s = toy_agent.encoder.encode_state(no_values)
        probs = toy_agent.action_type_probs(s, no_values)
        assert probs.detach().numpy() == pytest.approx([0.0, 1.0])

    def test_both_masked_is_an_error(self):
        with pytest.raises(ValueError):
            apply_type_mask(torch.tensor([0.5, 0.5]), (False, False))

    def test_matches_independent_softmax(self, toy_agent, toy_state):
        s = toy_agent.encoder.encode_state(toy_state)
        probs = toy_agent.action_type_probs(s, toy_state).detach().numpy()
        w1, b1, w2, b2 = (p.detach().numpy() for p in toy_agent.policy.params)
        h = s.detach().numpy() @ w1.T + b1
        h = np.where(h > 0, h, 0.2 * h)
        logits = h @ w2.T + b2
        expected = np.exp(logits - logits.max())
        expected /= expected.sum()
        assert probs == pytest.approx(expected, rel=1e-5)


class TestQValues:
    def test_zero_networks_constant(self, toy_agent, toy_state):
        zero_(toy_agent.qnet)
        s = toy_agent.encoder.encode_state(toy_state)
        q = toy_agent.q_values(s, sorted(toy_state.candidate_values))
        assert float(q.max() - q.min()) == 0.0

    def test_differs_across_candidates_generically(self, toy_agent, toy_state):
        s = toy_agent.encoder.encode_state(toy_state)
        q = toy_agent.q_values(s, sorted(toy_state.candidate_values))
        assert float(q.max() - q.min()) > 0

    def test_dueling_difference_ignores_value_branch(self, toy_agent, toy_state):
        s = toy_agent.encoder.encode_state(toy_state).detach()
        cands = sorted(toy_state.candidate_values)[:2]
        q = toy_agent.q_values(s, cands)
        base_diff = float(q[0] - q[1])
        with torch.no_grad():
            toy_agent.qnet.val[3].add_(13.7)  # shift the value head output bias
        q2 = toy_agent.q_values(s, cands)
        assert float(q2[0] - q2[1]) == pytest.approx(base_diff, abs=1e-5)
        assert float(q2[0]) != pytest.approx(float(q[0]))

    def test_candidate_outside_space_rejected(self, toy_agent, toy_state):
        s = toy_agent.encoder.encode_state(toy_state)
        bad = next(iter(toy_state.rejected_values))
        with pytest.raises(ValueError):
            toy_agent.q_value(s, bad, ASK, toy_state)


class TestComposition:
    def test_single_candidate_question(self, toy_agent, toy_state):
        from dataclasses import replace

        only = sorted(toy_state.candidate_values)[:1]
        state = replace(toy_state, candidate_values=frozenset(only))
        s = toy_agent.encoder.encode_state(state)
        action = toy_agent.compose_question(state, s, EP)
        assert action.payload == tuple(only)

    def test_tie_break_ascending_id(self, toy_agent, toy_state):
        zero_(toy_agent.qnet)  # all Q equal -> ids ascending
        s = toy_agent.encoder.encode_state(toy_state)
        action = toy_agent.compose_question(state=toy_state, s=s, config=EP)
        cands = sorted(toy_state.candidate_values)
        first = cands[0]
        same_type = [p for p in cands
                     if toy_agent.catalog.type_of_value(p) == toy_agent.catalog.type_of_value(first)]
        assert action.payload == tuple(same_type[: EP.ask_size])

    def test_question_matches_bruteforce(self, toy_agent, toy_state):
        s = toy_agent.encoder.encode_state(toy_state)
        cands = sorted(toy_state.candidate_values)
        q = toy_agent.q_values(s, cands).detach().numpy()
        best = cands[int(np.lexsort((cands, -q))[0])]
        y = toy_agent.catalog.type_of_value(best)
        of_type = [(float(-qq), p) for p, qq in zip(cands, q)
                   if toy_agent.catalog.type_of_value(p) == y]
        of_type.sort()
        expected = tuple(p for _, p in of_type[: EP.ask_size])
        action = toy_agent.compose_question(toy_state, s, EP)
        assert action.payload == expected

    def test_recommendation_truncates_and_sorts(self, toy_agent, toy_state):
        s = toy_agent.encoder.encode_state(toy_state)
        action = toy_agent.compose_recommendation(toy_state, s, EP)
        assert len(action.payload) == min(EP.rec_size, len(toy_state.candidate_items))
        q = toy_agent.q_values(s, list(action.payload)).detach().numpy()
        assert all(q[i] >= q[i + 1] - 1e-9 for i in range(len(q) - 1))

    def test_recommendation_matches_bruteforce(self, toy_agent, toy_state):
        s = toy_agent.encoder.encode_state(toy_state)
        cands = sorted(toy_state.candidate_items)
        q = toy_agent.q_values(s, cands).detach().numpy()
        expected = tuple(cands[i] for i in np.lexsort((cands, -q))[: EP.rec_size])
        assert toy_agent.compose_recommendation(toy_state, s, EP).payload == expected

    def test_positive_scaling_invariance(self, toy_agent, toy_state):
        s = toy_agent.encoder.encode_state(toy_state)
        before_q = toy_agent.compose_question(toy_state, s, EP)
        before_r = toy_agent.compose_recommendation(toy_state, s, EP)
        with torch.no_grad():
            for head in (toy_agent.qnet.adv, toy_agent.qnet.val):
                head[2].mul_(3.5)   # final layer weight
                head[3].mul_(3.5)   # final layer bias
        assert toy_agent.compose_question(toy_state, s, EP) == before_q
        assert toy_agent.compose_recommendation(toy_state, s, EP) == before_r


class TestSelectAction:
    def test_greedy_follows_policy(self, toy_agent, toy_state):
        with torch.no_grad():
            toy_agent.policy.params[3].copy_(torch.tensor([5.0, -5.0]))  # bias -> ask
        action = toy_agent.select_action(toy_state, EP)
        assert action.kind == ASK

    def test_mask_forces_rec(self, toy_agent, toy_state):
        from dataclasses import replace

        state = replace(toy_state, candidate_values=frozenset())
        action = toy_agent.select_action(state, EP)
        assert action.kind == REC

    def test_sampled_mode_reproducible(self, toy_agent, toy_state):
        a = toy_agent.select_action(toy_state, EP, mode="sampled", rng=np.random.default_rng(5))
        b = toy_agent.select_action(toy_state, EP, mode="sampled", rng=np.random.default_rng(5))
        assert a == b


class TestTargetSync:
    def test_sync_matches_outputs(self, toy_agent, toy_state):
        s = toy_agent.encoder.encode_state(toy_state).detach()
        cands = sorted(toy_state.candidate_items)
        with torch.no_grad():
            toy_agent.qnet.adv[0].mul_(1.5)
        before = toy_agent.q_values(s, cands, head=toy_agent.target)
        online = toy_agent.q_values(s, cands)
        assert not torch.allclose(before, online)
        toy_agent.sync_target()
        after = toy_agent.q_values(s, cands, head=toy_agent.target)
        torch.testing.assert_close(after, online)

    def test_fresh_agent_target_equals_online(self, toy_agent, toy_state):
        s = toy_agent.encoder.encode_state(toy_state).detach()
        cands = sorted(toy_state.candidate_items)
        torch.testing.assert_close(
            toy_agent.q_values(s, cands, head=toy_agent.target),
            toy_agent.q_values(s, cands),
        )
