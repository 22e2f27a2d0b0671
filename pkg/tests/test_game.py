import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgdlrc.game import (GameError, MarkovGame, decode_joint, encode_joint,
                         generate_random_game, marginal_utility, validate_game)


def brute_utility(game, i, h, s, v_next, pols):
    """Sum over every joint action explicitly."""
    out = np.zeros(game.action_counts[i])
    for joint in itertools.product(*[range(a) for a in game.action_counts]):
        prob = 1.0
        for k, a in enumerate(joint):
            if k != i:
                prob *= pols[k][a]
        flat = game.encode(joint)
        out[joint[i]] += prob * (game.rewards[i, h, s, flat]
                                 + game.transitions[h, s, flat] @ v_next)
    return out


def matching_pennies_like():
    r = np.zeros((2, 1, 1, 4))
    r[0, 0, 0] = [1, 0, 0, 1]
    r[1, 0, 0] = [1, 0, 0, 1]
    return MarkovGame((2, 2), r, np.ones((1, 1, 4, 1)))


def test_paper_setup_transitions():
    g = generate_random_game(7, 2, 2, 2, 2, 0.8)
    assert validate_game(g) is None
    np.testing.assert_allclose(g.transitions[:, 0], np.tile([0.8, 0.2], (2, 4, 1)), atol=1e-16)
    np.testing.assert_allclose(g.transitions[:, 1], np.tile([0.2, 0.8], (2, 4, 1)), atol=1e-16)


def test_absorbing_and_determinism():
    g = generate_random_game(3, 2, 3, 2, 2, 1.0)
    for s in range(3):
        assert np.all(g.transitions[:, s, :, s] == 1.0)
    assert generate_random_game(11, 3, 3, 2, 3) == generate_random_game(11, 3, 3, 2, 3)
    assert generate_random_game(11, 3, 3, 2, 3) != generate_random_game(12, 3, 3, 2, 3)


def test_leave_mass_uniform_for_many_states():
    g = generate_random_game(0, 2, 4, 2, 1, 0.4)
    np.testing.assert_allclose(g.transitions[0, 2, 0], [0.2, 0.2, 0.4, 0.2])


def test_generator_always_valid():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        dims = rng.integers(1, 4, size=4)
        g = generate_random_game(seed, *map(int, dims), stay_prob=float(rng.random()) if dims[1] > 1 else 1.0)
        assert validate_game(g) is None


@pytest.mark.parametrize("kw", [dict(num_players=0), dict(num_states=0), dict(horizon=0),
                                dict(num_actions=0), dict(stay_prob=1.5)])
def test_generator_rejects(kw):
    with pytest.raises(GameError):
        generate_random_game(0, **kw)


def test_validator_reports_row_sum():
    g = generate_random_game(1, 2, 2, 2, 2)
    p = g.transitions.copy()
    p[1, 0, 3] = [0.799, 0.2]
    bad = MarkovGame(g.action_counts, g.rewards, p)
    v = validate_game(bad)
    assert v is not None and v.index == (1, 0, 3) and "sum" in v.constraint


def test_validator_reward_bounds():
    g = generate_random_game(1, 2, 2, 2, 2)
    r = g.rewards.copy()
    r[:] = 1.0
    assert validate_game(MarkovGame(g.action_counts, r, g.transitions)) is None
    r[1, 0, 1, 2] = 1.0000001
    v = validate_game(MarkovGame(g.action_counts, r, g.transitions))
    assert v.index == (1, 0, 1, 2)
    r[1, 0, 1, 2] = np.nan
    assert validate_game(MarkovGame(g.action_counts, r, g.transitions)) is not None


def test_shape_mismatch_rejected():
    with pytest.raises(GameError):
        MarkovGame((2, 2), np.zeros((2, 1, 1, 3)), np.ones((1, 1, 3, 1)))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4))
def test_encode_decode_roundtrip(counts):
    for flat in range(int(np.prod(counts))):
        assert encode_joint(decode_joint(flat, counts), counts) == flat
    for joint in itertools.product(*[range(a) for a in counts]):
        assert decode_joint(encode_joint(joint, counts), counts) == joint


def test_encode_is_c_order():
    assert encode_joint((1, 0, 2), (2, 2, 3)) == np.ravel_multi_index((1, 0, 2), (2, 2, 3))


def test_identity_payoff_utility():
    g = matching_pennies_like()
    nu = marginal_utility(g, 0, 0, 0, np.zeros(1), [None, np.array([0.25, 0.75])])
    np.testing.assert_allclose(nu, [0.25, 0.75], atol=1e-15)


def test_point_mass_gives_reward_column_plus_continuation():
    g = generate_random_game(5, 2, 3, 3, 2, 0.6)
    v_next = np.array([0.3, 1.2, 0.7])
    for b in range(3):
        pol = np.eye(3)[b]
        nu = marginal_utility(g, 0, 0, 1, v_next, [None, pol])
        flats = [g.encode((a, b)) for a in range(3)]
        expected = g.rewards[0, 0, 1, flats] + g.transitions[0, 1, flats] @ v_next
        np.testing.assert_allclose(nu, expected, atol=1e-14)


def test_three_player_matches_enumeration():
    rng = np.random.default_rng(2)
    counts = (2, 3, 2)
    r = rng.random((3, 2, 2, 12))
    p = rng.random((2, 2, 12, 2))
    p /= p.sum(-1, keepdims=True)
    g = MarkovGame(counts, r, p)
    pols = [rng.dirichlet(np.ones(a)) for a in counts]
    v_next = rng.random(2)
    for i in range(3):
        np.testing.assert_allclose(marginal_utility(g, i, 0, 1, v_next, pols),
                                   brute_utility(g, i, 0, 1, v_next, pols), atol=1e-13)


def test_utility_bounds_and_linearity():
    g = generate_random_game(9, 3, 2, 3, 3)
    rng = np.random.default_rng(0)
    for _ in range(20):
        h = int(rng.integers(3))
        v_next = rng.random(2) * (g.horizon - h - 1)
        p, q = ([None] + [rng.dirichlet(np.ones(3)) for _ in range(2)] for _ in range(2))
        nu = marginal_utility(g, 0, h, 0, v_next, p)
        assert nu.min() >= 0 and nu.max() <= g.horizon - h
        c = float(rng.random())
        mix = [None, c * p[1] + (1 - c) * q[1], p[2]]
        lhs = marginal_utility(g, 0, h, 0, v_next, mix)
        rhs = c * nu + (1 - c) * marginal_utility(g, 0, h, 0, v_next, [None, q[1], p[2]])
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_dimension_mismatch_rejected():
    g = generate_random_game(0)
    with pytest.raises(GameError):
        marginal_utility(g, 0, 0, 0, np.zeros(3), [None, np.ones(2) / 2])
    with pytest.raises(GameError):
        marginal_utility(g, 0, 0, 0, np.zeros(2), [None, np.ones(3) / 3])


def test_json_roundtrip_lossless(tmp_path):
    g = generate_random_game(4, 3, 3, 2, 2, 0.7)
    path = tmp_path / "g.json"
    g.save(path)
    back = MarkovGame.load(path)
    assert back == g
    assert np.array_equal(back.rewards, g.rewards)
    doc = json.loads(path.read_text())
    assert set(doc) == {"num_players", "horizon", "num_states", "action_counts",
                        "initial_state", "rewards", "transitions"}
    assert np.asarray(doc["rewards"]).shape == (3, 2, 3, 8)


def test_from_dict_checks_declared_dims():
    doc = generate_random_game(0).to_dict()
    doc["horizon"] = 5
    with pytest.raises(GameError):
        MarkovGame.from_dict(doc)
