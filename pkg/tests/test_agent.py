import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedselect import agent as ag
from fedselect.hardware import RoundConditions, assign_profiles, builtin_hardware_catalog
from fedselect.pca import fit_pca

from conftest import central_diff, max_rel_err


def _tiny_instance(seed, n=3, u=2, state_dim=5, hidden=4, batch=4):
    rng = np.random.default_rng(seed)
    main = ag.QNetwork.create(state_dim, n, hidden, rng)
    main.params = rng.uniform(-0.8, 0.8, main.params.shape)
    target = main.copy()
    target.params = rng.uniform(-0.8, 0.8, target.params.shape)
    trs = []
    for i in range(batch):
        acts = sorted(rng.choice(n, size=u, replace=False).tolist())
        trs.append(ag.Transition(rng.normal(size=state_dim), acts, rng.normal(size=state_dim),
                                 rng.normal(size=u), done=bool(i == batch - 1)))
    return main, target, trs


def test_epsilon_schedule_values():
    s = ag.EpsilonSchedule(0.9, 0.2, 100)
    assert ag.epsilon_at(s, 0) == 0.9
    assert ag.epsilon_at(s, 50) == pytest.approx(0.55, abs=1e-15)
    assert ag.epsilon_at(s, 100) == 0.2 and ag.epsilon_at(s, 10_000) == 0.2
    assert ag.epsilon_at(ag.EpsilonSchedule(0.9, 0.35, 10), 12) == 0.35
    with pytest.raises(ValueError):
        ag.EpsilonSchedule(0.2, 0.9, 10)


def test_select_greedy_and_ties():
    rng = np.random.default_rng(0)
    assert ag.select_top_u([0.1, 0.9, 0.5, 0.7], 2, 0.0, rng) == [1, 3]
    assert ag.select_top_u([0.3] * 6, 3, 0.0, rng) == [0, 1, 2]
    with pytest.raises(ValueError):
        ag.select_top_u([0.1, 0.2], 3, 0.0, rng)


def _brute_force_top(q, u):
    # every U-subset, best by total Q then lexicographically smallest on ties
    from itertools import combinations
    best = max(combinations(range(len(q)), u), key=lambda c: (sum(q[i] for i in c), [-i for i in c]))
    return sorted(best)


def test_select_matches_brute_force_on_distinct_values():
    rng = np.random.default_rng(11)
    for _ in range(200):
        q = rng.normal(size=7)
        assert ag.select_top_u(q, 3, 0.0, rng) == _brute_force_top(q, 3)


@settings(max_examples=50)
@given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=10), st.integers(1, 3))
def test_select_invariant_under_monotone_transform(q, u):
    # integer-valued Q keeps the cubic transform exact, ties included
    rng = np.random.default_rng(0)
    q = np.array(q, dtype=np.float64)
    assert ag.select_top_u(q, u, 0.0, rng) == ag.select_top_u(2 * q**3 + q + 7, u, 0.0, rng)


def test_select_exploration_frequency():
    n, u, trials = 10, 3, 4000
    counts = np.zeros(n)
    for seed in range(trials):
        counts[ag.select_top_u(np.arange(n), u, 1.0, np.random.default_rng(seed))] += 1
    p = u / n
    sigma = np.sqrt(trials * p * (1 - p))
    assert np.all(np.abs(counts - trials * p) < 3 * sigma)


def test_select_deterministic_per_seed():
    q = np.random.default_rng(0).normal(size=8)
    a = [ag.select_top_u(q, 3, 0.5, np.random.default_rng(s)) for s in range(20)]
    b = [ag.select_top_u(q, 3, 0.5, np.random.default_rng(s)) for s in range(20)]
    assert a == b


def _profiles(n):
    return assign_profiles(n, builtin_hardware_catalog())


def test_encode_state_layout_symmetry_locality():
    n, d = 4, 6
    profiles = _profiles(n)
    profiles[1] = profiles[0]
    weights = [np.ones(d) * (k if k != 1 else 0) for k in range(n)]
    conds = [RoundConditions(p.hardware.cpu_freq_mhz, p.protocol.bandwidth_mbps) for p in profiles]
    sizes = [10, 10, 20, 30]
    proj = fit_pca(np.random.default_rng(0).normal(size=(5, d)), 2)
    norm = ag.NormStats.from_profiles(profiles, sizes)
    s = ag.encode_state(profiles, conds, weights, sizes, proj, norm)
    block = 2 + ag.CLIENT_SCALARS
    assert s.shape == (n * block,)
    np.testing.assert_array_equal(s[:block], s[block : 2 * block])
    assert np.all((s.reshape(n, block)[:, 2:] >= 0) & (s.reshape(n, block)[:, 2:] <= 1))
    conds2 = list(conds)
    conds2[3] = RoundConditions(conds[3].freq_mhz, conds[3].bandwidth_mbps * 0.5)
    s2 = ag.encode_state(profiles, conds2, weights, sizes, proj, norm)
    changed = np.flatnonzero(s2 != s)
    assert changed.size and np.all(changed // block == 3)
    with pytest.raises(ValueError):
        ag.encode_state(profiles[:3], conds, weights, sizes, proj, norm)


def test_q_forward_zero_net_equal_outputs():
    net = ag.QNetwork.create(6, 4, 5, np.random.default_rng(0))
    net.params[:] = 0
    q = ag.q_forward(net, np.random.default_rng(1).normal(size=6))
    assert np.all(q == q[0])
    with pytest.raises(Exception):
        ag.q_forward(net, np.zeros(5))


def test_q_forward_lipschitz():
    rng = np.random.default_rng(2)
    net = ag.QNetwork.create(6, 4, 5, rng)
    w1, _, w2, _ = net.spec.unpack(net.params)
    bound = np.linalg.norm(w2, 2) * np.linalg.norm(w1, 2)
    s = rng.normal(size=6)
    for _ in range(50):
        delta = rng.normal(size=6) * 1e-2
        diff = np.linalg.norm(ag.q_forward(net, s + delta) - ag.q_forward(net, s))
        assert diff <= bound * np.linalg.norm(delta) + 1e-12
    assert np.array_equal(ag.q_forward(net, s), ag.q_forward(net, s))


def test_ddql_target_cases():
    main, target, _ = _tiny_instance(0)
    s = np.zeros(5)
    tr = ag.Transition(s, [0, 2], s + 1, [0.3, -0.1], done=True)
    np.testing.assert_array_equal(ag.ddql_target(tr, main, target, 0.9), [0.3, -0.1])
    tr.done = False
    np.testing.assert_array_equal(ag.ddql_target(tr, main, target, 0.0), [0.3, -0.1])
    # target net that outputs exactly 1.0 everywhere: Y = r + 0.9
    target.params[:] = 0
    target.params[-3:] = 1.0
    np.testing.assert_allclose(ag.ddql_target(tr, main, target, 0.9), [1.2, 0.8], atol=1e-15)


def test_ddql_target_uses_main_argmax_target_value():
    main, target, trs = _tiny_instance(3)
    tr = trs[0]
    best = int(np.argmax(ag.q_forward(main, tr.next_state)))
    expected = tr.rewards + 0.9 * ag.q_forward(target, tr.next_state)[best]
    np.testing.assert_allclose(ag.ddql_target(tr, main, target, 0.9), expected)
    best_cur = int(np.argmax(ag.q_forward(main, tr.state)))
    expected_cur = tr.rewards + 0.9 * ag.q_forward(target, tr.state)[best_cur]
    np.testing.assert_allclose(ag.ddql_target(tr, main, target, 0.9, "current"), expected_cur)


@pytest.mark.parametrize("seed", range(5))
def test_ddql_gradient_finite_differences(seed):
    main, target, trs = _tiny_instance(seed)
    targets = [ag.ddql_target(tr, main, target, 0.9) for tr in trs]

    def fixed_target_loss(p):
        net = ag.QNetwork(p, main.spec)
        errs = [ag.q_forward(net, tr.state)[tr.actions] - y for tr, y in zip(trs, targets)]
        return float(np.mean(np.concatenate(errs) ** 2))

    loss, g = ag.ddql_loss_and_grad(main, target, trs, 0.9)
    assert loss == pytest.approx(fixed_target_loss(main.params), rel=1e-12)
    assert max_rel_err(g, central_diff(fixed_target_loss, main.params)) <= 1e-4


def test_ddql_update_fixed_point():
    main, target, _ = _tiny_instance(1)
    s = np.random.default_rng(0).normal(size=5)
    q = ag.q_forward(main, s)
    tr = ag.Transition(s, [1], s, [q[1]], done=True)
    before = main.params.copy()
    assert ag.ddql_update(main, target, [tr], 0.9, 0.1) == 0.0
    np.testing.assert_array_equal(main.params, before)


def test_ddql_single_action_loss_definition():
    main, target, _ = _tiny_instance(2)
    s = np.ones(5)
    tr = ag.Transition(s, [2], s, [0.7], done=True)
    assert ag.ddql_update(main, target, [tr], 0.9, 0.0 + 1e-12) == pytest.approx(
        (0.7 - ag.q_forward(main, s)[2]) ** 2
    )


def test_ddql_unselected_actions_get_no_gradient():
    main, target, _ = _tiny_instance(4, hidden=4)
    s = np.ones(5)
    tr = ag.Transition(s, [0], s, [1.0], done=True)
    _, g = ag.ddql_loss_and_grad(main, target, [tr], 0.9)
    _, _, gw2, gb2 = main.spec.unpack(g)
    assert np.all(gw2[1:] == 0) and np.all(gb2[1:] == 0)


def test_ddql_small_step_decreases_loss():
    for seed in range(10):
        main, target, trs = _tiny_instance(seed)
        before, _ = ag.ddql_loss_and_grad(main, target, trs, 0.9)
        targets = [ag.ddql_target(tr, main, target, 0.9) for tr in trs]
        ag.ddql_update(main, target, trs, 0.9, 1e-4)
        after = float(np.mean(np.concatenate(
            [ag.q_forward(main, tr.state)[tr.actions] - y for tr, y in zip(trs, targets)]) ** 2))
        assert after < before


def test_ddql_empty_batch():
    main, target, _ = _tiny_instance(0)
    with pytest.raises(ValueError):
        ag.ddql_update(main, target, [], 0.9, 0.01)


def test_sync_target_every_p():
    main, target, _ = _tiny_instance(0)
    synced = [ag.sync_target(main, target, step, 10) for step in range(1, 21)]
    assert synced == [False] * 9 + [True] + [False] * 9 + [True]
    assert all(ag.sync_target(main, target, step, 1) for step in range(1, 5))
    s = np.ones(5)
    assert np.max(np.abs(ag.q_forward(main, s) - ag.q_forward(target, s))) == 0.0
    main.params = main.params + 1.0
    assert not np.array_equal(ag.q_forward(main, s), ag.q_forward(target, s))


def test_replay_fifo_and_sampling_rules():
    buf = ag.ReplayBuffer(3)
    trs = [ag.Transition(np.full(2, i), [0], np.zeros(2), [0.0], False) for i in range(4)]
    for tr in trs:
        ag.push_transition(buf, tr)
    assert len(buf) == 3 and buf[0] is trs[1]
    batch = ag.sample_batch(buf, 50, np.random.default_rng(0))
    assert len(batch) == 50
    batch = ag.sample_batch(buf, 2, np.random.default_rng(0))
    assert len({id(t) for t in batch}) == 2
    with pytest.raises(ValueError):
        ag.sample_batch(ag.ReplayBuffer(2), 1, np.random.default_rng(0))


def test_replay_sampling_uniform_chi_square():
    from scipy.stats import chisquare
    buf = ag.ReplayBuffer(20)
    for i in range(10):
        buf.push(ag.Transition(np.array([float(i)]), [0], np.zeros(1), [0.0], False))
    rng = np.random.default_rng(123)
    counts = np.zeros(10)
    for _ in range(2000):
        for tr in buf.sample(5, rng):
            counts[int(tr.state[0])] += 1
    assert chisquare(counts).pvalue > 0.01


def test_agent_checkpoint_roundtrip():
    proj = fit_pca(np.random.default_rng(0).normal(size=(4, 6)), 2)
    cfg = ag.AgentConfig(hidden_dim=8, k_pca=2, batch_size=4)
    a = ag.FlashAgent(cfg, 4, proj, np.random.default_rng(0))
    doc = a.checkpoint(3)
    assert list(doc) == ["main_params", "target_params", "q_spec", "step_counter", "epsilon", "projector"]
    b = ag.FlashAgent(cfg, 4, proj, np.random.default_rng(99))
    b.restore(doc)
    np.testing.assert_array_equal(a.main.params, b.main.params)
    np.testing.assert_array_equal(b.projector.components, proj.components)
