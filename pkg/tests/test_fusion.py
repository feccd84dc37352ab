import itertools

import numpy as np
import pytest

from starcomm import tensor as T
from starcomm.fusion import FusionError, MessageBank, fuse, fuse_rows, split, write_back
from starcomm.tensor import Tensor

import oracles

C = 6


def _bank(mode="pooled", size=4, seed=0):
    return MessageBank(C, size, mode, seed, scale=0.5)


@pytest.mark.parametrize("case", range(100))
def test_pooled_fuse_is_bitwise_permutation_invariant(case):
    rng = np.random.default_rng([31, case])
    k = int(rng.integers(1, 5))
    bank = _bank(seed=case)
    m_i, w_i = rng.normal(size=C), rng.normal(size=C)
    msgs = [rng.normal(size=C) for _ in range(k)]
    ref = fuse(m_i, w_i, msgs, bank, 2).m_hat.data
    for perm in itertools.permutations(range(k)):
        got = fuse(m_i, w_i, [msgs[j] for j in perm], bank, 2).m_hat.data
        assert np.array_equal(got, ref)


def test_pooled_fuse_matches_loop_oracle():
    rng = np.random.default_rng(1)
    bank = _bank()
    m_i, w_i = rng.normal(size=C), rng.normal(size=C)
    msgs = [rng.normal(size=C) for _ in range(3)]
    cell, head = bank.cells[2], bank.heads[2]
    outs = [oracles.lstm(m_i, w_i, x, cell.weight.data, cell.bias.data)[0] for x in msgs]
    pooled = np.mean(outs, axis=0)
    expected = pooled @ head.weight.data + head.bias.data
    got = fuse(m_i, w_i, msgs, bank, 2).m_hat.data
    assert np.max(np.abs(got - expected)) < 1e-12


def test_concat_mode_follows_sender_order():
    rng = np.random.default_rng(2)
    bank = _bank("concat")
    m_i, w_i = rng.normal(size=C), rng.normal(size=C)
    msgs = [rng.normal(size=C) for _ in range(2)]
    cell, head = bank.cells[1], bank.heads[1]
    outs = [oracles.lstm(m_i, w_i, x, cell.weight.data, cell.bias.data)[0] for x in msgs]
    expected = np.concatenate(outs) @ head.weight.data + head.bias.data
    assert np.max(np.abs(fuse(m_i, w_i, msgs, bank, 2).m_hat.data - expected)) < 1e-12
    swapped = fuse(m_i, w_i, msgs[::-1], bank, 2).m_hat.data
    assert not np.allclose(swapped, expected)


def test_no_neighbors_keeps_own_memory():
    m_i = np.arange(C, dtype=float)
    state = fuse(m_i, np.zeros(C), [], _bank(), 2)
    assert np.array_equal(state.m_hat.data, m_i)
    assert np.array_equal(state.v_hat.data, m_i[:2])
    assert np.array_equal(state.u_hat.data, m_i[2:])


def test_too_many_neighbors():
    with pytest.raises(FusionError, match="degree bound 4"):
        fuse(np.zeros(C), np.zeros(C), [np.zeros(C)] * 5, _bank(), 2)
    with pytest.raises(FusionError, match="row 0 has 3 neighbors"):
        fuse_rows(Tensor(np.zeros((4, C))), Tensor(np.zeros((4, C))), [[1, 2, 3], [], [], []], _bank(size=2))


def test_batched_rows_match_single_robot_fusion():
    rng = np.random.default_rng(3)
    bank = _bank()
    m, w = rng.normal(size=(5, C)), rng.normal(size=(5, C))
    nbrs = [[1, 2], [0], [], [0, 1, 2, 4], [3]]
    batched = fuse_rows(Tensor(m), Tensor(w), nbrs, bank).data
    for r, nb in enumerate(nbrs):
        single = fuse(m[r], w[r], [m[j] for j in nb], bank, 2).m_hat.data
        # different batch shapes may round differently in BLAS
        assert np.max(np.abs(batched[r] - single)) < 1e-12


def test_bank_parameters_do_not_depend_on_team_size():
    small, large = _bank(size=4, seed=9), _bank(size=19, seed=9)
    assert small.n_parameters() == _bank(size=4, seed=1).n_parameters()
    large_named = {p.name: p for p in large.parameters()}
    for p in small.parameters():
        assert np.array_equal(p.data, large_named[p.name].data)
    assert large.n_parameters() > small.n_parameters()


def test_fusion_gradient():
    rng = np.random.default_rng(4)
    bank = _bank()
    m = T.Parameter(rng.normal(size=(4, C)), "m")
    w = Tensor(rng.normal(size=(4, C)))
    nbrs = [[1, 2], [0, 2, 3], [], [1]]
    loss = lambda: T.tsum(T.tanh(fuse_rows(m, w, nbrs, bank)))
    assert T.grad_check(loss, bank.parameters() + [m]) < 1e-6


def test_split_and_write_back():
    v, u = split(Tensor(np.arange(12.0).reshape(2, 6)), 4)
    assert v.shape == (2, 4) and u.shape == (2, 2)
    with pytest.raises(FusionError):
        split(Tensor(np.zeros(6)), 6)
    m, w = Tensor(np.zeros(C)), Tensor(np.ones(C))
    state = fuse(np.ones(C), np.ones(C), [np.ones(C)], _bank(), 2)
    m_new, w_new = write_back(m, w, state)
    assert np.array_equal(m_new.data, state.m_hat.data)
    assert w_new is w


def test_unknown_mode():
    with pytest.raises(FusionError):
        MessageBank(C, 2, "attention", 0, 0.1)
