"""Bounded-degree message fusion.

A robot with ``k`` neighbors runs each neighbor's memory through message cell
``k`` (an LSTM whose recurrent state is the robot's own memory and cell state)
and maps the collected outputs through head ``k`` to a fused memory. There is
one cell and one head per ``k = 1..bank_size``, independent of team size.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .perception import Linear, LSTMCell, Module
from .tensor import Tensor


class FusionError(ValueError):
    pass


class MessageBank(Module):
    """``pooled`` heads read the mean of the k cell outputs (c -> c); ``concat``
    heads read them stacked in sender order (k*c -> c)."""

    def __init__(self, memory_dim: int, bank_size: int, mode: str, seed: int, scale: float):
        if mode not in ("pooled", "concat"):
            raise FusionError(f"unknown fusion mode {mode!r}")
        self.memory_dim, self.bank_size, self.mode = memory_dim, bank_size, mode
        self.cells: list[LSTMCell] = []
        self.heads: list[Linear] = []
        c = memory_dim
        for k in range(1, bank_size + 1):
            # per-k streams: bank k initializes the same whatever the bank size
            rng = np.random.default_rng([seed, 4000 + k])
            self.cells.append(LSTMCell(c, c, f"bank_cells.{k}", rng, scale))
            n_in = c if mode == "pooled" else k * c
            self.heads.append(Linear(n_in, c, f"bank_heads.{k}", rng, scale))

    def cell_parameters(self):
        return [p for cell in self.cells for p in cell.parameters()]

    def head_parameters(self):
        return [p for head in self.heads for p in head.parameters()]

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


@dataclass
class FusedState:
    m_hat: Tensor
    feature_dim: int

    @property
    def v_hat(self) -> Tensor:
        return split(self.m_hat, self.feature_dim)[0]

    @property
    def u_hat(self) -> Tensor:
        return split(self.m_hat, self.feature_dim)[1]


def split(m_hat: Tensor, feature_dim: int) -> tuple[Tensor, Tensor]:
    """Classifier part (first ``feature_dim`` entries) and planner part (the rest)."""
    m_hat = T.as_tensor(m_hat)
    c = m_hat.shape[-1]
    if not 0 < feature_dim < c:
        raise FusionError(f"cannot split a length-{c} state at {feature_dim}")
    if m_hat.ndim == 1:
        return m_hat[:feature_dim], m_hat[feature_dim:]
    return m_hat[:, :feature_dim], m_hat[:, feature_dim:]


def _content_rank(data: np.ndarray) -> np.ndarray:
    order = np.lexsort(data.T[::-1])
    rank = np.empty(len(data), dtype=np.intp)
    rank[order] = np.arange(len(data))
    return rank


def fuse_rows(m: Tensor, w: Tensor, neighbors: Sequence[Sequence[int]], bank: MessageBank) -> Tensor:
    """Fused memory for every row of ``m``.

    ``neighbors[r]`` lists the rows whose memories row ``r`` receives. Rows with
    no neighbors keep their own memory. Pooled mode orders each neighbor set by
    message content so the output does not depend on arrival order, bit for bit;
    concat mode uses the order given (callers pass ascending sender ids).
    """
    m, w = T.as_tensor(m), T.as_tensor(w)
    c = m.shape[1]
    groups: dict[int, list[int]] = {}
    for r, nb in enumerate(neighbors):
        k = len(nb)
        if k:
            if k > bank.bank_size:
                raise FusionError(f"row {r} has {k} neighbors but the bank only holds {bank.bank_size} cells")
            groups.setdefault(k, []).append(r)
    if not groups:
        return m
    rank = _content_rank(m.data) if bank.mode == "pooled" else None
    m_hat = m
    for k in sorted(groups):
        rows = np.asarray(groups[k], dtype=np.intp)
        nbr = np.asarray([neighbors[r] for r in rows], dtype=np.intp).reshape(len(rows), k)
        if rank is not None:
            nbr = np.take_along_axis(nbr, np.argsort(rank[nbr], axis=1, kind="stable"), axis=1)
        state_rows = np.repeat(rows, k)
        m_bar, _ = bank.cells[k - 1](T.take_rows(m, state_rows), T.take_rows(w, state_rows),
                                     T.take_rows(m, nbr.reshape(-1)))
        if bank.mode == "pooled":
            agg = T.mean(T.reshape(m_bar, (len(rows), k, c)), axis=1)
        else:
            agg = T.reshape(m_bar, (len(rows), k * c))
        m_hat = T.put_rows(m_hat, rows, bank.heads[k - 1](agg))
    return m_hat


def fuse(m_i, w_i, neighbor_msgs: Sequence, bank: MessageBank, feature_dim: int) -> FusedState:
    """Single-robot fusion; ``neighbor_msgs`` are the neighbors' memory vectors."""
    m_i, w_i = T.as_tensor(m_i), T.as_tensor(w_i)
    k = len(neighbor_msgs)
    if k > bank.bank_size:
        raise FusionError(f"{k} neighbors exceed the degree bound {bank.bank_size}")
    if k == 0:
        return FusedState(m_i, feature_dim)
    c = m_i.shape[-1]
    msgs = [T.reshape(T.as_tensor(x), (1, c)) for x in neighbor_msgs]
    m_rows = T.concat([T.reshape(m_i, (1, c))] + msgs, axis=0)
    w_rows = T.concat([T.reshape(w_i, (1, c)), Tensor(np.zeros((k, c)))], axis=0)
    nbrs = [list(range(1, k + 1))] + [[] for _ in range(k)]
    m_hat = fuse_rows(m_rows, w_rows, nbrs, bank)
    return FusedState(T.reshape(m_hat[0:1], (c,)), feature_dim)


def write_back(m: Tensor, w: Tensor, fused: FusedState) -> tuple[Tensor, Tensor]:
    """The robot's stored memory becomes the fused memory; the cell state is kept."""
    if fused.m_hat.shape != T.as_tensor(m).shape:
        raise FusionError(f"fused state {fused.m_hat.shape} does not match memory {T.as_tensor(m).shape}")
    return fused.m_hat, w
