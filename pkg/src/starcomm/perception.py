"""Per-robot networks: feature extractor, goal-feature processor, history LSTM,
classifier and goal sampler.

All modules work on a leading batch axis of robot rows so one call serves every
robot of every map in a minibatch. The same module instances are shared by all
robots.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


def init_uniform(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


class Module:
    def parameters(self) -> list[Parameter]:
        out = []
        for v in vars(self).values():
            if isinstance(v, Parameter):
                out.append(v)
            elif isinstance(v, Module):
                out.extend(v.parameters())
            elif isinstance(v, (list, tuple)):
                for item in v:
                    if isinstance(item, Module):
                        out.extend(item.parameters())
                    elif isinstance(item, Parameter):
                        out.append(item)
        return out


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, name: str, rng: np.random.Generator, scale: float):
        self.weight = Parameter(init_uniform(rng, (n_in, n_out), scale), f"{name}.weight")
        self.bias = Parameter(np.zeros(n_out), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)


class Conv(Module):
    def __init__(self, c_in: int, c_out: int, k: int, name: str, rng: np.random.Generator, scale: float):
        self.kernels = Parameter(init_uniform(rng, (c_out, c_in, k, k), scale), f"{name}.kernels")
        self.bias = Parameter(np.zeros((c_out, 1, 1)), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.conv2d(x, self.kernels), self.bias)


def _conv_plan(window: int, c_in: int, channels: tuple[int, ...], k: int = 3) -> tuple[list[bool], int]:
    """Which conv stages fit the window, whether each is pooled, and the flat size.

    A stage runs while the map is at least ``k`` wide; pooling follows only when
    the conv output is at least 4 wide so tiny windows are not collapsed to 1x1.
    """
    size = window
    pools: list[bool] = []
    for _ in channels:
        if size < k:
            break
        size = size - k + 1
        pool = size >= 4
        if pool:
            size //= 2
        pools.append(pool)
    n_stages = len(pools)
    if n_stages == 0:
        return pools, c_in * window * window
    return pools, channels[n_stages - 1] * size * size


class FeatureExtractor(Module):
    """Small conv stack standing in for the pretrained image backbone.

    Two 3x3 conv stages (8 then 16 channels) with relu and 2x2 mean pooling,
    flattened onto an affine map of width ``feature_dim``. Stages that do not fit
    the window are dropped.
    """

    widths = (8, 16)

    def __init__(self, channels: int, window: int, feature_dim: int, rng, scale: float):
        self.channels, self.window = channels, window
        self.pools, self.flat = _conv_plan(window, channels, self.widths)
        self.convs = []
        c_in = channels
        for i, _ in enumerate(self.pools):
            self.convs.append(Conv(c_in, self.widths[i], 3, f"extractor.conv{i}", rng, scale))
            c_in = self.widths[i]
        self.head = Linear(self.flat, feature_dim, "extractor.head", rng, scale)

    def __call__(self, obs: Tensor) -> Tensor:
        x = T.as_tensor(obs)
        if x.ndim != 4 or x.shape[1:] != (self.channels, self.window, self.window):
            raise T.DimensionError(
                f"observation batch {x.shape} does not match [B, {self.channels}, {self.window}, {self.window}]")
        for conv, pool in zip(self.convs, self.pools):
            x = T.relu(conv(x))
            if pool:
                x = T.avg_pool2d(x, 2)
        return self.head(T.reshape(x, (x.shape[0], -1)))


class GoalFeatures(Module):
    """One conv stage plus an affine head; the robot's normalized position is
    appended to the flattened conv output before the head."""

    width = 4

    def __init__(self, channels: int, window: int, goal_dim: int, rng, scale: float):
        self.channels, self.window = channels, window
        self.conv = Conv(channels, self.width, 3, "goal_features.conv", rng, scale) if window >= 3 else None
        side = window - 2 if self.conv else window
        n_flat = (self.width if self.conv else channels) * side * side
        self.head = Linear(n_flat + 2, goal_dim, "goal_features.head", rng, scale)

    def __call__(self, obs: Tensor, position01: np.ndarray) -> Tensor:
        x = T.as_tensor(obs)
        if x.ndim != 4 or x.shape[1:] != (self.channels, self.window, self.window):
            raise T.DimensionError(
                f"observation batch {x.shape} does not match [B, {self.channels}, {self.window}, {self.window}]")
        if self.conv is not None:
            x = T.relu(self.conv(x))
        flat = T.reshape(x, (x.shape[0], -1))
        return self.head(T.concat([flat, Tensor(position01)], axis=1))


class LSTMCell(Module):
    """Gates f, i, o = sigmoid(.), candidate g = tanh(.) from one affine map of
    ``[x, m_prev]``; ``w = f*w_prev + i*g``, ``m = o*tanh(w)``.

    Gate blocks in the stacked weight are ordered f, i, g, o.
    """

    def __init__(self, input_dim: int, hidden_dim: int, name: str, rng, scale: float, forget_bias: float = 1.0):
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        self.weight = Parameter(init_uniform(rng, (input_dim + hidden_dim, 4 * hidden_dim), scale),
                                f"{name}.weight")
        bias = np.zeros(4 * hidden_dim)
        bias[:hidden_dim] = forget_bias
        self.bias = Parameter(bias, f"{name}.bias")

    def __call__(self, m_prev: Tensor, w_prev: Tensor, x: Tensor) -> tuple[Tensor, Tensor]:
        c = self.hidden_dim
        z = T.add(T.matmul(T.concat([x, m_prev], axis=1), self.weight), self.bias)
        f = T.sigmoid(z[:, 0:c])
        i = T.sigmoid(z[:, c:2 * c])
        g = T.tanh(z[:, 2 * c:3 * c])
        o = T.sigmoid(z[:, 3 * c:4 * c])
        w = T.add(T.mul(f, w_prev), T.mul(i, g))
        m = T.mul(o, T.tanh(w))
        return m, w


@dataclass
class Prediction:
    logits: Tensor
    probabilities: np.ndarray
    is_probability: bool = True


class Classifier(Module):
    def __init__(self, feature_dim: int, n_classes: int, rng, scale: float):
        self.fc = Linear(feature_dim, n_classes, "classifier.fc", rng, scale)

    def __call__(self, v_hat: Tensor) -> Prediction:
        logits = self.fc(v_hat)
        return Prediction(logits, T.softmax(logits.detach()).data)


class GoalSampler(Module):
    """Affine head from the planner features onto a G x G grid of map cells."""

    def __init__(self, goal_dim: int, grid: int, rng, scale: float):
        self.grid = grid
        self.fc = Linear(goal_dim, grid * grid, "goal_head.fc", rng, scale)

    def log_probs(self, u_hat: Tensor) -> Tensor:
        return T.log_softmax(self.fc(u_hat))

    def cell_center(self, cells: np.ndarray, height: int, width: int) -> np.ndarray:
        """Pixel (x, y) of each cell center; cell index = row * G + col."""
        gy, gx = np.divmod(np.asarray(cells), self.grid)
        return np.stack([(gx + 0.5) * width / self.grid, (gy + 0.5) * height / self.grid], axis=-1)

    def __call__(self, u_hat: Tensor, rng: np.random.Generator | None, greedy: bool = False):
        """Draw one cell per row. Returns (cells, per-row log-probability node)."""
        logp = self.log_probs(u_hat)
        if greedy or rng is None:
            cells = np.argmax(logp.data, axis=1)
        else:
            probs = np.exp(logp.data)
            cdf = np.cumsum(probs, axis=1)
            draws = rng.random(len(cdf))[:, None] * cdf[:, -1:]
            cells = np.minimum((cdf < draws).sum(axis=1), cdf.shape[1] - 1)
        onehot = np.zeros(logp.shape)
        onehot[np.arange(len(cells)), cells] = 1.0
        return cells, T.tsum(T.mul(logp, onehot), axis=1)


def extract_features(obs, extractor: FeatureExtractor) -> Tensor:
    return extractor(obs)


def goal_features(obs, position01, processor: GoalFeatures) -> Tensor:
    return processor(obs, position01)


def encode_history(m_prev, w_prev, x, cell: LSTMCell) -> tuple[Tensor, Tensor]:
    return cell(T.as_tensor(m_prev), T.as_tensor(w_prev), T.as_tensor(x))


def classify(v_hat, classifier: Classifier) -> Prediction:
    return classifier(T.as_tensor(v_hat))


def sample_goal(u_hat, sampler: GoalSampler, rng, greedy: bool = False):
    return sampler(T.as_tensor(u_hat), rng, greedy)
