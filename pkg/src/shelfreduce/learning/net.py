"""One-hidden-layer softmax network trained with mini-batch Adam."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyDataset, UntrainedModel


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class StrategyNet:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    mu: np.ndarray  # input standardisation
    sd: np.ndarray
    train_accuracy: float = float("nan")

    @property
    def sizes(self) -> list[int]:
        return [self.W1.shape[0], self.W1.shape[1], self.W2.shape[1]]

    @property
    def n_strategies(self) -> int:
        return self.W2.shape[1]

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def scores(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return forward(self.params(), (X - self.mu) / self.sd)[1]

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.scores(X), axis=1)


def init_net(n_in: int, hidden: int, n_out: int, rng: np.random.Generator) -> list[np.ndarray]:
    W1 = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, hidden))
    W2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, n_out))
    return [W1, np.zeros(hidden), W2, np.zeros(n_out)]


def forward(params, X):
    W1, b1, W2, b2 = params
    H = np.tanh(X @ W1 + b1)
    return H, softmax(H @ W2 + b2)


def loss_and_grad(params, X, y, l2: float = 0.0):
    """Mean cross-entropy (plus ``l2/2 * |W|^2``) and its gradient w.r.t. each parameter."""
    W1, b1, W2, b2 = params
    n = len(X)
    H, P = forward(params, X)
    loss = -np.mean(np.log(P[np.arange(n), y] + 1e-300)) + 0.5 * l2 * (np.sum(W1 ** 2) + np.sum(W2 ** 2))
    dZ2 = P.copy()
    dZ2[np.arange(n), y] -= 1.0
    dZ2 /= n
    gW2 = H.T @ dZ2 + l2 * W2
    gb2 = dZ2.sum(axis=0)
    dZ1 = (dZ2 @ W2.T) * (1.0 - H ** 2)
    gW1 = X.T @ dZ1 + l2 * W1
    gb1 = dZ1.sum(axis=0)
    return float(loss), [gW1, gb1, gW2, gb2]


def train_strategy_net(X, y, n_classes: int | None = None, hidden: int = 512, epochs: int = 200,
                       lr: float = 1e-3, batch: int = 64, l2: float = 1e-5, rng_seed: int = 0) -> StrategyNet:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if len(X) == 0:
        raise EmptyDataset("no training samples")
    n_classes = n_classes or int(y.max()) + 1
    rng = np.random.default_rng(rng_seed)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    Xs = (X - mu) / sd
    params = init_net(X.shape[1], hidden, n_classes, rng)
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, step = 0.9, 0.999, 0
    for _ in range(epochs):
        order = rng.permutation(len(X))
        for s in range(0, len(X), batch):
            idx = order[s:s + batch]
            _, grads = loss_and_grad(params, Xs[idx], y[idx], l2)
            step += 1
            for k, g in enumerate(grads):
                m[k] = b1 * m[k] + (1 - b1) * g
                v[k] = b2 * v[k] + (1 - b2) * g * g
                mh = m[k] / (1 - b1 ** step)
                vh = v[k] / (1 - b2 ** step)
                params[k] = params[k] - lr * mh / (np.sqrt(vh) + 1e-8)
    net = StrategyNet(*params, mu=mu, sd=sd)
    net.train_accuracy = float(np.mean(net.predict(X) == y))
    return net


def net_top_k(model: StrategyNet | None, theta, k: int) -> list[int]:
    """Labels ranked by softmax score (ties to the lower label), at most ``k``."""
    if model is None:
        raise UntrainedModel("no strategy network")
    s = model.scores(np.asarray(theta, dtype=float).reshape(1, -1))[0]
    order = sorted(range(len(s)), key=lambda c: (-s[c], c))
    return order[:max(0, k)]
