"""Multi-layer perceptron and two-layer graph convolution, trained with Adam.

Gradients are written out by hand; ``loss_and_grad`` on each network is the
function the finite-difference checks exercise.
"""

from __future__ import annotations

import logging
from typing import List, Optional, Sequence

import numpy as np

from ..graph import GraphSpec, SnapshotSet, build_snapshots, normalize_adjacency
from .base import Model, ModelError, Standardizer, register

logger = logging.getLogger(__name__)


class Adam:
    def __init__(self, params: Sequence[np.ndarray], step_size=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.step_size = step_size
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.step_size * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _check_finite(loss: float, what: str, epoch: int) -> None:
    if not np.isfinite(loss):
        raise ModelError(f"{what}: non-finite training loss at epoch {epoch}; lower step_size")


class MLPNet:
    """ReLU hidden layers and a linear scalar output."""

    def __init__(self, dims: Sequence[int], seed: int = 0):
        rng = np.random.default_rng(seed)
        self.params: List[np.ndarray] = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            last = i == len(dims) - 2
            W = np.zeros((a, b)) if last else rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b))
            self.params += [W, np.zeros(b)]

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def forward(self, X: np.ndarray, params=None) -> np.ndarray:
        params = self.params if params is None else params
        h = X
        for i in range(self.n_layers):
            h = h @ params[2 * i] + params[2 * i + 1]
            if i < self.n_layers - 1:
                h = np.maximum(h, 0.0)
        return h[:, 0]

    def loss_and_grad(self, X: np.ndarray, y: np.ndarray, params=None):
        """Mean squared error and its gradient with respect to every parameter."""
        params = self.params if params is None else params
        acts = [X]
        pres = []
        h = X
        for i in range(self.n_layers):
            z = h @ params[2 * i] + params[2 * i + 1]
            pres.append(z)
            h = np.maximum(z, 0.0) if i < self.n_layers - 1 else z
            acts.append(h)
        out = h[:, 0]
        err = out - y
        loss = float(np.mean(err * err))
        grads: List[Optional[np.ndarray]] = [None] * len(params)
        delta = (2.0 / len(y)) * err[:, None]
        for i in reversed(range(self.n_layers)):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ params[2 * i].T) * (pres[i - 1] > 0)
        return loss, grads


@register
class MLPModel(Model):
    kind = "mlp"
    defaults = {"layers": 2, "hidden_width": 64, "epochs": 200, "batch": 64, "step_size": 1e-3}

    def _fit(self, dataset, history):
        p = self.params
        self.xstd = Standardizer.fit(dataset.X)
        self.ymean = float(np.mean(dataset.y))
        ys = float(np.std(dataset.y))
        self.yscale = ys if ys > 0 else 1.0
        X = self.xstd.transform(dataset.X)
        y = (dataset.y - self.ymean) / self.yscale
        dims = [X.shape[1]] + [int(p["hidden_width"])] * int(p["layers"]) + [1]
        self.net = MLPNet(dims, self.seed)
        opt = Adam(self.net.params, float(p["step_size"]))
        rng = np.random.default_rng(self.seed + 1)
        n, batch = len(y), max(1, int(p["batch"]))
        self.history_loss = []
        for epoch in range(int(p["epochs"])):
            order = rng.permutation(n)
            total = 0.0
            for s in range(0, n, batch):
                idx = order[s : s + batch]
                loss, grads = self.net.loss_and_grad(X[idx], y[idx])
                _check_finite(loss, self.kind, epoch)
                opt.step(self.net.params, grads)
                total += loss * len(idx)
            self.history_loss.append(total / n)

    def arrays(self):
        out = {"x_mean": self.xstd.mean, "x_scale": self.xstd.scale}
        out.update({f"p{i}": a for i, a in enumerate(self.net.params)})
        return out

    def meta(self):
        m = super().meta()
        m.update(y_mean=self.ymean, y_scale=self.yscale)
        return m

    def _restore(self, meta, arrays):
        self.xstd = Standardizer(arrays["x_mean"], arrays["x_scale"])
        self.ymean, self.yscale = float(meta["y_mean"]), float(meta["y_scale"])
        k = sum(1 for name in arrays if name.startswith("p"))
        self.net = MLPNet.__new__(MLPNet)
        self.net.params = [arrays[f"p{i}"] for i in range(k)]

    def _predict(self, dataset, history):
        return self.net.forward(self.xstd.transform(dataset.X)) * self.yscale + self.ymean


class GCNNet:
    """Two graph convolutions: H = relu(Â X W0 + b0), ŷ = Â H w1 + b1, one output per node."""

    def __init__(self, d: int, hidden: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.params = [
            rng.normal(0.0, np.sqrt(2.0 / d), size=(d, hidden)),
            np.zeros(hidden),
            rng.normal(0.0, 1.0 / np.sqrt(hidden), size=hidden),
            np.zeros(1),
        ]

    def forward_nodes(self, A_hat: np.ndarray, X: np.ndarray, params=None) -> np.ndarray:
        """Predictions for every node; X is (N, V, d) or (V, d)."""
        W0, b0, w1, b1 = self.params if params is None else params
        AX = np.einsum("uv,...vd->...ud", A_hat, X)
        H = np.maximum(AX @ W0 + b0, 0.0)
        return np.einsum("uv,...v->...u", A_hat, H @ w1) + b1[0]

    # Training only needs the observed node's output, which depends on the
    # two-hop neighbourhood; the gathered form below evaluates just that.
    @staticmethod
    def gather(A_hat: np.ndarray, X: np.ndarray, node: np.ndarray):
        """(G, a): first-layer inputs at each observed node's neighbours, and their weights."""
        V = A_hat.shape[0]
        nbrs = [np.flatnonzero(A_hat[m]) for m in range(V)]
        K = max(len(nb) for nb in nbrs)
        idx = np.zeros((V, K), dtype=np.int64)
        wts = np.zeros((V, K))
        for m, nb in enumerate(nbrs):
            idx[m, : len(nb)] = nb
            idx[m, len(nb) :] = m
            wts[m, : len(nb)] = A_hat[m, nb]
        AX = np.einsum("uv,nvd->nud", A_hat, X)
        rows = np.arange(X.shape[0])[:, None]
        return AX[rows, idx[node]], wts[node]

    def forward_gathered(self, G: np.ndarray, a: np.ndarray, params=None) -> np.ndarray:
        W0, b0, w1, b1 = self.params if params is None else params
        H = np.maximum(G @ W0 + b0, 0.0)
        return (a * (H @ w1)).sum(axis=1) + b1[0]

    def loss_and_grad(self, G: np.ndarray, a: np.ndarray, y: np.ndarray, params=None):
        """Masked mean squared error over the observed nodes and its gradient."""
        W0, b0, w1, b1 = self.params if params is None else params
        pre = G @ W0 + b0
        H = np.maximum(pre, 0.0)
        out = (a * (H @ w1)).sum(axis=1) + b1[0]
        err = out - y
        loss = float(np.mean(err * err))
        r = (2.0 / len(y)) * err
        dZ = (r[:, None] * a).ravel()
        h = H.shape[-1]
        dw1 = dZ @ H.reshape(-1, h)
        dpre = dZ[:, None] * w1 * (pre.reshape(-1, h) > 0)
        dW0 = G.reshape(-1, G.shape[-1]).T @ dpre
        db0 = dpre.sum(axis=0)
        return loss, [dW0, db0, dw1, np.array([r.sum()])]


class GraphModelMixin:
    """Graph bookkeeping and snapshot assembly for models that read snapshots."""

    needs_graph = True

    def _init_graph(self, graph: Optional[GraphSpec]):
        self.graph = graph

    def snapshots(self, dataset, history) -> SnapshotSet:
        return build_snapshots(dataset, self.graph, history)

    def _graph_meta(self):
        return {"graph_nodes": list(self.graph.nodes)}

    def _restore_graph(self, meta, arrays):
        A = arrays["graph_A"]
        self.graph = GraphSpec(tuple(meta["graph_nodes"]), A, normalize_adjacency(A))


def _check_graph_vocab(graph: GraphSpec, dataset) -> None:
    missing = [k for k in graph.nodes if k not in dataset.key_vocab]
    if missing:
        raise ModelError(
            f"graph nodes {missing[:3]} are not in the key vocabulary; build features with the routes"
        )


class GCNRegressor:
    """Standardization plus a trained ``GCNNet``; shared by the plain and hurdle models."""

    def __init__(self, hidden_width=64, epochs=500, step_size=1e-3, seed=0):
        self.hidden = int(hidden_width)
        self.epochs = int(epochs)
        self.step_size = float(step_size)
        self.seed = int(seed)

    def fit(self, snaps: SnapshotSet, A_hat: np.ndarray, xstd: Standardizer) -> "GCNRegressor":
        if len(snaps) == 0:
            raise ModelError("gcn: no training snapshots")
        d = snaps.X.shape[2]
        self.xstd = xstd
        yobs = snaps.y[np.arange(len(snaps)), snaps.node]
        self.ymean = float(np.mean(yobs))
        ys = float(np.std(yobs))
        self.yscale = ys if ys > 0 else 1.0
        G, a = GCNNet.gather(A_hat, xstd.transform(snaps.X), snaps.node)
        y = (yobs - self.ymean) / self.yscale
        self.net = GCNNet(d, self.hidden, self.seed)
        opt = Adam(self.net.params, self.step_size)
        self.history_loss = []
        for epoch in range(self.epochs):
            loss, grads = self.net.loss_and_grad(G, a, y)
            _check_finite(loss, "gcn", epoch)
            opt.step(self.net.params, grads)
            self.history_loss.append(loss)
        return self

    def predict(self, snaps: SnapshotSet, A_hat: np.ndarray) -> np.ndarray:
        G, a = GCNNet.gather(A_hat, self.xstd.transform(snaps.X), snaps.node)
        return self.net.forward_gathered(G, a) * self.yscale + self.ymean

    def predict_nodes(self, X: np.ndarray, A_hat: np.ndarray) -> np.ndarray:
        return self.net.forward_nodes(A_hat, self.xstd.transform(X)) * self.yscale + self.ymean

    def state(self, prefix: str):
        arrays = {f"{prefix}x_mean": self.xstd.mean, f"{prefix}x_scale": self.xstd.scale}
        arrays.update({f"{prefix}p{i}": p for i, p in enumerate(self.net.params)})
        return {f"{prefix}y_mean": self.ymean, f"{prefix}y_scale": self.yscale}, arrays

    def restore(self, prefix: str, meta, arrays):
        self.xstd = Standardizer(arrays[f"{prefix}x_mean"], arrays[f"{prefix}x_scale"])
        self.ymean = float(meta[f"{prefix}y_mean"])
        self.yscale = float(meta[f"{prefix}y_scale"])
        self.net = GCNNet.__new__(GCNNet)
        self.net.params = [arrays[f"{prefix}p{i}"] for i in range(4)]
        return self


@register
class GCNModel(GraphModelMixin, Model):
    kind = "gcn"
    defaults = {"hidden_width": 64, "epochs": 500, "step_size": 1e-3}

    def __init__(self, params=None, seed=0, graph=None):
        Model.__init__(self, params, seed)
        self._init_graph(graph)

    def _regressor(self) -> GCNRegressor:
        return GCNRegressor(seed=self.seed, **self.params)

    def _fit(self, dataset, history):
        _check_graph_vocab(self.graph, dataset)
        snaps = self.snapshots(dataset, history)
        self.gcn = self._regressor().fit(snaps, self.graph.A_hat, Standardizer.fit(dataset.X))

    def meta(self):
        m = super().meta()
        m.update(self._graph_meta())
        m.update(self.gcn.state("")[0])
        return m

    def arrays(self):
        out = {"graph_A": self.graph.A}
        out.update(self.gcn.state("")[1])
        return out

    def _restore(self, meta, arrays):
        self._restore_graph(meta, arrays)
        self.gcn = self._regressor().restore("", meta, arrays)

    def _predict(self, dataset, history):
        return self.gcn.predict(self.snapshots(dataset, history), self.graph.A_hat)
