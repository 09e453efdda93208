"""Zero-inflated dwell model: an RF classifier gates a GCN regressor."""

from __future__ import annotations

import numpy as np

from .base import Model, ModelError, Standardizer, register
from .neural import GCNRegressor, GraphModelMixin, _check_graph_vocab
from .trees import Forest, pack_trees, unpack_trees

RF_DEFAULTS = {
    "n_trees": 200,
    "max_depth": 12,
    "min_leaf": 2,
    "max_features": "sqrt",
    "bootstrap": True,
    "n_jobs": 1,
}
GCN_DEFAULTS = {"hidden_width": 64, "epochs": 500, "step_size": 1e-3}


@register
class RFGCNModel(GraphModelMixin, Model):
    """Outputs exactly 0 where the classifier votes "skipped", else the floored GCN value.

    The classifier label is 1{y = 0} on all rows; the GCN only sees snapshots
    whose observed target is positive.
    """

    kind = "rf_gcn"
    defaults = {"rf": {}, "gcn": {}}

    def __init__(self, params=None, seed=0, graph=None):
        Model.__init__(self, params, seed)
        rf, gcn = dict(self.params.get("rf") or {}), dict(self.params.get("gcn") or {})
        for name, given, allowed in (("rf", rf, RF_DEFAULTS), ("gcn", gcn, GCN_DEFAULTS)):
            bad = set(given) - set(allowed)
            if bad:
                raise ModelError(f"rf_gcn: unknown {name} hyperparameters {sorted(bad)}")
        self.params = {"rf": {**RF_DEFAULTS, **rf}, "gcn": {**GCN_DEFAULTS, **gcn}}
        self._init_graph(graph)

    def _forest(self) -> Forest:
        return Forest(task="binary_classification", seed=self.seed, **self.params["rf"])

    def _regressor(self) -> GCNRegressor:
        return GCNRegressor(seed=self.seed + 1, **self.params["gcn"])

    def _fit(self, dataset, history):
        positive = dataset.y > 0
        if not positive.any():
            raise ModelError("rf_gcn: no nonzero targets; the regression stage has nothing to fit")
        _check_graph_vocab(self.graph, dataset)
        self.classifier = self._forest().fit(dataset.X, (~positive).astype(float))
        snaps = self.snapshots(dataset, history).subset(np.flatnonzero(positive))
        self.gcn = self._regressor().fit(snaps, self.graph.A_hat, Standardizer.fit(dataset.X))

    def is_zero(self, dataset) -> np.ndarray:
        self._check(dataset)
        return self.classifier.predict(dataset.X) == 1.0

    def _predict(self, dataset, history):
        zero = self.classifier.predict(dataset.X) == 1.0
        reg = self.gcn.predict(self.snapshots(dataset, history), self.graph.A_hat)
        return np.where(zero, 0.0, np.maximum(reg, 0.0))

    def meta(self):
        m = super().meta()
        m.update(self._graph_meta())
        m.update(self.gcn.state("gcn_")[0])
        return m

    def arrays(self):
        out = {"graph_A": self.graph.A}
        out.update(pack_trees(self.classifier.trees))
        out.update(self.gcn.state("gcn_")[1])
        return out

    def _restore(self, meta, arrays):
        self._restore_graph(meta, arrays)
        self.classifier = self._forest()
        self.classifier.trees = unpack_trees(arrays)
        self.gcn = self._regressor().restore("gcn_", meta, arrays)
