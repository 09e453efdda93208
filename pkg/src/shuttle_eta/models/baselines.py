"""Lag, per-key mean and ridge linear regression baselines."""

from __future__ import annotations

from typing import Dict

import numpy as np

from .base import Model, ModelError, Standardizer, register


@register
class LagModel(Model):
    """Predicts the most recent observation on the key (the ``lag1`` feature)."""

    kind = "lag"
    floored = False

    def _fit(self, dataset, history):
        self._lag_col = dataset.encoder.lag_offset

    def _restore(self, meta, arrays):
        self._lag_col = len(self.vehicle_vocab) + len(self.key_vocab) + 7

    def _predict(self, dataset, history):
        return dataset.X[:, self._lag_col].copy()


@register
class MeanModel(Model):
    """Per-key training mean with the global training mean for unseen keys."""

    kind = "mean"
    floored = False

    def _fit(self, dataset, history):
        self.global_mean = float(np.mean(dataset.y))
        sums: Dict[str, float] = {}
        counts: Dict[str, int] = {}
        for k, y in zip(dataset.keys, dataset.y):
            sums[k] = sums.get(k, 0.0) + float(y)
            counts[k] = counts.get(k, 0) + 1
        self.key_means = {k: sums[k] / counts[k] for k in sorted(sums)}

    def meta(self):
        m = super().meta()
        m["global_mean"] = self.global_mean
        m["key_means"] = self.key_means
        return m

    def _restore(self, meta, arrays):
        self.global_mean = float(meta["global_mean"])
        self.key_means = {k: float(v) for k, v in meta["key_means"].items()}

    def _predict(self, dataset, history):
        return np.array([self.key_means.get(k, self.global_mean) for k in dataset.keys])


@register
class LinearModel(Model):
    """Ridge regression on standardized features, intercept not penalized.

    With centred columns the intercept decouples and equals the target mean;
    the slopes solve (ZᵀZ + λI) b = Zᵀ(y − ȳ).
    """

    kind = "linreg"
    defaults = {"ridge": 1e-3}

    def _fit(self, dataset, history):
        lam = float(self.params["ridge"])
        if lam < 0:
            raise ModelError("ridge must be >= 0")
        self.std = Standardizer.fit(dataset.X)
        Z = self.std.transform(dataset.X)
        ybar = float(np.mean(dataset.y))
        G = Z.T @ Z + lam * np.eye(Z.shape[1])
        if lam == 0.0 and np.linalg.matrix_rank(G) < G.shape[0]:
            raise ModelError("normal equations are singular with ridge = 0; use ridge > 0")
        try:
            self.coef = np.linalg.solve(G, Z.T @ (dataset.y - ybar))
        except np.linalg.LinAlgError as exc:
            raise ModelError(f"normal equations are singular ({exc}); use ridge > 0") from exc
        self.intercept = ybar

    def raw_coefficients(self):
        """(intercept, slopes) expressed on unstandardized features."""
        slopes = self.coef / self.std.scale
        return self.intercept - float(slopes @ self.std.mean), slopes

    def arrays(self):
        return {"coef": self.coef, "mean": self.std.mean, "scale": self.std.scale}

    def meta(self):
        m = super().meta()
        m["intercept"] = self.intercept
        return m

    def _restore(self, meta, arrays):
        self.coef = arrays["coef"]
        self.std = Standardizer(arrays["mean"], arrays["scale"])
        self.intercept = float(meta["intercept"])

    def _predict(self, dataset, history):
        return self.std.transform(dataset.X) @ self.coef + self.intercept
