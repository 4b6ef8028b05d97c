"""Local surrogate explanations and gradient saliency for trained encoders.

LIME-style explanations perturb one standardized sequence by resampling
flattened features from background marginals, weight the perturbations by
a Gaussian kernel on Euclidean distance, and fit a ridge-penalized
weighted linear surrogate to the model's scalar predictions.  Saliency
differentiates the final hidden state with respect to every input cell
through the autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from ._validation import check_sequence_array

__all__ = ["Explanation", "SaliencyReport", "LimeExplainer", "feature_frequency", "gradient_saliency"]


@dataclass
class Explanation:
    sample_id: int
    feature_weights: dict
    intercept: float
    local_fit_r2: float

    def top_features(self, k: int) -> list[str]:
        ranked = sorted(self.feature_weights.items(), key=lambda kv: (-abs(kv[1]), kv[0]))
        return [name for name, _ in ranked[:k]]

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "feature_weights": dict(self.feature_weights),
            "intercept": self.intercept,
            "local_fit_r2": self.local_fit_r2,
        }


@dataclass
class SaliencyReport:
    avg_gradients: np.ndarray  # (T, F) mean |d hidden / d input|
    max_feature_counts: dict
    feature_names: list


def _cell_names(feature_names, n_steps: int) -> list[str]:
    return [f"{name}@t{t + 1}" for t in range(n_steps) for name in feature_names]


def _weighted_ridge(Z: np.ndarray, y: np.ndarray, w: np.ndarray, lam: float):
    """Intercept-augmented weighted ridge; the intercept is unpenalized."""
    n, p = Z.shape
    design = np.column_stack([np.ones(n), Z])
    penalty = lam * np.eye(p + 1)
    penalty[0, 0] = 0.0
    wd = design * w[:, None]
    coef = np.linalg.solve(design.T @ wd + penalty, wd.T @ y)
    fitted = design @ coef
    total = float(w @ (y - (w @ y) / w.sum()) ** 2)
    resid = float(w @ (y - fitted) ** 2)
    r2 = 1.0 if total <= 1e-300 else 1.0 - resid / total
    return coef[0], coef[1:], r2


class LimeExplainer:
    """Explains one scalar prediction with a local weighted-linear surrogate."""

    def __init__(self, model, n_samples=1000, kernel_width=None, ridge_lambda=1e-3, seed=0):
        if n_samples < 10:
            raise ValueError(f"n_samples must be >= 10, got {n_samples}")
        self.model = model
        self.n_samples = n_samples
        self.kernel_width = kernel_width
        self.ridge_lambda = ridge_lambda
        self.seed = seed

    def _predict(self, flat: np.ndarray, n_steps: int, n_features: int) -> np.ndarray:
        fn = self.model.predict if hasattr(self.model, "predict") else self.model
        out = np.asarray(fn(flat.reshape(-1, n_steps, n_features)), dtype=np.float64)
        if out.ndim == 2 and out.shape[1] == 1:
            out = out[:, 0]
        if out.ndim != 1:
            raise ValueError("LimeExplainer needs a scalar prediction per sequence")
        return out

    def explain(self, x, background, sample_id: int = 0) -> Explanation:
        """Surrogate coefficients for one (T, F) sequence.

        ``background`` supplies the perturbation marginals; pass the
        training SequenceTensor so distances live in standardized space.
        """
        bg, _ = check_sequence_array(background)
        n_bg, n_steps, n_features = bg.shape
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (n_steps, n_features):
            raise ValueError(f"x has shape {x.shape}, expected {(n_steps, n_features)}")

        p = n_steps * n_features
        flat_bg = bg.reshape(n_bg, p)
        rng = np.random.default_rng([self.seed, int(sample_id)])
        # column-wise marginal resampling; row 0 keeps the instance itself
        draws = flat_bg[rng.integers(0, n_bg, size=(self.n_samples, p)), np.arange(p)]
        draws[0] = x.ravel()

        width = self.kernel_width if self.kernel_width is not None else 0.75 * np.sqrt(p)
        dist = np.linalg.norm(draws - x.ravel(), axis=1)
        weights = np.exp(-((dist / width) ** 2))

        y = self._predict(draws, n_steps, n_features)
        names = None
        if hasattr(background, "feature_names"):
            names = _cell_names(background.feature_names, n_steps)
        else:
            names = _cell_names([f"f{j}" for j in range(n_features)], n_steps)

        intercept, coef, r2 = _weighted_ridge(draws, y, weights, self.ridge_lambda)
        return Explanation(
            sample_id=int(sample_id),
            feature_weights=dict(zip(names, coef.tolist())),
            intercept=float(intercept),
            local_fit_r2=float(r2),
        )

    def explain_batch(self, sequences, sample_ids=None) -> list[Explanation]:
        data, _ = check_sequence_array(sequences)
        ids = range(len(data)) if sample_ids is None else sample_ids
        return [self.explain(data[i], sequences, sample_id=sid) for i, sid in enumerate(ids)]


def feature_frequency(explanations, top_k: int) -> dict:
    """How often each feature lands in an explanation's top-k by |weight|."""
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    if not explanations:
        raise ValueError("feature_frequency: no explanations given")
    counts: dict[str, int] = {}
    for ex in explanations:
        for name in ex.top_features(top_k):
            counts[name] = counts.get(name, 0) + 1
    return dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))


def gradient_saliency(model, sequences) -> SaliencyReport:
    """Average |d sum(final hidden state) / d input| per time step and feature.

    Also counts, per sample, the feature whose time-averaged |gradient| is
    maximal.  Works for any encoder exposing ``hidden_graph``.
    """
    data, _ = check_sequence_array(sequences)
    steps, hidden = model.hidden_graph(sequences)
    ad.backward(ad.tsum(hidden))
    grads = np.stack([np.abs(s.grad) for s in steps], axis=1)  # (N, T, F)

    if hasattr(sequences, "feature_names"):
        names = list(sequences.feature_names)
    else:
        names = [f"f{j}" for j in range(data.shape[2])]

    per_sample = grads.mean(axis=1)  # (N, F) time-averaged
    counts: dict[str, int] = {}
    for i in range(per_sample.shape[0]):
        name = names[int(np.argmax(per_sample[i]))]
        counts[name] = counts.get(name, 0) + 1
    return SaliencyReport(
        avg_gradients=grads.mean(axis=0),
        max_feature_counts=dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))),
        feature_names=names,
    )
