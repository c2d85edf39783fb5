"""Evaluation protocols shared by the CLI and the test suite."""
from __future__ import annotations

from typing import Callable

import numpy as np

from haam import consensus as cons
from haam import evalkit, model
from haam.dataio import DatasetBundle, perturb_edges, perturb_features

PERTURBATIONS: dict[str, Callable[[DatasetBundle, float, int], DatasetBundle]] = {
    "mask_features": perturb_features,
    "drop_edges": perturb_edges,
}


def consensus_predict(state: model.ModelState, bundle: DatasetBundle, beta: float = 1.0,
                      iterations: int = 200):
    """Per-dimension probabilities, the consensus result and its labels."""
    probs = model.predict(state, bundle.features, bundle.graph)
    res = cons.proximal_consensus(probs, cons.ConsensusConfig(beta=beta, iterations=iterations))
    return probs, res, cons.predict_labels(res)


def score_split(state: model.ModelState, bundle: DatasetBundle, split: str = "test",
                beta: float = 1.0, iterations: int = 200) -> evalkit.MetricsReport:
    _, _, pred = consensus_predict(state, bundle, beta, iterations)
    return evalkit.score(pred, bundle.labels, bundle.splits[split], bundle.n_classes, split=split)


def robustness_drop(state: model.ModelState, bundle: DatasetBundle, kind: str, p: float,
                    trials: int = 5, seed: int = 0, beta: float = 1.0,
                    iterations: int = 200) -> dict:
    """Test-time perturbation protocol: clean score minus perturbed scores, in points.

    Trial ``t`` uses perturbation seed ``seed + t``; the model is never retrained.
    """
    perturb = PERTURBATIONS[kind]
    clean = score_split(state, bundle, beta=beta, iterations=iterations)
    reports = [score_split(state, perturb(bundle, p, seed + t), beta=beta, iterations=iterations)
               for t in range(trials)]
    out = {"kind": kind, "p": p, "trials": trials, "clean": clean.to_dict()}
    for metric in ("f1_micro", "f1_macro"):
        vals = np.array([100.0 * (getattr(clean, metric) - getattr(r, metric)) for r in reports])
        out[f"{metric}_drop_pp"] = {
            "values": vals.tolist(),
            "mean": float(vals.mean()),
            "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
        }
    return out
