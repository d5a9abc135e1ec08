"""Closed-form linear-CCA fusion of explicit and implicit subspace outputs."""

import json
from dataclasses import dataclass

import numpy as np

from .errors import SingularMatrixError, ValidationError
from .numerics import DEFAULT_RIDGE, cca_solve
from .trainer import encode

MODALITIES = ("audio", "visual")


@dataclass
class FusionTransform:
    proj_audio: np.ndarray
    proj_visual: np.ndarray
    mean_audio: np.ndarray
    mean_visual: np.ndarray
    correlations: np.ndarray
    parts: tuple = ("ex", "im")

    @property
    def k_out(self):
        return self.proj_audio.shape[1]

    def transform(self, features, modality):
        if modality == "audio":
            return (features - self.mean_audio) @ self.proj_audio
        if modality == "visual":
            return (features - self.mean_visual) @ self.proj_visual
        raise ValidationError(f"unknown modality {modality!r}")

    def to_json(self):
        return json.dumps({
            "parts": list(self.parts),
            "k_out": self.k_out,
            "proj_audio": self.proj_audio.tolist(),
            "proj_visual": self.proj_visual.tolist(),
            "mean_audio": self.mean_audio.tolist(),
            "mean_visual": self.mean_visual.tolist(),
            "correlations": self.correlations.tolist(),
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        arr = {k: np.asarray(d[k], dtype=np.float64) for k in
               ("proj_audio", "proj_visual", "mean_audio", "mean_visual", "correlations")}
        return cls(**arr, parts=tuple(d.get("parts", ("ex", "im"))))


def branch_features(params, features, modality, parts=("ex", "im")):
    """Concatenated subspace outputs of one modality, in ``parts`` order."""
    key = {"audio": "a", "visual": "v"}.get(modality)
    if key is None:
        raise ValidationError(f"unknown modality {modality!r}")
    kw = {"audio": features} if key == "a" else {"visual": features}
    ex, im = encode(params, **kw)[key]
    pieces = {"ex": ex, "im": im}
    return np.hstack([pieces[p] for p in parts])


def fit_fusion(params, train_set, k_out=None, ridge=DEFAULT_RIDGE, parts=("ex", "im")):
    """Fit CCA on frozen branch outputs of the training set.

    ``parts`` selects which subspaces are concatenated; the default fuses both,
    ``("ex",)`` gives the explicit-only variant.
    """
    xa = branch_features(params, train_set.audio, "audio", parts)
    xv = branch_features(params, train_set.visual, "visual", parts)
    width = xa.shape[1]
    if k_out is None:
        k_out = params.k
    if not 1 <= k_out <= width:
        raise ValidationError(f"k_out must lie in [1, {width}], got {k_out}")
    if train_set.n <= width:
        raise ValidationError(f"fusion needs more than {width} training samples, got {train_set.n}")
    try:
        sol = cca_solve(xa, xv, k_out, ridge)
    except SingularMatrixError as e:
        raise SingularMatrixError(f"{e}; raise the fusion ridge", eigenvalue=e.eigenvalue) from e
    return FusionTransform(sol.wx, sol.wy, xa.mean(axis=0), xv.mean(axis=0),
                           sol.correlations, tuple(parts))


def embed(params, fusion, features, modality):
    """Final retrieval embedding of raw features for one modality."""
    return fusion.transform(branch_features(params, features, modality, fusion.parts), modality)


def implicit_embed(params, features, modality):
    """Implicit-space outputs used directly as the retrieval embedding."""
    return branch_features(params, features, modality, parts=("im",))
