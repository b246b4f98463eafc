"""Baseline common-component extraction: NMF on concatenated spectrograms.

The beamformer magnitude spectrograms of all arrays are concatenated along
time into one I x (A*J) matrix and factorized with GKL multiplicative
updates.  A basis is kept for the target when its activation exceeds a
threshold tau in EVERY array block; a Wiener filter built from the kept
bases reconstructs the target per array.

The iteration is deliberately structured as (component-scale step, T update,
V update): it is the single-array special case of the three-factor tensor
model in `spotform.ntf`, where the degenerate allocation update collapses to
a per-component rescaling of V.  Keeping that structure makes the two
modules agree exactly when A = 1.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from spotform.beamform import BfOutputTensor
from spotform.gkl import EPS, gkl_divergence
from spotform.signal import ComplexSpectrogram


@dataclass
class ConcatMatrix:
    """Concatenated magnitudes, (n_bins, n_arrays * n_frames), n = a*J + j."""

    values: np.ndarray
    n_arrays: int
    n_frames: int

    def __post_init__(self):
        if self.values.shape[1] != self.n_arrays * self.n_frames:
            raise ValueError("concat width must be n_arrays * n_frames")
        if np.any(self.values < 0):
            raise ValueError("concat matrix must be nonnegative")


@dataclass
class NmfModel:
    """Basis T (I x K, columns on the simplex) and activations V (N x K)."""

    T: np.ndarray
    V: np.ndarray
    seed: int
    cost: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def K(self) -> int:
        return self.T.shape[1]


@dataclass
class FrameMask:
    """Binary (n_frames, K) keep-mask over frames and bases."""

    values: np.ndarray


def build_concat(Y: BfOutputTensor) -> ConcatMatrix:
    """|Y| with array blocks laid side by side: column a*J + j."""
    I, J, A = Y.values.shape
    C = np.transpose(np.abs(Y.values), (0, 2, 1)).reshape(I, A * J)
    return ConcatMatrix(C, n_arrays=A, n_frames=J)


def update_step(model: NmfModel, C: ConcatMatrix) -> NmfModel:
    """One composite GKL iteration: scale step, T update, V update.

    Each stage is a multiplicative majorization-minimization step, so the
    divergence never increases across the composite.
    """
    c = C.values
    T, V = model.T, model.V

    # per-component scale (the collapsed allocation update)
    ratio = c / np.maximum(T @ V.T, EPS)
    num = np.einsum("in,ik,nk->k", ratio, T, V)
    den = np.maximum(T.sum(axis=0) * V.sum(axis=0), EPS)
    V = V * (num / den)[None, :]

    ratio = c / np.maximum(T @ V.T, EPS)
    T = T * (ratio @ V) / np.maximum(V.sum(axis=0), EPS)[None, :]
    scale = np.maximum(T.sum(axis=0), EPS)
    T = T / scale[None, :]
    V = V * scale[None, :]

    ratio = c / np.maximum(T @ V.T, EPS)
    V = V * (ratio.T @ T) / np.maximum(T.sum(axis=0), EPS)[None, :]
    return NmfModel(T=T, V=V, seed=model.seed, cost=model.cost)


def fit_nmf(C: ConcatMatrix, K: int, iterations: int = 100, seed: int = 0) -> NmfModel:
    """Factorize the concat matrix; returns the model with its cost trace."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    I, N = C.values.shape
    if K > min(I, N):
        warnings.warn(f"K={K} exceeds min(I, N)={min(I, N)}; proceeding")
    rng = np.random.default_rng(seed)
    T = rng.uniform(0.0, 1.0, size=(I, K))
    V = rng.uniform(0.0, 1.0, size=(N, K))
    T /= T.sum(axis=0, keepdims=True)
    model = NmfModel(T=T, V=V, seed=seed)
    trace = np.empty(iterations)
    for it in range(iterations):
        model = update_step(model, C)
        trace[it] = gkl_divergence(C.values, model.T @ model.V.T)
    model.cost = trace
    return model


def threshold_mask(model: NmfModel, n_arrays: int, n_frames: int,
                   tau: float) -> FrameMask:
    """Keep (frame, basis) cells whose activation exceeds tau in every array."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    K = model.K
    blocks = model.V.reshape(n_arrays, n_frames, K)
    return FrameMask(np.all(blocks > tau, axis=0).astype(np.int8))


def nmf_wiener(model: NmfModel, mask: FrameMask,
               Y: BfOutputTensor) -> list[ComplexSpectrogram]:
    """Per-array Wiener reconstruction from the masked model."""
    I, J, A = Y.values.shape
    H = mask.values.astype(np.float64)  # (J, K)
    if np.all(H == 1.0):
        return [ComplexSpectrogram(Y.values[:, :, a].copy(), Y.config)
                for a in range(A)]
    T2 = model.T**2
    out = []
    for a in range(A):
        Va = model.V[a * J : (a + 1) * J]  # (J, K)
        num = T2 @ ((H * Va) ** 2).T  # sum_k (t h v)^2 per (i, j)
        den = T2 @ (Va**2).T
        gain = num / np.maximum(den, EPS)
        out.append(ComplexSpectrogram(gain * Y.values[:, :, a], Y.config))
    return out


def dump_model(directory, model: NmfModel) -> None:
    """Write T and V as text matrices with a small JSON header file."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    header = {"I": model.T.shape[0], "N": model.V.shape[0],
              "K": model.K, "seed": model.seed}
    (d / "header.json").write_text(json.dumps(header, indent=1))
    np.savetxt(d / "T.txt", model.T, header=json.dumps(header))
    np.savetxt(d / "V.txt", model.V, header=json.dumps(header))
    if model.cost.size:
        np.savetxt(d / "cost.txt", model.cost)
