"""Attractor-regularized NTF over the (array, frequency, frame) tensor.

Each basis k gets an allocation column z_k on the simplex describing how its
energy splits across arrays.  Fixed attractor vectors define the source
classes: the uniform vector 1/A marks the common (target) class, and each
one-hot vector marks interference local to one array.  A GKL pull of z_k
toward its nearest attractor is added to the factorization cost; bases whose
nearest attractor is the uniform one are kept as the target.

All updates are multiplicative majorization-minimization steps, so for fixed
regularization weight the cost never increases.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from spotform.beamform import BfOutputTensor
from spotform.gkl import EPS, gkl_divergence, gkl_elementwise
from spotform.signal import ComplexSpectrogram


@dataclass
class PropTensor:
    """Nonnegative magnitudes indexed (array, bin, frame)."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError("tensor must have axes (array, bin, frame)")
        if np.any(self.values < 0):
            raise ValueError("tensor must be nonnegative")

    @property
    def n_arrays(self) -> int:
        return self.values.shape[0]


@dataclass
class NtfModel:
    """Allocation Z (A x K), basis T (I x K), activations V (J x K).

    Z and T columns live on the probability simplex; scale lives in V.
    """

    Z: np.ndarray
    T: np.ndarray
    V: np.ndarray
    seed: int

    @property
    def K(self) -> int:
        return self.Z.shape[1]

    def compose(self) -> np.ndarray:
        """The rank-K approximation sum_k z (x) t (x) v, shape (A, I, J)."""
        return np.einsum("ak,ik,jk->aij", self.Z, self.T, self.V)


@dataclass
class AttractorSet:
    """Columns of P: p_0 = uniform (target class), p_b = one-hot array b-1."""

    P: np.ndarray  # (A, B) with B = A + 1

    @property
    def n_classes(self) -> int:
        return self.P.shape[1]


@dataclass
class Assignment:
    """Nearest attractor index per basis, and the derived target picks."""

    b: np.ndarray  # (K,) ints in [0, B)
    h: np.ndarray  # (K,) binary, 1 iff b == 0


@dataclass(frozen=True)
class RegularizationSchedule:
    """Regularization weight with a mu = 0 warmup phase."""

    mu: float
    warmup_iterations: int = 50
    total_iterations: int = 100

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if not 0 <= self.warmup_iterations <= self.total_iterations:
            raise ValueError("warmup must lie within the total iteration count")

    def weight_at(self, iteration: int) -> float:
        return 0.0 if iteration < self.warmup_iterations else self.mu


def build_prop_tensor(Y: BfOutputTensor) -> PropTensor:
    """|Y| with axes reordered to (array, bin, frame)."""
    return PropTensor(np.abs(np.transpose(Y.values, (2, 0, 1))))


def build_attractors(n_arrays: int) -> AttractorSet:
    if n_arrays < 1:
        raise ValueError("need at least one array")
    P = np.concatenate(
        [np.full((n_arrays, 1), 1.0 / n_arrays), np.eye(n_arrays)], axis=1
    )
    return AttractorSet(P)


def assign_attractors(Z: np.ndarray, attractors: AttractorSet) -> Assignment:
    """Nearest attractor per column of Z under GKL; ties go to the target."""
    # dist[b, k] = sum_a d(p_{a,b} | z_{a,k}); +inf where z = 0 under p > 0
    dist = gkl_elementwise(
        attractors.P.T[:, :, None], Z[None, :, :]
    ).sum(axis=1)
    b = np.argmin(dist, axis=0).astype(np.int64)
    return Assignment(b=b, h=(b == 0).astype(np.int64))


def evaluate_cost(
    model: NtfModel, C: PropTensor, attractors: AttractorSet, mu: float
) -> float:
    """Data divergence plus mu times the nearest-attractor pull."""
    cost = gkl_divergence(C.values, model.compose())
    if mu > 0:
        dist = gkl_elementwise(
            attractors.P.T[:, :, None], model.Z[None, :, :]
        ).sum(axis=1)
        cost += mu * float(np.sum(np.min(dist, axis=0)))
    return cost


def _check_finite(model: NtfModel, iteration: int | None) -> None:
    for M in (model.Z, model.T, model.V):
        if not np.all(np.isfinite(M)):
            where = "" if iteration is None else f" at iteration {iteration}"
            raise FloatingPointError(f"numerical divergence{where}")


def update_step(
    model: NtfModel,
    C: PropTensor,
    attractors: AttractorSet,
    mu: float,
    iteration: int | None = None,
) -> NtfModel:
    """One composite iteration: assign, update Z, update T, update V.

    The attractor assignment must happen before the Z update; Z and T are
    renormalized to the simplex afterwards with the scale folded into V,
    which leaves the composed tensor (and hence the cost) unchanged.
    """
    c = C.values
    Z, T, V = model.Z, model.T, model.V
    assign = assign_attractors(Z, attractors)
    P_hit = attractors.P[:, assign.b]  # (A, K)

    ratio = c / np.maximum(np.einsum("ak,ik,jk->aij", Z, T, V), EPS)
    num = Z * np.einsum("aij,ik,jk->ak", ratio, T, V) + mu * P_hit
    den = T.sum(axis=0) * V.sum(axis=0) + mu
    Z = num / np.maximum(den, EPS)[None, :]
    scale = np.maximum(Z.sum(axis=0), EPS)
    Z = Z / scale[None, :]
    V = V * scale[None, :]

    ratio = c / np.maximum(np.einsum("ak,ik,jk->aij", Z, T, V), EPS)
    T = T * np.einsum("aij,ak,jk->ik", ratio, Z, V)
    T = T / np.maximum(Z.sum(axis=0) * V.sum(axis=0), EPS)[None, :]
    scale = np.maximum(T.sum(axis=0), EPS)
    T = T / scale[None, :]
    V = V * scale[None, :]

    ratio = c / np.maximum(np.einsum("ak,ik,jk->aij", Z, T, V), EPS)
    V = V * np.einsum("aij,ak,ik->jk", ratio, Z, T)
    V = V / np.maximum(Z.sum(axis=0) * T.sum(axis=0), EPS)[None, :]

    out = NtfModel(Z=Z, T=T, V=V, seed=model.seed)
    _check_finite(out, iteration)
    return out


def fit_ntf(
    C: PropTensor, K: int, schedule: RegularizationSchedule, seed: int = 0
) -> tuple[NtfModel, Assignment, np.ndarray]:
    """Run the full schedule; returns model, final assignment, cost trace.

    The trace entry for each iteration uses the weight active at that
    iteration, so monotonicity holds within each constant-mu segment but not
    across the warmup boundary.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    A, I, J = C.values.shape
    attractors = build_attractors(A)
    rng = np.random.default_rng(seed)
    T = rng.uniform(0.0, 1.0, size=(I, K))
    V = rng.uniform(0.0, 1.0, size=(J, K))
    T /= T.sum(axis=0, keepdims=True)
    model = NtfModel(Z=np.full((A, K), 1.0 / A), T=T, V=V, seed=seed)
    trace = np.empty(schedule.total_iterations)
    for it in range(schedule.total_iterations):
        w = schedule.weight_at(it)
        model = update_step(model, C, attractors, w, iteration=it)
        trace[it] = evaluate_cost(model, C, attractors, w)
    return model, assign_attractors(model.Z, attractors), trace


def ntf_wiener(
    model: NtfModel, assignment: Assignment, Y: BfOutputTensor
) -> list[ComplexSpectrogram]:
    """Per-array Wiener reconstruction keeping the target-class bases."""
    I, J, A = Y.values.shape
    h = assignment.h.astype(np.float64)
    if np.all(h == 1.0):
        return [ComplexSpectrogram(Y.values[:, :, a].copy(), Y.config)
                for a in range(A)]
    if np.all(h == 0.0):
        warnings.warn("no basis was assigned to the target class; output is zero")
    num = np.einsum("ak,ik,jk->aij", (model.Z * h) ** 2, model.T**2, model.V**2)
    den = np.einsum("ak,ik,jk->aij", model.Z**2, model.T**2, model.V**2)
    gain = num / np.maximum(den, EPS)
    return [
        ComplexSpectrogram(gain[a] * Y.values[:, :, a], Y.config) for a in range(A)
    ]


def dump_model(
    directory,
    model: NtfModel,
    assignment: Assignment,
    cost: np.ndarray,
    schedule: RegularizationSchedule,
) -> None:
    """Write factors, assignments, and the cost trace for inspection."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "K": model.K,
        "mu": schedule.mu,
        "warmup_iterations": schedule.warmup_iterations,
        "total_iterations": schedule.total_iterations,
        "seed": model.seed,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1))
    np.savetxt(d / "Z.txt", model.Z)
    np.savetxt(d / "T.txt", model.T)
    np.savetxt(d / "V.txt", model.V)
    np.savetxt(d / "b.txt", assignment.b, fmt="%d")
    np.savetxt(d / "h.txt", assignment.h, fmt="%d")
    np.savetxt(d / "cost.txt", cost)
