"""Oracle MVDR beamforming per array and delay-and-sum fusion.

Steering vectors and noise covariances are computed from the true impulse
responses (oracle values), not estimated from data.  The steering vector is
the target's relative transfer function with the reference-mic entry fixed to
1, so a distortionless beamformer reproduces the target image at mic 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.signal

from spotform.roomsim import ObservationTensor, RirSet, Scene
from spotform.signal import StftConfig, Waveform, frame_count, stft

DIAGONAL_LOADING = 1e-3
_COND_LIMIT = 1e12


@dataclass
class SteeringSet:
    """Target relative transfer functions, (n_arrays, n_bins, n_mics)."""

    values: np.ndarray
    config: StftConfig


@dataclass
class NoiseCovarianceSet:
    """Loaded interference covariances, (n_arrays, n_bins, n_mics, n_mics).

    `loading` records the diagonal load actually added per (array, bin).
    """

    values: np.ndarray
    loading: np.ndarray


@dataclass
class BfOutputTensor:
    """Beamformer outputs stacked over arrays: (n_bins, n_frames, n_arrays)."""

    values: np.ndarray
    config: StftConfig
    sample_rate: int
    n_samples: int

    @property
    def n_arrays(self) -> int:
        return self.values.shape[2]


def _folded_rfft(h: np.ndarray, nfft: int) -> np.ndarray:
    # time-alias to nfft so the DFT samples the true DTFT at bin frequencies
    pad = (-len(h)) % nfft
    return np.fft.rfft(np.pad(h, (0, pad)).reshape(-1, nfft).sum(axis=0))


def oracle_quantities(
    rirs: RirSet, scene: Scene, cfg: StftConfig
) -> tuple[SteeringSet, NoiseCovarianceSet]:
    """Steering vectors and loaded noise covariances from the true RIRs."""
    if cfg.sample_rate != rirs.sample_rate:
        raise ValueError("STFT config rate does not match the RIRs")
    A, M, S, _ = rirs.taps.shape
    nfft = cfg.window_length
    I = cfg.n_bins
    H = np.empty((A, M, S, I), dtype=np.complex128)
    for a in range(A):
        for m in range(M):
            for s in range(S):
                H[a, m, s] = _folded_rfft(rirs.taps[a, m, s], nfft)
    tgt = scene.target_index
    d = np.transpose(H[:, :, tgt, :], (0, 2, 1)).copy()  # (A, I, M)
    ref = d[:, :, 0]
    tiny = np.abs(ref) < 1e-12 * np.abs(d).max(axis=2)
    scale = np.where(tiny, np.linalg.norm(d, axis=2), ref)
    d /= scale[:, :, None]
    R = np.zeros((A, I, M, M), dtype=np.complex128)
    for s in range(S):
        if s == tgt:
            continue
        g = np.transpose(H[:, :, s, :], (0, 2, 1))  # (A, I, M)
        R += g[:, :, :, None] * g[:, :, None, :].conj()
    tr = np.real(np.trace(R, axis1=2, axis2=3))
    load = np.where(tr > 0, DIAGONAL_LOADING * tr / M, DIAGONAL_LOADING)
    R += load[:, :, None, None] * np.eye(M)[None, None]
    return SteeringSet(d, cfg), NoiseCovarianceSet(R, load)


def mvdr_weights(d: SteeringSet, R: NoiseCovarianceSet) -> np.ndarray:
    """Per-(array, bin) MVDR weights w = R^-1 d / (d^H R^-1 d)."""
    if np.max(np.linalg.cond(R.values)) > _COND_LIMIT:
        raise ValueError("ill-conditioned covariance")
    sol = np.linalg.solve(R.values, d.values[..., None])[..., 0]
    denom = np.real(np.sum(d.values.conj() * sol, axis=-1))
    return sol / denom[..., None]


def mvdr(
    X: ObservationTensor,
    d: SteeringSet,
    R: NoiseCovarianceSet,
    source: int | None = None,
) -> BfOutputTensor:
    """Beamform every array's mics down to one spectrogram per array.

    With `source` set, the beamformer is applied to that source's image
    signals instead of the mixture (useful for oracle references).
    """
    w = mvdr_weights(d, R)
    sig = X.mixture if source is None else X.images[source]
    A, M, L = sig.shape
    if w.shape[0] != A or w.shape[2] != M:
        raise ValueError("weights do not match the observation dims")
    cfg = d.config
    J = frame_count(L, cfg)
    Y = np.zeros((cfg.n_bins, J, A), dtype=np.complex128)
    for a in range(A):
        for m in range(M):
            S_am = stft(Waveform(sig[a, m], X.sample_rate), cfg).values
            Y[:, :, a] += w[a, :, m].conj()[:, None] * S_am
    return BfOutputTensor(Y, cfg, X.sample_rate, L)


def delay_and_sum(estimates: list[Waveform], max_lag: int | None = None) -> Waveform:
    """Align estimates to the first one by cross-correlation, then average.

    All-zero estimates cannot be aligned; they stay in the average as zeros
    and a warning is emitted.
    """
    if not estimates:
        raise ValueError("delay_and_sum needs at least one estimate")
    rate = estimates[0].sample_rate
    if any(e.sample_rate != rate for e in estimates):
        raise ValueError("estimates must share one sample rate")
    n = max(len(e) for e in estimates)
    ref = np.pad(estimates[0].samples, (0, n - len(estimates[0])))
    acc = ref.copy()
    for est in estimates[1:]:
        x = np.pad(est.samples, (0, n - len(est)))
        if not np.any(x):
            warnings.warn("all-zero estimate contributes nothing to the fusion")
            continue
        corr = scipy.signal.correlate(x, ref, mode="full")
        lags = scipy.signal.correlation_lags(n, n, mode="full")
        if max_lag is not None:
            keep = np.abs(lags) <= max_lag
            corr, lags = corr[keep], lags[keep]
        lag = int(lags[np.argmax(corr)])
        shifted = np.zeros(n)
        if lag >= 0:
            shifted[: n - lag] = x[lag:]
        else:
            shifted[-lag:] = x[: n + lag]
        acc += shifted
    return Waveform(acc / len(estimates), rate)


def dump_weights(path, weights: np.ndarray) -> None:
    """Write weights as raw little-endian float64, re/im interleaved.

    Layout: for a in arrays, for i in bins, for m in mics: re(w), im(w).
    A 3-int64 header (A, I, M) precedes the data.
    """
    w = np.ascontiguousarray(weights, dtype=np.complex128)
    with open(path, "wb") as f:
        np.asarray(w.shape, dtype="<i8").tofile(f)
        inter = np.empty(w.size * 2, dtype="<f8")
        inter[0::2] = w.real.ravel()
        inter[1::2] = w.imag.ravel()
        inter.tofile(f)


def load_weights(path) -> np.ndarray:
    with open(path, "rb") as f:
        shape = tuple(np.fromfile(f, dtype="<i8", count=3))
        inter = np.fromfile(f, dtype="<f8")
    return (inter[0::2] + 1j * inter[1::2]).reshape(shape)
