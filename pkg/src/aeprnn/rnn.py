"""ReLU RNN cell with a fully connected read-out, trained by BPTT + Adam.

Two forward paths share the same parameters:

``plain-rnn``
    ``z_t = relu(W_zy^T y_t + W_zz^T z_{t-1} + b)``
``rfn-rnn``
    ``q_t = relu(W_zy^T y~_t + W_zz^T z_{t-1} + b)``, ``r_t = c1 W_zy^T y_t``,
    ``z_t = q_t * r_t`` where ``y~`` is the RFN-normalised window.

Only the last state feeds the read-out: ``x = W_fc^T z_T + b_fc``.
Batched arrays are laid out as ``(batch, time, features)``; a row vector
times a matrix (``z @ W``) is the transposed-matrix product of the formulas.
"""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imaging import Image
from .patches import PatchDataset, PatchGeometry, build_dataset
from .rfn import RfnConfig, normalize_array

__all__ = [
    "MODES",
    "RnnParams",
    "TrainConfig",
    "TrainingDiverged",
    "NumericalError",
    "Adam",
    "rnn_cell",
    "rnn_forward",
    "rfn_rnn_forward",
    "predict",
    "bptt_gradients",
    "clip_global_norm",
    "train",
    "prepare_dataset",
    "prepare_inputs",
    "infer_image",
    "latent_sparsity",
    "write_weights",
    "read_weights",
    "WEIGHT_MAGIC",
]

MODES = ("plain-rnn", "rfn-rnn")
WEIGHT_MAGIC = b"RNN1"
_PARAM_NAMES = ("w_zy", "w_zz", "b", "w_fc", "b_fc")


class NumericalError(ArithmeticError):
    pass


class TrainingDiverged(NumericalError):
    """Loss became non-finite; ``params``/``log`` hold the last finite epoch."""

    def __init__(self, message, params, log):
        super().__init__(message)
        self.params = params
        self.log = log


@dataclass
class RnnParams:
    w_zy: np.ndarray  # (N, n_n)
    w_zz: np.ndarray  # (n_n, n_n)
    b: np.ndarray  # (n_n,)
    w_fc: np.ndarray  # (n_n, P)
    b_fc: np.ndarray  # (P,)

    def __post_init__(self):
        for name in _PARAM_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n_in, n_h = self.w_zy.shape
        n_out = self.w_fc.shape[1] if self.w_fc.ndim == 2 else -1
        if (
            self.w_zz.shape != (n_h, n_h)
            or self.b.shape != (n_h,)
            or self.w_fc.shape != (n_h, n_out)
            or self.b_fc.shape != (n_out,)
        ):
            raise ValueError("inconsistent RNN parameter shapes: " + ", ".join(
                f"{k}={getattr(self, k).shape}" for k in _PARAM_NAMES))

    @property
    def n_in(self) -> int:
        return self.w_zy.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.w_zy.shape[1]

    @property
    def n_out(self) -> int:
        return self.w_fc.shape[1]

    def tensors(self) -> list:
        return [getattr(self, k) for k in _PARAM_NAMES]

    def copy(self) -> "RnnParams":
        return RnnParams(*(t.copy() for t in self.tensors()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors())

    @classmethod
    def zeros(cls, n_in: int, n_hidden: int, n_out: int = 1) -> "RnnParams":
        return cls(np.zeros((n_in, n_hidden)), np.zeros((n_hidden, n_hidden)), np.zeros(n_hidden),
                   np.zeros((n_hidden, n_out)), np.zeros(n_out))

    @classmethod
    def glorot(cls, n_in: int, n_hidden: int, n_out: int = 1, rng=None) -> "RnnParams":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(rng)

        def draw(fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=(fan_in, fan_out))

        return cls(draw(n_in, n_hidden), draw(n_hidden, n_hidden), np.zeros(n_hidden),
                   draw(n_hidden, n_out), np.zeros(n_out))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 40
    batch_size: int = 64
    seed: int = 0
    grad_clip: float | None = 5.0
    target_train_loss: float = 0.0
    mode: str = "plain-rnn"
    n_hidden: int = 1000

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError("grad_clip must be positive or None")
        if self.target_train_loss < 0:
            raise ValueError("target_train_loss must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_hidden < 1:
            raise ValueError("n_hidden must be >= 1")


# ---------------------------------------------------------------------------
# forward / backward


def _check_inputs(Y, params: RnnParams):
    if Y.ndim != 3 or Y.shape[1] < 1 or Y.shape[2] != params.n_in:
        raise ValueError(f"inputs of shape {Y.shape} do not match N = {params.n_in}")


def _forward(Y, Yn, params: RnnParams, mode: str, c1: float):
    """Batched forward pass keeping what the backward pass needs.

    ``Y`` holds the raw windows and ``Yn`` the RFN-normalised ones (only read
    in rfn mode).  Returns ``(pred, cache)``.
    """
    _check_inputs(Y, params)
    B, T, _ = Y.shape
    XW = Y @ params.w_zy  # (B, T, n)
    if mode == "rfn-rnn":
        if Yn is None or Yn.shape != Y.shape:
            raise ValueError("rfn-rnn needs normalised inputs with the same shape as the raw inputs")
        QW = Yn @ params.w_zy
        R = c1 * XW
    z = np.zeros((B, params.n_hidden))
    states, preacts, gates = [z], [], []
    for t in range(T):
        if mode == "plain-rnn":
            a = XW[:, t] + z @ params.w_zz + params.b
            z = np.maximum(a, 0.0)
        else:
            a = QW[:, t] + z @ params.w_zz + params.b
            q = np.maximum(a, 0.0)
            gates.append(q)
            z = q * R[:, t]
        preacts.append(a)
        states.append(z)
    pred = z @ params.w_fc + params.b_fc
    cache = {"states": states, "preacts": preacts, "gates": gates, "R": R if mode == "rfn-rnn" else None}
    return pred, cache


def rnn_cell(y, z_prev, params: RnnParams):
    """One plain step ``relu(W_zy^T y + W_zz^T z_prev + b)``."""
    return np.maximum(np.asarray(y) @ params.w_zy + np.asarray(z_prev) @ params.w_zz + params.b, 0.0)


def rnn_forward(inputs, params: RnnParams):
    """Plain forward pass for one window of shape ``(L_t, N)``.

    Returns ``(states, prediction)`` with states of shape ``(L_t, n_n)``
    (``z_1 .. z_L``) and the scalar prediction when ``P == 1``.
    """
    Y = np.asarray(inputs, dtype=np.float64)[None]
    pred, cache = _forward(Y, None, params, "plain-rnn", 1.0)
    states = np.stack([s[0] for s in cache["states"][1:]])
    out = pred[0]
    return states, float(out[0]) if out.size == 1 else out


def rfn_rnn_forward(raw_inputs, rfn_inputs, params: RnnParams, cfg: RfnConfig):
    raw = np.asarray(raw_inputs, dtype=np.float64)
    nrm = np.asarray(rfn_inputs, dtype=np.float64)
    if raw.shape != nrm.shape:
        raise ValueError(f"sequence mismatch: raw {raw.shape} vs normalised {nrm.shape}")
    pred, cache = _forward(raw[None], nrm[None], params, "rfn-rnn", cfg.c1)
    states = np.stack([s[0] for s in cache["states"][1:]])
    out = pred[0]
    return states, float(out[0]) if out.size == 1 else out


def predict(Y, Yn, params: RnnParams, mode: str = "plain-rnn", c1: float = 1.0) -> np.ndarray:
    """Batched predictions, shape ``(B, P)``."""
    pred, _ = _forward(Y, Yn, params, mode, c1)
    return pred


def _batch_arrays(batch):
    ds = PatchDataset.from_samples(batch)
    return ds.inputs, ds.rfn_inputs, ds.targets


def _bptt(Y, Yn, targets, params: RnnParams, mode: str, c1: float):
    pred, cache = _forward(Y, Yn, params, mode, c1)
    B, T, N = Y.shape
    tgt = targets.reshape(B, -1)
    err = pred - tgt
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss")
    states, preacts, gates, R = cache["states"], cache["preacts"], cache["gates"], cache["R"]

    dpred = 2.0 * err / err.size
    g_wfc = states[-1].T @ dpred
    g_bfc = dpred.sum(axis=0)
    dz = dpred @ params.w_fc.T
    dA = np.empty((B, T, params.n_hidden))
    dR = np.empty((B, T, params.n_hidden)) if mode == "rfn-rnn" else None
    g_wzz = np.zeros_like(params.w_zz)
    for t in range(T - 1, -1, -1):
        if mode == "plain-rnn":
            da = dz * (preacts[t] > 0)
        else:
            dR[:, t] = dz * gates[t]
            da = (dz * R[:, t]) * (preacts[t] > 0)
        dA[:, t] = da
        if t > 0:
            g_wzz += states[t].T @ da
            dz = da @ params.w_zz.T
    dA2 = dA.reshape(B * T, -1)
    g_b = dA2.sum(axis=0)
    if mode == "plain-rnn":
        g_wzy = Y.reshape(B * T, N).T @ dA2
    else:
        g_wzy = Yn.reshape(B * T, N).T @ dA2 + c1 * (Y.reshape(B * T, N).T @ dR.reshape(B * T, -1))
    return RnnParams(g_wzy, g_wzz, g_b, g_wfc, g_bfc), loss


def bptt_gradients(batch, params: RnnParams, mode: str = "plain-rnn", cfg: RfnConfig | None = None):
    """Exact gradients of the batch mean squared error.

    ``batch`` is a :class:`PatchDataset` or a sequence of samples.  Returns
    ``(gradients, loss)`` where ``gradients`` is an :class:`RnnParams`.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    Y, Yn, targets = _batch_arrays(batch)
    if len(targets) == 0:
        raise ValueError("empty batch")
    c1 = (cfg or RfnConfig()).c1
    return _bptt(Y, Yn, targets, params, mode, c1)


def clip_global_norm(grads: RnnParams, max_norm: float | None) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.tensors())))
    if max_norm is not None and total > max_norm:
        scale = max_norm / total
        for g in grads.tensors():
            g *= scale
    return total


class Adam:
    def __init__(self, params: RnnParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params.tensors()]
        self.v = [np.zeros_like(p) for p in params.tensors()]
        self.t = 0

    def step(self, params: RnnParams, grads: RnnParams) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params.tensors(), grads.tensors(), self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# training / inference


def _seed_streams(seed: int):
    # spawn order: [0] weight init, [1] mini-batch shuffling
    init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(shuffle_ss)


def train(
    dataset,
    cfg: TrainConfig,
    geom: PatchGeometry,
    rfn: RfnConfig | None = None,
    init: RnnParams | None = None,
):
    """Fit an :class:`RnnParams` to ``dataset`` with mini-batch Adam.

    The epoch loss is the sample-weighted mean of the mini-batch losses seen
    during that epoch.  Training stops once it is at or below
    ``cfg.target_train_loss`` or after ``cfg.max_epochs`` epochs.

    Returns ``(params, log)`` where ``log`` is a list of ``(epoch, loss)``.
    """
    ds = PatchDataset.from_samples(dataset)
    if len(ds) == 0:
        raise ValueError("empty dataset")
    if ds.inputs.shape[1:] != (geom.l_t, geom.n):
        raise ValueError(f"dataset windows {ds.inputs.shape[1:]} do not match geometry {(geom.l_t, geom.n)}")
    if cfg.mode == "rfn-rnn" and ds.rfn_inputs is None:
        raise ValueError("rfn-rnn training needs a dataset built with rfn inputs")
    c1 = (rfn or RfnConfig()).c1
    init_rng, shuffle_rng = _seed_streams(cfg.seed)
    params = init.copy() if init is not None else RnnParams.glorot(geom.n, cfg.n_hidden, 1, init_rng)
    opt = Adam(params, lr=cfg.learning_rate)
    log = []
    m = len(ds)
    bs = min(cfg.batch_size, m)
    last_good = params.copy()
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(m)
        total = 0.0
        try:
            # overflow surfaces as a non-finite loss, handled below
            with np.errstate(over="ignore", invalid="ignore"):
                for start in range(0, m, bs):
                    idx = order[start:start + bs]
                    Yn = None if ds.rfn_inputs is None else ds.rfn_inputs[idx]
                    grads, loss = _bptt(ds.inputs[idx], Yn, ds.targets[idx], params, cfg.mode, c1)
                    clip_global_norm(grads, cfg.grad_clip)
                    opt.step(params, grads)
                    total += loss * len(idx)
        except NumericalError as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}", last_good, log) from exc
        epoch_loss = total / m
        if not np.isfinite(epoch_loss) or not params.is_finite():
            raise TrainingDiverged(f"epoch {epoch}: non-finite loss", last_good, log)
        log.append((epoch, epoch_loss))
        last_good = params.copy()
        if epoch_loss <= cfg.target_train_loss:
            break
    return params, log


def prepare_inputs(degraded: Image, mode: str, rfn: RfnConfig | None = None):
    """Scale to ``[0, 1]`` and, in rfn mode, compute the normalised image."""
    s = degraded.scaled()
    if mode == "rfn-rnn":
        rfn = rfn or RfnConfig()
        s_norm, _ = normalize_array(s, rfn.kernel(), rfn.tau)
        return s, s_norm
    return s, None


def prepare_dataset(degraded: Image, clean: Image, geom: PatchGeometry, mode: str,
                    rfn: RfnConfig | None = None) -> PatchDataset:
    """Training set on ``[0, 1]``-scaled intensities for the given mode."""
    s, s_norm = prepare_inputs(degraded, mode, rfn)
    return build_dataset(s, clean.data / clean.peak, geom, s_norm)


def infer_image(
    degraded: Image,
    params: RnnParams,
    geom: PatchGeometry,
    mode: str = "plain-rnn",
    cfg: RfnConfig | None = None,
    threads: int = 1,
    rows_per_chunk: int = 16,
) -> Image:
    """Predict every pixel of ``degraded``; output is back at the input's peak.

    Work is split in fixed row blocks independent of ``threads`` so the
    result does not depend on the worker count.
    """
    if params.n_in != geom.n:
        raise ValueError(f"weights expect N = {params.n_in} but geometry gives N = {geom.n}")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    cfg = cfg or RfnConfig()
    s, s_norm = prepare_inputs(degraded, mode, cfg)
    pad = ((geom.l_t - 1, 0), (geom.n_left, geom.n_right))
    win = (geom.l_t, geom.n)
    views = sliding_window_view(np.pad(s, pad, mode="edge"), win)
    nviews = None if s_norm is None else sliding_window_view(np.pad(s_norm, pad, mode="edge"), win)
    h, w = s.shape
    out = np.empty((h, w))

    def run(r0):
        r1 = min(r0 + rows_per_chunk, h)
        Y = views[r0:r1].reshape(-1, *win)
        Yn = None if nviews is None else nviews[r0:r1].reshape(-1, *win)
        out[r0:r1] = predict(Y, Yn, params, mode, cfg.c1)[:, 0].reshape(r1 - r0, w)

    starts = range(0, h, rows_per_chunk)
    if threads <= 1:
        for r0 in starts:
            run(r0)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, starts))
    return Image(out * degraded.peak, degraded.peak)


def latent_sparsity(states) -> float:
    """Fraction of exactly-zero entries across all hidden states."""
    arr = np.asarray(states)
    if arr.size == 0:
        raise ValueError("no states given")
    return float(np.mean(arr == 0.0))


# ---------------------------------------------------------------------------
# weight files
#
# layout: b"RNN1", then little-endian int64 N, n_n, P, L_t, mode flag
# (0 = plain-rnn, 1 = rfn-rnn), float64 c1, float64 tau, then w_zy, w_zz,
# b, w_fc, b_fc as row-major little-endian float64.


def write_weights(path, params: RnnParams, geom: PatchGeometry, mode: str, rfn: RfnConfig | None = None) -> None:
    rfn = rfn or RfnConfig()
    header = WEIGHT_MAGIC + struct.pack(
        "<qqqqqdd", params.n_in, params.n_hidden, params.n_out, geom.l_t, MODES.index(mode), rfn.c1, rfn.tau
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for t in params.tensors():
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def read_weights(path):
    """Return ``(params, header)``; header keys: N, n_n, P, l_t, mode, c1, tau."""
    raw = Path(path).read_bytes()
    if raw[:4] != WEIGHT_MAGIC:
        raise ValueError(f"{path}: not an RNN1 weight file")
    hsize = struct.calcsize("<qqqqqdd")
    N, n_n, P, l_t, flag, c1, tau = struct.unpack("<qqqqqdd", raw[4:4 + hsize])
    if flag not in (0, 1):
        raise ValueError(f"{path}: bad mode flag {flag}")
    shapes = [(N, n_n), (n_n, n_n), (n_n,), (n_n, P), (P,)]
    offset = 4 + hsize
    tensors = []
    for shp in shapes:
        count = int(np.prod(shp))
        tensors.append(np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shp).astype(np.float64))
        offset += 8 * count
    if offset != len(raw):
        raise ValueError(f"{path}: trailing or missing bytes in weight file")
    header = {"N": N, "n_n": n_n, "P": P, "l_t": l_t, "mode": MODES[flag], "c1": c1, "tau": tau}
    return RnnParams(*tensors), header
