"""Sparse coding: threshold operators, ISTA/LISTA updates and the MM surrogate.

Everything here works on the l1-regularised least squares objective

    f(z) = 0.5 * ||y - D z||^2 + lam * ||z||_1

with dictionary ``D`` of shape ``(n_rows, n_atoms)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

__all__ = [
    "Dictionary",
    "SparseCode",
    "IstaConfig",
    "MajorizerError",
    "IstaResult",
    "soft_threshold",
    "hard_threshold",
    "relu_soft_identity_check",
    "spectral_norm",
    "mutual_coherence",
    "objective",
    "ista_matrices",
    "ista_step",
    "ista_solve",
    "surrogate_value",
    "lista_step",
    "reference_minimizer",
    "write_dictionary",
    "read_dictionary",
    "write_objective_trace",
]


class MajorizerError(ValueError):
    """Raised when ``c`` does not exceed the largest eigenvalue of D^T D."""


@dataclass(frozen=True)
class Dictionary:
    """Dense dictionary with atoms stored as columns.

    ``check_norms=False`` admits unnormalised atoms (used for scaling tests).
    """

    atoms: np.ndarray
    check_norms: bool = True

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=np.float64)
        if a.ndim != 2 or a.size == 0:
            raise ValueError(f"dictionary must be a non-empty matrix, got shape {a.shape}")
        if self.check_norms:
            norms = np.linalg.norm(a, axis=0)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                raise ValueError("dictionary atoms must have unit Euclidean norm")
        object.__setattr__(self, "atoms", a)

    @property
    def n_rows(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]

    @classmethod
    def from_matrix(cls, matrix, normalize: bool = True) -> "Dictionary":
        m = np.asarray(matrix, dtype=np.float64)
        if normalize:
            norms = np.linalg.norm(m, axis=0)
            if np.any(norms == 0):
                raise ValueError("cannot normalise a zero atom")
            m = m / norms
        return cls(m)

    @classmethod
    def gaussian(cls, n_rows: int, n_atoms: int, seed: int) -> "Dictionary":
        rng = np.random.default_rng(seed)
        return cls.from_matrix(rng.standard_normal((n_rows, n_atoms)))


@dataclass(frozen=True)
class SparseCode:
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))

    @property
    def support(self) -> frozenset:
        return frozenset(int(i) for i in np.flatnonzero(self.weights))

    @classmethod
    def zeros(cls, n_atoms: int) -> "SparseCode":
        return cls(np.zeros(n_atoms))


@dataclass(frozen=True)
class IstaConfig:
    """``c="auto"`` resolves to 1.01 x the power-iteration estimate of ||D^T D||."""

    lam: float
    c: Union[float, str] = "auto"
    max_iters: int = 1000
    tol: float = 1e-8

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.c != "auto" and not self.c > 0:
            raise ValueError("c must be positive or 'auto'")
        if self.max_iters < 1 or not self.tol > 0:
            raise ValueError("max_iters must be >= 1 and tol > 0")


@dataclass
class IstaResult:
    code: SparseCode
    iterations: int
    trace: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.code, self.iterations, self.trace))


def soft_threshold(x, beta: float):
    if beta < 0:
        raise ValueError("threshold must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - beta, 0.0)


def hard_threshold(x, beta: float):
    if beta < 0:
        raise ValueError("threshold must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) > beta, x, 0.0)


def relu_soft_identity_check(x, beta: float) -> bool:
    """True when S_beta(x) == ReLU(x - beta) - ReLU(-x - beta) within 1e-12."""
    x = np.asarray(x, dtype=np.float64)
    relu_form = np.maximum(x - beta, 0.0) - np.maximum(-x - beta, 0.0)
    soft = np.sign(x) * np.maximum(np.abs(x) - beta, 0.0)
    return bool(np.all(np.abs(relu_form - soft) <= 1e-12))


def spectral_norm(D: Dictionary, iters: int = 200, seed: int = 0) -> float:
    """Largest eigenvalue of D^T D by power iteration from a seeded start."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    A = D.atoms
    if not np.any(A):
        raise ValueError("spectral norm of a zero dictionary is undefined")
    v = np.random.default_rng(seed).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = A.T @ (A @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            # start vector in the null space; restart from a different draw
            v = np.random.default_rng(seed + 1).standard_normal(A.shape[1])
            v /= np.linalg.norm(v)
            continue
        v = w / nrm
    return float(v @ (A.T @ (A @ v)))


def mutual_coherence(D: Dictionary) -> float:
    A = D.atoms
    if A.shape[1] < 2:
        raise ValueError("mutual coherence needs at least two atoms")
    norms = np.linalg.norm(A, axis=0)
    G = np.abs(A.T @ A) / np.outer(norms, norms)
    np.fill_diagonal(G, 0.0)
    return float(G.max())


def _check_dims(y, D: Dictionary, z=None):
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (D.n_rows,):
        raise ValueError(f"signal length {y.shape} does not match dictionary rows {D.n_rows}")
    if z is not None and np.shape(z) != (D.n_atoms,):
        raise ValueError(f"code length {np.shape(z)} does not match dictionary atoms {D.n_atoms}")
    return y


def objective(z, y, D: Dictionary, lam: float) -> float:
    z = z.weights if isinstance(z, SparseCode) else np.asarray(z, dtype=np.float64)
    r = np.asarray(y) - D.atoms @ z
    return 0.5 * float(r @ r) + lam * float(np.sum(np.abs(z)))


def _resolve_c(D: Dictionary, cfg: IstaConfig) -> float:
    if cfg.c == "auto":
        return 1.01 * spectral_norm(D, iters=500)
    return float(cfg.c)


def ista_matrices(D: Dictionary, c: float):
    """``W = D^T / c`` and ``S = I - D^T D / c``, the ISTA update operators."""
    A = D.atoms
    W = A.T / c
    S = np.eye(A.shape[1]) - (A.T @ A) / c
    return W, S


def lista_step(z_prev, y, W, S, beta: float):
    """One learned-ISTA update ``S_beta(W y + S z_prev)``."""
    W = np.asarray(W, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    z_prev = np.asarray(z_prev, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if W.shape[1] != y.shape[0] or S.shape != (W.shape[0], W.shape[0]) or z_prev.shape != (S.shape[1],):
        raise ValueError(f"shape mismatch: W {W.shape}, S {S.shape}, y {y.shape}, z {z_prev.shape}")
    return soft_threshold(W @ y + S @ z_prev, beta)


def ista_step(z_prev: SparseCode, y, D: Dictionary, cfg: IstaConfig) -> SparseCode:
    """Single majorisation-minimisation update from ``z_prev``."""
    y = _check_dims(y, D, z_prev.weights)
    c = _resolve_c(D, cfg)
    W, S = ista_matrices(D, c)
    return SparseCode(lista_step(z_prev.weights, y, W, S, cfg.lam / c))


def ista_solve(y, D: Dictionary, cfg: IstaConfig) -> IstaResult:
    """Iterate ISTA from z = 0.

    Stops when ``||z_new - z|| / max(||z||, 1e-12) < tol`` or after
    ``max_iters`` updates.  ``trace[k]`` is the objective after ``k`` updates
    (``trace[0]`` is the objective at the zero start).
    """
    y = _check_dims(y, D)
    c = _resolve_c(D, cfg)
    alpha = spectral_norm(D, iters=500)
    if not c > alpha:
        raise MajorizerError(f"c = {c:.6g} must exceed ||D^T D||_2 = {alpha:.6g}")
    W, S = ista_matrices(D, c)
    beta = cfg.lam / c
    Wy = W @ y
    z = np.zeros(D.n_atoms)
    trace = [objective(z, y, D, cfg.lam)]
    it = 0
    for it in range(1, cfg.max_iters + 1):
        z_new = soft_threshold(Wy + S @ z, beta)
        change = np.linalg.norm(z_new - z) / max(np.linalg.norm(z), 1e-12)
        z = z_new
        trace.append(objective(z, y, D, cfg.lam))
        if change < cfg.tol:
            break
    return IstaResult(SparseCode(z), it, trace)


def surrogate_value(z: SparseCode, z_anchor: SparseCode, y, D: Dictionary, cfg: IstaConfig) -> float:
    """Q(z, z_anchor) = f(z) + c/2 ||z - z_anchor||^2 - 1/2 ||D z - D z_anchor||^2."""
    y = _check_dims(y, D, z.weights)
    _check_dims(y, D, z_anchor.weights)
    c = _resolve_c(D, cfg)
    dz = z.weights - z_anchor.weights
    Ddz = D.atoms @ dz
    return objective(z, y, D, cfg.lam) + 0.5 * c * float(dz @ dz) - 0.5 * float(Ddz @ Ddz)


def _enumerate_minimizer(y, A, lam, k_max):
    M = A.shape[1]
    best, best_f = np.zeros(M), 0.5 * float(y @ y)
    for k in range(1, k_max + 1):
        supports = np.array(list(itertools.combinations(range(M), k)))
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=k)))
        AS = A[:, supports].transpose(1, 0, 2)  # (C, N, k)
        G = AS.transpose(0, 2, 1) @ AS
        full_rank = np.linalg.matrix_rank(G) == k
        AS, G, supports = AS[full_rank], G[full_rank], supports[full_rank]
        if not len(supports):
            continue
        rhs = (AS.transpose(0, 2, 1) @ y)[:, None, :] - lam * signs[None]  # (C, P, k)
        Z = np.linalg.solve(G[:, None], rhs[..., None])[..., 0]
        ok = np.all(np.sign(Z) == signs[None], axis=2)
        resid = np.einsum("cnk,cpk->cpn", AS, Z) - y
        f = 0.5 * np.sum(resid**2, axis=2) + lam * np.sum(np.abs(Z), axis=2)
        f[~ok] = np.inf
        c, q = np.unravel_index(np.argmin(f), f.shape)
        if f[c, q] < best_f:
            best = np.zeros(M)
            best[supports[c]] = Z[c, q]
            best_f = f[c, q]
    return best


def reference_minimizer(y, D: Dictionary, lam: float, max_candidates: int = 200_000) -> np.ndarray:
    """Independent minimiser of f that shares no code with ISTA.

    Small problems (at most ``max_candidates`` support/sign patterns with
    ``|S| <= N``) are solved exactly: every pattern's optimality equations
    ``D_S^T (D_S z_S - y) = -lam s`` are solved and the lowest objective
    among sign-consistent solutions is returned.  Otherwise z = u - v with
    u, v >= 0 is handed to SciPy's L-BFGS-B and polished on its support.
    """
    from scipy.optimize import minimize

    y = _check_dims(y, D)
    A = D.atoms
    M = A.shape[1]
    k_max = min(D.n_rows, M)
    if sum(math.comb(M, k) * 2**k for k in range(1, k_max + 1)) <= max_candidates:
        return _enumerate_minimizer(y, A, lam, k_max)

    def fun(x):
        u, v = x[:M], x[M:]
        r = A @ (u - v) - y
        g = A.T @ r
        val = 0.5 * r @ r + lam * (u.sum() + v.sum())
        return val, np.concatenate([g + lam, -g + lam])

    res = minimize(
        fun,
        np.zeros(2 * M),
        jac=True,
        method="L-BFGS-B",
        bounds=[(0.0, None)] * (2 * M),
        options={"maxiter": 100000, "maxfun": 1_000_000, "ftol": 0.0, "gtol": 1e-12, "maxcor": 50},
    )
    best = res.x[:M] - res.x[M:]
    best_f = objective(best, y, D, lam)
    scale = np.max(np.abs(best), initial=0.0)
    for rel in (1e-10, 1e-8, 1e-6, 1e-4):
        S = np.flatnonzero(np.abs(best) > rel * scale)
        if S.size == 0:
            continue
        sign = np.sign(best[S])
        AS = A[:, S]
        zS = np.linalg.lstsq(AS.T @ AS, AS.T @ y - lam * sign, rcond=None)[0]
        if np.any(np.sign(zS) != sign):
            continue
        cand = np.zeros(M)
        cand[S] = zS
        f = objective(cand, y, D, lam)
        if f < best_f:
            best, best_f = cand, f
    return best


def write_dictionary(D: Dictionary, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{D.n_rows} {D.n_atoms}\n")
        for row in D.atoms:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def read_dictionary(path, check_norms: bool = True) -> Dictionary:
    with open(path) as fh:
        rows, atoms = (int(t) for t in fh.readline().split())
        values = np.array(fh.read().split(), dtype=np.float64)
    if values.size != rows * atoms:
        raise ValueError(f"{path}: expected {rows * atoms} values, found {values.size}")
    return Dictionary(values.reshape(rows, atoms), check_norms=check_norms)


def write_objective_trace(trace, path) -> None:
    with open(path, "w") as fh:
        fh.write("iter,objective\n")
        for k, v in enumerate(trace):
            fh.write(f"{k},{v:.17g}\n")
