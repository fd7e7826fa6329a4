"""Inertial-parameter adaptation on the manifold of pseudo-inertia matrices.

The estimate of each body is kept as its 4x4 pseudo-inertia ``L_hat`` and
evolves as ``dL_hat/dt = (1/gamma) L_hat S(eta) L_hat``.  ``S(eta)`` is the
symmetric matrix dual to the parameter vector under the trace pairing:
``tr(S(eta) f_map(delta)) == eta . delta`` for every ``delta``.
"""

from dataclasses import dataclass, replace

import numpy as np

from .body import f_inv, f_map

SPD_FLOOR = 1e-10

_SYM_INDEX = [(i, j) for i in range(4) for j in range(i, 4)]


def _build_dual_map():
    # basis of symmetric 4x4 matrices
    B = np.zeros((10, 4, 4))
    for k, (i, j) in enumerate(_SYM_INDEX):
        B[k, i, j] = B[k, j, i] = 1.0
    F = f_map(np.eye(10))  # F[j] = f_map(e_j)
    A = np.einsum("kab,jba->kj", B, F)  # A[k, j] = tr(B_k F_j)
    coeff = np.linalg.solve(A.T, np.eye(10))  # column j: coefficients of S(e_j)
    return np.einsum("kj,kab->jab", coeff, B)  # S(e_j)


_DUAL = _build_dual_map()


def eta(Yr, V_r, V):
    """Adaptation driving signal ``Yr^T (V_r - V)``."""
    d = np.asarray(V_r, dtype=float) - np.asarray(V, dtype=float)
    return np.einsum("...ij,...i->...j", np.asarray(Yr, dtype=float), d)


def s_of_eta(eta_vec):
    """Symmetric 4x4 matrix with ``tr(S f_map(delta)) == eta . delta``."""
    return np.tensordot(np.asarray(eta_vec, dtype=float), _DUAL, axes=([-1], [0]))


class NotPositiveDefiniteError(ValueError):
    pass


def _is_spd(L) -> bool:
    try:
        np.linalg.cholesky(L)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass(frozen=True)
class AdaptState:
    """Pseudo-inertia estimates ``(..., 4, 4)`` sharing one adaptation gain."""

    L_hat: np.ndarray
    gamma: float
    fallback_count: int = 0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("adaptation gain must be positive")

    @classmethod
    def initial(cls, n_bodies: int, gamma: float, scale: float = 0.5) -> "AdaptState":
        return cls(np.broadcast_to(scale * np.eye(4), (n_bodies, 4, 4)).copy(), gamma)

    @property
    def phi_hat(self) -> np.ndarray:
        return f_inv(self.L_hat, check=False)

    def min_eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.L_hat)[..., 0]


def _project_spd(L):
    L = 0.5 * (L + np.swapaxes(L, -1, -2))
    w, U = np.linalg.eigh(L)
    w = np.maximum(w, SPD_FLOOR)
    return (U * w[..., None, :]) @ np.swapaxes(U, -1, -2)


def nal_increment(L, eta_vec, gamma: float, dt: float):
    """One factored step ``L <- G^T L G`` with ``G = 1 + (dt / 2 gamma) S L``.

    Returns the new estimates and a mask of those that needed the SPD fallback.
    """
    S = s_of_eta(eta_vec)
    G = np.eye(4) + (dt / (2.0 * gamma)) * (S @ L)
    out = np.swapaxes(G, -1, -2) @ L @ G
    out = 0.5 * (out + np.swapaxes(out, -1, -2))
    fell_back = np.zeros(out.shape[:-2], dtype=bool)
    if _is_spd(out):
        return out, fell_back
    flat = out.reshape(-1, 4, 4)
    mask = fell_back.reshape(-1)
    for k in range(flat.shape[0]):
        if not _is_spd(flat[k]):
            flat[k] = _project_spd(flat[k])
            mask[k] = True
    return flat.reshape(out.shape), mask.reshape(fell_back.shape)


def nal_step(state: AdaptState, eta_vec, dt: float) -> AdaptState:
    if not _is_spd(state.L_hat):
        raise NotPositiveDefiniteError("estimate must be symmetric positive definite")
    L, fell_back = nal_increment(state.L_hat, eta_vec, state.gamma, dt)
    return replace(state, L_hat=L, fallback_count=state.fallback_count + int(fell_back.sum()))


def bregman_divergence(L_true, L_hat) -> float:
    """Log-det divergence ``log(|L_hat| / |L_true|) + tr(L_hat^-1 L_true) - 4``."""
    L_true = np.asarray(L_true, dtype=float)
    L_hat = np.asarray(L_hat, dtype=float)
    s1, ld_true = np.linalg.slogdet(L_true)
    s2, ld_hat = np.linalg.slogdet(L_hat)
    if s1 <= 0 or s2 <= 0 or not (_is_spd(L_true) and _is_spd(L_hat)):
        raise NotPositiveDefiniteError("divergence needs two positive definite matrices")
    return float(ld_hat - ld_true + np.trace(np.linalg.solve(L_hat, L_true)) - L_true.shape[-1])
