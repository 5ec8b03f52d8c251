"""Cosine similarity matrix and the bidirectional InfoNCE objective.

Convention: ``S[i, j] = sim(t_i, e_j)`` with text rows and ECG columns. The
ECG-to-text loss is a row-wise softmax cross entropy against the diagonal; the
text-to-ECG loss is the same computation over columns (i.e. ``S`` transposed).
The combined objective averages the two directions per pair, then over the
batch. All softmaxes subtract the row max, so similarity magnitudes far beyond
1/tau stay finite.

Every function accepts numpy arrays or torch tensors and differentiates
cleanly when handed tensors that require grad; the frozen text side simply
enters as plain values.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .errors import DataError, NumericError

TAU_INIT = 0.07
TAU_MIN = 1e-3
TAU_MAX = 100.0


class Temperature:
    """Softmax temperature stored as log(tau) so tau > 0 by construction.

    The scalar trains alongside the model unless ``frozen``; callers clamp it
    into [TAU_MIN, TAU_MAX] after each optimizer update via ``clamp_``.
    """

    def __init__(self, tau: float = TAU_INIT, frozen: bool = False):
        if not (tau > 0) or not math.isfinite(tau):
            raise DataError(f"temperature must be positive and finite, got {tau}")
        self.log_tau = torch.tensor(math.log(tau), dtype=torch.float32,
                                    requires_grad=not frozen)
        self.frozen = frozen

    @property
    def tau(self) -> float:
        return float(torch.exp(self.log_tau.detach()))

    def tau_tensor(self) -> torch.Tensor:
        return torch.exp(self.log_tau)

    def clamp_(self) -> None:
        with torch.no_grad():
            self.log_tau.clamp_(math.log(TAU_MIN), math.log(TAU_MAX))


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, np.ndarray) and not x.flags.writeable:
        x = x.copy()
    t = torch.as_tensor(x)
    if not t.is_floating_point():
        t = t.double()
    return t


def cosine_sim(t, e) -> torch.Tensor:
    """t.e / (|t||e|). Zero-norm inputs are an error, never a silent 0."""
    t = _as_tensor(t)
    e = _as_tensor(e)
    if t.dim() != 1 or e.dim() != 1 or t.shape != e.shape:
        raise DataError(f"expected two equal-length vectors, got {tuple(t.shape)} and {tuple(e.shape)}")
    nt = torch.linalg.vector_norm(t)
    ne = torch.linalg.vector_norm(e)
    if float(nt) == 0.0 or float(ne) == 0.0:
        raise NumericError("zero-norm vector in cosine similarity")
    return (t @ e) / (nt * ne)


def similarity_matrix(T, E) -> torch.Tensor:
    """Pairwise cosine similarities; entry (i, j) = sim(T_i, E_j)."""
    T = _as_tensor(T)
    E = _as_tensor(E)
    if T.dim() != 2 or E.dim() != 2:
        raise DataError("similarity_matrix expects 2-D inputs")
    if T.shape[1] != E.shape[1]:
        raise DataError(f"dimension mismatch: {T.shape[1]} vs {E.shape[1]}")
    if T.shape[0] < 1 or E.shape[0] < 1:
        raise DataError("similarity_matrix needs at least one row per side")
    nt = torch.linalg.vector_norm(T, dim=1, keepdim=True)
    ne = torch.linalg.vector_norm(E, dim=1, keepdim=True)
    for name, norms in (("first", nt), ("second", ne)):
        bad = (norms.detach() == 0.0).nonzero()
        if bad.numel():
            raise NumericError(f"zero-norm row {int(bad[0, 0])} in {name} input")
    return (T / nt) @ (E / ne).T


def _check_square_finite(S: torch.Tensor) -> torch.Tensor:
    if S.dim() != 2 or S.shape[0] != S.shape[1]:
        raise DataError(f"similarity matrix must be square, got {tuple(S.shape)}")
    if not torch.isfinite(S.detach()).all():
        raise NumericError("similarity matrix contains non-finite entries")
    return S


def _check_tau(tau) -> torch.Tensor:
    tau = _as_tensor(tau)
    if tau.dim() != 0:
        raise DataError("tau must be a scalar")
    if not (float(tau.detach()) > 0):
        raise NumericError(f"tau must be positive, got {float(tau.detach())}")
    return tau


def loss_e2t(S, tau) -> torch.Tensor:
    """Per-row ECG-to-text losses: -log softmax over each row's diagonal."""
    S = _check_square_finite(_as_tensor(S))
    tau = _check_tau(tau)
    logits = S / tau
    shifted = logits - logits.max(dim=1, keepdim=True).values.detach()
    lse = torch.log(torch.exp(shifted).sum(dim=1))
    return lse - torch.diagonal(shifted)


def loss_t2e(S, tau) -> torch.Tensor:
    """Per-row text-to-ECG losses: the same softmax taken over columns."""
    return loss_e2t(_as_tensor(S).T, tau)


def total_loss(S, tau) -> torch.Tensor:
    """Mean over pairs of the averaged two directional losses. Always >= 0."""
    S = _as_tensor(S)
    return ((loss_e2t(S, tau) + loss_t2e(S, tau)) / 2.0).mean()
