"""Training objective: correlation, discriminative and orthogonality terms.

Every loss returns its value together with gradients w.r.t. the subspace
outputs it reads, packed as a :class:`SubspaceOutputs` of the same shapes.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import BatchTooSmallError, DimensionMismatchError, ValidationError
from .network import SubspaceOutputs
from .numerics import DEFAULT_RIDGE, total_correlation, total_correlation_grad

DEFAULT_ALPHA = 0.01
DEFAULT_BETA = 0.001
NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    corr: float
    dis: float
    cons: float
    total: float
    alpha: float
    beta: float
    corr_weight: float = 1.0

    def to_dict(self):
        return asdict(self)


def _zeros(m):
    return np.zeros_like(m)


def corr_loss(s_ex_a, s_ex_v, ridge=DEFAULT_RIDGE):
    """Negative mean canonical correlation between the explicit outputs.

    Value lies in ``[-1, 0]``. Returns ``(value, grad_a, grad_v)``.
    """
    if s_ex_a.shape != s_ex_v.shape:
        raise DimensionMismatchError(f"explicit outputs differ in shape: {s_ex_a.shape} vs {s_ex_v.shape}")
    b, k = s_ex_a.shape
    if b <= k:
        raise BatchTooSmallError(f"batch of {b} rows cannot estimate {k}x{k} covariances")
    total, ga, gv = total_correlation_grad(s_ex_a, s_ex_v, ridge)
    return -total / k, -ga / k, -gv / k


def _frob_term(s, y):
    diff = s - y
    norm = float(np.linalg.norm(diff))
    b = s.shape[0]
    if norm < NORM_FLOOR:
        return norm / b, np.zeros_like(s)
    return norm / b, diff / (b * norm)


def dis_loss(s_im_a, s_im_v, labels):
    """Label-regression loss ``‖S_a - Y‖_F / b + ‖S_v - Y‖_F / b`` (norms not squared).

    ``labels`` is the one-hot matrix ``Y``. Returns ``(value, grad_a, grad_v)``.
    """
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != s_im_a.shape or y.shape != s_im_v.shape:
        raise DimensionMismatchError(
            f"implicit outputs {s_im_a.shape}/{s_im_v.shape} must match labels {y.shape}; "
            "the implicit dimension has to equal the category count"
        )
    va, ga = _frob_term(s_im_a, y)
    vv, gv = _frob_term(s_im_v, y)
    return va + vv, ga, gv


def cons_loss(outputs):
    """Orthogonality penalty between subspaces, normalised by ``b²``.

    Sums ``‖Q_exᵀ Q_im‖²_F`` for each modality and ``‖Q_im^aᵀ Q_im^v‖²_F``
    across modalities, using the raw (uncentred) batch outputs.
    """
    ea, ev, ia, iv = outputs.as_tuple()
    b = ea.shape[0]
    if not all(m.shape[0] == b for m in (ev, ia, iv)):
        raise DimensionMismatchError("all subspace outputs need the same batch size")
    scale = 1.0 / (b * b)
    value = 0.0
    grads = [np.zeros_like(m) for m in (ea, ev, ia, iv)]
    for p, q in ((0, 2), (1, 3), (2, 3)):
        a, c = (ea, ev, ia, iv)[p], (ea, ev, ia, iv)[q]
        m = a.T @ c
        value += scale * float(np.sum(m * m))
        grads[p] += 2.0 * scale * c @ m.T
        grads[q] += 2.0 * scale * a @ m
    return value, SubspaceOutputs(*grads)


def total_loss(outputs, labels, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA,
               ridge=DEFAULT_RIDGE, corr_weight=1.0):
    """``corr_weight·L_corr + α·L_dis + β·L_cons`` with gradients.

    Terms whose weight is zero are skipped (value reported as 0). ``corr_weight``
    is 1 for the full model and 0 for the implicit-only variant.
    """
    for name, w in (("alpha", alpha), ("beta", beta), ("corr_weight", corr_weight)):
        if w < 0:
            raise ValidationError(f"{name} must be non-negative, got {w}")
    ea, ev, ia, iv = outputs.as_tuple()
    grad = [_zeros(m) for m in (ea, ev, ia, iv)]
    corr = dis = cons = 0.0
    if corr_weight:
        corr, ga, gv = corr_loss(ea, ev, ridge)
        grad[0] += corr_weight * ga
        grad[1] += corr_weight * gv
    if alpha:
        dis, ga, gv = dis_loss(ia, iv, labels)
        grad[2] += alpha * ga
        grad[3] += alpha * gv
    if beta:
        cons, gc = cons_loss(outputs)
        for i, g in enumerate(gc.as_tuple()):
            grad[i] += beta * g
    total = corr_weight * corr + alpha * dis + beta * cons
    return (LossBreakdown(corr, dis, cons, total, alpha, beta, corr_weight),
            SubspaceOutputs(*grad))


def loss_value(outputs, labels, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA,
               ridge=DEFAULT_RIDGE, corr_weight=1.0):
    """Scalar objective without gradients (used by finite-difference checks)."""
    ea, ev, ia, iv = outputs.as_tuple()
    total = 0.0
    if corr_weight:
        total += corr_weight * -total_correlation(ea, ev, ridge) / ea.shape[1]
    if alpha:
        y = np.asarray(labels, dtype=np.float64)
        b = ia.shape[0]
        total += alpha * (np.linalg.norm(ia - y) + np.linalg.norm(iv - y)) / b
    if beta:
        b = ea.shape[0]
        total += beta * sum(float(np.sum((p.T @ q) ** 2)) for p, q in ((ea, ia), (ev, iv), (ia, iv))) / (b * b)
    return total
