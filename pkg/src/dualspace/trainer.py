"""Minibatch momentum SGD on the composite objective, plus gradient checking."""

import csv
import io
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import NonFiniteError, NumericalError, ValidationError
from .losses import DEFAULT_ALPHA, DEFAULT_BETA, LossBreakdown, loss_value, total_loss
from .network import (
    DEFAULT_AUDIO_HIDDEN,
    DEFAULT_VISUAL_HIDDEN,
    InputScaler,
    SubspaceOutputs,
    backward_cached,
    forward_cached,
    init,
)
from .numerics import DEFAULT_RIDGE

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 400
    learning_rate: float = 1e-3
    momentum: float = 0.9
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    ridge: float = DEFAULT_RIDGE
    seed: int = 0
    share_ex_im: bool = False
    normalize_inputs: bool = True
    corr_weight: float = 1.0
    audio_hidden: tuple = DEFAULT_AUDIO_HIDDEN
    visual_hidden: tuple = DEFAULT_VISUAL_HIDDEN

    def validate(self, k=None):
        if self.epochs < 0:
            raise ValidationError(f"epochs must be non-negative, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be positive, got {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must lie in [0, 1), got {self.momentum}")
        for name in ("alpha", "beta", "ridge", "corr_weight"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if k is not None and self.batch_size <= k:
            raise ValidationError(
                f"batch_size {self.batch_size} must exceed the subspace dimension {k}"
            )

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["audio_hidden"] = list(self.audio_hidden)
        d["visual_hidden"] = list(self.visual_hidden)
        return d


@dataclass
class LossHistory:
    epochs: list = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    def totals(self):
        return np.array([b.total for b in self.epochs])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "corr", "dis", "cons", "total"])
        for i, b in enumerate(self.epochs, start=1):
            w.writerow([i, repr(b.corr), repr(b.dis), repr(b.cons), repr(b.total)])
        return buf.getvalue()


def _epoch_breakdown(parts, sizes, cfg):
    w = np.asarray(sizes, dtype=np.float64) / np.sum(sizes)
    corr = float(np.dot(w, [p.corr for p in parts]))
    dis = float(np.dot(w, [p.dis for p in parts]))
    cons = float(np.dot(w, [p.cons for p in parts]))
    total = cfg.corr_weight * corr + cfg.alpha * dis + cfg.beta * cons
    return LossBreakdown(corr, dis, cons, total, cfg.alpha, cfg.beta, cfg.corr_weight)


def _batches(n, batch_size, min_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if idx.size >= min_size:
            yield idx


def train(config, train_set, callback=None):
    """Fit all four branches on ``train_set``; returns ``(params, history)``.

    The subspace dimension equals the category count. Inputs are z-scored with
    training-set statistics unless ``normalize_inputs`` is off; the fitted
    scaler travels with the returned parameters.
    """
    cfg = config
    k = train_set.c
    cfg.validate(k)
    if train_set.c < 2:
        raise ValidationError("training needs at least two categories")
    if train_set.n < cfg.batch_size:
        raise ValidationError(
            f"training set has {train_set.n} samples, fewer than batch_size {cfg.batch_size}"
        )
    params = init(cfg.seed, train_set.d_a, train_set.d_v, k,
                  cfg.audio_hidden, cfg.visual_hidden, cfg.share_ex_im)
    if cfg.normalize_inputs:
        params.scaler = InputScaler.fit(train_set.audio, train_set.visual)
    params.meta = {"train_config": cfg.to_dict()}
    audio, visual = params.prepare(train_set.audio, train_set.visual)
    y = train_set.one_hot()

    tensors = [a for _, a in params.tensors()]
    names = [n for n, _ in params.tensors()]
    velocity = [np.zeros_like(a) for a in tensors]
    rng = np.random.default_rng([cfg.seed, 1])
    history = LossHistory()

    for epoch in range(1, cfg.epochs + 1):
        parts, sizes = [], []
        for bi, idx in enumerate(_batches(train_set.n, cfg.batch_size, k + 1, rng)):
            out, cache = forward_cached(params, audio[idx], visual[idx])
            where = f"epoch {epoch}, batch {bi}"
            if not all(np.isfinite(m).all() for m in out.as_tuple()):
                raise NonFiniteError(f"non-finite subspace outputs at {where}")
            try:
                breakdown, upstream = total_loss(out, y[idx], cfg.alpha, cfg.beta, cfg.ridge,
                                                 cfg.corr_weight)
            except NumericalError as e:
                raise NonFiniteError(f"loss evaluation failed at {where}: {e}") from e
            if not np.isfinite(breakdown.total):
                raise NonFiniteError(f"non-finite loss at {where}")
            grads = backward_cached(params, cache, upstream)
            for p, v, name in zip(tensors, velocity, names):
                g = grads[name]
                g *= cfg.learning_rate
                v *= cfg.momentum
                v -= g
                p += v
            parts.append(breakdown)
            sizes.append(idx.size)
        history.epochs.append(_epoch_breakdown(parts, sizes, cfg))
        if callback is not None:
            callback(epoch, history.epochs[-1], params)
        if epoch == 1 or epoch % 50 == 0:
            log.info("epoch %d total %.6f", epoch, history.epochs[-1].total)
    return params, history


def encode(params, audio=None, visual=None):
    """Scaled forward pass; returns :class:`SubspaceOutputs` (``None`` for a missing side)."""
    a, v = params.prepare(audio, visual)
    out = {}
    if a is not None:
        ex, cf = params.f.forward(a)
        im = params.psi.forward(cf[0][-1] if params.share_ex_im else a)[0]
        out["a"] = (ex, im)
    if v is not None:
        ex, cg = params.g.forward(v)
        im = params.tau.forward(cg[0][-1] if params.share_ex_im else v)[0]
        out["v"] = (ex, im)
    return out


# -- gradient checking -------------------------------------------------------

@dataclass
class GradCheckReport:
    max_relative_error: float
    per_tensor: dict
    checked: int
    skipped_kinks: int


def relative_error(analytic, numeric, floor=1e-6):
    denom = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / denom


def _perturbed_outputs(params, caches, outputs, net_name, layer, index, delta):
    net = params.nets()[net_name]
    out, hidden, crossed = net.forward_perturbed(caches[net_name], layer, index, delta)
    ea, ev, ia, iv = outputs.as_tuple()
    if net_name == "f":
        ea = out
        if params.share_ex_im:
            ia = params.psi.forward(hidden)[0]
    elif net_name == "g":
        ev = out
        if params.share_ex_im:
            iv = params.tau.forward(hidden)[0]
    elif net_name == "psi":
        ia = out
    else:
        iv = out
    return SubspaceOutputs(ea, ev, ia, iv), crossed


def grad_check_report(params, audio, visual, labels, epsilon=1e-5, alpha=DEFAULT_ALPHA,
                      beta=DEFAULT_BETA, ridge=DEFAULT_RIDGE, corr_weight=1.0,
                      samples_per_tensor=200, seed=0, floor=1e-6):
    """Compare backprop gradients of the objective with central differences.

    ``labels`` is the one-hot target matrix. For each parameter tensor up to
    ``samples_per_tensor`` entries are drawn at random; entries whose
    perturbation flips a rectifier are replaced by fresh draws, because the
    objective is not differentiable across that kink.
    """
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    audio = np.asarray(audio, dtype=np.float64)
    visual = np.asarray(visual, dtype=np.float64)
    outputs, caches = forward_cached(params, audio, visual)
    _, upstream = total_loss(outputs, labels, alpha, beta, ridge, corr_weight)
    grads = backward_cached(params, caches, upstream)
    rng = np.random.default_rng(seed)

    def objective(out):
        return loss_value(out, labels, alpha, beta, ridge, corr_weight)

    per_tensor, checked, skipped = {}, 0, 0
    for name, arr in params.tensors():
        net_name, pname = name.split(".")
        layer = int(pname[1:])
        worst, count = 0.0, 0
        for flat in rng.permutation(arr.size):
            if count >= samples_per_tensor:
                break
            index = np.unravel_index(flat, arr.shape)
            out_p, cross_p = _perturbed_outputs(params, caches, outputs, net_name, layer, index, epsilon)
            out_m, cross_m = _perturbed_outputs(params, caches, outputs, net_name, layer, index, -epsilon)
            if cross_p or cross_m:
                skipped += 1
                continue
            numeric = (objective(out_p) - objective(out_m)) / (2.0 * epsilon)
            analytic = float(grads[name][index])
            err = relative_error(analytic, numeric, floor)
            if not np.isfinite(err):
                raise NonFiniteError(f"gradient check produced a non-finite error at {name}{index}")
            worst = max(worst, err)
            count += 1
        per_tensor[name] = worst
        checked += count
    return GradCheckReport(max(per_tensor.values()), per_tensor, checked, skipped)


def grad_check(params, audio, visual, labels, epsilon=1e-5, **kwargs):
    """Worst relative error between analytic and central-difference gradients."""
    return grad_check_report(params, audio, visual, labels, epsilon, **kwargs).max_relative_error
