"""Feed-forward branch networks projecting each modality into the two subspaces.

Four branches: ``f`` (audio) and ``g`` (visual) feed the explicit space,
``psi`` (audio) and ``tau`` (visual) the implicit space. Hidden layers use a
rectifier, output layers are linear.

With ``share_ex_im`` set, the implicit branch of a modality is only an output
head reading the last hidden layer of that modality's explicit branch.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import atomic_write_bytes
from .errors import DimensionMismatchError, StorageError, ValidationError
from .numerics import as_matrix

DEFAULT_AUDIO_HIDDEN = (1024, 1024)
DEFAULT_VISUAL_HIDDEN = (1024, 2048)
BRANCHES = ("f", "g", "psi", "tau")

_MAGIC = b"DSCKPT1\n"


class BranchNet:
    """Multilayer perceptron with rectified hidden layers and a linear output."""

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ValidationError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if b.shape != (w.shape[1],):
                raise DimensionMismatchError(f"layer {i}: bias {b.shape} vs weight {w.shape}")
            if i and weights[i - 1].shape[1] != w.shape[0]:
                raise DimensionMismatchError(f"layer {i} input does not match layer {i - 1} output")
        self.weights = list(weights)
        self.biases = list(biases)

    @classmethod
    def glorot(cls, dims, rng):
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def layer_dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_layers(self):
        return len(self.weights)

    def copy(self):
        return BranchNet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, x):
        """Return ``(output, cache)``; ``cache`` holds every layer input and pre-activation."""
        if x.shape[1] != self.weights[0].shape[0]:
            raise DimensionMismatchError(
                f"input has {x.shape[1]} columns, network expects {self.weights[0].shape[0]}"
            )
        acts, pre = [x], []
        h = x
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            if i < last:
                h = np.maximum(z, 0.0)
                acts.append(h)
            else:
                h = z
        return h, (acts, pre)

    def backward(self, cache, upstream, hidden_grad=None, need_input_grad=True):
        """Gradients of ``Σ⟨upstream, output⟩`` for each weight and bias.

        ``hidden_grad`` is added to the gradient arriving at the last hidden
        activation (used when an extra head reads that layer). Returns
        ``(dweights, dbiases, dinput)``; ``dinput`` is ``None`` when
        ``need_input_grad`` is off.
        """
        acts, _ = cache
        dws = [None] * self.n_layers
        dbs = [None] * self.n_layers
        g = upstream
        for i in range(self.n_layers - 1, -1, -1):
            a_in = acts[i]
            dws[i] = a_in.T @ g
            dbs[i] = g.sum(axis=0)
            if i == 0 and not need_input_grad:
                return dws, dbs, None
            g = g @ self.weights[i].T
            if i == self.n_layers - 1 and hidden_grad is not None and i > 0:
                g = g + hidden_grad
            if i > 0:
                g = g * (a_in > 0.0)
        return dws, dbs, g

    def forward_perturbed(self, cache, layer, index, delta):
        """Output after nudging one parameter by ``delta``, reusing ``cache``.

        ``index`` is ``(row, col)`` for a weight entry or ``(col,)`` for a bias
        entry of ``layer``. Only the affected column is recomputed at that
        layer, so a single evaluation costs roughly one pass through the layers
        above it. Returns ``(output, last_hidden, crossed)`` where ``crossed``
        flags a rectifier whose on/off state flipped.
        """
        acts, pre = cache
        last = self.n_layers - 1
        col = index[-1]
        dz = delta * acts[layer][:, index[0]] if len(index) == 2 else delta
        crossed = False
        if layer == last:
            out = pre[last].copy()
            out[:, col] += dz
            return out, (acts[-1] if last else None), crossed
        old = pre[layer][:, col]
        new = old + dz
        crossed |= bool(np.any((old > 0) != (new > 0)))
        da = np.maximum(new, 0.0) - np.maximum(old, 0.0)
        h_prev = acts[layer + 1].copy()
        h_prev[:, col] += da
        z = pre[layer + 1] + np.outer(da, self.weights[layer + 1][col])
        for i in range(layer + 1, last):
            crossed |= bool(np.any((z > 0) != (pre[i] > 0)))
            h_prev = np.maximum(z, 0.0)
            z = h_prev @ self.weights[i + 1] + self.biases[i + 1]
        return z, h_prev, crossed


@dataclass
class InputScaler:
    """Per-feature z-scoring fitted on training features."""

    audio_mean: np.ndarray
    audio_scale: np.ndarray
    visual_mean: np.ndarray
    visual_scale: np.ndarray

    @classmethod
    def fit(cls, audio, visual):
        def stats(x):
            s = x.std(axis=0)
            return x.mean(axis=0), np.where(s > 0, s, 1.0)

        am, asc = stats(np.asarray(audio, dtype=np.float64))
        vm, vsc = stats(np.asarray(visual, dtype=np.float64))
        return cls(am, asc, vm, vsc)

    def audio(self, x):
        return (x - self.audio_mean) / self.audio_scale

    def visual(self, x):
        return (x - self.visual_mean) / self.visual_scale


@dataclass
class SubspaceOutputs:
    s_ex_a: np.ndarray
    s_ex_v: np.ndarray
    s_im_a: np.ndarray
    s_im_v: np.ndarray

    def as_tuple(self):
        return self.s_ex_a, self.s_ex_v, self.s_im_a, self.s_im_v

    @classmethod
    def zeros_like(cls, other):
        return cls(*(np.zeros_like(m) for m in other.as_tuple()))


@dataclass
class ModelParams:
    f: BranchNet
    g: BranchNet
    psi: BranchNet
    tau: BranchNet
    k: int
    share_ex_im: bool = False
    seed: int = 0
    scaler: InputScaler = None
    meta: dict = field(default_factory=dict)

    @property
    def d_a(self):
        return self.f.layer_dims[0]

    @property
    def d_v(self):
        return self.g.layer_dims[0]

    def nets(self):
        return {"f": self.f, "g": self.g, "psi": self.psi, "tau": self.tau}

    def tensors(self):
        """``(name, array)`` pairs in declaration order; arrays are live views."""
        out = []
        for name, net in self.nets().items():
            for i, (w, b) in enumerate(zip(net.weights, net.biases)):
                out.append((f"{name}.W{i}", w))
                out.append((f"{name}.b{i}", b))
        return out

    def copy(self):
        return ModelParams(self.f.copy(), self.g.copy(), self.psi.copy(), self.tau.copy(),
                           self.k, self.share_ex_im, self.seed, self.scaler, dict(self.meta))

    def prepare(self, audio=None, visual=None):
        """Apply the stored input scaler (identity when none is attached)."""
        if audio is not None:
            audio = as_matrix(audio, "audio")
            if self.scaler is not None:
                audio = self.scaler.audio(audio)
        if visual is not None:
            visual = as_matrix(visual, "visual")
            if self.scaler is not None:
                visual = self.scaler.visual(visual)
        return audio, visual


def init(seed, d_a, d_v, k, audio_hidden=DEFAULT_AUDIO_HIDDEN,
         visual_hidden=DEFAULT_VISUAL_HIDDEN, share_ex_im=False):
    """Glorot-uniform weights and zero biases for all four branches."""
    if k < 1:
        raise ValidationError(f"subspace dimension must be positive, got {k}")
    rng = np.random.default_rng(seed)
    a_dims = [d_a, *audio_hidden, k]
    v_dims = [d_v, *visual_hidden, k]
    f = BranchNet.glorot(a_dims, rng)
    g = BranchNet.glorot(v_dims, rng)
    if share_ex_im:
        psi = BranchNet.glorot([a_dims[-2], k], rng)
        tau = BranchNet.glorot([v_dims[-2], k], rng)
    else:
        psi = BranchNet.glorot(a_dims, rng)
        tau = BranchNet.glorot(v_dims, rng)
    return ModelParams(f, g, psi, tau, k, share_ex_im, seed)


def _trunk_head_forward(params, audio, visual):
    ex_a, cf = params.f.forward(audio)
    ex_v, cg = params.g.forward(visual)
    if params.share_ex_im:
        if params.f.n_layers < 2 or params.g.n_layers < 2:
            raise ValidationError("weight sharing needs at least one hidden layer")
        im_a, cpsi = params.psi.forward(cf[0][-1])
        im_v, ctau = params.tau.forward(cg[0][-1])
    else:
        im_a, cpsi = params.psi.forward(audio)
        im_v, ctau = params.tau.forward(visual)
    return SubspaceOutputs(ex_a, ex_v, im_a, im_v), {"f": cf, "g": cg, "psi": cpsi, "tau": ctau}


def forward_cached(params, audio, visual):
    audio = as_matrix(audio, "audio")
    visual = as_matrix(visual, "visual")
    if audio.shape[0] != visual.shape[0]:
        raise DimensionMismatchError(
            f"batch sizes differ: audio {audio.shape[0]}, visual {visual.shape[0]}"
        )
    return _trunk_head_forward(params, audio, visual)


def forward(params, audio, visual):
    """Project a paired batch into both subspaces (no input scaling applied)."""
    return forward_cached(params, audio, visual)[0]


def backward_cached(params, cache, upstream):
    """Parameter gradients as a dict keyed like :meth:`ModelParams.tensors`."""
    grads = {}

    def put(name, dws, dbs):
        for i, (dw, db) in enumerate(zip(dws, dbs)):
            grads[f"{name}.W{i}"] = dw
            grads[f"{name}.b{i}"] = db

    if params.share_ex_im:
        pw, pb, h_a = params.psi.backward(cache["psi"], upstream.s_im_a)
        tw, tb, h_v = params.tau.backward(cache["tau"], upstream.s_im_v)
        fw, fb, _ = params.f.backward(cache["f"], upstream.s_ex_a, h_a, need_input_grad=False)
        gw, gb, _ = params.g.backward(cache["g"], upstream.s_ex_v, h_v, need_input_grad=False)
    else:
        fw, fb, _ = params.f.backward(cache["f"], upstream.s_ex_a, need_input_grad=False)
        gw, gb, _ = params.g.backward(cache["g"], upstream.s_ex_v, need_input_grad=False)
        pw, pb, _ = params.psi.backward(cache["psi"], upstream.s_im_a, need_input_grad=False)
        tw, tb, _ = params.tau.backward(cache["tau"], upstream.s_im_v, need_input_grad=False)
    put("f", fw, fb)
    put("g", gw, gb)
    put("psi", pw, pb)
    put("tau", tw, tb)
    return {name: grads[name] for name, _ in params.tensors()}


def backward(params, audio, visual, upstream):
    """Exact gradients of ``Σ⟨upstream, outputs⟩`` w.r.t. every parameter."""
    out, cache = forward_cached(params, audio, visual)
    for name, got, want in zip(("s_ex_a", "s_ex_v", "s_im_a", "s_im_v"),
                               upstream.as_tuple(), out.as_tuple()):
        if got.shape != want.shape:
            raise DimensionMismatchError(f"upstream {name} has shape {got.shape}, expected {want.shape}")
    return backward_cached(params, cache, upstream)


# -- checkpoints -------------------------------------------------------------

def _scaler_tensors(scaler):
    if scaler is None:
        return []
    return [("scaler.audio_mean", scaler.audio_mean), ("scaler.audio_scale", scaler.audio_scale),
            ("scaler.visual_mean", scaler.visual_mean), ("scaler.visual_scale", scaler.visual_scale)]


def checkpoint_bytes(params):
    tensors = params.tensors() + _scaler_tensors(params.scaler)
    header = {
        "format_version": 1,
        "k": params.k,
        "seed": params.seed,
        "share_ex_im": params.share_ex_im,
        "dims": {name: net.layer_dims for name, net in params.nets().items()},
        "tensors": [[name, list(arr.shape)] for name, arr in tensors],
        "meta": params.meta,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in tensors)
    return _MAGIC + struct.pack("<Q", len(head)) + head + payload


def save_checkpoint(params, path):
    atomic_write_bytes(Path(path), checkpoint_bytes(params))


def load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise StorageError(f"checkpoint {path} does not exist")
    raw = path.read_bytes()
    if not raw.startswith(_MAGIC):
        raise StorageError(f"{path} is not a checkpoint file")
    (hlen,) = struct.unpack_from("<Q", raw, len(_MAGIC))
    start = len(_MAGIC) + 8
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    offset = start + hlen
    arrays = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(raw):
            raise StorageError(f"{path} is truncated at tensor {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise StorageError(f"{path} has {len(raw) - offset} trailing bytes")

    def net(name):
        n = len(header["dims"][name]) - 1
        return BranchNet([arrays[f"{name}.W{i}"] for i in range(n)],
                         [arrays[f"{name}.b{i}"] for i in range(n)])

    scaler = None
    if "scaler.audio_mean" in arrays:
        scaler = InputScaler(arrays["scaler.audio_mean"], arrays["scaler.audio_scale"],
                             arrays["scaler.visual_mean"], arrays["scaler.visual_scale"])
    return ModelParams(net("f"), net("g"), net("psi"), net("tau"), header["k"],
                       header["share_ex_im"], header["seed"], scaler, header.get("meta", {}))
