"""Fixed-depth unrolled shrinkage iterations with trainable per-layer parameters.

Layer ``t`` maps a stabilizing gain ``K`` to

    C = shrink(K - w1 * grad J(K), w2)
    K' = w3 * C + (1 - w3) * K

and keeps ``K`` instead whenever ``K'`` is not stabilizing. With
``(w1, w2, w3) = (1/rho0, gamma/rho0, 1)`` in every layer the network
reproduces fixed-step ISTA, which is the untuned reference.

Training is derivative-free: simultaneous-perturbation gradient estimates
(or central differences for shallow nets) drive an Adam-style update, and a
move is kept only if it does not increase the loss on the minibatch it
was estimated from.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InitNotStabilizing, NotStabilizing, ParseError, ZeroReference
from .objective import STABILITY_MARGIN, Gain, LQRPoint
from .linalg import abscissa
from .objective import closed_loop
from .sparsity import shrink, shrink_block

__all__ = [
    "W1_MIN",
    "LayerParams",
    "UnrolledNet",
    "LayerRecord",
    "TrainOptions",
    "TrainResult",
    "forward",
    "loss",
    "nmse",
    "nmse_by_depth",
    "train",
    "net_to_dict",
    "net_from_dict",
]

W1_MIN = 1e-8


@dataclass(frozen=True)
class LayerParams:
    w1: float
    w2: float
    w3: float = 1.0

    def __post_init__(self):
        if not self.w1 > 0:
            raise ValueError("w1 (step size) must be > 0")
        if not self.w2 >= 0:
            raise ValueError("w2 (threshold) must be >= 0")
        if not math.isfinite(self.w3):
            raise ValueError("w3 must be finite")


@dataclass(frozen=True)
class UnrolledNet:
    layers: tuple
    sparsity_op: str = "elementwise"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) < 1:
            raise ValueError("a net needs at least one layer")
        if self.sparsity_op not in ("elementwise", "block"):
            raise ValueError("sparsity_op must be 'elementwise' or 'block'")

    @property
    def depth(self):
        return len(self.layers)

    @classmethod
    def initial(cls, depth, rho0=100.0, gamma=1.0, sparsity_op="elementwise"):
        """Net that reproduces fixed-step ISTA with curvature ``rho0``."""
        p = LayerParams(w1=1.0 / rho0, w2=gamma / rho0, w3=1.0)
        return cls(layers=(p,) * int(depth), sparsity_op=sparsity_op)

    def vector(self):
        return np.array([[p.w1, p.w2, p.w3] for p in self.layers], dtype=float).ravel()

    def with_vector(self, v):
        """New net from a flat ``(w1, w2, w3) * depth`` vector, projected onto the constraints."""
        v = np.asarray(v, dtype=float).reshape(-1, 3)
        layers = tuple(LayerParams(w1=max(float(a), W1_MIN), w2=max(float(b), 0.0), w3=float(c))
                       for a, b, c in v)
        return UnrolledNet(layers=layers, sparsity_op=self.sparsity_op)

    def truncated(self, depth):
        return UnrolledNet(layers=self.layers[:depth], sparsity_op=self.sparsity_op)


@dataclass(frozen=True)
class LayerRecord:
    K: np.ndarray
    abscissa: float
    fallback: bool


def _layer(point, p, sparsity_op):
    K = point.K
    V = K - p.w1 * point.grad
    if sparsity_op == "block":
        C = shrink_block(V, p.w2, point.plant.partition)
    else:
        C = shrink(V, p.w2)
    return C if p.w3 == 1.0 else p.w3 * C + (1.0 - p.w3) * K


def forward(net, plant, K0):
    """Run every layer from ``K0``.

    Returns
    -------
    gain : Gain
        Output of the last layer (always stabilizing).
    trace : list of LayerRecord
        One record per layer; ``fallback`` marks layers whose candidate was
        not stabilizing and that passed their input through unchanged.

    Raises
    ------
    InitNotStabilizing
    """
    try:
        point = LQRPoint(plant, K0)
    except NotStabilizing as exc:
        raise InitNotStabilizing(f"initial gain is not stabilizing: {exc}") from None
    trace = []
    for p in net.layers:
        cand = _layer(point, p, net.sparsity_op)
        fallback = True
        if np.all(np.isfinite(cand)):
            a = abscissa(closed_loop(plant, cand))
            if a < -STABILITY_MARGIN:
                point = LQRPoint(plant, cand, _abscissa=a)
                fallback = False
        trace.append(LayerRecord(K=point.K, abscissa=point.abscissa, fallback=fallback))
    return Gain(K=point.K, abscissa=point.abscissa), trace


def _sq_error(net, ex):
    gain, _ = forward(net, ex.plant, ex.K0)
    d = gain.K - ex.K_star
    return float(np.sum(d * d))


def loss(net, dataset):
    """Sum over examples of ``||K*_i - forward(net, plant_i, K0_i)||_F^2``.

    Terms are accumulated in index order so the value is reproducible.
    """
    total = 0.0
    for ex in dataset:
        total += _sq_error(net, ex)
    return total


def nmse(estimates, references):
    """Mean of ``||Khat_i - K*_i||_F^2 / ||K*_i||_F^2``.

    Raises
    ------
    ValueError
        If the sequences differ in length or are empty.
    ZeroReference
        If some reference gain is identically zero.
    """
    estimates = list(estimates)
    references = list(references)
    if len(estimates) != len(references) or not references:
        raise ValueError("need equally many estimates and references (at least one)")
    total = 0.0
    for Kh, Ks in zip(estimates, references):
        Ks = np.asarray(Ks, dtype=float)
        den = float(np.sum(Ks * Ks))
        if den == 0.0:
            raise ZeroReference("reference gain is zero; NMSE undefined")
        d = np.asarray(Kh, dtype=float) - Ks
        total += float(np.sum(d * d)) / den
    return total / len(references)


def nmse_by_depth(net, dataset):
    """NMSE of each prefix of ``net``: entry ``t - 1`` uses the first ``t`` layers."""
    per_layer = [[] for _ in range(net.depth)]
    refs = [ex.K_star for ex in dataset]
    for ex in dataset:
        _, trace = forward(net, ex.plant, ex.K0)
        for t, rec in enumerate(trace):
            per_layer[t].append(rec.K)
    return [nmse(est, refs) for est in per_layer]


# -- training -------------------------------------------------------------------

@dataclass(frozen=True)
class TrainOptions:
    """Training settings.

    ``step`` is the Adam step in relative units: parameters are optimized
    as multiples of their initial magnitudes. ``spsa_perturb`` is the
    perturbation size in the same units. ``method`` is ``"spsa"`` or
    ``"fd"`` (central differences over every parameter, depth <= 10).
    """
    epochs: int = 1000
    step: float = 0.05
    spsa_perturb: float = 1e-3
    seed: int = 0
    batch_size: int = 8
    method: str = "spsa"
    beta1: float = 0.9
    beta2: float = 0.999
    shrink_on_reject: float = 0.7

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (self.step > 0 and self.spsa_perturb > 0):
            raise ValueError("step and spsa_perturb must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.method not in ("spsa", "fd"):
            raise ValueError("method must be 'spsa' or 'fd'")


@dataclass(eq=False)
class TrainResult:
    net: UnrolledNet
    initial_loss: float
    final_loss: float
    no_improvement: bool
    accepted: int = 0
    history: list = field(default_factory=list)


def train(net, train_set, opts=None):
    """Tune every layer's ``(w1, w2, w3)`` to reduce :func:`loss` on ``train_set``.

    Each epoch draws a minibatch, estimates the gradient of the minibatch
    loss, proposes an Adam step, and keeps it only if the minibatch loss
    does not increase (a rejected proposal shrinks the step). After the
    last epoch the full training loss is compared with the initial one; if
    it did not decrease, the initial net is returned with
    ``no_improvement`` set.
    """
    opts = opts if opts is not None else TrainOptions()
    train_set = list(train_set)
    if not train_set:
        raise ValueError("training set is empty")
    if opts.method == "fd" and net.depth > 10:
        raise ValueError("finite-difference training is limited to depth <= 10")

    initial_loss = loss(net, train_set)
    if opts.epochs == 0:
        return TrainResult(net=net, initial_loss=initial_loss, final_loss=initial_loss,
                           no_improvement=True)

    theta0 = net.vector()
    scale = np.where(np.abs(theta0) > 0, np.abs(theta0), 1.0)
    u = theta0 / scale
    rng = np.random.default_rng(opts.seed)
    r = len(train_set)
    bsize = min(opts.batch_size, r)
    c = opts.spsa_perturb
    m = np.zeros_like(u)
    v = np.zeros_like(u)
    a = opts.step
    accepted = 0
    history = []

    def batch_loss(uu, batch):
        candidate = net.with_vector(uu * scale)
        return sum(_sq_error(candidate, train_set[i]) for i in batch)

    for epoch in range(1, opts.epochs + 1):
        batch = np.sort(rng.choice(r, size=bsize, replace=False)) if bsize < r else np.arange(r)
        if opts.method == "spsa":
            delta = rng.choice(np.array([-1.0, 1.0]), size=u.size)
            diff = batch_loss(u + c * delta, batch) - batch_loss(u - c * delta, batch)
            g = diff / (2.0 * c) * delta
        else:
            g = np.empty_like(u)
            for k in range(u.size):
                e = np.zeros_like(u)
                e[k] = c
                g[k] = (batch_loss(u + e, batch) - batch_loss(u - e, batch)) / (2.0 * c)
        m = opts.beta1 * m + (1.0 - opts.beta1) * g
        v = opts.beta2 * v + (1.0 - opts.beta2) * g * g
        mhat = m / (1.0 - opts.beta1 ** epoch)
        vhat = v / (1.0 - opts.beta2 ** epoch)
        proposal = u - a * mhat / (np.sqrt(vhat) + 1e-12)
        # the constraints live in parameter space; project there and map back
        proposal = net.with_vector(proposal * scale).vector() / scale
        current = batch_loss(u, batch)
        trial = batch_loss(proposal, batch)
        if trial <= current:
            u = proposal
            accepted += 1
            a = min(opts.step, a / opts.shrink_on_reject)
        else:
            a *= opts.shrink_on_reject
        history.append(min(trial, current))

    trained = net.with_vector(u * scale)
    final_loss = loss(trained, train_set)
    if not final_loss < initial_loss:
        return TrainResult(net=net, initial_loss=initial_loss, final_loss=initial_loss,
                           no_improvement=True, accepted=accepted, history=history)
    return TrainResult(net=trained, initial_loss=initial_loss, final_loss=final_loss,
                       no_improvement=False, accepted=accepted, history=history)


# -- file format ----------------------------------------------------------------

def net_to_dict(net):
    return {
        "l": net.depth,
        "sparsity_op": net.sparsity_op,
        "layers": [{"w1": p.w1, "w2": p.w2, "w3": p.w3} for p in net.layers],
    }


def net_from_dict(d):
    if not isinstance(d, dict):
        raise ParseError("net file must hold a JSON object")
    for key in ("l", "layers"):
        if key not in d:
            raise ParseError(f"missing required field {key!r}", field=key)
    try:
        layers = tuple(LayerParams(w1=float(p["w1"]), w2=float(p["w2"]), w3=float(p["w3"]))
                       for p in d["layers"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad layer entry: {exc}", field="layers") from None
    if len(layers) != int(d["l"]):
        raise ParseError(f"l={d['l']} but {len(layers)} layers given", field="l")
    return UnrolledNet(layers=layers, sparsity_op=d.get("sparsity_op", "elementwise"))
