"""Small fully connected networks with hand-written backpropagation.

Parameters live in one flat float64 vector; ``ParamLayout`` hands out named,
shaped views into it so the optimizer updates everything with a single
vectorized step. Hidden activations are ``tanh`` (smooth everywhere, which
keeps finite-difference gradient checks meaningful).
"""

from __future__ import annotations

from typing import Dict, List, Tuple

import numpy as np

from edmri.errors import ConfigurationError
from edmri.models.losses import sigmoid


class ParamLayout:
    def __init__(self, shapes: List[Tuple[str, Tuple[int, ...]]]):
        self.shapes = [(name, tuple(int(s) for s in shape)) for name, shape in shapes]
        self.slices = {}
        start = 0
        for name, shape in self.shapes:
            size = int(np.prod(shape))
            self.slices[name] = (slice(start, start + size), shape)
            start += size
        self.size = start

    def views(self, flat: np.ndarray) -> Dict[str, np.ndarray]:
        return {name: flat[sl].reshape(shape) for name, (sl, shape) in self.slices.items()}

    def weight_mask(self) -> np.ndarray:
        """1 for weight matrices, 0 for biases (biases are not L2-penalized)."""
        mask = np.zeros(self.size)
        for name, (sl, shape) in self.slices.items():
            if len(shape) == 2:
                mask[sl] = 1.0
        return mask


def _init(layout: ParamLayout, rng: np.random.Generator) -> np.ndarray:
    flat = np.zeros(layout.size)
    for name, (sl, shape) in layout.slices.items():
        if len(shape) == 2:
            flat[sl] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=int(np.prod(shape)))
    return flat


def _dense_tanh_forward(x, W, b):
    h = np.tanh(x @ W + b)
    return h


def _dense_tanh_backward(x, h, W, dh, gW, gb):
    """Accumulate grads of ``h = tanh(xW + b)`` into ``gW``/``gb``; return dL/dx."""
    da = dh * (1.0 - h * h)
    gW += x.T @ da
    gb += da.sum(axis=0)
    return da @ W.T


class Network:
    """Base class: subclasses define ``layout``, ``forward`` and ``backward``.

    ``forward(P, X)`` returns ``(outputs, cache)`` where ``outputs`` is a dict
    holding at least ``"logit"``. ``backward(P, cache, grads_out, G)`` fills
    the gradient views ``G`` given dL/d(outputs).
    """

    outputs = ("logit",)
    layout: ParamLayout

    def init_params(self, rng):
        return _init(self.layout, rng)

    def config(self) -> dict:
        raise NotImplementedError


class LinearNet(Network):
    def __init__(self, n_features):
        self.n_features = int(n_features)
        self.layout = ParamLayout([("w", (self.n_features, 1)), ("b", (1,))])

    def init_params(self, rng):
        return np.zeros(self.layout.size)

    def forward(self, P, X):
        return {"logit": (X @ P["w"]).ravel() + P["b"][0]}, (X,)

    def backward(self, P, cache, grads_out, G):
        (X,) = cache
        dz = grads_out["logit"][:, None]
        G["w"] += X.T @ dz
        G["b"] += dz.sum()

    def config(self):
        return {"n_features": self.n_features}


class MLPNet(Network):
    def __init__(self, n_features, hidden):
        self.n_features, self.hidden = int(n_features), int(hidden)
        self.layout = ParamLayout([
            ("W1", (self.n_features, self.hidden)), ("b1", (self.hidden,)),
            ("W2", (self.hidden, 1)), ("b2", (1,)),
        ])

    def forward(self, P, X):
        h = _dense_tanh_forward(X, P["W1"], P["b1"])
        return {"logit": (h @ P["W2"]).ravel() + P["b2"][0]}, (X, h)

    def backward(self, P, cache, grads_out, G):
        X, h = cache
        dz = grads_out["logit"][:, None]
        G["W2"] += h.T @ dz
        G["b2"] += dz.sum()
        _dense_tanh_backward(X, h, P["W1"], dz @ P["W2"].T, G["W1"], G["b1"])

    def config(self):
        return {"n_features": self.n_features, "hidden": self.hidden}


def _encoder_shapes(prefix, n_in, hidden, n_out):
    return [
        (f"{prefix}_W1", (n_in, hidden)), (f"{prefix}_b1", (hidden,)),
        (f"{prefix}_W2", (hidden, n_out)), (f"{prefix}_b2", (n_out,)),
    ]


def _encode(P, prefix, X):
    h1 = _dense_tanh_forward(X, P[f"{prefix}_W1"], P[f"{prefix}_b1"])
    h2 = _dense_tanh_forward(h1, P[f"{prefix}_W2"], P[f"{prefix}_b2"])
    return h1, h2


def _encode_backward(P, G, prefix, X, h1, h2, dh2):
    dh1 = _dense_tanh_backward(h1, h2, P[f"{prefix}_W2"], dh2, G[f"{prefix}_W2"], G[f"{prefix}_b2"])
    _dense_tanh_backward(X, h1, P[f"{prefix}_W1"], dh1, G[f"{prefix}_W1"], G[f"{prefix}_b1"])


class FusionNet(Network):
    """Intermediate fusion of two feature groups.

    The first ``n_imaging`` columns feed the imaging encoder and the rest the
    clinical encoder. Each encoder is a two-layer MLP ending in an embedding;
    the embeddings are concatenated, passed through a fully connected layer
    and then a logistic classification head.
    """

    def __init__(self, n_imaging, n_clinical, hidden, d_emb, d_emb_clinical=None):
        d_emb_clinical = d_emb if d_emb_clinical is None else d_emb_clinical
        if int(d_emb) != int(d_emb_clinical):
            raise ConfigurationError(
                f"imaging and clinical embeddings must have equal size, got {d_emb} and {d_emb_clinical}"
            )
        if n_imaging < 1 or n_clinical < 1:
            raise ConfigurationError("fusion needs at least one imaging and one clinical feature")
        self.n_imaging, self.n_clinical = int(n_imaging), int(n_clinical)
        self.hidden, self.d_emb = int(hidden), int(d_emb)
        e = self.d_emb
        self.layout = ParamLayout(
            _encoder_shapes("img", self.n_imaging, self.hidden, e)
            + _encoder_shapes("cli", self.n_clinical, self.hidden, e)
            + [("F", (2 * e, e)), ("f", (e,)), ("H", (e, 1)), ("h", (1,))]
        )

    def split(self, X):
        return X[:, : self.n_imaging], X[:, self.n_imaging:]

    def forward(self, P, X):
        Xi, Xc = self.split(X)
        i1, i2 = _encode(P, "img", Xi)
        c1, c2 = _encode(P, "cli", Xc)
        if i2.shape[1] != c2.shape[1]:
            raise ConfigurationError("encoder output dimensions differ")
        e = np.concatenate([i2, c2], axis=1)
        g = _dense_tanh_forward(e, P["F"], P["f"])
        logit = (g @ P["H"]).ravel() + P["h"][0]
        return {"logit": logit}, (Xi, Xc, i1, i2, c1, c2, e, g)

    def backward(self, P, cache, grads_out, G):
        Xi, Xc, i1, i2, c1, c2, e, g = cache
        dz = grads_out["logit"][:, None]
        G["H"] += g.T @ dz
        G["h"] += dz.sum()
        de = _dense_tanh_backward(e, g, P["F"], dz @ P["H"].T, G["F"], G["f"])
        _encode_backward(P, G, "img", Xi, i1, i2, de[:, : self.d_emb])
        _encode_backward(P, G, "cli", Xc, c1, c2, de[:, self.d_emb:])

    def config(self):
        return {"n_imaging": self.n_imaging, "n_clinical": self.n_clinical,
                "hidden": self.hidden, "d_emb": self.d_emb}


class MultitaskNet(Network):
    """Shared two-layer encoder with a classification head and an age-regression head."""

    outputs = ("logit", "age")

    def __init__(self, n_features, hidden, d_emb=None):
        self.n_features, self.hidden = int(n_features), int(hidden)
        self.d_emb = self.hidden if d_emb is None else int(d_emb)
        self.layout = ParamLayout(
            _encoder_shapes("enc", self.n_features, self.hidden, self.d_emb)
            + [("Hc", (self.d_emb, 1)), ("hc", (1,)), ("Ha", (self.d_emb, 1)), ("ha", (1,))]
        )

    def forward(self, P, X):
        h1, h2 = _encode(P, "enc", X)
        return {
            "logit": (h2 @ P["Hc"]).ravel() + P["hc"][0],
            "age": (h2 @ P["Ha"]).ravel() + P["ha"][0],
        }, (X, h1, h2)

    def backward(self, P, cache, grads_out, G):
        X, h1, h2 = cache
        dz = grads_out["logit"][:, None]
        da = grads_out["age"][:, None]
        G["Hc"] += h2.T @ dz
        G["hc"] += dz.sum()
        G["Ha"] += h2.T @ da
        G["ha"] += da.sum()
        dh2 = dz @ P["Hc"].T + da @ P["Ha"].T
        _encode_backward(P, G, "enc", X, h1, h2, dh2)

    def config(self):
        return {"n_features": self.n_features, "hidden": self.hidden, "d_emb": self.d_emb}


NETWORKS = {
    "linear": LinearNet,
    "mlp": MLPNet,
    "fusion": FusionNet,
    "mtl": MultitaskNet,
}


def build_network(arch: str, **config) -> Network:
    try:
        return NETWORKS[arch](**config)
    except KeyError:
        raise ConfigurationError(f"unknown architecture {arch!r}") from None


def fusion_forward(imaging_features, clinical_features, params: Dict[str, np.ndarray]) -> np.ndarray:
    """Probability of the positive class from a fusion parameter dict.

    Encoder sizes are read off the parameter shapes; embeddings of unequal
    size are a configuration error.
    """
    Xi = np.atleast_2d(np.asarray(imaging_features, dtype=float))
    Xc = np.atleast_2d(np.asarray(clinical_features, dtype=float))
    d_img = params["img_W2"].shape[1]
    d_cli = params["cli_W2"].shape[1]
    if d_img != d_cli:
        raise ConfigurationError(f"imaging embedding has size {d_img}, clinical {d_cli}")
    net = FusionNet(Xi.shape[1], Xc.shape[1], params["img_W1"].shape[1], d_img)
    out, _ = net.forward(params, np.concatenate([Xi, Xc], axis=1))
    return sigmoid(out["logit"])
