import numpy as np
import pytest

from edmri.phantom import PhantomSpec
from edmri.volume import FASCIA, PROSTATE

SPACING = (0.273, 0.273, 2.368)


def annulus_labels(n=256, r_in_mm=15.0, r_out_mm=19.0, spacing=0.273, center=None, half=False):
    """Prostate disk of radius ``r_in_mm`` inside a fascia ring out to ``r_out_mm``."""
    c = (n // 2, n // 2) if center is None else center
    x, y = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    dx, dy = (x - c[0]) * spacing, (y - c[1]) * spacing
    r = np.hypot(dx, dy)
    labels = np.zeros((n, n), dtype=np.uint8)
    ring = (r >= r_in_mm) & (r < r_out_mm)
    if half:
        ring &= dy >= 0
    labels[ring] = FASCIA
    labels[r < r_in_mm] = PROSTATE
    return labels


def small_spec(**overrides):
    base = dict(n_patients=4, dims=(224, 224, 24), with_image=False, seed=5)
    base.update(overrides)
    return PhantomSpec(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def central_diff(f, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def network_grad_check(net, X, y, weights, rng, age=None, lambda_reg=0.0):
    """Relative error between backprop and central differences for one network."""
    from edmri.models.losses import mtl_loss_logits, weighted_ce_logits

    flat = net.init_params(rng) + rng.normal(0, 0.1, net.layout.size)

    def loss_and_grads(v):
        P = net.layout.views(v)
        out, cache = net.forward(P, X)
        if age is None:
            loss, dz = weighted_ce_logits(out["logit"], y, weights)
            grads = {"logit": dz}
        else:
            loss, dz, da = mtl_loss_logits(out["logit"], out["age"], y, age, weights, lambda_reg)
            grads = {"logit": dz, "age": da}
        return loss, cache, grads, P

    _, cache, grads, P = loss_and_grads(flat)
    g = np.zeros_like(flat)
    net.backward(P, cache, grads, net.layout.views(g))
    numeric = central_diff(lambda v: loss_and_grads(v)[0], flat)
    return rel_err(g, numeric)
