import numpy as np
import pytest

from sleepgraph.models import ModelGraphBundle


def central_diff_check(params: dict, loss_fn, analytic: dict, h: float = 1e-6):
    """Max normalized error between analytic grads and central differences.

    `params` maps names to mutable float arrays feeding `loss_fn()`;
    `analytic` maps the same names to the gradients under test.
    """
    worst = 0.0
    for name, value in params.items():
        fd = np.zeros_like(value)
        flat = value.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            fd.ravel()[i] = (lp - lm) / (2.0 * h)
        an = analytic[name]
        err = np.max(np.abs(an - fd)) / max(1.0, np.abs(an).max(), np.abs(fd).max())
        worst = max(worst, err)
    return worst


def layer_grad_check(layer, forward, h: float = 1e-6) -> float:
    """FD-check every parameter of `layer` against backward of sum(output)."""
    out = forward()
    layer.zero_grad()
    layer.backward(np.ones_like(out))
    return central_diff_check(
        {n: p.value for n, p in layer.params.items()},
        lambda: forward().sum(),
        {n: p.grad for n, p in layer.params.items()},
        h=h,
    )


def random_symmetric_graph(n: int, rng: np.random.Generator,
                           density: float = 0.4) -> np.ndarray:
    """Random non-negative symmetric adjacency with zero diagonal."""
    w = rng.random((n, n)) * (rng.random((n, n)) < density)
    adj = np.triu(w, 1)
    return adj + adj.T


def make_bundle(eta=5, seq_len=3, m=8, seed=0, density=0.5,
                duplicated=None) -> ModelGraphBundle:
    rng = np.random.default_rng(seed)
    adj = random_symmetric_graph(eta, rng, density)
    dup = np.zeros(eta, dtype=bool) if duplicated is None else np.asarray(duplicated)
    return ModelGraphBundle(
        X_day=rng.normal(size=(eta, m)),
        S_seq=rng.normal(size=(eta, seq_len, m)),
        A=adj,
        y_next=(rng.random(eta) > 0.5).astype(float),
        node_ids=[f"p{i}" for i in range(eta)],
        duplicated=dup,
        cohort_id="c0",
        day=seq_len,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
