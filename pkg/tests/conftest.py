import math

import numpy as np
import pytest

from mclnn.masks import MaskSpec, build_mask
from mclnn.network import ConditionalLayerParams, DenseParams, ModelParams

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, text in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"[{status}] criterion {number}: {text}")


def mask_oracle_py(l, e, bw, ov):
    """Literal enumeration of the band formula, pure Python."""
    M = np.zeros((l, e))
    step = l + (bw - ov)
    g_max = math.ceil(l * e / step)
    for a in range(bw):
        for g in range(1, g_max + 1):
            lx = a + (g - 1) * step
            if lx < l * e:
                M[lx % l, lx // l] = 1
    return M


def naive_forward(params: ModelParams, segment):
    """Scalar-loop forward pass, straight from the layer equations. Returns a list of floats."""
    x = [list(map(float, row)) for row in segment]
    for layer in params.clnn_layers:
        n = layer.order
        W = layer.weights
        M = layer.mask
        d, l_in, e = W.shape
        out = []
        for t in range(n, len(x) - n):
            row = []
            for j in range(e):
                s = float(layer.bias[j])
                for u in range(-n, n + 1):
                    for i in range(l_in):
                        w = float(W[u + n, i, j])
                        if M is not None:
                            w *= float(M[i, j])
                        s += x[t + u][i] * w
                row.append(s if s > 0 else float(layer.slopes[j]) * s)
            out.append(row)
        x = out
    h = [sum(x[t][j] for t in range(len(x))) / len(x) for j in range(len(x[0]))]
    for layer in params.dense_layers:
        n_in, n_out = layer.weights.shape
        z = [float(layer.bias[j]) + sum(h[i] * float(layer.weights[i, j]) for i in range(n_in)) for j in range(n_out)]
        h = [v if v > 0 else float(layer.slopes[j]) * v for j, v in enumerate(z)]
    out = params.output_layer
    n_in, n_out = out.weights.shape
    logits = [float(out.bias[j]) + sum(h[i] * float(out.weights[i, j]) for i in range(n_in)) for j in range(n_out)]
    top = max(logits)
    ex = [math.exp(v - top) for v in logits]
    total = sum(ex)
    return [v / total for v in ex]


def finite_difference_grads(loss_fn, arrays, step=1e-5):
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``arrays`` (modified in place, restored)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + step
            up = loss_fn()
            a[idx] = old - step
            down = loss_fn()
            a[idx] = old
            g[idx] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def relative_error(analytic, numeric, floor=1e-6):
    """Entrywise |a - n| / max(|a|, |n|, floor)."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def random_model(rng, l, widths, n, k, dense, n_classes, masks=None):
    """Random float64 model with non-degenerate biases and slopes (keeps PReLU off its kink)."""
    d = 2 * n + 1
    clnn = []
    width = l
    for b, e in enumerate(widths):
        spec = masks[b] if masks else None
        mask = build_mask(width, e, spec) if spec is not None else None
        W = rng.normal(scale=0.5, size=(d, width, e))
        if mask is not None:
            W = W * mask
        clnn.append(ConditionalLayerParams(W, rng.normal(size=e), rng.uniform(0.05, 0.5, size=e), mask, spec))
        width = e
    dense_layers = []
    for e in dense:
        dense_layers.append(DenseParams(rng.normal(scale=0.5, size=(width, e)), rng.normal(size=e),
                                        rng.uniform(0.05, 0.5, size=e)))
        width = e
    output = DenseParams(rng.normal(scale=0.5, size=(width, n_classes)), rng.normal(size=n_classes))
    return ModelParams(clnn, dense_layers, output, k)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
