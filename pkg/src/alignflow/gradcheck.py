"""Finite-difference verification suite for every differentiable op and the
composed modules built from them.

Each entry pairs a probe tensor with a deterministic tensor-to-scalar
function; the scalar is a random-weighted reduction so a wrong cotangent in
any coordinate shows up. Inputs for kinked ops (relu, clamp) are pushed away
from their kinks, where central differences are meaningless.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .duration import DurationDiscriminator, DurationGenerator
from .encoder import EncoderBlock
from .flows import CouplingLayer
from .numerics import Rng, Tensor, check_grad


def _away_from_zero(x: np.ndarray, margin: float = 0.2) -> np.ndarray:
    return x + margin * np.sign(x)


def _swap_param(obj, attr: str, build):
    """Scalar function of a module parameter: swap the probe in, evaluate, restore."""

    def f(probe: Tensor) -> Tensor:
        original = getattr(obj, attr)
        setattr(obj, attr, probe)
        try:
            return build()
        finally:
            setattr(obj, attr, original)

    return f


def suite(rng: Rng) -> list[tuple[str, object, Tensor]]:
    """(name, f, probe) triples; check_grad(f, probe) must come back <= 1e-4.

    Probe shapes are drawn from the rng too, so repeated suites cover random
    shapes as well as random values.
    """
    rows = rng.integers(2, 5)
    cols = 2 * rng.integers(1, 4)  # even, so the reshape below stays valid
    w34 = rng.normal((rows, cols))
    w26 = rng.normal((rows * 2, cols // 2))
    other = Tensor(rng.normal((rows, cols)))

    def weighted(t: Tensor, w) -> Tensor:
        return nm.summation(t * w)

    checks: list[tuple[str, object, Tensor]] = []
    x = Tensor(rng.normal((rows, cols)))
    checks += [
        ("add", lambda t: weighted(t + other, w34), x),
        ("sub", lambda t: weighted(other - t, w34), x),
        ("mul", lambda t: weighted(t * other, w34), x),
        ("div", lambda t: weighted(t / (other * other + 1.5), w34), x),
        ("div.denom", lambda t: weighted(other / (t * t + 1.5), w34), x),
        ("neg", lambda t: weighted(-t, w34), x),
        ("pow", lambda t: weighted((t * t + 1.0) ** 1.5, w34), x),
        ("tanh", lambda t: weighted(nm.tanh(t), w34), x),
        ("sigmoid", lambda t: weighted(nm.sigmoid(t), w34), x),
        ("exp", lambda t: weighted(nm.exp(t), w34), x),
        ("softmax", lambda t: weighted(nm.softmax(t, axis=1), w34), x),
        ("layer_norm", lambda t: weighted(nm.layer_norm(t, axis=1), w34), x),
        ("mean", lambda t: nm.mean(t * w34), x),
        ("sum", lambda t: nm.summation(t * w34), x),
        ("mse", lambda t: nm.mse(t, other), x),
        ("transpose", lambda t: weighted(t.T, w34.T), x),
        ("reshape", lambda t: weighted(nm.reshape(t, (rows * 2, cols // 2)), w26), x),
        ("getitem", lambda t: weighted(t[1:, ::2], w34[1:, ::2]), x),
        ("concat", lambda t: weighted(nm.concat([t, other], axis=0),
                                      np.concatenate([w34, w34])), x),
    ]
    checks.append(
        ("log", lambda t: weighted(nm.log(t), w34),
         Tensor(rng.uniform(0.5, 2.0, (rows, cols))))
    )
    checks.append(
        ("relu", lambda t: weighted(nm.relu(t), w34),
         Tensor(_away_from_zero(rng.normal((rows, cols)))))
    )
    checks.append(
        ("clamp", lambda t: weighted(nm.clamp(t, -1.0, 1.0), w34),
         Tensor(rng.uniform(-0.8, 0.8, (rows, cols))))
    )

    inner = rng.integers(2, 6)
    a = Tensor(rng.normal((rows, inner)))
    b_fixed = Tensor(rng.normal((inner, cols)))
    a_fixed = Tensor(rng.normal((rows, inner)))
    checks += [
        ("matmul.lhs", lambda t: weighted(t @ b_fixed, w34), a),
        ("matmul.rhs", lambda t: weighted(a_fixed @ t, w34),
         Tensor(rng.normal((inner, cols)))),
    ]

    c_in, c_out = rng.integers(1, 4), rng.integers(1, 4)
    length = rng.integers(2, 8)
    k = 1 + 2 * rng.integers(0, 3)
    wconv = rng.normal((c_out, length))
    sig = Tensor(rng.normal((c_in, length)))
    ker = Tensor(rng.normal((c_out, c_in, k)))
    checks += [
        ("conv1d.input", lambda t: weighted(nm.conv1d(t, ker), wconv), sig),
        ("conv1d.kernel", lambda t: weighted(nm.conv1d(sig, t), wconv),
         Tensor(rng.normal((c_out, c_in, k)))),
    ]

    wrows = rng.normal((4, cols))
    checks.append(
        ("take_rows", lambda t: weighted(nm.take_rows(t, [0, 2, 2, 1]), wrows),
         Tensor(rng.normal((3, cols))))
    )

    # composed modules, randomized away from their identity initializations
    layer = CouplingLayer(4, 6, rng.child(10), key_dim=4, head_init="small")
    wflow = rng.normal((4, 5))
    xin = Tensor(rng.normal((4, 5)))

    def flow_loss() -> Tensor:
        y, logdet = layer.forward(xin)
        return weighted(y, wflow) + logdet * 0.7

    checks += [
        ("coupling.input",
         lambda t: weighted(layer.forward(t)[0], wflow) + layer.forward(t)[1] * 0.7, xin),
        ("coupling.conv1_w", _swap_param(layer, "conv1_w", flow_loss),
         Tensor(layer.conv1_w.data.copy())),
        ("coupling.wq", _swap_param(layer, "wq", flow_loss), Tensor(layer.wq.data.copy())),
    ]

    gen = DurationGenerator(h_dim=6, z_dim=2, hidden=5, rng=rng.child(11))
    htok = Tensor(rng.normal((4, 6)))
    znoise = Tensor(rng.normal((4, 2)))
    wtok = rng.normal(4)

    def gen_loss() -> Tensor:
        return nm.summation(gen.forward(htok, znoise) * wtok)

    checks += [
        ("duration_gen.h", lambda t: nm.summation(gen.forward(t, znoise) * wtok), htok),
        ("duration_gen.conv1_w", _swap_param(gen.tower, "conv1_w", gen_loss),
         Tensor(gen.tower.conv1_w.data.copy())),
    ]

    disc = DurationDiscriminator(h_dim=6, hidden=5, rng=rng.child(12))
    dvals = Tensor(rng.uniform(0.1, 2.0, 4))

    def disc_loss() -> Tensor:
        return nm.summation(disc.forward(htok, dvals) * wtok)

    checks += [
        ("duration_disc.h", lambda t: nm.summation(disc.forward(t, dvals) * wtok), htok),
        ("duration_disc.d", lambda t: nm.summation(disc.forward(htok, t) * wtok), dvals),
        ("duration_disc.conv2_w", _swap_param(disc.tower, "conv2_w", disc_loss),
         Tensor(disc.tower.conv2_w.data.copy())),
    ]

    block = EncoderBlock(width=8, n_heads=2, ff_width=12, rng=rng.child(13))
    xblk = Tensor(rng.normal((5, 8)))
    wblk = rng.normal((5, 8))

    def block_loss() -> Tensor:
        return weighted(block.forward(xblk), wblk)

    checks += [
        ("encoder_block.input", lambda t: weighted(block.forward(t), wblk), xblk),
        ("encoder_block.wo", _swap_param(block, "wo", block_loss),
         Tensor(block.wo.data.copy())),
    ]
    return checks


def run(seed: int = 0, n_seeds: int = 20) -> list[tuple[str, float]]:
    """Worst check_grad error per check name across n_seeds fresh suites."""
    worst: dict[str, float] = {}
    for s in range(n_seeds):
        for name, f, probe in suite(Rng(seed).child(100 + s)):
            err = check_grad(f, probe)
            worst[name] = max(worst.get(name, 0.0), err)
    return sorted(worst.items())
