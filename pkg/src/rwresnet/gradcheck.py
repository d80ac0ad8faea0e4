"""Finite-difference verification of every analytic backward pass.

Each case builds float64 inputs and parameters from a seeded generator and a
scalar loss ``sum(d_out * forward(...))`` (or the loss itself for
cross-entropy).  The analytic gradients are compared elementwise against
central differences ``(f(x+h) - f(x-h)) / 2h`` using the relative error
``|a - n| / max(1e-8, |a| + |n|)``.

Loss callables may return the per-element terms of the loss instead of their
sum; the two evaluations are then differenced elementwise before reducing,
which keeps untouched terms from contributing rounding noise.

The built-in cases evaluate the finite-difference side in ``np.longdouble``
(on the same float64 values) while the analytic side runs in float64, so the
reference is not limited by float64 rounding on near-cancelling entries.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .backbone import BasicBlock, Head
from .frontend import Conv1dBlock, Conv1dResBlock, Stem
from .nn import BatchNorm, Conv1d, Conv2d, Module

F64 = np.float64
ORACLE = np.longdouble


def rel_error(analytic, numeric) -> float:
    analytic, numeric = np.asarray(analytic, F64), np.asarray(numeric, F64)
    if analytic.shape != numeric.shape:
        raise ValueError(f"gradient shape {analytic.shape} != {numeric.shape}")
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_grad(loss: Callable[[], "float | np.ndarray"], x: np.ndarray, step: float) -> np.ndarray:
    """Central differences of ``sum(loss())`` w.r.t. every element of ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=F64)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss()
        flat[i] = orig - step
        down = loss()
        flat[i] = orig
        gflat[i] = np.sum(np.asarray(up) - np.asarray(down)) / (2 * step)
    return g


def gradcheck(loss, grads, arrays: dict[str, np.ndarray], step: float = 1e-5) -> float:
    """Max relative error between ``grads()`` and central differences of ``loss()``.

    ``arrays`` maps names to the float64 arrays that ``loss`` and ``grads``
    read; ``grads()`` must return a dict with the same keys.
    """
    analytic = grads()
    if set(analytic) != set(arrays):
        raise ValueError(f"analytic grads cover {sorted(analytic)}, expected {sorted(arrays)}")
    return max(rel_error(analytic[k], numeric_grad(loss, arrays[k], step)) for k in arrays)


# ---------------------------------------------------------------------------
# cases


def _away_from_zero(x, margin=1e-2):
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin * 2 + x, x)


def _distinct(rng, shape):
    """Values whose pairwise gaps exceed any finite-difference step used here."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.05 + rng.uniform(0, 1e-3, n)).reshape(shape) - n * 0.025


def _op_case(forward, backward, inputs: dict, params: dict, rng):
    """Case over a functional op: ``forward(x, *params) -> (out, ctx)``."""
    arrays = {k: v.astype(ORACLE) for k, v in {**inputs, **params}.items()}
    out, _ = forward(*inputs.values(), *params.values())
    d_out = rng.standard_normal(out.shape)

    def loss():
        return d_out * forward(*arrays.values())[0]

    def grads():
        _, ctx = forward(*(v.astype(F64) for v in arrays.values()))
        g = backward(ctx, d_out)
        out = {"x": g.d_input}
        for k in params:
            out[k] = g.d_params[k]
        return out

    return loss, grads, arrays


def conv1d_case(rng, B=2, cin=3, L=9, cout=2, K=3, stride=1, padding=1, dilation=1):
    def fwd(x, w, b):
        return T.conv1d_forward(x, w, b, stride, padding, dilation)

    return _op_case(
        fwd, T.conv1d_backward,
        {"x": rng.standard_normal((B, cin, L))},
        {"weight": rng.standard_normal((cout, cin, K)), "bias": rng.standard_normal(cout)},
        rng,
    )


def conv2d_case(rng, B=2, cin=2, H=5, W=4, cout=3, K=3, stride=1, padding=1):
    def fwd(x, w, b):
        return T.conv2d_forward(x, w, b, stride, padding)

    return _op_case(
        fwd, T.conv2d_backward,
        {"x": rng.standard_normal((B, cin, H, W))},
        {"weight": rng.standard_normal((cout, cin, K, K)), "bias": rng.standard_normal(cout)},
        rng,
    )


def batchnorm_case(rng, shape=(4, 3, 8), mode="train"):
    C = shape[1]
    running_mean = rng.standard_normal(C)
    running_var = rng.uniform(0.5, 2.0, C)

    def fwd(x, gamma, beta):
        state = T.BnState(gamma, beta, running_mean.copy(), running_var.copy(), mode=mode)
        return T.batchnorm_forward(x, state)

    return _op_case(
        fwd, T.batchnorm_backward,
        {"x": rng.standard_normal(shape) * 2 + 0.5},
        {"gamma": rng.uniform(0.5, 1.5, C), "beta": rng.standard_normal(C)},
        rng,
    )


def maxpool1d_case(rng, shape=(2, 3, 12), size=4):
    return _op_case(
        lambda x: T.maxpool1d_forward(x, size), T.maxpool1d_backward,
        {"x": _distinct(rng, shape)}, {}, rng,
    )


def relu_case(rng, shape=(3, 4, 5)):
    return _op_case(T.relu_forward, T.relu_backward, {"x": _away_from_zero(rng.standard_normal(shape))}, {}, rng)


def avgpool_case(rng, shape=(2, 3, 4, 5)):
    return _op_case(
        T.adaptive_avg_pool_1x1_forward, T.adaptive_avg_pool_1x1_backward,
        {"x": rng.standard_normal(shape)}, {}, rng,
    )


def linear_case(rng, B=4, din=3, dout=5):
    return _op_case(
        T.linear_forward, T.linear_backward,
        {"x": rng.standard_normal((B, din))},
        {"weight": rng.standard_normal((dout, din)), "bias": rng.standard_normal(dout)},
        rng,
    )


def cross_entropy_case(rng, B=8):
    arrays = {"logits": (rng.standard_normal((B, 2)) * 2).astype(ORACLE)}
    labels = rng.integers(0, 2, B)

    def loss():
        # per-sample terms of the mean cross-entropy
        return -T.log_softmax(arrays["logits"])[np.arange(B), labels] / B

    def grads():
        return {"logits": T.cross_entropy_logits(arrays["logits"].astype(F64), labels)[1]}

    return loss, grads, arrays


def bias_before_bn(module: Module) -> set[str]:
    """Names of conv biases feeding straight into a train-mode batch norm.

    Their true gradient is identically zero (BN removes any per-channel
    offset), so a relative-error comparison only measures rounding noise.
    """
    names = set()
    for prefix, m in module.modules():
        kids = list(m.children.items())
        for (name, child), (_, nxt) in zip(kids, kids[1:]):
            if isinstance(child, (Conv1d, Conv2d)) and isinstance(nxt, BatchNorm):
                names.add(f"{prefix}{name}.bias")
    return names


def module_case(factory: Callable[..., Module], x: np.ndarray, rng):
    """Case over a composite module in train mode; checks the input and every
    parameter except the structurally-zero biases of :func:`bias_before_bn`.

    ``factory(dtype)`` builds the module; one float64 instance computes the
    analytic gradients, an extended-precision twin the finite differences.
    """
    module, oracle = factory(F64).train(), factory(ORACLE).train()
    for _, p in module.named_parameters():
        p[...] = rng.standard_normal(p.shape) * 0.5 + (1.0 if p.ndim == 1 else 0.0)
    oracle.load_state_dict(module.state_dict())
    skip = bias_before_bn(module)
    arrays = {"x": x.astype(ORACLE), **{k: v for k, v in oracle.named_parameters() if k not in skip}}
    d_out = rng.standard_normal(module.forward(x).shape)

    def loss():
        return d_out * oracle.forward(arrays["x"])

    def grads():
        module.load_state_dict(oracle.state_dict())
        module.forward(arrays["x"].astype(F64))
        out = {"x": module.backward(d_out)}
        out.update((k, g) for k, g in module.named_grads() if k not in skip)
        return out

    return loss, grads, arrays


@dataclass(frozen=True)
class Case:
    name: str
    build: Callable[[np.random.Generator], tuple]
    threshold: float
    step: float = 1e-5


CASES = [
    Case("conv1d", lambda r: conv1d_case(r), 1e-6),
    Case("conv1d_5elem", lambda r: conv1d_case(r, B=1, cin=1, L=5, cout=1), 1e-6),
    Case("conv1d_dilated", lambda r: conv1d_case(r, L=11, padding=2, dilation=2), 1e-6),
    Case("conv1d_strided", lambda r: conv1d_case(r, cin=1, L=20, cout=3, K=5, stride=5, padding=2), 1e-6),
    Case("conv2d", lambda r: conv2d_case(r), 1e-6),
    Case("conv2d_strided", lambda r: conv2d_case(r, H=7, W=6, stride=2), 1e-6),
    Case("conv2d_1x1_strided", lambda r: conv2d_case(r, H=5, W=5, K=1, stride=2, padding=0), 1e-6),
    Case("batchnorm_train", lambda r: batchnorm_case(r), 1e-5),
    Case("batchnorm_train_2d", lambda r: batchnorm_case(r, (3, 2, 4, 3)), 1e-5),
    Case("batchnorm_eval", lambda r: batchnorm_case(r, mode="eval"), 1e-5),
    Case("maxpool1d", maxpool1d_case, 1e-6),
    Case("relu", relu_case, 1e-6),
    Case("adaptive_avg_pool", avgpool_case, 1e-6),
    Case("linear", linear_case, 1e-6),
    Case("cross_entropy", cross_entropy_case, 1e-6),
]

# Composite blocks chain BN with ReLU/max-pool kinks, so a smaller step keeps
# the perturbation from crossing a kink; they carry the BN threshold.
BLOCK_CASES = [
    Case("stem", lambda r: module_case(lambda d: Stem(3, d), r.standard_normal((3, 1, 20)), r), 1e-5, 1e-6),
    Case("conv1d_block", lambda r: module_case(lambda d: Conv1dBlock(2, 3, d), r.standard_normal((3, 2, 8)), r), 1e-5, 1e-6),
    Case("conv1d_resblock", lambda r: module_case(lambda d: Conv1dResBlock(2, 3, d), r.standard_normal((3, 2, 8)), r), 1e-5, 1e-6),
    Case("basic_block", lambda r: module_case(lambda d: BasicBlock(2, 2, 1, d), r.standard_normal((2, 2, 4, 4)), r), 1e-5, 1e-6),
    Case("basic_block_proj", lambda r: module_case(lambda d: BasicBlock(2, 3, 2, d), r.standard_normal((2, 2, 5, 4)), r), 1e-5, 1e-6),
    Case("head", lambda r: module_case(lambda d: Head(4, 2, d), r.standard_normal((3, 4)), r), 1e-6),
]


@dataclass
class CaseResult:
    name: str
    max_error: float
    threshold: float
    seeds: int

    @property
    def passed(self) -> bool:
        return self.max_error < self.threshold


def run_case(case: Case, seeds: int = 20, step: float | None = None) -> CaseResult:
    worst = 0.0
    for seed in range(seeds):
        loss, grads, arrays = case.build(np.random.default_rng(seed))
        worst = max(worst, gradcheck(loss, grads, arrays, step or case.step))
    return CaseResult(case.name, worst, case.threshold, seeds)


def run_suite(seeds: int = 20, include_blocks: bool = True) -> list[CaseResult]:
    cases = CASES + (BLOCK_CASES if include_blocks else [])
    return [run_case(c, seeds) for c in cases]
