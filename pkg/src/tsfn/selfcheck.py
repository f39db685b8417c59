"""Randomized self-checks against the brute-force oracles and central differences.

Both suites return a list of :class:`Check` rows so the command line and the
test-suite can share them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import oracles
from .conv import ConvSpec, conv1d_temporal, conv2d_spatial, conv3d_reference
from .gradcheck import analytic_grads, grad_check
from .losses import (Batch, LossWeights, ViewGenerator, composite_loss, cross_entropy,
                     distance_loss, symmetric_kl, view_variance_loss)
from .metrics import average_precision
from .model import ModelConfig, ModelParams, init_params, r2plus1d_block_forward
from .synth import SynthConfig, render_gesture
from .tensor import (Tensor, concat, global_avg_pool, linear, log, mean, sigmoid, softmax,
                     tsum)


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: {self.value:.3g} (tolerance {self.tolerance:g})"


def _max_err(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) if np.size(a) else 0.0


def _np_sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


# -- random micro-instances -----------------------------------------------------

def random_conv1d_case(rng: np.random.Generator):
    C, K = rng.integers(1, 5, size=2)
    T = int(rng.integers(1, 9))
    padding = str(rng.choice(["causal", "same", "valid"]))
    dilation = int(rng.integers(1, 4))
    d_t = int(rng.integers(1, 5))
    if padding == "valid":
        while dilation * (d_t - 1) + 1 > T:
            d_t, dilation = max(1, d_t - 1), max(1, dilation - 1)
    spec = ConvSpec(int(K), int(C), d_t, 1, dilation, int(rng.integers(1, 3)), padding)
    return rng.normal(size=(C, T)), rng.normal(size=(K, C, d_t)), rng.normal(size=K), spec


def random_conv2d_case(rng: np.random.Generator):
    C, K = rng.integers(1, 5, size=2)
    H, W = rng.integers(1, 9, size=2)
    padding = str(rng.choice(["same", "valid"]))
    k = int(rng.choice([1, 3, 5]))
    if padding == "valid":
        while k > min(H, W):
            k -= 2
    spec = ConvSpec(int(K), int(C), 1, k, 1, int(rng.integers(1, 3)), padding)
    return rng.normal(size=(C, H, W)), rng.normal(size=(K, C, k, k)), rng.normal(size=K), spec


def random_conv3d_case(rng: np.random.Generator):
    C, K = rng.integers(1, 5, size=2)
    T, H, W = rng.integers(1, 7, size=3)
    d = int(rng.integers(1, T + 1))
    k = int(rng.integers(1, min(H, W) + 1))
    return rng.normal(size=(C, T, H, W)), rng.normal(size=(K, C, d, k, k))


# -- oracle suite -----------------------------------------------------------------

def conv_oracle_errors(seed: int = 0, instances: int = 100) -> dict[str, float]:
    """Max absolute error of each vectorized conv vs its loop oracle."""
    rng = np.random.default_rng(seed)
    errs = {"conv1d_temporal": 0.0, "conv2d_spatial": 0.0, "conv3d_reference": 0.0}
    for _ in range(instances):
        x, w, b, spec = random_conv1d_case(rng)
        got = conv1d_temporal(Tensor(x), Tensor(w), Tensor(b), spec).data
        want = oracles.conv1d_loops(x, w, b, spec.dilation, spec.stride, spec.padding)
        errs["conv1d_temporal"] = max(errs["conv1d_temporal"], _max_err(got, want))

        x, w, b, spec = random_conv2d_case(rng)
        got = conv2d_spatial(Tensor(x), Tensor(w), Tensor(b), spec).data
        want = oracles.conv2d_loops(x, w, b, spec.stride, spec.padding)
        errs["conv2d_spatial"] = max(errs["conv2d_spatial"], _max_err(got, want))

        x, w = random_conv3d_case(rng)
        got = conv3d_reference(Tensor(x), Tensor(w)).data
        errs["conv3d_reference"] = max(errs["conv3d_reference"],
                                       _max_err(got, oracles.conv3d_loops(x, w)))
    return errs


def factorization_error(seed: int = 0, instances: int = 50) -> float:
    """R(2+1)D block with an identity temporal kernel vs sigmoid(conv2d(sigmoid(x)))."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        C, K = (int(v) for v in rng.integers(1, 5, size=2))
        T = int(rng.integers(1, 5))
        H, W = (int(v) for v in rng.integers(1, 8, size=2))
        k = int(rng.choice([1, 3]))
        stride = int(rng.integers(1, 3))
        t_spec = ConvSpec(C, C, 1, 1, 1, 1, "same")
        s_spec = ConvSpec(K, C, 1, k, 1, stride, "same")
        x = rng.normal(scale=2.0, size=(C, T, H, W))
        w_s, b_s = rng.normal(size=(K, C, k, k)), rng.normal(size=K)
        delta = np.eye(C)[:, :, None]
        got = r2plus1d_block_forward(Tensor(x), (Tensor(delta), Tensor(np.zeros(C)),
                                                 Tensor(w_s), Tensor(b_s)), (t_spec, s_spec)).data
        inner = _np_sigmoid(x)
        frames = [oracles.conv2d_loops(inner[:, t], w_s, b_s, stride, "same") for t in range(T)]
        want = _np_sigmoid(np.stack(frames, axis=1))
        worst = max(worst, _max_err(got, want))
    return worst


def random_ranking(rng: np.random.Generator):
    n = int(rng.integers(1, 9))
    scores = rng.integers(0, 4, size=n).astype(float) / 4.0  # coarse grid forces ties
    labels = rng.random(n) < 0.5
    labels[rng.integers(n)] = True
    return scores, labels


def map_oracle_error(seed: int = 0, instances: int = 100) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        scores, labels = random_ranking(rng)
        got = average_precision(list(zip(scores, labels)))
        worst = max(worst, abs(got - oracles.average_precision_bruteforce(list(scores), list(labels))))
    return worst


def loss_identity_checks(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    hand = distance_loss([4.0, 28.0], Tensor(np.array([0.5, 1.0]))).item()
    out.append(Check("distance loss hand case == 15", abs(hand - 15.0), 0.0, hand == 15.0))
    near = distance_loss([4.0], Tensor(np.array([0.5]))).item()
    far = distance_loss([28.0], Tensor(np.array([0.5]))).item()
    out.append(Check("distance weight ratio 28m/4m == 7", abs(far / near - 7.0), 0.0, far / near == 7.0))

    ce = rng.random(5) * 3
    d_one = distance_loss(np.ones(5), Tensor(ce)).item()
    err = abs(d_one - float(np.mean(ce)))
    out.append(Check("unit distances: distance loss == mean CE", err, 1e-12, err <= 1e-12))

    view_ce = rng.random((4, 3)) * 2
    got = view_variance_loss(Tensor(view_ce)).item()
    want = float(np.mean([3 * oracles.population_variance(list(r)) for r in view_ce]))
    err = abs(got - want)
    out.append(Check("robustness term == M * population variance", err, 1e-12, err <= 1e-12))
    same = view_variance_loss(Tensor(np.repeat(rng.random((4, 1)), 3, axis=1))).item()
    out.append(Check("identical view CEs: robustness term == 0", abs(same), 1e-12, abs(same) <= 1e-12))

    p, q = rng.dirichlet(np.ones(6), size=2)
    err = abs(symmetric_kl(Tensor(p), Tensor(q)).item() - oracles.sym_kl_sum(p, q))
    out.append(Check("symmetric KL vs scalar oracle", err, 1e-12, err <= 1e-12))

    z = rng.normal(scale=30, size=6)
    err = _max_err(softmax(Tensor(z)).data, oracles.softmax_mp(z))
    out.append(Check("softmax vs 50-digit oracle", err, 1e-15, err <= 1e-15))
    zs = np.array([-800.0, -30.0, -1.0, 0.0, 2.5, 40.0, 800.0])
    err = _max_err(sigmoid(Tensor(zs)).data, [oracles.sigmoid_mp(v) for v in zs])
    out.append(Check("sigmoid vs 50-digit oracle", err, 1e-15, err <= 1e-15))
    return out


def run_oracle_suite(seed: int = 0, instances: int = 100) -> list[Check]:
    checks = [Check(f"{name} vs loop oracle ({instances} cases)", err, 1e-12, err <= 1e-12)
              for name, err in conv_oracle_errors(seed, instances).items()]
    err = factorization_error(seed, 50)
    checks.append(Check("R(2+1)D block with delta temporal kernel", err, 1e-12, err <= 1e-12))
    err = map_oracle_error(seed, instances)
    checks.append(Check(f"average precision vs brute force ({instances} cases)", err, 1e-9, err <= 1e-9))
    ap = average_precision([(0.9, True), (0.8, False), (0.7, True), (0.1, False)])
    checks.append(Check("AP with positives at ranks 1 and 3 of 4", abs(ap - 5 / 6), 1e-4,
                        abs(ap - 5 / 6) <= 1e-4))
    checks.extend(loss_identity_checks(seed))
    return checks


# -- finite-difference suite --------------------------------------------------------

MICRO_SYNTH = SynthConfig(T=8, H=8, W=8)


def micro_config(seed: int = 0, **overrides) -> ModelConfig:
    kw = dict(frames=8, height=8, width=8, encoder_channels=[2, 3], tcn_channels=[3, 3, 3],
              tcn_dilations=[1, 2, 2], r2plus1d_channels=[2, 3], fc_widths=[5, 4, 6],
              input_norm="clip", init_gain=2.0, init_centered=True, seed=seed)
    kw.update(overrides)
    return ModelConfig(**kw)


def micro_batch(seed: int = 0, n: int = 2, views: int = 2) -> Batch:
    """``n`` rendered micro clips with fixed degraded views attached."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(6)[:n]
    clips = np.stack([render_gesture(int(c), seed + i, MICRO_SYNTH).frames
                      for i, c in enumerate(labels)])
    distances = rng.choice(np.arange(4, 29), size=n, replace=False).astype(float)
    batch = Batch(clips, labels, distances, np.arange(n, dtype=np.uint64) + seed)
    if views >= 2:
        batch.views = ViewGenerator(MICRO_SYNTH).batch_views(batch, views)
    return batch


def composite_gradcheck(seed: int = 0, step: float = 1e-5) -> tuple[float, float]:
    """(max relative error, error reported with one corrupted gradient entry)."""
    params = init_params(micro_config(seed))
    batch = micro_batch(seed)
    weights = LossWeights(alpha=0.1, beta=0.05, gamma=0.1, views=2)
    tensors = params.tensors()

    def f():
        return composite_loss(params, batch, weights).total

    grads = analytic_grads(f, tensors)
    err = grad_check(f, tensors, step=step, analytic=grads)
    # corrupt the largest-magnitude gradient entry
    which = int(np.argmax([np.abs(g).max() for g in grads]))
    bad = [g.copy() for g in grads]
    flat = bad[which].reshape(-1)
    flat[np.argmax(np.abs(flat))] *= 2.0
    fault = grad_check(f, [tensors[which]], step=step, analytic=[bad[which]])
    return err, fault


def op_gradchecks(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    out = {}

    def leaf(*shape):
        return Tensor(rng.normal(size=shape), requires_grad=True)

    x, w, b = leaf(2, 3, 7), leaf(4, 3, 3), leaf(4)
    for padding in ("causal", "same", "valid"):
        spec = ConvSpec(4, 3, 3, 1, 2, 1, padding)
        out[f"conv1d_temporal[{padding}]"] = grad_check(
            lambda: tsum(sigmoid(conv1d_temporal(x, w, b, spec))), [x, w, b])
    x, w, b = leaf(2, 2, 3, 5, 6), leaf(3, 2, 3, 3), leaf(3)
    for stride, padding in ((1, "valid"), (2, "same")):
        spec = ConvSpec(3, 2, 1, 3, 1, stride, padding)
        out[f"conv2d_spatial[stride {stride}, {padding}]"] = grad_check(
            lambda: tsum(sigmoid(conv2d_spatial(x, w, b, spec))), [x, w, b])
    x, w, b = leaf(3, 5), leaf(4, 5), leaf(4)
    target = rng.dirichlet(np.ones(4), size=3)
    out["linear+softmax+log"] = grad_check(
        lambda: tsum(log(softmax(linear(x, w, b), axis=-1)) * target), [x, w, b])
    a, c = leaf(2, 3, 4, 4), leaf(2, 2, 4, 4)
    out["concat+global_avg_pool"] = grad_check(
        lambda: tsum(sigmoid(global_avg_pool(concat([a, c], axis=1), (2, 3))) ** 2), [a, c])
    q = leaf(4, 6)
    y = rng.integers(0, 6, size=4)
    out["cross_entropy"] = grad_check(lambda: mean(cross_entropy(softmax(q, axis=-1), y)), [q])
    return out


def run_gradcheck_suite(seed: int = 0, tolerance: float = 1e-4) -> list[Check]:
    checks = [Check(f"grad {name}", err, tolerance, err < tolerance)
              for name, err in op_gradchecks(seed).items()]
    err, fault = composite_gradcheck(seed)
    checks.append(Check("grad composite loss (micro model, batch 2, M=2)", err, tolerance,
                        err < tolerance))
    checks.append(Check("corrupted gradient detected (must exceed 0.3)", fault, 0.3, fault > 0.3))
    return checks
