"""Gradient-check and oracle suites behind the ``selftest`` command."""

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from src.core import ops
from src.core import reference
from src.core.gradcheck import check_gradients
from src.core.tensor import Tensor
from src.modules.cuecan.module import CueCanConfig, CueCanUnit
from src.modules.network.module import CueClassifier
from src.postproc.blobs import extract_blobs
from src.train.losses import bce_loss, focal_loss
from src.train.metrics import f_score
from src.train.optim import Adam

GRAD_TRIALS = 20
ORACLE_TRIALS = 100
MASK_STEPS = 100
GRAD_TOLERANCE = 1e-4
ORACLE_TOLERANCE = 1e-12
F_TOLERANCE = 0.01

# (precision, recall, f) triples from the classification, region and video tables
REFERENCE_SCORES = (
    (94.77, 87.45, 90.96),
    (94.87, 93.96, 94.41),
    (95.30, 92.20, 93.72),
    (92.48, 90.99, 91.73),
    (96.05, 94.49, 95.26),
    (97.96, 93.22, 95.53),
    (59.0, 60.0, 59.49),
    (37.50, 50.0, 42.85),
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _leaf(rng: np.random.Generator, shape, low=-1.0, high=1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _away_from_zero(rng: np.random.Generator, shape) -> Tensor:
    magnitude = rng.uniform(0.1, 1.0, size=shape)
    return Tensor(magnitude * rng.choice([-1.0, 1.0], size=shape), requires_grad=True)


def _distinct(rng: np.random.Generator, shape) -> Tensor:
    """Values spaced 0.01 apart so finite differences never swap a maximum."""
    n = int(np.prod(shape))
    return Tensor(rng.permutation(n).reshape(shape) * 0.01, requires_grad=True)


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return ops.sum_all(ops.mul(out, Tensor(weights)))


def _op_cases(rng: np.random.Generator) -> dict[str, Callable[[], tuple]]:
    """Each factory returns (forward, inputs) for one random trial."""

    def dims():
        return 1 + rng.integers(0, 2), 2 + rng.integers(0, 4), 2 + rng.integers(0, 4), 1 + rng.integers(0, 3)

    def binary(op):
        def make():
            shape = dims()
            a, b = _leaf(rng, shape), _leaf(rng, shape)
            return (lambda: op(a, b)), [a, b]
        return make

    def relu():
        x = _away_from_zero(rng, dims())
        return (lambda: ops.relu(x)), [x]

    def sigmoid():
        x = _leaf(rng, dims(), -3.0, 3.0)
        return (lambda: ops.sigmoid(x)), [x]

    def concat():
        b, h, w, _ = dims()
        xs = [_leaf(rng, (b, h, w, 1 + rng.integers(0, 3))) for _ in range(1 + rng.integers(0, 3))]
        return (lambda: ops.concat_channels(xs)), xs

    def conv():
        b, h, w, cin = dims()
        k = int(rng.choice([1, 3]))
        x = _leaf(rng, (b, h, w, cin))
        wgt = _leaf(rng, (k, k, cin, 2))
        bias = _leaf(rng, (2,))
        mask = (rng.random((k, k)) > 0.3).astype(np.float64)
        return (lambda: ops.conv2d(x, wgt, bias, mask=mask)), [x, wgt, bias]

    def conv_transpose():
        b, h, w, cin = dims()
        x = _leaf(rng, (b, h, w, cin))
        wgt = _leaf(rng, (4, 4, cin, 2))
        bias = _leaf(rng, (2,))
        return (lambda: ops.conv_transpose2d(x, wgt, bias)), [x, wgt, bias]

    def max_pool():
        b, _, _, c = dims()
        x = _distinct(rng, (b, 2 * (1 + rng.integers(0, 2)), 2 * (1 + rng.integers(0, 2)), c))
        return (lambda: ops.max_pool2d(x)), [x]

    def pool():
        b, h, w, c = dims()
        x = _leaf(rng, (b, h + 2, w + 2, c))
        oh, ow = 1 + rng.integers(0, h + 2), 1 + rng.integers(0, w + 2)
        return (lambda: ops.adaptive_avg_pool(x, oh, ow)), [x]

    def upsample():
        b, h, w, c = dims()
        x = _leaf(rng, (b, h, w, c))
        oh, ow = h + rng.integers(0, 5), w + rng.integers(0, 5)
        return (lambda: ops.bilinear_upsample(x, oh, ow)), [x]

    def head():
        b, h, w, c = dims()
        x = _leaf(rng, (b, h, w, c))
        wgt = _leaf(rng, (c, 2))
        bias = _leaf(rng, (2,))
        return (lambda: ops.linear(ops.global_avg_pool(x), wgt, bias)), [x, wgt, bias]

    return {
        "add": binary(ops.add),
        "sub": binary(ops.sub),
        "mul": binary(ops.mul),
        "relu": relu,
        "sigmoid": sigmoid,
        "concat_channels": concat,
        "conv2d": conv,
        "conv_transpose2d": conv_transpose,
        "max_pool2d": max_pool,
        "adaptive_avg_pool": pool,
        "bilinear_upsample": upsample,
        "global_avg_pool+linear": head,
    }


def check_op_gradients(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, make in _op_cases(rng).items():
        worst = 0.0
        for _ in range(GRAD_TRIALS):
            forward, inputs = make()
            weights = rng.uniform(-1.0, 1.0, size=forward().shape)
            outcome = check_gradients(lambda: _weighted(forward(), weights), inputs, GRAD_TOLERANCE)
            worst = max(worst, outcome.max_rel_error)
        results.append(CheckResult(f"grad {name}", worst < GRAD_TOLERANCE, f"max rel err {worst:.2e}"))
    return results


def check_loss_gradients(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, loss in (("bce_loss", bce_loss), ("focal_loss", focal_loss)):
        worst = 0.0
        for _ in range(GRAD_TRIALS):
            shape = (2, 3, 3, 1) if name == "focal_loss" else (4,)
            z = _leaf(rng, shape, -4.0, 4.0)
            y = (rng.random(shape) > 0.5).astype(np.float64)
            outcome = check_gradients(lambda: loss(z, y), [z], GRAD_TOLERANCE)
            worst = max(worst, outcome.max_rel_error)
        results.append(CheckResult(f"grad {name}", worst < GRAD_TOLERANCE, f"max rel err {worst:.2e}"))
    return results


def check_cuecan_gradients(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(GRAD_TRIALS):
        unit = CueCanUnit(channels=2, kernel_size=int(rng.choice([3, 5])), rng=rng, edge_only=bool(trial % 2))
        for p in unit.parameters():
            if p.mask is None:
                p.data = rng.uniform(-1.0, 1.0, size=p.shape)
            else:
                p.data = rng.uniform(-1.0, 1.0, size=p.shape) * p.mask
        x = _leaf(rng, (1, 8, 8, 2))
        weights = rng.uniform(-1.0, 1.0, size=(1, 8, 8, 2))
        outcome = check_gradients(
            lambda: _weighted(unit(x), weights), [x] + unit.parameters(), GRAD_TOLERANCE,
            max_entries=24, rng=rng,
        )
        worst = max(worst, outcome.max_rel_error)
    return CheckResult("grad cuecan unit 1x8x8x2", worst < GRAD_TOLERANCE, f"max rel err {worst:.2e}")


def check_oracles(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = {"conv2d": 0.0, "adaptive_avg_pool": 0.0, "bilinear_upsample": 0.0, "focal_loss": 0.0}
    blob_mismatches = 0

    for _ in range(ORACLE_TRIALS):
        b, h, w = 1 + rng.integers(0, 2), 2 + rng.integers(0, 5), 2 + rng.integers(0, 6)
        cin, cout, k = 1 + rng.integers(0, 3), 1 + rng.integers(0, 2), int(rng.choice([1, 3, 5]))
        x = rng.normal(size=(b, h, w, cin))
        wgt = rng.normal(size=(k, k, cin, cout))
        bias = rng.normal(size=cout)
        mask = (rng.random((k, k)) > 0.3).astype(np.float64)
        got = ops.conv2d(Tensor(x), Tensor(wgt), Tensor(bias), mask=mask).data
        worst["conv2d"] = max(worst["conv2d"], np.abs(got - reference.conv2d_loop(x, wgt, bias, mask)).max())

        oh, ow = 1 + rng.integers(0, h), 1 + rng.integers(0, w)
        got = ops.adaptive_avg_pool(Tensor(x), oh, ow).data
        worst["adaptive_avg_pool"] = max(
            worst["adaptive_avg_pool"], np.abs(got - reference.adaptive_pool_loop(x, oh, ow)).max()
        )

        oh, ow = h + rng.integers(0, 6), w + rng.integers(0, 6)
        got = ops.bilinear_upsample(Tensor(x), oh, ow).data
        worst["bilinear_upsample"] = max(
            worst["bilinear_upsample"], np.abs(got - reference.bilinear_loop(x, oh, ow)).max()
        )

        z = rng.uniform(-6.0, 6.0, size=(h, w))
        y = (rng.random((h, w)) > 0.7).astype(np.float64)
        alpha, gamma = rng.uniform(0.05, 0.95), float(rng.choice([0.0, 1.0, 2.0, 3.5]))
        got = focal_loss(Tensor(z), y, alpha, gamma).item()
        worst["focal_loss"] = max(worst["focal_loss"], abs(got - reference.focal_loop(z, y, alpha, gamma)))

        prob = rng.random((8 + rng.integers(0, 9), 8 + rng.integers(0, 9)))
        blobs = extract_blobs(prob, 0.6, min_area=2)
        got_boxes = sorted((b.box, b.area) for b in blobs)
        if got_boxes != sorted(reference.blob_boxes_loop(prob > 0.6, min_area=2)):
            blob_mismatches += 1

    results = [
        CheckResult(f"oracle {name}", err <= ORACLE_TOLERANCE, f"max abs err {err:.2e}")
        for name, err in worst.items()
    ]
    results.append(CheckResult("oracle extract_blobs", blob_mismatches == 0, f"{blob_mismatches} mismatches"))
    return results


def check_mask_persistence(seed: int = 0) -> CheckResult:
    """Train a tiny "333" classifier and confirm masked taps never move."""
    rng = np.random.default_rng(seed)
    model = CueClassifier(rng, CueCanConfig.parse("333"))
    optimizer = Adam(model.parameters(), lr=1e-3)
    images = rng.random((2, 32, 32, 3))
    labels = np.array([1.0, 0.0])
    for _ in range(MASK_STEPS):
        optimizer.zero_grad()
        loss = bce_loss(model(Tensor(images)), labels)
        loss.backward()
        optimizer.step()

    leaked = 0
    for param, state in zip(optimizer.params, optimizer.states):
        if param.mask is None:
            continue
        masked = param.mask == 0
        leaked += int(np.count_nonzero(param.data[masked]))
        leaked += int(np.count_nonzero(state.m[masked]) + np.count_nonzero(state.v[masked]))
    return CheckResult(f"mask persistence over {MASK_STEPS} Adam steps", leaked == 0, f"{leaked} nonzero masked entries")


def check_reference_scores() -> CheckResult:
    worst = max(abs(f_score(p, r) - f) for p, r, f in REFERENCE_SCORES)
    return CheckResult("f-score reproduction", worst <= F_TOLERANCE, f"max deviation {worst:.4f}")


def run_selftest(seed: int = 0, verbose: bool = True) -> bool:
    """Run every suite; True when all checks pass."""
    suites: list[Callable[[], list[CheckResult]]] = [
        lambda: check_op_gradients(seed),
        lambda: check_loss_gradients(seed),
        lambda: [check_cuecan_gradients(seed)],
        lambda: check_oracles(seed),
        lambda: [check_mask_persistence(seed)],
        lambda: [check_reference_scores()],
    ]
    start = time.perf_counter()
    results: list[CheckResult] = []
    for i, suite in enumerate(suites, 1):
        batch = suite()
        results.extend(batch)
        if verbose:
            for r in batch:
                status = "ok" if r.passed else "FAILED"
                print(f"[{i}/{len(suites)}] {r.name}: {status} ({r.detail})")

    failed = [r for r in results if not r.passed]
    if verbose:
        elapsed = time.perf_counter() - start
        print(f"\n{len(results) - len(failed)}/{len(results)} checks passed in {elapsed:.1f}s")
    return not failed
