"""Loss, optimizer, training loop, and finite-difference gradient checks.

Determinism contract: given the same (network seed, data, TrainConfig) and
single-threaded ops, two runs produce bitwise-identical parameters and a
byte-identical CSV history.  The only RNG in this module is a
numpy default_rng(config.seed) used for epoch shuffling.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import CheckFailure, DimensionError, SpecError, TrainingDiverged
from .layers import Network, activation_signature
from .ssa import SsaConfig, ssa_backward, ssa_forward


@dataclass
class TrainConfig:
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 16
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise SpecError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise SpecError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise SpecError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1 or self.epochs < 1:
            raise SpecError("batch_size and epochs must be >= 1")


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits.

    Uses the max-subtraction trick, so arbitrarily large logits stay
    finite.  Returns (loss, grad) with grad shaped like logits.
    """
    if logits.ndim != 2:
        raise DimensionError(f"logits must be (n, classes), got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise DimensionError(
            f"labels shape {labels.shape} does not match batch {logits.shape[0]}"
        )
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(
            f"labels must lie in [0, {logits.shape[1]}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    loss = -float(log_probs[np.arange(n), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype)


def sgd_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray,
             lr: float, momentum: float, weight_decay: float = 0.0):
    """One momentum-SGD update: v <- mu v + g + wd p;  p <- p - lr v."""
    if not (param.shape == grad.shape == velocity.shape):
        raise DimensionError("param, grad, and velocity shapes must match")
    v = momentum * velocity + grad + weight_decay * param
    return param - lr * v, v


class SgdMomentum:
    """Stateful wrapper applying sgd_step to every parameter of a layer tree."""

    def __init__(self, params, config: TrainConfig):
        self.params = list(params)
        self.config = config
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        c = self.config
        for i, p in enumerate(self.params):
            p.data, self.velocity[i] = sgd_step(
                p.data, p.grad, self.velocity[i], c.lr, c.momentum, c.weight_decay
            )


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float


@dataclass
class History:
    epochs: list[EpochStats] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["epoch,loss,train_acc,test_acc"]
        for e in self.epochs:
            lines.append(
                f"{e.epoch},{e.loss:.9f},{e.train_acc:.6f},{e.test_acc:.6f}"
            )
        return "\n".join(lines) + "\n"

    @property
    def final(self) -> EpochStats:
        return self.epochs[-1]


def predict(net: Network, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Argmax class per sample, eval mode, batched."""
    out = []
    for i in range(0, x.shape[0], batch_size):
        logits = net.forward(x[i : i + batch_size], training=False)
        out.append(logits.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(net: Network, x: np.ndarray, y: np.ndarray,
             batch_size: int = 64) -> float:
    """Classification accuracy in eval mode."""
    if x.shape[0] == 0:
        return float("nan")
    return float((predict(net, x, batch_size) == y).mean())


def train(net: Network, data, config: TrainConfig, log=None) -> History:
    """Momentum-SGD training over ``data`` (train_x/train_y/test_x/test_y).

    Evaluates train and test accuracy after every epoch and returns the
    full history.  Raises TrainingDiverged as soon as a batch loss stops
    being finite.
    """
    rng = np.random.default_rng(config.seed)
    opt = SgdMomentum(net.parameters(), config)
    n = data.train_x.shape[0]
    if n < 1:
        raise SpecError("training set is empty")
    history = History()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            logits = net.forward(data.train_x[idx], training=True)
            loss, grad = cross_entropy(logits, data.train_y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became {loss} at epoch {epoch}; lower the learning rate"
                )
            net.zero_grad()
            net.backward(grad)
            opt.step()
            loss_sum += loss * idx.size
        stats = EpochStats(
            epoch,
            loss_sum / n,
            evaluate(net, data.train_x, data.train_y),
            evaluate(net, data.test_x, data.test_y),
        )
        history.epochs.append(stats)
        if log is not None:
            log(
                f"epoch {stats.epoch:3d}  loss {stats.loss:.4f}  "
                f"train_acc {stats.train_acc:.3f}  test_acc {stats.test_acc:.3f}"
            )
    return history


# ---------------------------------------------------------------------------
# gradient checking


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def numeric_grad(f, x: np.ndarray, eps: float, indices=None) -> np.ndarray:
    """Central-difference derivative of scalar f at the given flat indices.

    Perturbs x in place through a flat view, so x must be contiguous.
    """
    flat = x.reshape(-1)
    indices = list(range(flat.size)) if indices is None else list(indices)
    out = np.zeros(len(indices))
    for j, i in enumerate(indices):
        keep = flat[i]
        flat[i] = keep + eps
        fp = f()
        flat[i] = keep - eps
        fm = f()
        flat[i] = keep
        out[j] = (fp - fm) / (2 * eps)
    return out


def _well_spaced(rng: np.random.Generator, shape, gap: float = 0.01) -> np.ndarray:
    """Random values whose pairwise gaps are at least ``gap`` (no pool ties)."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - n / 2.0) * gap
    return vals.reshape(shape)


def op_gradient_errors(op_name: str, seed: int = 0, eps: float = 1e-5) -> dict[str, float]:
    """Max relative error of one op's analytic backward vs central differences.

    All checks run in float64 on small tensors, full-coordinate sweeps.
    Returns {argument_name: max_rel_err}.
    """
    rng = np.random.default_rng(seed)
    shape = (2, 3, 5, 4, 4)

    def proj_loss(y, r):
        return float((y * r).sum())

    if op_name == "ssa":
        x = rng.standard_normal(shape)
        r = rng.standard_normal(shape)
        cfg = SsaConfig(2)
        analytic = ssa_backward(r, cfg)
        num = numeric_grad(lambda: proj_loss(ssa_forward(x, cfg), r), x, eps)
        return {"input": _max_err(analytic, num)}

    if op_name == "conv":
        kernel = ops.Conv2dKernel(
            rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4),
            stride=2, padding=1, groups=1,
        )
        x = rng.standard_normal(shape)
        y = ops.conv2d_framewise(x, kernel)
        r = rng.standard_normal(y.shape)
        g = ops.conv2d_framewise_backward(x, kernel, r)
        return {
            "input": _max_err(
                g.grad_input,
                numeric_grad(lambda: proj_loss(ops.conv2d_framewise(x, kernel), r), x, eps),
            ),
            "weights": _max_err(
                g.grad_weights,
                numeric_grad(
                    lambda: proj_loss(ops.conv2d_framewise(x, kernel), r),
                    kernel.weights, eps,
                ),
            ),
            "bias": _max_err(
                g.grad_bias,
                numeric_grad(
                    lambda: proj_loss(ops.conv2d_framewise(x, kernel), r),
                    kernel.bias, eps,
                ),
            ),
        }

    if op_name == "bn":
        x = rng.standard_normal(shape)
        gamma = 0.5 + rng.random(shape[1])
        beta = rng.standard_normal(shape[1])
        r = rng.standard_normal(shape)
        errs = {}
        for training in (True, False):
            base = ops.RunningStats(rng.standard_normal(shape[1]),
                                    0.5 + rng.random(shape[1]))

            def fwd():
                stats = copy.deepcopy(base)  # keep numeric evals side-effect free
                y, _ = ops.batch_norm_forward(x, gamma, beta, stats, training)
                return proj_loss(y, r)

            stats = copy.deepcopy(base)
            _, cache = ops.batch_norm_forward(x, gamma, beta, stats, training)
            gi, gg, gb = ops.batch_norm_backward(cache, r)
            mode = "train" if training else "eval"
            errs[f"input_{mode}"] = _max_err(gi, numeric_grad(fwd, x, eps))
            errs[f"gamma_{mode}"] = _max_err(gg, numeric_grad(fwd, gamma, eps))
            errs[f"beta_{mode}"] = _max_err(gb, numeric_grad(fwd, beta, eps))
        return errs

    if op_name == "linear":
        x = rng.standard_normal((6, 5))
        w = rng.standard_normal((5, 4))
        b = rng.standard_normal(4)
        r = rng.standard_normal((6, 4))
        g = ops.linear_backward(x, w, r)
        return {
            "input": _max_err(
                g.grad_input, numeric_grad(lambda: proj_loss(ops.linear(x, w, b), r), x, eps)
            ),
            "weights": _max_err(
                g.grad_weights,
                numeric_grad(lambda: proj_loss(ops.linear(x, w, b), r), w, eps),
            ),
            "bias": _max_err(
                g.grad_bias,
                numeric_grad(lambda: proj_loss(ops.linear(x, w, b), r), b, eps),
            ),
        }

    if op_name == "pool":
        x = _well_spaced(rng, shape)  # gaps >> eps, so argmax never flips
        spec = ops.TemporalPoolSpec(2, 2)
        y, idx = ops.temporal_max_pool(x, spec)
        r = rng.standard_normal(y.shape)
        analytic = ops.temporal_max_pool_backward(idx, r)
        num = numeric_grad(
            lambda: proj_loss(ops.temporal_max_pool(x, spec)[0], r), x, eps
        )
        y3, idx3 = ops.max_pool3d(x, (2, 2, 2), (1, 2, 2))
        r3 = rng.standard_normal(y3.shape)
        analytic3 = ops.max_pool3d_backward(idx3, r3)
        num3 = numeric_grad(
            lambda: proj_loss(ops.max_pool3d(x, (2, 2, 2), (1, 2, 2))[0], r3), x, eps
        )
        return {
            "temporal_input": _max_err(analytic, num),
            "pool3d_input": _max_err(analytic3, num3),
        }

    raise SpecError(f"unknown gradient-check target {op_name!r}")


def _max_err(analytic: np.ndarray, numeric_flat: np.ndarray) -> float:
    a = analytic.reshape(-1)
    return max(
        relative_error(float(ai), float(ni)) for ai, ni in zip(a, numeric_flat)
    )


def grad_check_network(net: Network, x: np.ndarray, labels: np.ndarray,
                       eps: float = 1e-5, samples_per_param: int = 25,
                       seed: int = 0, grad_floor: float = 1e-5) -> dict[str, float]:
    """End-to-end check: analytic parameter gradients vs central differences.

    The loss is mean cross-entropy in training mode with BN running stats
    restored between evaluations.  For each named parameter a random
    subset of coordinates is probed, largest-gradient candidates first.

    Central differences only measure a derivative where one exists.  A
    probe whose +/-eps evaluations land in a different activation region
    (a ReLU sign flip or a pool argmax change) straddles a kink, so it is
    skipped -- the same exclusion the op-level contract makes for pool tie
    points.  ``grad_floor`` is the resolution limit of the comparison:
    coordinates are compared relative to at least this magnitude, since
    float64 loss noise divided by 2*eps makes smaller values unmeasurable.

    Returns {param_name: max_rel_err over accepted probes}.
    """
    rng = np.random.default_rng(seed)
    saved_buffers = [
        (buf, buf.copy())
        for name, buf, trainable in net.state_entries()
        if not trainable
    ]

    def loss_and_grad():
        # BN buffers only receive updates in training mode (they never feed
        # the output), but restoring keeps the net unchanged afterwards.
        for buf, saved in saved_buffers:
            buf[...] = saved
        logits = net.forward(x, training=True)
        return cross_entropy(logits, labels)

    def probe() -> tuple[float, bytes]:
        loss = loss_and_grad()[0]
        return loss, activation_signature(net)

    _, grad = loss_and_grad()
    base_sig = activation_signature(net)
    net.zero_grad()
    net.backward(grad)

    errs: dict[str, float] = {}
    for name, param in net.named_parameters():
        flat = param.data.reshape(-1)
        if not np.shares_memory(flat, param.data):
            raise DimensionError(f"parameter {name} storage is not contiguous")
        ana_flat = param.grad.reshape(-1)
        pool = rng.permutation(param.data.size)[: 4 * samples_per_param]
        resolvable = np.abs(ana_flat[pool]) >= grad_floor
        candidates = np.concatenate([pool[resolvable], pool[~resolvable]])

        worst = 0.0
        accepted = 0
        for i in candidates:
            if accepted == samples_per_param:
                break
            old = flat[i]
            flat[i] = old + eps
            f_plus, sig_plus = probe()
            flat[i] = old - eps
            f_minus, sig_minus = probe()
            flat[i] = old
            if sig_plus != base_sig or sig_minus != base_sig:
                continue
            numeric = (f_plus - f_minus) / (2.0 * eps)
            analytic = float(ana_flat[i])
            denom = max(abs(analytic), abs(numeric), grad_floor)
            worst = max(worst, abs(analytic - numeric) / denom)
            accepted += 1
        if accepted == 0:
            raise CheckFailure(
                f"every probe of {name} crossed an activation kink; "
                "cannot measure a derivative at this point"
            )
        errs[name] = worst
    for buf, saved in saved_buffers:
        buf[...] = saved
    return errs
