"""Per-session training: classifier updates, noise-generator optimization.

A session runs in a fixed order: fold the task into the classifier with the
noise state carried over from previous sessions, grow one noise generator
per layer, initialize the mix weights from prototype similarity, train the
new generators (plus mix weights and an auxiliary classifier) by gradient
descent on a residual loss, then redo the classifier update from the
pre-session state with the freshly trained noise. The auxiliary classifier
is discarded afterwards and the new generators freeze.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .model import ContinualModel, ForwardTape, build_model, forward_pass
from .numeric import NumericalError, SeededRng, derive_seed, finite_difference_gradient, softmax
from .pinoise import (
    MixtureStrategy,
    NoiseGenerator,
    compute_prototype,
    init_mix_weights,
    new_generator,
    prototype_similarities,
)
from .report import SessionReport, evaluate

LOSS_MODES = ("residual-corrected-ce", "residual-mse")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    lr_init: float = 0.001
    momentum: float = 0.9
    tau: float = 2.0
    schedule: str = "cosine"
    loss_mode: str = "residual-corrected-ce"
    grad_clip: float = 10.0  # global norm; 0 disables clipping
    init_scale: float = 0.0001

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not self.lr_init > 0:
            raise ValueError("lr_init must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.schedule != "cosine":
            raise ValueError(f"unsupported schedule {self.schedule!r}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be non-negative")
        if self.init_scale < 0:
            raise ValueError("init_scale must be non-negative")


def cosine_lr(epoch: int, total_epochs: int, lr_init: float) -> float:
    """Cosine schedule from lr_init at epoch 0 down to 0 at total_epochs."""
    if total_epochs < 1:
        raise ValueError("total_epochs must be positive")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr_init * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0


def sgd_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    lr: float,
    momentum: float,
) -> None:
    """Momentum SGD, applied in place to every parameter array."""
    for key, p in params.items():
        v = velocity[key]
        v *= momentum
        v += grads[key]
        p -= lr * v


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their joint norm is at most max_norm (0 = off)."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over rows and its gradient with respect to logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    norm = exp.sum(axis=1, keepdims=True)
    log_norm = np.log(norm[:, 0])
    n = logits.shape[0]
    loss = float(np.mean(log_norm - (shifted * targets).sum(axis=1)))
    d_logits = (exp / norm - targets) / n
    return loss, d_logits


def residual_loss(
    features: np.ndarray,
    aux_weights: np.ndarray,
    targets: np.ndarray,
    logit_offset: np.ndarray | None = None,
    mode: str = "residual-corrected-ce",
) -> float:
    """Training loss of the auxiliary classifier on top of frozen logits.

    ``logit_offset`` holds the frozen classifier's logits and is treated as
    a constant: corrected cross-entropy classifies ``features @ aux_weights
    + offset`` against the targets, while the least-squares mode fits
    ``features @ aux_weights`` to the residual ``targets - offset``.
    """
    loss, _, _ = residual_loss_grads(features, aux_weights, targets, logit_offset, mode)
    return loss


def residual_loss_grads(
    features: np.ndarray,
    aux_weights: np.ndarray,
    targets: np.ndarray,
    logit_offset: np.ndarray | None,
    mode: str,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus gradients for the auxiliary weights and the features.

    The offset term contributes no gradient (it is a captured constant), so
    the feature gradient flows only through the auxiliary product.
    """
    if mode not in LOSS_MODES:
        raise ValueError(f"loss mode must be one of {LOSS_MODES}")
    n = features.shape[0]
    if targets.shape[0] != n or (logit_offset is not None and logit_offset.shape[0] != n):
        raise ValueError("row mismatch in loss inputs")
    pred = features @ aux_weights
    if mode == "residual-corrected-ce":
        logits = pred if logit_offset is None else pred + logit_offset
        if not np.all(np.isfinite(logits)):
            raise NumericalError("non-finite logits in loss")
        loss, d_logits = softmax_cross_entropy(logits, targets)
        d_aux = features.T @ d_logits
        d_features = d_logits @ aux_weights.T
        return loss, d_aux, d_features
    residual = targets if logit_offset is None else targets - logit_offset
    diff = pred - residual
    if not np.all(np.isfinite(diff)):
        raise NumericalError("non-finite residual in loss")
    loss = float(np.sum(diff * diff) / n)
    d_pred = 2.0 * diff / n
    return loss, features.T @ d_pred, d_pred @ aux_weights.T


def direct_ce_grads(
    features: np.ndarray, class_weights: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Cross-entropy straight through the frozen classifier.

    Used by the mixture-ablation variants, which train the noise generators
    without an auxiliary classifier: the gradient reaches the features
    through the fixed weight matrix, which itself receives no update.
    """
    logits = features @ class_weights
    loss, d_logits = softmax_cross_entropy(logits, targets)
    return loss, d_logits @ class_weights.T


def collect_trainable(
    model: ContinualModel, aux_weights: np.ndarray | None, include_mix: bool
) -> dict[str, np.ndarray]:
    """Name -> array view of everything the current session may update."""
    if model.layers is None:
        raise ValueError("baseline model has nothing to train")
    params: dict[str, np.ndarray] = {}
    for l, layer in enumerate(model.layers):
        gen = layer.generators[-1]
        if gen.frozen:
            continue
        params[f"gen{l}.mean_w"] = gen.mean_weight
        params[f"gen{l}.mean_b"] = gen.mean_bias
        params[f"gen{l}.scale_w"] = gen.scale_weight
        params[f"gen{l}.scale_b"] = gen.scale_bias
    if include_mix:
        if model.shared_mix_weights:
            params["omega"] = model.layers[0].mix_weights
        else:
            for l, layer in enumerate(model.layers):
                params[f"omega{l}"] = layer.mix_weights
    if aux_weights is not None:
        params["aux"] = aux_weights
    return params


def backward(
    model: ContinualModel,
    tape: ForwardTape,
    d_features: np.ndarray,
    params: dict[str, np.ndarray],
) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of the loss through the recorded forward pass.

    Gradients flow through every frozen map (buffer projection, blocks,
    up/down projections, old generators) but accumulate only into the arrays
    named in ``params``: the newest generator per layer, the mix weights,
    and the auxiliary classifier (whose gradient the loss supplies directly).
    """
    grads = {key: np.zeros_like(p) for key, p in params.items()}
    d_cur = (d_features * tape.relu_mask) @ model.buffer.projection.T
    for l in reversed(range(model.backbone.depth)):
        cache = tape.layer_caches[l]
        d_r = d_cur
        if cache is not None:
            layer = model.layers[l]
            count = len(layer.generators)
            d_mixed = d_cur @ layer.up_proj.T
            strategy = model.strategy
            if strategy is MixtureStrategy.LEARNED_OMEGA:
                omega_key = "omega" if model.shared_mix_weights else f"omega{l}"
                if omega_key in grads:
                    grads[omega_key] += np.array(
                        [float(np.sum(d_mixed * noise)) for noise in cache.noises]
                    )
                contribs = [(i, layer.mix_weights[i] * d_mixed) for i in range(count)]
            elif strategy in (
                MixtureStrategy.AVERAGE,
                MixtureStrategy.MU_ONLY,
                MixtureStrategy.SIGMA_ONLY,
            ):
                share = d_mixed / count
                contribs = [(i, share) for i in range(count)]
            elif strategy is MixtureStrategy.LAST_TASK:
                contribs = [(count - 1, d_mixed)]
            else:  # RANDOM_TASK
                contribs = [(cache.pick, d_mixed)]
            d_h = np.zeros_like(cache.h)
            for i, d_noise in contribs:
                gen = layer.generators[i]
                if strategy is MixtureStrategy.MU_ONLY:
                    d_mu, d_sig = d_noise, None
                elif strategy is MixtureStrategy.SIGMA_ONLY:
                    d_mu = None
                    d_sig = d_noise * cache.epsilon if cache.epsilon is not None else None
                else:
                    d_mu = d_noise
                    d_sig = d_noise * cache.epsilon if cache.epsilon is not None else None
                if d_mu is not None:
                    d_h += d_mu @ gen.mean_weight.T
                if d_sig is not None:
                    d_h += d_sig @ gen.scale_weight.T
                if i == count - 1 and f"gen{l}.mean_w" in grads:
                    if d_mu is not None:
                        grads[f"gen{l}.mean_w"] += cache.h.T @ d_mu
                        grads[f"gen{l}.mean_b"] += d_mu.sum(axis=0)
                    if d_sig is not None:
                        grads[f"gen{l}.scale_w"] += cache.h.T @ d_sig
                        grads[f"gen{l}.scale_b"] += d_sig.sum(axis=0)
            d_r = d_r + d_h @ layer.down_proj.T
        u = tape.block_tanh[l]
        block = model.backbone.blocks[l]
        d_cur = d_r + block.gain * ((d_r * (1.0 - u * u)) @ block.weight.T)
    return grads


def run_session(
    model: ContinualModel,
    stream,
    cfg: TrainConfig,
    session_rng: SeededRng,
) -> SessionReport:
    """Execute one incremental session and evaluate on all seen classes."""
    t = model.sessions_completed + 1
    if t > stream.num_tasks:
        raise ValueError(f"stream has only {stream.num_tasks} tasks")
    task = stream.tasks[t - 1]
    if task.task_index != t:
        raise ValueError(f"session order violation: expected task {t}, got {task.task_index}")
    x_train, y_train = task.train_arrays()

    snapshot = model.classifier.clone()
    feats_initial, pre_noise = model.features(
        x_train, rng=session_rng.split("clf-initial"), eval_mode=True, collect_blocks=True
    )
    model.classifier.expand_classes(task.class_set)
    targets = model.classifier.one_hot(y_train)
    model.classifier.update(feats_initial, targets)
    frozen_weights = model.classifier.weights.copy()

    epoch_losses: list[float] = []
    if model.has_noise:
        for layer in model.layers:
            gen_rng = session_rng.split("generator", layer.layer_index)
            layer.generators.append(new_generator(layer.latent_dim, t, gen_rng, cfg.init_scale))
        for layer, block_feats in zip(model.layers, pre_noise):
            layer.prototypes.append(compute_prototype(layer, [block_feats]))
        _init_session_mix_weights(model, cfg.tau)
        aux = np.zeros((model.buffer.width, model.classifier.num_classes))
        epoch_losses = _train_epochs(model, x_train, targets, frozen_weights, aux, cfg, session_rng)
        # the refresh restarts from the pre-session state so the task's data
        # enters the running solution exactly once, with its final features
        model.classifier = snapshot
        model.classifier.expand_classes(task.class_set)
        feats_final = model.features(x_train, rng=session_rng.split("clf-final"), eval_mode=True)
        model.classifier.update(feats_final, targets)
        for layer in model.layers:
            layer.generators[-1].frozen = True

    model.sessions_completed = t
    report = evaluate(model, stream, t)
    return replace(report, epoch_losses=tuple(epoch_losses))


def _init_session_mix_weights(model: ContinualModel, tau: float) -> None:
    if model.shared_mix_weights:
        sims = np.zeros(len(model.layers[0].prototypes))
        for layer in model.layers:
            sims += prototype_similarities(layer.prototypes)
        shared = softmax(sims / len(model.layers), tau)
        for layer in model.layers:
            layer.mix_weights = shared
    else:
        for layer in model.layers:
            sims = prototype_similarities(layer.prototypes)
            layer.mix_weights = softmax(sims, tau)


def _train_epochs(model, x_train, targets, frozen_weights, aux, cfg, session_rng):
    use_aux = model.strategy is MixtureStrategy.LEARNED_OMEGA
    params = collect_trainable(model, aux if use_aux else None, include_mix=use_aux)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    n = x_train.shape[0]
    losses = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr_init)
        order = session_rng.split("order", epoch).permutation(n)
        eps_rng = session_rng.split("eps", epoch)
        pick_rng = session_rng.split("pick", epoch)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            rows = order[start : start + cfg.batch_size]
            xb = x_train[rows]
            yb = targets[rows]
            eps = _draw_epsilons(model, len(rows), eps_rng)
            picks = _draw_picks(model, pick_rng)
            z, _, tape = forward_pass(
                model, xb, eps_per_layer=eps, picks_per_layer=picks, collect=True
            )
            if use_aux:
                offset = z @ frozen_weights
                loss, d_aux, d_z = residual_loss_grads(z, aux, yb, offset, cfg.loss_mode)
            else:
                loss, d_z = direct_ce_grads(z, frozen_weights, yb)
                d_aux = None
            if not np.isfinite(loss):
                raise NumericalError("non-finite training loss")
            grads = backward(model, tape, d_z, params)
            if d_aux is not None:
                grads["aux"] += d_aux
            clip_gradients(grads, cfg.grad_clip)
            sgd_step(params, grads, velocity, lr, cfg.momentum)
            batch_losses.append(loss)
        losses.append(float(np.mean(batch_losses)))
    return losses


def _draw_epsilons(model: ContinualModel, batch_size: int, eps_rng: SeededRng):
    eps = []
    for layer in model.layers:
        if layer.generators:
            eps.append(eps_rng.standard_normal(batch_size, layer.latent_dim))
        else:
            eps.append(None)
    return eps


def _draw_picks(model: ContinualModel, pick_rng: SeededRng):
    if model.strategy is not MixtureStrategy.RANDOM_TASK:
        return None
    return [
        pick_rng.integer(len(layer.generators)) if layer.generators else None
        for layer in model.layers
    ]


@dataclass
class GradcheckGroup:
    name: str
    size: int
    max_rel_error: float
    max_abs_error: float
    passed: bool


@dataclass
class GradcheckReport:
    groups: list[GradcheckGroup] = field(default_factory=list)
    tolerance: float = 1e-4
    floor: float = 1e-7

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.groups)

    def lines(self) -> list[str]:
        out = []
        for g in self.groups:
            status = "ok" if g.passed else "FAIL"
            out.append(
                f"{g.name:12s} n={g.size:5d} max_rel={g.max_rel_error:.3e} "
                f"max_abs={g.max_abs_error:.3e} {status}"
            )
        out.append(f"gradcheck: {'PASS' if self.passed else 'FAIL'}")
        return out


def make_gradcheck_instance(
    input_dim: int = 6,
    feature_dim: int = 8,
    latent_dim: int = 4,
    depth: int = 2,
    buffer_size: int = 16,
    batch: int = 3,
    num_classes: int = 4,
    num_tasks: int = 2,
    seed: int = 11,
    strategy: str | MixtureStrategy = MixtureStrategy.LEARNED_OMEGA,
):
    """Small multi-task state with full-scale random parameters on every path.

    Returns the positional arguments of :func:`gradient_check`: frozen
    generators for every task but the last (so gradients must flow through
    frozen maps without accumulating into them), one trainable generator per
    layer, random mix weights, a nonzero auxiliary classifier, and fixed
    noise draws.
    """
    if isinstance(strategy, str):
        strategy = MixtureStrategy.from_string(strategy)
    model = build_model(
        input_dim=input_dim,
        feature_dim=feature_dim,
        depth=depth,
        gain=0.5,
        buffer_size=max(buffer_size, feature_dim),
        latent_dim=latent_dim,
        regularization=10.0,
        seed=seed,
        strategy=strategy,
    )
    rng = SeededRng(derive_seed(seed, "gradcheck"))
    scale = 1.0 / np.sqrt(latent_dim)
    for layer in model.layers:
        for task in range(1, num_tasks + 1):
            layer.generators.append(
                NoiseGenerator(
                    mean_weight=rng.standard_normal(latent_dim, latent_dim) * scale,
                    mean_bias=rng.standard_normal(latent_dim) * 0.1,
                    scale_weight=rng.standard_normal(latent_dim, latent_dim) * scale,
                    scale_bias=rng.standard_normal(latent_dim) * 0.1,
                    task_index=task,
                    frozen=(task < num_tasks),
                )
            )
            layer.prototypes.append(rng.standard_normal(latent_dim))
        layer.mix_weights = init_mix_weights(layer.prototypes, 2.0)
    x = rng.standard_normal(batch, input_dim)
    targets = np.zeros((batch, num_classes))
    for i in range(batch):
        targets[i, rng.integer(num_classes)] = 1.0
    frozen_weights = rng.standard_normal(model.buffer.width, num_classes) * 0.05
    aux = rng.standard_normal(model.buffer.width, num_classes) * 0.05
    eps = [rng.standard_normal(batch, latent_dim) for _ in model.layers]
    picks = None
    if strategy is MixtureStrategy.RANDOM_TASK:
        picks = [rng.integer(num_tasks) for _ in model.layers]
    return model, aux, x, targets, frozen_weights, eps, picks


def gradient_check(
    model: ContinualModel,
    aux_weights: np.ndarray,
    x: np.ndarray,
    targets: np.ndarray,
    frozen_weights: np.ndarray,
    eps_per_layer,
    picks_per_layer=None,
    loss_mode: str = "residual-corrected-ce",
    fd_epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    floor: float = 1e-7,
    corrupt_group: str | None = None,
) -> GradcheckReport:
    """Compare analytic gradients against central finite differences.

    The loss is evaluated with the frozen-classifier offset captured at the
    unperturbed parameters, matching its constant treatment in the analytic
    backward pass. ``corrupt_group`` perturbs one analytic gradient group,
    which must make the check fail (negative control for tests).
    """
    use_aux = model.strategy is MixtureStrategy.LEARNED_OMEGA
    params = collect_trainable(model, aux_weights if use_aux else None, include_mix=use_aux)

    z0, _, tape = forward_pass(
        model, x, eps_per_layer=eps_per_layer, picks_per_layer=picks_per_layer, collect=True
    )
    offset0 = z0 @ frozen_weights

    if use_aux:
        _, d_aux, d_z = residual_loss_grads(z0, aux_weights, targets, offset0, loss_mode)
    else:
        _, d_z = direct_ce_grads(z0, frozen_weights, targets)
        d_aux = None
    analytic = backward(model, tape, d_z, params)
    if d_aux is not None:
        analytic["aux"] += d_aux
    if corrupt_group is not None:
        if corrupt_group not in analytic:
            raise ValueError(f"no gradient group named {corrupt_group!r}")
        analytic[corrupt_group] *= 1.5
        analytic[corrupt_group].ravel()[0] += 1e-3

    def loss_at(key: str, flat: np.ndarray) -> float:
        saved = params[key].copy()
        params[key][...] = flat.reshape(params[key].shape)
        try:
            z, _, _ = forward_pass(
                model, x, eps_per_layer=eps_per_layer, picks_per_layer=picks_per_layer
            )
            if use_aux:
                return residual_loss(z, aux_weights, targets, offset0, loss_mode)
            loss, _ = direct_ce_grads(z, frozen_weights, targets)
            return loss
        finally:
            params[key][...] = saved

    report = GradcheckReport(tolerance=tolerance, floor=floor)
    for key in sorted(params):
        fd = finite_difference_gradient(
            lambda flat, key=key: loss_at(key, flat), params[key].ravel(), fd_epsilon
        )
        a = analytic[key].ravel()
        abs_err = np.abs(a - fd)
        scale = np.maximum(np.abs(a), np.abs(fd))
        above_floor = abs_err > floor
        rel = np.where(above_floor, abs_err / np.maximum(scale, floor), 0.0)
        report.groups.append(
            GradcheckGroup(
                name=key,
                size=a.size,
                max_rel_error=float(rel.max()) if a.size else 0.0,
                max_abs_error=float(abs_err.max()) if a.size else 0.0,
                passed=bool(np.all(~above_floor | (rel <= tolerance))),
            )
        )
    return report
