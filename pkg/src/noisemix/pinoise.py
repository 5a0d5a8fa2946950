"""Per-task noise generators, the layer that injects them, and mixing rules.

Each task owns one generator per layer: two affine maps in a narrow latent
space that produce the mean and scale of a reparameterized Gaussian
perturbation. Generators freeze when their task's session ends; a per-layer
weight vector mixes the noises of every task seen so far.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .numeric import SeededRng, as_matrix, softmax


class MixtureStrategy(enum.Enum):
    """How the per-task noises at a layer are combined."""

    LEARNED_OMEGA = "learned-omega"
    AVERAGE = "average"
    MU_ONLY = "mu-only"
    SIGMA_ONLY = "sigma-only"
    LAST_TASK = "last-task"
    RANDOM_TASK = "random-task"

    @classmethod
    def from_string(cls, name: str) -> "MixtureStrategy":
        for member in cls:
            if member.value == name:
                return member
        valid = ", ".join(m.value for m in cls)
        raise ValueError(f"unknown mixture strategy {name!r} (valid: {valid})")


@dataclass
class NoiseGenerator:
    """Affine mean/scale maps in the latent space, trainable until frozen."""

    mean_weight: np.ndarray  # d2 x d2
    mean_bias: np.ndarray  # d2
    scale_weight: np.ndarray  # d2 x d2
    scale_bias: np.ndarray  # d2
    task_index: int
    frozen: bool = False

    def mean_of(self, h: np.ndarray) -> np.ndarray:
        return h @ self.mean_weight + self.mean_bias

    def scale_of(self, h: np.ndarray) -> np.ndarray:
        return h @ self.scale_weight + self.scale_bias

    def param_bytes(self) -> bytes:
        return b"".join(
            np.ascontiguousarray(a, dtype=np.float64).tobytes()
            for a in (self.mean_weight, self.mean_bias, self.scale_weight, self.scale_bias)
        )


def new_generator(latent_dim: int, task_index: int, rng: SeededRng, init_scale: float = 0.0001) -> NoiseGenerator:
    """Fresh trainable generator with near-zero output at initialization.

    Weights are N(0, 1/latent_dim) scaled by ``init_scale`` so a new task's
    noise starts as a tiny perturbation; biases start at zero. init_scale=0
    gives an exactly-zero generator.
    """
    scale = init_scale / np.sqrt(latent_dim)
    return NoiseGenerator(
        mean_weight=rng.standard_normal(latent_dim, latent_dim) * scale,
        mean_bias=np.zeros(latent_dim),
        scale_weight=rng.standard_normal(latent_dim, latent_dim) * scale,
        scale_bias=np.zeros(latent_dim),
        task_index=task_index,
    )


@dataclass
class PiNoiseLayer:
    """Noise injection point after one backbone block.

    The down/up projections are frozen random maps shared by every task;
    generators, prototypes and mix weights grow by one entry per session.
    """

    down_proj: np.ndarray  # d1 x d2, frozen N(0,1)
    up_proj: np.ndarray  # d2 x d1, frozen N(0,1)
    layer_index: int
    generators: list[NoiseGenerator] = field(default_factory=list)
    prototypes: list[np.ndarray] = field(default_factory=list)
    mix_weights: np.ndarray | None = None

    @property
    def latent_dim(self) -> int:
        return self.down_proj.shape[1]

    def frozen_bytes(self) -> bytes:
        return (
            np.ascontiguousarray(self.down_proj, dtype=np.float64).tobytes()
            + np.ascontiguousarray(self.up_proj, dtype=np.float64).tobytes()
        )


def build_layer(feature_dim: int, latent_dim: int, layer_index: int, rng: SeededRng) -> PiNoiseLayer:
    down = rng.standard_normal(feature_dim, latent_dim)
    up = rng.standard_normal(latent_dim, feature_dim)
    return PiNoiseLayer(down_proj=down, up_proj=up, layer_index=layer_index)


def generate_noise(gen: NoiseGenerator, h: np.ndarray, epsilon: np.ndarray) -> np.ndarray:
    """Reparameterized noise ``epsilon * scale(h) + mean(h)``.

    ``h`` is the down-projected layer feature; ``epsilon`` is sampled by the
    caller so determinism stays under the caller's control.
    """
    h = as_matrix(h, "latent features")
    eps = as_matrix(epsilon, "epsilon")
    d2 = gen.mean_weight.shape[0]
    if h.shape[1] != d2 or eps.shape != h.shape:
        raise ValueError(f"latent width mismatch: h {h.shape}, epsilon {eps.shape}, generator {d2}")
    return eps * gen.scale_of(h) + gen.mean_of(h)


def mix(
    strategy: MixtureStrategy,
    noises: list[np.ndarray],
    weights: np.ndarray | None = None,
    rng: SeededRng | None = None,
    pick: int | None = None,
) -> np.ndarray:
    """Combine the per-task noises at one layer into a single matrix.

    learned-omega takes the weight-vector combination; average (and the
    mean-only / scale-only variants, whose zeroing happens when the noises
    are generated) take the plain mean; last-task keeps only the newest
    noise; random-task keeps one uniformly chosen noise (index from ``pick``
    or drawn from ``rng``).
    """
    if not noises:
        raise ValueError("cannot mix an empty noise list")
    shape = noises[0].shape
    for n in noises[1:]:
        if n.shape != shape:
            raise ValueError("all noises must share one shape")
    if strategy is MixtureStrategy.LEARNED_OMEGA:
        if weights is None or len(weights) != len(noises):
            raise ValueError("learned-omega needs one weight per noise")
        out = np.zeros(shape)
        for w, n in zip(weights, noises):
            out += w * n
        return out
    if strategy in (MixtureStrategy.AVERAGE, MixtureStrategy.MU_ONLY, MixtureStrategy.SIGMA_ONLY):
        return sum(noises) / len(noises)
    if strategy is MixtureStrategy.LAST_TASK:
        return noises[-1]
    if strategy is MixtureStrategy.RANDOM_TASK:
        if pick is None:
            if rng is None:
                raise ValueError("random-task needs a pick index or an rng")
            pick = rng.integer(len(noises))
        return noises[pick]
    raise ValueError(f"unhandled strategy {strategy}")


@dataclass
class LayerCache:
    """Intermediates from one layer forward, kept for backpropagation."""

    h: np.ndarray
    epsilon: np.ndarray | None
    means: list[np.ndarray]
    scales: list[np.ndarray]
    noises: list[np.ndarray]
    pick: int | None


def run_layer(
    layer: PiNoiseLayer,
    feats: np.ndarray,
    strategy: MixtureStrategy,
    epsilon: np.ndarray | None,
    pick: int | None = None,
    rng: SeededRng | None = None,
    collect: bool = False,
) -> tuple[np.ndarray, LayerCache | None]:
    """Apply the layer's mixed noise to a block output.

    ``epsilon=None`` is the mean path (as if the draw were zero), used for
    evaluation and classifier updates.
    """
    h = feats @ layer.down_proj
    means, scales, noises = [], [], []
    for gen in layer.generators:
        mu = gen.mean_of(h)
        sig = gen.scale_of(h) if (epsilon is not None or collect) else None
        if strategy is MixtureStrategy.MU_ONLY:
            noise = mu
        elif strategy is MixtureStrategy.SIGMA_ONLY:
            noise = epsilon * sig if epsilon is not None else np.zeros_like(mu)
        else:
            noise = epsilon * sig + mu if epsilon is not None else mu
        means.append(mu)
        scales.append(sig)
        noises.append(noise)
    if strategy is MixtureStrategy.RANDOM_TASK and pick is None:
        if rng is None:
            raise ValueError("random-task needs a pick index or an rng")
        pick = rng.integer(len(layer.generators))
    mixed = mix(strategy, noises, layer.mix_weights, pick=pick)
    out = feats + mixed @ layer.up_proj
    cache = LayerCache(h=h, epsilon=epsilon, means=means, scales=scales, noises=noises, pick=pick) if collect else None
    return out, cache


def apply_layer(
    layer: PiNoiseLayer,
    feats: np.ndarray,
    strategy: MixtureStrategy,
    rng: SeededRng | None = None,
    eval_mode: bool = False,
    epsilon: np.ndarray | None = None,
) -> np.ndarray:
    """Noise-adjusted layer output; identity when no generators exist yet."""
    feats = as_matrix(feats, "layer features")
    if not layer.generators:
        return feats
    if epsilon is None and not eval_mode:
        if rng is None:
            raise ValueError("sampling mode needs an rng")
        epsilon = rng.standard_normal(feats.shape[0], layer.latent_dim)
    out, _ = run_layer(layer, feats, strategy, epsilon, rng=rng)
    return out


def compute_prototype(layer: PiNoiseLayer, feature_batches) -> np.ndarray:
    """Mean down-projected feature over a task's training samples."""
    total = np.zeros(layer.latent_dim)
    count = 0
    for batch in feature_batches:
        b = as_matrix(batch, "feature batch")
        total += (b @ layer.down_proj).sum(axis=0)
        count += b.shape[0]
    if count == 0:
        raise ValueError("prototype needs at least one training sample")
    return total / count


def prototype_similarities(prototypes: list[np.ndarray]) -> np.ndarray:
    """Cosine similarity of the newest prototype against every stored one.

    The self-similarity entry is pinned to exactly 1.
    """
    if not prototypes:
        raise ValueError("need at least one prototype")
    norms = [float(np.linalg.norm(p)) for p in prototypes]
    if any(n == 0 for n in norms):
        raise ValueError("zero-norm prototype")
    current = prototypes[-1]
    sims = np.array(
        [float(np.dot(current, p)) / (norms[-1] * n) for p, n in zip(prototypes, norms)]
    )
    sims[-1] = 1.0
    return sims


def init_mix_weights(prototypes: list[np.ndarray], tau: float) -> np.ndarray:
    """Initial mix weights: temperature softmax over prototype similarities.

    The result starts on the probability simplex; training afterwards leaves
    the weights unconstrained.
    """
    return softmax(prototype_similarities(prototypes), tau)
