"""Adversarial training of the two generators and the discriminator.

Each outer iteration draws one clip pair, encodes both clips with the
time-invariant generator and the full sequence with the time-varying
generator, takes one Adam step on the generator objective (including the
sampler parameter) and then ``k_D`` Adam steps on the discriminator.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .encoder import (EncoderParams, encode_clip, encode_sequence, gcn_features,
                      time_invariant_final)
from .graph import ConfigError, DynamicGraph, _load_mapping
from .losses import (DiscriminatorParams, discriminator_inputs, discriminator_value,
                     loss_link_prediction, loss_structure_proximity, loss_time_invariant,
                     sample_disentangle_pairs, sample_non_edges, sample_non_neighbors,
                     sample_uniform_negatives)
from .sampler import SamplerParams, sample_clip_pair

__all__ = [
    "TrainConfig", "TrainingError", "Adam", "TrainResult", "RepresentationSet",
    "train", "train_backbone", "extract_representations", "generator_loss",
    "load_train_config", "write_history", "save_checkpoint", "load_checkpoint",
    "HISTORY_COLUMNS", "IterationDraws", "draw_iteration", "init_models",
]

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("iter", "L_v", "L_i", "V", "loss_D", "alpha", "total")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of a training run. Field names double as config-file keys."""

    d: int = 16
    tau: float = 0.1
    tau_g: float = 0.01
    lambda1: float = 0.5
    lambda2: float = 0.5
    lambda3: float = 5e-7
    n: int = 5
    n_prime: int = 256
    k_D: int = 1
    pretext: str = "structure-proximity"
    learning_rate: float = 0.01
    epochs: int = 200
    seed: int = 0
    alpha_init: float = 0.5
    sampling: str = "bernoulli"
    time_invariant_mode: str = "sampled"

    def __post_init__(self):
        if self.d < 2 or self.d % 2:
            raise ConfigError("d must be a positive even integer")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.tau <= 0 or self.tau_g <= 0:
            raise ConfigError("temperatures must be positive")
        if self.n < 1 or self.n_prime < 1 or self.k_D < 0:
            raise ConfigError("n, n_prime must be >= 1 and k_D >= 0")
        if self.pretext not in ("structure-proximity", "link-prediction"):
            raise ConfigError(f"unknown pretext {self.pretext!r}")
        if self.sampling not in ("bernoulli", "uniform"):
            raise ConfigError(f"unknown sampling {self.sampling!r}")
        if self.time_invariant_mode not in ("sampled", "full"):
            raise ConfigError(f"unknown time_invariant_mode {self.time_invariant_mode!r}")
        if not 0.0 < self.alpha_init < 1.0:
            raise ConfigError("alpha_init must lie in (0, 1)")
        if self.learning_rate <= 0 or self.epochs < 0:
            raise ConfigError("learning_rate must be positive and epochs non-negative")

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})


def load_train_config(path, **overrides) -> TrainConfig:
    mapping = dict(_load_mapping(path))
    mapping.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(mapping) - known
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    return TrainConfig(**mapping)


class TrainingError(RuntimeError):
    pass


class Adam:
    """Adam over a fixed list of parameter tensors, updated in place."""

    def __init__(self, params, lr=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: ad.GradientTable) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            g = grads.for_tensor(p)
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


@dataclass
class RepresentationSet:
    """Time-invariant ``S`` of shape ``(N, d/2)`` and time-varying ``D`` of shape ``(T, N, d/2)``."""

    S: np.ndarray
    D: np.ndarray

    @property
    def T(self) -> int:
        return self.D.shape[0]

    def combined(self, t: int) -> np.ndarray:
        return np.concatenate([self.S, self.D[t]], axis=1)


@dataclass
class TrainResult:
    config: TrainConfig
    time_invariant: EncoderParams | None
    time_varying: EncoderParams
    discriminator: DiscriminatorParams | None
    sampler: SamplerParams | None
    history: list[dict] = field(default_factory=list)
    baseline: bool = False


def _pretext_negatives(config: TrainConfig, graph: DynamicGraph, rng):
    if config.pretext == "structure-proximity":
        return [sample_non_neighbors(s, s.edges[:, 0], config.n, rng) if s.num_edges
                else np.zeros((0, config.n), dtype=np.int64) for s in graph.snapshots]
    return [sample_non_edges(graph[t + 1], config.n * max(graph[t + 1].num_edges, 1), rng)
            for t in range(graph.T - 1)]


def _pretext_loss(config: TrainConfig, R, graph, negatives):
    if config.pretext == "structure-proximity":
        return loss_structure_proximity(R, graph, negatives, config.tau)
    return loss_link_prediction(R, graph, negatives)


def _sum_of_squares(tensors) -> ad.Tensor:
    total = ad.constant(0.0)
    for p in tensors:
        total = ad.add(total, ad.sum(ad.mul(p, p)))
    return total


@dataclass
class IterationDraws:
    """Every random quantity one generator evaluation consumes."""

    pair: object
    pretext_negatives: list
    ti_negatives: np.ndarray
    disc_idx: tuple


def draw_iteration(config: TrainConfig, graph: DynamicGraph, sampler: SamplerParams, rng,
                   L: int | None = None) -> IterationDraws:
    """Clip pair, negatives and discriminator indices for one generator step.

    ``L`` fixes the clip-pair span instead of drawing it.
    """
    N = graph.node_count
    pair = sample_clip_pair(graph.T, sampler, rng, L=L, uniform_lengths=config.sampling == "uniform")
    pretext = _pretext_negatives(config, graph, rng)
    ti_neg = sample_uniform_negatives(np.arange(N), N, config.n, rng)
    disc_idx = sample_disentangle_pairs(N, graph.T, config.n_prime, rng)
    return IterationDraws(pair, pretext, ti_neg, disc_idx)


def generator_loss(config: TrainConfig, graph: DynamicGraph, gi: EncoderParams, gv: EncoderParams,
                   disc: DiscriminatorParams, draws: IterationDraws):
    """Generator objective ``L_v + l1 L_i + l2 V + l3 ||w||^2`` for fixed draws.

    Returns ``(total, terms, (S_train, D_steps))`` where ``terms`` maps term
    names to scalar tensors. During training the time-invariant half of
    ``r_v^t`` is the mean of the two clip encodings.
    """
    pair = draws.pair
    feats = [gcn_features(gi, graph, t) for t in range(pair.t_i, pair.t_j + 1)]
    S1 = encode_clip(gi, graph, pair.mask1, pair.t_i, pair.L, features=feats)
    S2 = encode_clip(gi, graph, pair.mask2, pair.t_i, pair.L, features=feats)
    D_steps = encode_sequence(gv, graph)
    S_train = ad.scale(ad.add(S1, S2), 0.5)
    R = [ad.concat([S_train, Dt]) for Dt in D_steps]

    L_v = _pretext_loss(config, R, graph, draws.pretext_negatives)
    N = graph.node_count
    L_i = loss_time_invariant(S1, S2, np.arange(N), draws.ti_negatives, config.tau,
                              mode=config.time_invariant_mode)
    v, t, u = draws.disc_idx
    true, false = discriminator_inputs(S_train, D_steps, v, t, u)
    V = discriminator_value(disc, true, false)
    reg = _sum_of_squares(gi.tensors() + gv.tensors())
    total = ad.add(ad.add(L_v, ad.scale(L_i, config.lambda1)),
                   ad.add(ad.scale(V, config.lambda2), ad.scale(reg, config.lambda3)))
    terms = {"L_v": L_v, "L_i": L_i, "V": V, "reg": reg}
    return total, terms, (S_train, D_steps)


def _check_finite(it: int, terms: dict) -> None:
    for name, value in terms.items():
        if not np.all(np.isfinite(value.data)):
            raise TrainingError(f"iteration {it}: non-finite {name} ({value.item()})")


def _discriminator_step(config, disc, opt, S_const, D_const, N, T, rng) -> float:
    v, t, u = sample_disentangle_pairs(N, T, config.n_prime, rng)
    true, false = discriminator_inputs(S_const, D_const, v, t, u)
    loss_D = ad.scale(discriminator_value(disc, true, false), -1.0)
    if not np.isfinite(loss_D.item()):
        raise TrainingError(f"non-finite loss_D ({loss_D.item()})")
    opt.step(ad.backward(loss_D))
    return loss_D.item()


def init_models(config: TrainConfig, N: int, rng):
    seeds = rng.integers(0, 2 ** 31, size=3)
    half = config.d // 2
    gi = EncoderParams.init(N, config.d, half, seeds[0])
    gv = EncoderParams.init(N, config.d, half, seeds[1])
    disc = DiscriminatorParams.init(config.d, seeds[2])
    sampler = SamplerParams.from_alpha(config.alpha_init, config.tau_g)
    return gi, gv, disc, sampler


def train(config: TrainConfig, graph: DynamicGraph, callback=None) -> TrainResult:
    """Run ``config.epochs`` outer iterations of adversarial training.

    ``callback(it, result)`` runs after every iteration when given. The run is
    a deterministic function of ``config.seed``.

    Raises
    ------
    TrainingError
        If any loss term becomes non-finite; the message names the term.
    """
    rng = np.random.default_rng(config.seed)
    N = graph.node_count
    gi, gv, disc, sampler = init_models(config, N, rng)
    gen_params = gi.tensors() + gv.tensors()
    gen_opt = Adam(gen_params + [sampler.alpha_raw], lr=config.learning_rate)
    disc_opt = Adam(disc.tensors(), lr=config.learning_rate)
    result = TrainResult(config, gi, gv, disc, sampler)

    for it in range(config.epochs):
        draws = draw_iteration(config, graph, sampler, rng)
        total, terms, (S_train, D_steps) = generator_loss(config, graph, gi, gv, disc, draws)
        _check_finite(it, {**terms, "total": total})
        gen_opt.step(ad.backward(total))

        S_const = ad.constant(S_train.data)
        D_const = [ad.constant(Dt.data) for Dt in D_steps]
        loss_D = float("nan")
        for _ in range(config.k_D):
            loss_D = _discriminator_step(config, disc, disc_opt, S_const, D_const, N, graph.T, rng)

        result.history.append({
            "iter": it, "L_v": terms["L_v"].item(), "L_i": terms["L_i"].item(),
            "V": terms["V"].item(), "loss_D": loss_D, "alpha": sampler.alpha,
            "total": total.item(),
        })
        logger.debug("iter %d total %.5f", it, total.item())
        if callback is not None:
            callback(it, result)
    return result


def train_backbone(config: TrainConfig, graph: DynamicGraph, callback=None) -> TrainResult:
    """Train the plain backbone at full width ``d`` on the pretext loss only."""
    rng = np.random.default_rng(config.seed)
    N = graph.node_count
    seeds = rng.integers(0, 2 ** 31, size=3)
    model = EncoderParams.init(N, config.d, config.d, seeds[0])
    opt = Adam(model.tensors(), lr=config.learning_rate)
    result = TrainResult(config, None, model, None, None, baseline=True)
    for it in range(config.epochs):
        negatives = _pretext_negatives(config, graph, rng)
        R = encode_sequence(model, graph)
        L_v = _pretext_loss(config, R, graph, negatives)
        reg = _sum_of_squares(model.tensors())
        total = ad.add(L_v, ad.scale(reg, config.lambda3))
        _check_finite(it, {"L_v": L_v, "total": total})
        opt.step(ad.backward(total))
        result.history.append({"iter": it, "L_v": L_v.item(), "L_i": float("nan"), "V": float("nan"),
                               "loss_D": float("nan"), "alpha": float("nan"), "total": total.item()})
        if callback is not None:
            callback(it, result)
    return result


def extract_representations(gi: EncoderParams | None, gv: EncoderParams, graph: DynamicGraph) -> RepresentationSet:
    """Final ``S`` (full-range clip through ``gi``) and per-step ``D`` (``gv``).

    With ``gi=None`` (a plain backbone) ``S`` has zero width and ``D`` holds
    the backbone's full representations.
    """
    D = np.stack([Dt.data for Dt in encode_sequence(gv, graph)])
    if gi is None:
        return RepresentationSet(np.zeros((graph.node_count, 0)), D)
    return RepresentationSet(time_invariant_final(gi, graph).data.copy(), D)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def write_history(history, stream) -> None:
    writer = csv.DictWriter(stream, fieldnames=HISTORY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in history:
        writer.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in HISTORY_COLUMNS})


def save_checkpoint(result: TrainResult, directory) -> None:
    """Write ``params.npz`` (all tensors) plus ``manifest.json`` (shapes, config)."""
    os.makedirs(directory, exist_ok=True)
    arrays = {}
    groups = {"time_invariant": result.time_invariant, "time_varying": result.time_varying,
              "discriminator": result.discriminator}
    for prefix, params in groups.items():
        if params is not None:
            for name, arr in params.state_dict().items():
                arrays[f"{prefix}.{name}"] = arr
    if result.sampler is not None:
        arrays["sampler.alpha_raw"] = result.sampler.alpha_raw.data.copy()
    np.savez(os.path.join(directory, "params.npz"), **arrays)
    manifest = {
        "baseline": result.baseline,
        "config": asdict(result.config),
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def load_checkpoint(directory) -> TrainResult:
    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    with np.load(os.path.join(directory, "params.npz")) as npz:
        arrays = {k: npz[k] for k in npz.files}
    for key, shape in manifest["shapes"].items():
        if list(arrays[key].shape) != shape:
            raise ValueError(f"checkpoint tensor {key} has shape {arrays[key].shape}, manifest says {shape}")

    def group(prefix):
        items = {k.split(".", 1)[1]: v for k, v in arrays.items() if k.startswith(prefix + ".")}
        return items or None

    config = TrainConfig(**manifest["config"])
    gi = group("time_invariant")
    disc = group("discriminator")
    sampler = None
    if "sampler.alpha_raw" in arrays:
        sampler = SamplerParams(ad.parameter(arrays["sampler.alpha_raw"]), config.tau_g)
    return TrainResult(
        config,
        EncoderParams.from_state_dict(gi) if gi else None,
        EncoderParams.from_state_dict(group("time_varying")),
        DiscriminatorParams.from_state_dict(disc) if disc else None,
        sampler,
        baseline=manifest["baseline"],
    )
