"""Training: losses, hand-derived gradients, Adam, and the epoch loop.

The typing loss over a minibatch B1 of labeled mentions is

    (1/|B1|) sum_m [ sum_{t in gold(m)} -score(m, t)
                     + sum_{t not in gold(m)} penalty(m, t) ]

with negatives ranging over every non-gold type.  The structure loss has
the same shape over (type, ancestor-set) pairs, with negatives ranging
over non-ancestors excluding the type itself; types with no ancestors are
never sampled.  The combined objective is typing + structure_weight *
structure, and one structure batch is consumed after every typing batch.

Gradients are derived by hand and computed with plain numpy in float64.
``finite_difference_check`` provides the independent verification route:
central differences with an activation-pattern guard.  Every loss
evaluation also produces a byte pattern encoding its ReLU masks, max-pool
argmax indices, order-rectifier signs, hinge-active bits, and
sigmoid-clamp bits; a coordinate is compared only when the pattern at
theta, theta+eps, and theta-eps is identical, which excludes coordinates
sitting on a kink of the piecewise-smooth loss.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import EmbeddingTable, LabeledExample, batch_iter
from .errors import HiertypeError
from .evaluation import evaluate_model
from .hierarchy import TypeHierarchy
from .model import (
    SATURATED_PENALTY,
    Checkpoint,
    DropoutMasks,
    EncoderCache,
    EncoderMode,
    EncoderParams,
    ModelError,
    ModelParams,
    ScoreKind,
    encode_vectors_cached,
    log_sigmoid,
    neg_log_one_minus_sigmoid,
    sample_dropout_masks,
    sigmoid,
)

log = logging.getLogger(__name__)


class TrainingError(HiertypeError):
    """Unusable training request (empty batches, bad shapes, bad data)."""


class ConfigError(HiertypeError):
    """Malformed or inconsistent training configuration."""


class GradientError(TrainingError):
    """Non-finite gradient; names the offending tensor."""


# ----------------------------------------------------------------------
# configuration


@dataclass
class TrainConfig:
    dim: int = 300
    filter_width: int = 5
    encoder_mode: EncoderMode = EncoderMode.CNN_PLUS_MENTION
    mention_score_kind: ScoreKind = ScoreKind.BILINEAR
    structure_score_kind: ScoreKind | None = None  # None means same as mention kind
    share_bilinear: bool = False
    margin: float = 1.0
    structure_weight: float = 0.0
    dropout: float = 0.5
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    structure_batch_size: int = 128
    max_epochs: int = 100
    patience: int = 5
    seed: int = 13
    embeddings: str | None = None

    def effective_structure_kind(self) -> ScoreKind:
        return self.mention_score_kind if self.structure_score_kind is None else self.structure_score_kind

    def validate(self) -> None:
        if self.dim < 1:
            raise ConfigError(f"dim must be positive, got {self.dim}")
        if self.filter_width < 1 or self.filter_width % 2 == 0:
            raise ConfigError(f"filter_width must be odd and positive, got {self.filter_width}")
        if self.margin <= 0:
            raise ConfigError(f"margin must be positive, got {self.margin!r}")
        if self.structure_weight < 0:
            raise ConfigError(f"structure_weight must be >= 0, got {self.structure_weight!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout!r}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if min(self.batch_size, self.structure_batch_size) < 1:
            raise ConfigError("batch sizes must be positive")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 <= self.adam_beta1 < 1.0 or not 0.0 <= self.adam_beta2 < 1.0:
            raise ConfigError("adam betas must be in [0, 1)")
        if self.share_bilinear:
            if self.mention_score_kind is not ScoreKind.BILINEAR or self.effective_structure_kind() is not ScoreKind.BILINEAR:
                raise ConfigError("share_bilinear requires bilinear mention and structure scoring")


def _parse_bool(text: str) -> bool:
    s = text.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_score_kind(text: str) -> ScoreKind:
    return ScoreKind(text.strip().lower())


def _parse_optional_score_kind(text: str) -> ScoreKind | None:
    s = text.strip().lower()
    if s in ("", "none"):
        return None
    return ScoreKind(s)


def _parse_encoder_mode(text: str) -> EncoderMode:
    return EncoderMode(text.strip().lower())


def _parse_optional_path(text: str) -> str | None:
    s = text.strip()
    return s or None


_CONFIG_PARSERS: dict[str, Callable[[str], object]] = {
    "dim": int,
    "filter_width": int,
    "encoder_mode": _parse_encoder_mode,
    "mention_score_kind": _parse_score_kind,
    "structure_score_kind": _parse_optional_score_kind,
    "share_bilinear": _parse_bool,
    "margin": float,
    "structure_weight": float,
    "dropout": float,
    "learning_rate": float,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "batch_size": int,
    "structure_batch_size": int,
    "max_epochs": int,
    "patience": int,
    "seed": int,
    "embeddings": _parse_optional_path,
}
assert set(_CONFIG_PARSERS) == {f.name for f in fields(TrainConfig)}


def config_from_strings(pairs: Mapping[str, str], base: TrainConfig | None = None) -> TrainConfig:
    cfg = replace(base) if base is not None else TrainConfig()
    for key, raw in pairs.items():
        parser = _CONFIG_PARSERS.get(key)
        if parser is None:
            raise ConfigError(f"unknown config key: {key!r}")
        try:
            setattr(cfg, key, parser(raw))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    return cfg


def load_train_config(path: str, base: TrainConfig | None = None) -> TrainConfig:
    """Flat ``key=value`` file with ``#`` comments and blank lines."""
    pairs: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            key, sep, value = s.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{line_no}: expected key=value, got {s!r}")
            pairs[key.strip()] = value.strip()
    return config_from_strings(pairs, base)


# ----------------------------------------------------------------------
# initialization


def glorot_init(shape: Sequence[int], rng: np.random.Generator | int) -> np.ndarray:
    """Glorot uniform for 2-d/3-d tensors, zeros for 1-d biases.

    Fan convention: (out, in) for matrices; (taps, d_in, d_out) filters use
    fan_in = taps * d_in, fan_out = taps * d_out.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise TrainingError(f"bad tensor shape {shape}")
    if len(shape) == 1:
        return np.zeros(shape, dtype=np.float64)
    if len(shape) == 2:
        fan_out, fan_in = shape
    elif len(shape) == 3:
        taps, d_in, d_out = shape
        fan_in, fan_out = taps * d_in, taps * d_out
    else:
        raise TrainingError(f"glorot init supports 1-3 dims, got shape {shape}")
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_model(n_types: int, config: TrainConfig, rng: np.random.Generator | None = None) -> ModelParams:
    """Fresh parameters; tensors are drawn in a fixed order for determinism."""
    config.validate()
    if n_types < 1:
        raise TrainingError("cannot build a model for zero types")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    d, w = config.dim, config.filter_width
    enc = EncoderParams(
        cnn_w=glorot_init((w, d, d), rng),
        cnn_b=np.zeros(d),
        w1=glorot_init((d, 2 * d), rng),
        b1=np.zeros(d),
        w2=glorot_init((d, d), rng),
        b2=np.zeros(d),
    )
    type_emb = glorot_init((n_types, d), rng)
    bilinear = None
    if config.mention_score_kind is ScoreKind.BILINEAR:
        bilinear = glorot_init((d, d), rng)
    bilinear_structure = None
    if (
        config.structure_weight > 0
        and config.effective_structure_kind() is ScoreKind.BILINEAR
        and not config.share_bilinear
    ):
        bilinear_structure = glorot_init((d, d), rng)
    return ModelParams(encoder=enc, type_emb=type_emb, bilinear=bilinear,
                       bilinear_structure=bilinear_structure)


# ----------------------------------------------------------------------
# batches


@dataclass(frozen=True)
class PreparedMention:
    """A mention reduced to what the loss needs: fixed word vectors, the
    span, and gold type indexes."""

    word_vectors: np.ndarray
    span: tuple[int, int]
    gold: tuple[int, ...]


StructurePair = tuple[int, tuple[int, ...]]  # (type index, ancestor indexes)


def prepare_typing_batch(batch: Sequence[LabeledExample], emb: EmbeddingTable) -> list[PreparedMention]:
    if not batch:
        raise TrainingError("empty typing batch")
    return [
        PreparedMention(
            word_vectors=emb.vectors(ex.mention.tokens),
            span=ex.mention.span,
            gold=tuple(t.index for t in ex.gold_types),
        )
        for ex in batch
    ]


def structure_pool(hierarchy: TypeHierarchy) -> list[StructurePair]:
    """All (type, ancestors) pairs with a non-empty ancestor set."""
    pool = []
    for i in range(len(hierarchy)):
        anc = hierarchy.ancestor_indexes(i)
        if anc:
            pool.append((i, anc))
    return pool


# ----------------------------------------------------------------------
# the membership grid: shared forward/backward for typing and structure


@dataclass
class _GridResult:
    loss_sum: float
    d_x: np.ndarray | None
    d_y: np.ndarray | None
    d_a: np.ndarray | None
    pattern: list[bytes]


def _membership_grid(
    kind: ScoreKind,
    x: np.ndarray,
    y: np.ndarray,
    bilinear: np.ndarray | None,
    margin: float,
    pos: np.ndarray,
    neg: np.ndarray,
    want_grads: bool,
) -> _GridResult:
    """Sum of -score over pos pairs plus penalty over neg pairs, with the
    gradients d/dx, d/dy, d/dA of that unnormalized sum."""
    if kind is ScoreKind.ORDER:
        if margin <= 0:
            raise ModelError(f"order margin must be positive, got {margin!r}")
        diff = y[None, :, :] - x[:, None, :]
        rect = np.maximum(diff, 0.0)
        energy = np.einsum("bnd,bnd->bn", rect, rect)
        hinge_active = energy < margin
        loss_sum = float((energy * pos).sum() + (np.maximum(margin - energy, 0.0) * neg).sum())
        pattern = [
            np.packbits((diff > 0.0) & (pos | neg)[:, :, None]).tobytes(),
            np.packbits(hinge_active & neg).tobytes(),
        ]
        if not want_grads:
            return _GridResult(loss_sum, None, None, None, pattern)
        # dE/dx = -2 rect, dE/dy = +2 rect; hinge contributes -dE when active
        coeff = pos.astype(np.float64) - (neg & hinge_active)
        d_x = -2.0 * np.einsum("bn,bnd->bd", coeff, rect)
        d_y = 2.0 * np.einsum("bn,bnd->nd", coeff, rect)
        return _GridResult(loss_sum, d_x, d_y, None, pattern)

    if kind is ScoreKind.BILINEAR:
        if bilinear is None:
            raise ModelError("bilinear scoring requires a matrix")
        right = y @ bilinear.T
    else:
        right = y
    logits = x @ right.T
    s = sigmoid(logits)
    pos_terms = -log_sigmoid(logits)
    neg_terms = neg_log_one_minus_sigmoid(logits)
    capped = neg_terms >= SATURATED_PENALTY
    loss_sum = float((pos_terms * pos).sum() + (neg_terms * neg).sum())
    pattern = [np.packbits(capped & neg).tobytes()]
    if not want_grads:
        return _GridResult(loss_sum, None, None, None, pattern)
    # d(-log sigma)/du = sigma - 1; d(-log(1-sigma))/du = sigma, but exactly 0
    # where the cap binds (the implemented loss is locally constant there)
    d_logits = np.where(pos, s - 1.0, 0.0) + np.where(neg & ~capped, s, 0.0)
    d_x = d_logits @ right
    if kind is ScoreKind.BILINEAR:
        d_y = d_logits.T @ (x @ bilinear)
        d_a = x.T @ d_logits @ y
    else:
        d_y = d_logits.T @ x
        d_a = None
    return _GridResult(loss_sum, d_x, d_y, d_a, pattern)


def _encoder_pattern(cache: EncoderCache) -> list[bytes]:
    parts = [np.packbits(cache.hidden_active).tobytes()]
    if cache.cnn is not None:
        parts.append(np.packbits(cache.cnn.active).tobytes())
        parts.append(cache.cnn.argmax.astype("<i8").tobytes())
    return parts


def _encoder_backward(
    enc: EncoderParams,
    cache: EncoderCache,
    g: np.ndarray,
    masks: DropoutMasks | None,
    grads: dict[str, np.ndarray],
) -> None:
    """Accumulate d(loss)/d(encoder tensors) for one mention; word vectors
    are fixed inputs, so the chain stops at the concat layer."""
    grads["w2"] += np.outer(g, cache.hidden_dropped)
    grads["b2"] += g
    dh = enc.w2.T @ g
    if masks is not None:
        dh = dh * masks.hidden
    dpre = dh * cache.hidden_active
    grads["w1"] += np.outer(dpre, cache.concat_dropped)
    grads["b1"] += dpre
    if cache.cnn is None:
        return
    dcat = enc.w1.T @ dpre
    if masks is not None:
        dcat = dcat * masks.concat
    d = enc.dim
    d_pool = dcat[d:]
    cnn = cache.cnn
    cols = np.arange(d)
    # max-pool routes each output dim to its first argmax window; a window
    # whose ReLU is inactive passes nothing
    alive = cnn.active[cnn.argmax, cols]
    contrib = np.where(alive, d_pool, 0.0)
    grads["cnn_b"] += contrib
    winners = cnn.windows[cnn.argmax]  # (d_out, taps, d_in)
    grads["cnn_w"] += np.einsum("o,oki->kio", contrib, winners)


def _forward_backward(
    typing_batch: Sequence[PreparedMention] | None,
    structure_batch: Sequence[StructurePair] | None,
    params: ModelParams,
    *,
    mention_kind: ScoreKind,
    structure_kind: ScoreKind | None,
    mode: EncoderMode,
    margin: float,
    structure_weight: float,
    masks: Sequence[DropoutMasks] | None,
    want_grads: bool,
) -> tuple[float, dict[str, np.ndarray] | None, bytes]:
    t_emb = params.type_emb
    n_types = t_emb.shape[0]
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in params.tensors().items()} if want_grads else None
    pattern: list[bytes] = []

    if typing_batch is not None:
        m_count = len(typing_batch)
        if m_count == 0:
            raise TrainingError("empty typing batch")
        if masks is not None and len(masks) != m_count:
            raise TrainingError("need one dropout mask set per mention")
        caches = []
        for i, pm in enumerate(typing_batch):
            if not pm.gold:
                raise TrainingError("mention with empty gold set")
            if max(pm.gold) >= n_types or min(pm.gold) < 0:
                raise TrainingError("gold type index out of range")
            mk = masks[i] if masks is not None else None
            caches.append(encode_vectors_cached(params.encoder, pm.word_vectors, pm.span, mode, mk))
            pattern.extend(_encoder_pattern(caches[-1]))
        mention_mat = np.stack([c.out for c in caches])
        pos = np.zeros((m_count, n_types), dtype=bool)
        for i, pm in enumerate(typing_batch):
            pos[i, list(pm.gold)] = True
        grid = _membership_grid(
            mention_kind, mention_mat, t_emb,
            params.bilinear if mention_kind is ScoreKind.BILINEAR else None,
            margin, pos, ~pos, want_grads,
        )
        total += grid.loss_sum / m_count
        pattern.extend(grid.pattern)
        if want_grads:
            scale = 1.0 / m_count
            grads["type_emb"] += scale * grid.d_y
            if grid.d_a is not None:
                grads["bilinear"] += scale * grid.d_a
            for i, cache in enumerate(caches):
                mk = masks[i] if masks is not None else None
                _encoder_backward(params.encoder, cache, scale * grid.d_x[i], mk, grads)

    if structure_batch is not None and structure_weight != 0.0:
        b_count = len(structure_batch)
        if b_count == 0:
            raise TrainingError("empty structure batch")
        kind = structure_kind if structure_kind is not None else mention_kind
        idx = np.array([t for t, _ in structure_batch], dtype=np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= n_types):
            raise TrainingError("structure type index out of range")
        x = t_emb[idx]
        pos = np.zeros((b_count, n_types), dtype=bool)
        for b, (t, anc) in enumerate(structure_batch):
            if not anc:
                raise TrainingError(f"type {t} has no ancestors; exclude it from structure batches")
            pos[b, list(anc)] = True
        self_mask = np.zeros((b_count, n_types), dtype=bool)
        self_mask[np.arange(b_count), idx] = True
        neg = ~pos & ~self_mask
        matrix = None
        matrix_key = None
        if kind is ScoreKind.BILINEAR:
            if params.bilinear_structure is not None:
                matrix, matrix_key = params.bilinear_structure, "bilinear_structure"
            elif params.bilinear is not None:
                matrix, matrix_key = params.bilinear, "bilinear"
            else:
                raise ModelError("bilinear structure scoring requires a matrix")
        grid = _membership_grid(kind, x, t_emb, matrix, margin, pos, neg, want_grads)
        total += structure_weight * grid.loss_sum / b_count
        pattern.extend(grid.pattern)
        if want_grads:
            scale = structure_weight / b_count
            d_t = grid.d_y
            np.add.at(d_t, idx, grid.d_x)  # x rows are views of rows of t_emb
            grads["type_emb"] += scale * d_t
            if grid.d_a is not None:
                grads[matrix_key] += scale * grid.d_a

    return float(total), grads, b"".join(pattern)


# ----------------------------------------------------------------------
# public loss / gradient entry points


def typing_loss(
    batch: Sequence[LabeledExample],
    params: ModelParams,
    emb: EmbeddingTable,
    *,
    kind: ScoreKind,
    mode: EncoderMode,
    margin: float = 1.0,
    masks: Sequence[DropoutMasks] | None = None,
) -> float:
    prepared = prepare_typing_batch(batch, emb)
    loss, _, _ = _forward_backward(
        prepared, None, params,
        mention_kind=kind, structure_kind=None, mode=mode, margin=margin,
        structure_weight=0.0, masks=masks, want_grads=False,
    )
    return loss


def structure_loss(
    batch: Sequence[StructurePair],
    type_emb: np.ndarray,
    *,
    kind: ScoreKind,
    bilinear: np.ndarray | None = None,
    margin: float = 1.0,
) -> float:
    if not batch:
        raise TrainingError("empty structure batch")
    t_emb = np.asarray(type_emb, dtype=np.float64)
    n_types = t_emb.shape[0]
    b_count = len(batch)
    idx = np.array([t for t, _ in batch], dtype=np.intp)
    pos = np.zeros((b_count, n_types), dtype=bool)
    for b, (t, anc) in enumerate(batch):
        if not anc:
            raise TrainingError(f"type {t} has no ancestors; exclude it from structure batches")
        pos[b, list(anc)] = True
    self_mask = np.zeros((b_count, n_types), dtype=bool)
    self_mask[np.arange(b_count), idx] = True
    grid = _membership_grid(kind, t_emb[idx], t_emb, bilinear, margin, pos, ~pos & ~self_mask, False)
    return grid.loss_sum / b_count


def combined_loss(
    typing_batch: Sequence[PreparedMention] | None,
    structure_batch: Sequence[StructurePair] | None,
    params: ModelParams,
    config: TrainConfig,
    masks: Sequence[DropoutMasks] | None = None,
) -> float:
    loss, _, _ = _forward_backward(
        typing_batch, structure_batch, params,
        mention_kind=config.mention_score_kind,
        structure_kind=config.effective_structure_kind(),
        mode=config.encoder_mode, margin=config.margin,
        structure_weight=config.structure_weight,
        masks=masks, want_grads=False,
    )
    return loss


def combined_loss_with_pattern(
    typing_batch: Sequence[PreparedMention] | None,
    structure_batch: Sequence[StructurePair] | None,
    params: ModelParams,
    config: TrainConfig,
    masks: Sequence[DropoutMasks] | None = None,
) -> tuple[float, bytes]:
    """Loss plus the activation-pattern bytes used by the kink guard."""
    loss, _, pattern = _forward_backward(
        typing_batch, structure_batch, params,
        mention_kind=config.mention_score_kind,
        structure_kind=config.effective_structure_kind(),
        mode=config.encoder_mode, margin=config.margin,
        structure_weight=config.structure_weight,
        masks=masks, want_grads=False,
    )
    return loss, pattern


def backward(
    typing_batch: Sequence[PreparedMention] | None,
    structure_batch: Sequence[StructurePair] | None,
    params: ModelParams,
    config: TrainConfig,
    masks: Sequence[DropoutMasks] | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Combined loss and its exact analytic gradients for every tensor.

    Tensors that do not participate (CNN filters in mention-only mode, the
    structure machinery at structure_weight 0) get exact zero gradients.
    """
    loss, grads, _ = _forward_backward(
        typing_batch, structure_batch, params,
        mention_kind=config.mention_score_kind,
        structure_kind=config.effective_structure_kind(),
        mode=config.encoder_mode, margin=config.margin,
        structure_weight=config.structure_weight,
        masks=masks, want_grads=True,
    )
    assert grads is not None
    return loss, grads


# ----------------------------------------------------------------------
# finite differences


@dataclass
class FDReport:
    max_rel_error: float
    checked: int
    skipped: int
    worst: tuple[str, int, float, float] | None  # tensor, flat index, analytic, numeric


def finite_difference_check(
    loss_fn: Callable[[dict[str, np.ndarray]], tuple[float, bytes]],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    *,
    epsilon: float = 1e-5,
) -> FDReport:
    """Central-difference check of analytic gradients, skipping kinks.

    ``loss_fn`` must be deterministic and return (loss, pattern bytes); a
    coordinate is skipped unless the pattern at theta and theta +/- epsilon
    matches the base pattern exactly.  The error measure is
    |analytic - numeric| / max(1, |analytic|, |numeric|), so large
    gradients are compared relatively and small ones absolutely.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise TrainingError(f"epsilon must be in [1e-7, 1e-3], got {epsilon!r}")
    params = dict(params)
    base_loss, base_pattern = loss_fn(params)
    if not math.isfinite(base_loss):
        raise TrainingError("loss is not finite at the base point")
    max_rel = 0.0
    worst = None
    checked = 0
    skipped = 0
    for name, theta in params.items():
        grad_flat = np.asarray(analytic[name]).reshape(-1)
        flat = theta.reshape(-1)
        for c in range(flat.size):
            saved = flat[c]
            flat[c] = saved + epsilon
            loss_hi, pat_hi = loss_fn(params)
            flat[c] = saved - epsilon
            loss_lo, pat_lo = loss_fn(params)
            flat[c] = saved
            if pat_hi != base_pattern or pat_lo != base_pattern:
                skipped += 1
                continue
            if not (math.isfinite(loss_hi) and math.isfinite(loss_lo)):
                raise TrainingError(f"loss is not finite near {name!r}[{c}]")
            numeric = (loss_hi - loss_lo) / (2.0 * epsilon)
            ana = float(grad_flat[c])
            rel = abs(ana - numeric) / max(1.0, abs(ana), abs(numeric))
            checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = (name, c, ana, numeric)
    return FDReport(max_rel_error=max_rel, checked=checked, skipped=skipped, worst=worst)


# ----------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(
            step=0,
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
        )


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    *,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, applied in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient for {name!r} at step {t}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ----------------------------------------------------------------------
# the epoch loop


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    dev_map: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochMetrics]
    best_epoch: int
    best_dev_map: float


def write_history(path: str, history: Sequence[EpochMetrics]) -> None:
    """``epoch<TAB>train_loss<TAB>dev_map`` rows; floats via repr so the
    bytes round-trip exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        for m in history:
            fh.write(f"{m.epoch}\t{m.train_loss!r}\t{m.dev_map!r}\n")


def _rng_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    init_ss, mask_ss, struct_ss = np.random.SeedSequence(seed).spawn(3)
    return (
        np.random.default_rng(init_ss),
        np.random.default_rng(mask_ss),
        np.random.default_rng(struct_ss),
    )


def _sample_structure_batch(
    pool: Sequence[StructurePair],
    batch_size: int,
    rng: np.random.Generator,
) -> list[StructurePair]:
    if batch_size >= len(pool):
        return list(pool)
    chosen = rng.choice(len(pool), size=batch_size, replace=False)
    return [pool[int(i)] for i in chosen]


def train(
    train_examples: Sequence[LabeledExample],
    dev_examples: Sequence[LabeledExample],
    hierarchy: TypeHierarchy,
    emb: EmbeddingTable,
    config: TrainConfig,
) -> TrainResult:
    """Run Adam over shuffled minibatches with early stopping on dev MAP.

    Improvement means strictly greater dev MAP; training stops once the
    epochs since the best dev MAP reach the patience, and the returned
    parameters are the best-epoch snapshot.
    """
    config.validate()
    if not train_examples:
        raise TrainingError("no training examples")
    if not dev_examples:
        raise TrainingError("no dev examples")
    if emb.dim != config.dim:
        raise ConfigError(f"embedding dim {emb.dim} does not match config dim {config.dim}")
    init_rng, mask_rng, struct_rng = _rng_streams(config.seed)
    params = init_model(len(hierarchy), config, rng=init_rng)
    tensors = params.tensors()
    state = AdamState.for_params(tensors)
    pool = structure_pool(hierarchy)
    if config.structure_weight > 0 and not pool:
        raise TrainingError("structure_weight is positive but no type has ancestors")
    structure_kind = config.effective_structure_kind()

    history: list[EpochMetrics] = []
    best_params = params.copy()
    best_epoch = 0
    best_map = -1.0
    for epoch in range(1, config.max_epochs + 1):
        losses = []
        for batch in batch_iter(train_examples, config.batch_size, config.seed, epoch - 1):
            prepared = prepare_typing_batch(batch, emb)
            masks = None
            if config.dropout > 0:
                masks = [sample_dropout_masks(mask_rng, config.dim, config.dropout) for _ in prepared]
            sbatch = None
            if config.structure_weight > 0:
                sbatch = _sample_structure_batch(pool, config.structure_batch_size, struct_rng)
            loss, grads, _ = _forward_backward(
                prepared, sbatch, params,
                mention_kind=config.mention_score_kind,
                structure_kind=structure_kind,
                mode=config.encoder_mode, margin=config.margin,
                structure_weight=config.structure_weight,
                masks=masks, want_grads=True,
            )
            adam_step(
                tensors, grads, state,
                lr=config.learning_rate,
                beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps,
            )
            losses.append(loss)
        train_loss = sum(losses) / len(losses)
        report = evaluate_model(
            dev_examples, params, emb, config.encoder_mode, config.mention_score_kind
        )
        history.append(EpochMetrics(epoch=epoch, train_loss=train_loss, dev_map=report.mean_ap))
        log.info("epoch %d: train_loss=%.6f dev_map=%.6f", epoch, train_loss, report.mean_ap)
        if report.mean_ap > best_map:
            best_map = report.mean_ap
            best_epoch = epoch
            best_params = params.copy()
        elif epoch - best_epoch >= config.patience:
            log.info("stopping: no dev improvement in %d epoch(s)", epoch - best_epoch)
            break
    return TrainResult(params=best_params, history=history, best_epoch=best_epoch, best_dev_map=best_map)


def make_checkpoint(
    params: ModelParams,
    config: TrainConfig,
    type_names: Sequence[str],
    emb: EmbeddingTable,
) -> Checkpoint:
    """Bundle trained parameters with everything scoring needs."""
    return Checkpoint(
        params=params,
        type_names=tuple(type_names),
        vocab=emb.tokens,
        word_emb=np.asarray(emb.matrix),
        encoder_mode=config.encoder_mode,
        mention_score_kind=config.mention_score_kind,
        structure_score_kind=config.effective_structure_kind() if config.structure_weight > 0 else None,
        margin=config.margin,
    )
