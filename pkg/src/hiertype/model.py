"""Mention encoder and membership scoring.

The encoder combines two views of a mention: the mean of the raw word
vectors inside the entity span, and a width-w CNN over the whole sentence
followed by elementwise max-pooling.  Window j (0-indexed) is centered on
token j of the (possibly padded) sentence:

    pre[j] = b + sum_k W[k] . v[j - w//2 + k],   k = 0 .. w-1

with out-of-range positions reading a zero vector.  Sentences shorter than
w are zero-padded to length w (centered), so there is always at least one
window.  The pooled CNN vector and the span mean are concatenated and fed
through an affine-ReLU-affine head; in mention-only mode the CNN slot of
the concatenation is zero-filled.  Word vectors are fixed inputs, not
parameters.

Scoring a pair (x, y) for "x is a member / descendant of y" comes in three
kinds.  Order: score = -||max(0, y - x)||^2 and the non-membership penalty
is the hinge max(0, margin - E).  Bilinear: score = log sigma(x' A y),
penalty = -log(1 - sigma).  Dot: bilinear with A fixed to identity.
Penalties are always >= 0 and are added to losses for negative pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import BinaryIO, Sequence

import numpy as np

from .corpus import EmbeddingTable, Mention
from .errors import HiertypeError

# sigma is clamped into [CLAMP, 1 - CLAMP] before log(1 - sigma)
SIGMOID_CLAMP = 1e-12

CHECKPOINT_FORMAT = "hiertype-checkpoint"
CHECKPOINT_VERSION = 1


class ModelError(HiertypeError):
    """Inconsistent model parameters or scoring request."""


class CheckpointError(HiertypeError):
    """Unreadable or malformed checkpoint file."""


class EncoderMode(str, Enum):
    MENTION_ONLY = "mention"
    CNN_PLUS_MENTION = "cnn"


class ScoreKind(str, Enum):
    ORDER = "order"
    BILINEAR = "bilinear"
    DOT = "dot"


# ----------------------------------------------------------------------
# parameters


@dataclass
class EncoderParams:
    """Encoder tensors.  Shapes: cnn_w (w, d, d) indexed [tap, in, out],
    cnn_b (d,), w1 (d, 2d), b1 (d,), w2 (d, d), b2 (d,)."""

    cnn_w: np.ndarray
    cnn_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name in ("cnn_w", "cnn_b", "w1", "b1", "w2", "b2"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        w, d_in, d_out = self.cnn_w.shape
        if d_in != d_out:
            raise ModelError(f"cnn filter must map d -> d, got {self.cnn_w.shape}")
        d = d_out
        if w % 2 == 0 or w < 1:
            raise ModelError(f"filter width must be odd and positive, got {w}")
        expect = {
            "cnn_b": (d,),
            "w1": (d, 2 * d),
            "b1": (d,),
            "w2": (d, d),
            "b2": (d,),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ModelError(f"{name} must have shape {shape}, got {got}")

    @property
    def dim(self) -> int:
        return self.cnn_w.shape[2]

    @property
    def filter_width(self) -> int:
        return self.cnn_w.shape[0]


@dataclass
class ModelParams:
    """Full trainable state: encoder, type embeddings, optional bilinear maps."""

    encoder: EncoderParams
    type_emb: np.ndarray
    bilinear: np.ndarray | None = None
    bilinear_structure: np.ndarray | None = None

    def __post_init__(self):
        self.type_emb = np.asarray(self.type_emb, dtype=np.float64)
        d = self.encoder.dim
        if self.type_emb.ndim != 2 or self.type_emb.shape[1] != d:
            raise ModelError(f"type embeddings must be (n_types, {d}), got {self.type_emb.shape}")
        for name in ("bilinear", "bilinear_structure"):
            mat = getattr(self, name)
            if mat is not None:
                mat = np.asarray(mat, dtype=np.float64)
                if mat.shape != (d, d):
                    raise ModelError(f"{name} must be ({d}, {d}), got {mat.shape}")
                setattr(self, name, mat)

    @property
    def n_types(self) -> int:
        return self.type_emb.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        """Named views of every present tensor, in a fixed order."""
        out = {
            "cnn_w": self.encoder.cnn_w,
            "cnn_b": self.encoder.cnn_b,
            "w1": self.encoder.w1,
            "b1": self.encoder.b1,
            "w2": self.encoder.w2,
            "b2": self.encoder.b2,
            "type_emb": self.type_emb,
        }
        if self.bilinear is not None:
            out["bilinear"] = self.bilinear
        if self.bilinear_structure is not None:
            out["bilinear_structure"] = self.bilinear_structure
        return out

    def copy(self) -> "ModelParams":
        enc = EncoderParams(
            self.encoder.cnn_w.copy(), self.encoder.cnn_b.copy(),
            self.encoder.w1.copy(), self.encoder.b1.copy(),
            self.encoder.w2.copy(), self.encoder.b2.copy(),
        )
        return ModelParams(
            encoder=enc,
            type_emb=self.type_emb.copy(),
            bilinear=None if self.bilinear is None else self.bilinear.copy(),
            bilinear_structure=None if self.bilinear_structure is None else self.bilinear_structure.copy(),
        )

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "ModelParams":
        enc = EncoderParams(
            tensors["cnn_w"], tensors["cnn_b"],
            tensors["w1"], tensors["b1"], tensors["w2"], tensors["b2"],
        )
        return cls(
            encoder=enc,
            type_emb=tensors["type_emb"],
            bilinear=tensors.get("bilinear"),
            bilinear_structure=tensors.get("bilinear_structure"),
        )


@dataclass(frozen=True)
class DropoutMasks:
    """Inverted-dropout multipliers for one mention: concat input (2d,)
    and post-ReLU hidden (d,).  All-ones means dropout is a no-op."""

    concat: np.ndarray
    hidden: np.ndarray


def sample_dropout_masks(rng: np.random.Generator, dim: int, p: float) -> DropoutMasks:
    if not 0.0 <= p < 1.0:
        raise ModelError(f"dropout probability must be in [0, 1), got {p!r}")
    keep = 1.0 - p
    concat = (rng.random(2 * dim) < keep).astype(np.float64) / keep
    hidden = (rng.random(dim) < keep).astype(np.float64) / keep
    return DropoutMasks(concat=concat, hidden=hidden)


# ----------------------------------------------------------------------
# numerics


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    t = np.exp(-np.abs(z))  # never overflows
    return np.where(z >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def log_sigmoid(z: np.ndarray) -> np.ndarray:
    # -softplus(-z); equals -log1p(exp(-z)) for z >= 0, z - log1p(exp(z)) otherwise
    z = np.asarray(z, dtype=np.float64)
    return -(np.maximum(-z, 0.0) + np.log1p(np.exp(-np.abs(z))))


# loss of a negative pair once sigma is clamped to 1 - SIGMOID_CLAMP
SATURATED_PENALTY = float(-np.log(1.0 - (1.0 - SIGMOID_CLAMP)))


def neg_log_one_minus_sigmoid(z: np.ndarray) -> np.ndarray:
    # softplus(z); the direct 1 - sigma route loses every significant digit
    # once sigma nears 1, so take the log analytically and cap at the clamp
    z = np.asarray(z, dtype=np.float64)
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return np.minimum(softplus, SATURATED_PENALTY)


# ----------------------------------------------------------------------
# encoder forward


@dataclass
class CnnCache:
    """Everything the CNN backward pass needs from the forward pass."""

    windows: np.ndarray   # (J, w, d) input slices, zeros where out of range
    pre: np.ndarray       # (J, d) pre-activations
    active: np.ndarray    # (J, d) bool, pre > 0
    argmax: np.ndarray    # (d,) first maximizing window per output dim
    out: np.ndarray       # (d,) pooled ReLU outputs


def _check_word_vectors(word_vectors: np.ndarray, d: int) -> np.ndarray:
    wv = np.asarray(word_vectors, dtype=np.float64)
    if wv.ndim != 2 or wv.shape[1] != d:
        raise ModelError(f"word vectors must be (n, {d}), got {wv.shape}")
    if wv.shape[0] < 1:
        raise ModelError("cannot encode an empty sentence")
    return wv


def cnn_forward_cached(p: EncoderParams, word_vectors: np.ndarray) -> CnnCache:
    w, d = p.filter_width, p.dim
    wv = _check_word_vectors(word_vectors, d)
    n = wv.shape[0]
    if n < w:
        padded = np.zeros((w, d), dtype=np.float64)
        left = (w - n) // 2
        padded[left:left + n] = wv
    else:
        padded = wv
    length = padded.shape[0]
    j_count = length - w + 1
    half = w // 2
    windows = np.zeros((j_count, w, d), dtype=np.float64)
    for k in range(w):
        shift = k - half  # window j reads padded[j + shift]
        lo = max(0, -shift)
        hi = min(j_count, length - shift)
        if lo < hi:
            windows[lo:hi, k, :] = padded[lo + shift:hi + shift, :]
    pre = np.einsum("jki,kio->jo", windows, p.cnn_w) + p.cnn_b
    relu = np.maximum(pre, 0.0)
    argmax = np.argmax(relu, axis=0)  # first max wins on ties
    out = relu[argmax, np.arange(d)]
    return CnnCache(windows=windows, pre=pre, active=pre > 0.0, argmax=argmax, out=out)


def cnn_forward(p: EncoderParams, word_vectors: np.ndarray) -> np.ndarray:
    """Max-pooled CNN sentence vector (d,)."""
    return cnn_forward_cached(p, word_vectors).out


def surface_average(word_vectors: np.ndarray, span: tuple[int, int]) -> np.ndarray:
    """Mean of the raw word vectors over the inclusive span."""
    wv = np.asarray(word_vectors, dtype=np.float64)
    t1, t2 = span
    if not (0 <= t1 <= t2 < wv.shape[0]):
        raise ModelError(f"span {span!r} out of range for {wv.shape[0]} token(s)")
    return wv[t1:t2 + 1].mean(axis=0)


@dataclass
class EncoderCache:
    mode: EncoderMode
    cnn: CnnCache | None
    sfm: np.ndarray             # (d,) span mean
    concat: np.ndarray          # (2d,) pre-dropout
    concat_dropped: np.ndarray  # (2d,)
    pre_hidden: np.ndarray      # (d,)
    hidden_active: np.ndarray   # (d,) bool, pre_hidden > 0
    hidden_dropped: np.ndarray  # (d,)
    out: np.ndarray             # (d,)


def encode_vectors_cached(
    p: EncoderParams,
    word_vectors: np.ndarray,
    span: tuple[int, int],
    mode: EncoderMode,
    masks: DropoutMasks | None = None,
) -> EncoderCache:
    d = p.dim
    wv = _check_word_vectors(word_vectors, d)
    sfm = surface_average(wv, span)
    if mode is EncoderMode.CNN_PLUS_MENTION:
        cnn = cnn_forward_cached(p, wv)
        m_cnn = cnn.out
    else:
        cnn = None
        m_cnn = np.zeros(d, dtype=np.float64)
    concat = np.concatenate([sfm, m_cnn])
    dropped = concat * masks.concat if masks is not None else concat
    pre = p.w1 @ dropped + p.b1
    hidden = np.maximum(pre, 0.0)
    hidden_dropped = hidden * masks.hidden if masks is not None else hidden
    out = p.w2 @ hidden_dropped + p.b2
    return EncoderCache(
        mode=mode, cnn=cnn, sfm=sfm, concat=concat, concat_dropped=dropped,
        pre_hidden=pre, hidden_active=pre > 0.0, hidden_dropped=hidden_dropped,
        out=out,
    )


def encode_vectors(
    p: EncoderParams,
    word_vectors: np.ndarray,
    span: tuple[int, int],
    mode: EncoderMode,
    masks: DropoutMasks | None = None,
) -> np.ndarray:
    return encode_vectors_cached(p, word_vectors, span, mode, masks).out


def encode_mention(
    p: EncoderParams,
    mention: Mention,
    emb: EmbeddingTable,
    mode: EncoderMode,
    masks: DropoutMasks | None = None,
) -> np.ndarray:
    """Encode one mention into the shared d-dim space."""
    return encode_vectors(p, emb.vectors(mention.tokens), mention.span, mode, masks)


# ----------------------------------------------------------------------
# pair scoring


def order_violation(x: np.ndarray, y: np.ndarray) -> float:
    """E(x, y) = ||max(0, y - x)||^2; zero iff x dominates y coordinatewise."""
    r = np.maximum(0.0, np.asarray(y, dtype=np.float64) - np.asarray(x, dtype=np.float64))
    return float(np.square(r).sum())


def _pair_logit(kind: ScoreKind, x: np.ndarray, y: np.ndarray, bilinear: np.ndarray | None) -> float:
    if kind is ScoreKind.BILINEAR:
        if bilinear is None:
            raise ModelError("bilinear scoring requires a matrix")
        return float(x @ bilinear @ y)
    return float(np.dot(x, y))


def score_membership(
    kind: ScoreKind,
    x: np.ndarray,
    y: np.ndarray,
    bilinear: np.ndarray | None = None,
) -> float:
    """Membership score of x in y; higher means more compatible."""
    if kind is ScoreKind.ORDER:
        return -order_violation(x, y)
    return float(log_sigmoid(_pair_logit(kind, x, y, bilinear)))

def penalty_non_membership(
    kind: ScoreKind,
    x: np.ndarray,
    y: np.ndarray,
    bilinear: np.ndarray | None = None,
    margin: float = 1.0,
) -> float:
    """Always-nonnegative penalty added to the loss for negative pairs."""
    if kind is ScoreKind.ORDER:
        if margin <= 0:
            raise ModelError(f"order margin must be positive, got {margin!r}")
        return max(0.0, margin - order_violation(x, y))
    return float(neg_log_one_minus_sigmoid(_pair_logit(kind, x, y, bilinear)))


def score_all_types(
    kind: ScoreKind,
    m: np.ndarray,
    type_emb: np.ndarray,
    bilinear: np.ndarray | None = None,
) -> np.ndarray:
    """Membership scores of one vector against every type row, shape (N,)."""
    m = np.asarray(m, dtype=np.float64)
    T = np.asarray(type_emb, dtype=np.float64)
    if kind is ScoreKind.ORDER:
        r = np.maximum(0.0, T - m[None, :])
        return -np.einsum("nd,nd->n", r, r)
    if kind is ScoreKind.BILINEAR:
        if bilinear is None:
            raise ModelError("bilinear scoring requires a matrix")
        return log_sigmoid(T @ (bilinear.T @ m))
    return log_sigmoid(T @ m)


def rank_types(
    kind: ScoreKind,
    m: np.ndarray,
    type_emb: np.ndarray,
    bilinear: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Type indexes ranked by descending score; ties break by ascending index."""
    scores = score_all_types(kind, m, type_emb, bilinear)
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return order, scores


# ----------------------------------------------------------------------
# checkpoints

_TENSOR_ORDER = (
    "cnn_w", "cnn_b", "w1", "b1", "w2", "b2",
    "type_emb", "bilinear", "bilinear_structure", "word_emb",
)


@dataclass
class Checkpoint:
    """Self-contained trained model: parameters plus everything needed to
    score new text (frozen word vectors, type names, scoring configuration)."""

    params: ModelParams
    type_names: tuple[str, ...]
    vocab: tuple[str, ...]
    word_emb: np.ndarray
    encoder_mode: EncoderMode
    mention_score_kind: ScoreKind
    structure_score_kind: ScoreKind | None
    margin: float

    def __post_init__(self):
        self.word_emb = np.asarray(self.word_emb, dtype=np.float64)
        if len(self.type_names) != self.params.n_types:
            raise CheckpointError(
                f"{len(self.type_names)} type name(s) for {self.params.n_types} embedding row(s)"
            )
        if self.word_emb.shape != (len(self.vocab), self.params.encoder.dim):
            raise CheckpointError(
                f"word embedding block {self.word_emb.shape} does not match "
                f"{len(self.vocab)} token(s) at dim {self.params.encoder.dim}"
            )

    def embedding_table(self) -> EmbeddingTable:
        return EmbeddingTable(self.vocab, self.word_emb)


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    """Header JSON line + raw little-endian float64 tensors, fixed order."""
    tensors = dict(ckpt.params.tensors())
    tensors["word_emb"] = ckpt.word_emb
    names = [n for n in _TENSOR_ORDER if n in tensors]
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dim": ckpt.params.encoder.dim,
        "filter_width": ckpt.params.encoder.filter_width,
        "n_types": ckpt.params.n_types,
        "encoder_mode": ckpt.encoder_mode.value,
        "mention_score_kind": ckpt.mention_score_kind.value,
        "structure_score_kind": None if ckpt.structure_score_kind is None else ckpt.structure_score_kind.value,
        "margin": float(ckpt.margin),
        "type_names": list(ckpt.type_names),
        "vocab": list(ckpt.vocab),
        "tensors": [[n, list(tensors[n].shape)] for n in names],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, ensure_ascii=False, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint header: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a model checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in header["tensors"]:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated tensor block for {name!r}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        tensors[name] = arr.reshape([int(s) for s in shape]).astype(np.float64)
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing byte(s) after tensors")
    try:
        word_emb = tensors.pop("word_emb")
        params = ModelParams.from_tensors(tensors)
        skind = header["structure_score_kind"]
        ckpt = Checkpoint(
            params=params,
            type_names=tuple(header["type_names"]),
            vocab=tuple(header["vocab"]),
            word_emb=word_emb,
            encoder_mode=EncoderMode(header["encoder_mode"]),
            mention_score_kind=ScoreKind(header["mention_score_kind"]),
            structure_score_kind=None if skind is None else ScoreKind(skind),
            margin=float(header["margin"]),
        )
    except (KeyError, ValueError, ModelError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint: {exc}") from exc
    return ckpt
