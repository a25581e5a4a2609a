"""Full network: configuration, parameter container, forward and backward passes.

One forward pass per shape: embed the view features, accumulate spatially
weighted pattern correlations per view node, softmax-attend over the nodes,
aggregate, and classify. The trace caches every intermediate needed by the
hand-derived backward pass and by inspection tools.

Ablation flags substitute tensors rather than branching the math:
``no_spatiality`` feeds an all-ones similarity matrix, ``no_attention``
fixes uniform weights, ``no_attention_c`` / ``no_attention_wf`` feed
all-ones stand-ins for the corresponding score inputs, ``no_latent`` uses
raw features as embeddings (the pattern count then equals the input
dimension), ``no_correlation`` keeps the spatially weighted sums as
per-node vectors instead of outer-product matrices, and ``mean_pool`` /
``max_pool`` bypass the graph entirely and pool embeddings straight into
the global-feature layer. The backward pass always differentiates the
computation that actually ran, so finite differences agree under every
flag combination.
"""

import io
import json
import struct
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .attention import (
    AttentionParams,
    aggregate,
    aggregate_backward,
    attention_scores,
    init_attention,
    normalize_attention,
    scores_backward,
)
from .classifier import (
    ClassifierParams,
    classifier_backward,
    classify,
    global_feature,
    init_classifier,
    nll_loss,
    one_hot,
)
from .correlation import all_correlation_backward, all_cumulative_correlations
from .dataio import ShapeSample
from .errors import DataIOError, FormatError
from .numeric import softmax_grad
from .semantics import LatentMapParams, embed, embed_backward, init_latent_map

CHECKPOINT_MAGIC = b"3DVG-M"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    """Model dimensions, optimization settings, and ablation flags.

    Defaults follow the reference operating point: learning rate 0.009,
    spatial decay sigma 10, 128 latent patterns, 256-dim global feature,
    20 views.
    """

    num_classes: int
    input_dim: int = 64
    views: int = 20
    n_patterns: int = 128
    feature_dim: int = 256
    sigma: float = 10.0
    learning_rate: float = 0.009
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    no_spatiality: bool = False
    no_attention: bool = False
    no_attention_c: bool = False
    no_attention_wf: bool = False
    no_latent: bool = False
    no_correlation: bool = False
    mean_pool: bool = False
    max_pool: bool = False
    drop_eq10_second_term: bool = False
    plateau_patience: int = 5
    plateau_rel_tol: float = 1e-5
    threads: int = 1

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        for name in ("input_dim", "views", "feature_dim", "batch_size", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_patterns < 2:
            raise ValueError("n_patterns must be >= 2")
        # Zero learning rate is allowed: it runs the full pipeline with
        # parameters frozen, which the determinism checks rely on.
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.epochs < 0 or self.plateau_patience < 0:
            raise ValueError("epochs and plateau_patience must be >= 0")
        if self.mean_pool and self.max_pool:
            raise ValueError("mean_pool and max_pool are mutually exclusive")

    @property
    def effective_patterns(self) -> int:
        """Embedding width: the pattern count, or the raw input dim under no_latent."""
        return self.input_dim if self.no_latent else self.n_patterns

    @property
    def pooled_mode(self) -> bool:
        return self.mean_pool or self.max_pool

    @property
    def vector_descriptor(self) -> bool:
        """True when the per-shape descriptor is a vector rather than a matrix."""
        return self.pooled_mode or self.no_correlation

    @property
    def descriptor_dim(self) -> int:
        n = self.effective_patterns
        return n if self.vector_descriptor else n * n


@dataclass
class ModelParams:
    """All learnable parameters, grouped by pipeline stage."""

    latent: LatentMapParams
    attn: AttentionParams
    cls: ClassifierParams

    def blocks(self):
        """Yield (name, array) for every parameter block in declared order."""
        for name, (group, attr) in _BLOCK_PATHS:
            yield name, getattr(getattr(self, group), attr)

    def block(self, name: str) -> np.ndarray:
        for bname, arr in self.blocks():
            if bname == name:
                return arr
        raise KeyError(name)

    def copy(self) -> "ModelParams":
        """Deep copy; the new container's arrays are independent and writable."""
        return ModelParams(
            latent=LatentMapParams(
                filters=self.latent.filters.copy(), offsets=self.latent.offsets.copy()
            ),
            attn=AttentionParams(
                node_proj=self.attn.node_proj.copy(),
                node_vec=self.attn.node_vec.copy(),
                ctx_vec=self.attn.ctx_vec.copy(),
                bias=self.attn.bias.copy(),
                out=self.attn.out.copy(),
            ),
            cls=ClassifierParams(
                feat_weights=self.cls.feat_weights.copy(),
                feat_bias=self.cls.feat_bias.copy(),
                cls_weights=self.cls.cls_weights.copy(),
                cls_bias=self.cls.cls_bias.copy(),
            ),
        )


# Declared block order; the checkpoint payload and the SGD update follow it.
_BLOCK_PATHS = (
    ("latent_filters", ("latent", "filters")),
    ("latent_offsets", ("latent", "offsets")),
    ("attn_node_proj", ("attn", "node_proj")),
    ("attn_node_vec", ("attn", "node_vec")),
    ("attn_ctx_vec", ("attn", "ctx_vec")),
    ("attn_bias", ("attn", "bias")),
    ("attn_out", ("attn", "out")),
    ("feat_weights", ("cls", "feat_weights")),
    ("feat_bias", ("cls", "feat_bias")),
    ("cls_weights", ("cls", "cls_weights")),
    ("cls_bias", ("cls", "cls_bias")),
)

BLOCK_NAMES = tuple(name for name, _ in _BLOCK_PATHS)


@dataclass
class Gradients:
    """Per-block gradients mirroring :class:`ModelParams`."""

    latent_filters: np.ndarray
    latent_offsets: np.ndarray
    attn_node_proj: np.ndarray
    attn_node_vec: np.ndarray
    attn_ctx_vec: np.ndarray
    attn_bias: np.ndarray
    attn_out: np.ndarray
    feat_weights: np.ndarray
    feat_bias: np.ndarray
    cls_weights: np.ndarray
    cls_bias: np.ndarray

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "Gradients":
        return cls(**{name: np.zeros_like(arr) for name, arr in params.blocks()})

    def blocks(self):
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    def add_(self, other: "Gradients") -> "Gradients":
        for name, arr in self.blocks():
            arr += getattr(other, name)
        return self

    def scale_(self, factor: float) -> "Gradients":
        for _, arr in self.blocks():
            arr *= factor
        return self


def init_model(config: TrainConfig, rng: np.random.Generator) -> ModelParams:
    """Seeded parameter init; draw order is fixed so runs reproduce bit-for-bit."""
    latent = init_latent_map(config.n_patterns, config.input_dim, rng)
    attn = init_attention(
        config.num_classes, config.effective_patterns, config.feature_dim, rng
    )
    # Soft-assignment descriptors (matrix or vector) spread ~unit total mass
    # over their entries, so a typical entry has RMS around sqrt(2)/dim. Raw
    # features under no_latent have no such known scale; assume unit RMS.
    input_rms = 1.0 if config.no_latent else np.sqrt(2.0) / config.descriptor_dim
    cls = init_classifier(
        config.num_classes, config.feature_dim, config.descriptor_dim, rng,
        input_rms=input_rms,
    )
    return ModelParams(latent=latent, attn=attn, cls=cls)


def validate_params(params: ModelParams, config: TrainConfig) -> None:
    """Reject parameter containers whose shapes do not match the config."""
    n = config.effective_patterns
    checks = (
        (params.latent.filters.shape, (config.n_patterns, config.input_dim)),
        (params.attn.node_proj.shape, (config.num_classes, n)),
        (params.attn.ctx_vec.shape, (config.feature_dim,)),
        (params.cls.feat_weights.shape, (config.feature_dim, config.descriptor_dim)),
        (params.cls.cls_weights.shape, (config.num_classes, config.feature_dim)),
    )
    for got, want in checks:
        if got != want:
            raise ValueError(f"parameter shape {got} does not match config ({want})")


@dataclass
class ForwardTrace:
    """Cached intermediates of one shape's forward pass.

    Graph-path fields are ``None`` in the pooled modes, which never build
    node descriptors or attention weights; ``scores`` is also ``None`` when
    attention is forced uniform.
    """

    embeddings: np.ndarray
    weighted_sums: Optional[np.ndarray]
    node_corr: Optional[np.ndarray]
    scores: Optional[np.ndarray]
    alpha: Optional[np.ndarray]
    agg: np.ndarray
    global_feature: np.ndarray
    probs: np.ndarray
    pool_argmax: Optional[np.ndarray] = None


def _check_sample(sample: ShapeSample, config: TrainConfig) -> np.ndarray:
    feats = np.asarray(sample.features, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError(f"sample features must be (V, D), got {feats.shape}")
    if feats.shape[0] != config.views:
        raise ValueError(
            f"sample has {feats.shape[0]} views, config expects {config.views}"
        )
    if feats.shape[1] != config.input_dim:
        raise ValueError(
            f"sample feature dim {feats.shape[1]}, config expects {config.input_dim}"
        )
    if sample.graph.num_views != feats.shape[0]:
        raise ValueError("sample graph and features disagree on the view count")
    if not config.no_spatiality and not config.pooled_mode:
        if sample.graph.sigma != config.sigma:
            raise ValueError(
                f"sample graph built with sigma={sample.graph.sigma}, "
                f"config has sigma={config.sigma}; rebuild the graphs"
            )
    return feats


def _similarity_for(sample: ShapeSample, config: TrainConfig) -> np.ndarray:
    if config.no_spatiality:
        v = sample.graph.num_views
        return np.ones((v, v))
    return sample.graph.similarity


def forward(sample: ShapeSample, params: ModelParams, config: TrainConfig) -> ForwardTrace:
    """Run the full pipeline on one shape and cache all intermediates."""
    validate_params(params, config)
    feats = _check_sample(sample, config)
    num_views = feats.shape[0]

    if config.no_latent:
        if not np.isfinite(feats).all():
            raise ValueError("features must be finite")
        embeddings = feats
    else:
        embeddings = embed(feats, params.latent)

    pool_argmax = None
    if config.pooled_mode:
        if config.mean_pool:
            agg = embeddings.mean(axis=0)
        else:
            pool_argmax = embeddings.argmax(axis=0)
            agg = embeddings[pool_argmax, np.arange(embeddings.shape[1])]
        weighted = node = scores = alpha = None
    else:
        sim = _similarity_for(sample, config)
        if config.no_correlation:
            weighted = sim @ embeddings
            node = weighted
        else:
            node, weighted = all_cumulative_correlations(embeddings, sim)
        if config.no_attention:
            scores = None
            alpha = np.full(num_views, 1.0 / num_views)
        else:
            attn_node = np.ones_like(node) if config.no_attention_c else node
            attn_cls = (
                np.ones_like(params.cls.cls_weights)
                if config.no_attention_wf
                else params.cls.cls_weights
            )
            scores = attention_scores(attn_node, attn_cls, params.attn)
            alpha = normalize_attention(scores)
        agg = aggregate(node, alpha)

    feature = global_feature(agg, params.cls)
    probs = classify(feature, params.cls)
    return ForwardTrace(
        embeddings=embeddings,
        weighted_sums=weighted,
        node_corr=node,
        scores=scores,
        alpha=alpha,
        agg=agg,
        global_feature=feature,
        probs=probs,
        pool_argmax=pool_argmax,
    )


def _check_trace(trace: ForwardTrace, sample: ShapeSample, config: TrainConfig) -> None:
    n = config.effective_patterns
    num_views = sample.graph.num_views
    ok = (
        trace.embeddings.shape == (num_views, n)
        and trace.probs.shape == (config.num_classes,)
        and trace.global_feature.shape == (config.feature_dim,)
        and np.asarray(trace.agg).size == config.descriptor_dim
    )
    if not ok:
        raise RuntimeError(
            "stale trace: cached shapes do not match the current sample/config"
        )


def backward(
    trace: ForwardTrace,
    sample: ShapeSample,
    params: ModelParams,
    config: TrainConfig,
) -> Gradients:
    """Gradients of this sample's -log P[label] for every parameter block.

    The classifier weight matrix receives the classification-route gradient
    plus, unless ``drop_eq10_second_term`` is set, the attention-route
    gradient that flows through the score's shared context term.
    """
    validate_params(params, config)
    _check_trace(trace, sample, config)
    feats = _check_sample(sample, config)

    grads = Gradients.zeros_like(params)
    gfw, gfb, gcw_cls, gcb, grad_agg = classifier_backward(
        trace.agg, trace.global_feature, trace.probs, sample.label, params.cls
    )
    grads.feat_weights = gfw
    grads.feat_bias = gfb
    grads.cls_bias = gcb
    gcw_attn = None

    if config.pooled_mode:
        num_views, width = trace.embeddings.shape
        if config.mean_pool:
            grad_embed = np.broadcast_to(grad_agg / num_views, (num_views, width)).copy()
        else:
            grad_embed = np.zeros((num_views, width))
            grad_embed[trace.pool_argmax, np.arange(width)] = grad_agg
    else:
        sim = _similarity_for(sample, config)
        grad_node, grad_alpha = aggregate_backward(trace.node_corr, trace.alpha, grad_agg)
        if not config.no_attention:
            grad_scores = softmax_grad(trace.alpha, grad_alpha)
            attn_node = (
                np.ones_like(trace.node_corr) if config.no_attention_c else trace.node_corr
            )
            attn_cls = (
                np.ones_like(params.cls.cls_weights)
                if config.no_attention_wf
                else params.cls.cls_weights
            )
            sg = scores_backward(attn_node, attn_cls, params.attn, grad_scores)
            grads.attn_node_proj = sg.params.node_proj
            grads.attn_node_vec = sg.params.node_vec
            grads.attn_ctx_vec = sg.params.ctx_vec
            grads.attn_bias = sg.params.bias
            grads.attn_out = sg.params.out
            if not config.no_attention_c:
                grad_node = grad_node + sg.node_corr
            if not config.no_attention_wf:
                gcw_attn = sg.cls_weights
        if config.no_correlation:
            grad_embed = sim.T @ grad_node
        else:
            grad_embed = all_correlation_backward(
                trace.embeddings, sim, trace.weighted_sums, grad_node
            )

    if not config.no_latent:
        _, gfilters, goffsets = embed_backward(feats, params.latent, grad_embed)
        grads.latent_filters = gfilters
        grads.latent_offsets = goffsets

    grads.cls_weights = gcw_cls
    if gcw_attn is not None and not config.drop_eq10_second_term:
        grads.cls_weights = gcw_cls + gcw_attn
    return grads


def sample_loss(trace: ForwardTrace, sample: ShapeSample) -> float:
    """Negative log-likelihood of one shape's true class."""
    q = one_hot(sample.label, trace.probs.shape[0])
    return nll_loss(trace.probs, q)


def predict_features(params: ModelParams, config: TrainConfig, dataset) -> np.ndarray:
    """Global feature of every sample, (M, F); the retrieval representation."""
    return np.stack(
        [forward(s, params, config).global_feature for s in dataset.samples]
    )


def predict_proba(params: ModelParams, config: TrainConfig, dataset) -> np.ndarray:
    """Class probabilities of every sample, (M, L)."""
    return np.stack([forward(s, params, config).probs for s in dataset.samples])


# -- checkpoint container ("3DVG-M") ------------------------------------------
#
# magic (6 bytes) | version u32 LE | config-JSON length u32 LE | config JSON
# (UTF-8, sorted keys) | parameter payload: each block in declared order as
# little-endian float64, row-major. Block shapes are derived from the config,
# so the payload length is checked exactly.


def save_checkpoint(path, params: ModelParams, config: TrainConfig) -> None:
    """Write params + config to the binary checkpoint container."""
    validate_params(params, config)
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    blob = json.dumps(asdict(config), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for _, arr in params.blocks():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise DataIOError(f"cannot write checkpoint {path}: {exc}") from exc


def _expected_block_shapes(config: TrainConfig) -> list[tuple[str, tuple[int, ...]]]:
    n = config.effective_patterns
    return [
        ("latent_filters", (config.n_patterns, config.input_dim)),
        ("latent_offsets", (config.n_patterns,)),
        ("attn_node_proj", (config.num_classes, n)),
        ("attn_node_vec", (n,)),
        ("attn_ctx_vec", (config.feature_dim,)),
        ("attn_bias", (config.num_classes,)),
        ("attn_out", (config.num_classes,)),
        ("feat_weights", (config.feature_dim, config.descriptor_dim)),
        ("feat_bias", (config.feature_dim,)),
        ("cls_weights", (config.num_classes, config.feature_dim)),
        ("cls_bias", (config.num_classes,)),
    ]


def load_checkpoint(path) -> tuple[ModelParams, TrainConfig]:
    """Read a checkpoint back; raises FormatError/DataIOError on damage."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < 10 or data[:6] != CHECKPOINT_MAGIC:
        raise FormatError("not a model checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", data, 6)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(data) < 14:
        raise DataIOError("checkpoint truncated in header")
    (cfg_len,) = struct.unpack_from("<I", data, 10)
    if len(data) < 14 + cfg_len:
        raise DataIOError("checkpoint truncated in config block")
    try:
        cfg_dict = json.loads(data[14 : 14 + cfg_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint config block is not valid JSON: {exc}") from exc
    known = {f.name for f in fields(TrainConfig)}
    if not isinstance(cfg_dict, dict) or set(cfg_dict) != known:
        raise FormatError("checkpoint config block has wrong fields")
    try:
        config = TrainConfig(**cfg_dict)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"invalid checkpoint config: {exc}") from exc

    shapes = _expected_block_shapes(config)
    offset = 14 + cfg_len
    expected = sum(int(np.prod(s)) for _, s in shapes) * 8
    if len(data) - offset != expected:
        raise (
            DataIOError("checkpoint parameter payload truncated")
            if len(data) - offset < expected
            else FormatError("checkpoint has trailing bytes")
        )
    arrays = {}
    for name, shape in shapes:
        count = int(np.prod(shape))
        arrays[name] = (
            np.frombuffer(data, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += count * 8
    params = ModelParams(
        latent=LatentMapParams(
            filters=arrays["latent_filters"], offsets=arrays["latent_offsets"]
        ),
        attn=AttentionParams(
            node_proj=arrays["attn_node_proj"],
            node_vec=arrays["attn_node_vec"],
            ctx_vec=arrays["attn_ctx_vec"],
            bias=arrays["attn_bias"],
            out=arrays["attn_out"],
        ),
        cls=ClassifierParams(
            feat_weights=arrays["feat_weights"],
            feat_bias=arrays["feat_bias"],
            cls_weights=arrays["cls_weights"],
            cls_bias=arrays["cls_bias"],
        ),
    )
    return params, config
