"""Panel-embedding CNN plus stacked relation layers with per-candidate scoring.

A sample has 8 context panels (grid cells 0..7) and 8 candidate panels. Each
panel goes through a shared CNN into an embedding that carries a 9-way one-hot
of its grid position (candidates always sit at position 8, the missing cell).
Each candidate is scored independently: its embedding joins the 8 context
embeddings, relation layers process all 81 ordered embedding pairs, and a
final MLP maps the aggregated representation to a scalar score.

Relation layers come in two modes. ``per_base`` sums the pair outputs that
share the same first panel, producing a new 9-vector representation that
feeds the next layer. ``global`` sums over all 81 pairs, which is the
terminal reduction before scoring (and the whole network for a single layer).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import tensor as T
from .encoding import MEConfig, encode

__all__ = [
    "ModelConfig",
    "ModelParams",
    "parameter_shapes",
    "parameter_count",
    "init_params",
    "prepare_panels",
    "prepare_panels_nhwc",
    "embed_panel",
    "form_pairs",
    "relation_layer",
    "score_candidate",
    "forward_scores",
    "wren_forward",
    "predict",
]

POSITIONS = 9  # 3x3 grid; index 8 is the missing cell every candidate fills
CANDIDATES = 8


@dataclass
class ModelConfig:
    relation_layers: int = 1
    layer1_widths: tuple[int, ...] = (512, 512, 512, 256)
    deeper_widths: tuple[int, ...] = (256, 256, 256)
    f_phi_widths: tuple[int, ...] = (256, 256, 1)
    embed_dim: int = 256
    conv_channels: int = 32
    conv_count: int = 4
    me: MEConfig | None = None
    image_size: int = 80
    aggregation: str = "sum"
    dropout_rate: float = 0.5

    def __post_init__(self):
        if isinstance(self.layer1_widths, list):
            self.layer1_widths = tuple(self.layer1_widths)
        if isinstance(self.deeper_widths, list):
            self.deeper_widths = tuple(self.deeper_widths)
        if isinstance(self.f_phi_widths, list):
            self.f_phi_widths = tuple(self.f_phi_widths)
        if self.relation_layers not in (1, 2, 3):
            raise ValueError(f"relation_layers must be 1, 2 or 3, got {self.relation_layers}")
        if self.f_phi_widths[-1] != 1:
            raise ValueError("the final scoring MLP must end in a single unit")
        if self.embed_dim <= POSITIONS:
            raise ValueError(f"embed_dim must exceed {POSITIONS}, got {self.embed_dim}")
        if self.conv_count < 1 or self.conv_channels < 1:
            raise ValueError("conv_count and conv_channels must be positive")
        if self.aggregation not in ("sum", "mean"):
            raise ValueError(f"aggregation must be 'sum' or 'mean', got {self.aggregation!r}")
        sizes = self.conv_spatial_sizes()
        if sizes[-1] < 2:
            raise ValueError(
                f"image size {self.image_size} collapses to {sizes[-1]}x{sizes[-1]} "
                f"in a {self.conv_count}-conv cascade"
            )

    @property
    def projection_dim(self) -> int:
        return self.embed_dim - POSITIONS

    @property
    def input_channels(self) -> int:
        return self.me.d if self.me is not None else 1

    def conv_spatial_sizes(self) -> list[int]:
        """Spatial sizes after each stride-2 pad-1 convolution."""
        sizes = [self.image_size]
        for _ in range(self.conv_count):
            sizes.append((sizes[-1] + 2 - 3) // 2 + 1)
        return sizes

    @property
    def flatten_size(self) -> int:
        final = self.conv_spatial_sizes()[-1]
        return self.conv_channels * final * final

    def g_widths(self, layer: int) -> tuple[int, ...]:
        return self.layer1_widths if layer == 1 else self.deeper_widths

    def representation_dims(self) -> list[int]:
        """Vector width entering each relation layer, then entering f_phi."""
        dims = [self.embed_dim]
        for layer in range(1, self.relation_layers + 1):
            dims.append(self.g_widths(layer)[-1])
        return dims


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Named tensor shapes, in the fixed creation/checkpoint order."""
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = cfg.input_channels
    for i in range(cfg.conv_count):
        shapes[f"conv{i}.weight"] = (cfg.conv_channels, c_in, 3, 3)
        shapes[f"conv{i}.bias"] = (cfg.conv_channels,)
        c_in = cfg.conv_channels
    shapes["proj.weight"] = (cfg.projection_dim, cfg.flatten_size)
    shapes["proj.bias"] = (cfg.projection_dim,)
    rep = cfg.embed_dim
    for layer in range(1, cfg.relation_layers + 1):
        width_in = 2 * rep
        for k, width in enumerate(cfg.g_widths(layer)):
            shapes[f"g{layer}.{k}.weight"] = (width, width_in)
            shapes[f"g{layer}.{k}.bias"] = (width,)
            width_in = width
        rep = width_in
    width_in = rep
    for k, width in enumerate(cfg.f_phi_widths):
        shapes[f"f.{k}.weight"] = (width, width_in)
        shapes[f"f.{k}.bias"] = (width,)
        width_in = width
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(cfg).values())


class ModelParams(Mapping[str, T.Tensor]):
    """Named parameter tensors shared across all panels and candidates."""

    def __init__(self, tensors: dict[str, T.Tensor]):
        self._tensors = tensors

    def __getitem__(self, name: str) -> T.Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    @property
    def dtype(self):
        return next(iter(self._tensors.values())).dtype

    def count(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def grads(self) -> dict[str, np.ndarray]:
        return {
            name: t.grad for name, t in self._tensors.items() if t.grad is not None
        }

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._tensors.items()}

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            {
                name: T.parameter(t.data.astype(dtype), name=name)
                for name, t in self._tensors.items()
            }
        )

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        return cls({name: T.parameter(np.array(a), name=name) for name, a in arrays.items()})


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> ModelParams:
    """Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, T.Tensor] = {}
    bound = 1.0
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
        # the bias reuses its weight's bound, matching the shared fan-in
        data = rng.uniform(-bound, bound, size=shape).astype(dtype)
        tensors[name] = T.parameter(data, name=name)
    return ModelParams(tensors)


def prepare_panels_nhwc(panels: np.ndarray, cfg: ModelConfig, dtype=np.float32) -> np.ndarray:
    """Grayscale panels (..., S, S) in [-1, 1] to network input (..., S, S, C).

    With magnitude encoding enabled each pixel becomes a d-vector and the
    vector index is the trailing channel axis, which is the encoder's native
    layout; otherwise a singleton channel is appended.
    """
    panels = np.asarray(panels)
    if panels.shape[-1] != cfg.image_size or panels.shape[-2] != cfg.image_size:
        raise ValueError(
            f"panels are {panels.shape[-2]}x{panels.shape[-1]} but the model expects {cfg.image_size}"
        )
    if cfg.me is None:
        return panels.astype(dtype, copy=False)[..., None]
    return encode(panels, cfg.me, dtype=dtype)


def prepare_panels(panels: np.ndarray, cfg: ModelConfig, dtype=np.float32) -> np.ndarray:
    """Channels-first (..., C, S, S) variant of :func:`prepare_panels_nhwc`."""
    return np.moveaxis(prepare_panels_nhwc(panels, cfg, dtype), -1, -3)


def _conv_stack(x: T.Tensor, params: ModelParams, cfg: ModelConfig) -> T.Tensor:
    """(N, S, S, C) panels through the stride-2 cascade, channels last."""
    h = x
    for i in range(cfg.conv_count):
        h = T.relu(T.conv2d_nhwc(h, params[f"conv{i}.weight"], params[f"conv{i}.bias"], stride=2, padding=1))
    return h


def _project_panels(images: T.Tensor, params: ModelParams, cfg: ModelConfig) -> T.Tensor:
    """(N, S, S, C) images to (N, projection_dim) embeddings, no one-hot yet."""
    h = _conv_stack(images, params, cfg)
    flat = T.reshape(h, (h.shape[0], cfg.flatten_size))
    return T.linear(flat, params["proj.weight"], params["proj.bias"])


def _one_hot(position: int, dtype) -> np.ndarray:
    if not 0 <= position < POSITIONS:
        raise ValueError(f"position must be in 0..{POSITIONS - 1}, got {position}")
    row = np.zeros(POSITIONS, dtype=dtype)
    row[position] = 1
    return row


def embed_panel(image, position: int, params: ModelParams, cfg: ModelConfig) -> T.Tensor:
    """Embed one already-encoded panel (C, S, S) and tag its grid position."""
    data = image.data if isinstance(image, T.Tensor) else np.asarray(image)
    if data.ndim != 3 or data.shape[0] != cfg.input_channels:
        raise ValueError(
            f"expected ({cfg.input_channels}, {cfg.image_size}, {cfg.image_size}) input, got {data.shape}"
        )
    nhwc = T.Tensor(np.ascontiguousarray(np.moveaxis(data, 0, -1))[None], dtype=params.dtype)
    proj = _project_panels(nhwc, params, cfg)
    vec = T.reshape(proj, (cfg.projection_dim,))
    return T.concat_last(vec, T.Tensor(_one_hot(position, vec.dtype)))


def form_pairs(embeddings) -> T.Tensor:
    """All 81 ordered pair concatenations of 9 embeddings, row-major in (i, j)."""
    if isinstance(embeddings, T.Tensor):
        stacked = embeddings
    else:
        parts = list(embeddings)
        if len(parts) != POSITIONS:
            raise ValueError(f"expected {POSITIONS} embeddings, got {len(parts)}")
        stacked = T.stack0(parts)
    if stacked.shape[-2] != POSITIONS:
        raise ValueError(f"expected {POSITIONS} embeddings, got {stacked.shape[-2]}")
    return T.form_pairs(stacked)


def _g_weight_stack(params: ModelParams, cfg: ModelConfig, layer: int) -> list[tuple[T.Tensor, T.Tensor]]:
    return [
        (params[f"g{layer}.{k}.weight"], params[f"g{layer}.{k}.bias"])
        for k in range(len(cfg.g_widths(layer)))
    ]


def relation_layer(
    embeddings,
    g_params: Sequence[tuple[T.Tensor, T.Tensor]],
    mode: str = "per_base",
    aggregation: str = "sum",
) -> T.Tensor:
    """Apply the shared pair MLP g and reduce.

    ``per_base`` returns one vector per input slot i, each the sum over j of
    g(e_i, e_j); ``global`` sums g over all ordered pairs. The first linear of
    g is evaluated as a split matmul on the unexpanded embeddings, which is
    exactly the concatenated-pair product rearranged.
    """
    if mode not in ("per_base", "global"):
        raise ValueError(f"mode must be 'per_base' or 'global', got {mode!r}")
    x = embeddings if isinstance(embeddings, T.Tensor) else T.stack0(list(embeddings))
    n_slots, width = x.shape[-2], x.shape[-1]
    w0, b0 = g_params[0]
    if w0.shape[1] != 2 * width:
        raise ValueError(
            f"pair MLP expects input width {w0.shape[1]} but embeddings give {2 * width}"
        )
    left = T.linear(x, T.narrow(w0, 1, 0, width), b0)
    right = T.linear(x, T.narrow(w0, 1, width, width), None)
    h = T.relu(T.pair_sum_expand(left, right))
    for w, b in g_params[1:]:
        h = T.relu(T.linear(h, w, b))
    out_width = h.shape[-1]
    lead = h.shape[:-2]
    if mode == "per_base":
        grid = T.reshape(h, (*lead, n_slots, n_slots, out_width))
        out = T.reduce_sum(grid, axis=len(lead) + 1)
        scale_by = 1.0 / n_slots
    else:
        out = T.reduce_sum(h, axis=len(lead))
        scale_by = 1.0 / (n_slots * n_slots)
    if aggregation == "mean":
        out = T.scale(out, scale_by)
    return out


def _relation_stack(sets: T.Tensor, params: ModelParams, cfg: ModelConfig) -> T.Tensor:
    rep = sets
    for layer in range(1, cfg.relation_layers + 1):
        mode = "per_base" if layer < cfg.relation_layers else "global"
        rep = relation_layer(rep, _g_weight_stack(params, cfg, layer), mode, cfg.aggregation)
    return rep


def _f_phi(
    rep: T.Tensor,
    params: ModelParams,
    cfg: ModelConfig,
    train: bool,
    use_dropout: bool,
    dropout_rng: np.random.Generator | None,
    capture: list[T.Tensor] | None,
) -> T.Tensor:
    if capture is not None:
        capture.append(rep)
    h = rep
    last = len(cfg.f_phi_widths) - 1
    for k in range(last + 1):
        h = T.linear(h, params[f"f.{k}.weight"], params[f"f.{k}.bias"])
        if k < last:
            h = T.relu(h)
            if use_dropout and train and k == last - 1:
                if dropout_rng is None:
                    raise ValueError("dropout requested without an rng")
                h = T.dropout(h, cfg.dropout_rate, dropout_rng)
    if capture is not None:
        capture.append(h)
    return h


def score_candidate(
    context,
    candidate: T.Tensor,
    params: ModelParams,
    cfg: ModelConfig,
) -> T.Tensor:
    """Score one candidate embedding against 8 context embeddings."""
    parts = list(context)
    if len(parts) != CANDIDATES:
        raise ValueError(f"expected {CANDIDATES} context embeddings, got {len(parts)}")
    sets = T.stack0(parts + [candidate])
    rep = _relation_stack(sets, params, cfg)
    out = _f_phi(rep, params, cfg, train=False, use_dropout=False, dropout_rng=None, capture=None)
    return T.reshape(out, ())


def _assemble_candidate_sets(ctx: T.Tensor, cand: T.Tensor) -> T.Tensor:
    """(B, 8, E) context and (B, 8, E) candidates to (B, 8, 9, E) panel sets."""
    b, n_ctx, width = ctx.shape
    data = np.empty((b, CANDIDATES, POSITIONS, width), dtype=ctx.dtype)
    data[:, :, :n_ctx, :] = ctx.data[:, None, :, :]
    data[:, :, n_ctx, :] = cand.data
    out = T.Tensor(data, requires_grad=ctx.requires_grad or cand.requires_grad)

    def bwd(g: np.ndarray) -> None:
        T.accumulate(ctx, g[:, :, :n_ctx, :].sum(axis=1))
        T.accumulate(cand, g[:, :, n_ctx, :])

    return T.record_op("assemble_sets", out, bwd)


def forward_scores(
    panels: np.ndarray,
    params: ModelParams,
    cfg: ModelConfig,
    train: bool = False,
    use_dropout: bool = False,
    dropout_rng: np.random.Generator | None = None,
    capture: list[T.Tensor] | None = None,
) -> T.Tensor:
    """Batched scoring: encoded panels (B, 16, S, S, C) to scores (B, 8).

    Panels 0..7 are the context in grid order, panels 8..15 the candidates.
    All 16 embeddings per sample share the CNN; every candidate is scored
    with the shared relation stack and position one-hot 8.
    """
    panels = np.asarray(panels, dtype=params.dtype)
    b, n_panels = panels.shape[0], panels.shape[1]
    if n_panels != 2 * CANDIDATES:
        raise ValueError(f"expected 16 panels per sample, got {n_panels}")
    if panels.shape[-1] != cfg.input_channels:
        raise ValueError(
            f"expected channels-last input with {cfg.input_channels} channels, got shape {panels.shape}"
        )
    flat = T.Tensor(panels.reshape(b * n_panels, *panels.shape[2:]))
    proj = _project_panels(flat, params, cfg)
    proj = T.reshape(proj, (b, n_panels, cfg.projection_dim))
    dtype = proj.dtype
    eye = np.eye(POSITIONS, dtype=dtype)
    ctx_onehot = np.broadcast_to(eye[:CANDIDATES], (b, CANDIDATES, POSITIONS))
    cand_onehot = np.broadcast_to(eye[CANDIDATES], (b, CANDIDATES, POSITIONS))
    ctx = T.concat_last(T.narrow(proj, 1, 0, CANDIDATES), T.Tensor(ctx_onehot))
    cand = T.concat_last(T.narrow(proj, 1, CANDIDATES, CANDIDATES), T.Tensor(cand_onehot))
    sets = _assemble_candidate_sets(ctx, cand)
    rep = _relation_stack(sets, params, cfg)
    out = _f_phi(rep, params, cfg, train, use_dropout, dropout_rng, capture)
    return T.reshape(out, (b, CANDIDATES))


def wren_forward(
    sample,
    params: ModelParams,
    cfg: ModelConfig,
    train: bool = False,
    use_dropout: bool = False,
    dropout_rng: np.random.Generator | None = None,
    capture: list[T.Tensor] | None = None,
) -> T.Tensor:
    """Score the 8 candidates of one sample; returns a length-8 tensor."""
    panels = getattr(sample, "panels", sample)
    encoded = prepare_panels_nhwc(np.asarray(panels), cfg, dtype=params.dtype)
    if encoded.ndim != 4 or encoded.shape[0] != 2 * CANDIDATES:
        raise ValueError(f"expected 16 panels, got input shape {np.asarray(panels).shape}")
    scores = forward_scores(encoded[None], params, cfg, train, use_dropout, dropout_rng, capture)
    return T.reshape(scores, (CANDIDATES,))


def predict(scores) -> int:
    """Index of the highest score; ties resolve to the lowest index."""
    arr = scores.data if isinstance(scores, T.Tensor) else np.asarray(scores)
    if not np.all(np.isfinite(arr)):
        raise T.NonFiniteError("non-finite candidate scores")
    return int(np.argmax(arr))
