"""Micro-scale procedural matrix puzzles.

Each sample is a 3x3 grid of panels whose cells obey one or more structure
triples (object, attribute, relation) applied row-wise. The ninth cell is
hidden; eight candidate panels are offered, exactly one of which completes
every governing relation. Panels contain foreground shape glyphs on a 2x2
placement grid and/or background lines in four orientations.

Generation is fully symbolic first (scenes with discrete attribute values)
and only then rasterized, so an independent verifier can confirm soundness
without ever touching pixels.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ObjectType",
    "AttributeType",
    "RelationType",
    "StructureTriple",
    "LEGAL_TRIPLES",
    "GeneratorConfig",
    "GenerationError",
    "ObjectSpec",
    "PanelScene",
    "SampleTrace",
    "SampleRecord",
    "Dataset",
    "RecordLayout",
    "sample_structure",
    "apply_relation_row",
    "render_panel",
    "render_scene_bytes",
    "generate_sample",
    "generate_sample_with_trace",
    "generate_dataset",
    "verify_sample",
    "attribute_value",
    "downscale",
    "load_external_record",
    "dequantize",
    "quantize",
    "sample_rng",
]


class ObjectType(enum.IntEnum):
    LINE = 0
    SHAPE = 1


class AttributeType(enum.IntEnum):
    COLOR = 0
    POSITION = 1
    TYPE = 2
    NUMBER = 3
    SIZE = 4


class RelationType(enum.IntEnum):
    AND = 0
    OR = 1
    XOR = 2
    PROGRESSION = 3
    CONSISTENT_UNION = 4


SET_RELATIONS = (RelationType.AND, RelationType.OR, RelationType.XOR)

# Which relations may govern which (object, attribute) pair. Set logic needs
# set-valued attributes, progressions need ordered values, consistent union
# needs at least three distinct values. Lines span the panel, so they carry
# no size or glyph type.
LEGAL_TRIPLES: dict[tuple[ObjectType, AttributeType], tuple[RelationType, ...]] = {
    (ObjectType.SHAPE, AttributeType.POSITION): SET_RELATIONS,
    (ObjectType.SHAPE, AttributeType.NUMBER): (RelationType.PROGRESSION, RelationType.CONSISTENT_UNION),
    (ObjectType.SHAPE, AttributeType.SIZE): (RelationType.PROGRESSION,),
    (ObjectType.SHAPE, AttributeType.COLOR): (RelationType.PROGRESSION, RelationType.CONSISTENT_UNION),
    (ObjectType.SHAPE, AttributeType.TYPE): (RelationType.CONSISTENT_UNION,),
    (ObjectType.LINE, AttributeType.POSITION): SET_RELATIONS,
    (ObjectType.LINE, AttributeType.NUMBER): (RelationType.PROGRESSION, RelationType.CONSISTENT_UNION),
    (ObjectType.LINE, AttributeType.COLOR): (RelationType.PROGRESSION, RelationType.CONSISTENT_UNION),
}


class GenerationError(RuntimeError):
    """Raised when the configuration admits no sample or retries run out."""


@dataclass(frozen=True)
class StructureTriple:
    """One governing rule: which attribute of which object obeys which relation."""

    object_type: ObjectType
    attribute_type: AttributeType
    relation_type: RelationType

    def __post_init__(self):
        obj = ObjectType(self.object_type)
        attr = AttributeType(self.attribute_type)
        rel = RelationType(self.relation_type)
        object.__setattr__(self, "object_type", obj)
        object.__setattr__(self, "attribute_type", attr)
        object.__setattr__(self, "relation_type", rel)
        legal = LEGAL_TRIPLES.get((obj, attr), ())
        if rel not in legal:
            raise ValueError(
                f"illegal triple ({obj.name}, {attr.name}, {rel.name}); "
                f"legal relations for this pair: {[r.name for r in legal]}"
            )

    def codes(self) -> tuple[int, int, int]:
        return (int(self.object_type), int(self.attribute_type), int(self.relation_type))


@dataclass
class GeneratorConfig:
    image_size: int = 32
    grid_slots: int = 4  # 2x2 placement grid inside each panel
    max_number: int = 4
    size_levels: int = 3
    color_levels: int = 4
    shape_types: int = 3
    triples_per_sample: int = 1
    distractors: bool = False
    column_wise: bool = False
    seed: int = 0
    allowed_objects: tuple[ObjectType, ...] | None = None
    allowed_attributes: tuple[AttributeType, ...] | None = None
    allowed_relations: tuple[RelationType, ...] | None = None
    foil_retry_budget: int = 500

    def __post_init__(self):
        if self.grid_slots != 4:
            raise ValueError("only the 2x2 placement grid (4 slots) is supported")
        if self.image_size < 16 or self.image_size % 2:
            raise ValueError(f"image_size must be even and >= 16, got {self.image_size}")
        if not 1 <= self.max_number <= self.grid_slots:
            raise ValueError(f"max_number must be in 1..{self.grid_slots}")
        if self.shape_types < 1 or self.shape_types > 3:
            raise ValueError("shape_types must be in 1..3 (square, circle, triangle)")
        if self.size_levels < 1 or self.color_levels < 2:
            raise ValueError("need at least 1 size level and 2 color levels")
        if self.triples_per_sample < 1:
            raise ValueError("triples_per_sample must be >= 1")
        for (obj, attr), rels in self.legal_table().items():
            if RelationType.PROGRESSION in rels and len(self._ordinal_values(obj, attr)) < 3:
                raise ValueError(f"progression on {obj.name}/{attr.name} needs >= 3 ordered values")
            if RelationType.CONSISTENT_UNION in rels and len(self._ordinal_values(obj, attr)) < 3:
                raise ValueError(f"consistent union on {obj.name}/{attr.name} needs >= 3 values")
        radii = glyph_radii(self.image_size // 2, self.size_levels)  # must fit distinctly
        for r in radii:
            stamps = [_glyph_stamp(g, r, self.image_size // 2) for g in range(self.shape_types)]
            rendered = {s.tobytes() for s in stamps}
            if len(rendered) != self.shape_types:
                raise ValueError(
                    f"glyph types collide at radius {r} in a {self.image_size // 2}px cell"
                )

    def legal_table(self) -> dict[tuple[ObjectType, AttributeType], tuple[RelationType, ...]]:
        """The effective legal-combination table after the allowed_* filters."""
        table = {}
        for (obj, attr), rels in LEGAL_TRIPLES.items():
            if self.allowed_objects is not None and obj not in self.allowed_objects:
                continue
            if self.allowed_attributes is not None and attr not in self.allowed_attributes:
                continue
            kept = tuple(
                r for r in rels if self.allowed_relations is None or r in self.allowed_relations
            )
            if kept:
                table[(obj, attr)] = kept
        return table

    def legal_triples(self) -> list[StructureTriple]:
        return [
            StructureTriple(obj, attr, rel)
            for (obj, attr), rels in self.legal_table().items()
            for rel in rels
        ]

    def _ordinal_values(self, obj: ObjectType, attr: AttributeType) -> tuple[int, ...]:
        if attr == AttributeType.NUMBER:
            top = self.grid_slots if obj == ObjectType.LINE else self.max_number
            return tuple(range(1, top + 1))
        if attr == AttributeType.SIZE:
            return tuple(range(self.size_levels))
        if attr == AttributeType.COLOR:
            return tuple(range(self.color_levels))
        if attr == AttributeType.TYPE:
            return tuple(range(self.shape_types))
        raise ValueError(f"{attr.name} has no ordinal value domain")

    def ordinal_values(self, obj: ObjectType, attr: AttributeType) -> tuple[int, ...]:
        return self._ordinal_values(obj, attr)


@dataclass(frozen=True)
class ObjectSpec:
    """Discrete state of one object family inside a panel."""

    slots: int  # bitmask over the 4 placement slots / line orientations
    color: int
    glyph: int = 0
    size: int = 0


@dataclass(frozen=True)
class PanelScene:
    shapes: ObjectSpec | None = None
    lines: ObjectSpec | None = None

    def spec_for(self, obj: ObjectType) -> ObjectSpec | None:
        return self.shapes if obj == ObjectType.SHAPE else self.lines


@dataclass
class SampleTrace:
    """Symbolic byproduct of generation, consumed by the verifier and tests."""

    grid_scenes: list[PanelScene]  # 9 cells in row-major order; cell 8 is the answer
    candidate_scenes: list[PanelScene]
    triples: tuple[StructureTriple, ...]
    target: int
    column_wise: bool


@dataclass
class SampleRecord:
    """16 panels (8 context + 8 candidates), the answer index, and the rules."""

    panels: np.ndarray
    target: int
    triples: tuple[StructureTriple, ...]
    image_size: int

    def validate(self) -> None:
        if self.panels.shape != (16, self.image_size, self.image_size):
            raise ValueError(f"panels shape {self.panels.shape} does not match image_size {self.image_size}")
        if not 0 <= self.target < 8:
            raise ValueError(f"target {self.target} out of range 0..7")
        lo, hi = float(self.panels.min()), float(self.panels.max())
        if lo < -1.0 or hi > 1.0:
            raise ValueError(f"pixel values outside [-1, 1]: [{lo}, {hi}]")


def attribute_value(scene: PanelScene, obj: ObjectType, attr: AttributeType) -> int:
    spec = scene.spec_for(obj)
    if spec is None:
        raise ValueError(f"panel has no {obj.name} objects")
    if attr == AttributeType.POSITION:
        return spec.slots
    if attr == AttributeType.NUMBER:
        return int(bin(spec.slots).count("1"))
    if attr == AttributeType.COLOR:
        return spec.color
    if attr == AttributeType.SIZE:
        return spec.size
    return spec.glyph


# ---------------------------------------------------------------------------
# structure sampling and row relations


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent per-sample stream derived from (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(index))))


def sample_structure(rng: np.random.Generator, cfg: GeneratorConfig) -> list[StructureTriple]:
    """Uniformly draw the governing triples for one sample."""
    legal = cfg.legal_triples()
    if not legal:
        raise GenerationError("no legal triples under this configuration")
    if cfg.triples_per_sample == 1:
        return [legal[int(rng.integers(len(legal)))]]
    chosen: list[StructureTriple] = []
    used_pairs: set[tuple[ObjectType, AttributeType]] = set()
    budget = 1000
    while len(chosen) < cfg.triples_per_sample and budget:
        budget -= 1
        t = legal[int(rng.integers(len(legal)))]
        pair = (t.object_type, t.attribute_type)
        if pair in used_pairs:
            continue
        # position determines number, so one object cannot carry rules on both
        conflicting = AttributeType.NUMBER if t.attribute_type == AttributeType.POSITION else AttributeType.POSITION
        if t.attribute_type in (AttributeType.POSITION, AttributeType.NUMBER) and (
            (t.object_type, conflicting) in used_pairs
        ):
            continue
        chosen.append(t)
        used_pairs.add(pair)
    if len(chosen) < cfg.triples_per_sample:
        raise GenerationError(
            f"could not pick {cfg.triples_per_sample} compatible triples from {len(legal)} legal ones"
        )
    return chosen


def _nonempty_mask(rng: np.random.Generator, slots: int = 4, max_count: int | None = None) -> int:
    while True:
        mask = int(rng.integers(1, 2**slots))
        if max_count is None or bin(mask).count("1") <= max_count:
            return mask


def _mask_with_count(rng: np.random.Generator, count: int, slots: int = 4) -> int:
    picks = rng.choice(slots, size=count, replace=False)
    mask = 0
    for p in picks:
        mask |= 1 << int(p)
    return mask


def apply_relation_row(
    relation: RelationType,
    values: Sequence[int] | None,
    rng: np.random.Generator,
    union_values: Sequence[int] | None = None,
    slots: int = 4,
) -> tuple[int, int, int]:
    """Three attribute values for one row obeying ``relation``.

    ``values`` is the ordered value domain for progressions and unions; set
    relations operate on bitmasks over ``slots`` and ignore it. For consistent
    union, ``union_values`` carries the sample-wide value triple so every row
    permutes the same multiset; if omitted a fresh one is drawn.
    """
    if relation in SET_RELATIONS:
        first = _nonempty_mask(rng, slots)
        second = _nonempty_mask(rng, slots)
        if relation == RelationType.AND:
            third = first & second
        elif relation == RelationType.OR:
            third = first | second
        else:
            third = first ^ second
        return first, second, third
    if relation == RelationType.PROGRESSION:
        if values is None or len(values) < 3:
            raise GenerationError("progression needs an ordered domain of at least 3 values")
        n = len(values)
        options = [
            (a, d)
            for d in range(-(n - 1) // 2, (n - 1) // 2 + 1)
            if d != 0
            for a in range(n)
            if 0 <= a + 2 * d < n
        ]
        a, d = options[int(rng.integers(len(options)))]
        return values[a], values[a + d], values[a + 2 * d]
    if relation == RelationType.CONSISTENT_UNION:
        if union_values is None:
            if values is None or len(values) < 3:
                raise GenerationError("consistent union needs at least 3 distinct values")
            picks = rng.choice(len(values), size=3, replace=False)
            union_values = tuple(values[int(i)] for i in picks)
        order = rng.permutation(3)
        return tuple(union_values[int(i)] for i in order)
    raise ValueError(f"unknown relation {relation}")


# ---------------------------------------------------------------------------
# rasterization

_GLYPH_CACHE: dict[tuple[int, int, int], np.ndarray] = {}
_LINE_CACHE: dict[int, np.ndarray] = {}


def color_bytes(levels: int) -> np.ndarray:
    """Evenly spaced intensity bytes, all clearly above the 0 background."""
    return np.round(np.linspace(135, 255, levels)).astype(np.uint8)


def glyph_radii(cell: int, size_levels: int) -> tuple[int, ...]:
    """Strictly increasing glyph radii, one per size level, fitting the cell."""
    r_max = cell // 2 - 1
    r_min = max(1, round(cell * 0.18))
    if size_levels == 1:
        return (r_min,)
    radii = tuple(
        int(round(r_min + k * (r_max - r_min) / (size_levels - 1))) for k in range(size_levels)
    )
    if len(set(radii)) != size_levels or any(b <= a for a, b in zip(radii, radii[1:])):
        raise GenerationError(
            f"cannot render {size_levels} distinct glyph sizes in a {cell}px cell"
        )
    return radii


def _glyph_stamp(glyph: int, radius: int, cell: int) -> np.ndarray:
    key = (glyph, radius, cell)
    cached = _GLYPH_CACHE.get(key)
    if cached is not None:
        return cached
    # integer center keeps the three glyph rasters distinct down to radius 1
    c0 = cell // 2
    ys, xs = np.mgrid[0:cell, 0:cell]
    dy, dx = ys - c0, xs - c0
    if glyph == 0:  # square
        mask = (np.abs(dx) <= radius) & (np.abs(dy) <= radius)
    elif glyph == 1:  # circle
        mask = dx * dx + dy * dy <= radius * radius + 0.5
    else:  # upward triangle
        mask = (dy >= -radius) & (dy <= radius) & (np.abs(dx) <= (dy + radius) / 2.0)
    _GLYPH_CACHE[key] = mask
    return mask


def _line_masks(size: int) -> np.ndarray:
    cached = _LINE_CACHE.get(size)
    if cached is not None:
        return cached
    t = max(1, size // 16)
    ys, xs = np.mgrid[0:size, 0:size]
    mid = (size - t) // 2
    masks = np.stack(
        [
            (ys >= mid) & (ys < mid + t),  # horizontal
            (xs >= mid) & (xs < mid + t),  # vertical
            np.abs(xs - ys) < t,  # main diagonal
            np.abs(xs + ys - (size - 1)) < t,  # anti-diagonal
        ]
    )
    _LINE_CACHE[size] = masks
    return masks


def render_scene_bytes(scene: PanelScene, cfg: GeneratorConfig) -> np.ndarray:
    """Deterministic rasterization to uint8; background is byte 0."""
    size = cfg.image_size
    img = np.zeros((size, size), dtype=np.uint8)
    palette = color_bytes(cfg.color_levels)
    if scene.lines is not None:
        masks = _line_masks(size)
        shade = palette[scene.lines.color]
        for k in range(4):
            if scene.lines.slots >> k & 1:
                img[masks[k]] = shade
    if scene.shapes is not None:
        cell = size // 2
        radius = glyph_radii(cell, cfg.size_levels)[scene.shapes.size]
        stamp = _glyph_stamp(scene.shapes.glyph, radius, cell)
        shade = palette[scene.shapes.color]
        for k in range(4):
            if scene.shapes.slots >> k & 1:
                r0, c0 = (k // 2) * cell, (k % 2) * cell
                region = img[r0 : r0 + cell, c0 : c0 + cell]
                region[stamp] = shade
    return img


def dequantize(raw: np.ndarray) -> np.ndarray:
    """uint8 bytes to float32 in [-1, 1] via b/127.5 - 1."""
    return (np.asarray(raw).astype(np.float32) / np.float32(127.5)) - np.float32(1.0)


def quantize(panels: np.ndarray) -> np.ndarray:
    """float in [-1, 1] to uint8 via the inverse affine map, rounding to nearest."""
    scaled = np.round((np.asarray(panels, dtype=np.float64) + 1.0) * 127.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def render_panel(scene: PanelScene, cfg: GeneratorConfig) -> np.ndarray:
    """Rasterize one panel to a (1, S, S) float32 image in [-1, 1]."""
    return dequantize(render_scene_bytes(scene, cfg))[None]


# ---------------------------------------------------------------------------
# sample generation

_JITTER_NONE = "none"
_JITTER_MASK_SAME_COUNT = "mask_same_count"
_JITTER_COLOR = "color"
_JITTER_SIZE = "size"

# Extra degree of freedom foils may vary so that seven pairwise-distinct
# wrong panels exist even when the relation attribute has few values. The
# relation-bearing attribute itself always differs from the answer, which is
# what keeps every foil refutable.
_FOIL_JITTER = {
    (ObjectType.SHAPE, AttributeType.POSITION): _JITTER_NONE,
    (ObjectType.LINE, AttributeType.POSITION): _JITTER_NONE,
    (ObjectType.SHAPE, AttributeType.NUMBER): _JITTER_NONE,  # mask follows the count
    (ObjectType.LINE, AttributeType.NUMBER): _JITTER_NONE,
    (ObjectType.SHAPE, AttributeType.SIZE): _JITTER_COLOR,
    (ObjectType.SHAPE, AttributeType.TYPE): _JITTER_COLOR,
    (ObjectType.SHAPE, AttributeType.COLOR): _JITTER_SIZE,
    (ObjectType.LINE, AttributeType.COLOR): _JITTER_MASK_SAME_COUNT,
}


def _random_spec(rng: np.random.Generator, cfg: GeneratorConfig, obj: ObjectType, max_count: int | None = None) -> ObjectSpec:
    return ObjectSpec(
        slots=_nonempty_mask(rng, cfg.grid_slots, max_count),
        color=int(rng.integers(cfg.color_levels)),
        glyph=int(rng.integers(cfg.shape_types)) if obj == ObjectType.SHAPE else 0,
        size=int(rng.integers(cfg.size_levels)) if obj == ObjectType.SHAPE else 0,
    )


def _with_attribute(
    spec: ObjectSpec, attr: AttributeType, value: int, rng: np.random.Generator, slots: int
) -> ObjectSpec:
    if attr == AttributeType.POSITION:
        return replace(spec, slots=value)
    if attr == AttributeType.NUMBER:
        return replace(spec, slots=_mask_with_count(rng, value, slots))
    if attr == AttributeType.COLOR:
        return replace(spec, color=value)
    if attr == AttributeType.SIZE:
        return replace(spec, size=value)
    return replace(spec, glyph=value)


def _value_grid(
    triple: StructureTriple, cfg: GeneratorConfig, rng: np.random.Generator
) -> list[int]:
    """Nine attribute values (row-major cells) satisfying the triple."""
    if triple.relation_type in SET_RELATIONS:
        domain = None
        union = None
    else:
        domain = cfg.ordinal_values(triple.object_type, triple.attribute_type)
        union = None
        if triple.relation_type == RelationType.CONSISTENT_UNION:
            picks = rng.choice(len(domain), size=3, replace=False)
            union = tuple(domain[int(i)] for i in picks)
    rows = [
        apply_relation_row(triple.relation_type, domain, rng, union_values=union, slots=cfg.grid_slots)
        for _ in range(3)
    ]
    grid = [0] * 9
    for r in range(3):
        for c in range(3):
            cell = c * 3 + r if cfg.column_wise else r * 3 + c
            grid[cell] = rows[r][c]
    return grid


def _line_count_cap(triples: Sequence[StructureTriple], cfg: GeneratorConfig) -> int | None:
    # a color rule on all four lines leaves too few distinct foil images
    for t in triples:
        if t.object_type == ObjectType.LINE and t.attribute_type == AttributeType.COLOR:
            return cfg.grid_slots - 1
    return None


def generate_sample_with_trace(
    rng: np.random.Generator, cfg: GeneratorConfig
) -> tuple[SampleRecord, SampleTrace]:
    triples = tuple(sample_structure(rng, cfg))
    relation_objects = {t.object_type for t in triples}
    line_cap = _line_count_cap(triples, cfg)

    # base (constant) spec per relation-bearing object, then per-cell overrides
    base: dict[ObjectType, ObjectSpec] = {}
    for obj in sorted(relation_objects):
        base[obj] = _random_spec(rng, cfg, obj, max_count=line_cap if obj == ObjectType.LINE else None)

    grids = {t: _value_grid(t, cfg, rng) for t in triples}

    scenes: list[PanelScene] = []
    for cell in range(9):
        specs: dict[ObjectType, ObjectSpec] = {}
        for obj in sorted(relation_objects):
            spec = base[obj]
            if cfg.distractors:
                spec = _random_spec(rng, cfg, obj, max_count=line_cap if obj == ObjectType.LINE else None)
                # distractor randomness must not disturb governed attributes
            for t in triples:
                if t.object_type == obj:
                    spec = _with_attribute(spec, t.attribute_type, grids[t][cell], rng, cfg.grid_slots)
            specs[obj] = spec
        if cfg.distractors:
            for obj in (ObjectType.LINE, ObjectType.SHAPE):
                if obj not in relation_objects:
                    specs[obj] = _random_spec(rng, cfg, obj)
        scenes.append(
            PanelScene(
                shapes=specs.get(ObjectType.SHAPE),
                lines=specs.get(ObjectType.LINE),
            )
        )

    answer_scene = scenes[8]
    answer_image = render_scene_bytes(answer_scene, cfg)

    foils: list[PanelScene] = []
    images = [answer_image]
    budget = cfg.foil_retry_budget
    while len(foils) < 7:
        if budget <= 0:
            raise GenerationError("foil retry budget exhausted; attribute domains too small")
        budget -= 1
        t = triples[int(rng.integers(len(triples)))]
        obj, attr = t.object_type, t.attribute_type
        truth = attribute_value(answer_scene, obj, attr)
        if attr == AttributeType.POSITION:
            alternatives = [m for m in range(2**cfg.grid_slots) if m != truth]
        else:
            domain = cfg.ordinal_values(obj, attr)
            alternatives = [v for v in domain if v != truth]
        if not alternatives:
            raise GenerationError(f"no alternative values for {obj.name}/{attr.name}")
        value = alternatives[int(rng.integers(len(alternatives)))]
        spec = _with_attribute(answer_scene.spec_for(obj), attr, value, rng, cfg.grid_slots)
        jitter = _FOIL_JITTER[(obj, attr)]
        if jitter == _JITTER_COLOR and attr != AttributeType.COLOR:
            spec = replace(spec, color=int(rng.integers(cfg.color_levels)))
        elif jitter == _JITTER_SIZE:
            spec = replace(spec, size=int(rng.integers(cfg.size_levels)))
        elif jitter == _JITTER_MASK_SAME_COUNT:
            count = bin(spec.slots).count("1")
            spec = replace(spec, slots=_mask_with_count(rng, count, cfg.grid_slots))
        foil = PanelScene(
            shapes=spec if obj == ObjectType.SHAPE else answer_scene.shapes,
            lines=spec if obj == ObjectType.LINE else answer_scene.lines,
        )
        img = render_scene_bytes(foil, cfg)
        if any(np.array_equal(img, seen) for seen in images):
            continue
        foils.append(foil)
        images.append(img)

    target = int(rng.integers(8))
    order = list(rng.permutation(7))
    candidate_scenes: list[PanelScene] = []
    shuffled = [foils[i] for i in order]
    for k in range(8):
        if k == target:
            candidate_scenes.append(answer_scene)
        else:
            candidate_scenes.append(shuffled.pop(0))

    panel_bytes = np.stack(
        [render_scene_bytes(s, cfg) for s in scenes[:8]]
        + [render_scene_bytes(s, cfg) for s in candidate_scenes]
    )
    record = SampleRecord(
        panels=dequantize(panel_bytes),
        target=target,
        triples=triples,
        image_size=cfg.image_size,
    )
    trace = SampleTrace(
        grid_scenes=scenes,
        candidate_scenes=candidate_scenes,
        triples=triples,
        target=target,
        column_wise=cfg.column_wise,
    )
    return record, trace


def generate_sample(rng: np.random.Generator, cfg: GeneratorConfig) -> SampleRecord:
    record, _ = generate_sample_with_trace(rng, cfg)
    return record


def generate_dataset(cfg: GeneratorConfig, count: int, seed: int | None = None) -> "Dataset":
    """Deterministic dataset: sample i uses the stream derived from (seed, i)."""
    seed = cfg.seed if seed is None else seed
    records = [generate_sample(sample_rng(seed, i), cfg) for i in range(count)]
    return Dataset.from_records(records, image_size=cfg.image_size)


# ---------------------------------------------------------------------------
# verification

def _relation_holds(relation: RelationType, row: tuple[int, int, int]) -> bool:
    a, b, c = row
    if relation == RelationType.AND:
        return c == a & b
    if relation == RelationType.OR:
        return c == a | b
    if relation == RelationType.XOR:
        return c == a ^ b
    if relation == RelationType.PROGRESSION:
        return (b - a) == (c - b) and a != b
    raise ValueError(f"unknown relation {relation}")


def _triple_holds(triple: StructureTriple, scenes: Sequence[PanelScene], column_wise: bool) -> bool:
    lines_of_cells = (
        [(0, 3, 6), (1, 4, 7), (2, 5, 8)] if column_wise else [(0, 1, 2), (3, 4, 5), (6, 7, 8)]
    )
    values = []
    for cells in lines_of_cells:
        try:
            values.append(
                tuple(attribute_value(scenes[i], triple.object_type, triple.attribute_type) for i in cells)
            )
        except ValueError:
            return False
    if triple.relation_type == RelationType.CONSISTENT_UNION:
        reference = sorted(values[0])
        return all(sorted(v) == reference for v in values)
    return all(_relation_holds(triple.relation_type, v) for v in values)


def verify_sample(trace: SampleTrace) -> list[int]:
    """Brute-force check of all 8 completions, purely on symbolic scenes.

    Returns the candidate indices that satisfy every governing triple. A
    sound sample yields exactly [trace.target].
    """
    satisfying = []
    for k, cand in enumerate(trace.candidate_scenes):
        scenes = list(trace.grid_scenes[:8]) + [cand]
        if all(_triple_holds(t, scenes, trace.column_wise) for t in trace.triples):
            satisfying.append(k)
    return satisfying


# ---------------------------------------------------------------------------
# containers and ingestion

class Dataset(Sequence):
    """Samples stored as quantized bytes; records materialize on access."""

    def __init__(
        self,
        panel_bytes: np.ndarray,
        targets: np.ndarray,
        triples: list[tuple[StructureTriple, ...]],
        image_size: int,
    ):
        n = len(targets)
        if panel_bytes.shape != (n, 16, image_size, image_size):
            raise ValueError(f"panel bytes shape {panel_bytes.shape} inconsistent with {n} samples")
        if len(triples) != n:
            raise ValueError("triples list length does not match sample count")
        self.panel_bytes = panel_bytes
        self.targets = np.asarray(targets, dtype=np.int64)
        self.triples = triples
        self.image_size = image_size

    def __len__(self) -> int:
        return len(self.targets)

    def __getitem__(self, i: int) -> SampleRecord:
        if isinstance(i, slice):
            raise TypeError("slicing not supported; index samples individually")
        return SampleRecord(
            panels=dequantize(self.panel_bytes[i]),
            target=int(self.targets[i]),
            triples=self.triples[i],
            image_size=self.image_size,
        )

    @classmethod
    def from_records(cls, records: Iterable[SampleRecord], image_size: int | None = None) -> "Dataset":
        records = list(records)
        if not records and image_size is None:
            raise ValueError("image_size required for an empty dataset")
        size = image_size if image_size is not None else records[0].image_size
        panel_bytes = np.zeros((len(records), 16, size, size), dtype=np.uint8)
        targets = np.zeros(len(records), dtype=np.int64)
        triples: list[tuple[StructureTriple, ...]] = []
        for i, r in enumerate(records):
            r.validate()
            if r.image_size != size:
                raise ValueError("mixed image sizes in one dataset")
            panel_bytes[i] = quantize(r.panels)
            targets[i] = r.target
            triples.append(tuple(r.triples))
        return cls(panel_bytes, targets, triples, size)


def downscale(image: np.ndarray) -> np.ndarray:
    """2x2 mean pooling over the trailing two axes; dimensions must be even."""
    arr = np.asarray(image)
    h, w = arr.shape[-2], arr.shape[-1]
    if h % 2 or w % 2:
        raise ValueError(f"downscale needs even dimensions, got {h}x{w}")
    lead = arr.shape[:-2]
    pooled = arr.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1))
    return pooled.astype(arr.dtype, copy=False)


@dataclass(frozen=True)
class RecordLayout:
    """Array names inside an externally produced compressed record."""

    image_key: str = "image"
    target_key: str = "target"
    structure_key: str = "structure"


def load_external_record(path, layout: RecordLayout = RecordLayout()) -> SampleRecord:
    """Read one full-scale record: 16 uint8 panels, a target, optional triples.

    Panels are mapped to [-1, 1] and 2x2 mean-pooled (160x160 becomes 80x80).
    Auxiliary label arrays beyond the structure codes are ignored.
    """
    with np.load(path) as archive:
        names = set(archive.files)
        for key in (layout.image_key, layout.target_key):
            if key not in names:
                raise KeyError(f"unknown record layout: missing array '{key}' (found {sorted(names)})")
        raw = archive[layout.image_key]
        target = int(np.asarray(archive[layout.target_key]).reshape(()))
        structure = archive[layout.structure_key] if layout.structure_key in names else None
    if raw.ndim != 3 or raw.shape[0] != 16 or raw.dtype != np.uint8:
        raise ValueError(f"expected (16, H, W) uint8 panels, got {raw.shape} {raw.dtype}")
    if not 0 <= target < 8:
        raise ValueError(f"target {target} out of range 0..7")
    panels = downscale(dequantize(raw))
    triples: tuple[StructureTriple, ...] = ()
    if structure is not None:
        codes = np.asarray(structure)
        if codes.ndim != 2 or codes.shape[1] != 3:
            raise ValueError(f"structure codes must be (k, 3), got {codes.shape}")
        triples = tuple(StructureTriple(int(o), int(a), int(r)) for o, a, r in codes)
    record = SampleRecord(
        panels=panels.astype(np.float32),
        target=target,
        triples=triples,
        image_size=panels.shape[-1],
    )
    record.validate()
    return record
