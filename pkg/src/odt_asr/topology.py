"""Layer manifests, sub-model extraction and resource-based sub-model selection.

A sub-model is a contiguous window of trainable layers. Windows are always
suffixes of the layer list so that backpropagation can stop at the first
trainable layer.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .device import ResourceSnapshot, ram_ratio
from .errors import NoFeasibleSubModel, ParseError

LAYER_KINDS = ("conv", "birnn", "fc")


class Category(enum.IntEnum):
    # Ordered so that a larger value means more trainable parameters.
    Light = 1
    Medium = 2
    Heavy = 3


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    param_count: int

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ParseError(f"layer {self.name!r}: unknown kind {self.kind!r}")
        if self.param_count < 1:
            raise ParseError(f"layer {self.name!r}: param_count must be >= 1")


@dataclass(frozen=True)
class ModelTopology:
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ParseError("topology has no layers")
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ParseError("layer names must be unique")

    @property
    def names(self) -> list[str]:
        return [layer.name for layer in self.layers]


@dataclass(frozen=True)
class SubModelSpec:
    category: Category
    first_trainable_index: int
    trainable_layer_count: int
    param_fraction: float
    trainable_params: int
    layer_names: tuple[str, ...]

    def mask(self, n_layers: int) -> list[bool]:
        return [i >= self.first_trainable_index for i in range(n_layers)]


@dataclass(frozen=True)
class SelectionThresholds:
    r1: float = 0.5
    r2: float = 0.35
    r3: float = 0.15
    medium_cap: float = 0.70
    light_cap: float = 0.10

    def __post_init__(self):
        if not 1 >= self.r1 > self.r2 > self.r3 > 0:
            raise ValueError("thresholds must satisfy 1 >= r1 > r2 > r3 > 0")
        if not 0 < self.light_cap < self.medium_cap <= 1.0:
            raise ValueError("caps must satisfy 0 < light_cap < medium_cap <= 1")

    def cap(self, category: Category) -> float:
        return {Category.Heavy: 1.0, Category.Medium: self.medium_cap,
                Category.Light: self.light_cap}[category]


def total_params(t: ModelTopology) -> int:
    return sum(layer.param_count for layer in t.layers)


def extract_submodel(t: ModelTopology, category: Category,
                     caps: SelectionThresholds = SelectionThresholds()) -> SubModelSpec:
    """Return the longest layer suffix whose parameter fraction fits the category cap."""
    category = Category[category] if isinstance(category, str) else Category(category)
    total = total_params(t)
    n = len(t.layers)
    if category is Category.Heavy:
        start = 0
    else:
        cap = caps.cap(category)
        start = n
        running = 0
        # integer comparison avoids float rounding at the cap boundary
        for i in range(n - 1, -1, -1):
            running += t.layers[i].param_count
            if running > cap * total:
                break
            start = i
        if start == n:
            raise NoFeasibleSubModel(
                f"{category.name}: last layer {t.layers[-1].name!r} alone holds "
                f"{t.layers[-1].param_count / total:.2%} of parameters (cap {cap:.0%})")
    trainable = sum(layer.param_count for layer in t.layers[start:])
    return SubModelSpec(
        category=category,
        first_trainable_index=start,
        trainable_layer_count=n - start,
        param_fraction=trainable / total,
        trainable_params=trainable,
        layer_names=tuple(layer.name for layer in t.layers[start:]),
    )


def select_category(ratio: float, thresholds: SelectionThresholds) -> Category | None:
    if ratio >= thresholds.r1:
        return Category.Heavy
    if ratio >= thresholds.r2:
        return Category.Medium
    if ratio >= thresholds.r3:
        return Category.Light
    return None


def select_training_mode(s: ResourceSnapshot, thresholds: SelectionThresholds,
                         t: ModelTopology) -> SubModelSpec | None:
    """Pick the sub-model to train from the available/total RAM ratio.

    Returns None when the device is too constrained to train at all.
    """
    category = select_category(ram_ratio(s), thresholds)
    if category is None:
        return None
    return extract_submodel(t, category, thresholds)


def parse_manifest(text: str, source: str = "<manifest>") -> ModelTopology:
    """Parse ``name kind param_count`` records, one per line; ``#`` starts a comment."""
    layers = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 3:
            raise ParseError(f"{source}:{lineno}: expected 'name kind param_count'")
        name, kind, count = fields
        try:
            count = int(count.replace("_", ""))
        except ValueError:
            raise ParseError(f"{source}:{lineno}: bad param_count {count!r}") from None
        try:
            layers.append(LayerSpec(name, kind, count))
        except ParseError as exc:
            raise ParseError(f"{source}:{lineno}: {exc}") from None
    return ModelTopology(tuple(layers))


def load_manifest(path: str | Path) -> ModelTopology:
    path = Path(path)
    return parse_manifest(path.read_text(), str(path))


def paper_mirror() -> ModelTopology:
    """The bundled 30.24M-parameter manifest mirroring the reference DeepSpeech2 stack."""
    text = resources.files("odt_asr.data").joinpath("paper_mirror.manifest").read_text()
    return parse_manifest(text, "paper_mirror.manifest")


def format_millions(n: int) -> str:
    # truncated, not rounded: 1,088,800 is reported as 1.08M
    return f"{int(n // 10_000) / 100:.2f}M"


def format_percent(fraction: float) -> str:
    pct = round(fraction * 100, 1)
    return f"{pct:.0f}%" if pct == int(pct) else f"{pct:.1f}%"


def submodel_table(t: ModelTopology, thresholds: SelectionThresholds = SelectionThresholds()):
    """One row per category: (category, SubModelSpec or the NoFeasibleSubModel raised)."""
    rows = []
    for category in (Category.Heavy, Category.Medium, Category.Light):
        try:
            rows.append((category, extract_submodel(t, category, thresholds)))
        except NoFeasibleSubModel as exc:
            rows.append((category, exc))
    return rows
