"""Action gating and specialist dispatch over the seven content classes."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioClip
from .dsp import DspConfig, featurize
from .nn import Network

CONTENT_CLASSES = ("empty", "pasta-half", "pasta-full", "rice-half", "rice-full", "water-half", "water-full")
ACTION_CLASSES = ("unknown", "pouring", "shaking")
LEVELS = ("empty", "half", "full")
TYPES = ("none", "pasta", "rice", "water")


@dataclass(frozen=True)
class ClassTaxonomy:
    content_classes: tuple[str, ...] = CONTENT_CLASSES
    action_classes: tuple[str, ...] = ACTION_CLASSES
    pouring_mask: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    shaking_mask: tuple[int, ...] = (1, 2, 3, 4)
    # the class z_a stands for when the gate says "unknown"
    unknown_class: int = 0

    def __post_init__(self):
        if len(self.content_classes) != 7 or len(self.action_classes) != 3:
            raise ValueError("taxonomy needs 7 content classes and 3 actions")
        for name, mask in (("pouring", self.pouring_mask), ("shaking", self.shaking_mask)):
            if any(b <= a for a, b in zip(mask, mask[1:])):
                raise ValueError(f"{name} mask must be strictly increasing")
            if not all(0 <= i < len(self.content_classes) for i in mask):
                raise ValueError(f"{name} mask indexes outside the content classes")

    def mask(self, action: str) -> tuple[int, ...]:
        if action == "pouring":
            return self.pouring_mask
        if action == "shaking":
            return self.shaking_mask
        raise KeyError(f"no specialist for action {action!r}")

    def content_index(self, name: str) -> int:
        return self.content_classes.index(name)

    def action_index(self, name: str) -> int:
        return self.action_classes.index(name)

    def level(self, c: int) -> int:
        """Index into LEVELS of content class ``c``."""
        name = self.content_classes[c]
        return 0 if name == "empty" else LEVELS.index(name.rsplit("-", 1)[1])

    def kind(self, c: int) -> int:
        """Index into TYPES of content class ``c``."""
        name = self.content_classes[c]
        return 0 if name == "empty" else TYPES.index(name.split("-", 1)[0])


TAXONOMY = ClassTaxonomy()


@dataclass(frozen=True)
class OneHot:
    dim: int
    hot: int

    def __post_init__(self):
        if not 0 <= self.hot < self.dim:
            raise ValueError(f"hot index {self.hot} outside [0, {self.dim})")

    def vector(self) -> np.ndarray:
        v = np.zeros(self.dim)
        v[self.hot] = 1.0
        return v


def argmax_onehot(probs) -> OneHot:
    """One-hot of the largest entry; the smallest index wins ties."""
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise ValueError("cannot take the argmax of an empty vector")
    return OneHot(p.size, int(np.argmax(p)))


def embed(z: OneHot, mask, n_classes: int = 7) -> OneHot:
    """Lift a specialist's one-hot into the content-class space through ``mask``."""
    if z.dim != len(mask):
        raise ValueError(f"one-hot of size {z.dim} does not match a mask of {len(mask)} classes")
    return OneHot(n_classes, int(mask[z.hot]))


def fuse(pi: OneHot, z_g: OneHot, z_h: OneHot, taxonomy: ClassTaxonomy = TAXONOMY) -> int:
    """argmax(pi_1 z_a + pi_2 z_g + pi_3 z_h) with z_a fixed at the unknown class."""
    if pi.dim != 3:
        raise ValueError(f"gate must have 3 entries, got {pi.dim}")
    n = len(taxonomy.content_classes)
    if z_g.dim != n or z_h.dim != n:
        raise ValueError("specialist one-hots must span the content classes")
    z_a = OneHot(n, taxonomy.unknown_class)
    gate = pi.vector()
    mix = gate[0] * z_a.vector() + gate[1] * z_g.vector() + gate[2] * z_h.vector()
    return argmax_onehot(mix).hot


def model_input(spec: np.ndarray, top_db: float = 80.0) -> np.ndarray:
    """Map a max-referenced dB spectrogram in [-top_db, 0] to [0, 1] float32."""
    return ((np.asarray(spec, dtype=np.float64) + top_db) / top_db).astype(np.float32)


@dataclass
class Prediction:
    clip_path: str
    action: str
    action_probs: list[float]
    content_class: str
    specialist_probs: list[float] | None
    elapsed_ms: float
    content_index: int = field(default=0, repr=False)
    action_index: int = field(default=0, repr=False)

    def record(self) -> dict:
        return {
            "clip_path": self.clip_path,
            "action": self.action,
            "action_probs": self.action_probs,
            "content_class": self.content_class,
            "specialist_probs": self.specialist_probs,
            "elapsed_ms": self.elapsed_ms,
        }

    def to_json(self) -> str:
        return json.dumps(self.record(), sort_keys=True)


class Classifier:
    """The gated model: the action net picks which one specialist to run."""

    def __init__(self, nets: dict[str, Network], taxonomy: ClassTaxonomy = TAXONOMY, dsp: DspConfig = DspConfig()):
        self.nets = nets
        self.taxonomy = taxonomy
        self.dsp = dsp

    def _specialist(self, action: str) -> Network:
        net = self.nets.get(action)
        if net is None:
            raise KeyError(f"no {action} model loaded")
        return net

    def classify_inputs(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, list]:
        """Classify a batch of scaled (B, N, N) inputs.

        Returns content indices, action indices, action probabilities and the
        per-item specialist probabilities (None where the gate said unknown).
        Each item goes through exactly one specialist, batched per action.
        """
        tax = self.taxonomy
        x = np.asarray(x, dtype=np.float32)
        probs = self.nets["action"].predict(x)
        actions = np.array([argmax_onehot(p).hot for p in probs], dtype=int)
        content = np.full(len(x), tax.unknown_class, dtype=int)
        spec_probs: list = [None] * len(x)
        n = len(tax.content_classes)
        for a, name in ((1, "pouring"), (2, "shaking")):
            idx = np.flatnonzero(actions == a)
            if idx.size == 0:
                continue
            mask = tax.mask(name)
            out = self._specialist(name).predict(x[idx])
            for i, p in zip(idx, out):
                z = embed(argmax_onehot(p), mask, n)
                other = OneHot(n, tax.unknown_class)
                z_g, z_h = (z, other) if name == "pouring" else (other, z)
                content[i] = fuse(OneHot(3, a), z_g, z_h, tax)
                spec_probs[i] = [float(v) for v in p]
        return content, actions, probs, spec_probs

    def classify_spectrogram(self, spec: np.ndarray, clip_path: str = "") -> Prediction:
        t0 = time.perf_counter()
        content, actions, probs, spec_probs = self.classify_inputs(model_input(spec, self.dsp.top_db)[None])
        elapsed = (time.perf_counter() - t0) * 1000.0
        return self.prediction(clip_path, content[0], actions[0], probs[0], spec_probs[0], elapsed)

    def classify(self, clip: AudioClip, clip_path: str = "") -> Prediction:
        t0 = time.perf_counter()
        spec = featurize(clip, self.dsp)
        content, actions, probs, spec_probs = self.classify_inputs(model_input(spec, self.dsp.top_db)[None])
        elapsed = (time.perf_counter() - t0) * 1000.0
        return self.prediction(clip_path, content[0], actions[0], probs[0], spec_probs[0], elapsed)

    def prediction(self, path, c, a, probs, spec_probs, elapsed_ms: float) -> Prediction:
        tax = self.taxonomy
        return Prediction(
            clip_path=str(path),
            action=tax.action_classes[a],
            action_probs=[float(v) for v in probs],
            content_class=tax.content_classes[c],
            specialist_probs=spec_probs,
            elapsed_ms=round(float(elapsed_ms), 3),
            content_index=int(c),
            action_index=int(a),
        )
