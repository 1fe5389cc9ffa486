"""Manifests, train/validation splits and the synthetic manipulation-sound generator."""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .audio import PIPELINE_RATE, AudioClip, write_wav
from .pipeline import ACTION_CLASSES, CONTENT_CLASSES, TAXONOMY, ClassTaxonomy

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MANIFEST_FIELDS = ("path", "action", "content_class", "container_id", "split")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestItem:
    path: Path
    action: str | None
    content_class: int | None
    container_id: str = ""
    split: str = "train"

    @property
    def labelled(self) -> bool:
        return self.action is not None and self.content_class is not None

    @property
    def action_index(self) -> int:
        return ACTION_CLASSES.index(self.action)


def check_labels(action: str | None, content: int | None, taxonomy: ClassTaxonomy = TAXONOMY) -> None:
    """Raise ManifestError if the (action, content class) pair cannot occur."""
    if action is None and content is None:
        return
    if action is None or content is None:
        raise ManifestError("action and content_class must both be given or both be blank")
    if action not in taxonomy.action_classes:
        raise ManifestError(f"unknown action {action!r}")
    if not 0 <= content < len(taxonomy.content_classes):
        raise ManifestError(f"content class index {content} out of range")
    name = taxonomy.content_classes[content]
    if action == "unknown" and content != taxonomy.unknown_class:
        raise ManifestError(f"action 'unknown' requires content 'empty', got {name!r}")
    if action != "unknown" and content not in taxonomy.mask(action):
        raise ManifestError(f"action {action!r} cannot carry content {name!r}")


def _parse_content(text: str, taxonomy: ClassTaxonomy) -> int | None:
    text = text.strip()
    if not text:
        return None
    if text.isdigit():
        return int(text)
    if text not in taxonomy.content_classes:
        raise ManifestError(f"unknown content class {text!r}")
    return taxonomy.content_classes.index(text)


def load_manifest(path, taxonomy: ClassTaxonomy = TAXONOMY) -> list[ManifestItem]:
    """Read a comma-separated manifest with a header row.

    Paths are relative to the manifest's directory. Content classes may be
    names or indices; blank action and content mark an unlabelled clip. All
    bad lines are reported together, each with its line number.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"{path}: cannot read manifest: {exc}") from None
    if not text.strip():
        log.warning("%s: empty manifest", path)
        return []
    rows = csv.reader(text.splitlines())
    header = [h.strip() for h in next(rows)]
    missing = [f for f in MANIFEST_FIELDS if f not in header]
    if missing:
        raise ManifestError(f"{path}:1: header lacks {', '.join(missing)}")
    col = {name: header.index(name) for name in MANIFEST_FIELDS}
    base = path.parent
    items, errors = [], []
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not v.strip() for v in row):
            continue
        try:
            if len(row) < len(header):
                raise ManifestError(f"expected {len(header)} fields, got {len(row)}")
            action = row[col["action"]].strip() or None
            content = _parse_content(row[col["content_class"]], taxonomy)
            check_labels(action, content, taxonomy)
            split = row[col["split"]].strip() or "train"
            if split not in SPLITS:
                raise ManifestError(f"unknown split {split!r}")
            rel = row[col["path"]].strip()
            if not rel:
                raise ManifestError("empty path")
            items.append(ManifestItem(base / rel, action, content, row[col["container_id"]].strip(), split))
        except ManifestError as exc:
            errors.append(f"{path}:{lineno}: {exc}")
    if errors:
        raise ManifestError("\n".join(errors))
    return items


def write_manifest(path, items: list[ManifestItem], taxonomy: ClassTaxonomy = TAXONOMY) -> None:
    path = Path(path)
    base = path.parent.resolve()
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for it in items:
            p = Path(it.path)
            try:
                p = p.resolve().relative_to(base)
            except ValueError:
                pass
            content = "" if it.content_class is None else taxonomy.content_classes[it.content_class]
            w.writerow([p.as_posix(), it.action or "", content, it.container_id, it.split])


def strata_key(item: ManifestItem) -> tuple:
    return (item.action, item.content_class)


def split_train_val(items: list, ratio: float = 0.8, seed: int = 0, stratified: bool = True, key=strata_key):
    """Seeded partition into (train, val), original order kept within each part.

    Stratified mode splits every (action, content class) group separately so
    each keeps round(ratio * n) items on the training side.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    n = len(items)
    if stratified:
        groups: dict = {}
        for i, it in enumerate(items):
            groups.setdefault(key(it), []).append(i)
        small = [k for k, idx in groups.items() if len(idx) < 2]
        if small:
            raise ValueError(f"stratified split needs at least 2 items per class; too few for {small}; use stratified=False")
        val_idx = []
        for k in sorted(groups, key=repr):
            idx = np.array(groups[k])
            n_train = min(max(int(round(ratio * len(idx))), 1), len(idx) - 1)
            val_idx.extend(rng.permutation(idx)[n_train:].tolist())
    else:
        if n < 2:
            raise ValueError("need at least 2 items to split")
        n_train = min(max(int(round(ratio * n)), 1), n - 1)
        val_idx = rng.permutation(n)[n_train:].tolist()
    is_val = np.zeros(n, dtype=bool)
    is_val[val_idx] = True
    return [it for i, it in enumerate(items) if not is_val[i]], [it for i, it in enumerate(items) if is_val[i]]


# --- synthetic corpus ----------------------------------------------------------


@dataclass(frozen=True)
class SynthRecipe:
    content_class: int
    action: str
    duration: float = 8.0
    seed: int = 0
    container: int = 0

    def __post_init__(self):
        check_labels(self.action, self.content_class)
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if not 0 <= self.container < len(CONTAINER_SCALE):
            raise ValueError(f"container {self.container} outside [0, {len(CONTAINER_SCALE)})")


# per content type: resonance band (Hz) for half and full, and grain rate (events/s)
_GRAIN = {
    "pasta": {"half": (1800.0, 2600.0), "full": (1000.0, 1600.0), "rate": 25.0},
    "rice": {"half": (6000.0, 8000.0), "full": (3800.0, 5200.0), "rate": 180.0},
}
_BURST_RATE = {"pasta": 2.5, "rice": 4.5}
_NOISE_FLOOR = 0.003
_JITTER = 0.06
# resonance scale per synthetic container; 0 is neutral, 1-6 are seen in
# training and validation, 7-8 only in test
CONTAINER_SCALE = (1.0, 0.86, 0.92, 0.97, 1.03, 1.08, 1.14, 0.89, 1.11)
SPLIT_CONTAINERS = {"train": (1, 2, 3, 4, 5, 6), "val": (1, 2, 3, 4, 5, 6), "test": (7, 8)}


def _bandpass(x: np.ndarray, lo: float, hi: float, rate: int, order: int = 4) -> np.ndarray:
    sos = signal.butter(order, [lo, hi], btype="bandpass", fs=rate, output="sos")
    return signal.sosfilt(sos, x)


def _grains(rng, n: int, rate: int, density: float, band) -> np.ndarray:
    """Poisson train of unit-ish impulses rung through a band-pass resonance."""
    count = rng.poisson(density * n / rate)
    x = np.zeros(n)
    pos = rng.integers(0, n, size=count)
    np.add.at(x, pos, rng.uniform(0.3, 1.0, size=count) * rng.choice((-1.0, 1.0), size=count))
    y = _bandpass(x, band[0], band[1], rate)
    peak = np.max(np.abs(y))
    return y / peak if peak > 0 else y


def _water(rng, n: int, rate: int, f0: float, f1: float) -> np.ndarray:
    """Narrow-band noise whose centre glides from f0 to f1 as the vessel fills."""
    t = np.arange(n) / rate
    freq = f0 + (f1 - f0) * (t / max(t[-1], 1.0 / rate)) ** 0.7
    phase = 2.0 * np.pi * np.cumsum(freq) / rate
    env = _bandpass(rng.standard_normal(n), 20.0, 300.0, rate, order=2)
    env /= np.max(np.abs(env))
    hiss = _bandpass(rng.standard_normal(n), 300.0, 900.0, rate)
    hiss /= np.max(np.abs(hiss))
    return env * np.cos(phase) + 0.15 * hiss


def _handling(rng, n: int, rate: int) -> np.ndarray:
    """Class-independent nuisance: grip thumps, an occasional clink and mains hum."""
    out = np.zeros(n)
    for _ in range(rng.integers(0, 4)):
        k = min(n, int(rng.uniform(0.05, 0.15) * rate))
        at = int(rng.integers(0, max(1, n - k)))
        t = np.arange(k) / rate
        thump = _bandpass(rng.standard_normal(k), 40.0, 300.0, rate, order=2) * np.exp(-t / rng.uniform(0.02, 0.06))
        out[at : at + k] += rng.uniform(0.3, 1.0) * thump / max(np.max(np.abs(thump)), 1e-12)
    if rng.random() < 0.5:
        k = int(0.4 * rate)
        at = int(rng.integers(0, max(1, n - k)))
        t = np.arange(min(k, n - at)) / rate
        f = rng.uniform(2000.0, 6000.0)
        clink = sum(np.sin(2 * np.pi * f * h * t) / h for h in (1.0, 2.76, 5.4)) * np.exp(-t / 0.08)
        out[at : at + len(t)] += rng.uniform(0.2, 0.6) * clink
    mains = rng.choice((50.0, 60.0))
    t = np.arange(n) / rate
    out += rng.uniform(0.0, 0.05) * sum(np.sin(2 * np.pi * mains * h * t) / h for h in (1, 2, 3))
    return out


def _fade(n: int, rate: int, seconds: float = 0.05) -> np.ndarray:
    k = min(n // 2, int(seconds * rate))
    g = np.ones(n)
    if k > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(k) / k)
        g[:k] = ramp
        g[n - k :] = ramp[::-1]
    return g


def synth_generate(recipe: SynthRecipe, rate: int = PIPELINE_RATE) -> AudioClip:
    """Render a deterministic caricature of one manipulation recording.

    Pouring water is a gliding narrow band; pouring pasta or rice is a grain
    train whose band and density depend on type and level; shaking gates a
    dense grain train into bursts over a low rattle. Handling thumps, clinks
    and hum are mixed in regardless of class. Empty containers give only a
    faint noise floor (peak below 0.05).
    """
    rng = np.random.default_rng(recipe.seed)
    n = int(round(recipe.duration * rate))
    noise = np.clip(rng.standard_normal(n) * _NOISE_FLOOR, -0.02, 0.02)
    if recipe.action == "unknown":
        return AudioClip(noise, rate)
    kind, level = CONTENT_CLASSES[recipe.content_class].split("-")
    scale = CONTAINER_SCALE[recipe.container]
    jitter = lambda: rng.uniform(1.0 - _JITTER, 1.0 + _JITTER)  # noqa: E731
    lead = rng.uniform(0.2, 1.2)
    start = min(int(lead * rate), n - 1)
    length = {"half": 3.5, "full": 6.0}[level] if recipe.action == "pouring" else 5.0
    m = max(1, min(n - start, int(length * jitter() * rate)))
    if recipe.action == "pouring" and kind == "water":
        top = {"half": 2200.0, "full": 3800.0}[level]
        body = _water(rng, m, rate, 700.0 * scale * jitter(), top * scale * jitter())
    elif recipe.action == "pouring":
        spec = _GRAIN[kind]
        lo, hi = spec[level]
        density = spec["rate"] * (1.6 if level == "full" else 1.0) * jitter()
        shift = scale * jitter()
        body = _grains(rng, m, rate, density, (lo * shift, hi * shift))
    else:
        spec = _GRAIN[kind]
        lo, hi = spec[level]
        density = spec["rate"] * 4.0 * (1.0 if level == "full" else 1.6) * jitter()
        shift = scale * jitter()
        grains = _grains(rng, m, rate, density, (lo * shift, hi * shift))
        rattle = _bandpass(rng.standard_normal(m), 120.0, 450.0, rate)
        rattle /= np.max(np.abs(rattle))
        t = np.arange(m) / rate
        phase = rng.uniform(0, 2 * np.pi)
        gate = np.clip(np.sin(2 * np.pi * _BURST_RATE[kind] * jitter() * t + phase), 0.0, None) ** 2
        body = gate * (grains + 0.5 * rattle)
    body = body * _fade(m, rate) / max(np.max(np.abs(body)), 1e-12)
    body = (body + 0.5 * _handling(rng, m, rate)) * rng.uniform(0.3, 0.8)
    noise[start : start + m] += body
    return AudioClip(noise, rate)


def corpus_combos(taxonomy: ClassTaxonomy = TAXONOMY) -> list[tuple[str, int]]:
    """Every permitted (action, content class) pair, in a fixed order."""
    combos = [("unknown", taxonomy.unknown_class)]
    combos += [("pouring", c) for c in taxonomy.pouring_mask]
    combos += [("shaking", c) for c in taxonomy.shaking_mask]
    return combos


def balanced_counts(total: int, combos: list) -> dict:
    """Spread ``total`` over ``combos`` as evenly as possible, earlier combos first."""
    base, extra = divmod(total, len(combos))
    return {c: base + (1 if i < extra else 0) for i, c in enumerate(combos)}


def corpus_recipes(counts: dict, seed: int, split: str, duration: float = 8.0) -> list[SynthRecipe]:
    """Recipes honouring ``counts`` exactly; seeds derive from (seed, split, position).

    Containers cycle through the split's container set, so test clips come
    from containers never heard in training.
    """
    split_id = SPLITS.index(split) if split in SPLITS else len(SPLITS)
    containers = SPLIT_CONTAINERS.get(split, (0,))
    recipes = []
    for (action, content), k in counts.items():
        for j in range(k):
            child = np.random.SeedSequence([seed, split_id, len(recipes)]).generate_state(1)[0]
            recipes.append(SynthRecipe(content, action, duration, int(child), containers[j % len(containers)]))
    return recipes


def generate_corpus(out_dir, sizes: dict[str, int], seed: int = 0, duration: float = 8.0, jobs: int = 1) -> Path:
    """Write WAV files and ``manifest.csv`` for the requested split sizes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    combos = corpus_combos()
    plan = []
    for split, total in sizes.items():
        for r in corpus_recipes(balanced_counts(total, combos), seed, split, duration):
            name = f"{split}/{r.action}_{CONTENT_CLASSES[r.content_class]}_{len(plan):05d}.wav"
            plan.append((out / name, r, split))
    for split in sizes:
        (out / split).mkdir(exist_ok=True)

    def render(job):
        path, r, _ = job
        write_wav(path, synth_generate(r), fmt="float32")

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as pool:
            list(pool.map(render, plan))
    else:
        for job in plan:
            render(job)
    items = [ManifestItem(p, r.action, r.content_class, f"c{r.container}", s) for p, r, s in plan]
    write_manifest(out / "manifest.csv", items)
    return out / "manifest.csv"


# --- CCM layout ------------------------------------------------------------------

_CCM_NAME = re.compile(r"s(\d+)_fi(\d+)_fu(\d+)_b(\d+)_l(\d+)")
_CCM_TYPES = {0: None, 1: "pasta", 2: "rice", 3: "water"}
_CCM_LEVELS = {0: None, 1: "half", 2: "full"}
CCM_BOX_CONTAINERS = frozenset({7, 8, 9})


def ccm_labels(path, box_containers=CCM_BOX_CONTAINERS):
    """(action, content class, container id, split) for a CCM audio file, or None.

    Files are expected as ``<container>/audio/sS_fiF_fuU_bB_lL.wav``. Filling
    type 0 or level 0 is an empty container (action unknown); boxes are shaken
    and every other container is poured into. Containers 1-9 are training
    data and the rest are test recordings whose labels are not released.
    """
    p = Path(path)
    m = _CCM_NAME.search(p.stem)
    container = next((part for part in reversed(p.parts[:-1]) if part.isdigit()), None)
    if m is None or container is None:
        return None
    cid = int(container)
    split = "train" if cid <= 9 else "test"
    ftype, flevel = int(m.group(2)), int(m.group(3))
    if split == "test":
        return None, None, container, split
    if _CCM_TYPES.get(ftype) is None or _CCM_LEVELS.get(flevel) is None:
        return "unknown", 0, container, split
    content = CONTENT_CLASSES.index(f"{_CCM_TYPES[ftype]}-{_CCM_LEVELS[flevel]}")
    return ("shaking" if cid in box_containers else "pouring"), content, container, split


def build_manifest(root, out_path, labeler=ccm_labels) -> tuple[int, int]:
    """Scan ``root`` for WAV files and write a manifest using ``labeler``.

    Returns (written, skipped). Files the labeler rejects or whose labels are
    inconsistent are skipped with a warning.
    """
    root = Path(root)
    items, skipped = [], 0
    for wav in sorted(root.rglob("*.wav")):
        got = labeler(wav)
        if got is None:
            skipped += 1
            log.warning("%s: no label mapping, skipped", wav)
            continue
        action, content, container, split = got
        try:
            check_labels(action, content)
        except ManifestError as exc:
            skipped += 1
            log.warning("%s: %s, skipped", wav, exc)
            continue
        items.append(ManifestItem(wav, action, content, container, split))
    write_manifest(out_path, items)
    return len(items), skipped
