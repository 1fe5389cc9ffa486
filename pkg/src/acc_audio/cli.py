"""Command line: synth, featurize, train, eval, baseline, predict, build-manifest.

Exit codes: 0 success, 1 some items failed, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import data, models
from .audio import decode_wav, read_wav
from .dsp import DspConfig, featurize, read_cache, write_cache
from .knn import knn_fit, knn_predict_batch
from .nn import checkpoint
from .pipeline import TAXONOMY, Classifier, Prediction, model_input
from .train_eval import TARGETS, TrainConfig, evaluate_predictions, target_labels, train, write_summary

log = logging.getLogger("acc_audio")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    dsp: DspConfig = field(default_factory=DspConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    specs: dict = field(default_factory=models.default_config)
    knn_k: int = 5

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        parser["dsp"] = {f.name: str(getattr(self.dsp, f.name)) for f in fields(DspConfig)}
        parser["train"] = {f.name: str(getattr(self.train, f.name)) for f in fields(TrainConfig)}
        for mid, sec in models.specs_to_ini(self.specs).items():
            parser[mid] = sec
        parser["knn"] = {"k": str(self.knn_k)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def _coerce(cls, section, base):
    """Replace dataclass fields of ``base`` from an INI section, keeping field types."""
    changes = {}
    types = {f.name: type(getattr(base, f.name)) for f in fields(cls)}
    for key, raw in section.items():
        if key not in types:
            raise ConfigError(f"[{section.name}] unknown key {key!r}")
        kind = types[key]
        try:
            if kind is bool:
                changes[key] = section.getboolean(key)
            else:
                changes[key] = kind(raw)
        except ValueError:
            raise ConfigError(f"[{section.name}] {key} = {raw!r} is not a valid {kind.__name__}") from None
    return replace(base, **changes)


def load_run_config(path=None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    try:
        with open(path) as f:
            parser.read_file(f)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    known = {"dsp", "train", "knn", *models.MODEL_IDS}
    unknown = [s for s in parser.sections() if s not in known]
    if unknown:
        raise ConfigError(f"{path}: unknown sections {unknown}")
    try:
        if parser.has_section("dsp"):
            cfg.dsp = _coerce(DspConfig, parser["dsp"], cfg.dsp)
        if parser.has_section("train"):
            cfg.train = _coerce(TrainConfig, parser["train"], cfg.train)
        cfg.specs = models.specs_from_parser(parser)
        if parser.has_section("knn"):
            cfg.knn_k = parser["knn"].getint("k", cfg.knn_k)
    except (ValueError, models.SpecError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return cfg


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    tr = {}
    for name in ("epochs", "seed", "lr", "batch_size"):
        value = getattr(args, name, None)
        if value is not None:
            tr[name] = value
    if tr:
        try:
            cfg.train = replace(cfg.train, **tr)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if getattr(args, "k", None) is not None:
        cfg.knn_k = args.k
    return cfg


# --- feature cache -----------------------------------------------------------------


def _dsp_tag(dsp: DspConfig) -> bytes:
    return json.dumps(asdict(dsp), sort_keys=True).encode()


def cache_path(cache_dir: Path, wav_bytes: bytes, dsp: DspConfig) -> Path:
    digest = hashlib.sha256(_dsp_tag(dsp) + wav_bytes).hexdigest()[:24]
    return cache_dir / f"{digest}.spec"


def featurize_items(items, cache_dir, dsp: DspConfig, jobs: int = 1):
    """Spectrogram for every item, computed at most once per (audio bytes, DSP config).

    Returns (spectrograms, failures, computed) where a failed item's entry is
    None and ``failures`` lists (path, message).
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)

    def one(item):
        try:
            blob = Path(item.path).read_bytes()
            target = cache_path(cache_dir, blob, dsp)
            if target.exists():
                return read_cache(target), None, False
            spec = featurize(decode_wav(blob), dsp).astype(np.float32)
            tmp = target.with_suffix(".tmp")
            write_cache(tmp, spec, dsp.size)
            tmp.replace(target)
            return spec, None, True
        except Exception as exc:  # noqa: BLE001 - every per-file failure is reported and counted
            return None, f"{item.path}: {exc}", False

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(it) for it in items]
    specs = [r[0] for r in results]
    failures = [r[1] for r in results if r[1] is not None]
    computed = sum(1 for r in results if r[2])
    for msg in failures:
        log.error("featurize failed: %s", msg)
    return specs, failures, computed


# --- commands ------------------------------------------------------------------------


def cmd_synth(args, cfg: RunConfig) -> int:
    sizes = {"train": args.train, "val": args.val, "test": args.test}
    sizes = {k: v for k, v in sizes.items() if v > 0}
    manifest = data.generate_corpus(args.out_dir, sizes, seed=args.seed, duration=args.duration, jobs=args.jobs)
    print(f"wrote {sum(sizes.values())} clips and {manifest}")
    return EXIT_OK


def cmd_featurize(args, cfg: RunConfig) -> int:
    items = data.load_manifest(args.manifest)
    _, failures, computed = featurize_items(items, args.out_dir, cfg.dsp, args.jobs)
    print(f"{len(items)} items: {computed} computed, {len(items) - computed - len(failures)} up to date, {len(failures)} failed")
    return EXIT_PARTIAL if failures else EXIT_OK


def _stack(specs, dsp: DspConfig) -> np.ndarray:
    return np.stack([model_input(s, dsp.top_db) for s in specs]) if specs else np.zeros((0, dsp.size, dsp.size), np.float32)


def _labelled(items, specs):
    keep = [i for i, (it, s) in enumerate(zip(items, specs)) if s is not None and it.labelled]
    return [items[i] for i in keep], [specs[i] for i in keep]


def cmd_train(args, cfg: RunConfig) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    items = [it for it in data.load_manifest(args.manifest) if it.split in ("train", "val")]
    cache = Path(args.cache) if args.cache else out / "cache"
    specs, failures, _ = featurize_items(items, cache, cfg.dsp, args.jobs)
    items, specs = _labelled(items, specs)
    tr_items = [it for it in items if it.split == "train"]
    va_items = [it for it in items if it.split == "val"]
    tr_specs = [s for it, s in zip(items, specs) if it.split == "train"]
    va_specs = [s for it, s in zip(items, specs) if it.split == "val"]
    if not va_items:
        lookup = {id(it): s for it, s in zip(tr_items, tr_specs)}
        tr_items, va_items = data.split_train_val(tr_items, cfg.train.split_ratio, cfg.train.seed, cfg.train.stratified)
        tr_specs = [lookup[id(it)] for it in tr_items]
        va_specs = [lookup[id(it)] for it in va_items]
    x_tr, x_va = _stack(tr_specs, cfg.dsp), _stack(va_specs, cfg.dsp)
    a_tr = [it.action_index for it in tr_items]
    a_va = [it.action_index for it in va_items]
    c_tr = [it.content_class for it in tr_items]
    c_va = [it.content_class for it in va_items]
    (out / "config.ini").write_text(cfg.to_ini())
    trained = 0
    for k, target in enumerate(TARGETS):
        i_tr, y_tr = target_labels(target, a_tr, c_tr)
        i_va, y_va = target_labels(target, a_va, c_va)
        if len(i_tr) == 0 or len(i_va) == 0:
            log.warning("no %s-labelled clips in the %s split; %s model not trained", target, "training" if len(i_tr) == 0 else "validation", target)
            continue
        net = models.build(cfg.specs[target], cfg.dsp.size, seed=cfg.train.seed * 1000 + k)
        tcfg = replace(cfg.train, seed=cfg.train.seed * 1000 + 100 + k)
        t0 = time.perf_counter()
        result = train(net, x_tr[i_tr], y_tr, x_va[i_va], y_va, tcfg)
        meta = {
            "best_epoch": result.best_epoch,
            "best_val_loss": result.best_val_loss,
            "epochs": tcfg.epochs,
            "train_items": int(len(i_tr)),
            "val_items": int(len(i_va)),
        }
        checkpoint.save(out / f"{target}.accw", result.net, target, meta)
        (out / f"{target}_history.txt").write_text(result.history_text())
        trained += 1
        print(f"{target}: best epoch {result.best_epoch} val loss {result.best_val_loss:.6g} "
              f"({len(i_tr)} train / {len(i_va)} val, {time.perf_counter() - t0:.1f}s)")
    if failures:
        return EXIT_PARTIAL
    return EXIT_OK if trained == len(TARGETS) else EXIT_PARTIAL


def load_classifier(ckpt_dir, cfg: RunConfig) -> Classifier:
    nets = {}
    for k, mid in enumerate(models.MODEL_IDS):
        path = Path(ckpt_dir) / f"{mid}.accw"
        if not path.exists():
            if mid == "action":
                raise ConfigError(f"{path}: action checkpoint missing")
            log.warning("%s missing; clips routed to %s will fail", path, mid)
            continue
        net = models.build(cfg.specs[mid], cfg.dsp.size)
        try:
            checkpoint.load_into(net, path)
        except checkpoint.CheckpointError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        nets[mid] = net
    return Classifier(nets, TAXONOMY, cfg.dsp)


def _select(items, split: str):
    return items if split == "all" else [it for it in items if it.split == split]


def cmd_eval(args, cfg: RunConfig) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clf = load_classifier(args.checkpoints, cfg)
    items = _select(data.load_manifest(args.manifest), args.split)
    cache = Path(args.cache) if args.cache else out / "cache"
    specs, failures, _ = featurize_items(items, cache, cfg.dsp, args.jobs)
    ok = [i for i, s in enumerate(specs) if s is not None]
    preds: list[Prediction] = []
    if ok:
        x = _stack([specs[i] for i in ok], cfg.dsp)
        t0 = time.perf_counter()
        content, actions, probs, spec_probs = clf.classify_inputs(x)
        per_item = (time.perf_counter() - t0) * 1000.0 / len(ok)
        for j, i in enumerate(ok):
            preds.append(clf.prediction(items[i].path, content[j], actions[j], probs[j], spec_probs[j], per_item))
    with open(out / "predictions.jsonl", "w") as f:
        for p in preds:
            f.write(p.to_json() + "\n")
    labels = [items[i].content_class for i in ok]
    reports = evaluate_predictions([p.content_index for p in preds], labels)
    if not reports:
        log.warning("no ground truth in the selected items; wrote prediction records only")
    else:
        for r in reports.values():
            r.write(out)
        truth_a = [items[i].action_index for i in ok if items[i].labelled]
        pred_a = [p.action_index for p, i in zip(preds, ok) if items[i].labelled]
        action_acc = float(np.mean(np.array(truth_a) == np.array(pred_a)))
        write_summary(out / "summary.txt", reports, {"action accuracy": f"{100.0 * action_acc:.2f}%"})
        print((out / "summary.txt").read_text(), end="")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_baseline(args, cfg: RunConfig) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    items = data.load_manifest(args.manifest)
    cache = Path(args.cache) if args.cache else out / "cache"
    specs, failures, _ = featurize_items(items, cache, cfg.dsp, args.jobs)
    items, specs = _labelled(items, specs)
    fit = [i for i, it in enumerate(items) if it.split == "train"]
    test = [i for i, it in enumerate(items) if it.split == args.split or args.split == "all"]
    if not fit or not test:
        raise ConfigError("baseline needs labelled train items and labelled items in the evaluated split")
    x = _stack(specs, cfg.dsp)
    model = knn_fit(x[fit], [items[i].content_class for i in fit], cfg.knn_k)
    pred = knn_predict_batch(model, x[test])
    reports = evaluate_predictions(list(pred), [items[i].content_class for i in test])
    for r in reports.values():
        r.write(out, stem=f"knn_{r.name}")
    write_summary(out / "knn_summary.txt", reports, {"k": cfg.knn_k})
    print((out / "knn_summary.txt").read_text(), end="")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_predict(args, cfg: RunConfig) -> int:
    clf = load_classifier(args.checkpoints, cfg)
    try:
        clip = read_wav(args.audio)
        pred = clf.classify(clip, clip_path=str(args.audio))
    except Exception as exc:  # noqa: BLE001 - reported with a nonzero exit
        print(f"error: {args.audio}: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    print(pred.to_json())
    return EXIT_OK


def cmd_build_manifest(args, cfg: RunConfig) -> int:
    written, skipped = data.build_manifest(args.root, args.out)
    print(f"{written} items written, {skipped} skipped")
    return EXIT_PARTIAL if skipped else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acc-audio", description="Gated action/content audio classifier")
    p.add_argument("--config", help="INI file with [dsp] [train] [action] [pouring] [shaking] [knn] sections")
    p.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    def common(sp, jobs=True):
        sp.add_argument("--config", dest="sub_config", help=argparse.SUPPRESS)
        sp.add_argument("--print-config", dest="sub_print", action="store_true", help=argparse.SUPPRESS)
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="worker threads for feature extraction")

    sp = sub.add_parser("synth", help="generate the synthetic corpus")
    sp.add_argument("out_dir")
    sp.add_argument("--train", type=int, default=700)
    sp.add_argument("--val", type=int, default=140)
    sp.add_argument("--test", type=int, default=160)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--duration", type=float, default=8.0)
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("featurize", help="compute cached spectrograms for a manifest")
    sp.add_argument("manifest")
    sp.add_argument("out_dir")
    common(sp)
    sp.set_defaults(func=cmd_featurize)

    sp = sub.add_parser("train", help="train the action, pouring and shaking models")
    sp.add_argument("manifest")
    sp.add_argument("out_dir")
    sp.add_argument("--cache", help="spectrogram cache directory (default OUT_DIR/cache)")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batch-size", type=int)
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score trained checkpoints on a manifest split")
    sp.add_argument("manifest")
    sp.add_argument("checkpoints")
    sp.add_argument("out_dir")
    sp.add_argument("--split", default="test", choices=(*data.SPLITS, "all"))
    sp.add_argument("--cache")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("baseline", help="kNN on flattened spectrograms, fitted on the train split")
    sp.add_argument("manifest")
    sp.add_argument("out_dir")
    sp.add_argument("--split", default="test", choices=(*data.SPLITS, "all"))
    sp.add_argument("--k", type=int)
    sp.add_argument("--cache")
    common(sp)
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("predict", help="classify one audio file")
    sp.add_argument("audio")
    sp.add_argument("checkpoints")
    common(sp, jobs=False)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("build-manifest", help="write a manifest for a CCM-style directory tree")
    sp.add_argument("root")
    sp.add_argument("out")
    common(sp, jobs=False)
    sp.set_defaults(func=cmd_build_manifest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_run_config(getattr(args, "sub_config", None) or args.config), args)
        if args.print_config or getattr(args, "sub_print", False):
            print(cfg.to_ini(), end="")
            return EXIT_OK
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_CONFIG
        return args.func(args, cfg)
    except (ConfigError, data.ManifestError, models.SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
