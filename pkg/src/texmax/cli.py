"""Command line: texmax {make-backbone,make-synthetic,train,invert,describe,cloud,gradcheck}."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import cloudviz, data, diagnostics
from .backbone import FILTER_KINDS, forward_taps, load_backbone, make_filter_bank, save_backbone
from .descriptor import descriptor_forward
from .errors import ConfigError, DataError, TexmaxError
from .heads import (
    SCHEDULES,
    PhraseModel,
    SoftmaxHead,
    TrainConfig,
    average_precision,
    load_head,
    phrase_proba,
    predict_proba,
    save_head,
    score_phrases,
    train_phrases,
    train_softmax,
)
from .inversion import INITS, InversionConfig, oriented_energy_ratio, synthesize_maximal_image, tv_norm
from .ppm import atomic_write, read_ppm, write_ppm

log = logging.getLogger("texmax")


def thread_count() -> int:
    raw = os.environ.get("TEXMAX_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"TEXMAX_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("TEXMAX_THREADS must be >= 1")
    return n


def parallel_map(fn, items) -> list:
    """Ordered map over a thread pool capped by TEXMAX_THREADS."""
    items = list(items)
    workers = min(thread_count(), len(items)) or 1
    if workers == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, ensure_ascii=False) + "\n"


def _input_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise _UsageError(f"input file {p} does not exist")
    return p


class _UsageError(TexmaxError):
    exit_code = 2


def _parse_canvas(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"canvas must look like WIDTHxHEIGHT, got {text!r}") from exc


def _describe_images(manifest, backbone, centered=False) -> list:
    def one(rel):
        return descriptor_forward(forward_taps(manifest.load_image(rel), backbone), centered)

    return parallel_map(one, [rel for rel, _ in manifest.records])


# -- subcommands --------------------------------------------------------------


def cmd_make_backbone(args) -> int:
    channels = tuple(int(c) for c in args.channels.split(","))
    spec = make_filter_bank(args.kind, channels=channels, seed=args.seed)
    save_backbone(spec, args.out)
    log.info("wrote %s (%d layers, taps %s)", args.out, len(spec.layers), list(spec.taps))
    return 0


def cmd_make_synthetic(args) -> int:
    kinds = tuple(k.strip() for k in args.kind_set.split(",") if k.strip())
    man = data.make_synthetic(args.out, kinds, args.count, args.size, args.noise, args.seed)
    log.info("wrote %d images to %s", len(man.records), args.out)
    return 0


def _accuracy(descs, labels, head: SoftmaxHead) -> tuple[list, float]:
    probs = [predict_proba(d, head) for d in descs]
    per_tap = [
        float(np.mean([np.argmax(p[i]) == y for p, y in zip(probs, labels)]))
        for i in range(len(head.weights))
    ]
    ens = float(np.mean([np.argmax(np.mean(p, axis=0)) == y for p, y in zip(probs, labels)]))
    return per_tap, ens


def _phrase_map(descs, manifest, model: PhraseModel) -> dict:
    sets = manifest.phrase_sets()
    scores = np.array([phrase_proba(d, model) for d in descs])
    aps = {}
    for j, phrase in enumerate(model.lexicon):
        rel = np.array([phrase in s for s in sets])
        if rel.any():
            aps[phrase] = average_precision(scores[:, j], rel)
    return aps


def cmd_train(args) -> int:
    root = Path(args.data)
    labels = root / "labels.csv" if root.is_dir() else _input_file(args.data)
    phrases = labels.parent / "phrases.csv"
    manifest = data.load_manifest(labels, phrases if phrases.is_file() else None)
    backbone = load_backbone(_input_file(args.backbone))
    cfg = TrainConfig(args.lr, args.epochs, args.batch_size, args.weight_decay, args.seed, args.schedule)

    big = max(manifest.counts.values())
    pool = data.subsample(manifest, per_class=big, top_classes=args.top_classes, seed=args.seed)
    train, test = data.split(pool, args.test_fraction, seed=args.seed)
    train = data.subsample(train, per_class=args.per_class, top_classes=args.top_classes, seed=args.seed)
    classes = pool.classes
    log.info("%d classes, %d train / %d test images", len(classes), len(train.records), len(test.records))

    d_train = _describe_images(train, backbone, args.centered)
    y_train = train.label_indices(classes)
    head, trace = train_softmax(d_train, y_train, cfg, classes)
    out = Path(args.out)
    save_head(head, out / "heads.txhd")

    report = {
        "classes": list(classes),
        "train_images": len(train.records),
        "test_images": len(test.records),
        "train_config": {
            "lr": cfg.lr,
            "schedule": cfg.schedule,
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "weight_decay": cfg.weight_decay,
            "seed": cfg.seed,
        },
        "final_train_loss": [t[-1] for t in trace],
    }
    per_tap, ens = _accuracy(d_train, y_train, head)
    report["train_accuracy"] = {"per_tap": per_tap, "ensemble": ens}
    d_test = _describe_images(test, backbone, args.centered) if test.records else []
    if d_test:
        per_tap, ens = _accuracy(d_test, test.label_indices(classes), head)
        report["test_accuracy"] = {"per_tap": per_tap, "ensemble": ens}

    if manifest.phrases:
        sets = train.phrase_sets()
        model = train_phrases(d_train, sets, cfg)
        save_head(model, out / "phrases.txhd")
        report["phrases"] = list(model.lexicon)
        if d_test:
            aps = _phrase_map(d_test, test, model)
            report["test_phrase_ap"] = aps
            report["test_phrase_map"] = float(np.mean(list(aps.values())))
    atomic_write(out / "report.json", dump_json(report))
    log.info("test accuracy: %s", report.get("test_accuracy"))
    return 0


def _resolve_class(token: str, head: SoftmaxHead) -> int:
    if token in head.class_names:
        return head.class_names.index(token)
    try:
        idx = int(token)
    except ValueError:
        raise ConfigError(f"unknown class {token!r}; known: {', '.join(head.class_names)}") from None
    if not 0 <= idx < head.num_classes:
        raise ConfigError(f"class index {idx} out of range")
    return idx


def cmd_invert(args) -> int:
    head = load_head(_input_file(args.heads))
    if not isinstance(head, SoftmaxHead):
        raise ConfigError(f"{args.heads} holds a phrase model, not softmax heads")
    backbone = load_backbone(_input_file(args.backbone))
    targets = [_resolve_class(c, head) for c in (args.cls or head.class_names)]
    out = Path(args.out)

    def run(c):
        cfg = InversionConfig(
            target_class=c,
            gamma=args.gamma,
            tv_beta=args.beta,
            step_size=args.step_size,
            max_iters=args.iters,
            init=args.init,
            seed=args.seed,
            ftol=args.ftol,
            size=args.size,
        )
        x, trace = synthesize_maximal_image(cfg, head, backbone)
        name = head.class_names[c]
        write_ppm(out / f"maximal_{name}.ppm", x)
        atomic_write(out / f"trace_{name}.csv", trace.to_csv())
        probs = predict_proba(descriptor_forward(forward_taps(x, backbone)), head)
        summary = {
            "class": name,
            "iterations": trace.records[-1][0],
            "objective": trace.records[-1][1],
            "stalled": trace.stalled,
            "converged": trace.converged,
            "target_probability_per_tap": [float(p[c]) for p in probs],
            "tv": tv_norm(x, args.beta)[0],
            "oriented_energy_ratio": oriented_energy_ratio(x),
        }
        atomic_write(out / f"maximal_{name}.json", dump_json(summary))
        log.info("%s: objective %.6g after %d iterations", name, summary["objective"], summary["iterations"])
        return summary

    summaries = parallel_map(run, targets)
    return 1 if any(s["stalled"] for s in summaries) and args.fail_on_stall else 0


def cmd_describe(args) -> int:
    model = load_head(_input_file(args.phrases_model))
    if not isinstance(model, PhraseModel):
        raise ConfigError(f"{args.phrases_model} holds softmax heads, not a phrase model")
    if args.image:
        if not args.backbone:
            raise _UsageError("--image needs --backbone")
        backbone = load_backbone(_input_file(args.backbone))
        desc = descriptor_forward(forward_taps(read_ppm(_input_file(args.image)), backbone))
    else:
        try:
            desc = np.load(_input_file(args.descriptor), allow_pickle=False).astype(np.float64).reshape(-1)
        except (ValueError, OSError) as exc:
            raise DataError(f"{args.descriptor}: not a numeric .npy array ({exc})") from exc
    ranked = score_phrases(desc, model, args.k)
    text = dump_json([{"phrase": p, "probability": q} for p, q in ranked])
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_cloud(args) -> int:
    try:
        doc = json.loads(_input_file(args.scores).read_text(encoding="utf-8"))
        scores = [(d["phrase"], d["probability"]) for d in doc]
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{args.scores}: expected a list of {{phrase, probability}} objects") from exc
    layout = cloudviz.layout_cloud(scores, args.k, args.canvas, args.seed)
    from .ppm import encode_ppm_u8

    atomic_write(args.out, encode_ppm_u8(cloudviz.render_cloud(layout)))
    if args.layout:
        atomic_write(args.layout, layout.to_json())
    if layout.dropped:
        log.warning("dropped %d phrases that did not fit: %s", len(layout.dropped), layout.dropped)
    return 0


def cmd_gradcheck(args) -> int:
    backbone = load_backbone(_input_file(args.backbone)) if args.backbone else None
    results = diagnostics.run_gradchecks(args.seed, args.seeds, args.samples, backbone)
    print(diagnostics.format_table(results))
    return 0 if all(r.ok for r in results) else 1


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="texmax", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-backbone", help="write a TXBB filter-bank backbone")
    s.add_argument("--kind", choices=FILTER_KINDS, default="gabor")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--channels", default="8,16,16,32", help="channels per block")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_backbone)

    s = sub.add_parser("make-synthetic", help="write a synthetic texture dataset")
    s.add_argument("--kind-set", default=",".join(data.SYNTHETIC_KINDS))
    s.add_argument("--count", type=int, default=125, help="images per kind")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_synthetic)

    s = sub.add_parser("train", help="train per-tap softmax heads (and phrase scorers)")
    s.add_argument("--data", required=True, help="dataset dir with labels.csv [phrases.csv]")
    s.add_argument("--backbone", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--per-class", type=int, default=100)
    s.add_argument("--top-classes", type=int, default=200)
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--lr", type=float, default=TrainConfig.lr)
    s.add_argument("--schedule", choices=SCHEDULES, default=TrainConfig.schedule, help="learning-rate schedule")
    s.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    s.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    s.add_argument("--weight-decay", type=float, default=TrainConfig.weight_decay)
    s.add_argument("--centered", action="store_true", help="mean-center before pooling")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("invert", help="synthesize maximal images")
    s.add_argument("--heads", required=True)
    s.add_argument("--backbone", required=True)
    s.add_argument("--class", dest="cls", action="append", help="class name or index (repeatable; default all)")
    s.add_argument("--gamma", type=float, default=InversionConfig.gamma)
    s.add_argument("--beta", type=float, default=InversionConfig.tv_beta)
    s.add_argument("--iters", type=int, default=InversionConfig.max_iters)
    s.add_argument("--size", type=int, default=InversionConfig.size)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--step-size", type=float, default=InversionConfig.step_size)
    s.add_argument("--ftol", type=float, default=InversionConfig.ftol)
    s.add_argument("--init", choices=INITS, default=InversionConfig.init)
    s.add_argument("--fail-on-stall", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_invert)

    s = sub.add_parser("describe", help="rank attribute phrases for an image")
    s.add_argument("--phrases-model", required=True)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--image")
    src.add_argument("--descriptor", help=".npy file with the concatenated descriptor")
    s.add_argument("--backbone")
    s.add_argument("--k", type=int, default=cloudviz.DEFAULT_K)
    s.add_argument("--out")
    s.set_defaults(func=cmd_describe)

    s = sub.add_parser("cloud", help="render a phrase cloud")
    s.add_argument("--scores", required=True)
    s.add_argument("--k", type=int, default=cloudviz.DEFAULT_K)
    s.add_argument("--canvas", type=_parse_canvas, default=cloudviz.DEFAULT_CANVAS)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--layout", help="also write the layout as JSON")
    s.set_defaults(func=cmd_cloud)

    s = sub.add_parser("gradcheck", help="finite-difference check of all backward passes")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--samples", type=int, default=128)
    s.add_argument("--backbone")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        thread_count()  # reject a malformed TEXMAX_THREADS before doing any work
        return args.func(args)
    except TexmaxError as exc:
        print(f"texmax: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
