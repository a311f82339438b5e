"""Command-line surface tying the pipeline together.

Subcommands: extract, build-baseline, gate, drift, sweep, train-head, split.
Exit codes partition outcomes: 0 clean, 1 detection (anomalies or drift
flags), 2 usage or configuration errors, 3 data errors. Detection is a
result, not a failure, so shell pipelines can branch on it.

A flat key-value config file (``key = value``, ``#`` comments) mirrors
PipelineConfig; flags override file values. Report outputs embed the fully
resolved config so every figure is reproducible from its own file.
"""

import argparse
import os
import sys
from dataclasses import asdict, replace

from . import store
from .core import ConfigError, DataError, PipelineConfig
from .extract import ExtractConfig, extract_batch, extract_fingerprint, load_embeddings
from .head import TrainConfig, train_head
from .noiselab import NOISE_KINDS, sensitivity_sweep
from .sketchlib import GateConfig, QuantConfig, SketchConfig, build_library, gate_check
from .stats import StatsConfig, drift_report


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="driftsketch",
        description="MinHash-sketch baselines, anomaly gating and drift scoring",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--seed", type=int, default=None, help="run seed for stochastic steps")
        p.add_argument("--config", metavar="PATH", help="flat key=value config file")
        p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
        p.add_argument("--j-alpha", type=float, default=None, help="gate threshold override")
        p.add_argument("--ks-alpha", type=float, default=None, help="KS significance override")
        if needs_out:
            p.add_argument("--out", required=True, metavar="PATH")

    p = sub.add_parser("extract", help="images in, embedding file out")
    p.add_argument("inputs", nargs="+", metavar="IMAGE_OR_DIR")
    common(p)

    p = sub.add_parser("build-baseline", help="embeddings or image dir in, library out")
    p.add_argument("input", metavar="INPUT")
    common(p)

    p = sub.add_parser("gate", help="check items against a baseline library")
    p.add_argument("input", metavar="INPUT")
    p.add_argument("--library", required=True, metavar="PATH")
    common(p, needs_out=False)
    p.add_argument("--out", default="-", metavar="PATH", help="verdicts jsonl ('-' = stdout)")

    p = sub.add_parser("drift", help="score ordered periods against a baseline")
    p.add_argument("baseline", metavar="BASELINE")
    p.add_argument("periods", nargs="+", metavar="PERIOD")
    common(p)

    p = sub.add_parser("sweep", help="noise-sensitivity ladder")
    p.add_argument("baseline", metavar="BASELINE_DIR")
    p.add_argument("test", metavar="TEST_DIR")
    p.add_argument("--noise", required=True, choices=[k.replace("_", "-") for k in NOISE_KINDS])
    p.add_argument("--levels", required=True, help="comma-separated increasing levels")
    common(p)

    p = sub.add_parser("train-head", help="train the sigmoid head on labeled embeddings")
    p.add_argument("embeddings", metavar="EMBEDDINGS")
    p.add_argument("--labels", required=True, metavar="PATH", help="lines of '<id> <0|1>'")
    p.add_argument("--curve", metavar="PATH", help="write per-epoch mean loss as CSV")
    common(p)

    p = sub.add_parser("split", help="assign ids to balanced groups")
    p.add_argument("ids", metavar="IDS_FILE", help="one id per line")
    p.add_argument("--groups", type=int, default=7)
    common(p)

    return parser


# config-file keys -> (dataclass section, field, type)
_BOOL = {"true": True, "false": False, "1": True, "0": False}


def _parse_value(text, target_type, key):
    text = text.strip()
    try:
        if target_type is bool:
            return _BOOL[text.lower()]
        if target_type is float and text.lower() == "none":
            return None
        return target_type(text)
    except (ValueError, KeyError):
        raise ConfigError(f"config-invalid: cannot parse {key} = {text!r}")


_SECTIONS = {
    "extract": (ExtractConfig, {"grid": int, "hist_bins": int, "projection_dim": int,
                                "projection_seed": int, "l2_normalize": bool}),
    "quant": (QuantConfig, {"bin_width": float, "origin": float,
                            "clamp_lo": float, "clamp_hi": float}),
    "sketch": (SketchConfig, {"k": int, "hash_seed": int}),
    "gate": (GateConfig, {"j_alpha": float, "aggregation": str}),
    "stats": (StatsConfig, {"ks_alpha": float, "cosine_mode": str,
                            "pairwise_cap": int, "seed": int}),
    "train": (TrainConfig, {"lr": float, "beta1": float, "beta2": float, "epsilon": float,
                            "epochs": int, "batch_size": int, "bias_correction": bool,
                            "seed": int}),
}


def _read_config_file(path):
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"config-invalid: {path}:{lineno}: expected key = value")
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"config-invalid: cannot read {path}: {exc}")
    return values


def resolve_config(args):
    """Defaults, overridden by the config file, overridden by flags.

    Returns (PipelineConfig, TrainConfig, run_seed). The run seed is the
    --seed flag when given, else the ``seed`` config key, else 0.
    """
    raw = _read_config_file(args.config) if args.config else {}
    sections = {name: {} for name in _SECTIONS}
    file_seed = None
    for key, text in raw.items():
        if key == "seed":
            file_seed = _parse_value(text, int, key)
            continue
        section, _, field_name = key.partition(".")
        if section not in _SECTIONS or not field_name:
            raise ConfigError(f"config-invalid: unknown config key {key!r}")
        _, fields = _SECTIONS[section]
        if field_name not in fields:
            raise ConfigError(f"config-invalid: unknown config key {key!r}")
        sections[section][field_name] = _parse_value(text, fields[field_name], key)
    if args.seed is not None:
        run_seed = args.seed
    elif file_seed is not None:
        run_seed = file_seed
    else:
        run_seed = 0

    built = {name: _SECTIONS[name][0](**fields) for name, fields in sections.items()}
    if getattr(args, "j_alpha", None) is not None:
        built["gate"] = replace(built["gate"], j_alpha=args.j_alpha)
    if getattr(args, "ks_alpha", None) is not None:
        built["stats"] = replace(built["stats"], ks_alpha=args.ks_alpha)

    pipeline = PipelineConfig(
        extract=built["extract"],
        quant=built["quant"],
        sketch=built["sketch"],
        gate=built["gate"],
        stats=built["stats"],
    )
    pipeline.validate()
    train_cfg = built["train"]
    train_cfg.validate()
    return pipeline, train_cfg, run_seed


def _classify_input(path):
    if os.path.isdir(path):
        return "images"
    try:
        with open(path, "rb") as fh:
            head = fh.read(32)
    except OSError as exc:
        raise DataError(f"io-error: cannot read {path}: {exc}")
    if head[:2] in (b"P5", b"P6"):
        return "image"
    if head.startswith(b"driftsketch-emb"):
        return "embeddings"
    raise DataError(f"unsupported-format: {path} is neither an image nor an embedding file")


def _load_features(path, extract_cfg):
    """Feature vectors from an image dir, a single image, or an embedding file.

    Returns (features, extracted_here); the flag says whether the built-in
    extractor produced them (and its fingerprint therefore applies).
    """
    kind = _classify_input(path)
    if kind == "embeddings":
        return load_embeddings(path), False
    if kind == "image":
        images, names = [store.load_image(path)], [os.path.basename(path)]
    else:
        images, names = store.load_images_dir(path)
    return extract_batch(images, extract_cfg, names), True


def _config_record(pipeline, run_seed):
    record = pipeline.to_dict()
    record["seed"] = run_seed
    return record


def _echo_config(record):
    print("config: " + store._jdump(record), file=sys.stderr)


def _cmd_extract(args):
    pipeline, _, run_seed = resolve_config(args)
    images, names = [], []
    for inp in args.inputs:
        kind = _classify_input(inp)
        if kind == "image":
            images.append(store.load_image(inp))
            names.append(os.path.basename(inp))
        elif kind == "images":
            imgs, ids = store.load_images_dir(inp)
            images.extend(imgs)
            names.extend(ids)
        else:
            raise DataError(f"unsupported-format: extract expects images, got {inp}")
    if len(set(names)) != len(names):
        raise DataError("duplicate-source-id: input basenames collide")
    features = extract_batch(images, pipeline.extract, names)
    store.write_embeddings(features, args.out)
    _echo_config(_config_record(pipeline, run_seed))
    return 0


def _cmd_build_baseline(args):
    pipeline, _, run_seed = resolve_config(args)
    features, extracted = _load_features(args.input, pipeline.extract)
    fingerprint = extract_fingerprint(pipeline.extract) if extracted else ""
    library = build_library(features, pipeline.quant, pipeline.sketch, fingerprint)
    store.write_library(library, args.out)
    _echo_config(_config_record(pipeline, run_seed))
    return 0


def _cmd_gate(args):
    pipeline, _, run_seed = resolve_config(args)
    library = store.read_library(args.library)
    features, extracted = _load_features(args.input, pipeline.extract)
    fingerprint = extract_fingerprint(pipeline.extract) if extracted else None
    results = [gate_check(library, v, pipeline.gate, fingerprint) for v in features]

    header = {
        "kind": "gate_report",
        "schema_version": 1,
        "library": os.path.basename(args.library),
        "config": _config_record(pipeline, run_seed),
    }
    lines = [store._jdump(header)]
    for r in results:
        lines.append(
            store._jdump({"source_id": r.source_id, "score": r.score, "verdict": r.verdict})
        )
    body = ("\n".join(lines) + "\n").encode("utf-8")
    trailer = store._jdump({"kind": "checksum", "blake2b": store._digest(body)}).encode()
    payload = body + trailer + b"\n"
    if args.out == "-":
        sys.stdout.buffer.write(payload)
        sys.stdout.flush()
    else:
        store.atomic_write_bytes(args.out, payload)
    return 1 if any(r.anomalous for r in results) else 0


def _cmd_drift(args):
    pipeline, _, run_seed = resolve_config(args)
    base_feats, base_extracted = _load_features(args.baseline, pipeline.extract)
    fingerprint = extract_fingerprint(pipeline.extract) if base_extracted else ""
    library = build_library(base_feats, pipeline.quant, pipeline.sketch, fingerprint)

    periods = []
    gate_counts = []
    for path in args.periods:
        feats, extracted = _load_features(path, pipeline.extract)
        check_fp = extract_fingerprint(pipeline.extract) if extracted else None
        flags = sum(
            gate_check(library, v, pipeline.gate, check_fp).anomalous for v in feats
        )
        periods.append((_period_id(path), feats))
        gate_counts.append(flags)

    report = drift_report(
        base_feats,
        periods,
        pipeline.stats,
        gate_flag_counts=gate_counts,
        baseline_id=_period_id(args.baseline),
    )
    store.write_report(report, args.format, args.out, config=_config_record(pipeline, run_seed))
    return 1 if any(p.drift_flag for p in report.periods) else 0


def _period_id(path):
    base = os.path.basename(os.path.normpath(path))
    return base or path


def _cmd_sweep(args):
    pipeline, _, run_seed = resolve_config(args)
    kind = args.noise.replace("-", "_")
    try:
        levels = [float(x) for x in args.levels.split(",") if x.strip() != ""]
    except ValueError:
        raise ConfigError(f"config-invalid: unparseable --levels {args.levels!r}")
    baseline_images, _ = store.load_images_dir(args.baseline)
    test_images, _ = store.load_images_dir(args.test)
    report = sensitivity_sweep(
        baseline_images, test_images, kind, levels, pipeline, seed=run_seed
    )
    store.write_report(report, args.format, args.out, config=_config_record(pipeline, run_seed))
    return 0


def _read_labels(path):
    labels = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                fields = line.split()
                if len(fields) != 2 or fields[1] not in ("0", "1"):
                    raise DataError(f"malformed-file(line {lineno}): expected '<id> <0|1>'")
                labels[fields[0]] = int(fields[1])
    except OSError as exc:
        raise DataError(f"io-error: cannot read {path}: {exc}")
    return labels


def _cmd_train_head(args):
    _, train_cfg, run_seed = resolve_config(args)
    if args.seed is not None or train_cfg.seed == 0:
        train_cfg = replace(train_cfg, seed=run_seed)
    features = load_embeddings(args.embeddings)
    labels = _read_labels(args.labels)
    missing = [v.source_id for v in features if v.source_id not in labels]
    if missing:
        raise DataError(f"label-missing: no label for {missing[0]!r}")
    data = [(v, labels[v.source_id]) for v in features]
    model, curve = train_head(data, train_cfg)
    store.save_model(model, args.out, train_config=train_cfg)
    if args.curve:
        lines = ["epoch,mean_loss"]
        lines += [f"{i},{store._format_float(loss)}" for i, loss in enumerate(curve)]
        store.atomic_write_bytes(args.curve, ("\n".join(lines) + "\n").encode("utf-8"))
    _echo_config({"train": asdict(train_cfg)})
    return 0


def _cmd_split(args):
    _, _, run_seed = resolve_config(args)
    try:
        with open(args.ids, "r", encoding="utf-8") as fh:
            ids = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"io-error: cannot read {args.ids}: {exc}")
    plan = store.split_dataset(ids, args.groups, run_seed)
    store.save_split(plan, args.out)
    return 0


_COMMANDS = {
    "extract": _cmd_extract,
    "build-baseline": _cmd_build_baseline,
    "gate": _cmd_gate,
    "drift": _cmd_drift,
    "sweep": _cmd_sweep,
    "train-head": _cmd_train_head,
    "split": _cmd_split,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses exit code 2 for usage errors
        return int(exc.code) if exc.code is not None else 0
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"driftsketch: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"driftsketch: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"driftsketch: io-error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
