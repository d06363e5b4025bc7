"""Command-line entry point.

Subcommands: extract (pcap -> dataset), train, eval, sweep, latents. Every
random choice descends from --seed, so identical invocations produce
byte-identical output files. Exit codes: 0 success, 1 I/O failure, 2 invalid
input or configuration.
"""

from __future__ import annotations

import argparse
import json
import sys

from .earliness import PrefixSpec
from .features import (
    DatasetFormatError, FLOWS_HEADER, extract_mts, read_dataset, write_dataset,
)
from .flows import FlowKeyError, FlowTable, LabelRuleError, join_labels, load_label_rules
from .model import MdtConfig, MdtModel, export_latents, load_checkpoint, save_checkpoint
from .pcap import CaptureError, Transport, open_capture
from .training import (
    ExternalFormatError, Hyperparams, SweepPoint, dataset_classes, evaluate,
    load_external_mts, stratified_split, sweep, sweep_rows, train,
    write_history_csv, write_sweep_csv,
)

MODEL_KEYS = {"d_model", "n_heads", "n_blocks", "d_ff", "max_len", "dropout",
              "use_frequency_heads"}
TRAINING_KEYS = {"learning_rate", "batch_size", "max_epochs", "patience"}


class CliError(Exception):
    """Invalid input or configuration (exit code 2)."""


def _load_config_file(path):
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    model_kwargs = dict(raw.get("model", {}))
    train_kwargs = dict(raw.get("training", {}))
    unknown = (set(raw) - {"model", "training"}) | \
        (set(model_kwargs) - MODEL_KEYS) | (set(train_kwargs) - TRAINING_KEYS)
    if unknown:
        raise CliError(f"{path}: unknown config keys {sorted(unknown)}")
    return model_kwargs, train_kwargs


def _load_samples(args):
    """Dispatch on the flows.csv header: our extractor's layout round-trips
    through read_dataset, anything else goes through the long-format loader."""
    import csv
    import os

    flows_path = os.path.join(args.data, "flows.csv")
    if not os.path.exists(flows_path):
        raise CliError(f"{flows_path}: not found")
    with open(flows_path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    expect = getattr(args, "expect", None)
    if header == FLOWS_HEADER and expect is None:
        return read_dataset(args.data)
    return load_external_mts(args.data, expect=expect)


def _prefix_spec(args) -> PrefixSpec:
    if getattr(args, "prefix_packets", None) is not None:
        return PrefixSpec.by_count(args.prefix_packets)
    if getattr(args, "prefix_duration", None) is not None:
        return PrefixSpec.by_duration(args.prefix_duration)
    raise CliError("one of --prefix-packets / --prefix-duration is required")


def _auto_max_len(samples, spec, requested):
    if requested is not None:
        return requested
    from .earliness import take_prefix
    return max(take_prefix(s, spec)[0].length for s in samples)


def cmd_extract(args) -> int:
    rules = load_label_rules(args.labels) if args.labels else []
    all_flows = []
    packets = 0
    skipped = 0
    for path in args.pcap:
        table = FlowTable(window_secs=args.window_secs)
        with open_capture(path) as reader:
            for record in reader:
                if record.transport is Transport.OTHER:
                    skipped += 1
                    continue
                table.assign_packet(record)
                packets += 1
            skipped += reader.frames_skipped
        all_flows.extend(table.flush())
    all_flows.sort(key=lambda f: (f.start_ts, f.key.endpoint_a, f.key.endpoint_b,
                                  f.key.transport.value, f.key.window_index))
    join_labels(all_flows, rules)
    samples = [extract_mts(f) for f in all_flows]
    write_dataset(samples, args.out)
    print(f"flows={len(samples)} packets={packets} skipped={skipped}")
    return 0


def _build_model_and_hp(args, samples, spec):
    model_kwargs, train_kwargs = _load_config_file(args.config) if args.config else ({}, {})
    widths = {s.width for s in samples}
    if len(widths) != 1:
        raise CliError(f"dataset mixes feature widths: {sorted(widths)}")
    classes = dataset_classes(samples)
    model_kwargs.setdefault("max_len", _auto_max_len(samples, spec, None))
    config = MdtConfig(d_in=widths.pop(), n_classes=len(classes), **model_kwargs)
    hp = Hyperparams(**train_kwargs)
    return config, hp, classes


def cmd_train(args) -> int:
    samples = _load_samples(args)
    if not samples:
        raise CliError("dataset is empty")
    spec = _prefix_spec(args)
    config, hp, _classes = _build_model_and_hp(args, samples, spec)
    model = MdtModel(config, seed=args.seed)
    result = train(model, samples, spec, hp, seed=args.seed, verbose=args.verbose)
    model.classes = result.classes
    save_checkpoint(model, args.out)
    if args.history:
        write_history_csv(result.history, args.history)
    best = max((h.val_macro_f1 for h in result.history), default=0.0)
    print(f"epochs={len(result.history)} best_val_macro_f1={best:.4f} ckpt={args.out}")
    return 0


def _select_split(samples, which, seed):
    if which == "all":
        return samples
    train_ids, val_ids, test_ids = stratified_split(samples, seed)
    chosen = {"train": train_ids, "val": val_ids, "test": test_ids}[which]
    return [samples[i] for i in chosen]


def cmd_eval(args) -> int:
    samples = _load_samples(args)
    model = load_checkpoint(args.ckpt)
    spec = _prefix_spec(args)
    classes = model.classes or dataset_classes(samples)
    if len(classes) != model.config.n_classes:
        raise CliError("checkpoint class count does not match the dataset")
    subset = _select_split(samples, args.split, args.seed)
    metrics, mean_e, mean_de = evaluate(model, subset, spec, classes)
    point = SweepPoint(spec=spec, mean_earliness=mean_e,
                       mean_duration_earliness=mean_de, metrics=metrics)
    rows = sweep_rows([point])
    out = "\n".join(",".join(r) for r in rows) + "\n"
    sys.stdout.write(out)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(out)
    return 0


def cmd_sweep(args) -> int:
    samples = _load_samples(args)
    if not samples:
        raise CliError("dataset is empty")
    try:
        values = [int(v) if args.mode == "packets" else float(v)
                  for v in args.grid.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(f"bad grid: {exc}") from exc
    if not values:
        raise CliError("empty sweep grid")
    probe_spec = (PrefixSpec.by_count(max(values)) if args.mode == "packets"
                  else PrefixSpec.by_duration(max(values)))
    config, hp, _ = _build_model_and_hp(args, samples, probe_spec)
    points = sweep(config, samples, args.mode, values, hp, seed=args.seed, jobs=args.jobs)
    rows = sweep_rows(points)
    out = "\n".join(",".join(r) for r in rows) + "\n"
    sys.stdout.write(out)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(out)
    return 0


def cmd_latents(args) -> int:
    samples = _load_samples(args)
    model = load_checkpoint(args.ckpt)
    spec = _prefix_spec(args)
    export_latents(model, samples, spec, args.out)
    print(f"wrote {args.out} rows={len(samples)} width={model.config.d_model}")
    return 0


def _add_prefix_options(parser):
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--prefix-packets", type=int, metavar="L",
                       help="classify on the first L packets")
    group.add_argument("--prefix-duration", type=float, metavar="T",
                       help="classify on packets within the first T seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="earlyflow",
        description="Flow time-series extraction and early classification")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="parse pcap files into a flow dataset")
    p.add_argument("--pcap", action="append", required=True, metavar="PATH",
                   help="capture file (repeatable)")
    p.add_argument("--labels", metavar="PATH",
                   help="label rules CSV; omitted = everything BENIGN")
    p.add_argument("--window-secs", type=float, default=120.0,
                   help="flow window in seconds (default 120)")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a model on flow prefixes")
    p.add_argument("--data", required=True, metavar="DIR")
    _add_prefix_options(p)
    p.add_argument("--config", metavar="JSON", help="model/training overrides")
    p.add_argument("--out", required=True, metavar="CKPT")
    p.add_argument("--history", metavar="CSV", help="write per-epoch history")
    p.add_argument("--expect", choices=["ecg", "wafer"],
                   help="validate external dataset shape")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--ckpt", required=True, metavar="PATH")
    _add_prefix_options(p)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    p.add_argument("--expect", choices=["ecg", "wafer"])
    p.add_argument("--out", metavar="CSV")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train/evaluate across a prefix grid")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--mode", choices=["packets", "duration"], required=True)
    p.add_argument("--grid", required=True, metavar="CSVLIST",
                   help="comma-separated prefix sizes, e.g. 2,4,8,16")
    p.add_argument("--config", metavar="JSON")
    p.add_argument("--expect", choices=["ecg", "wafer"])
    p.add_argument("--out", metavar="CSV")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("latents", help="export per-sample latent vectors")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--ckpt", required=True, metavar="PATH")
    _add_prefix_options(p)
    p.add_argument("--expect", choices=["ecg", "wafer"])
    p.add_argument("--out", required=True, metavar="CSV")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_latents)

    return parser


INVALID_INPUT_ERRORS = (
    CliError, CaptureError, FlowKeyError, LabelRuleError, DatasetFormatError,
    ExternalFormatError, ValueError, json.JSONDecodeError,
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except INVALID_INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
