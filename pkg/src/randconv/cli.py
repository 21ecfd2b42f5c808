"""``randconv`` command-line front end.

Subcommands: augment, bounds, simulate, gen-data, train. Exit codes are
0 on success, 1 for data errors, 2 for usage errors and 3 when training
diverges.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .augment import RandConvConfig, augment_batch
from .image import (
    ImageError,
    LabeledDataset,
    compute_whitening,
    list_images,
    load_dataset,
    load_image,
    save_dataset,
    save_image,
    scalar_whitening,
    whiten,
)
from .shapes import DOMAINS, ShapeDatasetSpec, generate_dataset
from .theory import BoundParams, DegenerateDataError, simulate_ratio_bounds, theorem1_bounds
from .train import (
    TrainConfig,
    TrainingDiverged,
    baseline_config,
    make_shape_domains,
    metrics_csv,
    paper_defaults,
    train,
    whiten_domains,
)

EXIT_DATA = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3
DEFAULT_OUT = "randconv_out"

log = logging.getLogger("randconv")


class DataError(Exception):
    pass


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in str(text).replace(" ", "").split(",") if t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(t for t in str(text).replace(" ", "").split(",") if t)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def default_threads() -> int:
    env = os.environ.get("RANDCONV_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed for every random stream")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: $RANDCONV_THREADS or all cores)")
    common.add_argument("--out", default=None, help="output directory")

    parser = argparse.ArgumentParser(prog="randconv", description="Random-convolution augmentation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", parents=[common], help="write augmented previews of images")
    p.add_argument("input", help="PNG file or directory of PNGs")
    p.add_argument("--mode", choices=("img", "mix"), default="img")
    p.add_argument("--kpool", type=_int_list, default=(1, 3, 5, 7), help="filter sizes, e.g. 1,3,5,7")
    p.add_argument("--p", type=float, default=0.5, help="probability of keeping the original (img mode)")
    p.add_argument("--samples", type=int, default=3)
    p.add_argument("--alpha", type=float, default=None, help="fix the mix coefficient (mix mode)")
    p.add_argument("--share-filters", action="store_true", help="one filter draw per sample index for all images")

    p = sub.add_parser("bounds", parents=[common], help="closed-form distance-ratio bounds")
    p.add_argument("--m", type=int, default=3, help="projection output dimension")
    p.add_argument("--n", type=int, default=1000, help="number of points")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=0.1)

    p = sub.add_parser("simulate", parents=[common], help="empirical central-80%% ratio band on images")
    p.add_argument("input", help="PNG file or directory of PNGs")
    p.add_argument("--patches", type=int, default=1000, help="patches per image (N)")
    p.add_argument("--patch-size", type=int, default=3)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=0.1)

    p = sub.add_parser("gen-data", parents=[common], help="generate the synthetic shapes dataset")
    p.add_argument("--domains", type=_str_list, default=DOMAINS)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--image-size", type=int, default=32)

    p = sub.add_parser("train", parents=[common], help="train baseline and/or RandConv classifiers")
    p.add_argument("--config", default=None, help="key=value file; flags override it")
    p.add_argument("--preset", choices=("paper-defaults",), default=None)
    p.add_argument("--which", choices=("both", "baseline", "randconv"), default="both")
    p.add_argument("--mode", choices=("img", "mix"), default="img")
    p.add_argument("--kpool", type=_int_list, default=(1, 3, 5, 7))
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--lambda", dest="lam", type=float, default=10.0, help="consistency weight")
    p.add_argument("--samples", type=int, default=3)
    p.add_argument("--lambda-squared-compat", type=_bool, nargs="?", const=True, default=False,
                   help="apply lambda both inside and outside the consistency term")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--train-domain", default="flat")
    p.add_argument("--eval-domains", type=_str_list, default=("inverted", "stripes", "noise"))
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--eval-per-class", type=int, default=100)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--data-dir", default=None, help="read domains from a gen-data directory instead of generating")
    p.add_argument("--scalar-whiten", type=_bool, nargs="?", const=True, default=False,
                   help="one mean/std for all channels instead of per channel")
    return parser


PRESETS = {
    "paper-defaults": {"kpool": (1, 3, 5, 7), "p": 0.5, "lam": 10.0, "mode": "img", "samples": 3},
}


def read_config_file(path: str) -> dict[str, str]:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    """Parse ``argv``; for ``train``, layer preset < config file < flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != "train" or (args.config is None and args.preset is None):
        return args
    sub = _subparser(parser, "train")
    dests = {a.dest: a for a in sub._actions}
    defaults = dict(PRESETS.get(args.preset, {}))
    if args.config:
        try:
            file_values = read_config_file(args.config)
        except OSError as exc:
            sub.error(f"cannot read config file: {exc}")
        except ValueError as exc:
            sub.error(str(exc))
        for key, value in file_values.items():
            key = {"lambda": "lam", "learning_rate": "lr"}.get(key, key)
            action = dests.get(key)
            if action is None or key in ("help", "config"):
                sub.error(f"unknown config key {key!r}")
            try:
                defaults[key] = action.type(value) if action.type else value
            except (argparse.ArgumentTypeError, ValueError) as exc:
                sub.error(f"bad value for {key}: {exc}")
            if action.choices is not None and defaults[key] not in action.choices:
                sub.error(f"invalid choice for {key}: {value!r}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _validate(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    err = parser.error
    if args.threads is not None and args.threads < 1:
        err("--threads must be at least 1")
    if args.seed < 0:
        err("--seed must be non-negative")
    cmd = args.command
    if cmd in ("bounds", "simulate"):
        if not 0 < args.epsilon < 1:
            err("--epsilon must lie strictly between 0 and 1")
        if not args.sigma > 0:
            err("--sigma must be positive")
        if args.m < 1:
            err("--m must be a positive integer")
    if cmd == "bounds" and args.n < 2:
        err("--n must be at least 2")
    if cmd == "simulate":
        if args.patches < 2:
            err("--patches must be at least 2")
        if args.patch_size < 1 or args.patch_size % 2 == 0:
            err("--patch-size must be an odd positive integer")
    if cmd in ("augment", "train"):
        if not args.kpool or any(k < 1 or k % 2 == 0 for k in args.kpool):
            err("--kpool must list odd positive filter sizes")
        if not 0 <= args.p <= 1:
            err("--p must lie in [0, 1]")
        if args.samples < 1:
            err("--samples must be positive")
    if cmd == "augment" and args.alpha is not None and not 0 <= args.alpha <= 1:
        err("--alpha must lie in [0, 1]")
    if cmd in ("gen-data", "train"):
        if args.per_class < 1:
            err("--per-class must be positive")
        if args.image_size < 16:
            err("--image-size must be at least 16")
        domains = args.domains if cmd == "gen-data" else (args.train_domain, *args.eval_domains)
        bad = [d for d in domains if d not in DOMAINS]
        if bad and not (cmd == "train" and args.data_dir):
            err(f"unknown domain(s) {bad}; expected {DOMAINS}")
    if cmd == "train":
        if args.epochs < 1:
            err("--epochs must be at least 1")
        if args.lr < 0:
            err("--lr must be non-negative")
        if args.lam < 0:
            err("--lambda must be non-negative")
        if args.batch_size < 1 or args.hidden < 1 or args.eval_per_class < 1:
            err("--batch-size, --hidden and --eval-per-class must be positive")


def _resolved(args: argparse.Namespace) -> dict:
    d = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items()}
    return d


def _out_dir(args, default: str | None = DEFAULT_OUT) -> Path | None:
    out = args.out or default
    if out is None:
        return None
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {path}: {exc}")
    if not os.access(path, os.W_OK):
        raise DataError(f"output directory {path} is not writable")
    return path


def _write_csv(path: Path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\r\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def cmd_augment(args) -> int:
    files = list_images(args.input)
    out = _out_dir(args)
    cfg = RandConvConfig(pool=args.kpool, p=args.p, mix=args.mode == "mix", seed=args.seed,
                         samples_per_image=args.samples, share_filters=args.share_filters)
    images = []
    for f in files:
        img = load_image(f)
        # scalar per-image whitening: zero-mean, unit-variance input without
        # changing the relative channel balance of the preview
        images.append(whiten(img, scalar_whitening(compute_whitening([img]))))
    ds = LabeledDataset(images, [0] * len(images), 1, "input", [f.stem for f in files])
    batches = augment_batch(ds, cfg, args.seed, threads=args.threads, alpha=args.alpha)
    rows = []
    for f, samples in zip(files, batches):
        for j, s in enumerate(samples):
            if s.was_original:
                name = f"{f.stem}_orig_s{j}.png"
            else:
                name = f"{f.stem}_k{s.k_used}_s{j}.png"
                if s.alpha is not None:
                    name = name[:-4] + f"_mix{s.alpha:.2f}.png"
            save_image(s.image, out / name, rescale=True)
            rows.append({
                "file": name,
                "k": "" if s.k_used is None else s.k_used,
                "alpha": "" if s.alpha is None else repr(s.alpha),
                "seed_stream": s.stream,
            })
    _write_csv(out / "manifest.csv", ("file", "k", "alpha", "seed_stream"), rows)
    print(f"wrote {len(rows)} images and manifest.csv to {out}")
    return 0


def cmd_bounds(args) -> int:
    params = BoundParams(args.m, args.n, args.sigma, args.epsilon)
    d1, d2 = theorem1_bounds(params)
    print(f"delta1 = {d1:.4g}")
    print(f"delta2 = {d2:.4g}")
    row = {"m": args.m, "N": args.n, "sigma": repr(float(args.sigma)), "epsilon": repr(float(args.epsilon)),
           "tail": repr(params.tail), "delta1": repr(d1), "delta2": repr(d2)}
    out = _out_dir(args, default=None)
    if out is not None:
        _write_csv(out / "bounds.csv", row, [row])
    else:
        print(",".join(row))
        print(",".join(str(v) for v in row.values()))
    return 0


def cmd_simulate(args) -> int:
    files = list_images(args.input)
    images = [load_image(f) for f in files]
    params = BoundParams(args.m, args.patches, args.sigma, args.epsilon)
    try:
        stats = simulate_ratio_bounds(images, params, args.patch_size, args.seed, threads=args.threads)
    except DegenerateDataError as exc:
        raise DataError(str(exc))
    except ValueError as exc:
        raise DataError(str(exc))
    print(stats.summary())
    out = _out_dir(args, default=None)
    if out is not None:
        (out / "simulate.csv").write_bytes(stats.to_csv().encode())
    else:
        sys.stdout.write(stats.to_csv())
    return 0


def cmd_gen_data(args) -> int:
    out = _out_dir(args)
    total = 0
    for domain in args.domains:
        ds = generate_dataset(ShapeDatasetSpec(args.image_size, per_class=args.per_class, domain=domain, seed=args.seed))
        total += len(save_dataset(ds, out))
    print(f"wrote {total} images for domains {','.join(args.domains)} to {out}")
    return 0


def _train_configs(args) -> dict[str, TrainConfig]:
    rc = RandConvConfig(pool=args.kpool, p=args.p, mix=args.mode == "mix", seed=args.seed,
                        samples_per_image=args.samples)
    cfg = paper_defaults(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, momentum=args.momentum,
        lam=args.lam, randconv=rc, eval_domains=tuple(args.eval_domains), seed=args.seed,
        hidden=args.hidden, lambda_squared=args.lambda_squared_compat, threads=args.threads,
    )
    configs = {}
    if args.which in ("both", "baseline"):
        configs["baseline"] = baseline_config(cfg)
    if args.which in ("both", "randconv"):
        configs["randconv"] = cfg
    return configs


def _load_domains(args):
    if args.data_dir:
        train_ds = load_dataset(args.data_dir, args.train_domain)
        evals = {tag: load_dataset(args.data_dir, tag, train_ds.num_classes)
                 for tag in dict.fromkeys(args.eval_domains)}
        return whiten_domains(train_ds, evals, args.scalar_whiten)
    return make_shape_domains(args.train_domain, tuple(args.eval_domains), args.per_class,
                              args.eval_per_class, args.image_size, args.seed, args.scalar_whiten)


def cmd_train(args) -> int:
    out = _out_dir(args)
    data = _load_domains(args)
    configs = _train_configs(args)
    final = {}
    for name, cfg in configs.items():
        log.info("training %s", name)
        try:
            model, history = train(data.train, cfg, data.evals)
        except TrainingDiverged as exc:
            print(f"error: training diverged ({name}): {exc}", file=sys.stderr)
            return EXIT_DIVERGED
        (out / f"metrics_{name}.csv").write_bytes(metrics_csv(history).encode())
        model.save(out / f"model_{name}.npz")
        last = history[-1]
        final[name] = {k[4:]: last[k] for k in last if k.startswith("acc_")}
        final[name]["train"] = last["train_acc"]
    tags = list(data.evals)
    print("final accuracy")
    print("model".ljust(10) + "".join(t.rjust(10) for t in tags))
    for name, accs in final.items():
        print(name.ljust(10) + "".join(f"{accs[t]:10.3f}" for t in tags))
    summary = {
        "config": {name: _config_dict(cfg) for name, cfg in configs.items()},
        "seed": args.seed,
        "final_accuracies": final,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def _config_dict(cfg: TrainConfig) -> dict:
    d = asdict(replace(cfg, threads=1))
    d.pop("threads")
    return d


COMMANDS = {
    "augment": cmd_augment,
    "bounds": cmd_bounds,
    "simulate": cmd_simulate,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parse_args(argv)
    _validate(args, _subparser(parser, args.command))
    if args.threads is None:
        args.threads = default_threads()
    print("config: " + json.dumps(_resolved(args), sort_keys=True))
    try:
        return COMMANDS[args.command](args)
    except (DataError, ImageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
