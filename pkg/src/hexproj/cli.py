"""Command-line entry point: ``hexproj {generate,train,grid,probe,gradcheck}``."""
import argparse
import json
import os
import sys
from dataclasses import fields

from . import datasets, harness
from .datasets import ShiftRecipe
from .exceptions import HexprojError
from .gradcheck import gradcheck_suite
from .netcore import save_params

CONFIG_KEYS = [f.name for f in fields(harness.ExperimentConfig) if f.name != "recipe"]
RECIPE_KEYS = [f.name for f in fields(ShiftRecipe) if f.name != "extra"]


def _add_config_flags(p, mandatory=False):
    p.add_argument("--config", help="key=value file; flags override its values")
    p.add_argument("--seed", type=int, required=mandatory)
    p.add_argument("--out-dir", required=mandatory)
    for key in CONFIG_KEYS + RECIPE_KEYS:
        if key == "seed":
            continue
        p.add_argument("--" + key.replace("_", "-"), dest=key, default=None)
    p.add_argument("--extra", action="append", default=[], metavar="KEY=VALUE",
                   help="generator option stored in recipe.extra (repeatable)")


def _collect(args, skip=()):
    values = harness.load_config_file(args.config) if args.config else {}
    for key in CONFIG_KEYS + RECIPE_KEYS:
        if key in skip:
            continue
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    for item in args.extra:
        if "=" not in item:
            raise HexprojError(f"--extra expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values["extra." + k.strip()] = v.strip()
    return values


def _config(args, **override):
    values = _collect(args)
    values.update({k: str(v) for k, v in override.items()})
    return harness.build_config(values)


def _log(quiet):
    return None if quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))


def cmd_generate(args):
    cfg = _config(args, **({"seed": args.seed} if args.seed is not None else {}))
    os.makedirs(args.out_dir, exist_ok=True)
    splits = harness.build_datasets(cfg.recipe, cfg.seed)
    for name, data in zip(("train", "val", "test"), splits):
        base = os.path.join(args.out_dir, name)
        datasets.save_idx(data, base + "-images.idx", base + "-labels.idx")
        datasets.write_manifest(data, base + "-manifest.txt")
        for i in range(min(args.pgm, len(data))):
            datasets.export_pgm(data.images[i], f"{base}-{i:04d}.pgm")
        print(f"{name}: {len(data)} images -> {base}-images.idx")
    return 0


def _save_model(model, path):
    save_params([m.params for m in model.modules()], path)


def cmd_train(args):
    cfg = _config(args, seed=args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    result, model = harness.run_experiment(cfg, log=_log(args.quiet), return_model=True)
    harness.emit_metrics([result], os.path.join(args.out_dir, "metrics.csv"))
    harness.emit_curves([result], os.path.join(args.out_dir, "curves.csv"))
    _save_model(model, os.path.join(args.out_dir, "params.bin"))
    print(f"{cfg.method} seed={cfg.seed} {cfg.setting} best_epoch={result.best_epoch} "
          f"test_accuracy={result.test_accuracy:.4f}")
    return 0


def _parse_sweep(items):
    """``key=v1,v2`` items to a list of override dicts (cartesian product)."""
    settings = [{}]
    for item in items:
        if "=" not in item:
            raise HexprojError(f"--sweep expects KEY=V1,V2,..., got {item!r}")
        key, vals = item.split("=", 1)
        key = key.strip()
        if key not in CONFIG_KEYS + RECIPE_KEYS:
            raise HexprojError(f"cannot sweep unknown key {key!r}")
        parsed = [harness._guess(v.strip()) for v in vals.split(",") if v.strip()]
        settings = [{**s, key: v} for s in settings for v in parsed]
    return settings


def cmd_grid(args):
    base = _config(args, seed=args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in harness.METHODS:
            raise HexprojError(f"unknown method code {m!r}")
    seeds = [args.seed + i for i in range(args.n_seeds)]
    results = harness.run_grid(base, methods, seeds, _parse_sweep(args.sweep),
                               log=_log(args.quiet))
    summary = harness.emit_metrics(results, os.path.join(args.out_dir, "metrics.csv"))
    harness.emit_curves(results, os.path.join(args.out_dir, "curves.csv"))
    for (method, setting), (mean, std, n) in harness.summarize(results).items():
        print(f"{method} {setting}: {mean:.4f} +- {std:.4f} (n={n})")
    print(f"summary -> {summary}")
    return 0


def cmd_probe(args):
    values = {"n_classes": "10", "n_backgrounds": "4", "n_samples": "1000", "epochs": "5",
              "learning_rate": "1e-3", "batch_size": "64"}
    values.update(_collect(args))
    tables = []
    for i in range(args.n_seeds):
        cfg = harness.build_config({**values, "seed": str((args.seed or 0) + i)})
        t = harness.probe_experiment(cfg, log=_log(args.quiet))
        tables.append(t)
        for branch, target, mean, std in t.rows():
            print(f"seed={t.seed} {branch:5s} {target:7s} {mean:.4f} +- {std:.4f} "
                  f"(chance {t.chance[target]:.4f})")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        harness.emit_probe(tables, os.path.join(args.out_dir, "probe.csv"))
    return 0


def cmd_gradcheck(args):
    reports = gradcheck_suite(seed=args.seed or 0, entries=args.entries)
    ok = True
    out = {}
    for name, rep in reports.items():
        worst = max(rep.max_rel_error) if rep.max_rel_error else 0.0
        status = "PASS" if rep.passed else "FAIL"
        ok &= rep.passed
        out[name] = {"max_rel_error": worst, "failures": len(rep.failures),
                     "skipped_kinks": rep.skipped_kinks}
        print(f"{status} {name:24s} max_rel_error={worst:.3e} skipped={rep.skipped_kinks}")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "gradcheck.json"), "w") as fh:
            json.dump(out, fh, indent=2)
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="hexproj", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a generated dataset as IDX files + manifest")
    _add_config_flags(p)
    p.add_argument("--pgm", type=int, default=0, help="also export the first N images per split")
    p.set_defaults(func=cmd_generate, quiet=True)

    p = sub.add_parser("train", help="train and evaluate one configuration")
    _add_config_flags(p, mandatory=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="method x seed x setting sweep")
    _add_config_flags(p, mandatory=True)
    p.add_argument("--methods", default="B,H")
    p.add_argument("--n-seeds", type=int, default=5, help="seeds are seed, seed+1, ...")
    p.add_argument("--sweep", action="append", default=[], metavar="KEY=V1,V2",
                   help="sweep a config or recipe field (repeatable; cartesian product)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("probe", help="linear probes of NGLCM and MLP branch features")
    _add_config_flags(p)
    p.add_argument("--n-seeds", type=int, default=5)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("gradcheck", help="finite-difference check of every component")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entries", type=int, default=20)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "generate" and not args.out_dir:
        parser.error("generate requires --out-dir")
    try:
        return args.func(args)
    except (HexprojError, ValueError, OSError) as exc:
        print(f"hexproj {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
