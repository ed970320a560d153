"""Command-line entry points.

Exit codes: 0 on success, 1 when a stated claim fails (accuracy guard,
experiment claims, gradient check over tolerance), 2 for bad input or
configuration.  Every command that writes artifacts drops a run.json
recording the tool version, arguments, seed, and input checksums.
TRANSINV_THREADS caps the worker count.
"""

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace

from numba import get_num_threads

from . import __version__, data, experiments, gradcheck, invariance, optim, render
from .nn import load_model, parse_arch, save_model

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_run_manifest(out_dir, command, params, inputs, extra=None):
    manifest = {
        "tool": "transinv",
        "version": __version__,
        "command": command,
        "params": params,
        "inputs": {p: _sha256_file(p) for p in inputs},
        "threads": get_num_threads(),
    }
    if extra:
        manifest.update(extra)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _find_mnist(mnist_dir):
    paths = {}
    for key, base in MNIST_FILES.items():
        for cand in (base, base + ".gz"):
            p = os.path.join(mnist_dir, cand)
            if os.path.exists(p):
                paths[key] = p
                break
        else:
            raise FileNotFoundError(
                f"{mnist_dir}: missing {base}[.gz] (standard IDX file names expected)"
            )
    return paths


def _load_mnist(mnist_dir):
    paths = _find_mnist(mnist_dir)
    train_images, train_labels = data.load_idx(paths["train_images"],
                                               paths["train_labels"])
    test_images, test_labels = data.load_idx(paths["test_images"],
                                             paths["test_labels"])
    return (train_images, train_labels, test_images, test_labels), list(paths.values())


def cmd_data_prepare(args):
    mnist, input_paths = _load_mnist(args.mnist_dir)
    data.build_bundles(args.out, *mnist, seed=args.seed)
    for name in data.SPLIT_NAMES:
        with open(os.path.join(args.out, f"{name}.manifest.json")) as fh:
            count = json.load(fh)["count"]
        print(f"{name}: {count} images")
    _write_run_manifest(args.out, "data-prepare",
                        {"mnist_dir": args.mnist_dir, "seed": args.seed},
                        input_paths)
    return 0


def _resolve_variant(arch_name, data_flag):
    augmented_suffix = arch_name.endswith("-aug")
    if data_flag is None:
        return "augmented" if augmented_suffix else "centered"
    if augmented_suffix and data_flag == "centered":
        raise ValueError(f"arch {arch_name!r} says augmented but --data says centered")
    return data_flag


def cmd_train(args):
    if args.tune and (args.lr is not None or args.l2 is not None):
        raise ValueError("--tune replaces --lr/--l2; give one or the other")
    variant = _resolve_variant(args.arch, args.data)
    spec, _ = parse_arch(args.arch, filter_size=args.filter_size)
    bundle = data.load_bundle(args.bundles, variant)
    name = experiments.run_name(spec.arch, args.filter_size, variant == "augmented")
    os.makedirs(args.out, exist_ok=True)

    cfg = optim.TrainConfig(seed=args.seed)
    if args.max_epochs:
        cfg = replace(cfg, max_epochs=args.max_epochs,
                      patience=min(3, args.max_epochs))
    tuning_rows = None
    if args.tune:
        print("tuning: 3x3 grid, 3 epochs each")
        cfg, tuning_rows = optim.select_hyperparams(spec, bundle.train, bundle.val,
                                                    cfg)
        print(f"selected lr={cfg.learning_rate:g} l2={cfg.l2_strength:g}")
    else:
        if args.lr is not None:
            cfg = replace(cfg, learning_rate=args.lr)
        if args.l2 is not None:
            cfg = replace(cfg, l2_strength=args.l2)

    result = optim.train(spec, bundle.train, bundle.val, cfg,
                         dataset_tag=f"{variant}:{bundle.source_sha256[:12]}")
    result.model.meta["augmented"] = variant == "augmented"
    model_path = os.path.join(args.out, f"{name}.model")
    save_model(result.model, model_path)
    optim.write_metrics_csv(result.metrics,
                            os.path.join(args.out, f"{name}.metrics.csv"))
    if tuning_rows:
        optim.write_tuning_csv(tuning_rows, os.path.join(args.out, f"{name}.tuning.csv"))

    acc = optim.evaluate(result.model, *bundle.test)
    tacc = experiments.translated_test_accuracy(result.model, bundle.test[0],
                                                bundle.test[1], args.seed)
    print(f"{name}: val {result.val_accuracy:.4f}, test {acc:.4f}, "
          f"translated-test {tacc:.4f} ({result.epochs_run} epochs)")
    manifests = [os.path.join(args.bundles, f"train-{variant}.manifest.json"),
                 os.path.join(args.bundles, "val.manifest.json"),
                 os.path.join(args.bundles, "test.manifest.json")]
    _write_run_manifest(args.out, "train",
                        {"arch": args.arch, "filter_size": args.filter_size,
                         "data": variant, "seed": args.seed,
                         "learning_rate": cfg.learning_rate,
                         "l2_strength": cfg.l2_strength,
                         "tuned": bool(args.tune), "model": name + ".model"},
                        manifests,
                        extra={"test_accuracy": acc,
                               "translated_test_accuracy": tacc})
    if acc < args.min_accuracy:
        print(f"FAIL: test accuracy {acc:.4f} below the {args.min_accuracy} floor",
              file=sys.stderr)
        return 1
    return 0


def cmd_measure(args):
    model = load_model(args.model)
    _, test_images, test_labels = data.read_split(args.bundles, "test")
    plan = experiments.MeasurePlan(per_class=args.per_class,
                                   normalizer_sample=args.normalizer_sample,
                                   seed=args.seed, score_space=args.score_space)
    name = os.path.basename(args.model)
    name = name[:-6] if name.endswith(".model") else name
    profile, norm, _ = experiments.measure_model(model, test_images, test_labels,
                                                 plan, args.out, name, png=args.png)
    summary = invariance.profile_summary(profile)
    print(f"{name}: normalizer {norm.value:.6f} "
          f"({norm.n_pairs} inter-class pairs), summary {summary:.6f}")
    _write_run_manifest(args.out, "measure",
                        {"model": args.model, "per_class": plan.per_class,
                         "normalizer_sample": plan.normalizer_sample,
                         "seed": plan.seed, "score_space": plan.score_space},
                        [args.model,
                         os.path.join(args.bundles, "test.manifest.json")],
                        extra={"normalizer": norm.value, "summary": summary})
    return 0


def _profile_name(path):
    base = os.path.basename(path)
    for suffix in (".profile.csv", ".map.csv", ".csv"):
        if base.endswith(suffix):
            return base[:-len(suffix)]
    return base


def cmd_radial(args):
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for map_path in args.maps:
        smap = invariance.SensitivityMap.from_csv(map_path)
        name = _profile_name(map_path)
        profile = invariance.radial_profile(smap, name=name)
        out_path = os.path.join(args.out, f"{name}.profile.csv")
        profile.to_csv(out_path)
        outputs.append(out_path)
        print(f"{name}: {len(profile.radii)} radius bins -> {out_path}")
    _write_run_manifest(args.out, "radial", {"maps": list(args.maps)}, args.maps)
    return 0


def cmd_compare(args):
    named = [( _profile_name(p), invariance.RadialProfile.from_csv(p))
             for p in args.profiles]
    comparison = invariance.compare_profiles(named)
    os.makedirs(args.out, exist_ok=True)
    comparison.write_table_csv(os.path.join(args.out, "comparison.csv"))
    comparison.write_summary_csv(os.path.join(args.out, "summary.csv"))
    if args.plot:
        render.render_profiles(named, os.path.join(args.out, "profiles.pgm"),
                               png=args.png)
    for rank, name, s in comparison.ranking:
        print(f"rank {rank}: {name} (summary {s:.6f})")
    _write_run_manifest(args.out, "compare", {"profiles": list(args.profiles)},
                        args.profiles)
    return 0


def cmd_experiment(args):
    mnist, input_paths = _load_mnist(args.mnist_dir)
    records, claims = experiments.run_experiment(
        args.which, mnist, args.out, seed=args.seed, quick=args.quick,
        png=args.png)
    print(experiments.claims_report(claims))
    _write_run_manifest(args.out, "experiment",
                        {"which": args.which, "seed": args.seed,
                         "quick": args.quick}, input_paths)
    failed = [c for c in claims if c.asserted and not c.passed]
    if failed:
        print("failed claims: " + ", ".join(c.name for c in failed), file=sys.stderr)
        return 1
    return 0


def cmd_gradcheck(args):
    rows = gradcheck.run_layer_checks(seed=args.seed, instances=args.instances)
    rows += gradcheck.run_model_check(arch=args.arch, filter_size=args.filter_size,
                                      seed=args.seed)
    worst = 0.0
    for label, err in rows:
        flag = "ok" if err < gradcheck.TOLERANCE else "FAIL"
        print(f"{label:24s} max rel err {err:.3e}  {flag}")
        worst = max(worst, err)
    print(f"worst {worst:.3e} (tolerance {gradcheck.TOLERANCE:g}, "
          f"eps {gradcheck.EPS:g}, float64 central differences)")
    return 0 if worst < gradcheck.TOLERANCE else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="transinv",
        description="Train small CNNs and measure their sensitivity to input translation.")
    parser.add_argument("--version", action="version", version=f"transinv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("data-prepare", help="build 40x40 bundles from MNIST IDX files")
    p.add_argument("--mnist-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_data_prepare)

    p = sub.add_parser("train", help="train one network on a prepared bundle")
    p.add_argument("--arch", required=True,
                   help="architecture string over c/p, e.g. ccpp or ccpp-aug")
    p.add_argument("--filter-size", type=int, default=5)
    p.add_argument("--data", choices=["centered", "augmented"], default=None,
                   help="training variant; defaults to the arch suffix")
    p.add_argument("--bundles", required=True, help="bundle directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--max-epochs", type=int, default=0,
                   help="override the default 20-epoch budget")
    p.add_argument("--min-accuracy", type=float, default=experiments.GUARD_FLOOR,
                   help="exit 1 if test accuracy lands below this")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--tune", action="store_true",
                       help="grid-search lr and l2 before the real run")
    group.add_argument("--lr", type=float, default=None)
    p.add_argument("--l2", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("measure", help="sensitivity maps for a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--bundles", required=True)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--normalizer-sample", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--score-space", choices=["logits", "softmax"], default="logits")
    p.add_argument("--png", action="store_true", help="also write PNG twins")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("radial", help="collapse map CSVs into radial profiles")
    p.add_argument("--maps", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_radial)

    p = sub.add_parser("compare", help="rank radial profiles by summary stat")
    p.add_argument("--profiles", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true", help="render a line plot")
    p.add_argument("--png", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("experiment", help="preset train+measure+compare pipelines")
    p.add_argument("which", choices=sorted(experiments.PRESETS))
    p.add_argument("--mnist-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true",
                   help="10% data, 2 epochs, claims reported but not asserted")
    p.add_argument("--png", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--arch", default="cp")
    p.add_argument("--filter-size", type=int, default=5)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except optim.TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
