"""Command-line entry point.

    segue make-fixture --out data/shapes
    segue train-gen --config my.toml --dataset data/shapes/manifest.json
    segue protect --gen runs/<id>/generator.segue --dataset data/shapes/manifest.json --out data/shapes-ue
    segue attack --spec attack.toml
    segue bench --methods segue,ue,lsp,random --dataset data/shapes/manifest.json --gen generator.segue

Exit codes: 0 success, 2 configuration error, 3 runtime abort, 4 I/O error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import torch

from segue import baselines
from segue.config import config_hash, load_config
from segue.core.atomic import atomic_write_json, atomic_write_text
from segue.core.dataset import load_dataset, read_manifest
from segue.core.perturb import apply_and_quantize
from segue.core.types import ImageBatch
from segue.distortion import DistortionConfig
from segue.errors import ArgumentError, ConfigError, DatasetIOError, SegueError
from segue.evaluation.attacker import ExperimentSpec, train_attacker
from segue.evaluation.metrics import psnr_per_image, ssim_per_image
from segue.generator import generate_perturbation, load_checkpoint, protect_dataset
from segue.models import build_classifier
from segue.side_info import SideInformation, pseudo_labels, train_feature_extractor
from segue.synthetic import make_fixture
from segue.trainer import TrainConfig, run_two_stage, save_run

DATA_ENV = "SEGUE_DATA_DIR"
METHODS = ("segue", "ue", "rue", "lsp", "random")
RUN_MANIFEST = "run_manifest.json"


def _now():
    return _dt.datetime.now(_dt.timezone.utc)


def data_path(p) -> Path:
    """Relative dataset paths are taken from $SEGUE_DATA_DIR when it is set."""
    p = Path(p)
    root = os.environ.get(DATA_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dataset_hash(manifest) -> str:
    """Content hash over the manifest and every image it references."""
    manifest = Path(manifest)
    doc = read_manifest(manifest)
    h = hashlib.sha256()
    h.update(file_sha256(manifest).encode())
    for e in doc["entries"]:
        p = (manifest.parent / e["path"]).resolve()
        h.update(e["path"].encode())
        h.update(file_sha256(p).encode() if p.is_file() else b"missing")
    return h.hexdigest()


class Run:
    """Collects artifacts and input hashes, then writes the RunManifest."""

    def __init__(self, command, argv, config, seed, run_dir: Path):
        self.command, self.argv, self.config, self.seed = command, argv, config, seed
        self.dir = Path(run_dir)
        self.started = _now()
        self.artifacts, self.timing_artifacts, self.inputs = [], [], {}

    @classmethod
    def create(cls, command, args, config, seed, default_root="runs"):
        if getattr(args, "run_dir", None):
            run_dir = Path(args.run_dir)
        else:
            stamp = _now().strftime("%Y%m%dT%H%M%SZ")
            run_dir = Path(getattr(args, "out", None) or default_root) / f"{stamp}-{config_hash(config)[:12]}"
        return cls(command, list(getattr(args, "argv", [])), config, seed, run_dir)

    def add(self, path, timing=False):
        rel = os.path.relpath(path, self.dir)
        (self.timing_artifacts if timing else self.artifacts).append(rel)
        return path

    def add_input(self, name, path, manifest=False):
        self.inputs[name] = {"path": str(path), "sha256": dataset_hash(path) if manifest else file_sha256(path)}

    def finish(self):
        doc = {"command": self.command, "argv": self.argv, "config": self.config, "seed": self.seed,
               "started_at": self.started.isoformat(), "finished_at": _now().isoformat(),
               "artifacts": sorted(self.artifacts), "timing_artifacts": sorted(self.timing_artifacts),
               "inputs": self.inputs}
        atomic_write_json(self.dir / RUN_MANIFEST, doc)
        return self.dir / RUN_MANIFEST


def _apply_seed(cfg, seed):
    if seed is None:
        return cfg
    for section in ("train", "attack", "extractor", "baselines"):
        if section in cfg:
            cfg[section]["seed"] = seed
    if "train" in cfg and "distortion" in cfg["train"]:
        cfg["train"]["distortion"]["seed"] = seed
    return cfg


def _train_config(cfg) -> TrainConfig:
    train = dict(cfg["train"])
    train["distortion"] = DistortionConfig(**train.get("distortion", {}))
    return TrainConfig(**train)


def _parse_side(side: str):
    if side == "labels":
        return "labels", None
    if side.startswith("cluster:"):
        try:
            k = int(side.split(":", 1)[1])
        except ValueError:
            raise ArgumentError(f"--side {side!r}: expected cluster:K with integer K") from None
        if k < 2:
            raise ArgumentError("--side cluster:K needs K >= 2")
        return "cluster", k
    raise ArgumentError(f"--side must be 'labels' or 'cluster:K', got {side!r}")


def _dataset_arg(args, cfg):
    ref = args.dataset or cfg.get("data", {}).get("manifest")
    if not ref:
        raise ConfigError("no dataset given (use --dataset or [data] manifest)", key="manifest")
    path = data_path(ref)
    if not path.is_file():
        raise DatasetIOError(f"manifest not found: {path}", path=path)
    return path


def _pseudo_side(dataset, K, proxy_ref, cfg, run=None):
    if not proxy_ref:
        raise ArgumentError("cluster side information needs --proxy MANIFEST (a labeled dataset "
                            "disjoint from the one being protected) to train the feature extractor")
    proxy_path = data_path(proxy_ref)
    proxy = load_dataset(proxy_path)
    if not proxy.labeled:
        raise ArgumentError(f"proxy dataset {proxy_path} has no labels")
    ex = cfg["extractor"]
    extractor = train_feature_extractor(proxy.train, proxy.num_classes, arch=ex["arch"], epochs=ex["epochs"],
                                        lr=ex["lr"], seed=ex["seed"], dataset_id=str(proxy_path))
    assignment = pseudo_labels(extractor, dataset.train, K, seed=ex["seed"])
    report = json.loads(assignment.to_json(truth=dataset.train.labels.numpy() if dataset.labeled else None))
    report["extractor"] = extractor.provenance
    if run is not None:
        run.add_input("proxy", proxy_path, manifest=True)
    return assignment, report


def _write_json_artifact(run, name, obj):
    return run.add(_atomic_json(run.dir / name, obj))


def _atomic_json(path, obj):
    atomic_write_json(path, obj)
    return path


# ---------------------------------------------------------------- commands

def cmd_make_fixture(args):
    out = data_path(args.out)
    cfg = {"classes": args.classes, "train_per_class": args.train, "test_per_class": args.test,
           "seed": args.seed, "size": args.size, "labeled": not args.unlabeled, "name": args.name}
    if args.dry_run:
        print(json.dumps(cfg, indent=1))
        return 0
    manifest = make_fixture(out, args.classes, args.train, args.test, args.seed, args.size,
                            labeled=not args.unlabeled, name=args.name)
    run = Run("make-fixture", args.argv, cfg, args.seed, out)
    run.add(manifest)
    for e in read_manifest(manifest)["entries"]:
        run.add(out / e["path"])
    run.finish()
    print(f"wrote {manifest}")
    return 0


def cmd_train_gen(args):
    cfg = _apply_seed(load_config(args.config, sections=("train",) if args.side != "cluster" else None), args.seed)
    tcfg = _train_config(cfg)
    manifest = _dataset_arg(args, cfg)
    side_kind, K = _parse_side(args.side) if args.side else (tcfg.side_info, None)
    if side_kind == "pseudo":
        side_kind = "cluster"
    if args.dry_run:
        read_manifest(manifest)
        print(json.dumps({"command": "train-gen", "dataset": str(manifest), "side": side_kind,
                          "config": cfg}, indent=1, sort_keys=True))
        return 0
    dataset = load_dataset(manifest)
    run = Run.create("train-gen", args, cfg, tcfg.seed)
    run.dir.mkdir(parents=True, exist_ok=True)
    run.add_input("dataset", manifest, manifest=True)
    if side_kind == "labels":
        if not dataset.labeled:
            raise ArgumentError("dataset has no labels; use --side cluster:K with --proxy")
        side = SideInformation(dataset.train.labels, "labels", tcfg.bits)
        K = dataset.num_classes
    else:
        K = K or dataset.num_classes
        assignment, report = _pseudo_side(dataset, K, args.proxy, cfg, run)
        _write_json_artifact(run, "clustering.json", report)
        side = SideInformation(torch.as_tensor(assignment.labels), "pseudo", tcfg.bits)

    def log(rec):
        print(f"epoch {rec['epoch']:3d} [{rec['stage']}] train {rec['train_loss']:.4f} "
              f"full-set {rec['full_set_loss']:.4f} max|d| {rec['max_delta'] * 255:.2f}/255", flush=True)

    state = run_two_stage(dataset.train, side, tcfg, max(K, int(side.labels.max()) + 1), log=log)
    ckpt = run.dir / "generator.segue"
    ckpt_id = save_run(state, tcfg, ckpt, run.dir / "losses.csv",
                       dataset_id=run.inputs["dataset"]["sha256"])
    run.add(ckpt)
    run.add(run.dir / "losses.csv")
    run.finish()
    print(f"checkpoint {ckpt} (id {ckpt_id[:16]}), {state.epoch} epochs"
          + (" (early stop)" if state.stopped_early else ""))
    return 0


def _budget_stats(clean: ImageBatch, exported: ImageBatch) -> dict:
    dev = (exported.pixels - clean.pixels).abs().flatten(1).max(1).values if len(clean) else torch.zeros(0)
    p = psnr_per_image(clean.pixels, exported.pixels) if len(clean) else torch.zeros(0)
    s = ssim_per_image(clean.pixels, exported.pixels) if len(clean) else torch.zeros(0)
    return {"images": len(clean), "max_delta_255": round(float(dev.max()) * 255, 4) if len(dev) else 0.0,
            "mean_delta_255": round(float(dev.mean()) * 255, 4) if len(dev) else 0.0,
            "psnr_min": float(p.min()) if len(p) else None, "ssim_mean": float(s.mean()) if len(s) else None}


def cmd_protect(args):
    cfg = _apply_seed(load_config(args.config), args.seed)
    manifest = _dataset_arg(args, cfg)
    side_kind, K = _parse_side(args.side)
    gen_path = Path(args.gen)
    if not gen_path.is_file():
        raise DatasetIOError(f"generator checkpoint not found: {gen_path}", path=gen_path)
    if args.dry_run:
        read_manifest(manifest)
        print(json.dumps({"command": "protect", "generator": str(gen_path), "dataset": str(manifest),
                          "side": args.side, "out": args.out}, indent=1))
        return 0
    G, header = load_checkpoint(gen_path)
    dataset = load_dataset(manifest)
    out = data_path(args.out)
    run = Run("protect", args.argv, cfg, cfg["extractor"]["seed"], out)
    run.add_input("dataset", manifest, manifest=True)
    run.add_input("generator", gen_path)
    clustering = None
    if side_kind == "labels":
        source = "labels"
    else:
        source, clustering = _pseudo_side(dataset, K, args.proxy, cfg, run)
        print(f"clustering: K={K} inertia={clustering['inertia']:.4f}"
              + (f" accuracy vs labels={clustering['accuracy_vs_truth']:.3f}"
                 if "accuracy_vs_truth" in clustering else ""))
    exported = protect_dataset(G, dataset, source, out, checkpoint_id=header["id"])
    run.add(exported)
    for e in read_manifest(exported)["entries"]:
        run.add(out / e["path"])
    if clustering is not None:
        _write_json_artifact(run, "clustering.json", clustering)
    stats = _budget_stats(dataset.train, load_dataset(exported).train)
    _write_json_artifact(run, "budget.json", stats)
    run.finish()
    print(f"exported {stats['images']} images to {out}: max|d| {stats['max_delta_255']}/255, "
          f"mean max|d| {stats['mean_delta_255']}/255, min PSNR {stats['psnr_min']:.2f} dB, "
          f"mean SSIM {stats['ssim_mean']:.4f}")
    return 0


def _load_spec(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DatasetIOError(f"cannot read spec {path}: {exc}", path=path) from exc
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(text)
        except ValueError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    else:
        from segue.config import tomllib
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    # manifest references are relative to the data root, else to the spec file
    for key in ("dataset_ref", "unlearnable_ref"):
        if doc.get(key) and not Path(doc[key]).is_absolute():
            doc[key] = str(data_path(doc[key]) if os.environ.get(DATA_ENV) else path.parent / doc[key])
    return doc


def _spec_from(doc, cfg, seed):
    base = dict(cfg["attack"])
    from fractions import Fraction
    if isinstance(doc.get("rho_a"), str):
        try:
            doc["rho_a"] = float(Fraction(doc["rho_a"]))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"rho_a = {doc['rho_a']!r} is not a number", key="rho_a") from None
    base.update(doc)
    if seed is not None:
        base["seed"] = seed
    return ExperimentSpec.from_dict(base)


def _save_report(report, run, stem="report"):
    report.save(run.dir / f"{stem}.json")
    report.save_curves_csv(run.dir / f"{stem}_curves.csv")
    run.add(run.dir / f"{stem}.json")
    run.add(run.dir / f"{stem}_curves.csv")
    run.add(run.dir / f"{stem}.timings.json", timing=True)


def cmd_attack(args):
    cfg = load_config(args.config)
    spec = _spec_from(_load_spec(args.spec), cfg, args.seed)
    spec.validate()
    if args.dry_run:
        print(json.dumps({"command": "attack", "spec": spec.to_dict(), "spec_hash": spec.spec_hash()}, indent=1))
        return 0
    run = Run.create("attack", args, spec.to_dict(), spec.seed)
    run.dir.mkdir(parents=True, exist_ok=True)
    run.add_input("dataset", spec.dataset_ref, manifest=True)
    if spec.unlearnable_ref:
        run.add_input("unlearnable", spec.unlearnable_ref, manifest=True)

    def log(rec):
        print(f"epoch {rec['epoch']:3d} loss {rec['train_loss']:.4f} train {rec['train_acc']:.3f} "
              f"clean test {rec['test_acc']:.3f}", flush=True)

    _, report = train_attacker(spec, log=log)
    _save_report(report, run)
    run.finish()
    print(f"clean test accuracy {report.final_test_accuracy:.4f} (best {report.best_test_accuracy:.4f}); "
          f"report in {run.dir}")
    return 0


def _attack_job(spec_dict, base=None):
    """Train one attacker. Relative refs resolve against `base`; the report keeps them relative."""
    torch.set_num_threads(1)
    stored = ExperimentSpec.from_dict(spec_dict)
    resolved = dict(spec_dict)
    for key in ("dataset_ref", "unlearnable_ref"):
        if base is not None and resolved.get(key) and not Path(resolved[key]).is_absolute():
            resolved[key] = str(Path(base) / resolved[key])
    _, report = train_attacker(ExperimentSpec.from_dict(resolved))
    report.spec, report.spec_hash = stored.to_dict(), stored.spec_hash()
    return report


def _generate(method, dataset, cfg, G=None):
    """Return (perturbed train batch, extra manifest fields) for one method."""
    b = cfg["baselines"]
    eps = b["epsilon"]
    train = dataset.train
    if method == "segue":
        pert = generate_perturbation(G, train, SideInformation(train.labels, "labels", G.bits))
        return apply_and_quantize(train, pert), {"method": "segue"}
    if method in ("ue", "rue"):
        torch.manual_seed(b["seed"])
        f = build_classifier(cfg["train"]["surrogate_arch"], dataset.num_classes, train.image_size[0],
                             cfg["train"]["surrogate_widths"])
        kw = dict(outer_steps=b["ue_outer_steps"], inner_steps=b["ue_inner_steps"], max_rounds=b["ue_max_rounds"],
                  stop_error=b["ue_stop_error"], lr=b["ue_lr"], seed=b["seed"])
        pset = baselines.ue_min_min(train, f, eps, **kw) if method == "ue" else \
            baselines.rue_min_min_max(train, f, eps, rho_a=b["rue_rho_a"], **kw)
    elif method == "lsp":
        pset = baselines.lsp_patches(dataset.num_classes, train.image_size, b["lsp_patch_size"], eps, b["seed"])
    else:
        pset = baselines.classwise_random(dataset.num_classes, train.image_size, eps, b["seed"])
    meta = {"method": method, "fidelity": pset.metadata.get("fidelity", "full")}
    return baselines.perturb_batch(train, pset), meta


def parse_methods(text) -> list:
    names = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in names if m not in METHODS]
    if bad or not names:
        raise ArgumentError(f"unknown method(s) {bad or [text]}; valid methods: {', '.join(METHODS)}")
    return [m for m in METHODS if m in names]


def _table(rows, columns):
    widths = [max(len(c), *(len(str(r[c])) for r in rows)) for c in columns]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(str(r[c]).ljust(w) for c, w in zip(columns, widths)) for r in rows]
    return "\n".join(lines)


def cmd_bench(args):
    methods = parse_methods(args.methods)
    cfg = _apply_seed(load_config(args.config), args.seed)
    manifest = _dataset_arg(args, cfg)
    if "segue" in methods and not args.gen:
        raise ArgumentError("method 'segue' needs --gen CHECKPOINT (train one with train-gen)")
    if args.jobs < 1:
        raise ArgumentError("--jobs must be >= 1")
    if args.dry_run:
        read_manifest(manifest)
        print(json.dumps({"command": "bench", "methods": methods, "dataset": str(manifest),
                          "jobs": args.jobs}, indent=1))
        return 0
    dataset = load_dataset(manifest)
    if not dataset.labeled:
        raise ArgumentError("bench needs a labeled dataset")
    G = load_checkpoint(args.gen)[0] if "segue" in methods else None
    run = Run.create("bench", args, cfg, cfg["attack"]["seed"])
    run.dir.mkdir(parents=True, exist_ok=True)
    run.add_input("dataset", manifest, manifest=True)
    if G is not None:
        run.add_input("generator", args.gen)

    timings, specs, quality = {}, {}, {}
    for m in methods:
        times = []
        for _ in range(args.timing_runs):
            t0 = time.perf_counter()
            perturbed, meta = _generate(m, dataset, cfg, G)
            times.append(time.perf_counter() - t0)
        timings[m] = sorted(times)[len(times) // 2]
        out = run.dir / "exports" / m
        from segue.core.dataset import export_unlearnable
        exported = export_unlearnable(dataset, perturbed, out, epsilon=cfg["baselines"]["epsilon"], extra=meta)
        run.add(exported)
        quality[m] = _budget_stats(dataset.train, perturbed)
        # relative to the run directory so reports do not depend on where the run lives
        spec = dict(cfg["attack"], dataset_ref=str(Path(manifest).resolve()),
                    unlearnable_ref=os.path.relpath(exported, run.dir))
        specs[m] = spec
        print(f"{m}: generated in {timings[m]:.2f}s", flush=True)

    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            reports = dict(zip(methods, pool.map(_attack_job, [specs[m] for m in methods],
                                                 [str(run.dir)] * len(methods))))
    else:
        reports = {m: _attack_job(specs[m], str(run.dir)) for m in methods}

    rows, trows = [], []
    for m in methods:
        r = reports[m]
        _save_report(r, run, stem=f"report_{m}")
        rows.append({"method": m, "clean_test_accuracy": f"{r.final_test_accuracy:.4f}",
                     "probe_accuracy": f"{r.metrics.get('probe_accuracy', float('nan')):.4f}",
                     "psnr_min": f"{quality[m]['psnr_min']:.2f}"})
        trows.append({"method": m, "generation_seconds": f"{timings[m]:.3f}"})
    cols = ["method", "clean_test_accuracy", "probe_accuracy", "psnr_min"]
    atomic_write_text(run.dir / "bench.csv", "\n".join([",".join(cols)] + [",".join(r[c] for c in cols)
                                                                          for r in rows]) + "\n")
    atomic_write_text(run.dir / "bench_timings.csv", "method,generation_seconds\n"
                      + "".join(f"{r['method']},{r['generation_seconds']}\n" for r in trows))
    run.add(run.dir / "bench.csv")
    run.add(run.dir / "bench_timings.csv", timing=True)
    merged = [dict(r, generation_seconds=t["generation_seconds"]) for r, t in zip(rows, trows)]
    text = _table(merged, cols + ["generation_seconds"])
    atomic_write_text(run.dir / "bench.txt", text + "\n")
    run.add(run.dir / "bench.txt", timing=True)
    run.finish()
    print(text)
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="segue", description="Unlearnable-example generation and evaluation.")
    p.add_argument("--threads", type=int, default=1, help="torch intra-op threads (1 = deterministic)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="TOML or JSON config (default: shipped paper_defaults)")
        sp.add_argument("--seed", type=int, help="override every seed in the config")
        sp.add_argument("--dry-run", action="store_true", help="validate inputs and exit without writing")

    sp = sub.add_parser("make-fixture", help="render the synthetic shapes dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--classes", type=int, default=10)
    sp.add_argument("--train", type=int, default=200, help="train images per class")
    sp.add_argument("--test", type=int, default=50, help="test images per class")
    sp.add_argument("--size", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--name", default="shapes")
    sp.add_argument("--unlabeled", action="store_true")
    sp.add_argument("--dry-run", action="store_true")
    sp.set_defaults(func=cmd_make_fixture)

    sp = sub.add_parser("train-gen", help="train a perturbation generator")
    common(sp)
    sp.add_argument("--dataset", help="dataset manifest")
    sp.add_argument("--side", help="labels | cluster:K (default from config)")
    sp.add_argument("--proxy", help="labeled proxy manifest for the clustering feature extractor")
    sp.add_argument("--out", default="runs", help="parent directory for the run directory")
    sp.add_argument("--run-dir", help="explicit run directory")
    sp.set_defaults(func=cmd_train_gen)

    sp = sub.add_parser("protect", help="export an unlearnable copy of a dataset")
    common(sp)
    sp.add_argument("--gen", required=True, help="generator checkpoint")
    sp.add_argument("--dataset", help="dataset manifest")
    sp.add_argument("--side", default="labels", help="labels | cluster:K")
    sp.add_argument("--proxy", help="labeled proxy manifest for the clustering feature extractor")
    sp.add_argument("--out", required=True, help="export directory")
    sp.set_defaults(func=cmd_protect)

    sp = sub.add_parser("attack", help="train an attacker and report clean test accuracy")
    common(sp)
    sp.add_argument("--spec", required=True, help="experiment spec (TOML or JSON)")
    sp.add_argument("--out", default="runs")
    sp.add_argument("--run-dir")
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("bench", help="compare perturbation methods end to end")
    common(sp)
    sp.add_argument("--methods", default="segue,ue,lsp,random", help=f"comma list from {','.join(METHODS)}")
    sp.add_argument("--dataset", help="dataset manifest")
    sp.add_argument("--gen", help="trained generator checkpoint (needed for segue)")
    sp.add_argument("--jobs", type=int, default=1, help="attacker runs in parallel")
    sp.add_argument("--timing-runs", type=int, default=1, help="generation repeats; the median is reported")
    sp.add_argument("--out", default="runs")
    sp.add_argument("--run-dir")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    torch.set_num_threads(max(1, args.threads))
    try:
        return args.func(args)
    except SegueError as exc:
        key = getattr(exc, "key", None)
        print(f"error: {exc}" + (f" [key: {key}]" if key and key not in str(exc) else ""), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
