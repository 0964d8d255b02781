"""``pcreal``: command-line entry point.

Every command resolves its configuration (file, ``PCREAL_*`` environment,
``--set``), writes its artifacts under ``--out`` and records a
``run.json`` from which ``pcreal replay`` can repeat the run.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__, checkpoint, config, evaluation, score, train
from .io import FormatError, load_cloud, save_cloud
from .pcgen import CATEGORY_NAMES, derive_seed

log = logging.getLogger("pcrealism")

RUN_FILE = "run.json"


def version_string() -> str:
    """``git describe`` of the source tree, or the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _dataset_by_name(cfg: config.RunConfig, name: str):
    for spec in cfg.dataset_specs():
        if spec.name == name:
            return spec
    raise config.ConfigError(f"no dataset named {name!r}")


# -- commands ------------------------------------------------------------------


def cmd_generate(cfg, args, out: Path) -> dict:
    g = cfg.sections["generate"]
    fmt = g["format"]
    if fmt not in config.FORMATS:
        raise config.ConfigError(f"unknown generate.format {fmt!r}")
    if g["split"] not in config.SPLITS:
        raise config.ConfigError(f"unknown generate.split {g['split']!r}")
    if g["n"] < 0:
        raise config.ConfigError("generate.n must be >= 0")
    split = config.SPLITS[g["split"]]
    seed = cfg.sections["train"]["seed"]
    rows = []
    for spec in cfg.dataset_specs():
        for i in range(g["n"]):
            s = derive_seed(seed, split, spec.dataset_id, i)
            rel = f"{spec.name}/{i:05d}.{fmt}"
            path = out / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            save_cloud(path, spec.generate(s))
            rows.append([rel, spec.dataset_id, spec.name, CATEGORY_NAMES[spec.category], i, s])
    _write(out / "manifest.csv",
           _csv(["file", "dataset_id", "dataset", "category", "index", "seed"], rows))
    return {"files": len(rows)}


def cmd_train(cfg, args, out: Path) -> dict:
    tc = cfg.train_config()
    model = tc.new_model()
    opt = tc.new_optimizer()
    ckdir = out / "checkpoints"
    ckdir.mkdir(parents=True, exist_ok=True)
    every = args.checkpoint_every

    def on_step(step, model, opt, row):
        if every and step % every == 0 and step < tc.steps:
            checkpoint.save(ckdir / f"step_{step:06d}.ckpt", model, opt)

    if tc.steps == 0:
        checkpoint.save(ckdir / "step_000000.ckpt", model, opt)
    model, opt, report = train.train(tc, model, opt, callback=on_step)
    checkpoint.save(out / "model.ckpt", model, opt)
    _write(out / "metrics.csv", report.metrics_csv())
    if report.final is not None:
        ids = [s.dataset_id for s in tc.datasets]
        _write(out / "confusion_classifier.csv",
               train.confusion_csv(report.final.confusion_c, CATEGORY_NAMES, CATEGORY_NAMES))
        labels = [str(i) for i in range(model.u_a)]
        _write(out / "confusion_adversary.csv",
               train.confusion_csv(report.final.confusion_a, labels, labels))
        fin = report.final
        log.info("final ACC_C %.4f  ACC_A %.4f  (cloud vote %.4f, datasets %s)",
                 fin.acc_c, fin.acc_a, fin.acc_a_cloud, ids)
        return {"acc_c": fin.acc_c, "acc_a": fin.acc_a, "acc_a_cloud": fin.acc_a_cloud}
    return {}


def _load_model(path):
    model, _ = checkpoint.load(path)
    return model


def cmd_score(cfg, args, out: Path) -> dict:
    model = _load_model(args.model)
    budget = cfg.sections["score"]["budget"]
    rows = []
    for inp in args.inputs:
        qs = score.score_cloud(model, load_cloud(inp), budget)
        name = Path(inp).name
        _write(out / "scores" / f"{name}.json", qs.to_json() + "\n")
        s = qs.scene
        rows.append([name, *[repr(float(v)) for v in s], CATEGORY_NAMES[int(np.argmax(s))]])
        print(f"{name}: " + "  ".join(f"{c} {v:.3f}" for c, v in zip(CATEGORY_NAMES, s)))
    _write(out / "scores.csv", _csv(["input", "real", "synthetic", "misc", "argmax"], rows))
    return {"inputs": len(rows)}


def cmd_anomaly(cfg, args, out: Path) -> dict:
    model = _load_model(args.model)
    sc = cfg.sections["score"]
    pc = load_cloud(args.input)
    amap = score.anomaly_map(model, pc, k=sc["k"], budget=sc["budget"])
    stem = Path(args.input).name
    amap.write_ply(out / f"{stem}.anomaly.ply")
    _write(out / f"{stem}.queries.csv", amap.scores.to_csv())
    _write(out / f"{stem}.points.csv", _csv(
        ["x", "y", "z", "p_real", "p_synthetic", "p_misc"],
        [[repr(v) for v in (*p, *q)] for p, q in zip(amap.points.tolist(), amap.values.tolist())]))
    return {"points": len(amap.points), "realism": amap.scores.realism}


def cmd_sweep(cfg, args, out: Path) -> dict:
    sw = cfg.sections["sweep"]
    if args.kind == "lambda":
        rows, text = train.lambda_sweep(cfg.train_config(), sw["lambdas"])
        _write(out / "lambda_sweep.csv", text)
        return {"rows": len(rows)}
    model = _load_model(args.model) if args.model else None
    if model is None:
        raise config.ConfigError("the noise sweep needs --model")
    spec = _dataset_by_name(cfg, sw["dataset"])
    seed = cfg.sections["train"]["seed"]
    rows, text = evaluation.noise_sweep(model, spec.generate, sw["sigmas"], sw["n_clouds"],
                                        seed=derive_seed(seed, 4, spec.dataset_id),
                                        budget=cfg.sections["score"]["budget"])
    _write(out / "noise_sweep.csv", text)
    return {"rows": len(rows)}


def cmd_eval(cfg, args, out: Path) -> dict:
    ev = cfg.sections["eval"]
    spec = _dataset_by_name(cfg, ev["dataset"])
    seed = cfg.sections["train"]["seed"]
    clouds = [spec.generate(derive_seed(seed, 1, spec.dataset_id, i)) for i in range(ev["n_scans"])]
    model = _load_model(args.model) if args.model else None
    rows, text = evaluation.upsampling_baselines(clouds, spec.pattern(), ev["factor"], model,
                                                 cfg.sections["score"]["budget"])
    _write(out / "baselines.csv", text)
    return {"scans": len(rows)}


def cmd_features(cfg, args, out: Path) -> dict:
    model = _load_model(args.model)
    clouds = [load_cloud(p) for p in args.inputs]
    table = score.export_features(model, clouds, cfg.sections["score"]["budget"])
    _write(out / "features.csv", table.to_csv())
    return {"rows": len(table.z)}


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "score": cmd_score,
    "anomaly": cmd_anomaly,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
    "features": cmd_features,
}


# -- plumbing ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="global seed (overrides train.seed)")
    common.add_argument("--out", help="output directory (default: runs/<command>)")
    common.add_argument("--threads", type=int,
                        help="BLAS threads (default: available cores)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pcreal", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pcreal {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write dataset samples and a manifest")
    t = sub.add_parser("train", parents=[common], help="train the metric network")
    t.add_argument("--checkpoint-every", type=int, default=0)
    s = sub.add_parser("score", parents=[common], help="scene and query scores as JSON")
    s.add_argument("--model", required=True)
    s.add_argument("inputs", nargs="+")
    a = sub.add_parser("anomaly", parents=[common], help="per-point anomaly map (PLY + CSV)")
    a.add_argument("--model", required=True)
    a.add_argument("input")
    w = sub.add_parser("sweep", parents=[common], help="lambda or noise sweep")
    w.add_argument("kind", choices=["lambda", "noise"])
    w.add_argument("--model")
    e = sub.add_parser("eval", parents=[common], help="range-image up-sampling baselines")
    e.add_argument("--model")
    f = sub.add_parser("features", parents=[common], help="export latent features")
    f.add_argument("--model", required=True)
    f.add_argument("inputs", nargs="+")
    r = sub.add_parser("replay", help="repeat a run from its run.json")
    r.add_argument("run_file")
    r.add_argument("--out", help="output directory (default: the recorded one)")
    r.add_argument("--threads", type=int)
    r.add_argument("-v", "--verbose", action="store_true")
    return p


ARG_FIELDS = ("model", "inputs", "input", "kind", "checkpoint_every")


def _limit_threads(n):
    if n is None:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, n))


def execute(command: str, cfg: config.RunConfig, cmd_args: dict, out: Path, threads=None) -> dict:
    """Run one command and record ``run.json`` in ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    ns = argparse.Namespace(**{k: cmd_args.get(k) for k in ARG_FIELDS})
    limiter = _limit_threads(threads)
    try:
        result = COMMANDS[command](cfg, ns, out)
    finally:
        if limiter is not None:
            limiter.unregister()
    record = {
        "command": command,
        "args": {k: v for k, v in cmd_args.items() if v is not None},
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seed": cfg.sections["train"]["seed"],
        "version": version_string(),
        "out": str(out),
    }
    _write(out / RUN_FILE, json.dumps(record, indent=1, sort_keys=True) + "\n")
    return result


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        if args.command == "replay":
            rec = json.loads(Path(args.run_file).read_text(encoding="utf-8"))
            cfg = config.RunConfig.from_dict(rec["config"])
            out = Path(args.out or rec["out"])
            threads = args.threads
            execute(rec["command"], cfg, rec["args"], out, threads)
            return 0
        cfg = config.load(args.config, args.set)
        if args.seed is not None:
            cfg.set("train", "seed", args.seed)
        out = Path(args.out or os.environ.get("PCREAL_OUT") or f"runs/{args.command}")
        threads = args.threads
        if threads is None and os.environ.get("PCREAL_THREADS"):
            threads = int(os.environ["PCREAL_THREADS"])
        cmd_args = {k: getattr(args, k) for k in ARG_FIELDS if hasattr(args, k)}
        # absolute paths so run.json alone is enough to repeat the run
        for k in ("model", "input"):
            if cmd_args.get(k):
                cmd_args[k] = str(Path(cmd_args[k]).resolve())
        if cmd_args.get("inputs"):
            cmd_args["inputs"] = [str(Path(p).resolve()) for p in cmd_args["inputs"]]
        execute(args.command, cfg, cmd_args, out, threads)
    except (FileNotFoundError, FormatError, config.ConfigError, PermissionError,
            NotADirectoryError, IsADirectoryError, KeyError, ValueError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"pcreal: error: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
