"""Command-line entry point: ``sscnet <subcommand> ...``.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 runtime
error. Subcommands that write files build the output directory under a
temporary name and rename it into place only once everything is written.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import platform
import shutil
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .layout import LayerSpec, LayoutError, build_layer_layout, export_layout, structure_tag

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3
log = logging.getLogger("sscnet")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# output directories and manifests


@contextlib.contextmanager
def atomic_dir(path):
    """Yield a temporary directory that replaces ``path`` on success."""
    if path is None:
        yield None
        return
    final = Path(path).resolve()
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{final.name}.", dir=final.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    old = None
    if final.exists():
        old = final.with_name(f".{final.name}.old-{os.getpid()}")
        final.rename(old)
    tmp.rename(final)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


def code_version() -> str:
    here = Path(__file__).resolve().parent
    try:
        rev = subprocess.run(["git", "-C", str(here), "rev-parse", "--short", "HEAD"],
                             capture_output=True, text=True, timeout=5)
        if rev.returncode == 0:
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out: Path, command: str, argv, **extra) -> None:
    from .tensorops import DEFAULT_BACKEND
    doc = {
        "command": command,
        "argv": list(argv),
        "code_version": code_version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "kernel_backend": DEFAULT_BACKEND,
        "config_precedence": "cli overrides > config file > defaults",
        "created_unix_s": time.time(),
    }
    doc.update(extra)
    (out / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True, default=str))


# --------------------------------------------------------------------------
# shared argument helpers


def _add_spec_args(p, need_n=True):
    p.add_argument("--M", type=int, required=True, help="input channels")
    if need_n:
        p.add_argument("--N", type=int, required=True, help="filters")
    p.add_argument("--K", type=int, default=3, help="kernel size (odd)")
    p.add_argument("--g", type=int, default=2, help="K x K kernel interval (0 = none)")
    p.add_argument("--p", type=int, default=2, help="1x1 kernel interval (0 = none)")
    p.add_argument("--parity-policy", default="block_halves",
                   choices=["block_halves", "alternating", "odd_only", "even_only"])
    p.add_argument("--kernel-style", default="sparse", choices=["sparse", "standard"])


def _spec(a) -> LayerSpec:
    try:
        return LayerSpec(a.M, a.N, a.K, a.g, a.p, a.parity_policy, a.kernel_style)
    except LayoutError as e:
        raise UsageError(str(e)) from None


def _overrides(pairs) -> dict:
    out = {}
    for s in pairs or []:
        if "=" not in s:
            raise UsageError(f"--set expects key=value, got {s!r}")
        k, v = s.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# --------------------------------------------------------------------------
# subcommands


def cmd_layout(a) -> int:
    from .costmodel import CSV_FIELDS, format_table, layer_cost, to_csv
    spec = _spec(a)
    layout = build_layer_layout(spec)
    report = layer_cost(layout, a.i_l)
    tag = structure_tag(layout)
    print(f"layer M={spec.M} N={spec.N} K={spec.K} g={spec.g} p={spec.p} "
          f"policy={spec.parity_policy.value} style={spec.kernel_style.value}")
    print(f"structure: {tag}; q={spec.q}; groups={len(layout.groups)}")
    print(format_table(report, "cost"))
    print(f"layer R_p = {report.reduction_params:.2f}%")
    with atomic_dir(a.out) as out:
        if out is not None:
            (out / "layout.json").write_text(export_layout(layout))
            (out / "cost.csv").write_text(to_csv([report], [tag]))
            write_manifest(out, "layout", sys.argv[1:], spec=spec.to_dict(),
                           cost_csv_fields=CSV_FIELDS)
    return EXIT_OK


def cmd_cost(a) -> int:
    from .costmodel import format_table, layer_cost, solve_hyperparams, ssc_cost, to_csv
    if a.target_rp is not None:
        try:
            sols = solve_hyperparams(a.target_rp, a.K, a.M, a.tolerance, a.parity)
        except ValueError as e:
            raise UsageError(str(e)) from None
        print("g,p,achieved_rp")
        for g, p, rp in sols:
            print(f"{g},{p},{rp:.4f}")
        if not sols:
            print(f"# no divisor-valid (g, p) within {a.tolerance} of {a.target_rp}%")
        return EXIT_OK
    if a.N is None:
        raise UsageError("--N is required unless --target-rp is given")
    spec = _spec(a)
    if a.parity in ("odd", "even"):
        report = ssc_cost(spec, a.i_l, a.parity)
    else:
        report = layer_cost(build_layer_layout(spec), a.i_l)
    print(to_csv([report]), end="")
    print(format_table(report, f"cost ({a.parity})"))
    return EXIT_OK


def cmd_verify(a) -> int:
    from . import verify
    checks = verify.run(a.scope, inject_corruption=a.inject_corruption, seed=a.seed)
    for c in checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.scope}/{c.name} ({c.seconds:.2f}s): {c.detail}")
    summary = {"scope": a.scope, "inject_corruption": a.inject_corruption,
               "passed": all(c.passed for c in checks), "checks": [c.as_dict() for c in checks]}
    text = json.dumps(summary, indent=1)
    if a.json:
        Path(a.json).write_text(text)
    else:
        print(text)
    return EXIT_OK if summary["passed"] else EXIT_VERIFY


def _data_summary(ds) -> dict:
    return {"name": ds.name, "split": ds.split, "n": len(ds), "checksum": ds.checksum,
            "mean": ds.mean.tolist(), "std": ds.std.tolist()}


def _used(ds, cfg) -> int:
    from .data import subsample_indices
    return len(subsample_indices(ds, cfg.data_fraction, cfg.seed))


def _load_data(name, root):
    from .data import load_dataset
    try:
        return load_dataset(name, root)
    except FileNotFoundError as e:
        raise RuntimeError(f"dataset {name!r} not found under the data root ({e}); "
                           f"set --data-dir or SSC_DATA_DIR") from None


def cmd_train(a) -> int:
    from .autograd import config_text, load_config, train
    from .autograd.train import ConfigError
    try:
        cfg = load_config(a.config, _overrides(a.set))
    except ConfigError as e:
        raise UsageError(str(e)) from None
    tr, te = _load_data(cfg.dataset, a.data_dir)
    with atomic_dir(a.out) as out:
        (out / "config.txt").write_text(config_text(cfg))
        res = train(cfg, tr, te, out)
        write_manifest(out, "train", sys.argv[1:], config=cfg.to_mapping(),
                       data_fraction=cfg.data_fraction, train_samples_used=_used(tr, cfg),
                       data={"train": _data_summary(tr), "test": _data_summary(te)},
                       final={r.split: r.accuracy for r in res.records if r.epoch == cfg.epochs})
    print(f"final test accuracy {res.last('test').accuracy:.4f}" if te is not None else "done")
    return EXIT_OK


def cmd_transfer(a) -> int:
    from .autograd import config_text, load_config, transfer
    from .autograd.train import ConfigError, LayoutMismatchError
    if not Path(a.checkpoint).is_file():
        raise RuntimeError(f"checkpoint {a.checkpoint} not found")
    try:
        cfg = load_config(a.config, _overrides(a.set))
    except ConfigError as e:
        raise UsageError(str(e)) from None
    tr, te = _load_data(cfg.dataset, a.data_dir)
    try:
        with atomic_dir(a.out) as out:
            (out / "config.txt").write_text(config_text(cfg))
            res = transfer(a.checkpoint, cfg, tr, te, out)
            write_manifest(out, "transfer", sys.argv[1:], config=cfg.to_mapping(),
                           source_checkpoint=str(Path(a.checkpoint).resolve()),
                           data_fraction=cfg.data_fraction, train_samples_used=_used(tr, cfg),
                           data={"train": _data_summary(tr), "test": _data_summary(te)},
                           final={r.split: r.accuracy for r in res.records if r.epoch == cfg.epochs})
    except LayoutMismatchError as e:
        raise UsageError(str(e)) from None
    print(f"final test accuracy {res.last('test').accuracy:.4f}")
    return EXIT_OK


def cmd_bench(a) -> int:
    from .tensorops import available_backends
    from .tensorops.bench import benchmark_conv, default_grid, format_rows, rows_to_csv
    backends = a.backend or available_backends()
    rows = benchmark_conv(default_grid(a.M, a.N), repetitions=a.reps, batch=a.batch,
                          size=a.size, backends=backends, seed=a.seed)
    print(format_rows(rows))
    with atomic_dir(a.out) as out:
        if out is not None:
            (out / "bench.csv").write_text(rows_to_csv(rows))
            write_manifest(out, "bench", sys.argv[1:], backends=backends)
    return EXIT_OK


def cmd_analyze(a) -> int:
    from .analysis import compare_models, model_report
    from .autograd import load_model
    from .tensorops import CheckpointError
    reports = []
    for path in a.checkpoint:
        if not Path(path).is_file():
            raise RuntimeError(f"checkpoint {path} not found")
        try:
            model, meta = load_model(path)
        except CheckpointError as e:
            raise RuntimeError(str(e)) from None
        tag = a.tag[len(reports)] if a.tag and len(a.tag) > len(reports) else (
            f"{model.meta['conv']}:{Path(path).parent.name}")
        reports.append(model_report(model, tag))
    for r in reports:
        print(r.to_csv(), end="")
    cmp = compare_models(reports) if len(reports) > 1 else None
    if cmp is not None:
        print(cmp.csv, end="")
        print(cmp.summary())
    with atomic_dir(a.out) as out:
        if out is not None:
            (out / "correlation.csv").write_text(
                "".join(r.to_csv() if i == 0 else r.to_csv().split("\n", 1)[1]
                        for i, r in enumerate(reports)))
            if cmp is not None:
                (out / "comparison.csv").write_text(cmp.csv)
            write_manifest(out, "analyze", sys.argv[1:], checkpoints=a.checkpoint,
                           lower_counts=cmp.lower_counts if cmp else None)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sscnet", description="Structured sparse convolution toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("layout", help="build a layer layout and report its cost")
    _add_spec_args(p)
    p.add_argument("--i-l", type=int, default=8, help="output spatial size for FLOP counts")
    p.add_argument("--out", help="directory for layout.json, cost.csv, manifest.json")
    p.set_defaults(fn=cmd_layout)

    p = sub.add_parser("cost", help="cost report or hyperparameter search")
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--N", type=int)
    p.add_argument("--K", type=int, default=3)
    p.add_argument("--g", type=int, default=2)
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--parity-policy", default="block_halves",
                   choices=["block_halves", "alternating", "odd_only", "even_only"])
    p.add_argument("--kernel-style", default="sparse", choices=["sparse", "standard"])
    p.add_argument("--i-l", type=int, default=8)
    p.add_argument("--parity", default="mixed", choices=["mixed", "odd", "even"])
    p.add_argument("--target-rp", type=float, help="search (g, p) for this R_p percentage")
    p.add_argument("--tolerance", type=float, default=0.5)
    p.set_defaults(fn=cmd_cost)

    p = sub.add_parser("verify", help="run the self-check suites")
    p.add_argument("--scope", default="all", choices=["all", "layout", "cost", "oracle", "grad", "ortho"])
    p.add_argument("--inject-corruption", action="store_true",
                   help="negative control: corrupt one mask position in the SSC kernel plan")
    p.add_argument("--json", help="write the JSON summary here instead of stdout")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_verify)

    for name, fn, helptext in (("train", cmd_train, "train from scratch"),
                               ("transfer", cmd_transfer, "fine-tune a checkpoint on another dataset")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
        p.add_argument("--out", required=True)
        p.add_argument("--data-dir", help="dataset root (default $SSC_DATA_DIR)")
        if name == "transfer":
            p.add_argument("--checkpoint", required=True)
        p.set_defaults(fn=fn)

    p = sub.add_parser("bench", help="dense vs SSC convolution throughput")
    p.add_argument("--M", type=int, default=32)
    p.add_argument("--N", type=int, default=32)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--reps", type=int, default=9)
    p.add_argument("--backend", action="append", choices=["compiled", "python"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("analyze", help="filter correlation of trained checkpoints")
    p.add_argument("--checkpoint", action="append", required=True,
                   help="checkpoint path; repeat to compare (first is the reference)")
    p.add_argument("--tag", action="append", help="model tag per checkpoint")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_analyze)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.fn(a)
    except UsageError as e:
        print(f"sscnet {a.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # runtime failures map to exit code 3
        log.debug("runtime error", exc_info=True)
        print(f"sscnet {a.command}: runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
