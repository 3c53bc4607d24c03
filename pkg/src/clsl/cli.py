"""Command-line entry points.

Configuration is resolved in increasing precedence: field defaults, the
command's base config, ``--preset``, ``--config FILE`` (flat JSON), ``CLSL_*``
environment variables, then explicit flags. Every field of
:class:`~clsl.config.RunConfig` has a flag; component toggles are spelled
``--toggle-<name> on|off``.

Exit codes: 0 ok, 1 other failure, 2 configuration error, 3 data error,
4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys

import numpy as np

from .config import PRESETS, TOGGLES, RunConfig, ablation_configs, coerce
from .data import generate, mask_labels, read_dataset, write_dataset
from .errors import ClslError, ConfigError, DataError
from .model import Model
from .recovery import fill_pseudo, write_pseudo_csv
from .seeding import derive_seed, rng_for
from .sgfe import AttentionMaps, write_attention_csv
from .trainer import ExperimentReport, evaluate, infer, loss_gradcheck, run_experiment

log = logging.getLogger("clsl")

ENV_PREFIX = "CLSL_"
SWEEP_RATIOS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
ABLATION_RATIOS = (0.1, 0.3, 0.5, 0.7, 0.9)

# Small graph for finite-difference checks: every parameter entry costs two
# forward passes.
GRADCHECK_BASE = RunConfig(
    num_images=40, n_test=10, num_classes=3, patches=4, d_raw=4, d_v=8, d_t=4, d_1=6, d_2=5, p=0.5
)


def flag_name(field: str) -> str:
    return f"--toggle-{field.replace('_', '-')}" if field in TOGGLES else f"--{field.replace('_', '-')}"


def env_name(field: str) -> str:
    return ENV_PREFIX + field.upper()


def write_csv_atomic(path: str | os.PathLike, header, rows) -> None:
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def parse_ratios(text: str) -> list[float]:
    try:
        ratios = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse ratio list {text!r}") from None
    if not ratios or any(not 0.0 < r <= 1.0 for r in ratios):
        raise ConfigError(f"ratios must be a non-empty list within (0, 1], got {text!r}")
    return ratios


# ---------------------------------------------------------------------------
# configuration resolution


def resolve_config(args: argparse.Namespace, base: RunConfig, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    known = {f.name: f for f in dataclasses.fields(RunConfig)}
    values = base.to_dict()
    if getattr(args, "preset", None):
        values.update(PRESETS[args.preset].to_dict())
    if getattr(args, "config", None):
        values.update(RunConfig.read_json(args.config).to_dict())
    for name, f in known.items():
        if env_name(name) in environ:
            values[name] = coerce(f, environ[env_name(name)])
    for name, f in known.items():
        if name in vars(args):
            values[name] = coerce(f, getattr(args, name))
    return RunConfig.from_dict(values)


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("run configuration (flags override CLSL_* env, which override --config)")
    group.add_argument("--preset", choices=sorted(PRESETS), default=None, help="start from a named preset")
    group.add_argument("--config", metavar="FILE", default=None, help="flat JSON file of config fields")
    defaults = RunConfig()
    for f in dataclasses.fields(RunConfig):
        default = getattr(defaults, f.name)
        if f.name in TOGGLES:
            shown = "on" if default else "off"
            metavar = "on|off"
        else:
            shown, metavar = default, f.type.upper() if isinstance(f.type, str) else "X"
        group.add_argument(
            flag_name(f.name),
            dest=f.name,
            metavar=metavar,
            default=argparse.SUPPRESS,
            help=f"{f.name} (default: {shown}; env {env_name(f.name)})",
        )


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args, cfg: RunConfig) -> int:
    ds = generate(cfg.synthetic_spec())
    write_dataset(ds, args.out)
    log.info("wrote %d images to %s", len(ds), args.out)
    return 0


def cmd_mask(args, cfg: RunConfig) -> int:
    ds = read_dataset(args.data)
    out = mask_labels(ds, cfg.p, derive_seed(cfg.seed, "mask", cfg.p), cfg.mask_strategy)
    write_dataset(out, args.out)
    log.info("masked %s at p=%s into %s", args.data, cfg.p, args.out)
    return 0


def _load_or_generate(args, cfg):
    if getattr(args, "data", None):
        return read_dataset(args.data), bool(getattr(args, "remask", False))
    return generate(cfg.synthetic_spec()), True


def cmd_train(args, cfg: RunConfig) -> int:
    dataset, remask = _load_or_generate(args, cfg)
    report = run_experiment(cfg, dataset, remask=remask, out_dir=args.out_dir)
    auc = report.recovery.auc
    print(f"map {report.map:.6f} recovery_auc {'n/a' if auc is None else f'{auc:.6f}'}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    model = Model.load(args.checkpoint)
    ds = read_dataset(args.data)
    if len(ds) == 0:
        raise DataError(f"{args.data}: no images to evaluate")
    aps, m = evaluate(infer(model, ds.patches), ds)
    if args.out:
        labels = ds.full if ds.full is not None else ds.observed
        rows = [[c, "" if a is None else repr(a), int(labels[:, c].sum())] for c, a in enumerate(aps)]
        write_csv_atomic(args.out, ["class", "ap", "num_pos"], rows)
    print(f"map {m:.6f}")
    return 0


def sweep_p(cfg: RunConfig, dataset, ratios, out_dir=None) -> list[ExperimentReport]:
    """One masked training run per ratio, in ratio order; each run writes to ``out_dir/p<ratio>``."""
    reports = []
    for p in ratios:
        run_dir = None if out_dir is None else os.path.join(out_dir, f"p{p:g}")
        reports.append(run_experiment(cfg.replace(p=p), dataset, out_dir=run_dir))
        log.info("p=%g map=%.4f", p, reports[-1].map)
    return reports


def write_sweep_csv(path: str | os.PathLike, reports: list[ExperimentReport]) -> None:
    rows = [[repr(r.config.p), _fmt(r.map), _fmt(r.recovery.auc)] for r in reports]
    write_csv_atomic(path, ["p", "map", "recovery_auc"], rows)


def cmd_sweep_p(args, cfg: RunConfig) -> int:
    ratios = parse_ratios(args.ratios) if args.ratios else list(SWEEP_RATIOS)
    dataset = read_dataset(args.data) if args.data else generate(cfg.synthetic_spec())
    os.makedirs(args.out_dir, exist_ok=True)
    reports = sweep_p(cfg, dataset, ratios, args.out_dir)
    write_sweep_csv(os.path.join(args.out_dir, "sweep.csv"), reports)
    for r in reports:
        auc = r.recovery.auc
        print(f"p={r.config.p:g} map={r.map:.4f} recovery_auc={'n/a' if auc is None else f'{auc:.4f}'}")
    return 0


def ablate(cfg: RunConfig, dataset, ratios) -> list[tuple[str, RunConfig, list[float]]]:
    out = []
    for label, row_cfg in ablation_configs(cfg):
        maps = [run_experiment(row_cfg.replace(p=p), dataset).map for p in ratios]
        log.info("%s %s", label, maps)
        out.append((label, row_cfg, maps))
    return out


def cmd_ablate(args, cfg: RunConfig) -> int:
    ratios = parse_ratios(args.ratios) if args.ratios else list(ABLATION_RATIOS)
    dataset = read_dataset(args.data) if args.data else generate(cfg.synthetic_spec())
    rows = ablate(cfg, dataset, ratios)
    header = ["row", *TOGGLES, *[f"p{p:g}" for p in ratios], "avg"]
    body = [
        [label, *[int(row_cfg.toggles[t]) for t in TOGGLES], *[repr(m) for m in maps], repr(float(np.mean(maps)))]
        for label, row_cfg, maps in rows
    ]
    write_csv_atomic(args.out, header, body)
    for line in body:
        print(",".join(str(x) for x in line))
    return 0


def gradcheck_instances(cfg: RunConfig, n: int, batch: int = 2, h: float = 1e-5, tol: float = 1e-4):
    """Yield a whole-loss gradient check report for each of ``n`` seeded instances."""
    for i in range(n):
        icfg = cfg.replace(seed=derive_seed(cfg.seed, "gradcheck", i))
        ds = mask_labels(generate(icfg.replace(data_seed=icfg.seed).synthetic_spec()), cfg.p, icfg.seed)
        pick = rng_for(icfg.seed, "batch").choice(len(ds), size=min(batch, len(ds)), replace=False)
        yield loss_gradcheck(Model(icfg), ds.patches[pick], ds.observed[pick], h=h, tol=tol)


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    worst = 0.0
    failed = []
    for i, report in enumerate(gradcheck_instances(cfg, args.instances, args.batch, args.h, args.tol)):
        worst = max(worst, report.max_rel_err)
        print(f"instance {i} max_rel_err {report.max_rel_err:.3e} worst {report.worst_input}{list(report.worst_index)}")
        if not report.passed:
            failed.append(i)
    print(f"worst {worst:.3e} tol {args.tol:g} {'FAIL' if failed else 'ok'}")
    return 4 if failed else 0


def _samples(args):
    ds = read_dataset(args.data)
    if args.limit is not None:
        ds = ds.subset(range(min(args.limit, len(ds))))
    return ds


def cmd_dump_attn(args, cfg: RunConfig) -> int:
    model = Model.load(args.checkpoint)
    if not model.cfg.sgfe:
        raise ConfigError("checkpoint has no semantic attention (sgfe toggle off)")
    ds = _samples(args)
    os.makedirs(args.out_dir, exist_ok=True)
    for i, img in enumerate(ds.ids):
        out = model.forward(ds.patches[i])
        maps = AttentionMaps(out.attention.value, out.attention_weights.value)
        write_attention_csv(os.path.join(args.out_dir, f"attn_{img}.csv"), maps)
    print(f"wrote {len(ds)} attention maps to {args.out_dir}")
    return 0


def cmd_dump_pseudo(args, cfg: RunConfig) -> int:
    model = Model.load(args.checkpoint)
    ds = _samples(args)
    ytilde = fill_pseudo(ds.observed, infer(model, ds.patches))
    tmp = f"{args.out}.tmp"
    write_pseudo_csv(tmp, ds.ids, ds.observed, ytilde)
    os.replace(tmp, args.out)
    print(f"wrote pseudo-labels for {len(ds)} images to {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clsl", description="Multi-label learning with incomplete labels.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name, fn, help_text, base=None):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(handler=fn, base=base or RunConfig())
        return p

    p = command("gen-data", cmd_gen_data, "generate a fully labelled synthetic dataset (JSON lines)")
    p.add_argument("--out", required=True)
    add_config_flags(p)

    p = command("mask", cmd_mask, "hide labels of a dataset file at the configured ratio p")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    add_config_flags(p)

    p = command("train", cmd_train, "train one model and write metrics, config and checkpoints")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--data", help="dataset file; its observed labels are used as-is unless --remask")
    p.add_argument("--remask", action="store_true")
    add_config_flags(p)

    p = command("eval", cmd_eval, "mAP of a checkpoint on a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="per-class AP CSV (class,ap,num_pos)")

    p = command("ablate", cmd_ablate, "six-row cumulative component grid over known-label ratios")
    p.add_argument("--out", required=True)
    p.add_argument("--ratios", help="comma-separated known-label ratios (default 0.1,0.3,0.5,0.7,0.9)")
    p.add_argument("--data")
    add_config_flags(p)

    p = command("sweep-p", cmd_sweep_p, "train and evaluate at each known-label ratio")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--ratios", help="comma-separated known-label ratios (default 0.1,...,0.9)")
    p.add_argument("--data")
    add_config_flags(p)

    p = command("gradcheck", cmd_gradcheck, "finite-difference check of the whole objective", GRADCHECK_BASE)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--batch", type=int, default=2, help="images per instance")
    p.add_argument("--h", type=float, default=1e-5, help="central-difference step")
    p.add_argument("--tol", type=float, default=1e-4)
    add_config_flags(p)

    p = command("dump-attn", cmd_dump_attn, "per-image attention logits and weights (one CSV per image)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--limit", type=int)

    p = command("dump-pseudo", cmd_dump_pseudo, "recovered label matrix as image_id,class,known,ytilde")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args, args.base)
        return args.handler(args, cfg)
    except ClslError as err:
        print(f"clsl {args.command}: {err}", file=sys.stderr)
        return err.exit_code
    except AssertionError as err:
        print(f"clsl {args.command}: internal invariant violated: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
