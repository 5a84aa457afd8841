"""Command-line entry point: ``unfold-pansharp <command> [flags]``."""
import argparse
import csv
import os
import sys

import numpy as np

from . import config as C
from .baselines import KINDS, fuse_baseline
from .data import export_png, load_manifest, load_split, make_dataset
from .errors import ContractViolation, DataIOError, PansharpError
from .metrics import MetricReport, all_metrics, read_report_csv
from .model import ModelConfig, UnfoldedModel, load_checkpoint, save_checkpoint
from .solver import EnergyParams, low_frequency_inputs, primal_dual_solve
from .tenfile import ensure_dir, load_ten, save_ten
from .training import TrainConfig, finetune_post, predict, train

EXIT_CODES = {
    "config": 2,
    "contract": 2,
    "degenerate": 2,
    "io": 3,
    "version": 4,
    "numerical": 5,
    "divergence": 5,
}


def log(msg):
    print(msg, file=sys.stderr)


def _resolve(args, flags):
    file_values = C.read_config_file(args.config) if getattr(args, "config", None) else {}
    cfg = C.resolve(file_values, flags)
    for line in C.describe(cfg):
        log(f"config: {line}")
    return cfg


def _common(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)


def _rgb_bands(c):
    return (min(2, c - 1), min(1, c - 1), 0)


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args):
    counts = tuple(int(x) for x in args.counts.split(",")) if args.counts else None
    cfg = _resolve(
        args,
        {
            "seed": args.seed,
            "data.samples": args.samples,
            "data.counts": counts,
            "data.channels": args.channels,
            "data.patch": args.patch,
            "data.s": args.s,
            "data.sigma": args.sigma,
        },
    )
    d = cfg.data
    man = make_dataset(
        args.out, samples=d.samples, counts=d.counts, channels=d.channels, patch=d.patch, s=d.s, sigma=d.sigma,
        seed=cfg.seed,
    )
    sizes = {k: len(v) for k, v in man["splits"].items()}
    print(f"wrote {args.out}: train={sizes['train']} val={sizes['val']} test={sizes['test']}")


def _model_flags(args):
    return {
        "model.stages": args.stages,
        "model.variant": args.variant,
        "model.features": args.features,
        "model.radius": args.radius,
        "model.dtype": args.dtype,
    }


def cmd_train(args):
    flags = dict(_model_flags(args), seed=args.seed)
    flags.update({"train.epochs": args.epochs, "train.lr": args.lr, "train.batch_size": args.batch_size})
    cfg = _resolve(args, flags)
    man = load_manifest(args.data)
    mcfg = _model_for_data(cfg.model, man, cfg.sources)
    tcfg = TrainConfig(**dict(cfg.train.to_dict(), seed=cfg.seed))
    model = UnfoldedModel(mcfg, seed=cfg.seed)
    res = train(model, load_split(args.data, "train", man), load_split(args.data, "val", man), tcfg, ckpt_dir=args.out)
    print(f"best val PSNR {res.best_val_psnr:.4f} dB at epoch {res.best_epoch}; checkpoint in {args.out}")


def _model_for_data(mcfg, man, sources):
    vals = mcfg.to_dict()
    for key in ("channels", "s"):
        if sources.get(f"model.{key}") and vals[key] != man[key]:
            raise ContractViolation(f"model.{key}={vals[key]} conflicts with dataset {key}={man[key]}")
        vals[key] = man[key]
    return ModelConfig(**vals)


def cmd_finetune(args):
    cfg = _resolve(args, {"seed": args.seed, "train.finetune_epochs": args.epochs, "train.lr": args.lr})
    model, manifest = load_checkpoint(args.ckpt)
    man = load_manifest(args.data)
    _check_data(model.cfg, man)
    tcfg = TrainConfig(**dict(cfg.train.to_dict(), seed=cfg.seed))
    out = args.out or args.ckpt
    res = finetune_post(model, load_split(args.data, "train", man), load_split(args.data, "val", man), tcfg, ckpt_dir=out)
    if res.best_epoch == 0:
        save_checkpoint(model, out, epoch=manifest.get("epoch", 0), best_val_psnr=res.best_val_psnr,
                        extra={"phase": "finetune"})
    print(f"finetuned val PSNR {res.best_val_psnr:.4f} dB (epoch {res.best_epoch}); checkpoint in {out}")


def _check_data(mcfg, man):
    if man["channels"] != mcfg.channels or man["s"] != mcfg.s:
        raise ContractViolation(
            f"dataset has {man['channels']} bands at s={man['s']}, model expects {mcfg.channels} at s={mcfg.s}"
        )


def _load_model(args):
    expect = None
    if getattr(args, "config", None):
        raw = C.read_config_file(args.config)
        expect = ModelConfig.from_dict(raw.get("model", {}), "config.model") if "model" in raw else None
    model, _ = load_checkpoint(args.ckpt, expect)
    return model


def cmd_fuse(args):
    model = _load_model(args)
    man = load_manifest(args.data)
    _check_data(model.cfg, man)
    samples = load_split(args.data, args.split, man)
    ensure_dir(args.out)
    for smp, fused in zip(samples, predict(model, samples)):
        save_ten(os.path.join(args.out, f"{smp.sample_id}.ten"), fused)
        if args.png:
            export_png(fused, _rgb_bands(fused.shape[0]), os.path.join(args.out, f"{smp.sample_id}.png"))
    print(f"fused {len(samples)} samples into {args.out}")


def cmd_solve(args):
    cfg = _resolve(
        args,
        {
            "seed": args.seed,
            "solve.lam": args.lam,
            "solve.beta": args.beta,
            "solve.mu": args.mu,
            "solve.max_iter": args.max_iter,
            "solve.tol": args.tol,
        },
    )
    Y = load_ten(args.lowres).astype(np.float64)
    P = load_ten(args.pan).astype(np.float64)
    if Y.ndim != 3:
        raise ContractViolation(f"solve: low-res must be C x h x w, got {Y.shape}")
    P = P.reshape(P.shape[-2:])
    s = args.s
    if P.shape != (Y.shape[1] * s, Y.shape[2] * s):
        raise ContractViolation(f"solve: PAN {P.shape} does not match low-res {Y.shape} at s={s}")
    sc = cfg.solve
    params = EnergyParams(lam=sc.lam, beta=sc.beta, mu=sc.mu, s=s)
    p_hat, h_hat = low_frequency_inputs(Y, P, params)
    res = primal_dual_solve(Y, P, p_hat, h_hat, params, max_iter=sc.max_iter, tol=sc.tol)
    save_ten(args.out, res.u)
    trace = args.trace or os.path.splitext(args.out)[0] + "_trace.csv"
    try:
        with open(trace, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("iteration", "energy", "residual"))
            for i, e in enumerate(res.energy):
                w.writerow((i, repr(e), repr(res.residual[i - 1]) if i else ""))
    except OSError as exc:
        raise DataIOError(f"cannot write {trace}: {exc.strerror}") from exc
    print(f"{res.iterations} iterations, converged={res.converged}, energy={res.energy[-1]:.6e}")


def _pred_path(args, sid):
    if args.pred_file:
        return os.path.join(args.pred, sid, args.pred_file)
    return os.path.join(args.pred, f"{sid}.ten")


def cmd_eval(args):
    man = load_manifest(args.data)
    samples = load_split(args.data, args.split, man)
    rep = MetricReport(split=args.split)
    for smp in samples:
        x = load_ten(_pred_path(args, smp.sample_id)).astype(np.float64)
        rep.add(smp.sample_id, all_metrics(x, smp.gt, man["s"], args.peak))
    rep.to_csv(args.out)
    print(rep.summary())


def cmd_baseline(args):
    man = load_manifest(args.data)
    samples = load_split(args.data, args.split, man)
    ensure_dir(args.out)
    for smp in samples:
        fused = fuse_baseline(args.kind, smp.lowres, smp.pan, man["s"])
        save_ten(os.path.join(args.out, f"{smp.sample_id}.ten"), fused)
    print(f"{args.kind}: fused {len(samples)} samples into {args.out}")


def _parse_methods(items, flag):
    out = {}
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise ContractViolation(f"{flag} expects METHOD=CSV, got {item!r}")
        out[name] = path
    return out


def rank_methods(scores):
    """Rank 1 = highest PSNR; ties broken by method name."""
    order = sorted(scores, key=lambda m: (-scores[m], m))
    return {m: i + 1 for i, m in enumerate(order)}


def split_psnr(paths, split):
    rows = {m: read_report_csv(p) for m, p in paths.items()}
    if len(rows) < 2:
        raise ContractViolation(f"rank-report: need at least 2 methods for {split}, got {len(rows)}")
    ref_name = sorted(rows)[0]
    ids = set(rows[ref_name])
    for m, r in rows.items():
        if set(r) != ids:
            raise ContractViolation(f"rank-report: {split} sample set of {m!r} differs from {ref_name!r}")
    return {m: float(np.mean([v["psnr"] for v in r.values()])) for m, r in rows.items()}


def rank_report(val_paths, test_paths):
    val = split_psnr(val_paths, "val")
    test = split_psnr(test_paths, "test")
    if set(val) != set(test):
        raise ContractViolation(f"rank-report: methods differ between splits: {sorted(val)} vs {sorted(test)}")
    rv, rt = rank_methods(val), rank_methods(test)
    return [
        {"method": m, "val_psnr": val[m], "test_psnr": test[m], "val_rank": rv[m], "test_rank": rt[m]}
        for m in sorted(val, key=lambda m: (rv[m], m))
    ]


def cmd_rank_report(args):
    rows = rank_report(_parse_methods(args.val, "--val"), _parse_methods(args.test, "--test"))
    try:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["method", "val_psnr", "test_psnr", "val_rank", "test_rank"])
            w.writeheader()
            w.writerows(rows)
    except OSError as exc:
        raise DataIOError(f"cannot write {args.out}: {exc.strerror}") from exc
    png = args.png or os.path.splitext(args.out)[0] + ".png"
    scatter_ranks(rows, png)
    for r in rows:
        print(f"{r['method']}: val rank {r['val_rank']}, test rank {r['test_rank']}")


def scatter_ranks(rows, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = len(rows)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot([0.5, n + 0.5], [0.5, n + 0.5], color="0.8", lw=1)
    for r in rows:
        ax.scatter(r["val_rank"], r["test_rank"], color="k", s=12)
        ax.annotate(r["method"], (r["val_rank"], r["test_rank"]), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlim(0.5, n + 0.5)
    ax.set_ylim(0.5, n + 0.5)
    ax.invert_xaxis()
    ax.invert_yaxis()
    ax.set_xlabel("validation rank (PSNR)")
    ax.set_ylabel("test rank (PSNR)")
    fig.tight_layout()
    try:
        fig.savefig(path, dpi=100)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)


# -- parser -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"ERROR[config]: {self.prog}: {message}", file=sys.stderr)
        sys.exit(EXIT_CODES["config"])


def build_parser():
    ap = _Parser(prog="unfold-pansharp", description="Unfolded primal-dual pansharpening toolkit")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic Wald-protocol dataset")
    _common(p)
    p.add_argument("--samples", type=int)
    p.add_argument("--counts", help="explicit train,val,test counts")
    p.add_argument("--channels", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--s", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the unfolded model")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--stages", type=int)
    p.add_argument("--variant", type=int)
    p.add_argument("--features", type=int)
    p.add_argument("--radius", type=int)
    p.add_argument("--dtype", choices=["f32", "f64"])
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("finetune", help="fine-tune the post-processing network")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", help="output checkpoint directory (default: overwrite --ckpt)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("fuse", help="fuse a dataset split with a trained checkpoint")
    p.add_argument("--config", help="JSON config whose model section must match the checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", required=True)
    p.add_argument("--png", action="store_true")
    p.set_defaults(fn=cmd_fuse)

    p = sub.add_parser("solve", help="classical primal-dual fusion of one sample")
    _common(p)
    p.add_argument("--lowres", required=True)
    p.add_argument("--pan", required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--lam", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="convergence CSV (default: <out>_trace.csv)")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("eval", help="score predictions against a dataset split")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--pred", required=True, help="directory of <sample_id>.ten predictions")
    p.add_argument("--pred-file", help="read <pred>/<sample_id>/<name> instead")
    p.add_argument("--peak", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("baseline", help="fuse a dataset split with a classical baseline")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("rank-report", help="PSNR rank comparison between validation and test")
    p.add_argument("--val", nargs="+", required=True, metavar="METHOD=CSV")
    p.add_argument("--test", nargs="+", required=True, metavar="METHOD=CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--png")
    p.set_defaults(fn=cmd_rank_report)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except PansharpError as exc:
        print(f"ERROR[{exc.tag}]: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.tag, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
