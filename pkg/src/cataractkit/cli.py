"""Command-line entry point: ``cataractkit <verb> ...``.

Every run writes ``manifest.json`` (command, arguments, config hash, seed and
library versions) next to its outputs. The default output root is taken
from the CATARACTKIT_OUT environment variable, falling back to ./runs.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError

ENV_OUT = "CATARACTKIT_OUT"


def default_out() -> str:
    return os.environ.get(ENV_OUT, "runs")


def write_manifest(out_dir: Path, args, config: dict | None = None, extra: dict | None = None) -> Path:
    import torch

    from .harness.config import config_hash

    out_dir.mkdir(parents=True, exist_ok=True)
    argd = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": args.verb,
        "arguments": argd,
        "config_hash": config_hash(config if config is not None else argd),
        "seed": getattr(args, "seed", None),
        "versions": {"cataractkit": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "torch": torch.__version__},
    }
    manifest.update(extra or {})
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------------------
# verbs
# --------------------------------------------------------------------------

def _segmentation_data(cfg, seed):
    from .harness import SegmentationFolder, build_augmenter, synthetic_pair
    from .harness.data import to_tensor_pair

    data_cfg = dict(cfg.data)
    size = tuple(data_cfg.get("size", cfg.network.get("input_shape", (3, 512, 512))[-2:]))
    if "root" in data_cfg:
        aug = build_augmenter(cfg.augment, seed) if cfg.augment else None
        train = SegmentationFolder(data_cfg["root"], "train", size, aug)
        val = SegmentationFolder(data_cfg["root"], "val", size)
        return train, (val if len(val) else None)
    if "synthetic" in data_cfg:
        syn = dict(data_cfg["synthetic"])
        count = int(syn.get("count", 2))
        classes = int(cfg.network.get("num_classes", 2))
        pairs = [to_tensor_pair(*synthetic_pair(size[0], seed + i, classes)) for i in range(count)]
        return pairs, None
    raise ConfigError("data: needs either 'root' or 'synthetic'")


def cmd_train(args):
    from .harness import load_config, train_loop
    from .networks import build_network

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.epochs is not None:
        cfg.epochs = args.epochs
    net = build_network(cfg.network_spec())
    train, val = _segmentation_data(cfg, cfg.seed)
    out = Path(args.out)
    result = train_loop(cfg, net, train, val, out)
    write_manifest(out, args, cfg.to_dict(), {"checkpoint": str(result.checkpoint)})
    print(json.dumps(result.history[-1] if result.history else {}, indent=2))
    return 0


def cmd_eval(args):
    from .harness import evaluate_segmentation, load_config
    from .harness.train import write_history
    from .networks import build_network, load_checkpoint

    cfg = load_config(args.config)
    net = build_network(cfg.network_spec())
    load_checkpoint(net, args.checkpoint)
    _, val = _segmentation_data(cfg, cfg.seed)
    if val is None:
        val, _ = _segmentation_data(cfg, cfg.seed)
    report = evaluate_segmentation(net, val, net.num_classes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [{"class": c, "metric": m, "mean": v[0], "std": v[1]}
            for c, d in report.summary().items() for m, v in d.items()]
    write_history(rows, out / "metrics.csv")
    write_manifest(out, args, cfg.to_dict())
    print(json.dumps(report.flat(), indent=2))
    return 0


def cmd_pretrain(args):
    from .harness import read_mapping, seed_everything
    from .losses import LossWeights
    from .networks import build_encoder, save_checkpoint
    from .ssl import ClipStore, ContrastiveModel, SmallEncoder, full_schedule, moving_shapes_video, pretrain

    cfg = read_mapping(args.config)
    known = {"clips", "synthetic", "epochs", "batch_size", "batches_per_epoch", "lr", "tau", "t_dist",
             "t_diff", "encoder", "size", "seed"}
    for key in cfg:
        if key not in known:
            raise ConfigError(f"config.{key}: unknown key")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    size = int(cfg.get("size", 32))
    if "clips" in cfg:
        store = ClipStore.from_manifest(cfg["clips"], (size, size))
    else:
        n = int(cfg.get("synthetic", {}).get("videos", 8))
        store = ClipStore.from_videos({f"synthetic{i}": moving_shapes_video(size=size, seed=seed + i)
                                       for i in range(n)})
    enc_id = cfg.get("encoder", "small")
    seed_everything(seed)
    encoder = SmallEncoder() if enc_id == "small" else build_encoder(enc_id)
    epochs = int(cfg.get("epochs", 5))
    sched = full_schedule(epochs, size, t_dist=int(cfg.get("t_dist", 20)),
                          t_diff=float(cfg.get("t_diff", 10 / 255)))
    res = pretrain(store, ContrastiveModel(encoder), sched, LossWeights(tau=float(cfg.get("tau", 0.5))),
                   epochs, int(cfg.get("batch_size", 8)), int(cfg.get("batches_per_epoch", 8)),
                   float(cfg.get("lr", 1e-3)), seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(res.encoder, out / "encoder.npz", f"encoder-{enc_id}", step=epochs)
    with open(out / "pretrain_loss.csv", "w") as fh:
        fh.write("epoch,strategy,loss\n")
        for e, (s, l) in enumerate(zip(res.schedule, res.epoch_losses)):
            fh.write(f"{e},{s.strategy},{l:.6f}\n")
    write_manifest(out, args, cfg)
    print(json.dumps({"epoch_losses": res.epoch_losses}))
    return 0


def load_relevance_input(path, scenario, qp_r, delta_q, alpha, oriented=False):
    """Relevance fixture from .npz (labels, cornea, instruments) or YAML/JSON boxes."""
    from .harness import read_mapping
    from .qpplan import Box, RelevanceInput

    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as d:
            labels = d["labels"]
            cornea = list(d["cornea"].astype(bool)) if "cornea" in d else None
            inst = list(d["instruments"].astype(bool)) if "instruments" in d else None
            height, width = (d["cornea"].shape[1:] if "cornea" in d else (int(d["height"]), int(d["width"])))
    else:
        d = read_mapping(path)
        for key in ("width", "height", "labels"):
            if key not in d:
                raise ConfigError(f"config.{key}: missing key")
        width, height, labels = int(d["width"]), int(d["height"]), d["labels"]

        shape = (height, width)
        cornea = inst = None
        if "cornea_boxes" in d:
            cornea = [None if b is None else Box(*b).rasterize(shape) for b in d["cornea_boxes"]]
        if "instrument_boxes" in d:
            inst = [[Box(*b).rasterize(shape) for b in (entry or [])] for entry in d["instrument_boxes"]]
    return RelevanceInput(labels, int(width), int(height), scenario, qp_r, delta_q, alpha, cornea, inst, oriented)


def cmd_qpplan(args):
    from .qpplan import allocate_qp, write_qpmaps

    inp = load_relevance_input(args.input, args.scenario, args.qpr, args.dq, args.alpha, args.oriented)
    maps = allocate_qp(inp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = "qpmap.qpb" if args.format == "binary" else "qpmap.txt"
    path = write_qpmaps(maps, out / name, binary=args.format == "binary")
    write_manifest(out, args)
    print(path)
    return 0


def cmd_deblur_sim(args):
    import cv2

    from .deblursim import psnr_table, shapes_image, write_psnr_csv

    if args.images:
        files = sorted(p for p in Path(args.images).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        images = [cv2.cvtColor(cv2.imread(str(f)), cv2.COLOR_BGR2RGB) for f in files]
    else:
        seed = args.seed or 0
        images = [shapes_image(args.size, seed + i) for i in range(args.count)]
    if not images:
        raise ConfigError("no images found")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = write_psnr_csv(psnr_table(images), out / "psnr.csv")
    write_manifest(out, args)
    print(path)
    return 0


def cmd_lens_stats(args):
    from .temporal import lens_statistics, write_lens_report

    with np.load(args.masks) as d:
        angles = d["angles"] if "angles" in d else None
        stats = lens_statistics(d["lens"], d["pupil"], angles, fps=args.fps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_lens_report(stats, out / "lens_stats.csv")
    summary = {"unfolding_delay_s": stats.unfolding_delay, "instability": stats.instability,
               "rotation_deg": stats.rotation, "excluded_frames": stats.excluded_frames}
    (out / "lens_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_manifest(out, args)
    print(json.dumps(summary))
    return 0


def cmd_plot(args):
    import csv

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = list(csv.DictReader(open(args.csv, newline="")))
    if not rows:
        raise ConfigError(f"{args.csv}: no rows")
    for col in [args.x] + args.y:
        if col not in rows[0]:
            raise ConfigError(f"{args.csv}: no column {col!r}")
    x = [float(r[args.x]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for col in args.y:
        ax.plot(x, [float(r[col]) for r in rows], label=col)
    ax.set_xlabel(args.x)
    ax.legend()
    fig.tight_layout()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / (args.name or (Path(args.csv).stem + ".png"))
    fig.savefig(path, dpi=120)
    plt.close(fig)
    write_manifest(out, args)
    print(path)
    return 0


def cmd_inspect(args):
    from .networks import NetworkSpec, inspect_network

    report = inspect_network(NetworkSpec(args.network, args.encoder, args.classes))
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(f"network   {report['network']} ({report['encoder']})")
        print(f"total     {report['total']:,} trainable ({report['total'] / 1e6:.2f} M)")
        if "reference_millions" in report:
            print(f"reference {report['reference_millions']:.2f} M, gap {report['gap']:+,} "
                  f"({report['gap_percent']:+.2f}%)")
        for name, n in report["modules"].items():
            print(f"  {name:<20} {n:>12,}")
        if "recal_delta" in report:
            for name, n in report["recal_modules"].items():
                print(f"  recal {name:<14} {n:>12,} bias-free")
            print(f"recal delta {report['recal_delta']:,} bias-free weights")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "inspect.json").write_text(json.dumps(report, indent=2) + "\n")
        write_manifest(out, args)
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cataractkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name, func, help_text, out_default=True):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, default=None, help="override the configured seed")
        if out_default:
            sp.add_argument("--out", default=None, help=f"output directory (default: ${ENV_OUT}/{name} or runs/{name})")
        return sp

    sp = verb("train", cmd_train, "train a network from a config file")
    sp.add_argument("--config", required=True)
    sp.add_argument("--epochs", type=int, default=None)

    sp = verb("eval", cmd_eval, "score a checkpoint on the validation split")
    sp.add_argument("--config", required=True)
    sp.add_argument("--checkpoint", required=True)

    sp = verb("pretrain", cmd_pretrain, "contrastive pretraining on video clips")
    sp.add_argument("--config", required=True)

    sp = verb("qpplan", cmd_qpplan, "plan CTU QP maps from relevance labels and masks")
    sp.add_argument("--input", required=True, help=".npz arrays or YAML/JSON with boxes")
    sp.add_argument("--scenario", default="III", choices=["I", "II", "III", "IV", "V"])
    sp.add_argument("--qpr", type=int, default=22)
    sp.add_argument("--dq", type=int, default=5)
    sp.add_argument("--alpha", type=int, default=0)
    sp.add_argument("--oriented", action="store_true", help="oriented instrument boxes")
    sp.add_argument("--format", choices=["text", "binary"], default="text")

    sp = verb("deblur-sim", cmd_deblur_sim, "PSNR of Gaussian-blurred images per window size")
    sp.add_argument("--images", default=None, help="directory of images (default: synthetic scenes)")
    sp.add_argument("--count", type=int, default=20)
    sp.add_argument("--size", type=int, default=64)
    sp.set_defaults(seed=0)

    sp = verb("lens-stats", cmd_lens_stats, "lens area/position statistics from mask sequences")
    sp.add_argument("--masks", required=True, help=".npz with 'lens', 'pupil' and optional 'angles'")
    sp.add_argument("--fps", type=float, default=25.0)

    sp = verb("plot", cmd_plot, "line plot of CSV columns")
    sp.add_argument("--csv", required=True)
    sp.add_argument("--x", required=True)
    sp.add_argument("--y", required=True, nargs="+")
    sp.add_argument("--name", default=None)

    sp = verb("inspect", cmd_inspect, "parameter count and per-module breakdown")
    sp.add_argument("--network", required=True)
    sp.add_argument("--encoder", default=None)
    sp.add_argument("--classes", type=int, default=2)
    sp.add_argument("--json", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "out") and args.out is None and args.verb != "inspect":
        args.out = str(Path(default_out()) / args.verb)
    try:
        return args.func(args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"cataractkit {args.verb}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and fail
        print(f"cataractkit {args.verb}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
