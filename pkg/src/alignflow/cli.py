"""Command-line entry points.

Subcommands: mas, train-toy, train-duration, eval-align, check-grad,
dump-attention. Training commands require --seed explicitly; every command
is deterministic given its flags, and no output file embeds timestamps, so
identical invocations produce identical bytes.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import gradcheck
from .alignment import LogProbGrid, mas_search
from .corpus import load_corpus
from .duration import DurationDiscriminator, DurationGenerator, train_duration
from .harness import (
    DUR_HEADER_ADV,
    eval_alignment,
    load_config,
    load_duration_corpus,
    load_model,
    train_toy,
    write_csv,
)
from .numerics import Rng


def _cmd_mas(args) -> int:
    P = np.atleast_2d(np.loadtxt(args.grid, delimiter=",", dtype=np.float64))
    grid = LogProbGrid(P=P, valid_i=P.shape[0], valid_j=P.shape[1])
    rng = Rng(args.seed) if args.noise_scale > 0 else None
    align, best_q = mas_search(grid, noise_scale=args.noise_scale, rng=rng)
    print(",".join(str(int(d)) for d in align.durations))
    print(f"best_Q={best_q!r}")
    return 0


def _cmd_train_toy(args) -> int:
    config = load_config(args.config)
    config.seed = args.seed
    history, model = train_toy(config, out_dir=args.out)
    last = history["main"][-1] if history["main"] else {}
    print(f"wrote {args.out}")
    if last.get("eval_exact") is not None:
        print(f"final eval: exact_match={last['eval_exact']!r} mae={last['eval_mae']!r}")
    return 0


def _cmd_train_duration(args) -> int:
    corpus = load_duration_corpus(args.corpus)
    width = corpus[0].h_text.shape[2]
    root = Rng(args.seed)
    gen = DurationGenerator(h_dim=width, z_dim=args.z_dim, hidden=args.hidden,
                            rng=root.child(0))
    disc = DurationDiscriminator(h_dim=width, hidden=args.hidden, rng=root.child(1))
    from .numerics import AdamWConfig

    history = train_duration(
        gen, disc, corpus, args.steps,
        opt_cfg=AdamWConfig(lr=args.lr),
        rng=root.child(2),
    )
    write_csv(args.out, DUR_HEADER_ADV, history)
    if history:
        last = history[-1]
        print(
            f"step {last['step']}: loss_d={last['loss_d']!r} "
            f"loss_g_adv={last['loss_g_adv']!r} loss_g_mse={last['loss_g_mse']!r}"
        )
    return 0


def _cmd_eval_align(args) -> int:
    model = load_model(args.ckpt)
    corpus = load_corpus(args.corpus)
    instances = {"train": corpus.train, "eval": corpus.eval,
                 "all": corpus.train + corpus.eval}[args.split]
    stats = eval_alignment(model, instances)
    print(f"exact_match={stats['exact_match']!r}")
    print(f"mae={stats['mae']!r}")
    return 0


def _cmd_check_grad(args) -> int:
    results = gradcheck.run(seed=args.seed, n_seeds=args.seeds)
    failed = False
    for name, err in results:
        status = "ok" if err <= args.tolerance else "FAIL"
        if status == "FAIL":
            failed = True
        print(f"{name:28s} max_rel_err={err:.3e}  {status}")
    return 1 if failed else 0


def _write_pgm(path, values: np.ndarray, band: int | None = None):
    """8-bit binary PGM with linear min-max scaling; optionally overlays the
    conv receptive-field band edges (|i-j| == band) at full intensity."""
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        img = np.round((values - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        img = np.zeros(values.shape, dtype=np.uint8)
    if band is not None:
        n = min(img.shape)
        for i in range(img.shape[0]):
            for j in range(img.shape[1]):
                if abs(i - j) == band:
                    img[i, j] = 255
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


def _cmd_dump_attention(args) -> int:
    import os

    model = load_model(args.ckpt)
    x = np.atleast_2d(np.loadtxt(args.input, delimiter=",", dtype=np.float64))
    if x.shape[0] != model.flows.channels:
        raise SystemExit(
            f"input has {x.shape[0]} rows but the flow stack expects "
            f"{model.flows.channels} channels"
        )
    cond = None
    if args.speaker is not None:
        _, cond = model.speaker_condition(args.speaker)
    os.makedirs(args.out, exist_ok=True)
    maps = model.flows.attention_maps(x, cond)
    for li, amap in enumerate(maps):
        csv_path = os.path.join(args.out, f"attention_layer{li}.csv")
        with open(csv_path, "w") as f:
            for row in amap:
                f.write(",".join(repr(float(v)) for v in row) + "\n")
        band = model.flows.layers[li].conv_receptive_field
        _write_pgm(os.path.join(args.out, f"attention_layer{li}.pgm"), amap, band)
    print(f"wrote {len(maps)} attention maps to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alignflow")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mas", help="run alignment search on a log-likelihood grid CSV")
    p.add_argument("--grid", required=True, help="CSV, row i = token, column j = frame")
    p.add_argument("--noise-scale", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_mas)

    p = sub.add_parser("train-toy", help="end-to-end toy training run")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("train-duration", help="adversarial duration training")
    p.add_argument("--corpus", required=True, help="duration corpus CSV")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="per-step loss CSV")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--z-dim", type=int, default=2)
    p.set_defaults(func=_cmd_train_duration)

    p = sub.add_parser("eval-align", help="alignment accuracy of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=["train", "eval", "all"], default="eval")
    p.set_defaults(func=_cmd_eval_align)

    p = sub.add_parser("check-grad", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=_cmd_check_grad)

    p = sub.add_parser("dump-attention", help="per-layer flow attention maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="CSV frame matrix, channels x time")
    p.add_argument("--out", required=True)
    p.add_argument("--speaker", type=int, default=None)
    p.set_defaults(func=_cmd_dump_attention)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
