"""Command line interface.

Exit codes: 0 success, 2 configuration error (including argparse usage
errors), 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, METHODS, load_batch, run_attack, save_batch
from .errors import AwtlabError, ConfigError
from .glyphs import gen_glyphs, load_dataset, save_dataset
from .harness import load_config, run_experiment
from .metrics import (
    attack_success_rate,
    grad_norm_profile,
    pearson,
    residual_search,
    spearman,
    transfer_score,
)
from .seeding import derive_seed
from .zoo import (
    ARCH_TAGS,
    TrainConfig,
    build_model,
    load_checkpoint,
    make_checkpoint,
    save_checkpoint,
    train_model,
)


def _cmd_gen_data(args) -> int:
    train, test = gen_glyphs(args.seed, args.n_train, args.n_test)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train, out / "train.awtd")
    save_dataset(test, out / "test.awtd")
    print(f"wrote {out / 'train.awtd'} ({len(train)} samples)")
    print(f"wrote {out / 'test.awtd'} ({len(test)} samples)")
    return 0


def _cmd_train(args) -> int:
    train = load_dataset(args.data)
    test = load_dataset(args.test_data) if args.test_data else None
    cfg = TrainConfig(
        epochs=args.epochs, batch=args.batch, lr=args.lr, momentum=args.momentum, seed=args.seed
    )
    model, metrics = train_model(build_model(args.arch, args.seed), train, cfg, test)
    meta = {
        "seed": args.seed,
        "epochs": cfg.epochs,
        "lr": cfg.lr,
        "final_train_acc": metrics.final_train_acc,
        "final_test_acc": metrics.final_test_acc,
        "dataset_seed": train.seed,
    }
    save_checkpoint(make_checkpoint(model, meta), args.out)
    test_part = f", test acc {metrics.final_test_acc:.4f}" if test is not None else ""
    print(f"trained {args.arch}: train acc {metrics.final_train_acc:.4f}{test_part}")
    print(f"wrote {args.out}")
    return 0


def _attack_config(args) -> AttackConfig:
    return AttackConfig(
        method=args.method,
        eps=args.eps,
        steps=args.steps,
        alpha=args.alpha,
        mu=args.mu,
        n_samples=args.n,
        zeta=args.zeta,
        omega=args.omega,
        beta=args.beta,
        lr=args.lr,
        rng_seed=args.seed,
    )


def _cmd_attack(args) -> int:
    surrogate = load_checkpoint(args.surrogate).to_model()
    data = load_dataset(args.data)
    count = min(args.count, len(data)) if args.count else len(data)
    batch = run_attack(
        args.method, surrogate, data.images[:count], data.labels[:count], _attack_config(args)
    )
    save_batch(batch, args.out)
    white_box = attack_success_rate(surrogate, batch)
    print(
        f"{args.method}: attacked {count} samples, white-box success {white_box:.4f}, "
        f"degenerate steps {batch.degenerate_steps}"
    )
    print(f"wrote {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    batch = load_batch(args.batch)
    rows = []
    for path in args.target:
        target = load_checkpoint(path).to_model()
        rows.append((path, attack_success_rate(target, batch)))
    for path, asr in rows:
        print(f"{path}: asr {asr:.4f}")
    if args.out:
        with open(args.out, "w") as f:
            f.write("target,method,asr\n")
            for path, asr in rows:
                f.write(f"{path},{batch.method},{asr!r}\n")
        print(f"wrote {args.out}")
    return 0


def _cmd_metric(args) -> int:
    batch = load_batch(args.batch)
    surrogate = load_checkpoint(args.surrogate).to_model()
    try:
        eps_list = [float(tok) for tok in args.eps_list.split(",") if tok.strip()]
    except ValueError as e:
        raise ConfigError(f"--eps-list: {e}") from e
    if not eps_list:
        raise ConfigError("--eps-list: expected at least one scale")
    for eps in eps_list:
        score = transfer_score(batch, surrogate, eps, args.samples, args.seed)
        print(f"eps {eps}: transfer score {score!r}")
    return 0


def _cmd_correlate(args) -> int:
    model = load_checkpoint(args.model).to_model()
    data = load_dataset(args.data)
    profile = grad_norm_profile(model, data, max_samples=args.max_samples)
    r = pearson(profile.raw[:, 0], profile.raw[:, 1])
    rho = spearman(profile.raw[:, 0], profile.raw[:, 1])
    print(f"samples {profile.raw.shape[0]}: pearson {r:.4f}, spearman {rho:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "gradnorm.csv", "w") as f:
            f.write("input_grad_norm,param_grad_norm,input_norm_std,param_norm_std\n")
            for raw, norm in zip(profile.raw, profile.normalized):
                f.write(f"{raw[0]!r},{raw[1]!r},{norm[0]!r},{norm[1]!r}\n")
        from .figures import render_gradnorm_figure

        render_gradnorm_figure(
            profile, out / "gradnorm.png", title=f"pearson={r:.3f} spearman={rho:.3f}"
        )
        print(f"wrote {out / 'gradnorm.csv'} and {out / 'gradnorm.png'}")
    return 0


def _cmd_prop1(args) -> int:
    model = load_checkpoint(args.model).to_model()
    data = load_dataset(args.data)
    if not 0 <= args.index < len(data):
        raise ConfigError(f"--index must lie in [0, {len(data)}), got {args.index}")
    x = data.images[args.index]
    theta_norm = float(np.linalg.norm(model.params.to_vector()))
    rng = np.random.default_rng(derive_seed(args.seed, "residual-probe"))
    direction = rng.normal(size=model.params.total_dim)
    direction *= 1.0 / np.linalg.norm(direction)
    eta = model.params.with_vector(direction)
    scale = args.scale_ratio * theta_norm
    result = residual_search(model, x, eta, scale, steps=args.steps, step_size=args.step_size)
    ratio = result.residual / result.residual0 if result.residual0 > 0 else 0.0
    print(
        f"residual0 {result.residual0!r} -> residual {result.residual!r} "
        f"(ratio {ratio:.6f}, {result.steps_run} steps)"
    )
    return 0


def _cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    if args.out:
        from dataclasses import replace

        cfg = replace(cfg, output_dir=args.out)
    report = run_experiment(cfg, write=True)
    print(
        f"experiment complete: {len(report.asr)} asr cells, "
        f"{len(report.transfer_scores)} transfer scores, report in {cfg.output_dir}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="awtlab",
        description="Desk-scale lab for transferable adversarial attacks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a glyph dataset")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n-train", type=int, default=4000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train one classifier")
    p.add_argument("--arch", required=True, choices=ARCH_TAGS)
    p.add_argument("--data", required=True, help="training dataset file")
    p.add_argument("--test-data", default=None, help="held-out dataset file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("attack", help="attack a batch with one method")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--surrogate", required=True, help="surrogate checkpoint")
    p.add_argument("--data", required=True, help="dataset file to draw inputs from")
    p.add_argument("--count", type=int, default=0, help="how many samples (0 = all)")
    p.add_argument("--eps", type=float, default=16 / 255)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--n", type=int, default=20, help="neighborhood sample count")
    p.add_argument("--zeta", type=float, default=None)
    p.add_argument("--omega", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.005)
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="batch file to write")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("evaluate", help="success rate of a stored batch on targets")
    p.add_argument("--batch", required=True)
    p.add_argument("--target", required=True, action="append", help="repeatable")
    p.add_argument("--out", default=None, help="optional CSV file")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("metric", help="parameter-noise transfer score of a batch")
    p.add_argument("--batch", required=True)
    p.add_argument("--surrogate", required=True)
    p.add_argument("--eps-list", default="0.001,0.01,0.1")
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_metric)

    p = sub.add_parser("correlate", help="dual gradient-norm profile of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--max-samples", type=int, default=200)
    p.add_argument("--out", default=None, help="optional output directory")
    p.set_defaults(func=_cmd_correlate)

    p = sub.add_parser(
        "prop1", help="input-shift residual search against a random weight shift"
    )
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0, help="sample index")
    p.add_argument("--scale-ratio", type=float, default=0.01, help="|eta| / |theta|")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--step-size", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_prop1)

    p = sub.add_parser("experiment", help="run a full experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="override config output_dir")
    p.set_defaults(func=_cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except AwtlabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
