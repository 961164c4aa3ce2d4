"""Command-line entry point: ``gvqlab <subcommand>``.

Exit codes: 0 success, 1 failed check, 2 config error, 3 numeric abort,
4 data format error.
"""

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from gvqlab import tensor as T
from gvqlab.config import PRESETS, ConfigError, TrainConfig, coerce_overrides, preset, read_config
from gvqlab.graph import FormatError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NAN, EXIT_FORMAT = 0, 1, 2, 3, 4
_SKIP_FLAGS = {"seed"}


def _field_flags(parser):
    group = parser.add_argument_group("config fields (override --config and --preset)")
    for f in fields(TrainConfig):
        if f.name in _SKIP_FLAGS:
            continue
        group.add_argument("--" + f.name.replace("_", "-"), dest="field_" + f.name, default=None, metavar="V")


def _common(parser):
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--preset", default="desk", choices=sorted(PRESETS))
    _field_flags(parser)


def build_config(args, seed=None):
    overrides = {k[len("field_"):]: v for k, v in vars(args).items() if k.startswith("field_") and v is not None}
    typed = coerce_overrides(overrides)
    if seed is not None:
        typed["seed"] = seed
    base = preset(args.preset)
    if args.config:
        return read_config(args.config, base=base, **typed)
    return base.replace(**typed)


def _seeds(text):
    try:
        return [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seed expects integers, got {text!r}") from None


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    print(text)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


# ----------------------------------------------------------------------------
# subcommands

def cmd_train(args):
    from gvqlab.train import NumericAbort, train, write_abort_dump

    seeds = _seeds(args.seed)
    if len(seeds) != 1:
        raise ConfigError("train takes a single --seed")
    cfg = build_config(args, seeds[0])
    out = args.out or f"runs/seed{cfg.seed}"
    try:
        res = train(cfg, out_dir=out)
    except NumericAbort as exc:
        write_abort_dump(exc, out)
        print(f"numeric abort: {exc}; last finite record in {out}/abort.json", file=sys.stderr)
        return EXIT_NAN
    _emit(res.summary())
    return EXIT_OK


def cmd_sweep(args):
    from gvqlab.train import NumericAbort, sweep

    cfg = build_config(args)
    seeds = _seeds(args.seed)
    caster = int if args.axis in ("codebook-size", "contrastive-k") else float
    try:
        values = [caster(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse sweep values {args.values!r}") from None
    if not values:
        raise ConfigError("--values is empty")
    try:
        rows = sweep(cfg.replace(seed=seeds[0]), args.axis, values, out_csv=args.out, seeds=seeds)
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NAN
    for r in rows:
        print(f"{r['value']},{r['seed']},{r['best_perplexity']:.6f},{r['normalized_perplexity']:.6f}")
    return EXIT_OK


def cmd_stats(args):
    from gvqlab.train import stats

    cfg = build_config(args, args.seed)
    _emit(stats(cfg.load_graph()), args.out)
    return EXIT_OK


def cmd_build_sets(args):
    from gvqlab.rgvq import load_or_build_sets, sidecar_path

    cfg = build_config(args, args.seed)
    g = cfg.load_graph()
    sets = load_or_build_sets(g, args.out, k_c=cfg.k_c, eps_quantile=cfg.eps_quantile,
                              gamma_quantile=cfg.gamma_quantile, M=cfg.M, seed=cfg.seed,
                              negative_mode=cfg.negative_mode)
    _emit({"path": str(sidecar_path(args.out, sets.key)), "key": sets.key, **sets.diagnostics()})
    return EXIT_OK


def cmd_dynamics(args):
    from gvqlab import dynamics as D
    from gvqlab.encoder import init_params
    from gvqlab.graph import SbmSpec, generate_sbm
    from gvqlab.vq import Assignment, Codebook

    rng = np.random.default_rng(args.seed)
    report = {}
    if args.check in ("update", "all"):
        worst = 0.0
        for _ in range(args.trials):
            K, d, n = int(rng.integers(2, 9)), int(rng.integers(1, 6)), int(rng.integers(1, 30))
            cb = Codebook(T.Tensor(rng.standard_normal((K, d)), requires_grad=True))
            h = T.Tensor(rng.standard_normal((n, d)))
            a = Assignment(rng.integers(0, K, n), K)
            eta = float(rng.uniform(0.01, 0.5))
            T.backward(D.codebook_term(h, cb, a))
            auto = cb.entries.data - eta * cb.entries.grad
            worst = max(worst, float(np.abs(D.analytic_update_step(cb.entries.data, h, a, eta) - auto).max()))
        report["update"] = {"trials": args.trials, "max_abs_diff": worst}
    if args.check in ("cocoon", "all"):
        K = 8
        bias = np.full(K, 0.1 / (K - 1))
        bias[0] = 0.9
        traj = D.cocoon_sim(K, bias, 200, 0.1, args.seed)
        uni = D.cocoon_sim(K, np.full(K, 1.0 / K), 200, 0.1, args.seed)
        report["cocoon"] = {"biased_perplexity": [float(traj.perplexity[0]), float(traj.perplexity[-1])],
                            "uniform_perplexity": float(uni.perplexity[-1]),
                            "update_norms": traj.update_norms.tolist()}
    if args.check in ("coassign", "all"):
        rows = []
        for t in range(args.trials):
            g = generate_sbm(SbmSpec(blocks=3, nodes_per_block=int(rng.integers(10, 60)), feature_dim=8,
                                     seed=args.seed * 1000 + t))
            enc = init_params([8, 16, 16], args.seed * 1000 + t)
            from gvqlab.encoder import encode

            h = encode(g, enc).data
            K = int(rng.integers(2, 17))
            c = h[rng.choice(g.n, K, replace=False)] + 0.1 * h.std() * rng.standard_normal((K, h.shape[1]))
            r = D.coassign_check(g, enc, Codebook(T.Tensor(c)), h=h)
            rows.append({k: r[k] for k in ("n", "K", "violations", "ball_violations", "coassign_rate", "bound")})
        report["coassign"] = {"trials": rows, "violations": sum(r["violations"] for r in rows),
                              "ball_violations": sum(r["ball_violations"] for r in rows)}
    _emit(report, args.out)
    return EXIT_OK


def cmd_gradcheck(args):
    from gvqlab.gradcheck import run_suite

    failed = 0
    for c in run_suite(args.seed):
        print(f"{'ok  ' if c.ok else 'FAIL'} {c.name:28s} {c.error:.3e} (tol {c.tol:g})")
        failed += not c.ok
    return EXIT_FAIL if failed else EXIT_OK


# ----------------------------------------------------------------------------

def make_parser():
    parser = argparse.ArgumentParser(prog="gvqlab", description="Graph vector-quantization laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--seed", required=True)
    p.add_argument("--out", help="output directory (default runs/seed<N>)")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train over a grid of one axis")
    p.add_argument("--seed", required=True, help="one seed or a comma list")
    p.add_argument("--axis", required=True, choices=["codebook-size", "temperature", "contrastive-k"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", help="CSV output path")
    _common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("stats", help="n, edges, average degree and pca95 of a dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="JSON output path")
    _common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("build-sets", help="precompute contrastive sets into a sidecar directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="sidecar directory")
    _common(p)
    p.set_defaults(func=cmd_build_sets)

    p = sub.add_parser("dynamics", help="codebook-update and co-assignment checks")
    p.add_argument("--check", default="all", choices=["update", "cocoon", "coassign", "all"])
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="JSON output path")
    p.set_defaults(func=cmd_dynamics)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ConfigError, T.ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NAN


if __name__ == "__main__":
    sys.exit(main())
