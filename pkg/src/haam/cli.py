"""Command-line entry points.

Option precedence: built-in defaults < ``--config`` JSON < explicit flags.
Every command writes the fully resolved options to ``config.json`` in its
output directory.  Exit codes: 0 success, 2 usage, 3 data, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from haam import dataio, evalkit, experiments, model, spectral, synthgen
from haam.errors import DataFormatError, InvalidInputError, NumericError
from haam.graph import power_iteration

log = logging.getLogger("haam")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

DEFAULTS = {
    "generate": {
        "n": 600, "classes": 4, "rho": "0.9,0.9,0.9", "mean_degree": 12.0,
        "features": 100, "separation": 3.0, "splits": "0.1,0.1,0.8", "seed": 0,
    },
    "train": {
        "k": 5, "m": 64, "lr": 1e-3, "alpha": 1e-5, "epochs": 1000, "patience": 100,
        "seed": 0, "beta": 1.0, "t2": 200, "gamma0": 1.0,
    },
    "evaluate": {"beta": 1.0, "t2": 200, "trials": 5, "seed": 0,
                 "mask_features": None, "drop_edges": None},
    "filter-response": {"grid_size": 512},
    "diagnose": {},
}


class UsageError(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _out_dir(opts: dict) -> Path:
    if opts.get("out"):
        out = Path(opts["out"])
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        out = Path("runs") / f"{stamp}_seed{opts.get('seed', 0)}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(out: Path, command: str, opts: dict) -> None:
    doc = {"command": command, "options": opts}
    (out / "config.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _write_matrix_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


# -- commands -----------------------------------------------------------------

def cmd_generate(opts: dict) -> Path:
    rho = _floats(opts["rho"])
    if "dims" in opts and opts["dims"] is not None and int(opts["dims"]) != len(rho):
        if len(rho) != 1:
            raise UsageError(f"--dims {opts['dims']} does not match {len(rho)} rho values")
        rho = rho * int(opts["dims"])
    try:
        cfg = synthgen.SynthConfig(
            n_nodes=int(opts["n"]), n_classes=int(opts["classes"]), rho=rho,
            mean_degree=float(opts["mean_degree"]), feature_dim=int(opts["features"]),
            feature_separation=float(opts["separation"]), seed=int(opts["seed"]),
            split_fractions=_floats(opts["splits"]))
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(opts)
    bundle = synthgen.generate(cfg)
    dataio.save_dataset(bundle, out)
    _write_config(out, "generate", opts)
    for d, h in enumerate(bundle.meta["homophily"]):
        print(f"dim{d} target={rho[d]:.3f} realized_h={h:.4f} edges={bundle.graph[d].n_edges}")
    print(f"dataset written to {out}")
    return out


def _train_config(opts: dict) -> model.TrainConfig:
    cfg = model.TrainConfig(K=int(opts["k"]), M=int(opts["m"]), learning_rate=float(opts["lr"]),
                            alpha=float(opts["alpha"]), max_epochs=int(opts["epochs"]),
                            patience=int(opts["patience"]), seed=int(opts["seed"]),
                            gamma0=float(opts["gamma0"]))
    try:
        cfg.validate()
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def cmd_train(opts: dict) -> Path:
    if not opts.get("data"):
        raise UsageError("--data is required")
    cfg = _train_config(opts)
    bundle = dataio.load_dataset(opts["data"])
    out = _out_dir(opts)
    _write_config(out, "train", opts)

    result = model.train(bundle, cfg=cfg)
    state = result.state
    model.save_checkpoint(out / "checkpoint.json", state, cfg)
    probs, res, pred = experiments.consensus_predict(state, bundle, float(opts["beta"]),
                                                     int(opts["t2"]))

    c = bundle.n_classes
    for d, p in enumerate(probs):
        _write_matrix_csv(out / f"predictions_dim{d}.csv", ["node_id"] + [f"p{k}" for k in range(c)],
                          ([str(i)] + [repr(float(v)) for v in row] for i, row in enumerate(p)))
        model.export_compatibility(out / f"H_{d}.csv", state.compat[d])
    _write_matrix_csv(out / "consensus.csv",
                      ["node_id", "predicted_class"] + [f"y{k}" for k in range(c)],
                      ([str(i), str(int(pred[i]))] + [repr(float(v)) for v in row]
                       for i, row in enumerate(res.y_hat)))
    _write_matrix_csv(out / "consensus_trace.csv", ["iteration", "objective"],
                      ([str(i), repr(v)] for i, v in enumerate(res.objective_trace)))
    _write_matrix_csv(out / "training_log.csv", ["epoch", "loss", "val_f1_micro"],
                      ([str(i + 1), repr(l), repr(v)]
                       for i, (l, v) in enumerate(zip(result.loss_history, result.val_history))))

    report = evalkit.score(pred, bundle.labels, bundle.splits["test"], c, split="test")
    evalkit.write_report(out, report)
    print(report.to_text(), end="")
    print(f"epochs={state.epoch} best_epoch={state.best_epoch} consensus_nnz={res.nnz}")
    print(f"outputs written to {out}")
    return out


def cmd_evaluate(opts: dict) -> Path:
    if not opts.get("checkpoint") or not opts.get("data"):
        raise UsageError("--checkpoint and --data are required")
    state, _ = model.load_checkpoint(opts["checkpoint"])
    bundle = dataio.load_dataset(opts["data"])
    if bundle.features.shape[1] != state.mlp.weights[0].shape[0] \
            or bundle.graph.n_dims != state.n_dims or bundle.n_classes != state.n_classes:
        raise DataFormatError("checkpoint and dataset shapes are incompatible")
    beta, t2, trials = float(opts["beta"]), int(opts["t2"]), int(opts["trials"])
    out = _out_dir(opts)
    _write_config(out, "evaluate", opts)

    clean = experiments.score_split(state, bundle, beta=beta, iterations=t2)
    doc = {"clean": clean.to_dict(), "perturbations": {}}
    lines = [f"clean f1_micro={clean.f1_micro!r} f1_macro={clean.f1_macro!r}"]
    for key in experiments.PERTURBATIONS:
        if opts.get(key) is None:
            continue
        p = float(opts[key])
        if not 0.0 <= p <= 1.0:
            raise UsageError(f"--{key.replace('_', '-')} must lie in [0, 1]")
        entry = experiments.robustness_drop(state, bundle, key, p, trials=trials,
                                            seed=int(opts["seed"]), beta=beta, iterations=t2)
        del entry["clean"]
        doc["perturbations"][key] = entry
        mi, ma = entry["f1_micro_drop_pp"], entry["f1_macro_drop_pp"]
        lines.append(f"{key} p={p} f1_micro_drop={mi['mean']:.4f}+-{mi['std']:.4f}pp "
                     f"f1_macro_drop={ma['mean']:.4f}+-{ma['std']:.4f}pp")
    (out / "evaluation.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    (out / "evaluation.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return out


def cmd_filter_response(opts: dict) -> Path:
    if not opts.get("checkpoint"):
        raise UsageError("--checkpoint is required")
    grid = int(opts["grid_size"])
    if grid < 2:
        raise UsageError("--grid-size must be at least 2")
    state, _ = model.load_checkpoint(opts["checkpoint"])
    out = _out_dir(opts)
    _write_config(out, "filter-response", opts)
    for d, bank in enumerate(state.filter_banks()):
        table = spectral.response_table(bank, state.lambda_max[d], grid)
        spectral.write_response(out / f"filter_response_{d}.csv", table)
        gap = float(np.max(np.abs(table[:, 3] - table[:, 4])))
        print(f"dim{d} lambda_max={state.lambda_max[d]:.6f} max|composed-product|={gap:.3e}")
    return out


def spectral_norm(h: np.ndarray) -> float:
    """Largest singular value by power iteration on ``H^T H``."""
    lam = power_iteration(lambda v: h.T @ (h @ v), h.shape[1], tol=1e-10, max_iter=2000)
    return float(np.sqrt(max(lam, 0.0)))


def diagnose(state: model.ModelState, bundle: dataio.DatasetBundle | None = None) -> list[dict]:
    """Per-dimension coefficient norms, the product bound and amplification factors."""
    laps = bundle.graph.laplacians() if bundle is not None else None
    cache = model.forward(state, bundle.features, laps) if bundle is not None else None
    rows = []
    for d, bank in enumerate(state.filter_banks()):
        diag = spectral.coeff_l1_diagnostics(bank.low, bank.high, bank.composed)
        h_norm = spectral_norm(state.compat[d])
        row = {
            "dimension": d,
            "l1_low": diag.l1_low, "l1_high": diag.l1_high, "l1_composed": diag.l1_composed,
            "bound_satisfied": diag.bound_satisfied,
            "H_spectral_norm": h_norm,
            "amplification": diag.l1_low * diag.l1_high * h_norm,
        }
        if cache is not None:
            lap = laps[d]
            op_sq = power_iteration(
                lambda v: spectral.apply_cheb(bank.composed, lap,
                                              spectral.apply_cheb(bank.composed, lap, v[:, None]))[:, 0],
                bundle.n_nodes, tol=1e-8, max_iter=2000)
            y0_norm = float(np.linalg.norm(cache.y0))
            s_norm = float(np.linalg.norm(cache.scores[d]))
            logit_bound = diag.l1_low * diag.l1_high * y0_norm * h_norm
            row.update({
                "composed_operator_norm_est": float(np.sqrt(max(op_sq, 0.0))),
                "y0_fro": y0_norm, "scores_fro": s_norm,
                "logit_bound": logit_bound,
                "logit_bound_satisfied": s_norm <= logit_bound * (1 + 1e-9) + 1e-6,
            })
        rows.append(row)
    return rows


def cmd_diagnose(opts: dict) -> Path:
    if not opts.get("checkpoint"):
        raise UsageError("--checkpoint is required")
    state, _ = model.load_checkpoint(opts["checkpoint"])
    bundle = dataio.load_dataset(opts["data"]) if opts.get("data") else None
    out = _out_dir(opts)
    _write_config(out, "diagnose", opts)
    rows = diagnose(state, bundle)
    (out / "diagnose.json").write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")
    text = "\n".join(" ".join(f"{k}={v!r}" for k, v in row.items()) for row in rows) + "\n"
    (out / "diagnose.txt").write_text(text)
    print(text, end="")
    return out


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "filter-response": cmd_filter_response,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="haam", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=S, help="JSON file of option overrides")
        p.add_argument("--out", default=S, help="output directory")
        p.add_argument("--threads", type=int, default=S, help="BLAS/OpenMP thread cap")

    g = sub.add_parser("generate", help="generate a synthetic multiplex dataset")
    common(g)
    g.add_argument("--n", type=int, default=S)
    g.add_argument("--classes", type=int, default=S)
    g.add_argument("--dims", type=int, default=S)
    g.add_argument("--rho", default=S, help="comma-separated target homophily per dimension")
    g.add_argument("--mean-degree", type=float, default=S)
    g.add_argument("--features", type=int, default=S)
    g.add_argument("--separation", type=float, default=S)
    g.add_argument("--splits", default=S, help="train,val,test fractions")
    g.add_argument("--seed", type=int, default=S)

    t = sub.add_parser("train", help="train a model and compute consensus predictions")
    common(t)
    t.add_argument("--data", default=S)
    t.add_argument("--k", type=int, default=S, help="Chebyshev degree of each branch")
    t.add_argument("--m", type=int, default=S, help="hidden size of the MLP")
    t.add_argument("--lr", type=float, default=S)
    t.add_argument("--alpha", type=float, default=S, help="l2 weight on MLP weight matrices")
    t.add_argument("--epochs", type=int, default=S)
    t.add_argument("--patience", type=int, default=S)
    t.add_argument("--gamma0", type=float, default=S)
    t.add_argument("--beta", type=float, default=S, help="l1 weight of the consensus")
    t.add_argument("--t2", type=int, default=S, help="consensus iterations")
    t.add_argument("--seed", type=int, default=S)

    e = sub.add_parser("evaluate", help="score a checkpoint, optionally under perturbations")
    common(e)
    e.add_argument("--checkpoint", default=S)
    e.add_argument("--data", default=S)
    e.add_argument("--mask-features", type=float, default=S)
    e.add_argument("--drop-edges", type=float, default=S)
    e.add_argument("--trials", type=int, default=S)
    e.add_argument("--beta", type=float, default=S)
    e.add_argument("--t2", type=int, default=S)
    e.add_argument("--seed", type=int, default=S)

    f = sub.add_parser("filter-response", help="export learned filter responses")
    common(f)
    f.add_argument("--checkpoint", default=S)
    f.add_argument("--grid-size", type=int, default=S)

    d = sub.add_parser("diagnose", help="coefficient-norm and stability report")
    common(d)
    d.add_argument("--checkpoint", default=S)
    d.add_argument("--data", default=S)
    return parser


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS[command])
    given = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    if "config" in given:
        try:
            loaded = json.loads(Path(given["config"]).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {given['config']}: {exc}") from None
        # accept both a bare option dict and a previously written config.json
        loaded = loaded.get("options", loaded)
        opts.update({k.replace("-", "_"): v for k, v in loaded.items() if k != "config"})
    opts.update({k: v for k, v in given.items() if k != "config"})
    return opts


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve_options(args.command, args)
        threads = opts.get("threads")
        if threads is not None:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=int(threads)):
                COMMANDS[args.command](opts)
        else:
            COMMANDS[args.command](opts)
    except (UsageError, InvalidInputError) as exc:
        print(f"haam {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, OSError) as exc:
        print(f"haam {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"haam {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
