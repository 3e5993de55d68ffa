"""Command line interface: ``llgp train|predict|gradcheck|benchmark``."""

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
import time

import numpy as np
import scipy.fft

from .config import ConfigError, ModelConfig, load_config
from .data import DatasetError, load_dataset
from .persistence import ModelFileError, SavedModel, load_model, save_model
from .prediction import Posterior, evaluate, predict
from .training import TrainingError, train

_LOG = logging.getLogger("llgp")

THREADS_ENV = "LLGP_THREADS"


def _config(path):
    return load_config(path) if path else ModelConfig()


def _write_log(records, path):
    if not records:
        open(path, "w").close()
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(records[0]))
        w.writeheader()
        w.writerows(records)


def fit_model(data, config):
    result = train(data, config)
    model = SavedModel(
        result.kernel,
        result.grid,
        result.representation,
        config,
        data,
        {"iterations": result.state.iteration, "stop_reason": result.stop_reason},
    )
    return model, result


def posterior_for(model):
    cfg = model.config
    return Posterior(model.kernel, model.grid, model.train, model.representation, cfg.minres_tol, cfg.minres_max_iter)


def cmd_train(args):
    data = load_dataset(args.data)
    config = _config(args.config)
    model, result = fit_model(data, config)
    save_model(model, args.out)
    if args.log:
        _write_log(result.log, args.log)
    print(
        "trained {} iterations ({}); representation {}; model written to {}".format(
            result.state.iteration, result.stop_reason, result.representation.value, args.out
        )
    )
    return 0


def cmd_predict(args):
    model = load_model(args.model)
    test = load_dataset(args.test, labels=model.train.labels, standardization=model.train.standardization)
    pred = predict(posterior_for(model), test)
    pred.to_csv(args.out)
    metrics = evaluate(pred, test)
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8") as fh:
            json.dump(metrics.to_dict(), fh, indent=1)
    print("SMSE {:.4f}  NLPD {:.4f}  ({} test points)".format(metrics.smse, metrics.nlpd, test.n))
    return 0


def cmd_gradcheck(args):
    from .exact import DenseGp, dense_kernel_derivatives, dense_kernel_matrix, exact_gradient
    from .interpolation import build_grid, interp_weights
    from .kernel import build_ski_operator, derivative_operators, initial_kernel
    from .krylov import sample_rademacher
    from .training import log_likelihood_gradient, resolve_representation

    data = load_dataset(args.data)
    config = _config(args.config)
    data.require_all_outputs()
    rng = np.random.default_rng(config.seed)
    kernel = initial_kernel(data.num_outputs, config.ranks, rng, kinds=config.kinds)
    grid = build_grid(data, config.grid_shape(data.input_dim))
    weights = interp_weights(grid, data)
    ski = build_ski_operator(kernel, grid, weights, data, resolve_representation(config, kernel))
    dops = derivative_operators(kernel, grid, weights, data)
    exact = exact_gradient(DenseGp(dense_kernel_matrix(kernel, data), data.y), dense_kernel_derivatives(kernel, data))
    interp = exact_gradient(DenseGp(ski.materialize(), data.y), [op.materialize() for op in dops])
    probes = sample_rademacher(data.n, config.num_probes, int(rng.integers(2**63 - 1)))
    report = log_likelihood_gradient(ski, data.y, probes, dops, config.minres_tol, config.minres_max_iter)
    print("{:<22} {:>14} {:>14} {:>14} {:>10}".format("hyperparameter", "exact", "interpolated", "matrix-free", "stderr"))
    for entry, e, i, g, s in zip(kernel.index_map(), exact, interp, report.gradient, report.trace_stderr / 2):
        print("{:<22} {:>14.6g} {:>14.6g} {:>14.6g} {:>10.3g}".format(entry.name, e, i, g, s))
    rel = np.linalg.norm(report.gradient - interp) / max(np.linalg.norm(interp), 1e-300)
    print("relative error matrix-free vs interpolated exact: {:.3g}".format(rel))
    return 0


def _mean_se(values):
    values = np.asarray(values, dtype=np.float64)
    se = values.std(ddof=1) / np.sqrt(values.size) if values.size > 1 else 0.0
    return values.mean(), se


def cmd_benchmark(args):
    data = load_dataset(args.data)
    test = load_dataset(args.test, labels=data.labels, standardization=data.standardization)
    base = _config(args.config)
    rows = []
    for k in range(args.repeats):
        config = ModelConfig.from_dict(dict(base.to_dict(), seed=base.seed + k))
        t0 = time.perf_counter()
        model, result = fit_model(data, config)
        seconds = time.perf_counter() - t0
        metrics = evaluate(predict(posterior_for(model), test), test)
        rows.append({"run": k, "seconds": seconds, "smse": metrics.smse, "nlpd": metrics.nlpd,
                     "iterations": result.state.iteration})
        _LOG.info("run %d: %.1fs SMSE %.4f NLPD %.4f", k, seconds, metrics.smse, metrics.nlpd)
    print("{:<8} {}".format("metric", "mean (se)"))
    for key in ("seconds", "smse", "nlpd"):
        mean, se = _mean_se([r[key] for r in rows])
        print("{:<8} {:.4g} ({:.2g})".format(key, mean, se))
    if args.out:
        _write_log(rows, args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="llgp", description="Matrix-free multi-output GP training and prediction.")
    parser.add_argument("--threads", type=int, default=None, help="FFT worker threads (env {})".format(THREADS_ENV))
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="learn hyperparameters and write a model file")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="per-iteration training log (CSV)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict test points with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", help="write SMSE/NLPD report (JSON)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="compare matrix-free and exact gradients at the initial hyperparameters")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("benchmark", help="repeat train+predict and report mean (standard error)")
    p.add_argument("--data", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--config")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", help="per-run results (CSV)")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads or int(os.environ.get(THREADS_ENV, "0") or 0) or None
    ctx = scipy.fft.set_workers(threads) if threads else contextlib.nullcontext()
    try:
        with ctx:
            return args.func(args)
    except (DatasetError, ConfigError, ModelFileError, TrainingError, MemoryError, OSError, ValueError) as e:
        print("llgp {}: error: {}".format(args.command, e), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
