"""Command-line interface: ``tapkrig {simulate,fit,predict,experiment,score}``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import io as tio

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("tapkrig")


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file or a run manifest (.json)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads for compiled kernels")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tapkrig", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common],
                       help="simulate an experiment's reference field and samples")
    s.add_argument("--experiment", choices=("nested", "nonstat-matern"))
    f = sub.add_parser("fit", parents=[common], help="fit the model to x,y,value data and predict")
    f.add_argument("--input", help="CSV with header x,y,value")
    pr = sub.add_parser("predict", parents=[common], help="predict with a fitted model")
    pr.add_argument("--model", required=True, help="directory holding model.json/model.npz")
    pr.add_argument("--targets", help="CSV with header x,y (default: the config grid)")
    e = sub.add_parser("experiment", parents=[common], help="run a synthetic experiment")
    e.add_argument("--experiment", choices=("nested", "nonstat-matern"))
    sc = sub.add_parser("score", parents=[common], help="MSPE between two binary grids")
    sc.add_argument("--pred", required=True)
    sc.add_argument("--truth", required=True)
    return p


def _config(args, **extra):
    from .pipeline import load_config
    over = {"seed": args.seed, "out": args.out, "threads": args.threads}
    over.update(extra)
    return load_config(args.config, **over)


def _set_threads(n):
    if n:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _read_targets(path):
    import csv
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        head = [h.strip() for h in next(r, [])]
        if head[:2] != ["x", "y"]:
            raise tio.DataFormatError(f"{path}: expected header x,y")
        rows = [[float(c) for c in row[:2]] for row in r if row]
    return np.array(rows).reshape(-1, 2)


def cmd_simulate(args):
    from .pipeline import simulate_experiment
    cfg = _config(args, experiment=args.experiment)
    grid, truth, pts, vals, field, info = simulate_experiment(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    tio.write_grid_binary(os.path.join(cfg.out, "truth.bin"), grid.nx, grid.ny, truth)
    tio.write_grid_csv(os.path.join(cfg.out, "truth.csv"), grid.coords(), truth)
    tio.write_pgm(os.path.join(cfg.out, "truth.pgm"), truth.reshape(grid.shape))
    tio.write_points_csv(os.path.join(cfg.out, "samples.csv"), pts, vals)
    if field is not None:
        for name in ("a1", "a2", "angle", "nu"):
            tio.write_pgm(os.path.join(cfg.out, f"param_{name}.pgm"), getattr(field, name))
    tio.write_json(os.path.join(cfg.out, "manifest.json"),
                   {"config": cfg.record(), "simulation": info})
    print(f"wrote {cfg.out}")
    return EXIT_OK


def cmd_fit(args):
    from .pipeline import run_pipeline
    cfg = _config(args, input=args.input)
    m = run_pipeline(cfg)
    f = m["fit"]
    if "first_pass" in f:
        print(f"selected {f['first_pass']['n_selected']} then {f['second_pass']['n_selected']} "
              f"of {f['dictionary_size']} basis functions")
    print(f"wrote {cfg.out}")
    return EXIT_OK


def cmd_predict(args):
    from .kriging import predict_variance
    from .pipeline import _write_prediction, load_model
    cfg = _config(args)
    model = load_model(args.model)
    os.makedirs(cfg.out, exist_ok=True)
    if args.targets:
        targets = _read_targets(args.targets)
        res = predict_variance(model, targets)
    else:
        grid = cfg.grid
        res = predict_variance(model, grid.coords())
        _write_prediction(cfg.out, "prediction", grid, res)
    tio.write_grid_csv(os.path.join(cfg.out, "prediction.csv"), res.coords, res.mean,
                       res.variance)
    print(f"wrote {cfg.out}")
    return EXIT_OK


def cmd_experiment(args):
    from .pipeline import run_experiment
    cfg = _config(args, experiment=args.experiment)
    m = run_experiment(cfg)
    print("method,n_basis,mspe")
    for r in m["comparison"]:
        print(f"{r['method']},{r['n_basis']},{r['mspe']:.6g}")
    return EXIT_OK


def cmd_score(args):
    from .pipeline import compute_mspe
    _, _, pred, _ = tio.read_grid_binary(args.pred)
    _, _, truth, _ = tio.read_grid_binary(args.truth)
    try:
        print(repr(compute_mspe(pred, truth)))
    except ValueError as exc:
        raise tio.DataFormatError(str(exc)) from None
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
            "experiment": cmd_experiment, "score": cmd_score}


def main(argv=None):
    from .pipeline import ConfigError, PipelineError
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _set_threads(args.threads)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, tio.DataFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PipelineError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        if isinstance(exc.cause, (OSError, tio.DataFormatError)):
            return EXIT_IO
        return EXIT_NUMERIC
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError, ValueError,
            RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
