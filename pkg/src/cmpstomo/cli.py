"""Command-line front end.

Every subcommand reads its parameters from flags, optionally layered on a
JSON file given with ``--config`` (explicit flags win). Results go to files
or stdout; progress goes to stderr. Exit codes: 0 success, 2 invalid input,
3 fit failure, 4 I/O error. Failures also print a one-line JSON error record
to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .cmps import ExactModel, generate_state
from .correlations import CorrTensor, Grid1D, _check_even, estimate_correlator, read_corr, read_shots, write_corr, write_shots
from .errors import CmpsTomoError, FitError, ValidationError
from .expfit import ExpSumModel, fit_spectrum
from .mfit import MFitProblem, MFitResult, fit_m
from .predict import ReconstructedModel, predict, predict_tensor, validation_report
from .shots import PhaseFieldModel, sample_shots

log = logging.getLogger("cmpstomo")

EXIT_OK, EXIT_VALIDATION, EXIT_FIT, EXIT_IO = 0, 2, 3, 4

DEFAULT_GRID = "0:0.1:30"

# per-command defaults; also the set of keys a --config file may contain
DEFAULTS: dict[str, dict] = {
    "generate": {"d": 2, "seed": 0, "grid": DEFAULT_GRID, "noise_sigma": 0.0, "orders": "2,4,6", "output": None},
    "simulate-shots": {
        "model": None, "sigma2": 0.25, "xi": 10.0, "phase_spread": 0.0,
        "grid": "0:1:30", "n_shots": 1000, "seed": 0, "output": None,
    },
    "estimate": {"input": None, "orders": "2,4,6", "output": None},
    "fit-spectrum": {"input": None, "d": 2, "m": None, "output": None},
    "fit-m": {
        "input": None, "n_starts": 100, "seed": 0, "complex_m": False,
        "threads": 1, "output": None,
    },
    "predict": {"input": None, "order": 6, "grid": None, "allow_high_order": False, "output": None},
    "validate": {"input": None, "model": None, "orders": "2,4,6", "output": None},
    "pipeline": {
        "input": None, "d": 2, "n_starts": 100, "seed": 0, "complex_m": False,
        "threads": 1, "orders": "2,4,6", "output": None,
    },
}


def _parse_orders(text) -> list[int]:
    try:
        orders = [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise ValidationError(f"invalid order list {text!r}") from exc
    for n in orders:
        _check_even(n)
    return orders


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise ValidationError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=1))


def cmd_generate(cfg: dict) -> dict:
    _require(cfg, "output")
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    grid = Grid1D.parse(cfg["grid"])
    orders = _parse_orders(cfg["orders"])
    state = generate_state(int(cfg["d"]), int(cfg["seed"]))
    truth = ReconstructedModel.from_state(state)
    sigma = float(cfg["noise_sigma"])
    if sigma < 0:
        raise ValidationError("noise sigma must be non-negative")
    rng = np.random.default_rng([int(cfg["seed"]), 1])
    state.save(out / "state.json")
    spectrum = ExactModel.from_state(state).spectrum
    _write_json(out / "truth.json", {"lambda": [[z.real, z.imag] for z in spectrum.eigenvalues], "gap": spectrum.gap})
    for n in orders:
        exact = predict_tensor(truth.lam, truth.M, n, grid)
        if sigma > 0:
            noisy = exact.values + sigma * rng.standard_normal(len(exact))
            tensor = CorrTensor(n, grid, noisy, std_err=np.full(len(exact), sigma))
        else:
            tensor = exact
        write_corr(tensor, out / f"c{n}.csv")
        log.info("wrote c%d.csv (%d entries)", n, len(tensor))
    return {"output": str(out), "d": state.d, "orders": orders}


def cmd_simulate_shots(cfg: dict) -> dict:
    _require(cfg, "output")
    grid = Grid1D.parse(cfg["grid"])
    if cfg.get("model"):
        model = PhaseFieldModel.load(cfg["model"])
    else:
        model = PhaseFieldModel(
            sigma2=float(cfg["sigma2"]), xi=float(cfg["xi"]),
            global_phase_spread=float(cfg["phase_spread"]), seed=int(cfg["seed"]),
        )
    shots = sample_shots(model, grid, int(cfg["n_shots"]))
    write_shots(shots, cfg["output"])
    log.info("wrote %d shots on %d points", shots.num_shots, grid.count)
    return {"output": cfg["output"], "shots": shots.num_shots}


def cmd_estimate(cfg: dict) -> dict:
    _require(cfg, "input", "output")
    orders = _parse_orders(cfg["orders"])
    shots = read_shots(cfg["input"])
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    for n in orders:
        write_corr(estimate_correlator(shots, n), out / f"c{n}.csv")
        log.info("estimated order %d from %d shots", n, shots.num_shots)
    return {"output": str(out), "orders": orders}


def cmd_fit_spectrum(cfg: dict) -> dict:
    _require(cfg, "input", "output")
    c2 = read_corr(cfg["input"])
    m = int(cfg["m"]) if cfg.get("m") is not None else int(cfg["d"]) ** 2
    model = fit_spectrum(c2, m)
    model.save(cfg["output"])
    log.info("fitted %d eigenvalues, residual %.3e", model.m, model.residual)
    return model.to_dict()


def _load_dir(path: Path, orders) -> dict[int, CorrTensor]:
    return {n: read_corr(path / f"c{n}.csv") for n in orders}


def _fit_model(spectrum: ExpSumModel, c2: CorrTensor, c4: CorrTensor, cfg: dict) -> tuple[MFitResult, ReconstructedModel]:
    problem = MFitProblem(
        spectrum, c4, c2,
        real_m=not cfg["complex_m"], num_starts=int(cfg["n_starts"]), seed=int(cfg["seed"]),
    )
    t0 = time.perf_counter()
    result = fit_m(problem, threads=int(cfg["threads"]))
    log.info("M fit: %d starts in %.1f s, eps4 %.3e", problem.num_starts, time.perf_counter() - t0, result.eps4)
    model = ReconstructedModel.from_fits(spectrum, result, {"grid": str(c2.grid), "real_m": problem.real_m})
    return result, model


def cmd_fit_m(cfg: dict) -> dict:
    """Inputs: a directory holding ``c2.csv``, ``c4.csv`` and ``spectrum.json``."""
    _require(cfg, "input", "output")
    src = Path(cfg["input"])
    data = _load_dir(src, (2, 4))
    spectrum = ExpSumModel.load(src / "spectrum.json")
    result, model = _fit_model(spectrum, data[2], data[4], cfg)
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    result.save(out / "mfit.json")
    model.save(out / "model.json")
    return result.to_dict()


def cmd_predict(cfg: dict) -> dict:
    _require(cfg, "input", "output")
    model = ReconstructedModel.load(cfg["input"])
    grid = Grid1D.parse(cfg["grid"] or model.provenance.get("grid", DEFAULT_GRID))
    tensor = predict(model, int(cfg["order"]), grid, allow_high_order=bool(cfg["allow_high_order"]))
    write_corr(tensor, cfg["output"])
    return {"output": cfg["output"], "order": tensor.order, "entries": len(tensor)}


def _report(model: ReconstructedModel, measured: list[CorrTensor], out: Path, cfg: dict) -> dict:
    report = validation_report(model, measured, config=cfg)
    report.write(out)
    sys.stderr.write(report.render_text())
    return report.to_dict()


def cmd_validate(cfg: dict) -> dict:
    """Inputs: ``--model model.json`` and a directory of measured ``c{n}.csv``."""
    _require(cfg, "input", "model", "output")
    orders = _parse_orders(cfg["orders"])
    measured = list(_load_dir(Path(cfg["input"]), orders).values())
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    return _report(ReconstructedModel.load(cfg["model"]), measured, out, cfg)


def cmd_pipeline(cfg: dict) -> dict:
    """Spectrum fit, ``M`` fit, prediction and validation on ``c2/c4(/c6).csv`` in ``--input``."""
    _require(cfg, "input", "output")
    orders = _parse_orders(cfg["orders"])
    src, out = Path(cfg["input"]), Path(cfg["output"])
    data = _load_dir(src, sorted(set(orders) | {2, 4}))
    out.mkdir(parents=True, exist_ok=True)
    spectrum = fit_spectrum(data[2], int(cfg["d"]) ** 2)
    spectrum.save(out / "spectrum.json")
    log.info("spectrum: %s", np.array2string(spectrum.lam, precision=4))
    result, model = _fit_model(spectrum, data[2], data[4], cfg)
    result.save(out / "mfit.json")
    model.save(out / "model.json")
    for n in orders:
        if n > 4:
            write_corr(predict(model, n, data[2].grid, allow_high_order=True), out / f"c{n}_pred.csv")
    return _report(model, [data[n] for n in orders], out, cfg)


COMMANDS = {
    "generate": cmd_generate,
    "simulate-shots": cmd_simulate_shots,
    "estimate": cmd_estimate,
    "fit-spectrum": cmd_fit_spectrum,
    "fit-m": cmd_fit_m,
    "predict": cmd_predict,
    "validate": cmd_validate,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmpstomo", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def add(name: str, help_text: str, *flags: tuple):
        p = sub.add_parser(name, help=help_text, argument_default=S)
        p.add_argument("--config", help="JSON file with option values; flags override it")
        for args, kwargs in flags:
            p.add_argument(*args, **kwargs)
        return p

    inp = (("--input",), {"help": "input file or directory"})
    outp = (("--output",), {"help": "output file or directory"})
    seed = (("--seed",), {"type": int})
    grid = (("--grid",), {"help": "grid as start:step:count"})
    orders = (("--orders",), {"help": "comma-separated even orders"})
    starts = (("--n-starts",), {"type": int, "dest": "n_starts", "help": "Nelder-Mead starts (default 100)"})
    cm = (("--complex-m",), {"action": "store_true", "dest": "complex_m", "help": "fit a complex M"})
    threads = (("--threads",), {"type": int, "help": "worker cap for the multi-start fit"})
    d = (("--d",), {"type": int, "help": "bond dimension"})

    add("generate", "random normalized state and its exact correlators", d, seed, grid, orders, outp,
        (("--noise-sigma",), {"type": float, "dest": "noise_sigma"}))
    add("simulate-shots", "Gaussian phase-field shots", grid, seed, outp,
        (("--model",), {"help": "phase-field model JSON"}),
        (("--sigma2",), {"type": float}), (("--xi",), {"type": float}),
        (("--phase-spread",), {"type": float, "dest": "phase_spread"}),
        (("--n-shots",), {"type": int, "dest": "n_shots"}))
    add("estimate", "even-order correlators from shots", inp, orders, outp)
    add("fit-spectrum", "eigenvalues from a two-point tensor", inp, d, outp, (("--m",), {"type": int}))
    add("fit-m", "M matrix from spectrum.json, c2.csv and c4.csv", inp, starts, seed, cm, threads, outp)
    add("predict", "higher-order correlator from a model", inp, grid, outp,
        (("--order",), {"type": int}),
        (("--allow-high-order",), {"action": "store_true", "dest": "allow_high_order"}))
    add("validate", "score a model against measured tensors", inp, orders, outp, (("--model",), {}))
    add("pipeline", "spectrum fit, M fit, prediction and report", inp, d, starts, seed, cm, threads, orders, outp)
    return parser


def resolve_config(command: str, flags: dict) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = dict(DEFAULTS[command])
    path = flags.pop("config", None)
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ValidationError("config file must hold a JSON object")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise ValidationError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(loaded)
    cfg.update(flags)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose + 1, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    try:
        cfg = resolve_config(args.command, flags)
        summary = COMMANDS[args.command](cfg)
    except ValidationError as exc:
        return _fail(exc, EXIT_VALIDATION)
    except FitError as exc:
        return _fail(exc, EXIT_FIT)
    except OSError as exc:
        return _fail(exc, EXIT_IO)
    except CmpsTomoError as exc:
        return _fail(exc, EXIT_VALIDATION)
    print(json.dumps({"command": args.command, "status": "ok", "result": summary}, default=str))
    return EXIT_OK


def _fail(exc: Exception, code: int) -> int:
    log.error("%s: %s", type(exc).__name__, exc)
    print(json.dumps({"status": "error", "error": type(exc).__name__, "message": str(exc), "exit_code": code}))
    return code


if __name__ == "__main__":
    sys.exit(main())
