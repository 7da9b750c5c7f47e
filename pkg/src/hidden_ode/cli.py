"""Command-line entry points: simulate, train, eval, diagnose and sweep.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or configuration
error. All randomness comes from one integer seed fed to
``numpy.random.default_rng`` (PCG64).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import benchmarks as bm
from . import evaluation as ev
from . import hybrid_model as hm
from . import neural_field as nf
from . import recursive_newton as rn
from .errors import (CheckpointFormatError, ConfigurationError, DatasetFormatError,
                     HiddenOdeError, NumericalError)

FORMAT_VERSION = 1
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
THREADS_ENV = "HIDDEN_ODE_THREADS"


class UsageError(Exception):
    """Bad arguments; maps to exit code 2."""


# -- configuration ----------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Everything needed to rebuild a training run.

    ``benchmark_options`` is passed to the benchmark builder; ``mlp`` overrides
    the benchmark's default network.
    """

    benchmark: str
    epochs: int = 20
    seed: int = 0
    q_x: float = 1e-5
    q_theta: float = 1e-2
    r_y: float = 1e-10
    p_x0: float = 1e-2
    p_theta0: float = 1e2
    param_gain: str = "newton"
    ic_iters: int = 20
    ic_tol: float = 1e-9
    mlp: dict | None = None
    benchmark_options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known - {"format_version"}
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        if "benchmark" not in data:
            raise ConfigurationError("config needs a 'benchmark' entry")
        return cls(**{k: v for k, v in data.items() if k in known})

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, **{k: getattr(self, k) for k in self.__dataclass_fields__}}

    def spec(self) -> bm.BenchmarkSpec:
        return bm.get_benchmark(self.benchmark, **self.benchmark_options)

    def net(self, spec: bm.BenchmarkSpec) -> nf.MlpSpec:
        return spec.net if self.mlp is None else nf.MlpSpec.from_dict(self.mlp)

    def train_config(self, model: hm.HybridModel) -> rn.TrainConfig:
        noise = rn.NoiseConfig.isotropic(model.d_x, model.d_theta, model.d_y,
                                         self.q_x, self.q_theta, self.r_y)
        return rn.TrainConfig(self.epochs, noise, self.p_x0, self.p_theta0, self.seed,
                              rn.IcSolverConfig(self.ic_iters, self.ic_tol), self.param_gain)


def _canonical_benchmark(name: str) -> str:
    key = bm.ALIASES.get(name, name)
    if key not in bm.BUILDERS:
        raise UsageError(f"unknown system {name!r}; choose from "
                         f"{', '.join(sorted(bm.BUILDERS) + sorted(bm.ALIASES))}")
    return key


def _check_dataset(model: hm.HybridModel, data: bm.Dataset) -> None:
    if data.d_u != model.d_u or data.d_y != model.d_y:
        raise ConfigurationError(
            f"dataset has {data.d_u} input and {data.d_y} measurement columns; "
            f"{model.name} needs {model.d_u} and {model.d_y}")
    if data.states is not None and data.states.shape[1] != model.d_x:
        raise ConfigurationError(f"dataset has {data.states.shape[1]} state columns, "
                                 f"{model.name} has {model.d_x} states")
    if len(data) < 2:
        raise ConfigurationError("dataset needs at least two rows")


# -- checkpoints ------------------------------------------------------------------

def make_checkpoint(cfg: ExperimentConfig, net: nf.MlpSpec | None, theta, x0, dt: float,
                    final_loss: float | None, oracle: bool = False) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "benchmark": cfg.benchmark,
        "oracle": oracle,
        "mlp": None if net is None else net.to_dict(),
        "weights": {"length": int(np.size(theta)), "values": [float(v) for v in np.ravel(theta)]},
        "x0": [float(v) for v in x0],
        "dt": float(dt),
        "final_loss": final_loss,
        "config": cfg.to_dict(),
    }


def write_json(obj: dict, path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Parse a checkpoint; returns ``(config, model, theta, x0)``."""
    text = Path(path).read_text()
    try:
        ck = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"malformed checkpoint: {exc.msg}", position=exc.pos) from exc
    if not isinstance(ck, dict) or ck.get("format_version") != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint format_version {ck.get('format_version')!r}"
                                    if isinstance(ck, dict) else "checkpoint must be a JSON object")
    for key in ("benchmark", "weights", "x0", "dt", "config"):
        if key not in ck:
            raise CheckpointFormatError(f"checkpoint lacks '{key}'")
    cfg = ExperimentConfig.from_dict(ck["config"])
    spec = cfg.spec()
    if ck.get("oracle"):
        model = bm.true_model(spec, dt=ck["dt"])
        theta = np.zeros(0)
    else:
        net = nf.MlpSpec.from_dict(ck["mlp"])
        theta = nf.weights_from_payload(ck["weights"], net)
        model = bm.learner_model(spec, net, dt=ck["dt"])
    x0 = np.asarray(ck["x0"], dtype=float)
    if x0.shape != (model.d_x,):
        raise CheckpointFormatError(f"x0 has length {x0.size}, model needs {model.d_x}")
    return cfg, model, theta, x0


def write_curve(curve, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("epoch,loss,wall_time_s\n")
        for rec in curve:
            fh.write(f"{rec.epoch},{rec.loss:.17g},{rec.wall_time:.6f}\n")


def write_trajectory(data: bm.Dataset, states: np.ndarray, path, start: int = 0) -> None:
    """Dataset columns followed by ``xhat_*`` estimated-state columns."""
    part = bm.Dataset(data.times[start:], data.inputs[start:], data.measurements[start:],
                      None if data.states is None else data.states[start:], data.name)
    bm.write_dataset(part, path)
    lines = Path(path).read_text().splitlines()
    head = lines[0] + "," + ",".join(f"xhat_{k}" for k in range(states.shape[1]))
    rows = [line + "," + ",".join("%.17g" % v for v in s) for line, s in zip(lines[1:], states)]
    Path(path).write_text("\n".join([head] + rows) + "\n")


# -- commands ---------------------------------------------------------------------

def cmd_simulate(args) -> int:
    name = _canonical_benchmark(args.system)
    spec = bm.get_benchmark(name, **_options(args))
    steps = spec.steps if args.steps is None else args.steps
    dt = spec.dt if args.dt is None else args.dt
    if steps < 1 or not dt > 0:
        raise UsageError("--steps must be >= 1 and --dt > 0")
    if name == "hodgkin_huxley" and (steps != spec.steps or dt != spec.dt):
        spec = bm.hodgkin_huxley(dt=dt, steps=steps, **_options(args))
    data = bm.simulate_dataset(spec, args.process_noise, args.meas_noise, args.seed, steps, dt)
    bm.write_dataset(data, args.out)
    print(f"wrote {len(data)} rows to {args.out} (dt={dt:g})")
    if args.oracle_checkpoint:
        cfg = ExperimentConfig(name, seed=args.seed, benchmark_options=_options(args))
        write_json(make_checkpoint(cfg, None, np.zeros(0), data.states[0], dt, None, oracle=True),
                   args.oracle_checkpoint)
        print(f"wrote oracle checkpoint to {args.oracle_checkpoint}")
    return EXIT_OK


def _options(args) -> dict:
    opts = {}
    if getattr(args, "start", None):
        if _canonical_benchmark(args.system) != "hodgkin_huxley":
            raise UsageError("--start applies to the hodgkin_huxley system only")
        opts["start"] = args.start
    return opts


def _train_config_from_args(args) -> ExperimentConfig:
    if args.config:
        try:
            cfg = ExperimentConfig.from_dict(json.loads(Path(args.config).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    else:
        if not args.system:
            raise UsageError("train needs --system or --config")
        cfg = ExperimentConfig(args.system)
    if args.system:
        cfg.benchmark = args.system
    cfg.benchmark = _canonical_benchmark(cfg.benchmark)
    for attr in ("epochs", "seed", "q_x", "q_theta", "r_y", "p_x0", "p_theta0", "param_gain"):
        val = getattr(args, attr, None)
        if val is not None:
            setattr(cfg, attr, val)
    return cfg


def _run_training(cfg: ExperimentConfig, data: bm.Dataset):
    spec = cfg.spec()
    net = cfg.net(spec)
    model = bm.learner_model(spec, net, dt=data.dt)
    _check_dataset(model, data)
    tcfg = cfg.train_config(model)
    guess = spec.guess()
    if np.isfinite(data.measurements[0]).all():
        guess[list(spec.measured_indices)] = data.measurements[0]
    result = rn.train(model, data, tcfg, x_guess=guess)
    return model, net, result


def cmd_train(args) -> int:
    cfg = _train_config_from_args(args)
    data = bm.load_dataset(args.data)
    model, net, result = _run_training(cfg, data)
    if result.curve:
        write_curve(result.curve, args.curve)
    if result.error is not None:
        print(f"training failed after {len(result.curve)} epochs: {result.error}", file=sys.stderr)
        return EXIT_RUNTIME
    final = result.curve[-1].loss
    write_json(make_checkpoint(cfg, net, result.theta, result.x0, model.dt, final), args.checkpoint)
    print(f"final loss {final:.6g} after {len(result.curve)} epochs; "
          f"checkpoint {args.checkpoint}, curve {args.curve}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, model, theta, x0 = load_checkpoint(args.checkpoint)
    if args.system and _canonical_benchmark(args.system) != cfg.benchmark:
        raise ConfigurationError(f"checkpoint is for {cfg.benchmark}, not {args.system}")
    data = bm.load_dataset(args.data)
    _check_dataset(model, data)
    if abs(data.dt - model.dt) > 1e-9 * model.dt:
        raise ConfigurationError(f"dataset dt {data.dt:g} differs from checkpoint dt {model.dt:g}")
    start = 0
    if args.assimilate:
        noise = rn.NoiseConfig.isotropic(model.d_x, model.d_theta, model.d_y,
                                         cfg.q_x, cfg.q_theta, cfg.r_y)
        x0 = ev.assimilate(model, theta, data, noise, args.assimilate, x0, P_x0_scale=cfg.p_x0)
        start = min(args.assimilate, len(data)) - 1
    result = ev.evaluate_rollout(model, theta, x0, data, start)
    write_trajectory(data, result.states, args.trajectory, start)
    report = {"benchmark": cfg.benchmark, "samples": int(result.states.shape[0]),
              "start_index": start, "x0": [float(v) for v in result.states[0]],
              "hidden_indices": list(model.hidden_indices)}
    if result.per_state_nrmse is not None:
        report["per_state_nrmse"] = [float(v) for v in result.per_state_nrmse]
        report["overall_nrmse"] = result.overall_nrmse
        report["hidden_nrmse"] = result.hidden_nrmse
        print(f"overall nRMSE {result.overall_nrmse:.4g}")
    else:
        print("no ground-truth columns; nRMSE omitted")
    write_json(report, args.report)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    name = _canonical_benchmark(args.system)
    spec = bm.get_benchmark(name)
    model = bm.learner_model(spec)
    if args.measure_all:
        model = hm.HybridModel(**{**_model_fields(model),
                                  "measurement": hm.MeasurementMap.identity(model.d_x)})
    theta = nf.init_params(model.net, args.seed)
    x = spec.initial_state
    u = spec.control(x, 0.0)
    noise = rn.NoiseConfig.isotropic(model.d_x, model.d_theta, model.d_y, q_theta=args.p_theta0)
    report = ev.joint_gain_diagnostic(model, x, u, theta, noise)
    out = {"system": name, "measure_all": bool(args.measure_all), **report.to_dict()}
    if args.json:
        print(json.dumps(out, sort_keys=True))
    else:
        print(f"max |F_theta^T H^T| = {out['max_abs_entry']:.6g}")
        print(f"joint gain norm     = {out['joint_gain_norm']:.6g}")
        print(f"alternating gain norm = {out['alternating_gain_norm']:.6g}")
        print("vanishing structure holds" if report.vanishes else "parameters are visible in y")
    return EXIT_OK


def _model_fields(model: hm.HybridModel) -> dict:
    names = ("known_field", "known_jacobian", "measurement", "dt", "d_x", "d_u", "hidden_indices",
             "net", "net_inputs", "input_shift", "input_scale", "output_scale", "name")
    return {k: getattr(model, k) for k in names}


def _sweep_one(job):
    cfg_dict, data_path, out_dir = job
    cfg = ExperimentConfig.from_dict(cfg_dict)
    data = bm.load_dataset(data_path)
    model, net, result = _run_training(cfg, data)
    stem = Path(out_dir) / f"seed_{cfg.seed}"
    write_curve(result.curve, f"{stem}_curve.csv")
    row = {"seed": cfg.seed, "epochs": len(result.curve),
           "final_loss": result.curve[-1].loss if result.curve else float("nan"),
           "error": "" if result.error is None else str(result.error)}
    if result.error is None:
        final = result.curve[-1].loss
        write_json(make_checkpoint(cfg, net, result.theta, result.x0, model.dt, final),
                   f"{stem}_checkpoint.json")
        if data.states is not None:
            try:
                row["overall_nrmse"] = ev.evaluate_rollout(model, result.theta, result.x0,
                                                           data).overall_nrmse
            except NumericalError as exc:
                row["error"] = str(exc)
    return row


def sweep_workers(n_jobs: int) -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        cap = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if cap < 1:
        raise UsageError(f"{THREADS_ENV} must be >= 1")
    return max(1, min(cap, n_jobs))


def cmd_sweep(args) -> int:
    base = _train_config_from_args(args)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    bm.load_dataset(args.data)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for seed in seeds:
        d = base.to_dict()
        d["seed"] = seed
        jobs.append((d, args.data, str(out_dir)))
    workers = sweep_workers(len(jobs))
    if workers == 1:
        rows = [_sweep_one(j) for j in jobs]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    cols = ["seed", "epochs", "final_loss", "overall_nrmse", "error"]
    with open(out_dir / "summary.csv", "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(c, "")) for c in cols) + "\n")
    print(f"{len(rows)} runs with {workers} worker(s); summary in {out_dir / 'summary.csv'}")
    return EXIT_RUNTIME if any(r["error"] for r in rows) else EXIT_OK


def _fmt(v) -> str:
    if isinstance(v, float):
        return "%.17g" % v
    return str(v).replace(",", ";").replace("\n", " ")


# -- parser -----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--system", help="benchmark name (overrides the config file)")
    p.add_argument("--config", help="ExperimentConfig JSON")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--q-x", dest="q_x", type=float, help="process weight scale")
    p.add_argument("--q-theta", dest="q_theta", type=float, help="parameter drift weight scale")
    p.add_argument("--r-y", dest="r_y", type=float, help="measurement weight scale")
    p.add_argument("--p-x0", dest="p_x0", type=float, help="initial state covariance scale")
    p.add_argument("--p-theta0", dest="p_theta0", type=float, help="initial parameter covariance scale")
    p.add_argument("--param-gain", dest="param_gain", choices=rn.PARAM_GAINS)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hidden-ode", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a dataset CSV from a benchmark")
    p.add_argument("--system", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--process-noise", dest="process_noise", type=float, default=0.0)
    p.add_argument("--meas-noise", dest="meas_noise", type=float, default=0.0)
    p.add_argument("--start", choices=("cycle", "rest"), help="hodgkin_huxley initial state")
    p.add_argument("--oracle-checkpoint", dest="oracle_checkpoint",
                   help="also write a checkpoint holding the true dynamics")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit the hidden dynamics to a dataset")
    _add_train_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--curve", required=True, help="learning-curve CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="roll out a checkpoint against a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--system", help="assert the checkpoint's benchmark")
    p.add_argument("--trajectory", required=True, help="output trajectory CSV")
    p.add_argument("--report", required=True, help="output report JSON")
    p.add_argument("--assimilate", type=int, default=0,
                   help="estimate the initial state from this many leading samples")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagnose", help="joint-gain masking check at the initial state")
    p.add_argument("--system", required=True)
    p.add_argument("--measure-all", dest="measure_all", action="store_true")
    p.add_argument("--json", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p-theta0", dest="p_theta0", type=float, default=1e2)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sweep", help="train several seeds in parallel")
    _add_train_flags(p)
    p.add_argument("--seeds", required=True, help="comma-separated seeds")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command; choose simulate, train, eval, diagnose or sweep")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DatasetFormatError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (HiddenOdeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
