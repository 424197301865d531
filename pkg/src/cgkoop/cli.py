"""Config-driven command line: generate truth data, train the surrogate,
evaluate DA methods, probe filter complexity, and aggregate reports.

Exit codes: 0 success, 1 runtime/numerical failure, 2 config validation
failure.  All randomness derives from one --seed through (seed, role,
index) stream derivation, so reruns are bit-identical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, cgfilter, cgkn, enkf, numcore, pdelab, training
from .errors import CgkoopError, ConfigError


def _load_toml(path):
    try:
        import tomllib
    except ImportError:
        import tomli as tomllib
    with open(path, "rb") as f:
        return tomllib.load(f)


def load_config_file(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    if path.suffix == ".toml":
        return _load_toml(path)
    if path.suffix == ".json":
        return json.loads(path.read_text())
    raise ConfigError(f"config must be .toml or .json, got {path.suffix}")


@dataclass
class DatasetSection:
    pde: str = "burgers"
    l_x: float = 1.0
    n_grid: int = 128
    dt_internal: float = 1e-3
    t_final: float = 2.0
    viscosity: float = 0.02
    subsample_dt: float = 0.1
    subsample_nx: int = 4
    n_train: int = 64
    n_test: int = 12
    train_frac: float = 0.8  # time split for single-trajectory (ks) data
    n_observed: int = 4
    noise_std: float = 0.0
    ic: str = "grf"


@dataclass
class ModelSection:
    d_v: int = 8
    encoder_hidden: list = field(default_factory=lambda: [32, 32, 32])
    eta_hidden: list = field(default_factory=lambda: [32, 32, 32])


@dataclass
class EnkfSection:
    ensemble_size: int = 100
    inflation: float = 1.0
    localization_radius: float = 0.0
    obs_noise_std: float = 0.05
    dt_internal: float = 0.01


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: training.TrainConfig = field(default_factory=training.TrainConfig)
    enkf: EnkfSection = field(default_factory=EnkfSection)

    @staticmethod
    def from_dict(raw):
        def build(cls, section):
            data = raw.get(section, {})
            known = {f.name for f in cls.__dataclass_fields__.values()} \
                if hasattr(cls, "__dataclass_fields__") else set()
            for key in data:
                if key not in known:
                    raise ConfigError(f"unknown field {section}.{key}")
            try:
                return cls(**data)
            except (TypeError, ConfigError) as err:
                raise ConfigError(f"section [{section}]: {err}") from None

        exp = raw.get("experiment", {})
        cfg = ExperimentConfig(
            name=exp.get("name", "experiment"),
            seed=int(exp.get("seed", 0)),
            dataset=build(DatasetSection, "dataset"),
            model=build(ModelSection, "model"),
            train=build(training.TrainConfig, "train"),
            enkf=build(EnkfSection, "enkf"),
        )
        cfg.validate()
        return cfg

    def validate(self):
        ds = self.dataset
        if ds.pde not in ("burgers", "ks"):
            raise ConfigError(f"dataset.pde must be burgers or ks, got {ds.pde!r}")
        if ds.n_grid < 2 or (ds.n_grid & (ds.n_grid - 1)) != 0:
            raise ConfigError(f"dataset.n_grid = {ds.n_grid} is not a power of two")
        if ds.n_grid % ds.subsample_nx != 0:
            raise ConfigError("dataset.subsample_nx does not divide dataset.n_grid")
        ratio = ds.subsample_dt / ds.dt_internal
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError(
                "dataset.subsample_dt is not a multiple of dataset.dt_internal")
        d = ds.n_grid // ds.subsample_nx
        if ds.n_observed >= d:
            raise ConfigError(f"dataset.n_observed = {ds.n_observed} must be "
                              f"smaller than the state dim {d}")
        if d % ds.n_observed != 0:
            raise ConfigError("dataset.n_observed does not divide the state dim")
        if not 0.0 < ds.train_frac < 1.0:
            raise ConfigError("dataset.train_frac must be inside (0, 1)")
        if self.train.n_warmup >= self.train.n_da:
            raise ConfigError("train.n_warmup must be below train.n_da")
        if self.model.d_v < 1:
            raise ConfigError("model.d_v must be >= 1")

    def to_json(self):
        return {
            "experiment": {"name": self.name, "seed": self.seed},
            "dataset": asdict(self.dataset),
            "model": asdict(self.model),
            "train": {k: (list(v) if isinstance(v, tuple) else v)
                      for k, v in asdict(self.train).items()},
            "enkf": asdict(self.enkf),
        }


def resolve_config(path, seed=None):
    cfg = ExperimentConfig.from_dict(load_config_file(path))
    if seed is not None:
        cfg.seed = int(seed)
    return cfg


def _write_config_copy(out_dir, cfg, extra=None):
    blob = cfg.to_json()
    if extra:
        blob.update(extra)
    numcore.write_json(Path(out_dir) / "config.json", blob)


# dataset generation ----------------------------------------------------------

def generate_dataset(cfg, threads=1):
    """Solve the configured PDE and package the sub-sampled dataset."""
    ds = cfg.dataset
    grid = pdelab.GridSpec(l_x=ds.l_x, n=ds.n_grid)
    solve_cfg = pdelab.SolveConfig(
        dt_internal=ds.dt_internal, t_final=ds.t_final,
        subsample_dt=ds.subsample_dt, subsample_nx=ds.subsample_nx,
        viscosity=ds.viscosity)
    stride_t = solve_cfg.stride_t()
    master = numcore.RngStream(cfg.seed)
    solver = pdelab.solve_burgers if ds.pde == "burgers" else pdelab.solve_ks

    if ds.pde == "burgers":
        n_traj = ds.n_train + ds.n_test

        def one(i):
            ic = pdelab.sample_grf(grid, master.split("ic", i))
            return solver(ic, grid, solve_cfg)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                trajs = list(pool.map(one, range(n_traj)))
        else:
            trajs = [one(i) for i in range(n_traj)]
        raw = np.stack(trajs)
        split = {"mode": "traj", "n_train": ds.n_train, "n_test": ds.n_test}
    else:
        if ds.ic == "preset":
            ic = pdelab.ks_preset_ic(grid)
        else:
            ic = pdelab.sample_grf(grid, master.split("ic", 0))
        raw = solver(ic, grid, solve_cfg)[None]
        n_sub = (raw.shape[1] - 1) // stride_t + 1
        train_steps = max(2, int(round(ds.train_frac * n_sub)))
        split = {"mode": "time", "train_steps": train_steps}

    obs = pdelab.uniform_obs_indices(ds.n_grid // ds.subsample_nx, ds.n_observed)
    meta = {
        "experiment": cfg.name,
        "seed": cfg.seed,
        "pde": ds.pde,
        "solver": {"n_grid": ds.n_grid, "dt_internal": ds.dt_internal,
                   "t_final": ds.t_final, "viscosity": ds.viscosity,
                   "subsample_dt": ds.subsample_dt,
                   "subsample_nx": ds.subsample_nx, "ic": ds.ic},
        "split": split,
    }
    return pdelab.make_dataset(raw, grid, stride_t, ds.subsample_nx, obs,
                               ds.noise_std, master.split("noise"), meta=meta)


def split_dataset(dataset):
    """(train_states, test_states), each (R, T, d), from the split metadata."""
    split = dataset.meta.get("split", {})
    if split.get("mode") == "time":
        k = split["train_steps"]
        return dataset.states[:, :k, :], dataset.states[:, k:, :]
    n_train = split.get("n_train", dataset.states.shape[0])
    return dataset.states[:n_train], dataset.states[n_train:]


def _spec_from(dataset, d_v):
    d = dataset.d
    d1 = len(dataset.obs_indices)
    return cgkn.StateSpec(d=d, d1=d1, d2=d - d1, d_v=d_v,
                          observed_indices=dataset.obs_indices)


# commands ---------------------------------------------------------------------

def cmd_gen(cfg, out_dir, threads):
    dataset = generate_dataset(cfg, threads=threads)
    path = pdelab.save_dataset(out_dir, dataset)
    _write_config_copy(out_dir, cfg)
    print(f"gen: wrote {dataset.states.shape[0]} trajectories x "
          f"{dataset.states.shape[1]} steps x d={dataset.d} to {path}")
    return 0


def cmd_train(cfg, dataset_dir, out_dir, threads):
    dataset = pdelab.load_dataset(dataset_dir)
    train_states, _ = split_dataset(dataset)
    spec = _spec_from(dataset, cfg.model.d_v)
    rng = numcore.RngStream(numcore.derive_seed(cfg.seed, "train"))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def hook(stage, epoch, snapshot):
        cgkn.save_checkpoint(out / f"checkpoint_stage{stage}_epoch{epoch + 1:04d}",
                             snapshot)

    # stage 1 checkpoints before stage 2 starts, so a later divergence
    # always leaves the last completed checkpoint behind; an existing
    # stage-1 checkpoint is reused as-is
    stage1_dir = out / "checkpoint_stage1"
    history = []
    stages_run = []
    if (stage1_dir / "manifest.json").exists():
        params, _ = cgkn.load_checkpoint(stage1_dir)
        print("train: found stage-1 checkpoint, skipping stage 1")
    else:
        result1 = training.train_cgkn(
            train_states, spec, cfg.train, rng.split("stage1"),
            encoder_hidden=cfg.model.encoder_hidden,
            eta_hidden=cfg.model.eta_hidden, stages=(1,),
            checkpoint_hook=hook)
        params = result1.params
        history += result1.history
        stages_run.append(1)
        cgkn.save_checkpoint(stage1_dir, params)

    result2 = training.train_cgkn(
        train_states, spec, cfg.train, rng.split("stage2"), params=params,
        stages=(2,), checkpoint_hook=hook)
    history += result2.history
    stages_run.append(2)
    uq_layers = training.train_uq(result2.params, train_states, cfg.train,
                                  rng.split("uq"))
    cgkn.save_checkpoint(out / "checkpoint_stage2", result2.params,
                         uq_layers=uq_layers)
    training.write_training_log(out / "training_log.csv", history)
    _write_config_copy(out, cfg, {"dataset_dir": str(dataset_dir)})
    last = history[-1] if history else {}
    print(f"train: stages {stages_run} done, final total loss "
          f"{last.get('total', float('nan')):.6g}; checkpoints in {out}")
    return 0


def _one_step_forecast(params, states):
    """One-step predictions over (R, T, d) -> (R, T-1, d)."""
    spec = params.spec
    obs = list(spec.observed_indices)
    unobs = list(spec.unobserved_indices)
    u1 = states[:, :-1, obs]
    u2 = states[:, :-1, unobs]
    v = cgkn.encode(params, u2)
    u1n, vn = cgkn.step_mean(params, u1, v)
    return spec.merge(u1n, cgkn.decode(params, vn))


def _eval_cgkn(cfg, dataset, test_states, ckpt_dir, out):
    params, uq_layers = cgkn.load_checkpoint(Path(ckpt_dir) / "checkpoint_stage2")
    spec = params.spec
    obs = list(spec.observed_indices)
    unobs = list(spec.unobserved_indices)
    warm = cfg.train.n_warmup
    t0 = time.perf_counter()
    means, stds = [], []
    first_run = None
    for r in range(test_states.shape[0]):
        u1_series = test_states[r][:, obs]
        run = cgfilter.filter_run(params, u1_series, warmup=warm)
        if first_run is None:
            first_run = run
        decoded = cgkn.decode(params, run.mus)
        means.append(decoded)
        if uq_layers is not None:
            stds.append(training.uq_predict(uq_layers, u1_series[1:]))
    wall = time.perf_counter() - t0
    post_mean = np.stack(means)  # (R, T-1, d2)
    post_std = np.stack(stds) if stds else np.zeros_like(post_mean)
    truth_unobs = test_states[:, 1:, unobs]
    forecast_pred = _one_step_forecast(params, test_states)
    report = baselines.evaluate(
        "cgkn", truth_unobs, post_mean, warm,
        forecast_truth=test_states[:, 1:, :], forecast_pred=forecast_pred,
        wall_time_s=wall)
    numcore.write_cgt(out / "forecast.cgt", forecast_pred)
    cgfilter.write_filter_log(out / "filter_log.csv", first_run,
                              sigma_diag_path=out / "filter_sigma_diag.cgt")
    return report, post_mean, post_std


def _eval_enkf(cfg, dataset, test_states, out, seed):
    ds = cfg.dataset
    ek = cfg.enkf
    obs_idx = list(dataset.obs_indices)
    unobs_idx = list(dataset.unobserved_indices)
    grid = pdelab.GridSpec(l_x=ds.l_x, n=dataset.d)
    forward = pdelab.make_forward_model(
        ds.pde, grid, ek.dt_internal, ds.subsample_dt, viscosity=ds.viscosity)
    config = enkf.EnKFConfig(
        ensemble_size=ek.ensemble_size, obs_indices=tuple(obs_idx),
        obs_noise_std=ek.obs_noise_std, forward_model=forward,
        inflation=ek.inflation, localization_radius=ek.localization_radius)
    rng = numcore.RngStream(numcore.derive_seed(seed, "enkf"))
    train_states, _ = split_dataset(dataset)

    def init_ensemble(r):
        if ds.pde == "burgers":
            return np.stack([pdelab.sample_grf(grid, rng.split("init", r * ek.ensemble_size + j))
                             for j in range(ek.ensemble_size)])
        pool = train_states.reshape(-1, dataset.d)
        picks = (rng.split("init", r).uniform((ek.ensemble_size,))
                 * pool.shape[0]).astype(int)
        return pool[picks]

    t0 = time.perf_counter()
    means, stds = [], []
    for r in range(test_states.shape[0]):
        obs_series = test_states[r][:, obs_idx]
        m, s = enkf.enkf_run(config, obs_series, init_ensemble(r),
                             rng.split("pert", r))
        means.append(m)
        stds.append(s)
    wall = time.perf_counter() - t0
    means = np.stack(means)
    stds = np.stack(stds)
    warm = cfg.train.n_warmup
    report = baselines.evaluate(
        "enkf", test_states[:, 1:, unobs_idx], means[:, 1:, unobs_idx],
        warm, wall_time_s=wall)
    return report, means[:, 1:, unobs_idx], stds[:, 1:, unobs_idx]


def _eval_interp(cfg, dataset, test_states, out):
    obs_idx = list(dataset.obs_indices)
    unobs_idx = list(dataset.unobserved_indices)
    warm = cfg.train.n_warmup
    t0 = time.perf_counter()
    fields = np.empty_like(test_states)
    for r in range(test_states.shape[0]):
        for t in range(test_states.shape[1]):
            fields[r, t] = baselines.interpolate_field(
                test_states[r, t, obs_idx], obs_idx, dataset.d,
                l_x=dataset.grid.l_x)
    wall = time.perf_counter() - t0
    est = fields[:, 1:, :][:, :, unobs_idx]
    report = baselines.evaluate("interp", test_states[:, 1:, unobs_idx],
                                est, warm, wall_time_s=wall)
    return report, est, np.zeros_like(est)


def cmd_eval(cfg, dataset_dir, method, out_dir, ckpt_dir=None, seed=None):
    dataset = pdelab.load_dataset(dataset_dir)
    _, test_states = split_dataset(dataset)
    if test_states.shape[0] == 0 or test_states.shape[1] < 2:
        raise ConfigError("dataset has no usable test split")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if seed is None else seed

    if method == "cgkn":
        if ckpt_dir is None or not (Path(ckpt_dir) / "checkpoint_stage2"
                                    / "manifest.json").exists():
            raise ConfigError(
                "method=cgkn needs --checkpoint DIR pointing at a train "
                "output directory (run `cgkoop train` first)")
        report, mean, std = _eval_cgkn(cfg, dataset, test_states, ckpt_dir, out)
    elif method == "enkf":
        report, mean, std = _eval_enkf(cfg, dataset, test_states, out, seed)
    elif method == "interp":
        report, mean, std = _eval_interp(cfg, dataset, test_states, out)
    else:
        raise ConfigError(f"unknown method {method!r}")

    numcore.write_cgt(out / "posterior_mean.cgt", mean)
    numcore.write_cgt(out / "posterior_std.cgt", std)
    numcore.write_cgt(out / "truth.cgt", test_states)
    baselines.write_metrics(out / "metrics.csv", report)
    _write_config_copy(out, cfg, {
        "dataset_dir": str(dataset_dir), "method": method,
        "warmup": cfg.train.n_warmup,
        "obs_indices": list(dataset.obs_indices),
        "l_x": dataset.grid.l_x,
    })
    fmse = "n/a" if report.forecast_mse is None else f"{report.forecast_mse:.6g}"
    print(f"eval[{method}]: da_mse={report.da_mse:.6g} forecast_mse={fmse} "
          f"wall={report.wall_time_s:.3f}s -> {out}")
    return 0


def cmd_bench_filter(out_dir, ladder, steps):
    rows, slope = cgfilter.filter_complexity_probe(ladder, n_steps=steps)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["d_v,seconds_compiled,seconds_python"]
    for row in rows:
        lines.append(f"{row.d_v},{row.seconds_compiled!r},{row.seconds_python!r}")
    (out / "bench_filter.csv").write_text("\n".join(lines) + "\n")
    backend = "compiled" if cgfilter.HAVE_KERNELS else "python"
    print(f"bench-filter ({steps} steps, active backend: {backend})")
    print(f"{'d_v':>6} {'compiled [s]':>14} {'python [s]':>14}")
    for row in rows:
        print(f"{row.d_v:>6} {row.seconds_compiled:>14.6f} "
              f"{row.seconds_python:>14.6f}")
    print(f"log-log slope vs d_v ({backend}): {slope:.2f}")
    return 0


def cmd_report(run_dirs, out_path):
    rows = []
    for run in run_dirs:
        blob = json.loads((Path(run) / "metrics.csv.json").read_text())
        rows.append(baselines.MetricReport.from_json(blob))
    header = f"{'method':<10} {'forecast_mse':>14} {'da_mse':>14} {'wall[s]':>10}"
    print(header)
    lines = [baselines.MetricReport.csv_header()]
    for r in rows:
        fmse = "" if r.forecast_mse is None else f"{r.forecast_mse:.6g}"
        print(f"{r.method:<10} {fmse:>14} {r.da_mse:>14.6g} "
              f"{r.wall_time_s:>10.3f}")
        lines.append(r.csv_row())
    if out_path:
        Path(out_path).write_text("\n".join(lines) + "\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cgkoop",
        description="Conditional-Gaussian Koopman surrogates: data "
                    "generation, training, assimilation benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="TOML or JSON config")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: all cores)")

    p_gen = sub.add_parser("gen", help="generate a truth dataset")
    common(p_gen)

    p_train = sub.add_parser("train", help="train the surrogate")
    common(p_train)
    p_train.add_argument("--data", required=True, help="dataset directory")

    p_eval = sub.add_parser("eval", help="evaluate a DA method on the test split")
    common(p_eval)
    p_eval.add_argument("--data", required=True, help="dataset directory")
    p_eval.add_argument("--method", required=True,
                        choices=["cgkn", "enkf", "interp"])
    p_eval.add_argument("--checkpoint", default=None,
                        help="train output directory (cgkn only)")

    p_bench = sub.add_parser("bench-filter", help="filter complexity probe")
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--ladder", type=int, nargs="+",
                         default=[8, 16, 32, 64])
    p_bench.add_argument("--steps", type=int, default=1000)

    p_rep = sub.add_parser("report", help="aggregate eval metrics")
    p_rep.add_argument("--run", action="append", required=True,
                       help="eval output directory (repeatable)")
    p_rep.add_argument("--out", default=None, help="aggregate CSV path")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "bench-filter":
            return cmd_bench_filter(args.out, args.ladder, args.steps)
        if args.command == "report":
            return cmd_report(args.run, args.out)

        cfg = resolve_config(args.config, seed=args.seed)
        threads = args.threads or os.cpu_count() or 1
        if args.command == "gen":
            return cmd_gen(cfg, args.out, threads)
        if args.command == "train":
            return cmd_train(cfg, args.data, args.out, threads)
        if args.command == "eval":
            return cmd_eval(cfg, args.data, args.method, args.out,
                            ckpt_dir=args.checkpoint, seed=cfg.seed)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except CgkoopError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
