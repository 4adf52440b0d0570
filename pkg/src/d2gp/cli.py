"""Experiment orchestration CLI.

Subcommands: gen-data, simulate, train, reconstruct, benchmark, analyze.
Configuration is a strict, versioned JSON document: unknown keys are hard
errors so a typoed loss weight cannot silently invalidate an experiment.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import analysis, data, persistence
from . import tensor as T
from .distill import DistillSession, KdConfig, train_npo
from .errors import ConfigError, D2gpError, LookupErrorNamed
from .forward_models import NoiseModel, build_mri, build_spc, build_sr, simulate
from .preconditioners import IdentityPreconditioner, make_preconditioner
from .seeds import derive_seed
from .solver import CnnDenoiser, DctSoftThreshold, IdentityProx, SolverConfig, pnp_fista

SCHEMA_VERSION = 1

LEARNED_METHODS = ("scalar", "conv", "pointwise", "full_linear", "supervised", "d2gp")
ALL_METHODS = ("baseline", "hessian", "polynomial") + LEARNED_METHODS + ("teacher",)

_SECTION_KEYS = {
    "": {"schema", "task", "image_side", "seed", "noise_sigma", "operators",
         "solver", "prox", "preconditioner", "kd", "dataset", "weights",
         "output_dir"},
    "operators": {"gamma_s", "gamma_t", "af_s", "af_t", "rf_s", "rf_t",
                  "blur_size", "blur_sigma", "normalize"},
    "solver": {"alpha_s", "alpha_t", "rho", "K"},
    "preconditioner": {"variant", "channels", "blocks", "pe_dim"},
    "kd": {"lambda_g", "lambda_i", "lambda_s", "epochs", "learning_rate",
           "batch_size", "optimizer", "weight_decay", "shuffle"},
    "dataset": {"manifest", "train_count", "test_count"},
}

_DEFAULTS = {
    "noise_sigma": 0.01,
    "solver": {"alpha_s": 0.4, "alpha_t": 0.7, "rho": 0.05, "K": 20},
    "prox": "dct_soft_threshold",
    "preconditioner": {"variant": "npo", "channels": 32, "blocks": 5, "pe_dim": 128},
    "kd": {"lambda_g": 1.0, "lambda_i": 1.0, "lambda_s": 1.0, "epochs": 30,
           "learning_rate": 1e-3, "batch_size": 16, "optimizer": "adam",
           "weight_decay": 0.0, "shuffle": False},
    "dataset": {"train_count": 512, "test_count": 64},
}


def _check_keys(section, obj, allowed):
    if not isinstance(obj, dict):
        raise ConfigError(f"config section {section or 'root'} must be an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys in {section or 'root'}: {sorted(unknown)}")


def load_config(path):
    with open(path) as fh:
        cfg = json.load(fh)
    _check_keys("", cfg, _SECTION_KEYS[""])
    if cfg.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"config schema must be {SCHEMA_VERSION}, got {cfg.get('schema')}")
    for key in ("task", "image_side", "operators", "dataset"):
        if key not in cfg:
            raise ConfigError(f"config is missing required key {key!r}")
    if cfg["task"] not in ("spc", "mri", "sr"):
        raise ConfigError(f"task must be spc|mri|sr, got {cfg['task']!r}")
    for section in ("operators", "solver", "preconditioner", "kd", "dataset"):
        if section in cfg:
            _check_keys(section, cfg[section], _SECTION_KEYS[section])
    if "weights" in cfg and not isinstance(cfg["weights"], dict):
        raise ConfigError("config key 'weights' must map method -> path")
    # merge defaults
    merged = dict(cfg)
    merged.setdefault("noise_sigma", _DEFAULTS["noise_sigma"])
    merged.setdefault("prox", _DEFAULTS["prox"])
    merged.setdefault("seed", 0)
    merged.setdefault("weights", {})
    merged.setdefault("output_dir", "runs/default")
    for section in ("solver", "preconditioner", "kd", "dataset"):
        base = dict(_DEFAULTS[section])
        base.update(cfg.get(section, {}))
        merged[section] = base
    return merged


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_operators(cfg, root_seed):
    task = cfg["task"]
    side = cfg["image_side"]
    ops = cfg["operators"]
    mask_seed = derive_seed(root_seed, "mask")
    if task == "spc":
        for key in ("gamma_s", "gamma_t"):
            if key not in ops:
                raise ConfigError(f"spc operators need {key}")
        norm = ops.get("normalize", True)  # fixed step sizes assume unit spectrum
        return (build_spc(side, ops["gamma_s"], norm),
                build_spc(side, ops["gamma_t"], norm))
    if task == "mri":
        for key in ("af_s", "af_t"):
            if key not in ops:
                raise ConfigError(f"mri operators need {key}")
        return (build_mri(side, ops["af_s"], mask_seed),
                build_mri(side, ops["af_t"], mask_seed))
    for key in ("rf_s", "rf_t"):
        if key not in ops:
            raise ConfigError(f"sr operators need {key}")
    bs = ops.get("blur_size", 9)
    bsig = ops.get("blur_sigma", 1.0)
    return (build_sr(side, ops["rf_s"], bs, bsig),
            build_sr(side, ops["rf_t"], bs, bsig))


def build_prox(cfg, root_seed):
    name = cfg["prox"]
    side = cfg["image_side"]
    if name == "identity":
        return IdentityProx()
    if name == "dct_soft_threshold":
        return DctSoftThreshold(side)
    if name == "cnn_denoiser":
        return CnnDenoiser(side, seed=derive_seed(root_seed, "denoiser"))
    raise ConfigError(f"unknown prox variant {name!r}")


def solver_configs(cfg):
    s = cfg["solver"]
    student = SolverConfig(alpha=s["alpha_s"], rho=s["rho"], K=s["K"], record_trace=False)
    teacher = SolverConfig(alpha=s["alpha_t"], rho=s["rho"], K=s["K"], record_trace=False)
    return student, teacher


def load_split_dataset(cfg, config_dir):
    ds = cfg["dataset"]
    manifest_path = ds["manifest"]
    if not os.path.isabs(manifest_path):
        manifest_path = os.path.join(config_dir, manifest_path)
    X = data.load_dataset(manifest_path, image_side=cfg["image_side"])
    split_seed = derive_seed(cfg["seed"], "split")
    rng = np.random.default_rng(split_seed)
    order = rng.permutation(len(X))
    n_train = ds["train_count"]
    n_test = ds["test_count"]
    if n_train + n_test > len(X):
        raise ConfigError(
            f"dataset has {len(X)} images but train+test = {n_train + n_test}")
    return X[order[:n_train]], X[order[n_train:n_train + n_test]]


def simulate_pair(cfg, op_s, op_t, X, root_seed):
    sigma = cfg["noise_sigma"]
    ys = simulate(op_s, X, NoiseModel(sigma, derive_seed(root_seed, "noise_student"))).data
    yt = simulate(op_t, X, NoiseModel(sigma, derive_seed(root_seed, "noise_teacher"))).data
    return ys, yt


def make_method_preconditioner(method, cfg, op_s, op_t, root_seed):
    """Instantiate the preconditioner behind one benchmark method name."""
    pc = cfg["preconditioner"]
    K = cfg["solver"]["K"]
    kwargs = dict(K=K, channels=pc["channels"], blocks=pc["blocks"], pe_dim=pc["pe_dim"],
                  seed=derive_seed(root_seed, "init"))
    if method in ("baseline", "teacher"):
        return IdentityPreconditioner()
    if method in ("supervised", "d2gp"):
        return make_preconditioner("npo", op=op_s, **kwargs)
    return make_preconditioner(method, op=op_s, **kwargs)


def reconstruct_split(method, precond, cfg, op_s, op_t, X, Y_s, Y_t, prox):
    """Per-sample PSNR and a traced batch run for one method."""
    student_cfg, teacher_cfg = solver_configs(cfg)
    if method == "teacher":
        run_cfg = replace(teacher_cfg, record_trace=True)
        op, y = op_t, Y_t
    else:
        run_cfg = replace(student_cfg, record_trace=True)
        op, y = op_s, Y_s
    with T.no_grad():
        run = pnp_fista(precond, op, T.Tensor(y), run_cfg, prox, x_true=T.Tensor(X))
    per_sample = np.array([analysis.psnr(a, b) for a, b in zip(run.final_x.data, X)])
    return per_sample, run


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    manifest = data.gen_data(args.count, args.side, args.seed, args.out)
    print(f"wrote {manifest['count']} images to {args.out}")
    return 0


def cmd_simulate(args):
    cfg = load_config(args.config)
    root_seed = args.seed if args.seed is not None else cfg["seed"]
    out_dir = args.out or cfg["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    op_s, op_t = build_operators(cfg, root_seed)
    X_train, X_test = load_split_dataset(cfg, os.path.dirname(os.path.abspath(args.config)))
    for name, X in (("train", X_train), ("test", X_test)):
        ys, yt = simulate_pair(cfg, op_s, op_t, X, root_seed)
        persistence.save_weights(
            [("x", X), ("y_s", ys), ("y_t", yt)],
            os.path.join(out_dir, f"measurements_{name}.wgt"))
    print(f"wrote measurements to {out_dir}")
    return 0


def _write_run_manifest(path, cfg, root_seed, extra):
    manifest = {
        "schema": SCHEMA_VERSION,
        "config": cfg,
        "root_seed": root_seed,
        "derived_seeds": {p: derive_seed(root_seed, p) for p in
                          ("data", "noise_student", "noise_teacher", "init",
                           "shuffle", "mask", "split")},
    }
    manifest.update(extra)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def cmd_train(args):
    cfg = load_config(args.config)
    root_seed = args.seed if args.seed is not None else cfg["seed"]
    out_dir = args.out or cfg["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    config_dir = os.path.dirname(os.path.abspath(args.config))

    op_s, op_t = build_operators(cfg, root_seed)
    prox = build_prox(cfg, root_seed)
    student_cfg, teacher_cfg = solver_configs(cfg)
    X_train, _ = load_split_dataset(cfg, config_dir)
    ys, yt = simulate_pair(cfg, op_s, op_t, X_train, root_seed)

    kd_cfg = KdConfig(**cfg["kd"], seed=derive_seed(root_seed, "shuffle"))
    precond = make_method_preconditioner("d2gp" if cfg["preconditioner"]["variant"] == "npo"
                                         else cfg["preconditioner"]["variant"],
                                         cfg, op_s, op_t, root_seed)
    session = DistillSession(X=X_train, Y_s=ys, Y_t=yt, op_s=op_s, op_t=op_t,
                             student_cfg=student_cfg, teacher_cfg=teacher_cfg,
                             kd=kd_cfg, precond=precond, prox=prox,
                             teacher_cache_path=os.path.join(out_dir, "teacher_cache.npy"))
    train_npo(session)

    weights_path = os.path.join(out_dir, "weights.wgt")
    persistence.save_weights(precond.parameters(), weights_path)
    loss_path = os.path.join(out_dir, "loss_history.csv")
    with open(loss_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss_g", "loss_i", "loss_s", "total"])
        for row in session.loss_history:
            w.writerow([row["epoch"], repr(row["loss_g"]), repr(row["loss_i"]),
                        repr(row["loss_s"]), repr(row["total"])])
    label = "supervised" if kd_cfg.is_supervised_only else "d2gp"
    _write_run_manifest(os.path.join(out_dir, "run_manifest.json"), cfg, root_seed,
                        {"command": "train", "label": label,
                         "weights": os.path.basename(weights_path),
                         "parameter_count": precond.parameter_count()})
    print(f"trained {label} preconditioner -> {weights_path}")
    return 0


def _resolve_weights(cfg, method, config_dir):
    table = cfg.get("weights", {})
    if method not in table:
        raise LookupErrorNamed(f"no weights configured for method {method!r}")
    path = table[method]
    if not os.path.isabs(path):
        path = os.path.join(config_dir, path)
    if not os.path.exists(path):
        raise LookupErrorNamed(f"weights for method {method!r} not found at {path}")
    return path


def _prepare_method(method, cfg, op_s, op_t, root_seed, config_dir):
    if method not in ALL_METHODS:
        raise ConfigError(f"unknown method {method!r}; valid: {', '.join(ALL_METHODS)}")
    precond = make_method_preconditioner(method, cfg, op_s, op_t, root_seed)
    if method in LEARNED_METHODS:
        persistence.load_into(precond, _resolve_weights(cfg, method, config_dir))
    return precond


def cmd_reconstruct(args):
    cfg = load_config(args.config)
    root_seed = args.seed if args.seed is not None else cfg["seed"]
    out_dir = args.out or cfg["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    config_dir = os.path.dirname(os.path.abspath(args.config))
    method = args.methods.split(",")[0] if args.methods else "baseline"

    op_s, op_t = build_operators(cfg, root_seed)
    prox = build_prox(cfg, root_seed)
    _, X_test = load_split_dataset(cfg, config_dir)
    ys, yt = simulate_pair(cfg, op_s, op_t, X_test, root_seed)
    precond = _prepare_method(method, cfg, op_s, op_t, root_seed, config_dir)
    per_sample, run = reconstruct_split(method, precond, cfg, op_s, op_t,
                                        X_test, ys, yt, prox)
    with open(os.path.join(out_dir, f"reconstruct_{method}.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "psnr"])
        for i, v in enumerate(per_sample):
            w.writerow([i, repr(float(v))])
    side = cfg["image_side"]
    for i, x in enumerate(run.final_x.data):
        data.save_pgm(os.path.join(out_dir, f"recon_{method}_{i:04d}.pgm"),
                      np.clip(x.reshape(side, side), 0, 1))
    print(f"{method}: mean PSNR {float(np.mean(per_sample)):.2f} dB over {len(per_sample)} samples")
    return 0


def cmd_benchmark(args):
    cfg = load_config(args.config)
    root_seed = args.seed if args.seed is not None else cfg["seed"]
    out_dir = args.out or cfg["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    config_dir = os.path.dirname(os.path.abspath(args.config))
    methods = [m for m in (args.methods.split(",") if args.methods else []) if m]

    op_s, op_t = build_operators(cfg, root_seed)
    prox = build_prox(cfg, root_seed)
    _, X_test = load_split_dataset(cfg, config_dir)
    ys, yt = simulate_pair(cfg, op_s, op_t, X_test, root_seed)

    npo_ref = make_method_preconditioner("d2gp", cfg, op_s, op_t, root_seed)
    npo_params = npo_ref.parameter_count()

    rows = []
    runs, labels = [], []
    for method in methods:
        precond = _prepare_method(method, cfg, op_s, op_t, root_seed, config_dir)
        per_sample, run = reconstruct_split(method, precond, cfg, op_s, op_t,
                                            X_test, ys, yt, prox)
        count = precond.parameter_count()
        rows.append((method, float(np.mean(per_sample)), count, count / npo_params))
        runs.append(run)
        labels.append(method)
        print(f"{method:12s} mean PSNR {rows[-1][1]:7.2f} dB  params {count}")

    with open(os.path.join(out_dir, "benchmark.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "mean_psnr", "params", "ratio_vs_npo"])
        for method, ps, count, ratio in rows:
            w.writerow([method, repr(ps), count, repr(ratio)])
    if runs:
        analysis.convergence_to_csv(analysis.convergence_report(runs, labels),
                                    os.path.join(out_dir, "benchmark_traces.csv"))
    _write_run_manifest(os.path.join(out_dir, "benchmark_manifest.json"), cfg, root_seed,
                        {"command": "benchmark", "methods": methods})
    return 0


def cmd_analyze(args):
    cfg = load_config(args.config)
    root_seed = args.seed if args.seed is not None else cfg["seed"]
    out_dir = args.out or cfg["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    config_dir = os.path.dirname(os.path.abspath(args.config))
    n = cfg["image_side"] ** 2
    if n > analysis.DENSE_MAX_N:
        raise ConfigError(f"analyze requires n <= {analysis.DENSE_MAX_N}, got {n}")

    op_s, op_t = build_operators(cfg, root_seed)
    prox = build_prox(cfg, root_seed)
    _, X_test = load_split_dataset(cfg, config_dir)
    ys, yt = simulate_pair(cfg, op_s, op_t, X_test, root_seed)
    K = cfg["solver"]["K"]
    methods = (args.methods.split(",") if args.methods
               else ["baseline", "hessian", "polynomial", "scalar", "d2gp"])

    kappa_rows = []
    runs, labels = [], []
    for method in methods:
        precond = _prepare_method(method, cfg, op_s, op_t, root_seed, config_dir)
        per_sample, run = reconstruct_split(method, precond, cfg, op_s, op_t,
                                            X_test, ys, yt, prox)
        x0 = run.final_x.data[0]
        J = analysis.jacobian_fd(precond, x0, epsilon=1e-4, k=K)
        gram_op = op_t if method == "teacher" else op_s
        report = analysis.preconditioned_gram_spectrum(J, gram_op)
        analysis.spectrum_to_csv(report, os.path.join(out_dir, f"spectrum_{method}.csv"))
        kappa_rows.append((method, report.condition_number, report.rank))
        runs.append(run)
        labels.append(method)
        print(f"{method:12s} kappa {report.condition_number:.6g}  rank {report.rank}")

    with open(os.path.join(out_dir, "condition_numbers.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "kappa", "rank"])
        for method, kappa, rank in kappa_rows:
            w.writerow([method, repr(kappa), rank])
    analysis.convergence_to_csv(analysis.convergence_report(runs, labels),
                                os.path.join(out_dir, "analysis_traces.csv"))
    _write_run_manifest(os.path.join(out_dir, "analysis_manifest.json"), cfg, root_seed,
                        {"command": "analyze", "methods": list(methods)})
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="d2gp",
                                     description="Distilled gradient preconditioning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate synthetic phantom dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=512)
    g.add_argument("--side", type=int, default=16)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    for name, func in (("simulate", cmd_simulate), ("train", cmd_train),
                       ("reconstruct", cmd_reconstruct),
                       ("benchmark", cmd_benchmark), ("analyze", cmd_analyze)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--methods", default=None)
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except D2gpError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
