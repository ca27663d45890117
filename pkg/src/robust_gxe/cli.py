"""Command-line driver: simulate / fit / select / diagnose / prescreen / replicate.

Every subcommand takes an optional JSON config file plus flag overrides
(flags win). Bad inputs are reported as a machine-readable JSON object on
stderr with exit status 2; runtime failures (numerical breakdown, missing
files) exit with status 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import __version__
from .data_model import (DataError, GxEDataset, Hyperparameters, METHOD_NAMES,
                         MethodConfig, load_csv, prescreen_marginal,
                         standardize, write_csv)
from .distributions import NumericalError, ParameterError, RngStream
from .evalharness import run_replicates
from .gibbs_engine import (PosteriorSamples, read_samples_csv, run_chains,
                           write_samples_csv)
from .inference import (InferenceError, psrf_report, select,
                        selection_records)
from .simgen import (ERROR_MODELS, EXAMPLES, SimulationConfig,
                     canonical_error_model, canonical_example, gen_dataset,
                     save_true_model)


class ValidationFailure(Exception):
    """Carries every collected input problem for one invocation."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


def _fail(violations: list[str]):
    raise ValidationFailure(violations)


def _load_config_file(path, violations: list[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        violations.append(f"config file not found: {path}")
        return {}
    except json.JSONDecodeError as exc:
        violations.append(f"config file {path} is not valid JSON: {exc}")
        return {}
    if not isinstance(cfg, dict):
        violations.append(f"config file {path} must contain a JSON object")
        return {}
    return cfg


def _coerce_fields(cls, data: dict, violations: list[str],
                   label: str) -> dict:
    """Keep known dataclass fields, coercing to the default's type."""
    defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    out = {}
    for key, value in data.items():
        if key not in defaults:
            violations.append(f"unknown {label} setting {key!r}")
            continue
        default = defaults[key]
        try:
            if isinstance(default, bool):
                out[key] = bool(value)
            elif isinstance(default, int):
                out[key] = int(value)
            elif isinstance(default, float):
                out[key] = float(value)
            elif isinstance(default, tuple):
                out[key] = tuple(float(v) for v in value)
            else:
                out[key] = value
        except (TypeError, ValueError):
            violations.append(
                f"{label} setting {key!r} has invalid value {value!r}")
    return out


def _build_hyper(args, violations: list[str]) -> Hyperparameters:
    cfg = _load_config_file(getattr(args, "config", None), violations)
    fields = _coerce_fields(Hyperparameters, cfg, violations, "hyperparameter")
    if getattr(args, "iters", None) is not None:
        fields["n_iter"] = args.iters
    if getattr(args, "burnin", None) is not None:
        fields["burn_in"] = args.burnin
    if getattr(args, "seed", None) is not None:
        fields["seed"] = args.seed
    hyper = Hyperparameters(**fields)
    try:
        hyper.validate()
    except DataError as exc:
        violations.append(str(exc))
    return hyper


def _emit(payload: dict, path=None) -> None:
    text = json.dumps(payload, indent=2, default=float) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- simulate


def _cmd_simulate(args) -> int:
    violations: list[str] = []
    cfg = _load_config_file(args.config, violations)
    fields = _coerce_fields(SimulationConfig, cfg, violations, "simulation")
    for flag in ("n", "p", "k", "q", "seed"):
        value = getattr(args, flag)
        if value is not None:
            fields[flag] = value
    if args.example is not None:
        fields["example"] = args.example
    if args.error_model is not None:
        fields["error_model"] = args.error_model
    if args.source_genotypes is not None:
        fields["source_genotypes"] = args.source_genotypes
    for key in ("example", "error_model"):
        if key in fields:
            try:
                fields[key] = (canonical_example(fields[key]) if key == "example"
                               else canonical_error_model(fields[key]))
            except DataError as exc:
                violations.append(str(exc))
                del fields[key]
    sim = SimulationConfig(**fields)
    try:
        sim.validate()
    except DataError as exc:
        violations.append(str(exc))
    if violations:
        _fail(violations)

    train, test, truth = gen_dataset(sim)
    os.makedirs(args.out, exist_ok=True)
    train_path = os.path.join(args.out, "train.csv")
    test_path = os.path.join(args.out, "test.csv")
    truth_path = os.path.join(args.out, "truth.json")
    write_csv(train, train_path)
    write_csv(test, test_path)
    save_true_model(truth, truth_path)
    _emit({"command": "simulate",
           "simulation": dataclasses.asdict(sim),
           "train": train_path, "test": test_path, "truth": truth_path,
           "n": train.n, "p": train.p, "k": train.k, "q": train.q})
    return 0


# --------------------------------------------------------------------- fit


def _cmd_fit(args) -> int:
    violations: list[str] = []
    if args.method not in METHOD_NAMES:
        violations.append(f"unknown method {args.method!r}; expected one of "
                          f"{', '.join(METHOD_NAMES)}")
    if args.chains < 1:
        violations.append("chains must be at least 1")
    hyper = _build_hyper(args, violations)
    if violations:
        _fail(violations)

    dataset = load_csv(args.data)
    if args.standardize:
        dataset, record = standardize(dataset)
    else:
        record = None
    config = MethodConfig.from_name(args.method, hyper=hyper)
    jitter = args.jitter
    if jitter is None:
        jitter = 0.0 if args.chains == 1 else 2.0
    chains = run_chains(dataset, config, RngStream(hyper.seed, 1),
                        n_chains=args.chains, jitter_sd=jitter)
    os.makedirs(args.out, exist_ok=True)
    paths = []
    for c, samples in enumerate(chains, start=1):
        path = os.path.join(args.out, f"samples_chain{c}.csv")
        write_samples_csv(samples, path)
        paths.append(path)
    manifest = {"command": "fit",
                "version": __version__,
                "method": config.name,
                "data": str(args.data),
                "standardized": bool(args.standardize),
                "hyperparameters": dataclasses.asdict(hyper),
                "n_chains": args.chains,
                "jitter_sd": jitter,
                "samples": paths,
                "chains": [s.meta for s in chains]}
    if record is not None:
        manifest["zero_variance_columns"] = bool(record.any_zero_variance)
    manifest_path = os.path.join(args.out, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    _emit({"command": "fit", "method": config.name, "samples": paths,
           "manifest": manifest_path,
           "elapsed_seconds": sum(s.meta["elapsed_seconds"] for s in chains)})
    return 0


# ------------------------------------------------------------------ select


def _pool_samples(paths) -> PosteriorSamples:
    chains = [read_samples_csv(p) for p in paths]
    first = chains[0]
    for other in chains[1:]:
        same = (other.beta.shape[1:] == first.beta.shape[1:]
                and other.alpha.shape[1] == first.alpha.shape[1]
                and other.theta.shape[1] == first.theta.shape[1])
        for name in ("phi_b", "phi_w", "nu", "sigma2", "pi0", "pi1", "s2"):
            same = same and ((getattr(other, name) is None)
                             == (getattr(first, name) is None))
        if not same:
            raise DataError("sample files do not come from the same model")
    if len(chains) == 1:
        return first

    def cat(name):
        if getattr(first, name) is None:
            return None
        return np.concatenate([getattr(c, name) for c in chains], axis=0)

    return PosteriorSamples(
        method=first.method,
        alpha=cat("alpha"), theta=cat("theta"), beta=cat("beta"),
        phi_b=cat("phi_b"), phi_w=cat("phi_w"), nu=cat("nu"),
        sigma2=cat("sigma2"), pi0=cat("pi0"), pi1=cat("pi1"), s2=cat("s2"),
        meta={"source": [str(p) for p in paths]})


def _cmd_select(args) -> int:
    samples = _pool_samples(args.samples)
    rule = args.rule
    if rule is None:
        rule = "mpm" if (samples.phi_b is not None
                         or samples.phi_w is not None) else "ci95"
    result = select(samples, rule, level=args.level)
    records = selection_records(result)
    _emit({"command": "select",
           "method": samples.method,
           "rule": result.method,
           "level": args.level,
           "n_draws": samples.g,
           "n_selected": int(result.selected.sum()),
           "records": records},
          path=args.out)
    return 0


# ---------------------------------------------------------------- diagnose


def _cmd_diagnose(args) -> int:
    chains = [read_samples_csv(p) for p in args.samples]
    report = psrf_report(chains)
    blocks = {}
    worst = 0.0
    for name, res in report.items():
        values = np.atleast_1d(res.value)
        degenerate = np.atleast_1d(res.degenerate)
        blocks[name] = {"max": float(values.max()),
                        "n_parameters": int(values.size),
                        "n_degenerate": int(degenerate.sum())}
        worst = max(worst, float(values.max()))
    _emit({"command": "diagnose",
           "n_chains": len(chains),
           "threshold": args.threshold,
           "blocks": blocks,
           "max_psrf": worst,
           "ok": bool(worst <= args.threshold)},
          path=args.out)
    return 0


# --------------------------------------------------------------- prescreen


def _cmd_prescreen(args) -> int:
    dataset = load_csv(args.data)
    kept = prescreen_marginal(dataset, args.cutoff)
    _emit({"command": "prescreen",
           "cutoff": args.cutoff,
           "n_groups": dataset.p,
           "n_retained": len(kept),
           "retained": kept},
          path=args.out)
    return 0


# --------------------------------------------------------------- replicate


def _cmd_replicate(args) -> int:
    violations: list[str] = []
    cfg = _load_config_file(args.config, violations)
    known = {"simulation", "methods", "n_replicates", "n_iter", "burn_in",
             "jobs"}
    for key in cfg:
        if key not in known:
            violations.append(f"unknown replicate setting {key!r}")
    sim_fields = _coerce_fields(SimulationConfig, cfg.get("simulation", {}),
                                violations, "simulation")
    methods = cfg.get("methods", ["rbsg-ss"])
    if args.methods:
        methods = args.methods
    for m in methods:
        if m not in METHOD_NAMES:
            violations.append(f"unknown method {m!r}")
    n_replicates = args.reps if args.reps is not None else int(
        cfg.get("n_replicates", 1))
    n_iter = args.iters if args.iters is not None else int(
        cfg.get("n_iter", 3000))
    burn_in = args.burnin if args.burnin is not None else int(
        cfg.get("burn_in", 1500))
    jobs = args.jobs if args.jobs is not None else int(cfg.get("jobs", 1))
    if n_replicates < 1:
        violations.append("n_replicates must be at least 1")
    if not 0 <= burn_in < n_iter:
        violations.append(f"burn_in must satisfy 0 <= burn_in < n_iter, got "
                          f"burn_in={burn_in}, n_iter={n_iter}")
    if args.seed is not None:
        sim_fields["seed"] = args.seed
    sim = SimulationConfig(**sim_fields)
    try:
        sim.validate()
    except DataError as exc:
        violations.append(str(exc))
    if violations:
        _fail(violations)

    report = run_replicates(methods, sim, n_replicates,
                            n_iter=n_iter, burn_in=burn_in, jobs=jobs)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "report.csv")
    json_path = os.path.join(args.out, "report.json")
    report.write(csv_path=csv_path, json_path=json_path)
    _emit({"command": "replicate",
           "methods": report.methods,
           "n_replicates": n_replicates,
           "report_csv": csv_path,
           "report_json": json_path,
           "aggregate": report.aggregate()})
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robust-gxe",
        description="Robust Bayesian sparse-group selection for "
                    "gene-environment interaction regression.")
    parser.add_argument("--version", action="version",
                        version=f"robust-gxe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--config", help="JSON file of simulation settings")
    p_sim.add_argument("--example", help=f"one of {', '.join(EXAMPLES)} "
                                         "or its 1-based number")
    p_sim.add_argument("--error-model", dest="error_model",
                       help=f"one of {', '.join(ERROR_MODELS)} "
                            "or its 1-based number")
    p_sim.add_argument("--n", type=int)
    p_sim.add_argument("--p", type=int)
    p_sim.add_argument("--k", type=int)
    p_sim.add_argument("--q", type=int)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--source-genotypes", dest="source_genotypes",
                       help="CSV of genotype rows for the resampling design")
    p_sim.set_defaults(func=_cmd_simulate)

    p_fit = sub.add_parser("fit", help="run the Gibbs sampler on a dataset")
    p_fit.add_argument("--data", required=True, help="dataset CSV")
    p_fit.add_argument("--method", required=True,
                       help=f"one of {', '.join(METHOD_NAMES)}")
    p_fit.add_argument("--out", required=True, help="output directory")
    p_fit.add_argument("--config", help="JSON file of hyperparameters")
    p_fit.add_argument("--iters", type=int, help="total sweeps")
    p_fit.add_argument("--burnin", type=int, help="discarded sweeps")
    p_fit.add_argument("--chains", type=int, default=1)
    p_fit.add_argument("--seed", type=int)
    p_fit.add_argument("--jitter", type=float,
                       help="sd of the overdispersed-start jitter "
                            "(default 0 for one chain, 2 for several)")
    p_fit.add_argument("--no-standardize", dest="standardize",
                       action="store_false",
                       help="fit on the raw scale instead of standardizing")
    p_fit.set_defaults(func=_cmd_fit, standardize=True)

    p_sel = sub.add_parser("select",
                           help="apply a selection rule to stored draws")
    p_sel.add_argument("--samples", required=True, nargs="+",
                       help="one or more sample CSVs (chains are pooled)")
    p_sel.add_argument("--rule", choices=("mpm", "ci95"),
                       help="default: mpm when indicator draws are present")
    p_sel.add_argument("--level", type=float, default=0.95)
    p_sel.add_argument("--out", help="write the JSON here instead of stdout")
    p_sel.set_defaults(func=_cmd_select)

    p_diag = sub.add_parser("diagnose",
                            help="convergence diagnostics across chains")
    p_diag.add_argument("--samples", required=True, nargs="+",
                        help="sample CSVs, one per chain")
    p_diag.add_argument("--threshold", type=float, default=1.1)
    p_diag.add_argument("--out", help="write the JSON here instead of stdout")
    p_diag.set_defaults(func=_cmd_diagnose)

    p_pre = sub.add_parser("prescreen",
                           help="marginal F-test screen of the groups")
    p_pre.add_argument("--data", required=True, help="dataset CSV")
    p_pre.add_argument("--cutoff", type=float, required=True,
                       help="marginal p-value threshold in (0, 1]")
    p_pre.add_argument("--out", help="write the JSON here instead of stdout")
    p_pre.set_defaults(func=_cmd_prescreen)

    p_rep = sub.add_parser("replicate",
                           help="simulate-fit-score over many replicates")
    p_rep.add_argument("--config", help="JSON with simulation/methods/counts")
    p_rep.add_argument("--out", required=True, help="output directory")
    p_rep.add_argument("--methods", nargs="+",
                       help="methods to compare (overrides the config)")
    p_rep.add_argument("--reps", type=int, help="number of replicates")
    p_rep.add_argument("--iters", type=int)
    p_rep.add_argument("--burnin", type=int)
    p_rep.add_argument("--seed", type=int)
    p_rep.add_argument("--jobs", type=int,
                       help="parallel workers (capped by ROBUST_GXE_THREADS)")
    p_rep.set_defaults(func=_cmd_replicate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationFailure as exc:
        json.dump({"error": "validation", "violations": exc.violations},
                  sys.stderr, indent=2)
        sys.stderr.write("\n")
        return 2
    except (DataError, ParameterError, InferenceError) as exc:
        json.dump({"error": "validation", "violations": [str(exc)]},
                  sys.stderr, indent=2)
        sys.stderr.write("\n")
        return 2
    except (NumericalError, OSError) as exc:
        json.dump({"error": "runtime", "message": str(exc)},
                  sys.stderr, indent=2)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
