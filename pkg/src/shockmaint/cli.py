"""Experiment runner.

Usage::

    shockmaint <command> --config PATH [--seed N] [--workers N] [--out DIR]

Commands: simulate, optimize-thresholds, solve-exact, train-dcl, evaluate,
fit-priors.  ``--config`` takes a YAML file or the name of a packaged config
(``I1_table2``, ``I2_table2``, ``CS1_table6``, ``CS2_table6``, ``CS3_table6``,
``twin_unit``).

Config document (every block optional except ``instance``)::

    instance:            # a builtin name or a full instance document
      builtin: I1
    seed: 0
    mode: L1             # L1 | L2
    simulate:            {periods: 10, policy: {type: reactive}}
                         # or {synthetic_pool: {components: 52, asset: 0, period_length: 1.0}}
    optimize_thresholds: {reps: 20000, eval_reps: 100000, horizon: 1000, opportunity: sequential}
    solve_exact:         {problem: bmdp | mdp, asset: 0, method: layered, tol: 1.0e-6,
                          trunc: {k_max: .., t_max: ..}}
    train_dcl:           {base: {type: threshold, tau_pm: 15, tau_opm: 9}, variant: f3_L1,
                          evaluate_mode: L1, <any DCLSettings field>}
    evaluate:            {reps: 100000, horizon: 1000, mode: L1, replay: {data: test.csv},
                          policies: [{type: reactive}, {type: threshold, tau_pm: 15, tau_opm: 9},
                                     {type: integrated_bayes}, {type: file, path: p.pol, variant: f2_L1}]}
    fit_priors:          {data: series.csv, n_train: 10, xi: 50, period_length: 1.0,
                          outlier_quantile: 0.99, min_interarrival: 0.0}

Relative paths are resolved against the config file's directory.

Seeding: each command derives every stream from the master seed.  Simulation
replications use splitmix64 keys ``(seed, replication, asset, component)``;
other purposes use ``derive_seed(seed, tag, i, j)`` with a fixed tag per
purpose, so outputs do not depend on ``--workers``.

Every command writes ``manifest.json`` into ``--out`` with the config hash,
the seed, library versions and the SHA-256 of each output file.

Exit codes: 0 ok, 2 config error, 3 input missing, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from dataclasses import fields
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import _kernels as K
from . import instances
from .dcl import DCLSettings, NNPolicy, train_dcl
from .evaluator import evaluate
from .exact import (BudgetError, ConvergenceError, TabularPolicy, TruncationSpec, check_monotonicity,
                    coupling_states, solo_levels, solve_single_asset_bmdp, solve_underlying_mdp)
from .heuristics import ThresholdPolicy, optimize_thresholds
from .network import L1, L2, NetworkConfig, advance, apply_actions, initial_state
from .pipeline import (PreprocessOptions, build_replay, fit_priors, ingest, preprocess, split_pool,
                       synthesize_pool, write_series_csv)
from .policy import Policy, VariantError

log = logging.getLogger("shockmaint")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4

_TAG_SIM = 0x51A1
_TAG_POOL = 0x9001
_TAG_EVAL = 0xE7A1
_TAG_SPLIT = 0x5B17


class ConfigError(ValueError):
    pass


class InputMissing(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# config handling


def packaged_configs() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("shockmaint").joinpath("configs").iterdir()
                  if p.name.endswith(".yaml"))


def read_config(spec: str) -> tuple[dict, bytes, Path]:
    path = Path(spec)
    if path.is_file():
        raw = path.read_bytes()
        base = path.resolve().parent
    elif spec in packaged_configs():
        raw = resources.files("shockmaint").joinpath("configs", f"{spec}.yaml").read_bytes()
        base = Path.cwd()
    else:
        raise InputMissing(f"config {spec!r} is neither a file nor a packaged config "
                           f"({', '.join(packaged_configs())})")
    try:
        doc = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid YAML: {e}") from None
    if not isinstance(doc, dict) or "instance" not in doc:
        raise ConfigError("config must be a mapping with an 'instance' entry")
    return doc, raw, base


def _instance(doc: dict) -> NetworkConfig:
    inst = doc["instance"]
    if isinstance(inst, str):
        inst = {"builtin": inst}
    try:
        return instances.from_document(inst)
    except (KeyError, TypeError) as e:
        raise ConfigError(f"bad instance document: {e!r}") from None


def _path(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _require(path: Path) -> Path:
    if not path.exists():
        raise InputMissing(f"missing input {path}")
    return path


def _block(doc: dict, name: str) -> dict:
    b = doc.get(name) or {}
    if not isinstance(b, dict):
        raise ConfigError(f"'{name}' must be a mapping")
    return b


def load_policy(path: Path) -> Policy:
    """Threshold YAML, exact policy table or neural policy, by content."""
    _require(path)
    head = path.read_bytes()[:8]
    if head == TabularPolicy._MAGIC:
        return TabularPolicy.load(path)
    if head == NNPolicy._MAGIC:
        return NNPolicy.load(path)
    d = yaml.safe_load(path.read_text())
    if not isinstance(d, dict) or d.get("type") != "threshold":
        raise ConfigError(f"{path} is not a policy file")
    return ThresholdPolicy(d["tau_pm"], d["tau_opm"], d.get("opportunity", "sequential"),
                           name=d.get("name", "threshold"))


def make_policy(spec: dict, config: NetworkConfig, base: Path) -> Policy:
    kind = spec.get("type")
    if kind == "reactive":
        return ThresholdPolicy.reactive(config)
    if kind == "threshold":
        M = config.M
        pm = spec["tau_pm"]
        opm = spec.get("tau_opm", pm)
        pm = [pm] * M if np.isscalar(pm) else pm
        opm = [opm] * M if np.isscalar(opm) else opm
        return ThresholdPolicy(pm, opm, spec.get("opportunity", "sequential"),
                               name=spec.get("name", f"threshold({pm[0]},{opm[0]})"))
    if kind == "integrated_bayes":
        m = int(spec.get("asset", 0))
        trunc = spec.get("trunc")
        tr = None if trunc is None else TruncationSpec(**{**_trunc_defaults(config, m), **trunc})
        return solve_single_asset_bmdp(config.assets[m], config.c_st, config.gamma, tr,
                                       method=spec.get("method", "layered"))
    if kind == "file":
        pol = load_policy(_path(base, spec["path"]))
        if "variant" in spec:
            if not isinstance(pol, NNPolicy):
                raise ConfigError("'variant' applies to neural policies only")
            pol = pol.with_variant(spec["variant"])
        return pol
    raise ConfigError(f"unknown policy type {kind!r}")


def _trunc_defaults(config: NetworkConfig, m: int) -> dict:
    t = TruncationSpec.default(config.assets[m])
    return {"x_max": t.x_max, "k_max": t.k_max, "t_max": t.t_max, "tail_mass_eps": t.tail_mass_eps}


def _settings(block: dict) -> DCLSettings:
    names = {f.name for f in fields(DCLSettings)}
    unknown = set(block) - names - {"base", "variant", "evaluate_mode", "mode", "write_datasets"}
    if unknown:
        raise ConfigError(f"unknown train_dcl keys {sorted(unknown)}")
    return DCLSettings(**{k: v for k, v in block.items() if k in names})


# ---------------------------------------------------------------------------
# outputs


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, raw_config: bytes, seed: int, files: list[Path]) -> Path:
    import numba
    import scipy
    man = {
        "command": command,
        "config_sha256": hashlib.sha256(raw_config).hexdigest(),
        "seed": int(seed),
        "versions": {"shockmaint": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__},
        "outputs": {f.name: _sha(f) for f in sorted(files)},
    }
    p = out / "manifest.json"
    p.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return p


def _write_rows(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _fmt(v: float) -> str:
    return repr(float(v))


def _dump(path: Path, doc) -> Path:
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(config, doc, base, seed, workers, out) -> list[Path]:
    b = _block(doc, "simulate")
    if "synthetic_pool" in b:
        p = b["synthetic_pool"]
        asset = config.assets[int(p.get("asset", 0))]
        raw, truth = synthesize_pool(asset, int(p.get("components", 52)), K.derive_seed(seed, _TAG_POOL),
                                     float(p.get("period_length", 1.0)))
        f1 = out / "series.csv"
        write_series_csv(raw, f1)
        f2 = _write_rows(out / "periods.csv", ["component_id", "period", "k", "z"],
                         [(s.component_id, i, int(k), int(z)) for s in truth
                          for i, (k, z) in enumerate(zip(s.k, s.z))])
        return [f1, f2]
    periods = int(b.get("periods", 10))
    mode = doc.get("mode", L1) if doc.get("mode", L1) in (L1, L2) else L1
    pol = make_policy(b.get("policy", {"type": "reactive"}), config, base)
    pol.check_mode(mode)
    rng = np.random.default_rng(K.derive_seed(seed, _TAG_SIM) % 2**63)
    state = initial_state(config, mode, rng)
    rows = []
    for t in range(periods):
        order = rng.permutation(config.M)
        a = pol.decide(config, state, order)
        state = apply_actions(config, state, a, rng)
        state, sigs = advance(config, state, rng)
        for m, sig in enumerate(sigs):
            rows.append((t, m, int(a[m]), sig.k, sig.z, state.beliefs[m].x))
    return [_write_rows(out / "trajectory.csv", ["t", "asset", "replaced", "k", "z", "x"], rows)]


def cmd_optimize_thresholds(config, doc, base, seed, workers, out) -> list[Path]:
    b = _block(doc, "optimize_thresholds")
    horizon = int(b.get("horizon", 1000))
    mode = doc.get("mode", L1)
    res = optimize_thresholds(config, int(b.get("reps", 20_000)), horizon, seed, workers, mode,
                              b.get("pm_grid"), b.get("opportunity", "sequential"),
                              eval_reps=b.get("eval_reps"))
    f1 = out / "sweep.csv"
    res.write_csv(f1)
    pol = res.policy
    f2 = _dump(out / "thresholds.yaml", {"type": "threshold", "tau_pm": list(pol.tau_pm),
                                         "tau_opm": list(pol.tau_opm), "opportunity": pol.opportunity})
    reps = int(b.get("eval_reps") or b.get("reps", 20_000))
    rr = evaluate(ThresholdPolicy.reactive(config), config, mode, reps, horizon,
                  K.derive_seed(seed, _TAG_EVAL), workers)
    f3 = _write_rows(out / "summary.csv", ["instance", "tau_pm", "tau_opm", "J_threshold", "ci_threshold",
                                           "J_reactive", "ci_reactive", "reps"],
                     [(config.name, pol.tau_pm[0], pol.tau_opm[0], _fmt(res.cost), _fmt(res.ci_halfwidth),
                       _fmt(rr.mean), _fmt(rr.ci_halfwidth), reps)])
    log.info("%s: (%d, %d) J=%.4f +- %.4f; reactive %.4f", config.name, pol.tau_pm[0], pol.tau_opm[0],
             res.cost, res.ci_halfwidth, rr.mean)
    return [f1, f2, f3]


def cmd_solve_exact(config, doc, base, seed, workers, out) -> list[Path]:
    b = _block(doc, "solve_exact")
    problem = b.get("problem", "bmdp")
    if problem == "mdp":
        pol = solve_underlying_mdp(config, budget=int(b.get("budget", 10_000_000)))
        mono = check_monotonicity(pol)
        report = dict(pol.report, solo_levels=solo_levels(pol), coupling_states=len(coupling_states(pol)),
                      monotonicity_violations=len(mono.violations), monotonicity_checked=mono.checked)
    elif problem == "bmdp":
        m = int(b.get("asset", 0))
        trunc = b.get("trunc")
        tr = None if trunc is None else TruncationSpec(**{**_trunc_defaults(config, m), **trunc})
        pol = solve_single_asset_bmdp(config.assets[m], config.c_st, config.gamma, tr,
                                      budget=int(b.get("budget", 10_000_000)), tol=float(b.get("tol", 1e-6)),
                                      method=b.get("method", "layered"))
        mono = check_monotonicity(pol)
        report = dict(pol.report, monotonicity_violations=len(mono.violations),
                      monotonicity_checked=mono.checked, shape=list(pol.actions.shape))
    else:
        raise ConfigError(f"unknown exact problem {problem!r}")
    files = [out / "policy.smtb"]
    pol.save(files[0])
    if problem == "bmdp":
        files.append(out / "heatmap.csv")
        pol.write_heatmap_csv(files[-1])
    report = {k: v for k, v in report.items() if k not in ("residuals", "value_history")}
    files.append(out / "report.json")
    files[-1].write_text(json.dumps(report, indent=2, sort_keys=True, default=float) + "\n")
    return files


def cmd_train_dcl(config, doc, base, seed, workers, out) -> list[Path]:
    b = _block(doc, "train_dcl")
    s = _settings(b)
    base_pol = make_policy(b.get("base", {"type": "reactive"}), config, base)
    if not isinstance(base_pol, ThresholdPolicy):
        raise ConfigError("train_dcl.base must be a threshold policy")
    mode = b.get("mode", doc.get("mode", L1))
    variant = b.get("variant")
    if mode == L1 and variant == "f1_L2":
        raise VariantError("f1_L2 features need L2 training data")
    gens = train_dcl(config, base_pol, mode, variant, s, seed, workers, b.get("evaluate_mode"),
                     str(out) if b.get("write_datasets", False) else None)
    files = [out / f"dataset_gen{g.index}.csv" for g in gens] if b.get("write_datasets", False) else []
    rows = []
    for g in gens:
        p = out / f"policy_gen{g.index}.pol"
        g.policy.save(p)
        files.append(p)
        ev = g.evaluation
        rows.append((g.index, g.dataset["samples"], _fmt(g.dataset["share_replace"]), g.dataset["low_confidence"],
                     g.training.epochs, _fmt(g.training.val_accuracy),
                     "" if ev is None else _fmt(ev.mean), "" if ev is None else _fmt(ev.ci_halfwidth)))
    files.append(_write_rows(out / "generations.csv",
                             ["generation", "samples", "share_replace", "low_confidence", "epochs",
                              "val_accuracy", "J", "ci"], rows))
    return files


def cmd_evaluate(config, doc, base, seed, workers, out) -> list[Path]:
    b = _block(doc, "evaluate")
    mode = b.get("mode", doc.get("mode", L1))
    replay = None
    if mode == "replay":
        r = b.get("replay") or {}
        if "data" not in r:
            raise ConfigError("replay evaluation needs evaluate.replay.data")
        opts = PreprocessOptions(int(config.xi[0]), float(r.get("period_length", 1.0)),
                                 r.get("outlier_quantile", 0.99), float(r.get("min_interarrival", 0.0)))
        series = [preprocess(s, opts) for s in ingest(_require(_path(base, r["data"])))]
        replay = build_replay(series, int(config.xi[0]))
    specs = b.get("policies") or [{"type": "reactive"}]
    rows = []
    reps, horizon = int(b.get("reps", 10_000)), int(b.get("horizon", 1000))
    for spec in specs:
        pol = make_policy(spec, config, base)
        rep = evaluate(pol, config, mode, reps, horizon, seed, workers, replay)
        name = spec.get("name") or getattr(pol, "name", spec["type"])
        log.info("%s %s: %.4f +- %.4f", config.name, name, rep.mean, rep.ci_halfwidth)
        rows.append((config.name, name, mode, _fmt(rep.mean), _fmt(rep.ci_halfwidth), rep.reps, rep.horizon,
                     seed))
    return [_write_rows(out / "evaluation.csv", ["instance", "policy", "mode", "J", "ci_halfwidth", "reps",
                                                 "horizon", "seed"], rows)]


def cmd_fit_priors(config, doc, base, seed, workers, out) -> list[Path]:
    b = _block(doc, "fit_priors")
    if "data" not in b:
        raise ConfigError("fit_priors.data is required")
    xi = int(b.get("xi", config.xi[0]))
    opts = PreprocessOptions(xi, float(b.get("period_length", 1.0)), b.get("outlier_quantile", 0.99),
                             float(b.get("min_interarrival", 0.0)))
    raw = ingest(_require(_path(base, b["data"])))
    series = [preprocess(s, opts) for s in raw]
    files = []
    if b.get("n_train"):
        train, test = split_pool(series, int(b["n_train"]), K.derive_seed(seed, _TAG_SPLIT))
        test_ids = {s.component_id for s in test}
        write_series_csv([r for r in raw if r.component_id in test_ids], out / "test_series.csv")
        files.append(out / "test_series.csv")
    else:
        train = series
    prior, diag = fit_priors(train)
    d = {"alpha": float(prior.alpha), "beta": float(prior.beta), "a": float(prior.a), "b": float(prior.b),
         "mean_rate": float(prior.mean_rate), "mean_p": float(prior.mean_p), "loglik": diag.loglik,
         "loglik_start": diag.loglik_start, "converged": diag.converged, "at_boundary": diag.at_boundary,
         "log_se": [float(v) for v in diag.log_se], "train_components": len(train)}
    files.append(_dump(out / "prior.yaml", d))
    diag.write_csv(out / "diagnostics.csv", [s.component_id for s in train])
    files.append(out / "diagnostics.csv")
    return files


COMMANDS = {
    "simulate": cmd_simulate,
    "optimize-thresholds": cmd_optimize_thresholds,
    "solve-exact": cmd_solve_exact,
    "train-dcl": cmd_train_dcl,
    "evaluate": cmd_evaluate,
    "fit-priors": cmd_fit_priors,
}


def _u64(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shockmaint", description="Maintenance optimisation experiments")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="YAML file or packaged config name")
    ap.add_argument("--seed", type=_u64, default=None, help="master seed (overrides the config)")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="out")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        doc, raw, base = read_config(args.config)
        config = _instance(doc)
        seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](config, doc, base, seed, args.workers, out)
        write_manifest(out, args.command, raw, seed, files)
    except (InputMissing, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (FloatingPointError, ConvergenceError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, VariantError, BudgetError, KeyError, TypeError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
