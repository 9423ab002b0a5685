"""Command-line entry point: ``alpha-ewm <command> [--config FILE] [overrides]``.

Every flag is an override of a config key, so a run is determined by its
resolved config, which is echoed into each JSON output. Exit codes: 0 on
success, 1 when a computation fails, 2 for config or input validation errors.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import re
import sys
import traceback
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from alpha_ewm import __version__
from alpha_ewm.data import DataError, ObservationTable, Schema, load_table, write_table
from alpha_ewm.dgp import (
    KINDS,
    DgpSpec,
    criterion_value,
    generate,
    oracle_best_policy,
    post_treatment_outcomes,
    superpopulation,
)
from alpha_ewm.inference import (
    SCHEMA_VERSION,
    bootstrap_optimal_welfare,
    learn_summary,
    run_coverage_experiment,
    write_metrics_csv,
)
from alpha_ewm.nuisance import NuisanceConfig, fit_nuisance
from alpha_ewm.optimize import SaConfig, evaluate_policy, learn_policy
from alpha_ewm.policy import PolicyClassSpec, decide, policy_from_dict, policy_to_dict

DEFAULTS: dict = {
    "data": {
        "path": None,
        "schema": {"covariates": None, "outcome": "y", "treatment": "a", "y0": None, "y1": None},
        "known_propensity": None,
        "dgp": None,
    },
    "alpha": 0.25,
    "alphas": None,
    "policy_class": {"kind": "linear"},
    "nuisance": asdict(NuisanceConfig()),
    "sa": asdict(SaConfig()),
    "mode": "profiled",
    "grid_size": 512,
    "inference": {"level": 0.95, "B": 100, "epsilon": None, "seed": 0, "multiplier": "normal", "iterations": 1000},
    "evaluate": {"policies": None, "selection_alphas": None},
    "compare": {"criteria": [{"name": "cvar", "alpha": 0.1}, {"name": "mean"}, {"name": "gini", "k": 3}, {"name": "quantile", "alpha": 0.1}], "quantile_points": 999},
    "simulate": {"reps": 200, "n": None, "truth": None, "truth_file": None, "base_seed": 0},
    "truth": {"superpopulation_n": 1_000_000, "superpopulation_seed": 20240101},
    "workers": 1,
    "output": None,
}

# flag -> dotted config key
FLAG_KEYS = {
    "data": "data.path",
    "covariates": "data.schema.covariates",
    "outcome": "data.schema.outcome",
    "treatment": "data.schema.treatment",
    "y0": "data.schema.y0",
    "y1": "data.schema.y1",
    "known_propensity": "data.known_propensity",
    "dgp": "data.dgp.kind",
    "n": "data.dgp.n",
    "seed": "data.dgp.seed",
    "alpha": "alpha",
    "alphas": "alphas",
    "policy_class": "policy_class.kind",
    "policy_feature": "policy_class.feature",
    "mode": "mode",
    "propensity_mode": "nuisance.propensity_mode",
    "kappa": "nuisance.kappa",
    "bandwidth_multiplier": "nuisance.bandwidth_multiplier",
    "folds": "nuisance.K",
    "iterations": "sa.iterations",
    "restarts": "sa.restarts",
    "sa_seed": "sa.seed",
    "level": "inference.level",
    "B": "inference.B",
    "epsilon": "inference.epsilon",
    "reps": "simulate.reps",
    "truth": "simulate.truth",
    "truth_file": "simulate.truth_file",
    "base_seed": "simulate.base_seed",
    "workers": "workers",
    "output": "output",
}


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


# ----------------------------------------------------------------- config


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_dotted(cfg: dict, key: str, value):
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            text = Path(args.config).read_text()
            loaded = yaml.safe_load(text) or {}
        except OSError as exc:
            raise ConfigError("config", f"cannot read {args.config}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"not valid YAML: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config", "top level must be a mapping")
        cfg = _merge(cfg, loaded)
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            _set_dotted(cfg, key, value)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError("--set", f"expected key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set_dotted(cfg, key.strip(), yaml.safe_load(raw))
    return cfg


def _field(fn, field: str):
    try:
        return fn()
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(field, str(exc)) from exc


def _alpha(cfg, key="alpha", allow_one=False) -> float:
    def get():
        a = float(cfg[key])
        if not (0.0 < a < 1.0 or (allow_one and a == 1.0)):
            raise ValueError(f"must lie in (0, 1{']' if allow_one else ')'}, got {a}")
        return a

    return _field(get, key)


def _alpha_list(cfg, allow_one=True) -> list[float]:
    raw = cfg.get("alphas")
    if raw is None:
        return [_alpha(cfg, allow_one=allow_one)]
    if isinstance(raw, str):
        raw = [v for v in raw.split(",") if v.strip()]
    out = []
    for v in raw:
        out.append(_alpha({"alphas": v}, "alphas", allow_one=allow_one))
    if not out:
        raise ConfigError("alphas", "empty list")
    return out


def _class_spec(cfg) -> PolicyClassSpec:
    pc = cfg.get("policy_class")
    if isinstance(pc, str):
        pc = {"kind": pc}
    if not isinstance(pc, dict):
        raise ConfigError("policy_class", "must be a mapping with a 'kind'")
    kind = str(pc.get("kind", "")).lower().replace("-", "_")
    kind = {"constant_pair": "constant", "constantpair": "constant", "linear": "linear", "threshold": "threshold", "constant": "constant"}.get(kind)
    if kind is None:
        raise ConfigError("policy_class.kind", f"unknown policy class {pc.get('kind')!r}; expected constant, linear or threshold")
    return _field(lambda: PolicyClassSpec.from_dict({**pc, "kind": kind}), "policy_class")


def _nuisance_config(cfg) -> NuisanceConfig:
    block = cfg.get("nuisance") or {}
    for k in block:
        if k not in NuisanceConfig.__dataclass_fields__:
            raise ConfigError(f"nuisance.{k}", "unknown key")
    return _dataclass_from_block(NuisanceConfig, block, "nuisance")


def _sa_config(cfg) -> SaConfig:
    block = cfg.get("sa") or {}
    for k in block:
        if k not in SaConfig.__dataclass_fields__:
            raise ConfigError(f"sa.{k}", "unknown key")
    block = _field(lambda: {k: (float(v) if k in ("initial_temperature", "cooling_rate", "step_scale") else int(v)) for k, v in block.items()}, "sa")
    return _dataclass_from_block(SaConfig, block, "sa")


def _dataclass_from_block(cls, block: dict, prefix: str):
    try:
        return cls(**block)
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        # name the offending key when the validator mentions it
        key = next((k for k in cls.__dataclass_fields__ if re.search(rf"\b{k}\b", msg)), None)
        raise ConfigError(f"{prefix}.{key}" if key else prefix, msg) from exc


def _dgp_spec(cfg) -> DgpSpec | None:
    d = cfg["data"].get("dgp")
    if not d:
        return None
    if isinstance(d, str):
        d = {"kind": d}
    if "kind" not in d:
        raise ConfigError("data.dgp.kind", "missing")
    if str(d["kind"]).lower().replace("_", "-") not in KINDS:
        raise ConfigError("data.dgp.kind", f"unknown DGP {d['kind']!r}; expected one of {list(KINDS)}")
    return _field(lambda: DgpSpec(str(d["kind"]), int(d.get("n", 1000)), int(d.get("seed", 0))), "data.dgp")


def _table(cfg) -> ObservationTable:
    data = cfg["data"]
    spec = _dgp_spec(cfg)
    if data.get("path"):
        schema_block = dict(data.get("schema") or {})
        if not schema_block.get("covariates"):
            schema_block["covariates"] = _default_covariates(data["path"], schema_block)
        schema = _field(lambda: Schema.from_mapping(schema_block), "data.schema")
        kp = data.get("known_propensity")
        try:
            return load_table(data["path"], schema, known_propensity=None if kp is None else float(kp))
        except DataError as exc:
            raise ConfigError("data", str(exc)) from exc
        except OSError as exc:
            raise ConfigError("data.path", f"cannot read {data['path']}: {exc.strerror or exc}") from exc
    if spec is None:
        raise ConfigError("data", "either data.path or data.dgp is required")
    return generate(spec)


def _default_covariates(path, schema_block: dict) -> list[str]:
    """Every header column that is not the outcome, treatment or a counterfactual column."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh), [])
    except OSError as exc:
        raise ConfigError("data.path", f"cannot read {path}: {exc.strerror or exc}") from exc
    reserved = {schema_block.get("outcome") or "y", schema_block.get("treatment") or "a", schema_block.get("y0") or "y0", schema_block.get("y1") or "y1"}
    cols = [c.strip() for c in header if c.strip() not in reserved]
    if not cols:
        raise ConfigError("data.schema.covariates", "no covariate columns found in the header")
    return cols


def _nuisance_for(cfg, table: ObservationTable) -> NuisanceConfig:
    nc = _nuisance_config(cfg)
    if nc.propensity_mode == "known" and nc.propensity_value is None and table.known_propensity is None:
        raise ConfigError("nuisance.propensity_value", "known propensity mode needs a value (or data.known_propensity)")
    return nc


# ---------------------------------------------------------------- outputs


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _emit(cfg, command: str, result: dict, out=None, to_file=True):
    doc = {"schema_version": SCHEMA_VERSION, "tool_version": __version__, "command": command, "config": cfg, "result": result}
    text = json.dumps(_jsonable(doc), indent=2)
    path = cfg.get("output")
    if path and to_file:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")
    (out or sys.stdout).write(text + "\n")
    return doc


def _sibling(cfg, suffix: str, default: str) -> Path:
    base = cfg.get("output")
    if base:
        p = Path(base)
        return p.with_name(p.stem + suffix)
    return Path(default)


# --------------------------------------------------------------- commands


def cmd_learn(cfg):
    table = _table(cfg)
    alpha = _alpha(cfg)
    spec = _class_spec(cfg)
    nc = _nuisance_for(cfg, table)
    sa = _sa_config(cfg)
    if cfg["mode"] not in ("profiled", "joint"):
        raise ConfigError("mode", "must be 'profiled' or 'joint'")
    level = _field(lambda: float(cfg["inference"]["level"]), "inference.level")
    if not 0 < level < 1:
        raise ConfigError("inference.level", "must lie in (0, 1)")
    if table.n < 2 * nc.K:
        raise ConfigError("data", f"need at least 2K = {2 * nc.K} rows, got {table.n}")
    fit = learn_policy(table, alpha, spec, nc, sa, mode=cfg["mode"], grid_size=int(cfg["grid_size"]))
    result = learn_summary(fit, level)
    result["n"] = table.n
    result["diagnostics"] = fit.diagnostics
    return result


def _policies_for_evaluate(cfg, table, nc, sa):
    ev = cfg.get("evaluate") or {}
    items = ev.get("policies")
    out = []
    if items:
        for i, item in enumerate(items):
            field = f"evaluate.policies[{i}]"
            if isinstance(item, str):
                item = _field(lambda: json.loads(Path(item).read_text()), field)
            rule = item.get("policy", item)
            pol = _field(lambda: policy_from_dict(rule), field)
            sel = item.get("alpha_for_selection", item.get("label"))
            out.append((sel if sel is not None else f"policy{i + 1}", pol))
        return out
    sel_alphas = ev.get("selection_alphas")
    if not sel_alphas:
        raise ConfigError("evaluate.policies", "give fixed policies or evaluate.selection_alphas to learn them")
    spec = _class_spec(cfg)
    nuisance = fit_nuisance(table, nc)
    for a in sel_alphas:
        a = _alpha({"a": a}, "a")
        fit = learn_policy(table, a, spec, nc, sa, nuisance=nuisance, grid_size=int(cfg["grid_size"]))
        out.append((a, fit.policy))
    return out


def welfare_matrix_rows(reports: dict) -> list[dict]:
    """Flatten ``{(selection, interest): report}`` and flag row maxima and percentage loss."""
    interests = sorted({k[1] for k in reports})
    rows = []
    for a in interests:
        cells = {k[0]: r for k, r in reports.items() if k[1] == a}
        best = max(r.W_hat for r in cells.values())
        diag = cells.get(a)
        ref = diag.W_hat if diag is not None else best
        for sel, r in cells.items():
            rows.append(
                {
                    "alpha_of_interest": a,
                    "alpha_for_selection": sel,
                    "W_hat": r.W_hat,
                    "se": r.se,
                    "wald_lo": r.wald_lo,
                    "wald_hi": r.wald_hi,
                    "treated_fraction": r.treated_fraction,
                    "eta_hat": r.eta_hat,
                    "is_diagonal": sel == a,
                    "is_row_max": r.W_hat == best,
                    "pct_loss_vs_diagonal": 100.0 * (ref - r.W_hat) / abs(ref) if ref != 0 else math.nan,
                }
            )
    return rows


def cmd_evaluate(cfg):
    table = _table(cfg)
    alphas = _alpha_list(cfg, allow_one=False)
    nc = _nuisance_for(cfg, table)
    sa = _sa_config(cfg)
    level = float(cfg["inference"]["level"])
    policies = _policies_for_evaluate(cfg, table, nc, sa)
    nuisance = fit_nuisance(table, nc)
    reports = {}
    for sel, pol in policies:
        for rep in evaluate_policy(table, pol, alphas, nc, nuisance=nuisance, level=level, grid_size=int(cfg["grid_size"])):
            reports[(sel, rep.alpha)] = rep
    rows = welfare_matrix_rows(reports)
    path = _sibling(cfg, "_matrix.csv", "welfare_matrix.csv")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    diagonal_is_max = {str(r["alpha_of_interest"]): r["is_row_max"] for r in rows if r["is_diagonal"]}
    return {
        "n": table.n,
        "policies": [{"alpha_for_selection": s, "policy": policy_to_dict(p)} for s, p in policies],
        "matrix_csv": str(path),
        "rows": rows,
        "diagonal_is_row_max": diagonal_is_max,
    }


def _criteria(cfg) -> list[dict]:
    out = []
    for i, c in enumerate((cfg.get("compare") or {}).get("criteria") or []):
        c = {"name": c} if isinstance(c, str) else dict(c)
        name = c.get("name")
        if name not in ("cvar", "mean", "gini", "quantile"):
            raise ConfigError(f"compare.criteria[{i}].name", f"unknown criterion {name!r}")
        if name in ("cvar", "quantile"):
            _alpha({"alpha": c.get("alpha", 0.1)}, "alpha", allow_one=True)
        if name == "gini" and float(c.get("k", 3)) < 2:
            raise ConfigError(f"compare.criteria[{i}].k", "must be >= 2")
        out.append(c)
    if not out:
        raise ConfigError("compare.criteria", "empty list")
    return out


def _label(c: dict) -> str:
    if c["name"] in ("cvar", "quantile"):
        return f"{c['name']}_{c.get('alpha', 0.1):g}"
    if c["name"] == "gini":
        return f"gini_k{c.get('k', 3):g}"
    return "mean"


def cmd_compare(cfg):
    table = _table(cfg)
    if not table.has_counterfactuals:
        raise ConfigError("data", "compare needs both potential outcomes (y0, y1)")
    spec = _class_spec(cfg)
    sa = _sa_config(cfg)
    crits = _criteria(cfg)
    m = int((cfg.get("compare") or {}).get("quantile_points", 999))
    t = (np.arange(1, m + 1) - 0.5) / m
    results, quantiles = [], {}
    for c in crits:
        opt = oracle_best_policy(table, spec, float(c.get("alpha", 0.1)), c["name"], float(c.get("k", 3)), sa_config=sa)
        y = post_treatment_outcomes(table, opt.policy)
        lab = _label(c)
        quantiles[lab] = np.quantile(y, t)
        results.append(
            {
                "criterion": lab,
                "policy": policy_to_dict(opt.policy),
                "value": opt.value,
                "mean": float(y.mean()),
                "sd": float(y.std()),
                "treated_fraction": float(np.mean(decide(opt.policy, table.x))),
                "cvar_0.1": criterion_value(y, "cvar", 0.1),
            }
        )
    qpath = _sibling(cfg, "_sorted_outcomes.csv", "sorted_outcomes.csv")
    labels = list(quantiles)
    with open(qpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + labels)
        for i, ti in enumerate(t):
            w.writerow([ti] + [quantiles[lab][i] for lab in labels])
    dpath = _sibling(cfg, "_quantile_differences.csv", "quantile_differences.csv")
    with open(dpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "first", "second", "difference"])
        for i, a in enumerate(labels):
            for b in labels[i + 1 :]:
                for j, ti in enumerate(t):
                    w.writerow([ti, a, b, quantiles[a][j] - quantiles[b][j]])
    return {"n": table.n, "criteria": results, "sorted_outcomes_csv": str(qpath), "quantile_differences_csv": str(dpath)}


def _truth_value(cfg, kind: str, alpha: float):
    sim = cfg.get("simulate") or {}
    if sim.get("truth") is not None:
        return _field(lambda: float(sim["truth"]), "simulate.truth"), "config"
    tf = sim.get("truth_file")
    if tf:
        doc = _field(lambda: json.loads(Path(tf).read_text()), "simulate.truth_file")
        # accept either the full `truth` command output or its result block
        doc = doc.get("result", doc)
        if str(doc.get("dgp", "")).lower().replace("_", "-") != kind:
            raise ConfigError("simulate.truth_file", f"truth file is for DGP {doc.get('dgp')!r}, run uses {kind!r}")
        for entry in doc.get("truths", []):
            if abs(float(entry["alpha"]) - alpha) < 1e-12:
                return float(entry["value"]), str(tf)
        raise ConfigError("simulate.truth_file", f"no truth for alpha={alpha}")
    return None, "oracle"


def cmd_simulate(cfg):
    spec = _dgp_spec(cfg)
    if spec is None:
        raise ConfigError("data.dgp", "simulate needs a DGP")
    alpha = _alpha(cfg)
    cls = _class_spec(cfg)
    nc = _nuisance_config(cfg)
    sa = _sa_config(cfg)
    sim = cfg.get("simulate") or {}
    reps = _field(lambda: int(sim["reps"]), "simulate.reps")
    if reps < 1:
        raise ConfigError("simulate.reps", "must be positive")
    n = _field(lambda: int(sim.get("n") or spec.n), "simulate.n")
    truth, source = _truth_value(cfg, spec.kind, alpha)
    metrics = run_coverage_experiment(
        spec.kind, alpha, n, reps, cls, nc, sa, base_seed=int(sim.get("base_seed", 0)), truth=truth, workers=int(cfg["workers"]), level=float(cfg["inference"]["level"])
    )
    path = _sibling(cfg, "_metrics.csv", "simulation_metrics.csv")
    write_metrics_csv([metrics], path)
    out = metrics.to_dict()
    out["truth_source"] = source
    out["metrics_csv"] = str(path)
    return out


def cmd_infer(cfg):
    table = _table(cfg)
    alpha = _alpha(cfg)
    spec = _class_spec(cfg)
    nc = _nuisance_for(cfg, table)
    sa = _sa_config(cfg)
    inf = cfg["inference"]
    level = _field(lambda: float(inf["level"]), "inference.level")
    B = _field(lambda: int(inf["B"]), "inference.B")
    if B < 2:
        raise ConfigError("inference.B", "must be at least 2")
    eps = inf.get("epsilon")
    eps = None if eps in (None, "auto") else _field(lambda: float(eps), "inference.epsilon")
    nuisance = fit_nuisance(table, nc)
    fit = learn_policy(table, alpha, spec, nc, sa, nuisance=nuisance, grid_size=int(cfg["grid_size"]))
    boot = bootstrap_optimal_welfare(
        table,
        alpha,
        spec,
        nuisance,
        fit,
        B=B,
        epsilon_n=eps,
        level=level,
        seed=int(inf.get("seed", 0)),
        sa_config=sa.replace(iterations=int(inf.get("iterations", 1000)), restarts=1),
        multiplier_kind=str(inf.get("multiplier", "normal")),
        grid_size=int(cfg["grid_size"]),
    )
    return {"n": table.n, "learn": learn_summary(fit, level), "bootstrap": boot.to_dict()}


def cmd_gen_dgp(cfg):
    spec = _dgp_spec(cfg)
    if spec is None:
        raise ConfigError("data.dgp", "gen-dgp needs a DGP")
    table = generate(spec)
    path = cfg.get("output")
    if not path:
        raise ConfigError("output", "gen-dgp needs an output CSV path")
    schema = write_table(table, path)
    return {
        "schema_version": SCHEMA_VERSION,
        "rows": table.n,
        "csv": str(path),
        "schema": {"covariates": list(schema.covariates), "outcome": schema.outcome, "treatment": schema.treatment, "y0": schema.y0, "y1": schema.y1},
        "known_propensity": table.known_propensity,
        "dgp": asdict(spec),
    }


def cmd_truth(cfg):
    spec = _dgp_spec(cfg)
    if spec is None:
        raise ConfigError("data.dgp", "truth needs a DGP")
    alphas = _alpha_list(cfg, allow_one=False)
    cls = _class_spec(cfg)
    sa = _sa_config(cfg)
    tb = cfg.get("truth") or {}
    pop_n, pop_seed = int(tb.get("superpopulation_n", 1_000_000)), int(tb.get("superpopulation_seed", 20240101))
    pop = superpopulation(spec.kind, pop_n, pop_seed)
    truths = []
    for a in alphas:
        opt = oracle_best_policy(pop, cls, a, sa_config=sa)
        truths.append({"alpha": a, "value": opt.value, "policy": policy_to_dict(opt.policy)})
    return {"dgp": spec.kind, "superpopulation_n": pop_n, "superpopulation_seed": pop_seed, "sa": asdict(sa), "class": cls.to_dict(), "truths": truths}


COMMANDS = {
    "learn": cmd_learn,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "simulate": cmd_simulate,
    "infer": cmd_infer,
    "gen-dgp": cmd_gen_dgp,
    "truth": cmd_truth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alpha-ewm", description="Learn and evaluate treatment rules targeting the worst-off alpha fraction.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML (or JSON) config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any dotted config key")
        p.add_argument("--data", help="input CSV")
        p.add_argument("--covariates", help="comma-separated covariate columns")
        p.add_argument("--outcome")
        p.add_argument("--treatment")
        p.add_argument("--y0")
        p.add_argument("--y1")
        p.add_argument("--known-propensity", dest="known_propensity", type=float)
        p.add_argument("--dgp", help=f"synthetic design: {', '.join(KINDS)}")
        p.add_argument("--n", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--alphas", help="comma-separated alpha list")
        p.add_argument("--policy-class", dest="policy_class")
        p.add_argument("--policy-feature", dest="policy_feature", type=int)
        p.add_argument("--mode", choices=["profiled", "joint"])
        p.add_argument("--propensity-mode", dest="propensity_mode")
        p.add_argument("--kappa", type=float)
        p.add_argument("--bandwidth-multiplier", dest="bandwidth_multiplier", type=float)
        p.add_argument("--folds", type=int)
        p.add_argument("--iterations", type=int)
        p.add_argument("--restarts", type=int)
        p.add_argument("--sa-seed", dest="sa_seed", type=int)
        p.add_argument("--level", type=float)
        p.add_argument("--B", type=int)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--reps", type=int)
        p.add_argument("--truth", type=float)
        p.add_argument("--truth-file", dest="truth_file")
        p.add_argument("--base-seed", dest="base_seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--output", "-o")
    return parser


def _error(kind: str, message: str, field: str | None = None) -> str:
    err = {"type": kind, "message": message}
    if field is not None:
        err["field"] = field
    return json.dumps({"schema_version": SCHEMA_VERSION, "error": err})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        result = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(_error("config", exc.message, exc.field))
        return 2
    except DataError as exc:
        print(_error("validation", str(exc), "data"))
        return 2
    except Exception as exc:  # component failure
        print(_error("component", f"{type(exc).__name__}: {exc}"))
        traceback.print_exc(file=sys.stderr)
        return 1
    # gen-dgp's output is the CSV itself
    _emit(cfg, args.command, result, to_file=args.command != "gen-dgp")
    return 0


if __name__ == "__main__":
    sys.exit(main())
