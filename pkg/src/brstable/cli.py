"""Command-line front end.

Every subcommand reads one strict JSON document (``--config``), fills the
documented defaults, runs with streams derived from ``--seed`` and writes its
artifacts to ``--out``.  The filled document is written back as
``scenario.json`` so a run can be repeated from its own output.

Exit codes: 0 success, 1 a named criterion failed, 2 budget exceeded
(planner refusal or population cap), 3 numeric failure, 64 invalid command
line or configuration.
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import jsonschema

from . import brw, limits, measures, offspring, stable, uchiyama
from ._backend import BACKEND
from .errors import BudgetExceeded, ConfigError, DomainError, ExplosionError
from .rng import stream

EXIT_OK = 0
EXIT_CRITERION = 1
EXIT_BUDGET = 2
EXIT_NUMERIC = 3
EXIT_USAGE = 64

COMMANDS = ("simulate-brw", "simulate-stable", "simulate-uchiyama", "converge", "metrics", "oracle")
SAMPLING = {"simulate-brw", "simulate-stable", "simulate-uchiyama", "converge"}

# ---------------------------------------------------------------------------
# schemas
# ---------------------------------------------------------------------------

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_ATOMS = {"type": "array", "items": _NONNEG}

_RHO = {
    "type": "object",
    "additionalProperties": False,
    "required": ["type"],
    "properties": {
        "type": {"enum": ["point", "mixture", "sampler"]},
        "atoms": {"type": "array", "items": _NONNEG, "minItems": 1},
        "templates": {"type": "array", "items": {"type": "array", "items": _NONNEG, "minItems": 1},
                      "minItems": 1},
        "weights": {"type": "array", "items": _POS, "minItems": 1},
        "name": {"enum": ["uniform-spread"]},
        "k": _POS_INT,
        "spread": _NONNEG,
    },
}
_RHO_FIELDS = {"point": {"atoms"}, "mixture": {"templates", "weights"}, "sampler": {"name", "k", "spread"}}

_LAW = {
    "type": "object",
    "additionalProperties": False,
    "required": ["family", "alpha"],
    "properties": {
        "family": {"enum": ["two-atom", "product-cluster"]},
        "alpha": _POS,
        "slow_c": _NONNEG,
        "directional": _RHO,
    },
}

_STABLE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["alpha"],
    "properties": {"alpha": _POS, "rho": _RHO},
}


def _obj(required, props) -> dict:
    props = dict(props)
    props["seed"] = {"type": "integer", "minimum": 0}
    return {"type": "object", "additionalProperties": False, "required": required, "properties": props}


SCHEMAS = {
    "simulate-brw": _obj(["law"], {
        "law": _LAW,
        "replicas": _POS_INT,
        "steps": {"type": "integer", "minimum": 0},
        "n": _POS_INT,
        "t_grid": {"type": "array", "items": _NONNEG, "minItems": 1},
        "b": {"anyOf": [_POS, {"type": "null"}]},
        "window": {"anyOf": [_POS, {"type": "null"}]},
        "max_atoms": _POS_INT,
    }),
    "simulate-stable": _obj(["stable"], {
        "stable": _STABLE,
        "replicas": _POS_INT,
        "t_grid": {"type": "array", "items": _NONNEG, "minItems": 1},
        "b": _POS,
        "window": {"anyOf": [_POS, {"type": "null"}]},
        "max_atoms": _POS_INT,
    }),
    "simulate-uchiyama": _obj(["offspring", "horizon"], {
        "offspring": {"type": "array", "items": _NONNEG, "minItems": 1},
        "rate": _POS,
        "horizon": _POS,
        "initial": {"type": "array", "items": _NONNEG, "minItems": 1},
        "replicas": _POS_INT,
        "max_particles": _POS_INT,
        "event_log": {"type": "boolean"},
    }),
    "converge": _obj(["law", "n_grid"], {
        "law": _LAW,
        "stable": _STABLE,
        "n_grid": {"type": "array", "items": _POS_INT, "minItems": 1},
        "t_grid": {"type": "array", "items": _NONNEG, "minItems": 1},
        "b": {"anyOf": [_POS, {"type": "null"}]},
        "r": _POS,
        "replicas": {"type": "integer", "minimum": 100},
        "window": _POS,
        "cap": _POS,
        "interval": _POS,
        "slack": _NONNEG,
        "p_min": {"type": "number", "minimum": 0, "maximum": 1},
        "max_atoms": _POS_INT,
        "total_budget": _POS,
    }),
    "metrics": _obj(["pairs"], {
        "pairs": {"type": "array", "minItems": 1, "items": {
            "type": "object", "additionalProperties": False, "required": ["x", "y"],
            "properties": {"x": _ATOMS, "y": _ATOMS}}},
        "r": _POS,
    }),
    "oracle": _obj(["alpha"], {
        "alpha": _POS,
        "rho": _RHO,
        "law": _LAW,
        "b": _POS,
        "theta": _POS,
        "t": _NONNEG,
        "n": _POS_INT,
    }),
}

DEFAULTS = {
    "simulate-brw": {"replicas": 1, "b": None, "window": None, "max_atoms": brw.DEFAULT_MAX_ATOMS},
    "simulate-stable": {"replicas": 1, "t_grid": [1.0], "b": 1.0, "window": None,
                        "max_atoms": uchiyama.DEFAULT_MAX_PARTICLES},
    "simulate-uchiyama": {"rate": 1.0, "initial": [0.0], "replicas": 1,
                          "max_particles": uchiyama.DEFAULT_MAX_PARTICLES, "event_log": False},
    "converge": {"t_grid": [1.0], "b": 1.0, "r": 1.0, "replicas": 10_000, "window": 20.0, "cap": 10.0,
                 "interval": 1.0, "slack": 0.05, "p_min": 0.01, "max_atoms": brw.DEFAULT_MAX_ATOMS,
                 "total_budget": 5e9},
    "metrics": {"r": 1.0},
    "oracle": {"b": 1.0, "theta": 1.0, "t": 1.0, "n": 100},
}


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    """A validated command with its filled configuration.

    Args:
        command: subcommand name.
        config: configuration with every default filled in.
        seed: master seed (``None`` only for commands that draw nothing).
        out: output directory.
        threads: worker threads.
    """

    command: str
    config: dict = field(default_factory=dict)
    seed: Optional[int] = None
    out: str = "."
    threads: int = 1

    def to_json(self) -> str:
        doc = dict(self.config)
        if self.seed is not None:
            doc["seed"] = self.seed
        return json.dumps(doc, indent=2, sort_keys=True)


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ConfigError(f"duplicate key {k!r}", key=k)
        out[k] = v
    return out


def _reject_constant(name):
    raise ValueError(f"{name} is not valid JSON")


def _key_of(err: jsonschema.ValidationError) -> str:
    path = [str(p) for p in err.absolute_path]
    if err.validator == "additionalProperties":
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(set(err.instance) - allowed)
        path.append(extra[0] if extra else "?")
    elif err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        path.append(missing[0] if missing else "?")
    return ".".join(path)


def _check_rho(rho: dict, where: str) -> None:
    need = _RHO_FIELDS[rho["type"]]
    for k in rho:
        if k != "type" and k not in need:
            raise ConfigError(f"key {k!r} does not apply to directional type {rho['type']!r}",
                              key=f"{where}.{k}")
    for k in sorted(need):
        if k not in rho:
            raise ConfigError(f"directional type {rho['type']!r} needs {k!r}", key=f"{where}.{k}")


def _check_law(law: dict, where: str) -> None:
    if law["family"] == "product-cluster":
        if "directional" not in law:
            raise ConfigError("product-cluster family needs a directional law", key=f"{where}.directional")
        _check_rho(law["directional"], f"{where}.directional")
    elif "directional" in law:
        raise ConfigError("the two-atom family takes no directional law", key=f"{where}.directional")


def parse_config(command: str, text: str, seed: Optional[int] = None) -> Scenario:
    """Parse and validate ``text`` for ``command``.

    Args:
        command: one of :data:`COMMANDS`.
        text: JSON document.
        seed: seed from the command line; overrides a ``seed`` key.

    Raises:
        ConfigError: malformed JSON (with line and column), a schema
            violation or an inconsistent value (naming the key).
    """
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    try:
        doc = json.loads(text, object_pairs_hook=_no_duplicates, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} at line {exc.lineno} column {exc.colno}",
                          line=exc.lineno, column=exc.colno) from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    if not isinstance(doc, dict):
        raise ConfigError("the configuration must be a JSON object")
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        key = _key_of(err)
        raise ConfigError(f"invalid value for {key!r}: {err.message}", key=key)
    for name in ("law",):
        if name in doc:
            _check_law(doc[name], name)
    for name in ("rho",):
        if name in doc:
            _check_rho(doc[name], name)
    if "stable" in doc and "rho" in doc["stable"]:
        _check_rho(doc["stable"]["rho"], "stable.rho")

    cfg = copy.deepcopy(DEFAULTS[command])
    cfg.update({k: v for k, v in doc.items() if k != "seed"})
    if seed is None:
        seed = doc.get("seed")
    if command in SAMPLING and seed is None:
        raise ConfigError("a seed is required (--seed or the 'seed' key)", key="seed")
    _semantic_checks(command, cfg)
    return Scenario(command, cfg, seed)


def _semantic_checks(command: str, cfg: dict) -> None:
    if command == "simulate-brw":
        if "steps" not in cfg and "n" not in cfg:
            raise ConfigError("give 'steps' (raw trajectory) or 'n' with 't_grid' (rescaled marginals)",
                              key="steps")
        if ("n" in cfg) != ("t_grid" in cfg):
            raise ConfigError("'n' and 't_grid' go together", key="t_grid" if "n" in cfg else "n")
        if cfg["b"] is not None and "n" not in cfg:
            raise ConfigError("trimming needs the rescaling index 'n'", key="b")
    if command == "converge":
        if any(x >= y for x, y in zip(cfg["n_grid"], cfg["n_grid"][1:])):
            raise ConfigError("n_grid must be increasing", key="n_grid")
        alpha = cfg["stable"]["alpha"] if "stable" in cfg else cfg["law"]["alpha"]
        if alpha != cfg["law"]["alpha"]:
            raise ConfigError("the stable law must share alpha with the walk", key="stable.alpha")
    if command == "oracle" and "law" in cfg and cfg["law"]["alpha"] != cfg["alpha"]:
        raise ConfigError("law.alpha must equal alpha", key="law.alpha")


def _build(fn, d: dict, key: str):
    try:
        return fn(d)
    except (ValueError, DomainError) as exc:
        raise ConfigError(f"invalid value for {key!r}: {exc}", key=key) from None


def _law(cfg: dict) -> offspring.OffspringLaw:
    return _build(offspring.law_from_dict, cfg["law"], "law")


def _stable_spec(d: dict, key: str) -> stable.StableSpec:
    d = {"alpha": d["alpha"], "rho": d.get("rho", {"type": "point", "atoms": [1.0]})}
    return _build(stable.StableSpec.from_dict, d, key)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _open(out: str, name: str):
    return open(os.path.join(out, name), "w", newline="")


def run_simulate_brw(s: Scenario, max_atoms: Optional[int]) -> int:
    cfg = s.config
    law = _law(cfg)
    cap = max_atoms or cfg["max_atoms"]
    if "steps" in cfg:
        rows = []
        for i in range(cfg["replicas"]):
            traj = brw.run_trajectory(law, cfg["steps"], stream(s.seed, "simulate-brw", "trajectory", i), cap)
            rows.extend((i, g) for g in traj)
        with _open(s.out, "trajectory.csv") as fh:
            brw.write_trajectory_csv(rows, fh)
    if "n" in cfg:
        n, ts = cfg["n"], cfg["t_grid"]
        ks = [brw.steps_for(n, t) for t in ts]
        b = math.inf if cfg["b"] is None else cfg["b"]
        w = math.inf if cfg["window"] is None else cfg["window"]

        def one(i):
            forest = brw.brw_forest(law, n, max(ks), stream(s.seed, "simulate-brw", "marginal", i),
                                    b=b, window=w, max_atoms=cap)
            return [(i, t, forest.measure_at(k)) for t, k in zip(ts, ks)]

        rows = [r for rep in limits.run_replicas(one, cfg["replicas"], s.threads) for r in rep]
        with _open(s.out, "marginals.csv") as fh:
            measures.write_measures_csv(rows, fh)
    return EXIT_OK


def run_simulate_stable(s: Scenario, max_atoms: Optional[int]) -> int:
    cfg = s.config
    spec = _stable_spec(cfg["stable"], "stable")
    cap = max_atoms or cfg["max_atoms"]
    ts = cfg["t_grid"]
    w = math.inf if cfg["window"] is None else cfg["window"]

    def one(i):
        forest = stable.stable_forest(spec, max(ts), cfg["b"], stream(s.seed, "simulate-stable", i),
                                      window=w, max_atoms=cap)
        return [(i, t, forest.measure_at(t)) for t in ts]

    rows = [r for rep in limits.run_replicas(one, cfg["replicas"], s.threads) for r in rep]
    with _open(s.out, "marginals.csv") as fh:
        measures.write_measures_csv(rows, fh)
    return EXIT_OK


def run_simulate_uchiyama(s: Scenario, max_atoms: Optional[int]) -> int:
    cfg = s.config
    rm = _build(lambda a: uchiyama.fixed_offspring(a, cfg["rate"]), cfg["offspring"], "offspring")
    x0 = measures.CountingMeasure(cfg["initial"])
    cap = max_atoms or cfg["max_particles"]
    rows = []
    for i in range(cfg["replicas"]):
        rng = stream(s.seed, "simulate-uchiyama", i)
        if cfg["event_log"]:
            m, events = uchiyama.simulate_with_log(x0, rm, cfg["horizon"], rng, cap)
            with _open(s.out, f"events_{i}.csv") as fh:
                uchiyama.write_event_log(events, fh)
        else:
            m = uchiyama.simulate(x0, rm, cfg["horizon"], rng, cap)
        rows.append((i, cfg["horizon"], m))
    with _open(s.out, "measures.csv") as fh:
        measures.write_measures_csv(rows, fh)
    return EXIT_OK


def experiment_config(s: Scenario, max_atoms: Optional[int] = None) -> limits.ExperimentConfig:
    """The :class:`limits.ExperimentConfig` described by a ``converge`` scenario."""
    cfg = s.config
    law = _law(cfg)
    if "stable" in cfg:
        spec = _stable_spec(cfg["stable"], "stable")
    else:
        spec = stable.StableSpec(law.alpha, law.directional)
    try:
        return limits.ExperimentConfig(
            law=law, stable=spec, n_grid=cfg["n_grid"], t_grid=cfg["t_grid"], b=cfg["b"], r=cfg["r"],
            replicas=cfg["replicas"], seed=s.seed, window=cfg["window"], cap=cfg["cap"],
            interval=cfg["interval"], slack=cfg["slack"], p_min=cfg["p_min"],
            max_atoms=max_atoms or cfg["max_atoms"], total_budget=cfg["total_budget"], threads=s.threads)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def run_converge(s: Scenario, max_atoms: Optional[int]) -> int:
    report = limits.convergence_experiment(experiment_config(s, max_atoms))
    with _open(s.out, "report.json") as fh:
        fh.write(report.to_json() + "\n")
    report.write_tables(s.out)
    for c in report.criteria:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name} value={c.value:.6g} ({c.threshold})")
    for c in report.cells:
        if c.status != "ok":
            print(f"BUDGET-EXCEEDED t={c.t:g},n={c.n}: {c.message}")
    if not report.passed:
        return EXIT_CRITERION
    if any(c.status != "ok" for c in report.cells):
        return EXIT_BUDGET
    return EXIT_OK


def run_metrics(s: Scenario, max_atoms: Optional[int]) -> int:
    import csv

    r = s.config["r"]
    with _open(s.out, "metrics.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair", "r", "d_r", "levy_prokhorov", "laplace_x", "laplace_y", "nested", "mass_bound"])
        for i, p in enumerate(s.config["pairs"]):
            x, y = measures.CountingMeasure(p["x"]), measures.CountingMeasure(p["y"])
            lp = measures.levy_prokhorov(measures.WeightedMeasure.unit(x), measures.WeightedMeasure.unit(y))
            nested = measures.is_submultiset(y, x)
            bound = measures.laplace_functional(measures.difference(x, y), r) if nested else ""
            w.writerow([i, measures.repr_float(r), measures.repr_float(measures.d_r(x, y, r)),
                        measures.repr_float(lp), measures.repr_float(measures.laplace_functional(x, r)),
                        measures.repr_float(measures.laplace_functional(y, r)), nested,
                        bound if bound == "" else measures.repr_float(bound)])
    return EXIT_OK


def oracle_values(cfg: dict) -> dict:
    """Closed-form values for an ``oracle`` configuration."""
    rho = cfg.get("rho", {"type": "point", "atoms": [1.0]})
    spec = _stable_spec({"alpha": cfg["alpha"], "rho": rho}, "rho")
    law = _law(cfg) if "law" in cfg else offspring.make_two_atom_power_law(cfg["alpha"])
    b, th, t, n = cfg["b"], cfg["theta"], cfg["t"], cfg["n"]
    kappa = stable.cumulant(spec, th, b)
    return {
        "alpha": cfg["alpha"], "b": b, "theta": th, "t": t, "n": n,
        "kappa": kappa,
        "kappa_quad": stable.cumulant(spec, th, b, method="quad"),
        "kappa_inf": stable.cumulant(spec, th),
        "rate": stable.trimmed_rate(spec, b),
        "e_laplace": math.exp(t * kappa),
        "e_mass": math.exp(t * b ** spec.alpha * spec.moment()),
        "a_n": offspring.compute_an(law, n),
        "psi_at_theta": float(law.psi(th)),
    }


def run_oracle(s: Scenario, max_atoms: Optional[int]) -> int:
    vals = oracle_values(s.config)
    with _open(s.out, "oracle.json") as fh:
        fh.write(json.dumps(vals, indent=2) + "\n")
    print(f"kappa={vals['kappa']:.6f} E-Laplace={vals['e_laplace']:.6f} "
          f"E-mass={vals['e_mass']:.6f} a_{vals['n']}={vals['a_n']:.6g}")
    return EXIT_OK


RUNNERS = {
    "simulate-brw": run_simulate_brw,
    "simulate-stable": run_simulate_stable,
    "simulate-uchiyama": run_simulate_uchiyama,
    "converge": run_converge,
    "metrics": run_metrics,
    "oracle": run_oracle,
}


def run_scenario(s: Scenario, max_atoms: Optional[int] = None) -> int:
    """Run ``s`` and map the failure kinds to exit codes."""
    os.makedirs(s.out, exist_ok=True)
    with _open(s.out, "scenario.json") as fh:
        fh.write(s.to_json() + "\n")
    try:
        return RUNNERS[s.command](s, max_atoms)
    except (BudgetExceeded, ExplosionError) as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ArithmeticError as exc:      # NumericFailure, overflow of a closed form
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON scenario document")
    common.add_argument("--seed", type=int, help="master seed (required for sampling commands)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    common.add_argument("--max-atoms", type=int, help="per-replica population cap")
    p = _Parser(prog="brstable", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s 0.1.0 ({BACKEND} kernels)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return EXIT_USAGE
    if args.threads < 1 or (args.max_atoms is not None and args.max_atoms < 1):
        print("error: --threads and --max-atoms must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        with open(args.config) as fh:
            text = fh.read()
        s = parse_config(args.command, text, args.seed)
        s.out, s.threads = args.out, args.threads
        if s.command == "converge":
            experiment_config(s, args.max_atoms)   # surface construction errors as config errors
        return run_scenario(s, args.max_atoms)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        where = f" (line {exc.line}, column {exc.column})" if exc.line is not None else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
