"""Batch command-line front end.

Commands::

    mstp simulate    generate a trial dataset (CSV)
    mstp estimate    initial estimate, Q model, sparse estimate
    mstp infer       one-step estimates with asymptotic and bootstrap intervals
    mstp oracle      grid-search optimum of a simulated scenario
    mstp evaluate    rollout value (and, given data, the estimated value) of a policy
    mstp experiment  replicated simulation study with resumable checkpoints

Settings come from ``RunConfig`` defaults, then a JSON config file
(``--config``), then command-line flags. ``--manifest`` replays a previous
run. Every run writes ``manifest.json`` next to its outputs; it records the
resolved config, derived seeds, library versions and output checksums, and
holds nothing that depends on the output location or the wall clock, so
a replay into another directory reproduces every file byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional

import numpy as np

from mstp.data import format_float, load_dataset, save_dataset
from mstp.errors import ConfigError, DataError, MSTPError
from mstp.policy import DEFAULT_TAU, PolicyParams
from mstp.seeding import derive_seed_sequence

log = logging.getLogger("mstp")

COMMANDS = ("simulate", "estimate", "infer", "oracle", "evaluate", "experiment")
MANIFEST = "manifest.json"


@dataclass
class RunConfig:
    command: str = "simulate"
    out: str = "out"  # output directory; not recorded in the manifest
    # data source: a CSV path, or a simulated scenario when empty
    data: str = ""
    scenario: int = 2
    n: int = 500
    d: int = 30
    T: int = 1
    # method
    tau: float = DEFAULT_TAU
    q_variant: str = "q1"
    lambdas: List[float] = field(default_factory=list)  # empty: default grid
    lambda_initial: Optional[float] = None  # None: cross-validate
    lambda_theta: Optional[float] = None
    lambda_w: Optional[float] = None
    folds: int = 5
    B: int = 100
    alpha: float = 0.05
    # inputs produced by earlier commands
    estimate_dir: str = ""
    policy: str = ""
    q_model: str = ""
    # simulation study
    oracle_step: float = 0.05
    n_test: int = 50_000
    repeats: int = 4
    n_value: int = 10_000
    replications: int = 20
    inference: bool = True
    seed: int = 0
    jobs: int = 1

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.q_variant not in ("q0", "q1", "q2", "zero", "regression", "variance-min"):
            raise ConfigError(f"unknown Q variant {self.q_variant!r}")
        if self.scenario not in (1, 2):
            raise ConfigError("scenario must be 1 or 2")
        if min(self.n, self.d, self.T, self.folds, self.jobs, self.repeats, self.replications) < 1:
            raise ConfigError("sizes, folds, jobs, repeats and replications must be positive")
        if self.d < 2:
            raise ConfigError("simulated scenarios need d >= 2")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.B < 0:
            raise ConfigError("B must be non-negative")
        if any(not v > 0 for v in self.lambdas):
            raise ConfigError("lambda grid values must be positive")
        return self

    def recorded(self) -> dict:
        """Config as echoed into the manifest (everything but the output directory)."""
        rec = asdict(self)
        rec.pop("out")
        return rec

    @classmethod
    def from_dict(cls, rec: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(rec) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**rec)


def _scenario(cfg: RunConfig, n=None):
    from mstp.simulation import ScenarioSpec

    return ScenarioSpec(scenario=cfg.scenario, n=cfg.n if n is None else n, d=cfg.d, T=cfg.T, seed=cfg.seed)


def _optimizer(cfg: RunConfig, seed: int):
    from mstp.optimizer import OptimizerConfig

    kw = {"folds": cfg.folds, "seed": seed}
    if cfg.lambdas:
        kw["lambdas"] = tuple(float(v) for v in cfg.lambdas)
    return OptimizerConfig(**kw)


def _int_seed(cfg: RunConfig, name: str) -> int:
    return int(derive_seed_sequence(cfg.seed, name).generate_state(1)[0])


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _read(loader, path, what):
    try:
        return loader(path)
    except OSError as exc:
        raise DataError(f"cannot read {what} {path!r}: {exc.strerror or exc}") from None


def _load_data(cfg: RunConfig, seeds: dict):
    from mstp.simulation import generate

    if cfg.data:
        return _read(load_dataset, cfg.data, "dataset")
    seeds["data"] = [cfg.seed, "data"]
    return generate(_scenario(cfg), seed=derive_seed_sequence(cfg.seed, "data"))


def _input_paths(cfg: RunConfig):
    """(config key, path) for files a command reads, used for input checksums."""
    out = []
    for key in ("data", "policy", "q_model"):
        path = getattr(cfg, key)
        if path:
            out.append((key, path))
    if cfg.estimate_dir:
        for name in ("policy.json", "q_model.json", "estimate.json"):
            out.append((f"estimate_dir/{name}", os.path.join(cfg.estimate_dir, name)))
    return out


def _json_file(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _f(x) -> Optional[str]:
    return None if x is None else format_float(x)


# commands -------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out: str, seeds: dict) -> List[str]:
    from mstp.simulation import generate

    seeds["data"] = [cfg.seed, "data"]
    ds = generate(_scenario(cfg), seed=derive_seed_sequence(cfg.seed, "data"))
    save_dataset(ds, os.path.join(out, "data.csv"))
    return ["data.csv"]


def cmd_estimate(cfg: RunConfig, out: str, seeds: dict) -> List[str]:
    from mstp.nuisance import fit_q
    from mstp.optimizer import estimate_initial, estimate_sparse

    ds = _load_data(cfg, seeds)
    seeds["folds"] = [cfg.seed, "folds"]
    seeds["q"] = [cfg.seed, "q"]
    opt = _optimizer(cfg, _int_seed(cfg, "folds"))
    init = estimate_initial(ds, opt, cfg.tau, lam=cfg.lambda_initial)
    q = fit_q(cfg.q_variant, ds, initial=PolicyParams(init.theta, cfg.tau), folds=cfg.folds,
              seed=_int_seed(cfg, "q"))
    hat = estimate_sparse(ds, q, opt, cfg.tau, lam=cfg.lambda_theta)
    PolicyParams(init.theta, cfg.tau).save(os.path.join(out, "initial_policy.json"))
    PolicyParams(hat.theta, cfg.tau).save(os.path.join(out, "policy.json"))
    q.save(os.path.join(out, "q_model.json"))
    summary = {
        "n": ds.n, "T": ds.T, "d": ds.d,
        "initial": {"lambda": _f(init.lam), "support": list(init.support), "converged": init.converged,
                    "objective": _f(init.objective)},
        "sparse": {"lambda": _f(hat.lam), "support": list(hat.support), "converged": hat.converged,
                   "objective": _f(hat.objective)},
        "q_variant": q.variant, "q_lambdas": [_f(v) for v in q.lambdas],
    }
    _write_json(os.path.join(out, "estimate.json"), summary)
    return ["initial_policy.json", "policy.json", "q_model.json", "estimate.json"]


def _estimate_inputs(cfg: RunConfig):
    """Policy, Q model and lambda_theta from explicit paths or an estimate directory."""
    from mstp.nuisance import QModel

    pol_path = cfg.policy or (os.path.join(cfg.estimate_dir, "policy.json") if cfg.estimate_dir else "")
    q_path = cfg.q_model or (os.path.join(cfg.estimate_dir, "q_model.json") if cfg.estimate_dir else "")
    if not pol_path:
        raise ConfigError("need a policy (set policy or estimate_dir)")
    p = _read(PolicyParams.load, pol_path, "policy")
    q = _read(QModel.load, q_path, "Q model") if q_path else None
    lam = cfg.lambda_theta
    if lam is None and cfg.estimate_dir:
        summary = _read(_json_file, os.path.join(cfg.estimate_dir, "estimate.json"), "estimate summary")
        lam = float(summary["sparse"]["lambda"])
    return p, q, lam


def cmd_infer(cfg: RunConfig, out: str, seeds: dict) -> List[str]:
    from mstp.inference import run_inference

    ds = _load_data(cfg, seeds)
    p, q, lam = _estimate_inputs(cfg)
    if lam is None and cfg.B > 0:
        raise ConfigError("bootstrap needs lambda_theta (set it or give estimate_dir)")
    if p.d != ds.d:
        raise DataError(f"policy has {p.d} slopes but the data have {ds.d} features")
    seeds["inference"] = [cfg.seed, "inference"]
    res = run_inference(ds, p.theta, q, lam if lam is not None else 0.0, cfg.lambda_w, B=cfg.B, alpha=cfg.alpha,
                        seed=_int_seed(cfg, "inference"), config=_optimizer(cfg, _int_seed(cfg, "folds")),
                        tau=cfg.tau, folds=cfg.folds, jobs=cfg.jobs)
    res.write_table(os.path.join(out, "inference.csv"))
    return ["inference.csv"]


def cmd_oracle(cfg: RunConfig, out: str, seeds: dict) -> List[str]:
    from mstp.simulation import grid_oracle

    seeds["oracle"] = [cfg.seed, "oracle", "repeat"]
    theta = grid_oracle(_scenario(cfg), cfg.oracle_step, cfg.n_test, cfg.repeats, cfg.tau, seed=cfg.seed)
    PolicyParams(theta, cfg.tau).save(os.path.join(out, "oracle.json"))
    return ["oracle.json"]


def cmd_evaluate(cfg: RunConfig, out: str, seeds: dict) -> List[str]:
    from mstp.loss import LossContext
    from mstp.simulation import mc_value

    p, q, _ = _estimate_inputs(cfg)
    seeds["value"] = [cfg.seed, "value"]
    value, se = mc_value(p, _scenario(cfg), cfg.n_value, seed=derive_seed_sequence(cfg.seed, "value"))
    rec = {"rollout_value": _f(value), "rollout_se": _f(se), "n_value": cfg.n_value}
    if cfg.data:
        ds = _read(load_dataset, cfg.data, "dataset")
        rec["estimated_value"] = _f(LossContext(ds, q, p.tau, weighted=True).value(p.theta))
        rec["estimated_value_unweighted"] = _f(LossContext(ds, q, p.tau, weighted=False).value(p.theta))
    _write_json(os.path.join(out, "value.json"), rec)
    return ["value.json"]


def cmd_experiment(cfg: RunConfig, out: str, seeds: dict) -> List[str]:
    from mstp.experiment import MethodConfig, run_experiment

    method = MethodConfig(
        q_variant=cfg.q_variant, tau=cfg.tau, optimizer=_optimizer(cfg, 0), lambda_initial=cfg.lambda_initial,
        lambda_theta=cfg.lambda_theta, lambda_w=cfg.lambda_w, B=cfg.B, alpha=cfg.alpha, n_value=cfg.n_value,
        folds=cfg.folds, inference=cfg.inference,
    )
    seeds["replication"] = [cfg.seed, "<component>", "<replicate>"]
    rep = run_experiment(_scenario(cfg), method, cfg.replications, seed=cfg.seed, jobs=cfg.jobs,
                         checkpoint_dir=os.path.join(out, "checkpoints"))
    rep.write_csv(os.path.join(out, "report.csv"))
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(rep.to_text())
    failed = [r for r in rep.records if r.get("status") != "ok"]
    if failed:
        log.warning("%d of %d replications failed", len(failed), cfg.replications)
    return ["report.csv", "report.txt"]


HELP = {
    "simulate": "generate a trial dataset (CSV)",
    "estimate": "initial estimate, Q model, sparse estimate",
    "infer": "one-step estimates with asymptotic and bootstrap intervals",
    "oracle": "grid-search optimum of a simulated scenario",
    "evaluate": "rollout value (and, given data, the estimated value) of a policy",
    "experiment": "replicated simulation study with resumable checkpoints",
}

HANDLERS = {
    "simulate": cmd_simulate, "estimate": cmd_estimate, "infer": cmd_infer,
    "oracle": cmd_oracle, "evaluate": cmd_evaluate, "experiment": cmd_experiment,
}


def versions() -> dict:
    import numba
    import scipy

    from mstp import __version__

    return {"mstp": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__,
            "python": platform.python_version()}


def run(cfg: RunConfig) -> dict:
    """Execute one command and write its manifest; returns the manifest."""
    cfg.validate()
    out = cfg.out
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out!r}: {exc.strerror or exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out!r} is not writable")
    inputs = {key: _sha256(path) for key, path in _input_paths(cfg) if os.path.exists(path)}
    seeds = {"root": cfg.seed}
    try:
        outputs = HANDLERS[cfg.command](cfg, out, seeds)
    except PermissionError as exc:
        raise ConfigError(f"cannot write outputs: {exc}") from None
    manifest = {
        "command": cfg.command,
        "config": cfg.recorded(),
        "seeds": seeds,
        "versions": versions(),
        "inputs": inputs,
        "outputs": {name: _sha256(os.path.join(out, name)) for name in outputs},
    }
    _write_json(os.path.join(out, MANIFEST), manifest)
    return manifest


# argument parsing -----------------------------------------------------------

def _flag_type(f):
    if f.type in ("int", int):
        return int
    if f.type in ("float", float, "Optional[float]"):
        return float
    return str


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mstp", description="Sparse multi-stage treatment policies.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("--config", help="JSON file with RunConfig fields")
        sp.add_argument("--manifest", help="replay the config recorded in a manifest")
        for f in fields(RunConfig):
            if f.name == "command":
                continue
            flag = "--" + f.name.replace("_", "-")
            if f.name == "lambdas":
                sp.add_argument(flag, type=float, nargs="+", default=None)
            elif f.name == "inference":
                sp.add_argument(flag, type=_bool, default=None)
            else:
                sp.add_argument(flag, type=_flag_type(f), default=None, dest=f.name)
    return ap


def _load_json(path, what) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path!r}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path!r} is not valid JSON: {exc}") from None


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then manifest or config file, then explicit flags."""
    rec = {}
    if args.manifest:
        man = _load_json(args.manifest, "manifest")
        if man.get("command") != args.command:
            raise ConfigError(f"manifest is for {man.get('command')!r}, not {args.command!r}")
        rec.update(man.get("config", {}))
    if args.config:
        conf = _load_json(args.config, "config file")
        if not isinstance(conf, dict):
            raise ConfigError("config file must hold a JSON object")
        rec.update(conf)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if f.name != "command" and v is not None:
            rec[f.name] = v
    rec["command"] = args.command
    try:
        cfg = RunConfig.from_dict(rec)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _provenance(exc) -> str:
    """Innermost package module on the traceback of ``exc``."""
    where = "mstp.cli"
    tb = exc.__traceback__
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("mstp"):
            where = mod
        tb = tb.tb_next
    return where


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        run(cfg)
    except MSTPError as exc:
        print(f"mstp {args.command}: {type(exc).__name__} in {_provenance(exc)}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        # invalid settings rejected by library constructors
        print(f"mstp {args.command}: ConfigError: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
