"""Replication harness: value, MAD and coverage summaries over simulated trials.

One replication generates a trial, estimates the initial policy, fits the
working model, estimates the sparse policy, runs one-step inference and
evaluates every estimated policy by Monte Carlo rollouts. Replications are
independent, seeded by ``(seed, rep)`` and can be checkpointed to disk so an
interrupted run resumes with identical totals.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from mstp.data import format_float
from mstp.errors import MSTPError
from mstp.inference import bootstrap_inference, full_vector, one_step_all, tune_lambda_w
from mstp.loss import LossContext
from mstp.nuisance import fit_q
from mstp.optimizer import OptimizerConfig, estimate_initial, estimate_sparse
from mstp.policy import DEFAULT_TAU, PolicyParams
from mstp.seeding import derive_seed_sequence
from mstp.simulation import ScenarioSpec, generate, mc_value, pad_theta

log = logging.getLogger(__name__)

# grid-search optima (theta_0, theta_1, theta_2) of the built-in scenarios, keyed by (scenario, T)
REFERENCE_OPTIMA = {
    (1, 1): (-0.39, 0.68, -0.62),
    (1, 3): (-0.45, 0.53, -0.72),
    (2, 1): (-0.57, 0.58, 0.58),
    (2, 3): (-0.57, 0.58, 0.58),
}

MAD_SCALE = 1.4826  # sd / MAD for a normal distribution


def reference_optimum(spec: ScenarioSpec) -> np.ndarray:
    """Reference optimum padded with zeros to length ``d + 1`` (not renormalized)."""
    return pad_theta(REFERENCE_OPTIMA[(spec.scenario, spec.T)], spec.d)


@dataclass(frozen=True)
class MethodConfig:
    q_variant: str = "q1"
    tau: float = DEFAULT_TAU
    optimizer: OptimizerConfig = OptimizerConfig()
    lambda_initial: Optional[float] = None  # None: cross-validate
    lambda_theta: Optional[float] = None
    lambda_w: Optional[float] = None
    B: int = 100
    alpha: float = 0.05
    n_value: int = 10_000
    folds: int = 5
    inference: bool = True

    def to_dict(self) -> dict:
        out = asdict(self)
        out["optimizer"] = {k: list(v) if isinstance(v, tuple) else v for k, v in out["optimizer"].items()}
        return out

    @classmethod
    def from_dict(cls, rec: dict) -> "MethodConfig":
        rec = dict(rec)
        opt = dict(rec.pop("optimizer", {}))
        for k in ("offsets", "lambdas"):
            if k in opt:
                opt[k] = tuple(float(v) for v in opt[k])
        return cls(optimizer=OptimizerConfig(**opt), **rec)


def _int_seed(seed: int, *names) -> int:
    return int(derive_seed_sequence(seed, *names).generate_state(1)[0])


def _vec(v) -> List[float]:
    return [float(x) for x in np.asarray(v, dtype=float).ravel()]


def run_replication(spec: ScenarioSpec, method: MethodConfig, rep: int, seed: int = 0) -> dict:
    """Full pipeline on one simulated trial; returns a JSON-ready record."""
    ds = generate(spec, seed=derive_seed_sequence(seed, "data", rep))
    opt = replace(method.optimizer, seed=_int_seed(seed, "folds", rep), folds=method.folds)
    tau = method.tau
    init = estimate_initial(ds, opt, tau, lam=method.lambda_initial)
    q = fit_q(method.q_variant, ds, initial=PolicyParams(init.theta, tau), folds=method.folds,
              seed=_int_seed(seed, "q", rep))
    hat = estimate_sparse(ds, q, opt, tau, lam=method.lambda_theta)
    rec = {
        "rep": rep, "status": "ok", "train_value": float(ds.R.sum(axis=1).mean()),
        "theta_check": _vec(init.theta), "lambda_check": init.lam,
        "theta_hat": _vec(hat.theta), "lambda_theta": hat.lam,
    }
    value_seed = derive_seed_sequence(seed, "value", rep)
    rec["value_check"] = mc_value(PolicyParams(init.theta, tau), spec, method.n_value, seed=value_seed)[0]
    rec["value_hat"] = mc_value(PolicyParams(hat.theta, tau), spec, method.n_value, seed=value_seed)[0]
    if method.inference:
        lam_w = method.lambda_w
        if lam_w is None:
            lam_w = tune_lambda_w(ds, hat.theta, q, folds=method.folds, seed=_int_seed(seed, "lambda_w", rep),
                                  tau=tau).lambda_w
        steps = one_step_all(LossContext(ds, q, tau), hat.theta, lam_w, method.alpha)
        tilde = np.array([r.theta_tilde for r in steps])
        rec.update({
            "lambda_w": float(lam_w), "theta_tilde": _vec(tilde),
            "asym_ci": [list(r.ci.get("asymptotic", (np.nan, np.nan))) for r in steps],
            "asym_se": [float(np.sqrt(r.sigma_s_hat) / (np.sqrt(ds.n) * abs(r.info))) for r in steps],
            "degenerate": [bool(r.degenerate) for r in steps],
        })
        tilde_full = full_vector(hat.theta, tilde)
        rec["value_tilde"] = mc_value(PolicyParams(tilde_full, tau), spec, method.n_value, seed=value_seed)[0]
        if method.B > 0:
            boot = bootstrap_inference(ds, q, hat.lam, lam_w, method.B, _int_seed(seed, "bootstrap", rep), opt, tau)
            rec.update({
                "boot_ci": boot.percentile_ci(method.alpha).tolist(),
                "boot_ci_hat": boot.percentile_ci(method.alpha, sparse=True).tolist(),
                "boot_mad": _vec(boot.mad()),
                "boot_dropped": len(boot.dropped),
            })
    return rec


def _safe_replication(spec, method, rep, seed) -> dict:
    try:
        return run_replication(spec, method, rep, seed)
    except (MSTPError, ValueError, ArithmeticError) as exc:
        log.warning("replication %d failed: %s", rep, exc)
        return {"rep": rep, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def _covers(ci, truth) -> np.ndarray:
    ci = np.asarray(ci, dtype=float)
    return (ci[:, 0] <= truth) & (truth <= ci[:, 1])


GROUPS = ("theta1", "theta2", "theta3:d")


def _grouped(v) -> Dict[str, float]:
    v = np.asarray(v, dtype=float)
    return {"theta1": float(v[0]), "theta2": float(v[1]), "theta3:d": float(np.mean(v[2:])) if v.size > 2 else float("nan")}


@dataclass(frozen=True)
class ExperimentReport:
    spec: ScenarioSpec
    method: MethodConfig
    replications: int
    completed: int
    theta_star: tuple
    values: Dict[str, tuple] = field(default_factory=dict)  # estimator -> (mean, sd)
    mad_estimated: Dict[str, float] = field(default_factory=dict)
    mad_empirical: Dict[str, float] = field(default_factory=dict)
    cp: Dict[str, Dict[str, float]] = field(default_factory=dict)  # interval kind -> group -> coverage
    records: tuple = field(default=(), repr=False, compare=False)

    @classmethod
    def from_records(cls, spec: ScenarioSpec, method: MethodConfig, records: Sequence[dict], theta_star=None):
        truth = reference_optimum(spec) if theta_star is None else np.asarray(theta_star, dtype=float)
        ok = [r for r in records if r.get("status") == "ok"]
        values = {}
        for key, name in (("train_value", "train"), ("value_check", "initial"), ("value_hat", "sparse"),
                          ("value_tilde", "one-step")):
            v = np.array([r[key] for r in ok if key in r])
            if v.size:
                values[name] = (float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0)
        mad_est, mad_emp, cp = {}, {}, {}
        with_tilde = [r for r in ok if "theta_tilde" in r]
        if with_tilde:
            tilde = np.array([r["theta_tilde"] for r in with_tilde])
            mad_emp = _grouped(np.median(np.abs(tilde - truth[1:]), axis=0))
            se = np.array([r["asym_se"] for r in with_tilde])
            mad_est["asymptotic"] = _grouped(np.mean(se / MAD_SCALE, axis=0))
            cp["one-step asymptotic"] = _grouped(np.mean([_covers(r["asym_ci"], truth[1:]) for r in with_tilde], axis=0))
            boot = [r for r in with_tilde if "boot_ci" in r]
            if boot:
                mad_est["bootstrap"] = _grouped(np.mean([r["boot_mad"] for r in boot], axis=0))
                cp["one-step bootstrap"] = _grouped(np.mean([_covers(r["boot_ci"], truth[1:]) for r in boot], axis=0))
                cp["sparse bootstrap"] = _grouped(np.mean([_covers(r["boot_ci_hat"], truth[1:]) for r in boot], axis=0))
        return cls(spec, method, len(records), len(ok), tuple(float(x) for x in truth), values, mad_est, mad_emp, cp,
                   tuple(records))

    def rows(self) -> List[dict]:
        """Long-format rows: block, estimator, group, value."""
        out = []
        for name, (m, s) in self.values.items():
            out.append({"block": "value", "estimator": name, "group": "mean", "value": format_float(m)})
            out.append({"block": "value", "estimator": name, "group": "sd", "value": format_float(s)})
        for kind, groups in self.mad_estimated.items():
            for g in GROUPS:
                out.append({"block": "mad-estimated", "estimator": kind, "group": g, "value": format_float(groups[g])})
        for g in GROUPS:
            if g in self.mad_empirical:
                out.append({"block": "mad-empirical", "estimator": "one-step", "group": g,
                            "value": format_float(self.mad_empirical[g])})
        for kind, groups in self.cp.items():
            for g in GROUPS:
                out.append({"block": "cp", "estimator": kind, "group": g, "value": format_float(groups[g])})
        out.append({"block": "count", "estimator": "replications", "group": "completed", "value": str(self.completed)})
        out.append({"block": "count", "estimator": "replications", "group": "requested", "value": str(self.replications)})
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=("block", "estimator", "group", "value"), lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows())

    def to_text(self) -> str:
        s = self.spec
        lines = [
            f"Scenario {s.scenario}, T={s.T}, n={s.n}, d={s.d}, Q={self.method.q_variant}, "
            f"{self.completed}/{self.replications} replications",
            "",
            "Value",
        ]
        for name, (m, sd) in self.values.items():
            lines.append(f"  {name:<24}{m:9.4f} ({sd:.4f})")
        header = f"  {'':<24}{'theta1':>9}{'theta2':>9}{'theta3:d':>10}"
        if self.mad_estimated or self.mad_empirical:
            lines += ["", "MAD", header]
            for kind, g in self.mad_estimated.items():
                lines.append(f"  {'estimated ' + kind:<24}" + "".join(f"{g[k]:9.4f}" for k in GROUPS[:2]) + f"{g[GROUPS[2]]:10.4f}")
            if self.mad_empirical:
                g = self.mad_empirical
                lines.append(f"  {'empirical':<24}" + "".join(f"{g[k]:9.4f}" for k in GROUPS[:2]) + f"{g[GROUPS[2]]:10.4f}")
        if self.cp:
            lines += ["", "CP", header]
            for kind, g in self.cp.items():
                lines.append(f"  {kind:<24}" + "".join(f"{g[k]:9.2f}" for k in GROUPS[:2]) + f"{g[GROUPS[2]]:10.2f}")
        return "\n".join(lines) + "\n"


def _checkpoint_path(directory, rep) -> str:
    return os.path.join(directory, f"rep_{rep:04d}.json")


def run_experiment(spec: ScenarioSpec, method: MethodConfig, replications: int = 20, seed: int = 0, jobs: int = 1,
                   checkpoint_dir: Optional[str] = None, theta_star=None) -> ExperimentReport:
    """Run (or resume) ``replications`` independent replications and summarize them.

    With ``checkpoint_dir`` every finished replication is written as JSON
    and existing files are reused, so a killed run can be resumed.
    """
    records: Dict[int, dict] = {}
    todo = list(range(replications))
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
        for rep in range(replications):
            path = _checkpoint_path(checkpoint_dir, rep)
            if os.path.exists(path):
                with open(path, encoding="utf-8") as fh:
                    records[rep] = json.load(fh)
        todo = [r for r in todo if r not in records]

    def finish(rec):
        records[rec["rep"]] = rec
        if checkpoint_dir is not None:
            tmp = _checkpoint_path(checkpoint_dir, rec["rep"]) + ".tmp"
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(rec, fh, sort_keys=True)
            os.replace(tmp, _checkpoint_path(checkpoint_dir, rec["rep"]))

    if jobs == 1:
        for rep in todo:
            finish(_safe_replication(spec, method, rep, seed))
    else:
        from joblib import Parallel, delayed

        for rec in Parallel(n_jobs=jobs, return_as="generator")(
            delayed(_safe_replication)(spec, method, rep, seed) for rep in todo
        ):
            finish(rec)
    ordered = [records[r] for r in range(replications)]
    return ExperimentReport.from_records(spec, method, ordered, theta_star)
