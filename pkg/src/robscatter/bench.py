"""Experiment runner: scenario construction, repeated trials, error metrics and
CSV/JSON reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy import stats

from .baselines import BaselineError, sample_covariance, scaled_kendall_tau, tyler_m
from .distributions import (
    ContaminationScenario,
    Dirac,
    Gaussian,
    MultivariateT,
    Rng,
    ar_matrix,
    sample_contaminated,
)
from .gan import TrainConfig, train, train_joint, train_ustat
from .linalg import LinalgError, operator_norm
from .scoring import ScoringRule

CSV_COLUMNS = ("experiment_id", "trial", "estimator", "p", "n", "eps", "scenario", "err_op", "err_loc", "seconds")
SWEEP_AXES = ("n", "p", "eps", "s", "v")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    """One cell of the simulation grid.

    Clean part: ``family`` in {gaussian, t} (``dof`` for t) with scatter
    ``identity`` or ``ar`` and location ``theta * 1``. Contaminant: ``gaussian``
    ``N(loc * 1, scale * I)``, ``dirac`` at ``loc * 1``, or ``t`` with
    ``contaminant_dof``.

    Estimators are names from :data:`ESTIMATORS`, optionally with a score
    suffix such as ``gan-g1:beta(1,0.5)``.
    """

    family: str = "gaussian"
    dof: float = math.inf
    sigma: str = "identity"
    theta: float = 0.0
    eps: float = 0.0
    contaminant: str = "dirac"
    contaminant_loc: float = 5.0
    contaminant_scale: float = 5.0
    contaminant_dof: float = math.inf
    n: int = 2000
    p: int = 5
    estimators: tuple = ("gan-g1", "kendall", "tyler")
    trials: int = 5
    master_seed: int = 0
    train_preset: str = "desk"
    epochs: int = 0  # 0 keeps the preset's value

    def __post_init__(self):
        self.estimators = tuple(self.estimators)
        if self.family not in ("gaussian", "t"):
            raise ConfigError(f"family must be gaussian or t, got {self.family!r}")
        if self.family == "t" and not self.dof > 0:
            raise ConfigError("t family needs dof > 0")
        if self.sigma not in ("identity", "ar"):
            raise ConfigError("sigma must be identity or ar")
        if self.contaminant not in ("gaussian", "dirac", "t"):
            raise ConfigError("contaminant must be gaussian, dirac or t")
        if not 0 <= self.eps < 1:
            raise ConfigError("eps must lie in [0, 1)")
        if self.n < 2 or self.p < 1 or self.trials < 1:
            raise ConfigError("need n >= 2, p >= 1, trials >= 1")
        if self.train_preset not in ("desk", "published"):
            raise ConfigError("train_preset must be desk or published")
        for name in self.estimators:
            _parse_estimator(name)

    def true_scatter(self) -> np.ndarray:
        return ar_matrix(self.p) if self.sigma == "ar" else np.eye(self.p)

    def true_location(self) -> np.ndarray:
        return np.full(self.p, float(self.theta))

    def scenario(self) -> ContaminationScenario:
        p = self.p
        if self.family == "gaussian":
            clean = Gaussian(self.true_location(), self.true_scatter())
        else:
            clean = MultivariateT(self.dof, self.true_location(), self.true_scatter())
        loc = np.full(p, float(self.contaminant_loc))
        if self.contaminant == "dirac":
            cont = Dirac(loc)
        elif self.contaminant == "gaussian":
            cont = Gaussian(loc, self.contaminant_scale * np.eye(p))
        else:
            cont = MultivariateT(self.contaminant_dof, loc, self.contaminant_scale * np.eye(p))
        return ContaminationScenario(clean, cont if self.eps > 0 else None, self.eps)

    def scenario_label(self) -> str:
        clean = self.family if self.family == "gaussian" else f"t{self.dof:g}"
        if self.eps == 0:
            return f"{clean}/{self.sigma}/theta={self.theta:g}"
        if self.contaminant == "dirac":
            q = f"dirac({self.contaminant_loc:g})"
        elif self.contaminant == "gaussian":
            q = f"N({self.contaminant_loc:g},{self.contaminant_scale:g}I)"
        else:
            q = f"t{self.contaminant_dof:g}({self.contaminant_loc:g},{self.contaminant_scale:g}I)"
        return f"{clean}/{self.sigma}/theta={self.theta:g}+{q}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimators"] = list(self.estimators)
        return d

    def experiment_id(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha1(blob.encode()).hexdigest()[:12]


# --- estimators ------------------------------------------------------------------


def _family_quantile_sq(spec: ExperimentSpec) -> float:
    """Median of ``X_1^2`` for one standardized coordinate of the clean family."""
    if spec.family == "t" and math.isfinite(spec.dof):
        return float(stats.t.ppf(0.75, spec.dof) ** 2)
    return float(stats.norm.ppf(0.75) ** 2)


def _family_mahalanobis_median(spec: ExperimentSpec) -> float:
    p = spec.p
    if spec.family == "t" and math.isfinite(spec.dof):
        return float(p * stats.f.median(p, spec.dof))
    return float(stats.chi2.median(p))


def _est_kendall(x, spec, rng, score):
    # the built-in scaling targets the Gaussian covariance; swap in the family's quantile
    k = scaled_kendall_tau(x, rng.substream("pairs"))
    return k * (stats.norm.ppf(0.75) ** 2 / _family_quantile_sq(spec)), None


def _est_tyler(x, spec, rng, score):
    shape = tyler_m(x)
    # scale so the median Mahalanobis distance matches the clean family
    d = np.einsum("ij,ij->i", x, np.linalg.solve(shape, x.T).T)
    return shape * (np.median(d) / _family_mahalanobis_median(spec)), None


def _est_sample_cov(x, spec, rng, score):
    s = sample_covariance(x)
    if spec.family == "t":
        if not spec.dof > 2:
            raise BaselineError("covariance does not exist for dof <= 2")
        s = s * (spec.dof - 2) / spec.dof
    return s, None


def _train_config(spec: ExperimentSpec, generator: str, score: ScoringRule) -> TrainConfig:
    make = TrainConfig.desk if spec.train_preset == "desk" else TrainConfig.published
    kw = dict(score=score)
    if spec.epochs:
        kw["epochs"] = spec.epochs
        kw["avg_window"] = min(make(generator).avg_window, spec.epochs)
    if spec.family == "t":
        kw.update(base="t", dof=spec.dof, target_dof=spec.dof)
        if generator in ("G2", "G4"):
            kw["calibrate"] = "t"
    return make(generator, **kw)


def _gan(generator):
    def run(x, spec, rng, score):
        cfg = _train_config(spec, generator, score)
        if generator in ("G3", "G4"):
            r = train_joint(x, cfg, rng)
            return r.scatter_hat, r.location_hat
        return train(x, cfg, rng).scatter_hat, None

    return run


def _est_gan_ustat(x, spec, rng, score):
    return train_ustat(x, _train_config(spec, "G1", score), rng).scatter_hat, None


ESTIMATORS = {
    "gan-g1": _gan("G1"),
    "gan-g2": _gan("G2"),
    "gan-g3": _gan("G3"),
    "gan-g4": _gan("G4"),
    "gan-ustat": _est_gan_ustat,
    "kendall": _est_kendall,
    "tyler": _est_tyler,
    "sample-cov": _est_sample_cov,
}


def _parse_estimator(name: str):
    base, _, score = name.partition(":")
    if base not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {base!r}; choose from {sorted(ESTIMATORS)}")
    try:
        rule = ScoringRule.parse(score) if score else ScoringRule()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ESTIMATORS[base], rule


# --- running -----------------------------------------------------------------------


@dataclass
class TrialRow:
    experiment_id: str
    trial: int
    estimator: str
    p: int
    n: int
    eps: float
    scenario: str
    err_op: float
    err_loc: float
    seconds: float
    error: str = ""
    axis_value: str = ""


@dataclass
class TrialReport:
    spec: dict
    rows: list = field(default_factory=list)
    axis: str | None = None
    axis_values: list = field(default_factory=list)

    def aggregates(self) -> list[dict]:
        return aggregate_rows(self.rows)

    def to_json(self) -> str:
        return json.dumps(
            {
                "spec": self.spec,
                "axis": self.axis,
                "axis_values": self.axis_values,
                "rows": [asdict(r) for r in self.rows],
                "aggregates": self.aggregates(),
            },
            indent=1,
            default=_json_default,
        )

    @classmethod
    def from_json(cls, text: str) -> "TrialReport":
        d = json.loads(text)
        rows = [TrialRow(**r) for r in d["rows"]]
        return cls(d["spec"], rows, d.get("axis"), d.get("axis_values", []))


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def aggregate_rows(rows) -> list[dict]:
    """Mean and (population) standard deviation per (experiment, estimator)."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.experiment_id, r.estimator), []).append(r)
    out = []
    for (eid, est), rs in groups.items():
        e = np.array([r.err_op for r in rs], dtype=float)
        loc = np.array([r.err_loc for r in rs], dtype=float)
        out.append(
            {
                "experiment_id": eid,
                "estimator": est,
                "p": rs[0].p,
                "n": rs[0].n,
                "eps": rs[0].eps,
                "scenario": rs[0].scenario,
                "trials": len(rs),
                "err_op_mean": float(np.mean(e)),
                "err_op_std": float(np.std(e)),
                "err_loc_mean": float(np.mean(loc)),
                "err_loc_std": float(np.std(loc)),
            }
        )
    return out


def _run_trial(spec: ExperimentSpec, trial: int) -> list[TrialRow]:
    rng = Rng(spec.master_seed).substream("trial").substream(trial)
    x, _ = sample_contaminated(rng.substream("data"), spec.scenario(), spec.n)
    sigma, theta = spec.true_scatter(), spec.true_location()
    eid, label = spec.experiment_id(), spec.scenario_label()
    rows = []
    for name in spec.estimators:
        fn, rule = _parse_estimator(name)
        t0 = time.perf_counter()
        err = ""
        try:
            s_hat, loc_hat = fn(x, spec, rng.substream(f"est-{name}"), rule)
            e_op = operator_norm(s_hat - sigma)
            e_loc = float(np.linalg.norm(loc_hat - theta)) if loc_hat is not None else math.nan
        except (ValueError, ArithmeticError, RuntimeError, LinalgError, np.linalg.LinAlgError) as exc:
            e_op = e_loc = math.nan
            err = f"{type(exc).__name__}: {exc}"
        rows.append(
            TrialRow(eid, trial, name, spec.p, spec.n, spec.eps, label, e_op, e_loc, time.perf_counter() - t0, err)
        )
    return rows


def bench_threads() -> int:
    try:
        return max(1, int(os.environ.get("BENCH_THREADS", "1")))
    except ValueError:
        raise ConfigError("BENCH_THREADS must be an integer") from None


def run_experiment(spec: ExperimentSpec) -> TrialReport:
    """Run every estimator on ``spec.trials`` independent data sets."""
    threads = min(bench_threads(), spec.trials)
    if threads == 1:
        per_trial = [_run_trial(spec, k) for k in range(spec.trials)]
    else:
        with ThreadPoolExecutor(threads) as pool:
            per_trial = list(pool.map(lambda k: _run_trial(spec, k), range(spec.trials)))
    order = {name: i for i, name in enumerate(spec.estimators)}
    rows = sorted((r for rs in per_trial for r in rs), key=lambda r: (r.trial, order[r.estimator]))
    return TrialReport(spec.to_dict(), rows)


def spec_for_axis(spec: ExperimentSpec, axis: str, value) -> ExperimentSpec:
    if axis == "n":
        return replace(spec, n=int(value))
    if axis == "p":
        return replace(spec, p=int(value))
    if axis == "eps":
        return replace(spec, eps=float(value))
    if axis == "s":
        return replace(spec, contaminant_loc=float(value))
    if axis == "v":
        return replace(spec, dof=float(value), contaminant_dof=float(value))
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def scaling_sweep(spec: ExperimentSpec, axis: str, values) -> TrialReport:
    """One experiment per axis value; rows keep the axis order."""
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    specs = [spec_for_axis(spec, axis, v) for v in values]
    rows = []
    for v, s in zip(values, specs):
        for r in run_experiment(s).rows:
            r.axis_value = str(v)
            rows.append(r)
    return TrialReport(spec.to_dict(), rows, axis, [str(v) for v in values])


# --- export --------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(report: TrialReport, include_seconds: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = CSV_COLUMNS if include_seconds else CSV_COLUMNS[:-1]
    # sweeps carry their axis value as a trailing column named after the axis
    w.writerow(cols + ((report.axis,) if report.axis else ()))
    for r in report.rows:
        w.writerow([_fmt(getattr(r, c)) for c in cols] + ([r.axis_value] if report.axis else []))
    return buf.getvalue()


def export(report: TrialReport, path, fmt: str = "csv") -> None:
    if fmt == "csv":
        text = to_csv(report)
    elif fmt == "json":
        text = report.to_json()
    else:
        raise ConfigError(f"unknown export format {fmt!r}")
    with open(path, "w", newline="") as fh:
        fh.write(text)


# --- flat config files ------------------------------------------------------------


def parse_config(text: str) -> ExperimentSpec:
    """``key = value`` lines with ExperimentSpec field names; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(ExperimentSpec)}
    kw = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown field {key!r}")
        if key in kw:
            raise ConfigError(f"line {lineno}: duplicate field {key!r}")
        kw[key] = _coerce(key, types[key], value, lineno)
    return ExperimentSpec(**kw)


def _coerce(key, typ, value, lineno):
    try:
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
        if typ == "tuple":
            return tuple(_split_estimators(value))
        return value
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from None


def _split_estimators(value: str) -> list[str]:
    # commas inside beta(a,b) belong to the score
    out, depth, cur = [], 0, ""
    for ch in value:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            out.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        out.append(cur.strip())
    return out


def load_config(path) -> ExperimentSpec:
    with open(path) as fh:
        return parse_config(fh.read())
