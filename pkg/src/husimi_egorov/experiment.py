"""Experiment configuration, presets, CSV output and convergence tables.

A configuration is an INI file with an ``[experiment]`` section and an optional
``[reference]`` section. Quantities that depend on epsilon (``n1``, ``n2``,
``h1``, ``h2`` and the reference ``L``, ``n``, ``h``) take either one value or
one value per entry of ``epsilon``::

    [experiment]
    preset = D-desk          ; optional, keys below override it
    potential = torsional
    dim = 2
    centers = 1 0 0 0        ; several packets separated by ';'
    epsilon = 0.1, 0.05, 0.01
    method = husimi-corrected
    observables = all
    n1 = 10000, 30000, 100000
    n2 = 1000, 3000, 10000
    h1 = 0.01, 0.01, 0.001
    h2 = 0.001
    t_final = 5
    record_every = 0.1
    seed = 0
    repeats = 1
    sampling = auto
    output = results/D-desk

    [reference]
    kind = grid              ; grid | harmonic-exact | none
    L = 3, 3, 2
    n = 512
    h = 0.001
"""

import configparser
import csv
import glob
import json
import os
import re
import time
from dataclasses import dataclass, field

import numpy as np

from .estimator import METHODS, ExpectationSeries, HusimiEgorovEstimator, resolve_observables
from .exceptions import ConfigError, ContractViolation
from .phase_space import builtin_observables
from .potentials import BUILTIN_POTENTIALS, make_potential
from .reference import SplitStepReference
from .states import GaussianSuperposition

REFERENCE_KINDS = ("grid", "harmonic-exact", "none")
PER_EPSILON = ("n1", "n2", "h1", "h2")
PER_EPSILON_REF = ("L", "n", "h")


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    potential: str = "torsional"
    dim: int = 2
    centers: list = field(default_factory=lambda: [[1.0, 0.0, 0.0, 0.0]])
    epsilon: list = field(default_factory=lambda: [0.1])
    method: list = field(default_factory=lambda: ["husimi-corrected"])
    observables: list = field(default_factory=lambda: ["all"])
    n1: list = field(default_factory=lambda: [10_000])
    n2: list = field(default_factory=lambda: [1_000])
    h1: list = field(default_factory=lambda: [1e-2])
    h2: list = field(default_factory=lambda: [1e-3])
    t_final: float = 1.0
    record_every: float = 0.1
    seed: int = 0
    repeats: int = 1
    sampling: str = "auto"
    output: str = "results"
    reference_kind: str = "none"
    reference_L: list = field(default_factory=lambda: [3.0])
    reference_n: list = field(default_factory=lambda: [512])
    reference_h: list = field(default_factory=lambda: [1e-3])

    def per_epsilon(self, key, k):
        values = getattr(self, key)
        return values[0] if len(values) == 1 else values[k]

    def validate(self):
        if self.potential not in BUILTIN_POTENTIALS:
            raise ConfigError(f"unknown potential {self.potential!r}", field="potential")
        if not self.epsilon or any(e <= 0 for e in self.epsilon):
            raise ConfigError("epsilon values must be positive", field="epsilon")
        for m in self.method:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}", field="method")
        if not self.method:
            raise ConfigError("no method given", field="method")
        if not self.observables:
            raise ConfigError("observable list is empty", field="observables")
        for key in PER_EPSILON:
            n = len(getattr(self, key))
            if n not in (1, len(self.epsilon)):
                raise ConfigError(
                    f"{key} needs one value or one per epsilon ({len(self.epsilon)})", field=key
                )
        for key in PER_EPSILON_REF:
            n = len(getattr(self, "reference_" + key))
            if n not in (1, len(self.epsilon)):
                raise ConfigError(f"{key} needs one value or one per epsilon", field=key)
        if not 1 <= len(self.centers) <= 2 or any(len(c) != 2 * self.dim for c in self.centers):
            raise ConfigError(f"need one or two centers of length {2 * self.dim}", field="centers")
        if self.reference_kind not in REFERENCE_KINDS:
            raise ConfigError(f"reference kind must be one of {REFERENCE_KINDS}", field="kind")
        if self.t_final < 0:
            raise ConfigError("t_final must be nonnegative", field="t_final")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1", field="repeats")
        if self.sampling not in ("auto", "qmc", "mcmc"):
            raise ConfigError("sampling must be auto, qmc or mcmc", field="sampling")
        try:
            resolve_observables(self.observable_names(), make_potential(self.potential, dim=self.dim))
        except ContractViolation as exc:
            raise ConfigError(str(exc), field="observables") from None
        return self

    def observable_names(self):
        if self.observables == ["all"]:
            pot = make_potential(self.potential, dim=self.dim)
            return [a.name for a in builtin_observables(pot)]
        return list(self.observables)

    def initial_state(self, epsilon):
        if len(self.centers) == 1:
            return GaussianSuperposition.single(self.centers[0], epsilon)
        return GaussianSuperposition.pair(self.centers[0], self.centers[1], epsilon)


def _table2(eps, n1, n2, h1, h2):
    return {"epsilon": eps, "n1": n1, "n2": n2, "h1": h1, "h2": h2}


_EPS5 = [1e-1, 5e-2, 1e-2, 5e-3, 1e-3]
_H1 = [1e-2, 1e-2, 1e-3, 1e-3, 1e-3]
_H2 = [1e-3, 1e-3, 1e-3, 1e-3, 2e-4]
# reference grids use the next power of two where the tabulated size is not one
_REF_FULL = {"L": [3.0, 3.0, 2.0, 2.0, 2.0], "n": [2048] * 5, "h": [20 / 5e3, 20 / 5e3, 20 / 7.5e3, 20 / 1e4, 20 / 1e4]}
_REF_DESK = {"L": [3.0, 3.0, 2.0], "n": [512], "h": [1e-3]}

PRESETS = {
    "D": dict(
        potential="torsional", dim=2, centers=[[1.0, 0.0, 0.0, 0.0]], t_final=20.0,
        **_table2(_EPS5, [10_000, 30_000, 100_000, 300_000, 1_000_000],
                  [1_000, 3_000, 10_000, 20_000, 50_000], _H1, _H2),
        reference_kind="grid", reference_L=_REF_FULL["L"], reference_n=_REF_FULL["n"],
        reference_h=_REF_FULL["h"],
    ),
    "D-desk": dict(
        potential="torsional", dim=2, centers=[[1.0, 0.0, 0.0, 0.0]], t_final=5.0,
        **_table2(_EPS5[:3], [10_000, 30_000, 100_000], [1_000, 3_000, 10_000], _H1[:3], _H2[:1]),
        reference_kind="grid", reference_L=_REF_DESK["L"], reference_n=_REF_DESK["n"],
        reference_h=_REF_DESK["h"],
    ),
    "E": dict(
        potential="torsional", dim=2, centers=[[0.5, -0.6, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]],
        t_final=20.0, repeats=10,
        **_table2(_EPS5, [100_000, 200_000, 100_000, 300_000, 1_000_000],
                  [10_000, 20_000, 10_000, 20_000, 50_000], _H1, _H2),
        reference_kind="grid", reference_L=_REF_FULL["L"], reference_n=_REF_FULL["n"],
        reference_h=_REF_FULL["h"],
    ),
    "E-desk": dict(
        potential="torsional", dim=2, centers=[[0.5, -0.6, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]],
        t_final=5.0, repeats=10,
        **_table2(_EPS5[:3], [100_000, 200_000, 100_000], [10_000, 20_000, 10_000], _H1[:3], _H2[:1]),
        reference_kind="grid", reference_L=_REF_DESK["L"], reference_n=_REF_DESK["n"],
        reference_h=_REF_DESK["h"],
    ),
    "henon-heiles": dict(
        potential="henon-heiles", dim=6, centers=[[2.0] * 6 + [0.0] * 6], t_final=10.0,
        method=list(METHODS), observables=["potential", "kinetic", "total"],
        **_table2([1e-2], [2**14], [2**10], [1e-3], [1e-3]),
    ),
    "henon-heiles-desk": dict(
        potential="henon-heiles", dim=6, centers=[[2.0] * 6 + [0.0] * 6], t_final=2.0,
        method=list(METHODS), observables=["potential", "kinetic", "total"],
        **_table2([1e-2], [2**14], [2**10], [1e-3], [1e-3]),
    ),
    "harmonic-sanity": dict(
        potential="harmonic", dim=2, centers=[[1.0, 0.5, 0.2, -0.3]], t_final=5.0,
        **_table2([1e-1], [2**16], [2**10], [1e-2], [1e-2]),
        reference_kind="harmonic-exact",
    ),
}


def preset_config(name, **overrides):
    try:
        values = dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", field="preset") from None
    values.update(overrides)
    values.setdefault("name", name)
    values.setdefault("output", os.path.join("results", name))
    return ExperimentConfig(**values).validate()


# --- INI parsing ------------------------------------------------------------

_EXPERIMENT_KEYS = {
    "name": str, "potential": str, "dim": int, "centers": "centers", "epsilon": [float],
    "method": [str], "observables": [str], "n1": [int], "n2": [int], "h1": [float],
    "h2": [float], "t_final": float, "record_every": float, "seed": int, "repeats": int,
    "sampling": str, "output": str,
}
_REFERENCE_KEYS = {"kind": str, "L": [float], "n": [int], "h": [float]}


def _key_line(text, section, key):
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return lineno
    return None


def _convert(raw, kind):
    if kind == "centers":
        return [[float(x) for x in part.split()] for part in raw.split(";") if part.strip()]
    if isinstance(kind, list):
        conv = kind[0]
        items = [x.strip() for x in raw.split(",") if x.strip()]
        if conv is int:
            return [_to_int(x) for x in items]
        return [conv(x) for x in items]
    if kind is int:
        return _to_int(raw)
    return kind(raw)


def _to_int(text):
    value = float(text)
    if value != int(value):
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def parse_config(text):
    """Parse INI text into a validated :class:`ExperimentConfig`."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}", line=getattr(exc, "lineno", None)) from None
    if not parser.has_section("experiment"):
        raise ConfigError("missing [experiment] section")
    for section in parser.sections():
        if section not in ("experiment", "reference"):
            raise ConfigError(f"unknown section [{section}]", line=_key_line(text, section, ""))
    values = {}
    exp = parser["experiment"]
    preset = exp.get("preset")
    for key, raw in exp.items():
        if key == "preset":
            continue
        if key not in _EXPERIMENT_KEYS:
            raise ConfigError(f"unknown key {key!r}", field=key, line=_key_line(text, "experiment", key))
        try:
            values[key] = _convert(raw, _EXPERIMENT_KEYS[key])
        except ValueError as exc:
            raise ConfigError(str(exc), field=key, line=_key_line(text, "experiment", key)) from None
    if parser.has_section("reference"):
        for key, raw in parser["reference"].items():
            if key not in _REFERENCE_KEYS:
                raise ConfigError(f"unknown key {key!r}", field=key, line=_key_line(text, "reference", key))
            try:
                values["reference_" + key] = _convert(raw, _REFERENCE_KEYS[key])
            except ValueError as exc:
                raise ConfigError(str(exc), field=key, line=_key_line(text, "reference", key)) from None
    try:
        cfg = preset_config(preset, **values) if preset else ExperimentConfig(**values).validate()
    except ConfigError as exc:
        if exc.field is not None and exc.line is None:
            section = "reference" if exc.field in _REFERENCE_KEYS else "experiment"
            line = _key_line(text, section, exc.field)
            raise ConfigError(str(exc).split(" [field")[0], field=exc.field, line=line) from None
        raise
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from None
    return parse_config(text)


def _fmt(x):
    return "%.17g" % x


def serialize_config(cfg):
    """INI text that :func:`parse_config` maps back to ``cfg``."""
    lst = lambda v: ", ".join(_fmt(x) if isinstance(x, float) else str(x) for x in v)
    lines = [
        "[experiment]",
        f"name = {cfg.name}",
        f"potential = {cfg.potential}",
        f"dim = {cfg.dim}",
        "centers = " + "; ".join(" ".join(_fmt(x) for x in c) for c in cfg.centers),
        f"epsilon = {lst(cfg.epsilon)}",
        f"method = {lst(cfg.method)}",
        f"observables = {lst(cfg.observables)}",
        f"n1 = {lst(cfg.n1)}",
        f"n2 = {lst(cfg.n2)}",
        f"h1 = {lst(cfg.h1)}",
        f"h2 = {lst(cfg.h2)}",
        f"t_final = {_fmt(cfg.t_final)}",
        f"record_every = {_fmt(cfg.record_every)}",
        f"seed = {cfg.seed}",
        f"repeats = {cfg.repeats}",
        f"sampling = {cfg.sampling}",
        f"output = {cfg.output}",
        "",
        "[reference]",
        f"kind = {cfg.reference_kind}",
        f"L = {lst(cfg.reference_L)}",
        f"n = {lst(cfg.reference_n)}",
        f"h = {lst(cfg.reference_h)}",
        "",
    ]
    return "\n".join(lines)


# --- running ------------------------------------------------------------------


def _tag(eps):
    return ("%.6g" % eps).replace(".", "p")


def series_path(output, name, eps, method):
    return os.path.join(output, f"{name}_eps{_tag(eps)}_{method}.csv")


def write_series_csv(path, series, reference=None):
    """Write ``time,observable,method,value[,reference,error]`` rows."""
    header = ["time", "observable", "method", "value"]
    if reference is not None:
        header += ["reference", "error"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, t in enumerate(series.times):
            for name, v in series.values.items():
                row = [_fmt(t), name, series.method, _fmt(v[k])]
                if reference is not None:
                    r = reference[name][k]
                    row += [_fmt(r), _fmt(v[k] - r)]
                w.writerow(row)


def read_series_csv(path):
    """Inverse of :func:`write_series_csv`; returns ``(series, reference or None)``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if reader.fieldnames is None or reader.fieldnames[:4] != ["time", "observable", "method", "value"]:
        raise ContractViolation(f"{path}: not a series CSV (header {reader.fieldnames})")
    if not rows:
        raise ContractViolation(f"{path}: no data rows")
    times = sorted({float(r["time"]) for r in rows})
    index = {t: k for k, t in enumerate(times)}
    names = list(dict.fromkeys(r["observable"] for r in rows))
    values = {n: np.full(len(times), np.nan) for n in names}
    ref = {n: np.full(len(times), np.nan) for n in names} if "reference" in rows[0] else None
    for r in rows:
        k = index[float(r["time"])]
        values[r["observable"]][k] = float(r["value"])
        if ref is not None:
            ref[r["observable"]][k] = float(r["reference"])
    meta = {"method": rows[0]["method"]}
    series = ExpectationSeries(np.array(times), values, meta)
    return series, (ExpectationSeries(np.array(times), ref, {"method": "reference"}) if ref else None)


def _group_errors(series, reference):
    """Absolute error per time for positions, momenta, potential, kinetic and total.

    Position and momentum errors are Euclidean norms over the components.
    """
    groups = {}
    for name in series.values:
        if name not in reference.values:
            continue
        key = "position" if re.fullmatch(r"q\d+", name) else "momentum" if re.fullmatch(r"p\d+", name) else name
        groups.setdefault(key, []).append(series[name] - reference[name])
    return {k: np.sqrt(np.sum(np.square(v), axis=0)) for k, v in groups.items()}


def time_averaged_error(series, reference):
    """Mean over observable groups of the time-averaged absolute error."""
    errs = _group_errors(series, reference)
    if not errs:
        raise ContractViolation("series and reference share no observables")
    t = series.times
    span = t[-1] - t[0]
    avg = {
        k: float(np.trapezoid(e, t) / span) if span > 0 else float(e[0]) for k, e in errs.items()
    }
    return float(np.mean(list(avg.values()))), avg


@dataclass
class ConvergenceTable:
    epsilons: np.ndarray
    errors: np.ndarray
    slope: float
    intercept: float

    def rows(self):
        return list(zip(self.epsilons.tolist(), self.errors.tolist()))


def convergence_table(runs):
    """Least-squares slope of ``log(error)`` against ``log(epsilon)``."""
    runs = sorted((float(e), float(err)) for e, err in runs)
    if len(runs) < 3:
        raise ContractViolation("a convergence table needs at least three epsilons")
    eps, err = (np.array(x) for x in zip(*runs))
    if np.any(eps <= 0) or np.any(err <= 0):
        raise ContractViolation("epsilons and errors must be positive")
    slope, intercept = np.polyfit(np.log(eps), np.log(err), 1)
    return ConvergenceTable(eps, err, float(slope), float(intercept))


def write_convergence_csv(path, tables):
    """``tables`` maps a method name to its :class:`ConvergenceTable`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "epsilon", "error", "slope"])
        for method, tab in tables.items():
            for e, err in tab.rows():
                w.writerow([method, _fmt(e), _fmt(err), "%.6f" % tab.slope])


def harmonic_exact_series(cfg, eps, times, names):
    """Exact expectations for the isotropic oscillator and a single Gaussian.

    The flow is a phase-space rotation and the Wigner function is
    ``N(z0, eps/2 Id)``; for quadratic symbols this gives
    ``<a>(t) = a(Phi^t z0) + (eps/4) Delta a``.
    """
    if cfg.potential != "harmonic" or len(cfg.centers) != 1:
        raise ConfigError("harmonic-exact reference needs the harmonic potential and one packet", field="kind")
    pot = make_potential("harmonic", dim=cfg.dim)
    d = cfg.dim
    z0 = np.asarray(cfg.centers[0], dtype=float)
    c, s = np.cos(times)[:, None], np.sin(times)[:, None]
    Z = np.concatenate([z0[:d] * c + z0[d:] * s, -z0[:d] * s + z0[d:] * c], axis=1)
    values = {}
    for a in resolve_observables(names, pot):
        values[a.name] = a.value(Z) + 0.25 * eps * a.lap(Z)
    return ExpectationSeries(times, values, {"method": "reference"})


def _reference_path(cfg, eps):
    return series_path(cfg.output, cfg.name, eps, "reference")


def run_reference(cfg, k, threads=1, reuse=True):
    eps = cfg.epsilon[k]
    path = _reference_path(cfg, eps)
    if reuse and os.path.exists(path):
        return read_series_csv(path)[0]
    t0 = time.perf_counter()
    ref = SplitStepReference(
        cfg.potential, eps, cfg.per_epsilon("reference_L", k), cfg.per_epsilon("reference_n", k),
        cfg.per_epsilon("reference_h", k), cfg.t_final, cfg.record_every, workers=threads, dim=cfg.dim,
    )
    series = ref.fit(cfg.initial_state(eps)).predict(cfg.observable_names())
    os.makedirs(cfg.output, exist_ok=True)
    write_series_csv(path, series)
    _write_sidecar(path, {**series.metadata, "epsilon": eps, "runtime_seconds": time.perf_counter() - t0})
    return series


def _write_sidecar(csv_path, meta):
    def clean(x):
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        if isinstance(x, np.generic):
            return x.item()
        return x

    with open(os.path.splitext(csv_path)[0] + ".json", "w") as fh:
        json.dump(clean(meta), fh, indent=2, sort_keys=True)


def run_particles(cfg, k, method, threads=1):
    eps = cfg.epsilon[k]
    psi0 = cfg.initial_state(eps)
    est = HusimiEgorovEstimator(
        cfg.potential, eps, method=method, n1=cfg.per_epsilon("n1", k), n2=cfg.per_epsilon("n2", k),
        h1=cfg.per_epsilon("h1", k), h2=cfg.per_epsilon("h2", k), t_final=cfg.t_final,
        record_every=cfg.record_every, sampling=cfg.sampling, seed=cfg.seed, n_threads=threads,
        dim=cfg.dim,
    )
    est.fit(psi0)
    leading = est.sampling_info_.get("leading", {})
    repeats = cfg.repeats if leading.get("provenance") == "mcmc" else 1
    runs = [est.predict(cfg.observable_names())]
    for r in range(1, repeats):
        est.set_params(seed=cfg.seed + r)
        runs.append(est.fit(psi0).predict(cfg.observable_names()))
    if repeats == 1:
        return runs[0]
    mean = {n: np.mean([s[n] for s in runs], axis=0) for n in runs[0].values}
    meta = dict(runs[0].metadata, repeats=repeats, seeds=list(range(cfg.seed, cfg.seed + repeats)))
    return ExpectationSeries(runs[0].times, mean, meta)


def run_experiment(cfg, threads=1, log=None):
    """Run every (epsilon, method) pair of ``cfg`` and write CSV, JSON and convergence files.

    Returns a dict with the per-run errors and the fitted slopes. A
    :class:`~husimi_egorov.exceptions.TrajectoryInstabilityError` propagates
    after the files of completed runs have been written.
    """
    cfg.validate()
    os.makedirs(cfg.output, exist_ok=True)
    say = log or (lambda msg: None)
    summary = {"runs": [], "slopes": {}}
    errors = {m: [] for m in cfg.method}
    for k, eps in enumerate(cfg.epsilon):
        reference = None
        for method in cfg.method:
            say(f"eps={eps:g} method={method}")
            t0 = time.perf_counter()
            series = run_particles(cfg, k, method, threads)
            runtime = time.perf_counter() - t0
            if reference is None and cfg.reference_kind != "none":
                if cfg.reference_kind == "grid":
                    say(f"eps={eps:g} reference grid")
                    reference = run_reference(cfg, k, threads)
                else:
                    reference = harmonic_exact_series(cfg, eps, series.times, cfg.observable_names())
                if not np.allclose(reference.times, series.times, rtol=0, atol=1e-9):
                    raise ConfigError("reference and particle time grids differ", field="record_every")
            path = series_path(cfg.output, cfg.name, eps, method)
            write_series_csv(path, series, reference)
            meta = {**series.metadata, "runtime_seconds": runtime, "config": cfg.name}
            entry = {"epsilon": eps, "method": method, "path": path, "runtime_seconds": runtime}
            if reference is not None:
                err, per_group = time_averaged_error(series, reference)
                max_err = max(float(np.max(np.abs(series[n] - reference[n]))) for n in series.values)
                meta.update(time_averaged_error=err, group_errors=per_group, max_error=max_err)
                entry.update(error=err, max_error=max_err)
                errors[method].append((eps, err))
            _write_sidecar(path, meta)
            summary["runs"].append(entry)
    tables = {}
    for method, runs in errors.items():
        if len(runs) >= 3:
            tables[method] = convergence_table(runs)
            summary["slopes"][method] = tables[method].slope
    if any(errors.values()):
        conv = os.path.join(cfg.output, f"{cfg.name}_convergence.csv")
        if tables:
            write_convergence_csv(conv, tables)
        else:
            with open(conv, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["method", "epsilon", "error", "slope"])
                for method, runs in errors.items():
                    for e, err in runs:
                        w.writerow([method, _fmt(e), _fmt(err), ""])
        summary["convergence"] = conv
    return summary


def converge_files(pattern, output):
    """Build a convergence table from series CSVs (with reference columns) matching ``pattern``."""
    paths = sorted(glob.glob(pattern))
    by_method = {}
    for path in paths:
        series, ref = read_series_csv(path)
        if ref is None:
            continue
        side = os.path.splitext(path)[0] + ".json"
        eps = None
        if os.path.exists(side):
            with open(side) as fh:
                eps = json.load(fh).get("epsilon")
        if eps is None:
            m = re.search(r"_eps([0-9p.e-]+)_", os.path.basename(path))
            if m is None:
                raise ContractViolation(f"{path}: cannot determine epsilon")
            eps = float(m.group(1).replace("p", "."))
        err, _ = time_averaged_error(series, ref)
        by_method.setdefault(series.method, []).append((eps, err))
    if not by_method:
        raise ContractViolation(f"no series with reference columns match {pattern!r}")
    tables = {m: convergence_table(runs) for m, runs in by_method.items()}
    write_convergence_csv(output, tables)
    return tables


__all__ = [
    "ExperimentConfig", "PRESETS", "preset_config", "parse_config", "load_config",
    "serialize_config", "run_experiment", "convergence_table", "ConvergenceTable",
    "converge_files", "time_averaged_error", "write_series_csv", "read_series_csv",
    "harmonic_exact_series", "run_reference", "run_particles",
]
