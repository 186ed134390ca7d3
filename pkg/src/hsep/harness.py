"""Experiment specs, replica batching, streaming statistics and output bundles."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hsep import __version__
from hsep.dynamics import run_trajectory
from hsep.env import BernoulliEnv
from hsep.model import ModelParams, params_from_mapping, read_config
from hsep.stats import StatsAccumulator
from hsep.transform import (FieldRecorder, make_near_equilibrium_ic, make_step_ic, scale_field,
                            scale_times, step_mass_factor)
from hsep.verify import _json_default

IC_KINDS = ("step", "near_eq")
MAX_TAU = 4.0
MAX_R = 10.0


class SpecError(ValueError):
    """Invalid experiment spec; ``errors`` maps field names to messages."""

    def __init__(self, errors: dict[str, str]):
        self.errors = dict(errors)
        super().__init__("; ".join(f"{k}: {v}" for k, v in self.errors.items()))


@dataclass
class ExperimentSpec:
    params: ModelParams
    ic: str = "step"
    epsilons: tuple[float, ...] = (0.2,)
    replicas: int = 100
    taus: tuple[float, ...] = (0.5,)
    rs: tuple[float, ...] = (0.0,)
    suites: tuple[str, ...] = ()
    seed: int = 0
    out: str | None = None
    kappa0: float = 1.0
    batch: int = 1000
    compare: bool = False
    she_dx: tuple[float, ...] = (0.1, 0.05)
    she_paths: int = 2000
    she_half_width: float = 4.0

    def validate(self) -> ExperimentSpec:
        from hsep.suites import SUITES

        err = {}
        if self.ic not in IC_KINDS:
            err["ic"] = f"must be one of {', '.join(IC_KINDS)}, got {self.ic!r}"
        if not self.epsilons:
            err["epsilons"] = "at least one epsilon is required"
        elif any(not (0 < e < 1) for e in self.epsilons):
            err["epsilons"] = "every epsilon must lie in (0, 1)"
        if int(self.replicas) != self.replicas or self.replicas < 1:
            err["replicas"] = f"must be an integer >= 1, got {self.replicas}"
        if not self.taus:
            err["taus"] = "at least one tau is required"
        elif any(not (0 <= t <= MAX_TAU) for t in self.taus):
            err["taus"] = f"every tau must lie in [0, {MAX_TAU}]"
        if not self.rs:
            err["rs"] = "at least one r is required"
        elif any(not (abs(r) <= MAX_R) for r in self.rs):
            err["rs"] = f"every r must satisfy |r| <= {MAX_R}"
        bad = [s for s in self.suites if s not in SUITES]
        if bad:
            err["suites"] = f"unknown suite(s) {', '.join(bad)}"
        if int(self.seed) != self.seed or self.seed < 0:
            err["seed"] = f"must be a nonnegative integer, got {self.seed}"
        if not self.kappa0 >= 0:
            err["kappa0"] = "must be >= 0"
        if self.batch < 1:
            err["batch"] = "must be >= 1"
        if self.compare and (not self.she_dx or any(d <= 0 for d in self.she_dx)):
            err["she_dx"] = "positive grid spacings are required for a comparison"
        if self.compare and self.she_paths < 2:
            err["she_paths"] = "must be >= 2"
        if err:
            raise SpecError(err)
        return self

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "params"}
        d["params"] = self.params.as_dict()
        return d


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).replace(",", " ").split())


def spec_from_mapping(values: dict, **overrides) -> ExperimentSpec:
    """Build and validate a spec from config text values; CLI overrides win when not None."""
    err = {}
    v = dict(values)
    v.update({k: val for k, val in overrides.items() if val is not None})

    def get(key, conv, default):
        if key not in v:
            return default
        try:
            return conv(v[key])
        except (TypeError, ValueError) as exc:
            err[key] = f"cannot parse {v[key]!r} ({exc})"
            return default

    eps = get("epsilons", lambda x: x if isinstance(x, tuple) else _floats(x), None)
    if eps is None and "epsilon" in v:
        eps = get("epsilon", lambda x: (float(x),), None)
    eps = eps or (0.2,)
    try:
        params = params_from_mapping({k: val for k, val in v.items() if k in ("nu", "alpha", "J", "rho")},
                                     epsilon=eps[0])
    except (TypeError, ValueError) as exc:
        err["params"] = str(exc)
        params = ModelParams.scaling(0.2)
    spec = ExperimentSpec(
        params=params,
        ic=str(v.get("ic", "step")),
        epsilons=eps,
        replicas=get("replicas", int, 100),
        taus=get("taus", _floats, (0.5,)),
        rs=get("rs", _floats, (0.0,)),
        suites=get("suites", lambda x: tuple(x) if isinstance(x, tuple) else tuple(str(x).replace(",", " ").split()), ()),
        seed=get("seed", int, 0),
        out=v.get("out"),
        kappa0=get("kappa0", float, 1.0),
        batch=get("batch", int, 1000),
        compare=get("compare", lambda x: str(x).lower() in ("1", "true", "yes"), False),
        she_dx=get("she_dx", _floats, (0.1, 0.05)),
        she_paths=get("she_paths", int, 2000),
        she_half_width=get("she_half_width", float, 4.0),
    )
    try:
        spec.validate()
    except SpecError as exc:
        err = {**exc.errors, **err}  # a parse failure explains the field better than its default
    if err:
        raise SpecError(err)
    return spec


def spec_from_config(path, **overrides) -> ExperimentSpec:
    return spec_from_mapping(read_config(path), **overrides)


# ---------------------------------------------------------------- simulation

def simulate_field(p: ModelParams, ic: str, taus, rs, replica_start: int, replicas: int,
                   seed: int = 0, kappa0: float = 1.0):
    """Scaled field on the (tau, r) grid for replicas replica_start .. +replicas-1.

    Step data return Z-tilde (the normalized field), near-equilibrium data Z.
    Each replica's initial data and noise depend only on (seed, replica).
    """
    c = p.constants
    taus = np.asarray(taus, dtype=float)
    rs = np.asarray(rs, dtype=float)
    per_r = c.r_star / p.eps
    _, need = scale_times(taus, p)
    T = need[-1]
    reach = c.mu_hat(T + 1) + (rs.max() * per_r) + 8
    if ic == "step":
        cfg = make_step_ic(int(math.ceil(max(reach, 1))), replicas)
        prefactor = step_mass_factor(p)
    else:
        left = int(math.ceil((abs(min(rs.min(), 0.0)) + 6) * per_r))
        width = int(math.ceil(max(reach, 1)))
        cfg = make_near_equilibrium_ic(width, seed, p, left_buffer=left, kappa0=kappa0,
                                       replicas=replicas, replica_start=replica_start)
        prefactor = 1.0
    env = BernoulliEnv(p, seed, tuple(range(replica_start, replica_start + replicas)))
    rec = FieldRecorder(p, need)
    rec.record(0, cfg.y, cfg.m)
    run_trajectory(cfg, T, env, observers=[rec], store=False)
    return scale_field(rec.logz, rec.m, p, taus, rs, prefactor=prefactor)


def _batches(start: int, count: int, size: int):
    for b in range(start, start + count, size):
        yield b, min(size, start + count - b)


@dataclass
class Bundle:
    """Result of run_experiment: per-epsilon statistics of H = log Z on the grid."""

    spec: ExperimentSpec
    replica_start: int
    stats: dict[float, StatsAccumulator] = field(default_factory=dict)
    samples: dict[float, np.ndarray] = field(default_factory=dict)
    suites: dict[str, dict] = field(default_factory=dict)
    comparisons: list[dict] = field(default_factory=list)
    files: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        ok = all(r.get("passed", False) for r in self.suites.values())
        return ok and all(c["passed"] for c in self.comparisons)


def header_lines(spec: ExperimentSpec, p: ModelParams, extra: str = "") -> list[str]:
    echo = {k: v for k, v in spec.to_dict().items() if k != "out"}  # destination is not an input
    lines = [f"hsep {__version__}", f"params: {p.echo()}",
             "spec: " + json.dumps(echo, sort_keys=True, default=_json_default)]
    if extra:
        lines.append(extra)
    return lines


def stats_csv(spec: ExperimentSpec, p: ModelParams, acc: StatsAccumulator) -> str:
    buf = io.StringIO()
    for line in header_lines(spec, p):
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau", "r", "count", "mean", "variance", "skewness", "kurtosis", "min", "max"])
    d = {k: np.asarray(v) for k, v in acc.to_dict().items() if k != "count"}
    for i, tau in enumerate(spec.taus):
        for j, r in enumerate(spec.rs):
            w.writerow([repr(float(tau)), repr(float(r)), acc.count]
                       + [repr(float(d[k][i, j])) for k in ("mean", "variance", "skewness", "kurtosis", "min", "max")])
    return buf.getvalue()


def run_experiment(spec: ExperimentSpec, replica_start: int = 0, replicas: int | None = None,
                   write: bool = True, keep_samples: bool = False) -> Bundle:
    """Simulate every epsilon, accumulate statistics, run requested suites/comparisons.

    ``replica_start``/``replicas`` select a slice of the replica index space so
    that split runs can be merged with ``merge_bundles``.
    """
    from hsep.suites import SUITES

    spec.validate()
    count = spec.replicas if replicas is None else int(replicas)
    if count < 1:
        raise SpecError({"replicas": f"must be an integer >= 1, got {count}"})
    bundle = Bundle(spec, replica_start)
    for eps in spec.epsilons:
        p = spec.params.with_epsilon(eps)
        acc = StatsAccumulator()
        keep = []
        for b0, nb in _batches(replica_start, count, spec.batch):
            sf = simulate_field(p, spec.ic, spec.taus, spec.rs, b0, nb, spec.seed, spec.kappa0)
            acc = acc.merge(StatsAccumulator.from_samples(sf.H))
            if keep_samples or spec.compare:
                keep.append(sf.H)
            if b0 == replica_start == 0 and write and spec.out:
                _write(bundle, f"field_eps{eps!r}_replica0.csv",
                       sf.dump_csv(0, header=" | ".join(header_lines(spec, p))))
        bundle.stats[eps] = acc
        if keep:
            bundle.samples[eps] = np.concatenate(keep)
        if write and spec.out:
            _write(bundle, f"stats_eps{eps!r}.csv", stats_csv(spec, p, acc))
    for name in spec.suites:
        bundle.suites[name] = SUITES[name](seed=spec.seed)
    if spec.compare:
        bundle.comparisons = compare_to_she(spec, bundle)
    if write and spec.out:
        summary = {
            "version": __version__,
            "spec": spec.to_dict(),
            "replica_start": replica_start,
            "replicas": count,
            "stats": {repr(e): a.to_dict() for e, a in bundle.stats.items()},
            "suites": bundle.suites,
            "comparisons": bundle.comparisons,
            "passed": bundle.passed,
        }
        _write(bundle, "summary.json", json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    return bundle


def _write(bundle: Bundle, name: str, text: str) -> None:
    out = Path(bundle.spec.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)
    bundle.files.append(str(out / name))


def merge_bundles(bundles) -> dict[float, StatsAccumulator]:
    """Commutative reduction of per-epsilon statistics across split runs."""
    merged: dict[float, StatsAccumulator] = {}
    for b in bundles:
        for eps, acc in b.stats.items():
            merged[eps] = merged.get(eps, StatsAccumulator()).merge(acc)
    return merged


def she_reference_samples(spec: ExperimentSpec, tau: float, r: float, seed: int | None = None) -> dict:
    """log Z samples of the reference SHE at (tau, r) for each dx in spec.she_dx."""
    from hsep.she import SHEGrid, solve_she

    ic = "delta" if spec.ic == "step" else "brownian"
    out = {}
    for dx in spec.she_dx:
        n = math.ceil(tau / (dx * dx / 2) - 1e-9)
        grid = SHEGrid(dx, tau / n, spec.she_half_width, seed=spec.seed if seed is None else seed,
                       boundary="dirichlet" if ic == "delta" else "periodic")
        solve_she(ic, tau, grid, replicas=spec.she_paths, kappa0=spec.kappa0)
        out[dx] = np.log(grid.value_at(tau, r))
    return out


def compare_to_she(spec: ExperimentSpec, bundle: Bundle) -> list[dict]:
    from hsep.she import compare_one_point

    rows = []
    for i, tau in enumerate(spec.taus):
        if tau <= 0:
            continue
        for j, r in enumerate(spec.rs):
            particle = {eps: bundle.samples[eps][:, i, j] for eps in spec.epsilons}
            ref = she_reference_samples(spec, tau, r)
            if len(particle) < 2:
                from hsep.she import one_point_stats, richardson_reference
                st, rf = one_point_stats(particle[spec.epsilons[0]]), richardson_reference(ref)
                rows.append({"tau": tau, "r": r, "particle": st, "reference": rf,
                             "var_rel_gap": abs(st["var"] - rf["var"]) / rf["var"],
                             "passed": True})
                continue
            rep = compare_one_point(particle, ref, tau, r)
            rep["passed"] = bool(rep["mean_monotone"] and rep["var_monotone"])
            rows.append(rep)
    return rows
