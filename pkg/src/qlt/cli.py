"""Command-line driver: ``qlt synth|fit|bootstrap|report --config run.json``.

Exit codes: 0 ok, 1 invalid config, 2 I/O or malformed input, 3 missing upstream
artifact, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .bootstrap import bootstrap
from .core import pauli_basis
from .errors import DatasetError, FitDivergenceError, QLTError
from .liouvillian import (
    LiouvillianDesign,
    LiouvillianParams,
    canonical_decomposition,
    dt_adequacy,
    estimate_derivatives,
    fit_liouvillian,
    markovianity_witness,
)
from .metrics import povm_fidelity, process_fidelity, r2, spectrum_compare, state_fidelity
from .optimize import AdamConfig
from .pipeline import ChainReplica, PipelineSettings, flatten_datasets, simulate_benchmark
from .probes import PauliDataset, enumerate_configs
from .process import MapEstimate, ProbeLoss, fit_map
from .spam import SpamEstimate, SpamLoss, fit_spam
from .synth import GroundTruth, perturbed_spam, random_reservoir_model, reduced_map

SCHEMA_VERSION = 1
GROUND_TRUTH_DT = 1e-4
log = logging.getLogger("qlt")


class ConfigError(QLTError):
    pass


class MissingArtifact(QLTError):
    pass


def _require(cond: bool, name: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"config field '{name}': {msg}")


@dataclass
class ExperimentConfig:
    n_qubits: int = 2
    n_env: int = 2
    seed: int = 0
    alpha: float = 1.0
    g: float = 0.5
    times: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4])
    # calibrated so the mean stencil difference is about 0.02 on default models
    dt: float = 0.04
    scheme: str = "central"
    shots: int = 10_000
    selection: dict = field(default_factory=lambda: {"mode": "full"})
    adam: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)
    bootstrap_replicas: int = 6
    output_dir: str = "qlt_output"
    schema_version: int = SCHEMA_VERSION

    FIELDS = ("n_qubits", "n_env", "seed", "couplings", "times", "dt", "scheme", "shots", "selection",
              "adam", "fit", "bootstrap", "output_dir", "schema_version")

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        for key in data:
            _require(key in cls.FIELDS, key, "unknown field")
        kw = {k: data[k] for k in ("n_qubits", "n_env", "seed", "times", "dt", "scheme", "shots",
                                   "selection", "adam", "fit", "output_dir", "schema_version") if k in data}
        couplings = data.get("couplings", {})
        _require(isinstance(couplings, dict), "couplings", "must be an object")
        for key in couplings:
            _require(key in ("alpha", "g"), f"couplings.{key}", "unknown field")
        kw.update(couplings)
        boot = data.get("bootstrap", {})
        _require(isinstance(boot, dict), "bootstrap", "must be an object")
        if "replicas" in boot:
            kw["bootstrap_replicas"] = boot["replicas"]
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        _require(self.schema_version == SCHEMA_VERSION, "schema_version", f"expected {SCHEMA_VERSION}")
        for name in ("n_qubits", "n_env", "seed", "shots", "bootstrap_replicas"):
            _require(isinstance(getattr(self, name), int), name, "must be an integer")
        _require(1 <= self.n_qubits <= 3, "n_qubits", "must be 1, 2 or 3")
        _require(1 <= self.n_env <= 3, "n_env", "must be 1, 2 or 3")
        _require(self.shots >= 1, "shots", "must be >= 1")
        _require(self.alpha >= 0, "couplings.alpha", "must be non-negative")
        _require(isinstance(self.dt, (int, float)) and self.dt > 0, "dt", "must be positive")
        _require(self.scheme in ("central", "forward"), "scheme", "must be 'central' or 'forward'")
        ts = self.times
        _require(isinstance(ts, list) and len(ts) > 0, "times", "must be a non-empty list")
        _require(all(isinstance(t, (int, float)) and t > 0 for t in ts), "times", "must be positive")
        _require(all(a < b for a, b in zip(ts, ts[1:])), "times", "must be sorted and distinct")
        if self.scheme == "central":
            _require(min(ts) - self.dt >= 0, "dt", "central stencil reaches negative time")
        _require(self.bootstrap_replicas >= 2, "bootstrap.replicas", "must be >= 2")
        mode = self.selection.get("mode", "full")
        _require(mode in ("full", "random_subset"), "selection.mode", "must be 'full' or 'random_subset'")
        if mode == "random_subset":
            n = self.selection.get("n_configs")
            _require(isinstance(n, int) and 1 <= n <= 18**self.n_qubits, "selection.n_configs",
                     f"must be an integer in [1, {18**self.n_qubits}]")
        for key, block in self.adam.items():
            _require(key in ("spam", "map", "liouvillian"), f"adam.{key}", "unknown stage")
            try:
                AdamConfig.from_dict(block)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config field 'adam.{key}': {exc}") from None
        try:
            self.settings()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config field 'fit': {exc}") from None

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "n_qubits": self.n_qubits,
            "n_env": self.n_env,
            "seed": self.seed,
            "couplings": {"alpha": self.alpha, "g": self.g},
            "times": list(self.times),
            "dt": self.dt,
            "scheme": self.scheme,
            "shots": self.shots,
            "selection": self.selection,
            "adam": {k: getattr(self.settings(), f"{k}_adam").to_dict() for k in ("spam", "map", "liouvillian")},
            "fit": self.fit,
            "bootstrap": {"replicas": self.bootstrap_replicas},
            "output_dir": self.output_dir,
        }

    def settings(self) -> PipelineSettings:
        data = dict(self.fit)
        if "scheme" in data or any(k.endswith("_adam") for k in data):
            raise ValueError("scheme and Adam blocks are set at top level")
        for stage in ("spam", "map", "liouvillian"):
            if stage in self.adam:
                data[f"{stage}_adam"] = self.adam[stage]
        data["scheme"] = self.scheme
        return PipelineSettings.from_dict(data)

    def seeds(self) -> dict[str, int]:
        """Independent child seeds of the master seed, one per random stage."""
        names = ("model", "spam", "data", "fit", "bootstrap")
        state = np.random.SeedSequence(self.seed).generate_state(len(names))
        return {n: int(s) for n, s in zip(names, state)}

    def configs(self):
        if self.selection.get("mode", "full") == "full":
            return enumerate_configs(self.n_qubits)
        return enumerate_configs(self.n_qubits, self.selection["n_configs"], self.selection.get("seed", 0))

    def hash(self) -> str:
        # the output location does not affect any result
        data = self.to_dict()
        data.pop("output_dir")
        return io.config_hash(data)


def load_config(path, seed: int | None = None, output: str | None = None) -> ExperimentConfig:
    try:
        data = io.read_json(path)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except ValueError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if seed is not None:
        data["seed"] = seed
    if output is not None:
        data["output_dir"] = output
    return ExperimentConfig.from_dict(data)


class Workspace:
    """Paths of one experiment directory."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.root = Path(cfg.output_dir)
        self.synth = self.root / "synth"
        self.fit = self.root / "fit"
        self.boot = self.root / "bootstrap"
        self.report = self.root / "report"

    def provenance(self) -> dict:
        return {"config_hash": self.cfg.hash(), "seed": self.cfg.seed, "seeds": self.cfg.seeds()}

    def write(self, path: Path, data: dict) -> None:
        io.write_json(path, {**data, "provenance": self.provenance()})

    def need(self, path: Path, what: str) -> dict:
        if not path.exists():
            raise MissingArtifact(f"missing {what} ({path}); run the upstream stage first")
        try:
            return io.read_json(path)
        except ValueError as exc:
            raise DatasetError(f"{path} is not valid JSON: {exc}") from None

    @staticmethod
    def tag(t: float) -> str:
        return f"t{t:.4f}"

    def map_path(self, t: float) -> Path:
        return self.fit / f"map_{self.tag(t)}.json"

    def liouvillian_path(self, t: float) -> Path:
        return self.fit / f"liouvillian_{self.tag(t)}.json"

    def manifest(self) -> dict:
        return self.need(self.synth / "manifest.json", "synthetic/experimental dataset manifest")

    def spam_dataset(self) -> PauliDataset:
        man = self.manifest()
        return PauliDataset.from_dict(self.need(self.synth / man["spam"], "SPAM dataset"))

    def groups(self) -> list[tuple[float, list[PauliDataset]]]:
        out = []
        for g in self.manifest()["groups"]:
            out.append((g["time"], [PauliDataset.from_dict(self.need(self.synth / f, "process dataset"))
                                    for f in g["files"]]))
        return out

    def ground_truth(self) -> dict | None:
        path = self.synth / "ground_truth.json"
        return io.read_json(path) if path.exists() else None


# --- synth -----------------------------------------------------------------

STENCIL_ROLES = {"central": ("minus", "centre", "plus"), "forward": ("centre", "plus")}


def cmd_synth(cfg: ExperimentConfig, jobs: int = 1) -> int:
    ws = Workspace(cfg)
    seeds = cfg.seeds()
    model = random_reservoir_model(cfg.n_qubits, cfg.n_env, seeds["model"], cfg.alpha, cfg.g)
    rho0, povm = perturbed_spam(cfg.n_qubits, seeds["spam"])
    bench = simulate_benchmark(lambda s: reduced_map(model, s), rho0, povm.elements, cfg.times, cfg.dt,
                               cfg.shots, seeds["data"], cfg.configs(), cfg.scheme)
    ws.synth.mkdir(parents=True, exist_ok=True)
    io.write_json(ws.synth / "spam.json", bench.spam_dataset.to_dict())
    groups = []
    for t, group in zip(bench.times, bench.groups):
        files = []
        for role, ds in zip(STENCIL_ROLES[cfg.scheme], group):
            name = f"process_{ws.tag(t)}_{role}.json"
            io.write_json(ws.synth / name, ds.to_dict())
            files.append(name)
        groups.append({"time": t, "files": files, "dt_adequacy": dt_adequacy(group, cfg.shots, cfg.scheme)})
    truth = GroundTruth(model, GROUND_TRUTH_DT)
    per_time = []
    for t in bench.times:
        c = truth.canonical(t)
        per_time.append({"time": t, "generator": io.encode_matrix(truth.generator(t)),
                         "map": io.encode_matrix(truth.map(t)), "canonical": c.to_dict(),
                         "gamma": io.encode_matrix(c.gamma())})
    ws.write(ws.synth / "ground_truth.json", {
        "schema_version": SCHEMA_VERSION,
        "model": model.to_dict(),
        "rho0": io.encode_matrix(rho0),
        "povm": io.encode_matrices(povm.elements),
        "generator_dt": GROUND_TRUTH_DT,
        "times": per_time,
    })
    ws.write(ws.synth / "manifest.json", {
        "schema_version": SCHEMA_VERSION,
        "n_qubits": cfg.n_qubits,
        "dt": cfg.dt,
        "scheme": cfg.scheme,
        "shots": cfg.shots,
        "spam": "spam.json",
        "groups": groups,
    })
    log.info("wrote %d datasets to %s", 1 + sum(len(g["files"]) for g in groups), ws.synth)
    return 0


# --- fit -------------------------------------------------------------------

def _fit_map_job(args):
    ds, rho0, povm, settings, seed = args
    return fit_map(ds, rho0, povm, settings.rank, settings.map_adam, seed=seed, jitter=settings.jitter,
                   restarts=settings.map_restarts)


def _centre(group: list[PauliDataset], t: float) -> PauliDataset:
    return min(group, key=lambda d: abs(d.time_tag - t))


def fit_stage_spam(ws: Workspace) -> SpamEstimate:
    cfg = ws.cfg
    settings = cfg.settings()
    ds = ws.spam_dataset()
    est = fit_spam(ds, settings.spam_adam, seed=cfg.seeds()["fit"], jitter=settings.jitter,
                   restarts=settings.spam_restarts)
    loss = SpamLoss(ds)
    rep = est.to_dict()
    rep["r2"] = r2(loss.target, loss.predict(est.rho0, est.povm.elements))
    ws.write(ws.fit / "spam.json", rep)
    return est


def fit_stage_map(ws: Workspace, jobs: int = 1) -> None:
    cfg = ws.cfg
    settings = cfg.settings()
    spam = SpamEstimate.from_dict(ws.need(ws.fit / "spam.json", "SPAM estimate"))
    base = cfg.seeds()["fit"]
    groups = ws.groups()
    tasks = [(_centre(g, t), spam.rho0, spam.povm.elements, settings, base + 1 + k)
             for k, (t, g) in enumerate(groups)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_fit_map_job, tasks))
    else:
        results = [_fit_map_job(t) for t in tasks]
    for (t, _), task, est in zip(groups, tasks, results):
        probe = ProbeLoss(task[0], spam.rho0, spam.povm.elements)
        mask = probe.mask.astype(bool)
        rep = est.to_dict()
        rep["time"] = t
        rep["r2"] = r2(probe.target[mask], probe.predict(est.superoperator())[mask])
        ws.write(ws.map_path(t), rep)


def fit_stage_liouvillian(ws: Workspace) -> None:
    cfg = ws.cfg
    settings = cfg.settings()
    spam = SpamEstimate.from_dict(ws.need(ws.fit / "spam.json", "SPAM estimate"))
    povm = spam.povm.elements
    basis = pauli_basis(cfg.n_qubits)
    for t, group in ws.groups():
        map_est = MapEstimate.from_dict(ws.need(ws.map_path(t), f"map estimate at t={t}"))
        derivs = estimate_derivatives(group, settings.scheme)
        design = LiouvillianDesign(derivs, map_est.superoperator(), spam.rho0, povm)
        fit = fit_liouvillian(derivs, map_est, spam, settings.liouvillian_adam, settings.method, design)
        canon = canonical_decomposition(fit.params, basis)
        ws.write(ws.liouvillian_path(t), {
            "schema_version": SCHEMA_VERSION,
            "time": t,
            "dt": derivs.dt,
            "scheme": derivs.scheme,
            "source_times": list(derivs.source_times),
            "fit": fit.to_dict(),
            "canonical": canon.to_dict(),
            "r2": r2(design.target, design.predict(fit.params.coords())),
            "dt_adequacy": dt_adequacy(group, scheme=settings.scheme),
        })
    write_fit_summary(ws)


def write_fit_summary(ws: Workspace) -> dict:
    spam_rep = ws.need(ws.fit / "spam.json", "SPAM estimate")
    spam = SpamEstimate.from_dict(spam_rep)
    truth = ws.ground_truth()
    summary = {"schema_version": SCHEMA_VERSION, "r2_spam": spam_rep["r2"], "times": []}
    if truth:
        summary["F_rho0"] = state_fidelity(io.decode_matrix(truth["rho0"]), spam.rho0)
        summary["F_povm"] = povm_fidelity(io.decode_matrices(truth["povm"]), spam.povm)
    for k, (t, _) in enumerate(ws.groups()):
        m = ws.need(ws.map_path(t), f"map estimate at t={t}")
        l = ws.need(ws.liouvillian_path(t), f"Liouvillian report at t={t}")
        row = {"time": t, "r2_map": m["r2"], "r2_liouvillian": l["r2"], "loss": l["fit"]["loss"],
               "oracle_loss": l["fit"]["oracle_loss"]}
        if truth:
            est = MapEstimate.from_dict(m).superoperator()
            row["F_map"] = process_fidelity(io.decode_matrix(truth["times"][k]["map"]), est)
        summary["times"].append(row)
    ws.write(ws.fit / "summary.json", summary)
    return summary


def cmd_fit(cfg: ExperimentConfig, stage: str = "all", jobs: int = 1) -> int:
    ws = Workspace(cfg)
    ws.manifest()
    try:
        if stage in ("spam", "all"):
            fit_stage_spam(ws)
        if stage in ("map", "all"):
            fit_stage_map(ws, jobs)
        if stage in ("liouvillian", "all"):
            fit_stage_liouvillian(ws)
    except FitDivergenceError as exc:
        ws.fit.mkdir(parents=True, exist_ok=True)
        exc.trace.to_csv(ws.fit / "divergence_trace.csv")
        raise
    return 0


# --- bootstrap -------------------------------------------------------------

def _original_observables(ws: Workspace) -> dict[str, np.ndarray]:
    h, rates, jre, jim = [], [], [], []
    for t, _ in ws.groups():
        c = ws.need(ws.liouvillian_path(t), f"Liouvillian report at t={t}")["canonical"]
        coeffs = io.decode_matrix(c["jump_coeffs"])
        h.append(c["h"])
        rates.append(c["rates"])
        jre.append(coeffs.real)
        jim.append(coeffs.imag)
    return {"h": np.array(h), "rates": np.array(rates), "jump_re": np.array(jre), "jump_im": np.array(jim)}


def cmd_bootstrap(cfg: ExperimentConfig, jobs: int = 1) -> int:
    ws = Workspace(cfg)
    groups = ws.groups()
    spam_ds = ws.spam_dataset()
    original = _original_observables(ws)
    chain = ChainReplica(cfg.settings(), tuple(len(g) for _, g in groups), cfg.seeds()["fit"])
    datasets = flatten_datasets(spam_ds, [g for _, g in groups])
    rep = bootstrap(chain, datasets, cfg.bootstrap_replicas, cfg.seeds()["bootstrap"], original, jobs)
    failed = {f["seed"]: f["error"] for f in rep.failures}
    k_ok = 0
    for k, s in enumerate(rep.seeds):
        path = ws.boot / f"replica_{k:03d}"
        if s in failed:
            ws.write(path / "failure.json", {"seed": s, "error": failed[s]})
            continue
        ws.write(path / "observables.json", {"seed": s, **{n: v[k_ok].tolist() for n, v in rep.replicas.items()}})
        k_ok += 1
    out = rep.to_dict()
    errs = rep.errors
    out["witness"] = [{"time": t, "verdict": markovianity_witness(original["rates"][k], errs["rates"][k])}
                      for k, (t, _) in enumerate(groups)]
    ws.write(ws.boot / "report.json", out)
    return 0


# --- report ----------------------------------------------------------------

def _write_csv(path: Path, header: list[str], rows, provenance: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={provenance['config_hash']} seed={provenance['seed']}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def cmd_report(cfg: ExperimentConfig, jobs: int = 1) -> int:
    ws = Workspace(cfg)
    groups = ws.groups()
    boot = ws.need(ws.boot / "report.json", "bootstrap report")
    summary = ws.need(ws.fit / "summary.json", "fit summary")
    errs = {k: np.array(v["error"]) for k, v in boot["observables"].items()}
    truth = ws.ground_truth()
    basis = pauli_basis(cfg.n_qubits)
    labels = ["".join(l) for l in basis.labels[1:]]
    prov = ws.provenance()
    h_rows, rate_rows, jump_rows, spec_rows = [], [], [], []
    for k, (t, _) in enumerate(groups):
        rep = ws.need(ws.liouvillian_path(t), f"Liouvillian report at t={t}")
        c = rep["canonical"]
        target = truth["times"][k]["canonical"] if truth else None
        for mu, lab in enumerate(labels):
            h_rows.append([mu + 1, lab, t, _fmt(c["h"][mu]), _fmt(target["h"][mu] if target else None),
                           _fmt(errs["h"][k][mu])])
        for r, rate in enumerate(c["rates"]):
            rate_rows.append([t, r, _fmt(rate), _fmt(target["rates"][r] if target else None),
                              _fmt(errs["rates"][k][r])])
        coeffs = io.decode_matrix(c["jump_coeffs"])
        tcoeffs = io.decode_matrix(target["jump_coeffs"]) if target else None
        for r in range(coeffs.shape[0]):
            for mu, lab in enumerate(labels):
                tv = tcoeffs[r, mu] if target else None
                jump_rows.append([t, r, mu + 1, lab, _fmt(coeffs[r, mu].real), _fmt(coeffs[r, mu].imag),
                                  _fmt(None if tv is None else tv.real), _fmt(None if tv is None else tv.imag),
                                  _fmt(errs["jump_re"][k][r, mu]), _fmt(errs["jump_im"][k][r, mu])])
        retrieved = LiouvillianParams.from_dict(rep["fit"]["params"]).superoperator(basis)
        if truth:
            comp = spectrum_compare(retrieved, io.decode_matrix(truth["times"][k]["generator"]))
            for re, im, source, pair in comp.rows():
                spec_rows.append([t, repr(re), repr(im), "retrieved" if source == "first" else "target", pair])
        else:
            for pair, lam in enumerate(np.linalg.eigvals(retrieved)):
                spec_rows.append([t, repr(float(lam.real)), repr(float(lam.imag)), "retrieved", pair])
    _write_csv(ws.report / "hamiltonian_components.csv", ["mu", "label", "t", "retrieved", "target", "error"],
               h_rows, prov)
    _write_csv(ws.report / "rates.csv", ["t", "rank", "retrieved", "target", "error"], rate_rows, prov)
    _write_csv(ws.report / "jump_components.csv",
               ["t", "jump", "mu", "label", "re", "im", "target_re", "target_im", "error_re", "error_im"],
               jump_rows, prov)
    _write_csv(ws.report / "spectrum.csv", ["t", "re", "im", "source", "pair_id"], spec_rows, prov)
    r2_rows = [["spam", "", _fmt(summary["r2_spam"])]]
    for row in summary["times"]:
        r2_rows.append(["map", row["time"], _fmt(row["r2_map"])])
        r2_rows.append(["liouvillian", row["time"], _fmt(row["r2_liouvillian"])])
    _write_csv(ws.report / "r2_summary.csv", ["stage", "t", "r2"], r2_rows, prov)
    return 0


# --- entry point -----------------------------------------------------------

COMMANDS = {"synth": cmd_synth, "bootstrap": cmd_bootstrap, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qlt", description="Liouvillian tomography from Pauli-string data.")
    p.add_argument("command", choices=["synth", "fit", "bootstrap", "report"])
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--stage", choices=["spam", "map", "liouvillian", "all"], default="all",
                   help="fit stage (fit command only)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--output", default=None, help="override output_dir")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.output)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.command == "fit":
            return cmd_fit(cfg, args.stage, args.jobs)
        return COMMANDS[args.command](cfg, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except MissingArtifact as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return 3
    except (OSError, DatasetError, KeyError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    except (QLTError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
