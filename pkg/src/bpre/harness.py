"""Run configuration, experiment dispatch, and deterministic output files.

A run is described by a TOML config (or CLI flags), dispatched to the
estimator modules, and emitted as results.jsonl plus summary.csv. All
deterministic fields are byte-stable for a fixed (config, seed) pair, no
matter how many batches the work is split into; wall-clock timings are the
single volatile field and live under the "wall_time" key only.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, fields as dc_fields

import numpy as np

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 path
    import tomli as tomllib

from . import estimators as es
from . import walk
from .env_model import (DEFAULT_PARAMS, ModelParams, as_table, params_from_dict,
                        params_hash, validate)
from .errors import BpreError, ParseError, ValidationError
from .mixture import ISConfig
from .streams import ALGORITHM, split_streams  # noqa: F401  (re-export)

__all__ = [
    "EXPERIMENTS", "RunConfig", "ResultRecord", "parse_config", "config_hash",
    "run", "split_streams",
]

EXPERIMENTS = ("validate", "survival", "walk-diag", "c0", "yaglom", "bigjump")

# sweep experiments get these horizons when none are configured
DEFAULT_N = {
    "survival": (5,),
    "walk-diag": (30,),
    "c0": (30, 60),
    "yaglom": (60,),
    "bigjump": (60,),
}
YAGLOM_GRID = tuple(np.linspace(0.0, 1.0, 11))
SERIES_J_MAX = 20
PI_J_MAX = 8
NAIVE_HORIZON = 20  # survival_naive is skipped past this


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on, plus where its files go."""

    model: ModelParams = DEFAULT_PARAMS
    experiment: str = "validate"
    n_list: tuple = ()
    samples: int = 200_000
    seed: int = 0
    batches: int = 1
    is_config: ISConfig | None = None
    out_dir: str | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(
                f"experiment must be one of {EXPERIMENTS}, "
                f"got {self.experiment!r}")
        if self.samples < 1:
            raise ValidationError("samples must be at least 1")
        if self.batches < 1:
            raise ValidationError("batches must be at least 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValidationError("seed must fit in 64 unsigned bits")
        ns = tuple(int(n) for n in self.n_list)
        if self.experiment != "validate" and not ns:
            ns = DEFAULT_N[self.experiment]
        if any(n < 0 for n in ns):
            raise ValidationError("horizons must be nonnegative")
        object.__setattr__(self, "n_list", ns)

    def canonical(self) -> dict:
        """Deterministic dict of everything that affects the numbers.

        batches and out_dir are excluded: the first cannot change any
        estimate (counter-based streams), the second is routing.
        """
        d = {
            "experiment": self.experiment,
            "model": {f.name: getattr(self.model, f.name)
                      for f in dc_fields(self.model)},
            "n_list": list(self.n_list),
            "samples": int(self.samples),
            "seed": int(self.seed),
        }
        if self.is_config is not None:
            law = self.is_config.jump_index_law
            d["is_config"] = {
                "mixture_weight": self.is_config.mixture_weight,
                "jump_index_law": list(law) if isinstance(law, tuple) else law,
                "delta": self.is_config.delta,
            }
        return d


@dataclass(frozen=True)
class ResultRecord:
    experiment: str
    config_hash: str
    config: dict
    records: tuple
    version: str
    algorithm: str
    wall_time: float


def config_hash(config: RunConfig) -> str:
    blob = json.dumps(config.canonical(), sort_keys=True,
                      separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# TOML parsing

_LINE_COL = re.compile(r"\(at line (\d+), column (\d+)\)")
_TOP_KEYS = {"experiment", "n", "n_list", "samples", "seed", "batches",
             "out", "model", "is_config"}


def _parse_error(exc: Exception) -> ParseError:
    msg = str(exc)
    m = _LINE_COL.search(msg)
    err = ParseError(msg)
    err.line = int(m.group(1)) if m else None
    err.column = int(m.group(2)) if m else None
    return err


def parse_config(text: str, experiment: str | None = None) -> RunConfig:
    """TOML text to a validated RunConfig.

    Malformed TOML (including duplicate keys) raises ParseError carrying
    line/column when the parser reports them; structurally valid TOML with
    bad values raises ValidationError with the model error as its cause.
    An explicit `experiment` argument (the CLI subcommand) overrides the
    config's own key.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise _parse_error(exc) from exc

    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ParseError(f"unknown top-level keys: {sorted(unknown)}")
    if "n" in doc and "n_list" in doc:
        raise ParseError("give n or n_list, not both")

    try:
        model = params_from_dict(doc.get("model", {}))
        validate(model)
    except BpreError as exc:
        raise ValidationError(f"model rejected: {exc}") from exc

    is_config = None
    if "is_config" in doc:
        try:
            raw = dict(doc["is_config"])
            law = raw.get("jump_index_law", "uniform")
            if isinstance(law, list):
                law = tuple(law)
            is_config = ISConfig(
                mixture_weight=float(raw.pop("mixture_weight", 0.5)),
                jump_index_law=law,
                delta=float(raw.pop("delta", 0.5)),
            )
            raw.pop("jump_index_law", None)
            if raw:
                raise ParseError(f"unknown keys in [is_config]: {sorted(raw)}")
        except BpreError:
            raise
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"is_config rejected: {exc}") from exc

    ns = doc.get("n_list", doc.get("n", ()))
    if isinstance(ns, int):
        ns = (ns,)
    try:
        return RunConfig(
            model=model,
            experiment=experiment or doc.get("experiment", "validate"),
            n_list=tuple(ns),
            samples=int(doc.get("samples", 200_000)),
            seed=int(doc.get("seed", 0)),
            batches=int(doc.get("batches", 1)),
            is_config=is_config,
            out_dir=doc.get("out"),
        )
    except BpreError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from exc


# ---------------------------------------------------------------------------
# experiment plans

def _with_method(est, method: str):
    return es.Estimate(est.value, est.stderr, est.n_samples, method,
                       seed=est.seed, n=est.n)


def _plan(cfg: RunConfig, table):
    """Yield zero-argument callables, each returning one Estimate."""
    mix = cfg.is_config if cfg.is_config is not None else ISConfig()
    s, seed, b = cfg.samples, cfg.seed, cfg.batches

    if cfg.experiment == "survival":
        for n in cfg.n_list:
            if n <= NAIVE_HORIZON:
                yield lambda n=n: es.survival_naive(table, n, s, seed=seed,
                                                    batches=b)
            yield lambda n=n: es.survival_quenched_mean(table, n, s,
                                                        seed=seed, batches=b)
            yield lambda n=n: es.survival_tilted(table, n, s, seed=seed,
                                                 batches=b)
            yield lambda n=n: es.survival_tilted(table, n, s, is_config=mix,
                                                 seed=seed, batches=b)
    elif cfg.experiment == "walk-diag":
        for n in cfg.n_list:
            def both(n=n):
                hi, lo = walk.lemma1_ratio(table, 1.0, n, s, seed=seed,
                                           batches=b)
                return [hi, lo]
            yield both
            yield lambda n=n: walk.two_jump_prob(table, n, samples=s,
                                                 seed=seed, batches=b)
    elif cfg.experiment == "c0":
        for n in cfg.n_list:
            yield lambda n=n: es.c0_direct(table, n, s, is_config=mix,
                                           seed=seed, batches=b)
        yield lambda: es.c0_series(table, SERIES_J_MAX, min(s, 4_000),
                                   seed=seed, batches=b)
    elif cfg.experiment == "yaglom":
        for n in cfg.n_list:
            def curve(n=n):
                ests = es.yaglom_omega(table, YAGLOM_GRID, n, s,
                                       is_config=mix, seed=seed, batches=b)
                return [_with_method(e, f"yaglom-s{sv:g}")
                        for sv, e in zip(YAGLOM_GRID, ests)]
            yield curve
    elif cfg.experiment == "bigjump":
        for n in cfg.n_list:
            def kappa(n=n):
                ka = es.kappa_law(table, n, s, is_config=mix, seed=seed,
                                  batches=b)
                out = [
                    es.Estimate(ka.no_jump_mass, ka.no_jump_stderr, s,
                                "kappa-nojump", seed=seed, n=n),
                    es.Estimate(ka.multi_jump_mass, ka.multi_jump_stderr, s,
                                "kappa-multi", seed=seed, n=n),
                ]
                for j in range(min(PI_J_MAX, n)):
                    out.append(es.Estimate(
                        float(ka.conditional_masses[j]),
                        float(ka.conditional_stderr[j]), s,
                        f"kappa-cond-{j + 1}", seed=seed, n=n))
                return out
            yield kappa

            def fluct(n=n):
                fl = es.jump_fluctuation(table, n, 2, s, seed=seed, batches=b)
                return [
                    es.Estimate(fl.weighted_mean(), fl.mean_stderr(), s,
                                "fluct-mean", seed=seed, n=n),
                    es.Estimate(fl.cdf(0.0), fl.cdf_stderr(0.0), s,
                                "fluct-cdf0", seed=seed, n=n),
                ]
            yield fluct

        def pis():
            pi = es.pi_j(table, PI_J_MAX, min(s, 4_000), seed=seed, batches=b)
            return [es.Estimate(float(v), float(se), pi.samples,
                                f"pi-{j + 1}", seed=seed)
                    for j, (v, se) in enumerate(zip(pi.values, pi.stderr))]
        yield pis


# ---------------------------------------------------------------------------
# output files

class _Writer:
    def __init__(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        self.path_jsonl = os.path.join(out_dir, "results.jsonl")
        self.path_csv = os.path.join(out_dir, "summary.csv")
        self._f = open(self.path_jsonl, "w", encoding="utf-8")

    def line(self, obj: dict):
        self._f.write(json.dumps(obj, sort_keys=True) + "\n")
        self._f.flush()

    def truncation(self, reason: str):
        self.line({"type": "truncated", "reason": reason})

    def summary(self, records):
        rows = [r for r in records if "method" in r]
        rows.sort(key=lambda r: (r["method"], r["n"] if r["n"] is not None
                                 else -1))
        with open(self.path_csv, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(["method", "n", "value", "stderr", "samples", "seed"])
            for r in rows:
                w.writerow([r["method"],
                            "" if r["n"] is None else r["n"],
                            repr(r["value"]), repr(r["stderr"]),
                            r["samples"], r["seed"]])

    def close(self):
        self._f.close()


def run(config: RunConfig) -> ResultRecord:
    """Execute one experiment; returns the record and writes files if asked.

    Output is bit-identical across reruns and across batch counts except
    for the wall_time values. On an estimator error the JSONL written so
    far is kept and a truncation-marker line is appended before the error
    propagates.
    """
    table = as_table(config.model)
    chash = config_hash(config)
    try:
        from bpre import __version__ as version
    except ImportError:  # pragma: no cover
        version = "0"
    writer = _Writer(config.out_dir) if config.out_dir else None
    header = {
        "type": "run",
        "experiment": config.experiment,
        "config": config.canonical(),
        "config_hash": chash,
        "version": version,
        "algorithm": ALGORITHM,
    }
    records = [header]
    if writer:
        writer.line(header)
    t_run = time.perf_counter()
    try:
        if config.experiment == "validate":
            rec = {"type": "model", "params_hash": params_hash(table)}
            rec.update({k: v for k, v in table.as_dict().items()
                        if not isinstance(v, dict)})
            records.append(rec)
            if writer:
                writer.line(rec)
        else:
            for step in _plan(config, table):
                t0 = time.perf_counter()
                out = step()
                ests = out if isinstance(out, list) else [out]
                dt = time.perf_counter() - t0
                for est in ests:
                    rec = es.record_estimate(table, est,
                                             wall_time=round(dt, 6))
                    records.append(rec)
                    if writer:
                        writer.line(rec)
    except BaseException as exc:
        if writer:
            writer.truncation(f"{type(exc).__name__}: {exc}")
            writer.close()
        raise
    if writer:
        writer.summary(records)
        writer.close()
    return ResultRecord(
        experiment=config.experiment,
        config_hash=chash,
        config=config.canonical(),
        records=tuple(records),
        version=version,
        algorithm=ALGORITHM,
        wall_time=time.perf_counter() - t_run,
    )
