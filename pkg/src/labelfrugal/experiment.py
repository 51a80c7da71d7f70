"""Experiment grids: every (labeling rate, strategy, seed) cell is one AL run.

A config is a nested dict (see ``DEFAULTS``). ``run_grid`` writes one JSONL
record file per cell under ``<out>/records``, plus ``results.csv`` and
``results.txt`` with mean and std of the final-round accuracy over seeds.
"""

import copy
import csv
import io
import json
import logging
import math
import os
import tempfile
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .display import GAMMA_MODES
from .invertible import ActivationSpec, save_checkpoint
from .learner import ActiveLearner
from .skeleton import load_dataset, make_pool, synth_pool
from .strategies import STRATEGIES

log = logging.getLogger(__name__)

OUT_ENV = "LABELFRUGAL_OUT"
REPORT_HEADER = ("rate", "strategy", "seed", "round", "accuracy")
TABLE_HEADER = ("rate", "strategy", "mean", "std", "seeds", "failed")

DEFAULTS = {
    "data": None,
    "format": "jsonl",
    "synth": {"classes": 8, "per_class": 30, "joints": 6, "frames": 16, "noise": 3.0,
              "test_per_class": 20},
    "chunks": 4,
    "strategies": list(STRATEGIES),
    "rates": [0.15],
    "seeds": [0, 1, 2],
    "seed": 0,
    "classifier": "latent",
    "display": {"K": 12, "tol": 1e-6, "max_iters": 200, "sigma_ratio": 2.0,
                "gamma_mode": "adaptive"},
    "net": {"depth": 3, "dim": None, "u": 0.99, "l": 0.95, "lambda": None},
    "train": {"epochs": 500, "batch": 200, "lr0": 0.01, "momentum": 0.9},
    "out": None,
    "jobs": 1,
    "save_models": False,
}


class ConfigError(ValueError):
    """The configuration is malformed or violates a module precondition."""


def merge(base, override):
    """Recursive dict merge; ``override`` wins, ``None`` sub-dicts are ignored."""
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if key not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[key], dict) and base[key] is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"{key!r} must be an object")
            for sub in value:
                if sub not in base[key] and key != "synth":
                    raise ConfigError(f"unknown config key {key}.{sub}")
            out[key] = {**base[key], **value}
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_gamma(mode):
    """``adaptive``, ``mean``, ``nearest`` or ``fixed:<value>``."""
    if isinstance(mode, (int, float)) and not isinstance(mode, bool):
        value = float(mode)
    elif isinstance(mode, str) and mode in GAMMA_MODES:
        return mode
    elif isinstance(mode, str) and mode.startswith("fixed:"):
        try:
            value = float(mode[len("fixed:"):])
        except ValueError:
            raise ConfigError(f"bad gamma value in {mode!r}") from None
    else:
        raise ConfigError(f"gamma_mode must be one of {GAMMA_MODES} or fixed:<value>, got {mode!r}")
    if not value > 0 or not math.isfinite(value):
        raise ConfigError("a fixed gamma must be positive and finite")
    return value


def _positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}")
    return value


def _positive(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
        raise ConfigError(f"{name} must be a positive number")
    return float(value)


@dataclass
class ExperimentConfig:
    data: str | None
    format: str
    synth: dict
    chunks: int
    strategies: list
    rates: list
    seeds: list
    seed: int
    classifier: str
    display: dict
    net: dict
    train: dict
    out: str
    jobs: int = 1
    save_models: bool = False

    @classmethod
    def from_dict(cls, doc):
        """Merge ``doc`` over the defaults and validate every field."""
        if not isinstance(doc, dict):
            raise ConfigError("a config must be a JSON object")
        try:
            return cls._validated(merge(DEFAULTS, doc))
        except TypeError as exc:
            raise ConfigError(f"wrong value type: {exc}") from None

    @classmethod
    def _validated(cls, c):
        if c["out"] is None:
            c["out"] = os.environ.get(OUT_ENV, "labelfrugal-out")
        if c["data"] is None:
            s = c["synth"]
            unknown = set(s) - set(DEFAULTS["synth"])
            if unknown:
                raise ConfigError(f"unknown synth keys {sorted(unknown)}")
            for key in ("classes", "per_class", "joints", "frames"):
                _positive_int(s[key], f"synth.{key}")
            _positive_int(s["test_per_class"], "synth.test_per_class", 0)
            if isinstance(s["noise"], bool) or not isinstance(s["noise"], (int, float)) or s["noise"] < 0:
                raise ConfigError("synth.noise must be a non-negative number")
        elif c["format"] not in ("jsonl", "sbu"):
            raise ConfigError("format must be jsonl or sbu")
        _positive_int(c["chunks"], "chunks")
        if not c["strategies"]:
            raise ConfigError("strategies is empty")
        for s in c["strategies"]:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}; expected one of {STRATEGIES}")
        if len(set(c["strategies"])) != len(c["strategies"]):
            raise ConfigError("duplicate strategies")
        if not c["rates"]:
            raise ConfigError("rates is empty")
        for r in c["rates"]:
            if isinstance(r, bool) or not isinstance(r, (int, float)) or not 0 < r <= 1:
                raise ConfigError(f"labeling rate {r!r} outside (0, 1]")
        if not c["seeds"]:
            raise ConfigError("seeds is empty")
        for s in c["seeds"]:
            _positive_int(s, "seeds entries", 0)
        if len(set(c["seeds"])) != len(c["seeds"]):
            raise ConfigError("duplicate seeds")
        _positive_int(c["seed"], "seed", 0)
        if c["classifier"] not in ("latent", "gcn"):
            raise ConfigError("classifier must be latent or gcn")
        d = c["display"]
        _positive_int(d["K"], "display.K")
        _positive(d["tol"], "display.tol")
        _positive_int(d["max_iters"], "display.max_iters")
        _positive(d["sigma_ratio"], "display.sigma_ratio")
        d["gamma_mode"] = parse_gamma(d["gamma_mode"])
        n = c["net"]
        _positive_int(n["depth"], "net.depth", 2)
        if n["dim"] is not None:
            _positive_int(n["dim"], "net.dim")
        try:
            ActivationSpec(float(n["u"]), float(n["l"]))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"net.u / net.l: {exc}") from None
        if n["lambda"] is not None and (isinstance(n["lambda"], bool) or not n["lambda"] >= 0):
            raise ConfigError("net.lambda must be non-negative")
        t = c["train"]
        _positive_int(t["epochs"], "train.epochs")
        _positive_int(t["batch"], "train.batch")
        _positive(t["lr0"], "train.lr0")
        if isinstance(t["momentum"], bool) or not 0 <= t["momentum"] < 1:
            raise ConfigError("train.momentum must be in [0, 1)")
        _positive_int(c["jobs"], "jobs")
        return cls(**c)

    def to_dict(self):
        return {k: copy.deepcopy(getattr(self, k)) for k in DEFAULTS}


# -- data ---------------------------------------------------------------------

def cell_stream(master, seed, purpose):
    """Deterministic integer seed for one experiment seed and purpose."""
    ss = np.random.SeedSequence([int(master), int(seed), int(purpose)])
    return int(ss.generate_state(1)[0])


def load_pool(config, seed):
    """The pool for one experiment seed (synthetic pools are redrawn per seed)."""
    target = config.net["dim"]
    if config.data is not None:
        return load_dataset(config.data, config.format, chunks=config.chunks, target_dim=target)
    s = config.synth
    pool = synth_pool(s["classes"], s["per_class"], s["joints"], s["frames"], s["noise"],
                      cell_stream(config.seed, seed, 0), test_per_class=s["test_per_class"],
                      chunks=config.chunks)
    if target is not None:
        pool = make_pool(pool.sequences, pool.topology, config.chunks, target)
    return pool


def check_pool(config, pool):
    """Preconditions that need the data: display size and net width."""
    train, _ = pool.train_test()
    if config.display["K"] > train.n:
        raise ConfigError(f"display.K={config.display['K']} exceeds the pool size {train.n}")
    if config.net["dim"] is not None and config.net["dim"] != pool.p:
        raise ConfigError(f"net.dim={config.net['dim']} does not match the feature count {pool.p}")


def make_learner(config, strategy, rate, seed, gcn_params=None):
    d, n, t = config.display, config.net, config.train
    return ActiveLearner(
        strategy=strategy, labeling_rate=rate, display_size=d["K"], display_tol=d["tol"],
        display_max_iter=d["max_iters"], sigma_ratio=d["sigma_ratio"], gamma=d["gamma_mode"],
        depth=n["depth"], u=n["u"], l=n["l"], lam=n["lambda"], epochs=t["epochs"],
        batch_size=t["batch"], lr=t["lr0"], momentum=t["momentum"],
        classifier=config.classifier, gcn_params=gcn_params,
        random_state=cell_stream(config.seed, seed, 1))


# -- records ------------------------------------------------------------------

def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temp file in the same directory."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cell_name(rate, strategy, seed):
    return f"rate{rate!r}_{strategy}_seed{seed}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass
class CellResult:
    rate: float
    strategy: str
    seed: int
    accuracy: float | None = None
    rounds: int = 0
    error: str | None = None

    @property
    def failed(self):
        return self.error is not None


def run_cell(config, rate, strategy, seed, records_dir, models_dir=None):
    """Play one AL run; round records are rewritten atomically after each round."""
    path = Path(records_dir) / f"{cell_name(rate, strategy, seed)}.jsonl"
    lines = []

    def on_round(record):
        rec = {"rate": rate, "strategy": strategy, "seed": seed, **_jsonable(record)}
        lines.append(json.dumps(rec, sort_keys=True))
        atomic_write(path, "\n".join(lines) + "\n")

    try:
        pool = load_pool(config, seed)
        check_pool(config, pool)
        train, test = pool.train_test()
        gcn_params = None
        if config.classifier == "gcn":
            graph = pool.graphs[0]
            gcn_params = {"adjacency": graph.adjacency, "descriptor_size": graph.s}
        learner = make_learner(config, strategy, rate, seed, gcn_params)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            learner.fit(train.features, train.labels, eval_set=(test.features, test.labels),
                        on_round=on_round)
        if models_dir is not None:
            mapper = learner.run_.classifier["mapper"]
            save_checkpoint(mapper.net_, Path(models_dir) / f"{cell_name(rate, strategy, seed)}.json",
                            mapper.head_, mapper.classes_)
        return CellResult(rate, strategy, seed, learner.accuracy_trace_[-1],
                          len(learner.accuracy_trace_))
    except Exception as exc:  # a failed cell never stops the grid
        log.warning("cell %s failed: %s", cell_name(rate, strategy, seed), exc)
        msg = f"{type(exc).__name__}: {exc}"
        lines.append(json.dumps({"rate": rate, "strategy": strategy, "seed": seed,
                                 "status": "failed", "error": msg,
                                 "traceback": traceback.format_exc()}, sort_keys=True))
        try:
            atomic_write(path, "\n".join(lines) + "\n")
        except OSError:
            pass
        return CellResult(rate, strategy, seed, error=msg)


def _run_cell_job(args):
    return run_cell(*args)


# -- tables -------------------------------------------------------------------

@dataclass
class ResultTable:
    """Rows keyed by (rate, strategy): mean and std of final accuracy over seeds."""

    rows: list = field(default_factory=list)

    @classmethod
    def from_cells(cls, cells, rates, strategies, seeds):
        rows = []
        for rate in rates:
            for strategy in strategies:
                got = {c.seed: c for c in cells if c.rate == rate and c.strategy == strategy}
                acc = [got[s].accuracy for s in seeds if s in got and not got[s].failed]
                failed = sum(1 for s in seeds if s not in got or got[s].failed)
                mean = float(np.mean(acc)) if acc else float("nan")
                std = float(np.std(acc)) if acc else float("nan")
                rows.append({"rate": rate, "strategy": strategy, "mean": mean, "std": std,
                             "seeds": len(acc), "failed": failed})
        return cls(rows)

    def lookup(self, rate, strategy):
        for row in self.rows:
            if row["rate"] == rate and row["strategy"] == strategy:
                return row
        raise KeyError((rate, strategy))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for r in self.rows:
            w.writerow([repr(r["rate"]), r["strategy"], repr(r["mean"]), repr(r["std"]),
                        r["seeds"], r["failed"]])
        return buf.getvalue()

    def to_text(self):
        width = max([len("strategy")] + [len(r["strategy"]) for r in self.rows])
        out = [f"{'rate':>6}  {'strategy':<{width}}  accuracy (mean +/- std)  seeds"]
        for r in self.rows:
            cell = "failed" if r["seeds"] == 0 else f"{100 * r['mean']:6.2f} +/- {100 * r['std']:5.2f}"
            out.append(f"{100 * r['rate']:5.1f}%  {r['strategy']:<{width}}  {cell:<23}  {r['seeds']}"
                       + (f" ({r['failed']} failed)" if r["failed"] else ""))
        return "\n".join(out) + "\n"


@dataclass
class GridOutcome:
    table: ResultTable
    cells: list
    out: Path

    @property
    def n_failed(self):
        return sum(c.failed for c in self.cells)


def preflight(config):
    """Check the data-dependent preconditions for every seed before any cell runs.

    Raises :class:`ConfigError` on a violated precondition; unreadable data
    surfaces as ``OSError`` or a dataset format error.
    """
    seeds = config.seeds[:1] if config.data is not None else config.seeds
    for seed in seeds:
        check_pool(config, load_pool(config, seed))


def run_grid(config):
    """Run every cell of the grid and write records, table CSV and table text."""
    preflight(config)
    out = Path(config.out)
    records = out / "records"
    records.mkdir(parents=True, exist_ok=True)
    for stale in records.glob("*.jsonl"):  # records of an earlier run in this directory
        stale.unlink()
    models = None
    if config.save_models:
        models = out / "models"
        models.mkdir(exist_ok=True)
    atomic_write(out / "config.json", json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    jobs = [(config, rate, strategy, seed, records, models)
            for rate in config.rates for strategy in config.strategies for seed in config.seeds]
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as ex:
            cells = list(ex.map(_run_cell_job, jobs))
    else:
        cells = [run_cell(*job) for job in jobs]
    table = ResultTable.from_cells(cells, config.rates, config.strategies, config.seeds)
    atomic_write(out / "results.csv", table.to_csv())
    atomic_write(out / "results.txt", table.to_text())
    return GridOutcome(table, cells, out)


# -- report -------------------------------------------------------------------

def read_records(records_dir):
    """Round records from every ``*.jsonl`` file, sorted by (rate, strategy, seed, round).

    Unparseable lines and failure markers are skipped with a warning.
    """
    rows = []
    for path in sorted(Path(records_dir).glob("*.jsonl")):
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    if rec.get("status") == "failed":
                        continue
                    row = (float(rec["rate"]), str(rec["strategy"]), int(rec["seed"]),
                           int(rec["round"]), float(rec["accuracy"]))
                except (ValueError, KeyError, TypeError, AttributeError) as exc:
                    warnings.warn(f"{path.name}:{lineno}: skipped corrupt record ({exc})",
                                  stacklevel=2)
                    continue
                rows.append(row)
    rows.sort(key=lambda r: r[:4])
    return rows


def report(records_dir, out_csv):
    """Write the long-format CSV ``rate, strategy, seed, round, accuracy``."""
    rows = read_records(records_dir)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for rate, strategy, seed, rnd, acc in rows:
        w.writerow([repr(rate), strategy, seed, rnd, repr(acc)])
    atomic_write(out_csv, buf.getvalue())
    return rows


def table_from_records(rows, rates=None, strategies=None, seeds=None):
    """Rebuild a :class:`ResultTable` from report rows (last round per cell)."""
    last = {}
    for rate, strategy, seed, rnd, acc in rows:
        key = (rate, strategy, seed)
        if key not in last or rnd > last[key][0]:
            last[key] = (rnd, acc)
    rates = rates or sorted({k[0] for k in last})
    strategies = strategies or sorted({k[1] for k in last})
    seeds = seeds or sorted({k[2] for k in last})
    cells = [CellResult(r, s, sd, acc, rnd + 1) for (r, s, sd), (rnd, acc) in last.items()]
    return ResultTable.from_cells(cells, rates, strategies, seeds)
