"""Experiment orchestration: configuration, datasets, training, evaluation, reports.

A dataset directory holds ``manifest.json`` and one ``instances/<name>.json``
file per instance. Training writes ``fixmodels.npz`` and ``qnet.npz`` plus CSV
reports into a model directory. Evaluation writes ``results.csv``,
``traces.csv`` and ``lpstar.csv``; ``report`` turns those into summary tables
and plot data.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .drl import Episode, QNetwork, RlHyper, infer, train_rl
from .exceptions import ConfigError, DataError
from .learn import PropFixer, label_dataset
from .learn.prop import solve_prop
from .metrics import GapTrace, ResultRow, final_gap, first_incumbent_time, gap_at, primal_integral, read_results, write_results
from .scp import (
    NoiseParams,
    ScpInstance,
    ScpTopology,
    SnapshotParams,
    build_mip,
    generate_instances,
    generate_snapshots,
    random_topology,
)
from .solve import LpModel, SolveClock, SolveLimits, solve_mip

log = logging.getLogger(__name__)

METHODS = ("OPT", "PROPb", "PROP", "PROPEL")
LONG_BASELINE = "OPT-long"
DATASET_SCHEMA = "propel-dataset/1"
ENV_PREFIX = "PROPEL_"


@dataclass(frozen=True)
class RunConfig:
    """Every knob of one experiment. Budgets are in seconds at ``scale=1``."""

    seed: int = 0
    scale: float = 1.0
    # topology
    n_products: int = 20
    n_parts: int = 10
    n_periods: int = 8
    n_groups: int = 4
    min_parts_per_product: int = 2
    max_parts_per_product: int = 4
    groups_per_part: int = 3
    # demand and costs
    n_snapshots: int = 20
    base_level: float = 60.0
    capacity_ratio: float = 0.5
    capacity_jitter: float = 0.3
    gauss_mean_scale: float = 0.0
    gauss_sd_scale: float = 0.15
    uniform_halfwidth: float = 0.2
    noise_absolute: bool = False
    demand_window: int = 1
    # counts at scale 1
    train_sl: int = 500
    train_rl: int = 100
    test: int = 60
    extra_test: int = 0
    # budgets at scale 1
    prop_budget: float = 600.0
    total_budget: float = 1000.0
    step_budget: float = 100.0
    label_budget: float = 2000.0  # clock units, not scaled
    ticks_per_second: float = 1.0
    deterministic_clock: bool = True
    rel_gap: float = 0.01
    # supervised part
    tau: float = 0.9
    rc_sign: int = 1
    rc_scale: str = "max_abs"
    weights_by_value: bool = False
    shared_model: bool = False
    lr_grid: tuple = (0.001, 0.005)
    layer_grid: tuple = (3, 4)
    hidden_grid: tuple = (32, 64, 128)
    epochs: int = 100
    batch: int = 32
    # reinforcement part
    m: int = 8
    t_max: int = 4
    gamma: float = 0.99
    alpha: float = 0.1
    rl_lr: float = 0.001
    tolerance: float = 0.01
    rl_episodes: int = 0  # 0: one episode per selected instance
    reward_mode: str = "objective"
    normalize_reward: bool = True
    methods: tuple = METHODS
    workers: int = 1

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigError("scale must be positive")
        for k in ("prop_budget", "total_budget", "step_budget", "label_budget", "ticks_per_second"):
            if getattr(self, k) <= 0:
                raise ConfigError(f"{k} must be positive")
        for k in ("train_sl", "train_rl", "test"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be at least 1")
        if self.extra_test < 0 or self.workers < 1:
            raise ConfigError("extra_test must be >= 0 and workers >= 1")
        if not 0 < self.tau < 1:
            raise ConfigError("tau must lie in (0, 1)")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if self.rc_scale != "max_abs":
            try:
                if float(self.rc_scale) <= 0:
                    raise ValueError
            except ValueError:
                raise ConfigError("rc_scale must be 'max_abs' or a positive number") from None
        if self.demand_window < 1:
            raise ConfigError("demand_window must be at least 1")

    # -- derived -----------------------------------------------------------

    def count(self, name: str) -> int:
        return max(1, int(math.floor(getattr(self, name) * self.scale + 1e-9)))

    def budget(self, name: str) -> float:
        return getattr(self, name) * self.scale * (self.ticks_per_second if self.deterministic_clock else 1.0)

    def limits(self, name: str) -> SolveLimits:
        return SolveLimits(self.budget(name), self.rel_gap, None, self.deterministic_clock)

    def label_limits(self) -> SolveLimits:
        return SolveLimits(self.label_budget, self.rel_gap, None, self.deterministic_clock)

    def fixer(self) -> PropFixer:
        scale = self.rc_scale if self.rc_scale == "max_abs" else float(self.rc_scale)
        return PropFixer(self.tau, True, scale, self.rc_sign, self.lr_grid, self.layer_grid, self.hidden_grid,
                         self.epochs, self.batch, 0.2, self.weights_by_value, self.demand_window, self.seed,
                         self.shared_model)

    def rl_hyper(self) -> RlHyper:
        return RlHyper(self.gamma, self.alpha, self.rl_lr, self.t_max, self.m, self.tolerance,
                       self.budget("step_budget"), self.rl_episodes or None, 32, 10_000, (128, 128),
                       self.reward_mode, self.normalize_reward, self.rel_gap, self.deterministic_clock)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in dataclasses.fields(self)}


def _coerce(name: str, raw: str, default):
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            if default and isinstance(default[0], (int, float)) and not isinstance(default[0], bool):
                kind = type(default[0])
                return tuple(kind(s) for s in items)
            return tuple(items)
        return text
    except ValueError:
        raise ConfigError(f"cannot read {name}={raw!r} as {type(default).__name__}") from None


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None,
                environ: dict | None = None) -> RunConfig:
    """Read a key-value file (``[propel]`` section), then ``PROPEL_*`` variables, then overrides."""
    defaults = RunConfig()
    fields = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(RunConfig)}
    values: dict = {}
    if path is not None:
        cp = configparser.ConfigParser()
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except configparser.Error as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
        if cp.sections() and cp.sections() != ["propel"]:
            raise ConfigError(f"config file {path}: only a [propel] section is allowed")
        if cp.has_section("propel"):
            for k, v in cp.items("propel"):
                if k not in fields:
                    raise ConfigError(f"config file {path}: unknown key {k!r}")
                values[k] = _coerce(k, v, fields[k])
    env = os.environ if environ is None else environ
    for k, v in env.items():
        if k.startswith(ENV_PREFIX):
            key = k[len(ENV_PREFIX):].lower()
            if key not in fields:
                raise ConfigError(f"environment variable {k} names no config key")
            values[key] = _coerce(key, v, fields[key])
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in fields:
            raise ConfigError(f"unknown config key {k!r}")
        values[k] = _coerce(k, v, fields[k]) if isinstance(v, str) else v
    return RunConfig(**{**fields, **values})


# -- dataset --------------------------------------------------------------

def _seed(cfg: RunConfig, tag: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, tag]).generate_state(1)[0])


def make_topology(cfg: RunConfig) -> ScpTopology:
    return random_topology(cfg.n_products, cfg.n_parts, cfg.n_periods, cfg.n_groups,
                           cfg.max_parts_per_product, _seed(cfg, 1), cfg.min_parts_per_product,
                           cfg.groups_per_part)


def make_splits(cfg: RunConfig) -> dict[str, list[ScpInstance]]:
    topo = make_topology(cfg)
    sp = SnapshotParams(base_level=cfg.base_level, capacity_ratio=cfg.capacity_ratio,
                        capacity_jitter=cfg.capacity_jitter)
    snaps = generate_snapshots(topo, cfg.n_snapshots, _seed(cfg, 2), sp)
    noise = NoiseParams(cfg.gauss_mean_scale, cfg.gauss_sd_scale, cfg.uniform_halfwidth, 0, _seed(cfg, 3),
                        cfg.noise_absolute)
    n_test = cfg.count("test") + cfg.extra_test
    return {
        "train_sl": generate_instances(snaps, cfg.count("train_sl"), noise, _seed(cfg, 4), "sl"),
        "train_rl": generate_instances(snaps, cfg.count("train_rl"), noise, _seed(cfg, 5), "rl"),
        "test": generate_instances(snaps, n_test, noise, _seed(cfg, 6), "test"),
    }


def write_dataset(cfg: RunConfig, out: str | os.PathLike, force: bool = False) -> dict[str, list[str]]:
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"{out} exists and is not empty; pass --force to overwrite")
    splits = make_splits(cfg)
    (out / "instances").mkdir(parents=True, exist_ok=True)
    names = {}
    for split, insts in splits.items():
        names[split] = [s.name for s in insts]
        for s in insts:
            (out / "instances" / f"{s.name}.json").write_text(s.dumps())
    manifest = {"schema": DATASET_SCHEMA, "config": cfg.to_dict(), "splits": names}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return names


def read_dataset(path: str | os.PathLike) -> tuple[dict, dict[str, list[ScpInstance]]]:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise DataError(f"{path} has no manifest.json; run 'generate' first") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}/manifest.json: {exc}") from None
    if manifest.get("schema") != DATASET_SCHEMA:
        raise DataError(f"{path}/manifest.json: unsupported schema {manifest.get('schema')!r}")
    splits = {}
    for split, names in manifest["splits"].items():
        insts = []
        for n in names:
            f = path / "instances" / f"{n}.json"
            try:
                insts.append(ScpInstance.loads(f.read_text()))
            except FileNotFoundError:
                raise DataError(f"instance file {f} is missing") from None
        splits[split] = insts
    return manifest, splits


# -- training -------------------------------------------------------------

def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in r])
    path.write_text(buf.getvalue())


def train(cfg: RunConfig, dataset: str | os.PathLike, out: str | os.PathLike) -> dict:
    _, splits = read_dataset(dataset)
    sl = splits.get("train_sl", [])
    if not sl:
        raise DataError("the train_sl split is empty")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    labels = label_dataset(sl, cfg.label_limits(), cfg.demand_window)
    fixer = cfg.fixer().fit(sl, labels)
    fixer.save(out / "fixmodels.npz")
    _write_csv(out / "train_report.csv", ("var", "f1", "architecture"), fixer.training_report())
    curves = [(c, ep, float(v)) for c, curve in sorted(fixer.loss_curves_.items()) for ep, v in enumerate(curve)]
    _write_csv(out / "loss_curves.csv", ("config", "epoch", "loss"), curves)

    hyper = cfg.rl_hyper()
    prop_lim = cfg.limits("prop_budget")
    selected = []
    for inst in splits.get("train_rl", []):
        res, _, lp = solve_prop(fixer, inst, prop_lim)
        lp_star = lp.objective if lp is not None else LpModel(build_mip(inst, cfg.demand_window)).solve().objective
        gap = _gap(res, lp_star)
        if gap > cfg.tolerance:
            selected.append(inst)
    info = {"labelled": len(labels), "rl_selected": len(selected)}
    qpath = out / "qnet.npz"
    if not selected:
        log.warning("no RL training instance misses the tolerance; Q-network skipped (PROPEL falls back to PROP)")
        if qpath.exists():
            qpath.unlink()
        info["qnet"] = False
        return info
    episodes: list = []
    qnet = train_rl(selected, fixer, hyper, seed=cfg.seed, episode_log=episodes, prop_lim=prop_lim)
    qnet.save(qpath, {"feature_hash": fixer.features_.hash_})
    _write_csv(out / "episodes.csv", ("episode", "step", "action", "gap", "reward"), episodes)
    info["qnet"] = True
    return info


def _gap(res, lp_star: float) -> float:
    from .metrics import primal_gap

    return primal_gap(res.best_objective, lp_star) if res.has_incumbent else 1.0


# -- evaluation -----------------------------------------------------------

@dataclass
class InstanceOutcome:
    rows: list
    traces: list  # (method, t, objective)
    lp_star: float


def _load_artifacts(cfg: RunConfig, models: str | os.PathLike | None):
    need_fix = any(m in cfg.methods for m in ("PROPb", "PROP", "PROPEL"))
    fixer = qnet = None
    if need_fix:
        if models is None:
            raise ConfigError("methods other than OPT need --models")
        fixer = PropFixer.load(Path(models) / "fixmodels.npz")
    if "PROPEL" in cfg.methods and models is not None and (Path(models) / "qnet.npz").exists():
        qnet = QNetwork.load(Path(models) / "qnet.npz")
        if qnet.extra.get("feature_hash") != fixer.features_.hash_:
            raise DataError("Q-network was trained with different fix models")
    return fixer, qnet


def evaluate_instance(cfg: RunConfig, inst: ScpInstance, fixer: PropFixer | None, qnet: QNetwork | None) -> InstanceOutcome:
    mip = build_mip(inst, cfg.demand_window)
    lp = LpModel(mip).solve()
    if lp.status != "optimal":
        raise DataError(f"{inst.name}: LP relaxation status {lp.status}")
    lp_star = float(lp.objective)
    n_int = len(mip.integer_indices)
    T_prop = cfg.budget("prop_budget")
    T_total = cfg.budget("total_budget")
    rows, traces = [], []

    def add(method, res, horizon, n_fixed):
        tr = GapTrace.from_trace(lp_star, res.trace, horizon)
        rt = min(res.end_time, horizon)
        rows.append(ResultRow(inst.name, method, primal_integral(tr), final_gap(tr), float(rt), n_fixed, n_int))
        traces.extend((method, t, o) for t, o in tr.entries)

    if "OPT" in cfg.methods:
        res = solve_mip(mip, SolveLimits(T_total, cfg.rel_gap, None, cfg.deterministic_clock))
        add("OPT", res, T_prop, 0)
        add(LONG_BASELINE, res, T_total, 0)
    if "PROPb" in cfg.methods:
        res, fix, _ = solve_prop(fixer, inst, cfg.limits("prop_budget"), use_rc=False, mip=mip)
        add("PROPb", res, T_prop, len(fix))
    if "PROP" in cfg.methods or "PROPEL" in cfg.methods:
        clock = SolveClock(cfg.deterministic_clock)
        res, fix, plp = solve_prop(fixer, inst, cfg.limits("prop_budget"), clock, use_rc=True, mip=mip)
        if "PROP" in cfg.methods:
            add("PROP", res, T_prop, len(fix))
        if "PROPEL" in cfg.methods and qnet is not None:
            hyper = cfg.rl_hyper()
            epi = Episode(inst, fixer, hyper, mip, plp, fix)
            out = infer(inst, fixer, qnet, hyper, prop_result=res, clock=clock, episode=epi)
            add("PROPEL", out, T_total, len(fix) - len(epi.partition.members(out.info["inserted"])))
    return InstanceOutcome(rows, [(inst.name, m, t, o) for m, t, o in traces], lp_star)


def _evaluate_job(args):
    cfg, inst, models = args
    fixer, qnet = _load_artifacts(cfg, models)
    return evaluate_instance(cfg, inst, fixer, qnet)


def evaluate(cfg: RunConfig, dataset: str | os.PathLike, models: str | os.PathLike | None,
             out: str | os.PathLike, split: str = "test") -> list[ResultRow]:
    _, splits = read_dataset(dataset)
    insts = splits.get(split)
    if not insts:
        raise DataError(f"split {split!r} is empty or missing")
    fixer, qnet = _load_artifacts(cfg, models)
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            outcomes = list(pool.map(_evaluate_job, [(cfg, s, models) for s in insts]))
    else:
        outcomes = [evaluate_instance(cfg, s, fixer, qnet) for s in insts]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    order = {m: k for k, m in enumerate(("OPT", LONG_BASELINE) + METHODS[1:])}
    rows = sorted((r for o in outcomes for r in o.rows), key=lambda r: (r.instance, order[r.method]))
    (out / "results.csv").write_text(write_results(rows))
    traces = sorted((t for o in outcomes for t in o.traces), key=lambda r: (r[0], order[r[1]], r[2]))
    _write_csv(out / "traces.csv", ("instance", "method", "t", "objective"), traces)
    _write_csv(out / "lpstar.csv", ("instance", "lp_star"),
               sorted((s.name, o.lp_star) for s, o in zip(insts, outcomes)))
    return rows


# -- reporting ------------------------------------------------------------

def reduction(base: float, value: float) -> float | None:
    """(base - value) / base; 0 when both are 0; undefined when only the base is 0."""
    if base == 0:
        return 0.0 if value == 0 else None
    return (base - value) / base


def summarize(rows: list[ResultRow]) -> list[tuple]:
    """Rows of (method, metric, max_reduction, avg_reduction, n) against the matching baseline."""
    by = {(r.instance, r.method): r for r in rows}
    instances = sorted({r.instance for r in rows})
    methods = [m for m in METHODS[1:] if any(r.method == m for r in rows)]
    out = []
    for m in methods:
        base = LONG_BASELINE if m == "PROPEL" else "OPT"
        for metric in ("pi", "pg", "n_int"):
            vals = []
            for inst in instances:
                r, b = by.get((inst, m)), by.get((inst, base))
                if r is None or b is None:
                    continue
                if metric == "n_int":
                    vals.append(r.n_fixed / r.n_int if r.n_int else 0.0)
                else:
                    red = reduction(getattr(b, metric), getattr(r, metric))
                    if red is not None:
                        vals.append(red)
            if vals:
                out.append((m, metric, max(vals), float(np.mean(vals)), len(vals)))
    return out


def _read_simple_csv(path: Path, header: tuple) -> list[list[str]]:
    try:
        rows = list(csv.reader(io.StringIO(path.read_text())))
    except FileNotFoundError:
        raise DataError(f"{path} not found") from None
    if not rows or tuple(rows[0]) != header:
        raise DataError(f"{path}: header must be {','.join(header)}")
    for lineno, r in enumerate(rows[1:], 2):
        if len(r) != len(header):
            raise DataError(f"{path} row {lineno}: expected {len(header)} fields")
    return rows[1:]


def report(results_dir: str | os.PathLike, out: str | os.PathLike | None = None, n_points: int = 50) -> dict:
    results_dir = Path(results_dir)
    out = Path(out) if out is not None else results_dir
    out.mkdir(parents=True, exist_ok=True)
    try:
        rows = read_results((results_dir / "results.csv").read_text())
    except FileNotFoundError:
        raise DataError(f"{results_dir}/results.csv not found") from None
    summary = summarize(rows)
    _write_csv(out / "summary.csv", ("method", "metric", "max_reduction", "avg_reduction", "n"), summary)

    trace_path = results_dir / "traces.csv"
    lp_path = results_dir / "lpstar.csv"
    first, plot = [], []
    if trace_path.exists() and lp_path.exists():
        lp = {}
        for lineno, (n, v) in enumerate(_read_simple_csv(lp_path, ("instance", "lp_star")), 2):
            try:
                lp[n] = float(v)
            except ValueError:
                raise DataError(f"{lp_path} row {lineno}: bad number {v!r}") from None
        events: dict = {}
        for lineno, (n, m, t, o) in enumerate(_read_simple_csv(trace_path, ("instance", "method", "t", "objective")), 2):
            try:
                events.setdefault((n, m), []).append((float(t), float(o)))
            except ValueError:
                raise DataError(f"{trace_path} row {lineno}: bad number") from None
        rt_by = {(r.instance, r.method): r for r in rows}
        methods = [m for m in ("OPT", LONG_BASELINE) + METHODS[1:] if any(r.method == m for r in rows)]
        for m in methods:
            insts = sorted({r.instance for r in rows if r.method == m})
            times = [first_incumbent_time(GapTrace(lp[i], tuple(events.get((i, m), [])), math.inf)) for i in insts]
            finite = [t for t in times if math.isfinite(t)]
            first.append((m, min(finite) if finite else math.inf, float(np.mean(finite)) if finite else math.inf,
                          max(finite) if finite else math.inf, len(finite), len(times)))
            # plot up to the latest runtime or event seen for this method
            H = max([rt_by[(i, m)].rt for i in insts] + [t for i in insts for t, _ in events.get((i, m), [])] + [0.0])
            if H <= 0:
                continue
            grid = np.linspace(0.0, H, n_points)
            traces = [GapTrace(lp[i], tuple(events.get((i, m), [])), H) for i in insts]
            for t in grid:
                plot.append((m, float(t), float(np.mean([gap_at(tr, float(t)) for tr in traces]))))
    _write_csv(out / "first_incumbent.csv", ("method", "min", "avg", "max", "found", "n"), first)
    _write_csv(out / "plot_data.csv", ("method", "t", "avg_gap"), plot)
    return {"summary": summary, "first_incumbent": first}
