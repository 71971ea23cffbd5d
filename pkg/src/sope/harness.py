"""Bias/variance/MSE sweeps over the estimator spectrum.

A sweep draws ``trials`` datasets for every batch size, estimates the ratio
once per dataset, evaluates every requested ``(family, n)`` and aggregates
across trials. Work units run on a thread pool; results are sorted before
aggregation so the output does not depend on scheduling.
"""
from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from .estimators import FAMILIES, SPECTRUM_FAMILIES, EstimatorSpec, evaluate
from .mdp import RNG_ALGORITHM, StaticPolicy, TabularMdp, build_graph_env, build_toy_mc_env, make_static_policy, sample_dataset
from .occupancy import QTable, exact_j, exact_q
from .ratios import MINMAX_RIDGE, MODEL_SMOOTHING, estimate_model, estimate_ratio, oracle_ratio

SEED_STRIDE = 1_000_003
BOOTSTRAP_RESAMPLES = 1000

ENVIRONMENTS = ("graph", "toy_mc")
RATIO_METHODS = ("oracle", "model-based", "minmax-tabular")
RATIO_MODES = ("average", "truncated")
Q_SOURCES = ("exact", "perturbed", "estimated")
Q_HORIZON_MODES = ("infinite", "finite")
NEXT_ACTION_MODES = ("expectation", "sampled")

RAW_COLUMNS = ("family", "n", "batch_size", "trial", "estimate")
AGGREGATE_COLUMNS = ("family", "n", "batch_size", "bias", "variance", "mse", "mse_ci_lo", "mse_ci_hi")


class ConfigError(ValueError):
    """A configuration value violates its documented constraint."""


class SweepError(RuntimeError):
    """An estimator failed inside a sweep; the message carries the cell coordinates."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one sweep.

    ``n_values=None`` means every ``n`` in ``0..L``. ``horizon=None`` keeps the
    environment's own horizon (chain length for Graph, 100 for Toy-MC).
    """

    environment: str = "graph"
    chain_len: int = 20
    gamma: float = 0.98
    horizon: Optional[int] = None
    pi_e_p: float = 0.9
    pi_b_p: float = 0.5
    n_values: Optional[tuple] = None
    batch_sizes: tuple = (128, 256, 512)
    trials: int = 32
    base_seed: int = 0
    families: tuple = ("SOPE", "WSOPE")
    ratio_method: str = "model-based"
    ratio_mode: str = "average"
    model_alpha: float = MODEL_SMOOTHING
    minmax_ridge: float = MINMAX_RIDGE
    dr_q_source: str = "exact"
    dr_epsilon: float = 0.1
    dr_q_horizon: str = "infinite"
    dr_next_action: str = "expectation"
    bootstrap_resamples: int = BOOTSTRAP_RESAMPLES

    def __post_init__(self):
        for name in ("n_values", "batch_sizes", "families"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(value))
        self.validate()

    def _fail(self, name: str, constraint: str):
        raise ConfigError(f"{name}={getattr(self, name)!r}: {constraint}")

    def validate(self) -> None:
        if self.environment not in ENVIRONMENTS:
            self._fail("environment", f"must be one of {ENVIRONMENTS}")
        if self.environment == "graph" and self.chain_len < 2:
            self._fail("chain_len", "must be >= 2")
        if not 0.0 < self.gamma <= 1.0:
            self._fail("gamma", "must lie in (0, 1]")
        if self.horizon is not None and self.horizon < 1:
            self._fail("horizon", "must be a positive integer")
        for name in ("pi_e_p", "pi_b_p"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                self._fail(name, "must lie in [0, 1]")
        L = self.resolved_horizon
        if self.n_values is not None:
            if not self.n_values:
                self._fail("n_values", "must not be empty")
            if any(not 0 <= n <= L for n in self.n_values):
                self._fail("n_values", f"every n must lie in [0, L={L}]")
            if len(set(self.n_values)) != len(self.n_values):
                self._fail("n_values", "must not repeat")
        if not self.batch_sizes or any(b < 1 for b in self.batch_sizes):
            self._fail("batch_sizes", "must be a non-empty set of positive integers")
        if len(set(self.batch_sizes)) != len(self.batch_sizes):
            self._fail("batch_sizes", "must not repeat")
        if self.trials < 2:
            self._fail("trials", "must be >= 2 so that variances are defined")
        if self.trials * max(self.batch_sizes) > SEED_STRIDE:
            self._fail("trials", f"trials * max(batch_sizes) must not exceed the seed stride {SEED_STRIDE}")
        if not self.families or any(f not in FAMILIES for f in self.families):
            self._fail("families", f"must be a non-empty subset of {FAMILIES}")
        if len(set(self.families)) != len(self.families):
            self._fail("families", "must not repeat")
        checks = (
            ("ratio_method", RATIO_METHODS),
            ("ratio_mode", RATIO_MODES),
            ("dr_q_source", Q_SOURCES),
            ("dr_q_horizon", Q_HORIZON_MODES),
            ("dr_next_action", NEXT_ACTION_MODES),
        )
        for name, allowed in checks:
            if getattr(self, name) not in allowed:
                self._fail(name, f"must be one of {allowed}")
        if self.model_alpha < 0:
            self._fail("model_alpha", "must be >= 0")
        if self.minmax_ridge < 0:
            self._fail("minmax_ridge", "must be >= 0")
        if not 0.0 <= self.dr_epsilon <= 1.0:
            self._fail("dr_epsilon", "must lie in [0, 1]")
        if self.bootstrap_resamples < 1:
            self._fail("bootstrap_resamples", "must be positive")

    @property
    def resolved_horizon(self) -> int:
        if self.horizon is not None:
            return self.horizon
        return self.chain_len if self.environment == "graph" else 100

    @property
    def resolved_n_values(self) -> tuple:
        if self.n_values is None:
            return tuple(range(self.resolved_horizon + 1))
        return tuple(sorted(self.n_values))

    def build_mdp(self) -> TabularMdp:
        if self.environment == "graph":
            mdp = build_graph_env(self.chain_len, self.gamma)
        else:
            mdp = build_toy_mc_env(self.gamma)
        return mdp if self.horizon is None else mdp.with_horizon(self.horizon)

    def build_policies(self, mdp: TabularMdp) -> tuple:
        """``(pi_e, pi_b)`` as static policies."""
        return (
            make_static_policy(mdp.n_states, self.pi_e_p, mdp.absorbing, mdp.n_actions),
            make_static_policy(mdp.n_states, self.pi_b_p, mdp.absorbing, mdp.n_actions),
        )


def dataset_seed(config: ExperimentConfig, batch_index: int, trial: int, batch_size: int) -> int:
    """Seed of the dataset for one (batch, trial) cell.

    Trajectory ``i`` of the dataset is seeded ``dataset_seed + i``, so trials
    are offset by the batch size to keep their trajectory streams disjoint.
    """
    return config.base_seed + SEED_STRIDE * batch_index + trial * batch_size


@dataclass(frozen=True)
class Row:
    family: str
    n: Optional[int]
    batch_size: int
    trial: int
    estimate: float

    def key(self):
        return (self.family, -1 if self.n is None else self.n, self.batch_size, self.trial)


@dataclass(frozen=True)
class Aggregate:
    family: str
    n: Optional[int]
    batch_size: int
    bias: float
    variance: float
    mse: float
    mse_ci_lo: float
    mse_ci_hi: float


@dataclass
class SweepReport:
    true_j: float
    rows: list
    aggregates: list
    metadata: dict = field(default_factory=dict)


def perturbed_mdp(mdp: TabularMdp, epsilon: float) -> TabularMdp:
    """Mix every non-absorbing transition row with the uniform distribution at weight ``epsilon``."""
    P = np.array(mdp.transition)
    live = np.ones(mdp.n_states, bool)
    live[list(mdp.absorbing)] = False
    P[live] = (1.0 - epsilon) * P[live] + epsilon / mdp.n_states
    return TabularMdp(P, mdp.reward, mdp.initial_dist, mdp.gamma, mdp.horizon, mdp.absorbing, mdp.name + "~perturbed")


def _cells(config: ExperimentConfig, L: int) -> list:
    out = []
    for family in config.families:
        if family in SPECTRUM_FAMILIES:
            out.extend((family, n) for n in config.resolved_n_values)
        else:
            out.append((family, None))
    return out


def _needs_ratio(cells: list, L: int) -> bool:
    return any(f in ("SIS", "WSIS") or (n is not None and n < L) for f, n in cells)


class _Trial:
    """Everything shared by the estimators applied to one dataset."""

    def __init__(self, config, mdp, pi_e, pi_b, fixed_q, cells, batch_index, batch_size, trial):
        self.config, self.mdp, self.pi_e, self.pi_b = config, mdp, pi_e, pi_b
        self.cells, self.batch_size, self.trial = cells, batch_size, trial
        self.seed = dataset_seed(config, batch_index, trial, batch_size)
        self.fixed_q = fixed_q
        self._ratios = {}

    def ratio(self, dataset, T: int):
        """Ratio over the first ``T`` steps, computed once per ``T``."""
        if T not in self._ratios:
            cfg, L = self.config, self.mdp.horizon
            if cfg.ratio_method == "oracle":
                kind = "average" if T == L else "truncated"
                self._ratios[T] = oracle_ratio(self.mdp, self.pi_e, self.pi_b, kind, T=T)
            else:
                self._ratios[T] = estimate_ratio(
                    dataset, cfg.ratio_method, horizon=T, alpha=cfg.model_alpha, ridge=cfg.minmax_ridge
                )
        return self._ratios[T]

    def q(self, dataset) -> QTable:
        if self.fixed_q is not None:
            return self.fixed_q
        fit = estimate_model(dataset, alpha=self.config.model_alpha)
        return exact_q(fit.mdp, self.pi_e, self.config.dr_q_horizon)

    def run(self) -> list:
        cfg, L = self.config, self.mdp.horizon
        dataset = sample_dataset(self.mdp, self.pi_b, self.pi_e, self.batch_size, self.seed)
        q = self.q(dataset) if "DRSOPE" in cfg.families else None
        rows = []
        for family, n in self.cells:
            try:
                if family in ("SIS", "WSIS"):
                    ratio, mode = self.ratio(dataset, L), "average"
                elif n is not None and n < L:
                    T = L - n if cfg.ratio_mode == "truncated" else L
                    ratio, mode = self.ratio(dataset, T), cfg.ratio_mode
                else:
                    ratio, mode = None, "average"
                spec = EstimatorSpec(
                    family,
                    n if n is not None else 0,
                    ratio,
                    mode,
                    q if family == "DRSOPE" else None,
                    cfg.dr_next_action,
                    self.seed,
                )
                value = evaluate(spec, dataset).value
            except Exception as exc:
                raise SweepError(
                    f"{family} n={n} batch_size={self.batch_size} trial={self.trial} (seed {self.seed}): {exc}"
                ) from exc
            rows.append(Row(family, n, self.batch_size, self.trial, float(value)))
        return rows


def worker_count(workers: Optional[int] = None) -> int:
    """Explicit ``workers``, else ``SOPE_THREADS`` (0 = auto), else one per CPU."""
    if workers is None:
        raw = os.environ.get("SOPE_THREADS", "0").strip() or "0"
        try:
            workers = int(raw)
        except ValueError as exc:
            raise ConfigError(f"SOPE_THREADS={raw!r}: must be an integer") from exc
        if workers < 0:
            raise ConfigError(f"SOPE_THREADS={raw!r}: must be >= 0")
    if workers == 0:
        workers = os.cpu_count() or 1
    return max(1, workers)


def fixed_q_table(config: ExperimentConfig, mdp: TabularMdp, pi_e: StaticPolicy) -> Optional[QTable]:
    """The q table shared by every trial, or ``None`` when q is estimated per dataset."""
    if config.dr_q_source == "exact":
        return exact_q(mdp, pi_e, config.dr_q_horizon)
    if config.dr_q_source == "perturbed":
        return exact_q(perturbed_mdp(mdp, config.dr_epsilon), pi_e, config.dr_q_horizon)
    return None


def run_sweep(config: ExperimentConfig, workers: Optional[int] = None) -> SweepReport:
    """Run every (batch size, trial) cell and aggregate across trials."""
    started = time.perf_counter()
    mdp = config.build_mdp()
    pi_e, pi_b = config.build_policies(mdp)
    L = mdp.horizon
    cells = _cells(config, L)
    fixed_q = fixed_q_table(config, mdp, pi_e) if "DRSOPE" in config.families else None
    jobs = [
        _Trial(config, mdp, pi_e, pi_b, fixed_q, cells, b_idx, b, k)
        for b_idx, b in enumerate(config.batch_sizes)
        for k in range(config.trials)
    ]
    n_workers = min(worker_count(workers), len(jobs))
    if n_workers == 1:
        results = [job.run() for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(lambda job: job.run(), jobs))
    rows = sorted((r for chunk in results for r in chunk), key=Row.key)
    true_j = exact_j(mdp, pi_e)
    aggregates = aggregate(rows, true_j, seed=config.base_seed, resamples=config.bootstrap_resamples)
    ratio_note = _ratio_description(config)
    metadata = {
        "version": __version__,
        "config": _config_echo(config),
        "rng_algorithm": RNG_ALGORITHM,
        "seed_derivation": (
            f"dataset seed = base_seed + {SEED_STRIDE} * batch_index + trial * batch_size; "
            "trajectory i uses dataset seed + i"
        ),
        "base_seed": config.base_seed,
        "ratio_method": config.ratio_method,
        "ratio_description": ratio_note,
        "true_j": true_j,
        "true_j_behaviour": exact_j(mdp, pi_b),
        "horizon": L,
        "environment": mdp.name,
        "bootstrap": f"percentile, {config.bootstrap_resamples} resamples, seed {config.base_seed}",
        "workers": n_workers,
        "wall_clock_seconds": time.perf_counter() - started,
    }
    return SweepReport(true_j, rows, aggregates, metadata)


def _config_echo(config: ExperimentConfig) -> dict:
    out = asdict(config)
    for k, v in out.items():
        if isinstance(v, tuple):
            out[k] = list(v)
    return out


def _ratio_description(config: ExperimentConfig) -> str:
    if config.ratio_method == "oracle":
        return "exact occupancy ratio from dynamic programming"
    if config.ratio_method == "model-based":
        return f"certainty-equivalent tabular model, alpha={config.model_alpha}"
    return (
        "tabular flow-balance least squares (one instantiation of the min-max ratio objective), "
        f"ridge={config.minmax_ridge} toward w=1, clip-then-normalise"
    )


def aggregate(rows: Sequence[Row], true_j: float, seed: int = 0, resamples: int = BOOTSTRAP_RESAMPLES) -> list:
    """Per-(family, n, batch_size) bias, sample variance, MSE and a bootstrap CI on the MSE.

    The CI is the 2.5/97.5 percentile interval of the MSE over ``resamples``
    resamples of the trials, drawn from a generator seeded with ``seed``.
    """
    groups = {}
    for r in sorted(rows, key=Row.key):
        groups.setdefault((r.family, r.n, r.batch_size), []).append(r.estimate)
    out = []
    for (family, n, batch), values in groups.items():
        x = np.asarray(values, dtype=float)
        if x.size < 2:
            raise ValueError(
                f"cell {family} n={n} batch_size={batch} has {x.size} trial(s); variance needs at least 2"
            )
        err = x - true_j
        sq = err**2
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, x.size, size=(resamples, x.size))
        boot = sq[idx].mean(axis=1)
        lo, hi = np.percentile(boot, [2.5, 97.5])
        out.append(
            Aggregate(
                family,
                n,
                batch,
                float(err.mean()),
                float(x.var(ddof=1)),
                float(sq.mean()),
                float(lo),
                float(hi),
            )
        )
    return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(report: SweepReport, path, kind: str = "aggregate") -> None:
    """Write the aggregate (default) or raw rows of ``report`` as CSV.

    Floats use Python's shortest round-trip representation; ``n`` is empty for
    families outside the spectrum.
    """
    if kind == "aggregate":
        columns, records = AGGREGATE_COLUMNS, report.aggregates
    elif kind == "raw":
        columns, records = RAW_COLUMNS, report.rows
    else:
        raise ValueError(f"kind must be 'aggregate' or 'raw', got {kind!r}")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for rec in records:
                writer.writerow([_fmt(getattr(rec, c)) for c in columns])
    except OSError as exc:
        raise OSError(f"could not write {kind} CSV to {path}: {exc}") from exc


def read_csv(path, kind: str = "aggregate") -> list:
    """Parse a CSV written by :func:`write_csv` back into records."""
    cls, columns = (Aggregate, AGGREGATE_COLUMNS) if kind == "aggregate" else (Row, RAW_COLUMNS)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != columns:
            raise ValueError(f"{path}: expected columns {columns}, found {tuple(header)}")
        out = []
        for line in reader:
            rec = dict(zip(columns, line))
            kw = {}
            for c in columns:
                v = rec[c]
                if c == "family":
                    kw[c] = v
                elif c in ("n", "batch_size", "trial"):
                    kw[c] = int(v) if v != "" else None
                else:
                    kw[c] = float(v)
            out.append(cls(**kw))
        return out


# SVG layout, in pixels
_PANEL_W, _PANEL_H = 300, 200
_MARGIN_L, _MARGIN_T, _GAP_X, _GAP_Y = 70, 40, 40, 60
_PALETTE = ("#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#66418c", "#00798c")
METRICS = ("mse", "bias", "variance")


def _ticks(lo: float, hi: float, count: int = 4) -> list:
    if hi == lo:
        return [lo]
    return list(np.linspace(lo, hi, count + 1))


def emit_svg(report: SweepReport, path) -> None:
    """Line charts of MSE, bias and variance against ``n``.

    One row of panels per family and one column per metric; every batch size
    is its own polyline and the MSE panels carry a shaded bootstrap band.
    MSE and variance use a log10 axis when all plotted values are positive.
    Families outside the spectrum are drawn as flat lines across the n range.
    """
    families = sorted({a.family for a in report.aggregates}, key=lambda f: FAMILIES.index(f))
    batches = sorted({a.batch_size for a in report.aggregates})
    ns = sorted({a.n for a in report.aggregates if a.n is not None})
    x_lo, x_hi = (ns[0], ns[-1]) if ns else (0, 1)
    if x_hi == x_lo:
        x_hi = x_lo + 1
    width = _MARGIN_L + len(METRICS) * (_PANEL_W + _GAP_X)
    height = _MARGIN_T + max(1, len(families)) * (_PANEL_H + _GAP_Y) + 30
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{_MARGIN_L}" y="20" font-size="13">true J = {escape(repr(report.true_j))}</text>',
    ]
    for row, family in enumerate(families):
        cells = [a for a in report.aggregates if a.family == family]
        for col, metric in enumerate(METRICS):
            x0 = _MARGIN_L + col * (_PANEL_W + _GAP_X)
            y0 = _MARGIN_T + row * (_PANEL_H + _GAP_Y)
            parts.extend(_panel(cells, family, metric, batches, x0, y0, x_lo, x_hi))
    ly = height - 15
    for i, b in enumerate(batches):
        color = _PALETTE[i % len(_PALETTE)]
        lx = _MARGIN_L + i * 110
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 25}" y="{ly}">batch {b}</text>')
    parts.append("</svg>")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(parts) + "\n")
    except OSError as exc:
        raise OSError(f"could not write SVG to {path}: {exc}") from exc


def _panel(cells, family, metric, batches, x0, y0, x_lo, x_hi) -> list:
    values = [getattr(a, metric) for a in cells]
    if metric == "mse":
        values += [a.mse_ci_lo for a in cells] + [a.mse_ci_hi for a in cells]
    log = metric != "bias" and values and min(values) > 0
    tf = (lambda v: math.log10(v)) if log else (lambda v: v)
    ys = [tf(v) for v in values] or [0.0, 1.0]
    y_lo, y_hi = min(ys), max(ys)
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5

    def px(n):
        return x0 + (n - x_lo) / (x_hi - x_lo) * _PANEL_W

    def py(v):
        return y0 + _PANEL_H - (tf(v) - y_lo) / (y_hi - y_lo) * _PANEL_H

    label = f"{family}: {metric}" + (" (log10)" if log else "")
    out = [
        f'<g class="panel" data-family="{escape(family)}" data-metric="{metric}">',
        f'<rect x="{x0}" y="{y0}" width="{_PANEL_W}" height="{_PANEL_H}" fill="none" stroke="#888"/>',
        f'<text x="{x0}" y="{y0 - 6}">{escape(label)}</text>',
    ]
    for v in _ticks(y_lo, y_hi):
        yy = y0 + _PANEL_H - (v - y_lo) / (y_hi - y_lo) * _PANEL_H
        shown = 10**v if log else v
        out.append(f'<text x="{x0 - 4}" y="{yy + 4:.2f}" text-anchor="end">{shown:.3g}</text>')
    for v in _ticks(x_lo, x_hi):
        out.append(f'<text x="{px(v):.2f}" y="{y0 + _PANEL_H + 14}" text-anchor="middle">{v:.3g}</text>')
    if metric == "bias" and y_lo < 0 < y_hi:
        out.append(f'<line x1="{x0}" x2="{x0 + _PANEL_W}" y1="{py(0.0):.2f}" y2="{py(0.0):.2f}" stroke="#ccc"/>')
    for i, b in enumerate(batches):
        color = _PALETTE[i % len(_PALETTE)]
        series = sorted((a for a in cells if a.batch_size == b), key=lambda a: -1 if a.n is None else a.n)
        if not series:
            continue
        if series[0].n is None:
            a = series[0]
            pts = [(x_lo, a), (x_hi, a)]
        else:
            pts = [(a.n, a) for a in series]
        if metric == "mse":
            upper = [f"{px(n):.2f},{py(a.mse_ci_hi):.2f}" for n, a in pts]
            lower = [f"{px(n):.2f},{py(a.mse_ci_lo):.2f}" for n, a in reversed(pts)]
            out.append(f'<polygon class="ci" points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.15" stroke="none"/>')
        line = " ".join(f"{px(n):.2f},{py(getattr(a, metric)):.2f}" for n, a in pts)
        out.append(
            f'<polyline class="series" data-batch="{b}" points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
    out.append("</g>")
    return out
