"""Monte Carlo coverage experiment for the four interval methods.

Replicate estimates are drawn from their exact sampling laws,

    mu_hat ~ N(mu, sigma^2 / t_q),    sigma2_hat ~ (sigma^2 / q) chi^2_{q-1},

so no time series is simulated.  Random numbers are counter-based: the
stream of a cell is keyed by ``(seed, cell index)`` and replicate ``i`` always
consumes the same two raw outputs, so results do not depend on how cells are
scheduled across worker processes.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from .ci_methods import (
    METHODS,
    bootstrap_draws,
    bootstrap_select_arr,
    ci_wz_arr,
    delta_logit_arr,
    logit_to_logs,
    tmu_arr,
)
from .errors import DomainError
from .estimate import wz_from_params
from .stable_eval import DEFAULT_Z_THR, hybrid_wz

DEFAULT_SEED = 20240917
HARNESS_BOOTSTRAP_B = 500
_U53 = 2.0**-53


@dataclass(frozen=True)
class GridSpec:
    """Parameter grid and run settings of a coverage experiment."""

    mu_set: tuple = (-0.3, 0.0, 0.3)
    sigma2_set: tuple = (0.01, 0.1, 1.0)
    xd_set: tuple = (3.0, 5.0, 7.0, 9.0, 11.0, 13.0)
    tstar_set: tuple = (10.0, 50.0)
    q_set: tuple = (10, 50)
    reps: int = 2000
    alpha: float = 0.05
    seed: int = DEFAULT_SEED
    methods: tuple = METHODS
    bootstrap_B: int = HARNESS_BOOTSTRAP_B
    z_thr: float = DEFAULT_Z_THR

    def __post_init__(self):
        for name in ("mu_set", "sigma2_set", "xd_set", "tstar_set", "q_set", "methods"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.reps < 100:
            raise DomainError(f"reps must be at least 100, got {self.reps}")
        if not (0.0 < self.alpha < 1.0):
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if any(not s > 0 for s in self.sigma2_set):
            raise DomainError("all sigma^2 values must be positive")
        if any(not x > 0 for x in self.xd_set):
            raise DomainError("all x_d values must be positive")
        if any(not t > 0 for t in self.tstar_set):
            raise DomainError("all horizons must be positive")
        if any(int(q) != q or q < 2 for q in self.q_set):
            raise DomainError("q values must be integers >= 2")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise DomainError(f"unknown methods: {sorted(bad)}")
        if "bootstrap" in self.methods and self.bootstrap_B < 100:
            raise DomainError("bootstrap_B must be at least 100")

    def cells(self) -> list["Cell"]:
        return [
            Cell(i, float(mu), float(s2), float(xd), float(ts), int(q))
            for i, (mu, s2, xd, ts, q) in enumerate(
                itertools.product(self.mu_set, self.sigma2_set, self.xd_set, self.tstar_set, self.q_set)
            )
        ]


PRESETS = {
    "desk": GridSpec(),
    "full": GridSpec(
        mu_set=(-0.5, -0.3, -0.1, 0.0, 0.1, 0.3, 0.5),
        sigma2_set=(0.001, 0.01, 0.1, 1.0),
        xd_set=(3.0, 5.0, 7.0, 9.0, 11.0, 13.0),
        tstar_set=(10.0, 20.0, 50.0, 100.0),
        q_set=(10, 20, 50, 100),
        reps=10_000,
        bootstrap_B=2000,
    ),
}


@dataclass(frozen=True)
class Cell:
    index: int
    mu: float
    sigma2: float
    x_d: float
    t_star: float
    q: int

    @property
    def t_q(self) -> float:
        return float(self.q)


@dataclass(frozen=True)
class CoverageResult:
    """Rejection counts of one method in one cell.

    ``reject_low`` counts replicates whose interval lies entirely above the
    true G, ``reject_high`` those entirely below it.  ``failures`` counts
    replicates where the method could not be applied; rates are over the
    ``n_valid = reps - failures`` remaining replicates.
    """

    method: str
    cell: int
    mu: float
    sigma2: float
    x_d: float
    t_star: float
    q: int
    t_q: float
    reps: int
    failures: int
    reject_low: int
    reject_high: int
    use_q: bool = False

    @property
    def n_valid(self) -> int:
        return self.reps - self.failures

    @property
    def rejections(self) -> int:
        return self.reject_low + self.reject_high

    @property
    def rate(self) -> float:
        return self.rejections / self.n_valid if self.n_valid else math.nan

    @property
    def rate_low(self) -> float:
        return self.reject_low / self.n_valid if self.n_valid else math.nan

    @property
    def rate_high(self) -> float:
        return self.reject_high / self.n_valid if self.n_valid else math.nan


def _uniforms(raw):
    """Map raw 64-bit outputs to doubles strictly inside (0, 1)."""
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U53


def sample_estimates(mu: float, sigma2: float, q: int, t_q: float, reps: int, seed: int,
                     cell: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Replicate (mu_hat, sigma2_hat) pairs from their exact sampling laws.

    Replicate ``i`` is a fixed function of ``(seed, cell, i)``: it uses raw
    outputs ``2i`` and ``2i + 1`` of a Philox stream keyed by ``(seed, cell)``,
    transformed by the normal and chi-square quantile functions.
    """
    if not (sigma2 > 0 and q >= 2 and t_q > 0 and reps >= 1):
        raise DomainError("sample_estimates needs sigma2 > 0, q >= 2, t_q > 0, reps >= 1")
    bitgen = np.random.Philox(np.random.SeedSequence([int(seed), int(cell)]))
    u = _uniforms(bitgen.random_raw(2 * reps)).reshape(reps, 2)
    mu_hat = mu + math.sqrt(sigma2 / t_q) * special.ndtri(u[:, 0])
    sigma2_hat = sigma2 / q * special.chdtri(q - 1, u[:, 1])
    return mu_hat, sigma2_hat


def _tally(lower, upper, true_lg, true_lq, use_q, valid=None):
    """Count replicates whose interval misses the truth on each side."""
    if use_q:
        # interval in Q is [upper.log_q, lower.log_q]
        below = true_lq > lower[1]  # Q_true > Q_lower  <=>  G_true < lower
        above = true_lq < upper[1]
    else:
        below = true_lg < lower[0]
        above = true_lg > upper[0]
    if valid is not None:
        below = below & valid
        above = above & valid
    return int(np.count_nonzero(below)), int(np.count_nonzero(above))


def run_cell(g: GridSpec, cell: Cell) -> list[CoverageResult]:
    """All requested methods on one cell, applied to a shared set of replicate estimates."""
    t_q = cell.t_q
    w, z = wz_from_params(cell.mu, cell.sigma2, cell.x_d, cell.t_star)
    true_lg, true_lq, g_direct = (float(v) for v in hybrid_wz(float(w), float(z), g.z_thr))
    use_q = not bool(g_direct)  # switching rule fixed per cell from the true parameters
    mu_hat, s2_hat = sample_estimates(cell.mu, cell.sigma2, cell.q, t_q, g.reps, g.seed, cell.index)
    w_hat, z_hat = wz_from_params(mu_hat, s2_hat, cell.x_d, cell.t_star)
    out = []

    def result(method, low, high, failures=0):
        return CoverageResult(method, cell.index, cell.mu, cell.sigma2, cell.x_d, cell.t_star, cell.q, t_q,
                              g.reps, failures, low, high, use_q)

    for method in g.methods:
        if method == "wz":
            lower, upper = ci_wz_arr(w_hat, z_hat, cell.q, t_q, cell.t_star, g.alpha, g.z_thr)
            out.append(result(method, *_tally(lower, upper, true_lg, true_lq, use_q)))
        elif method == "tmu":
            lower, upper = tmu_arr(mu_hat, s2_hat, cell.x_d, cell.t_star, t_q, g.alpha, g.z_thr)
            out.append(result(method, *_tally(lower, upper, true_lg, true_lq, use_q)))
        elif method == "delta_logit":
            _, h_lo, h_hi, ok = delta_logit_arr(mu_hat, s2_hat, cell.x_d, cell.t_star, cell.q, t_q, g.alpha, g.z_thr)
            h_lo = np.where(ok, h_lo, 0.0)
            h_hi = np.where(ok, h_hi, 0.0)
            lower, upper = logit_to_logs(h_lo), logit_to_logs(h_hi)
            low, high = _tally(lower, upper, true_lg, true_lq, use_q, ok)
            out.append(result(method, low, high, int(np.count_nonzero(~ok))))
        elif method == "bootstrap":
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(g.seed), int(cell.index), 1])))
            low = high = 0
            chunk = max(1, 250_000 // g.bootstrap_B)
            for start in range(0, g.reps, chunk):
                sl = slice(start, min(start + chunk, g.reps))
                n = sl.stop - sl.start
                normals = rng.standard_normal((n, g.bootstrap_B))
                chisq = rng.chisquare(cell.q - 1, (n, g.bootstrap_B))
                mu_b, s2_b = bootstrap_draws(mu_hat[sl], s2_hat[sl], cell.q, t_q, normals, chisq)
                lower, upper = bootstrap_select_arr(mu_b, s2_b, cell.x_d, cell.t_star, g.alpha, g.z_thr)
                a, b = _tally(lower, upper, true_lg, true_lq, use_q)
                low += a
                high += b
            out.append(result(method, low, high))
    return out


def _run_cell_args(args):
    return run_cell(*args)


def coverage_experiment(g: GridSpec, t_q_rule: str = "t_q = q", workers: int | None = None,
                        progress=None) -> list[CoverageResult]:
    """Run every cell of the grid; results are ordered by cell index and method.

    ``workers`` > 1 distributes cells over processes; the output is identical
    for any number of workers.
    """
    if t_q_rule.replace(" ", "") != "t_q=q":
        raise DomainError(f"unsupported t_q rule {t_q_rule!r}; only 't_q = q' is implemented")
    cells = g.cells()
    if workers is None:
        workers = os.cpu_count() or 1
    results: list[CoverageResult] = []
    if workers <= 1 or len(cells) == 1:
        for c in cells:
            results.extend(run_cell(g, c))
            if progress:
                progress(c.index + 1, len(cells))
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for i, rs in enumerate(ex.map(_run_cell_args, [(g, c) for c in cells], chunksize=1)):
                results.extend(rs)
                if progress:
                    progress(i + 1, len(cells))
    order = {m: i for i, m in enumerate(METHODS)}
    return sorted(results, key=lambda r: (r.cell, order[r.method]))


@dataclass(frozen=True)
class MethodSummary:
    method: str
    cells: int
    mean: float
    sd: float
    min: float
    max: float
    failures: int
    mean_se: float


@dataclass(frozen=True)
class CoverageReport:
    summaries: tuple
    rows: tuple = field(repr=False)

    def summary(self, method: str) -> MethodSummary:
        for s in self.summaries:
            if s.method == method:
                return s
        raise KeyError(method)

    def text(self) -> str:
        lines = [f"{'method':<12} {'cells':>5} {'mean':>8} {'sd':>8} {'min':>8} {'max':>8} {'fail':>6}"]
        for s in self.summaries:
            lines.append(f"{s.method:<12} {s.cells:>5d} {s.mean:>8.4f} {s.sd:>8.4f} {s.min:>8.4f} {s.max:>8.4f} {s.failures:>6d}")
        return "\n".join(lines)


ROW_FIELDS = ("method", "cell", "mu", "sigma2", "x_d", "t_star", "q", "t_q", "reps", "failures",
              "reject_low", "reject_high", "use_q", "rate", "rate_low", "rate_high")


def result_row(r: CoverageResult) -> dict:
    d = asdict(r)
    d.update(rate=r.rate, rate_low=r.rate_low, rate_high=r.rate_high)
    return {k: d[k] for k in ROW_FIELDS}


def report(results: list[CoverageResult]) -> CoverageReport:
    """Per-method mean, sd, min and max of cell rejection rates, plus per-cell rows.

    Independent of the order of ``results``.
    """
    if not results:
        raise DomainError("report needs at least one result")
    ordered = sorted(results, key=lambda r: (r.method, r.cell))
    summaries = []
    for method in [m for m in METHODS if any(r.method == m for r in ordered)]:
        rs = [r for r in ordered if r.method == method]
        rates = np.array([r.rate for r in rs if r.n_valid > 0])
        valid = np.array([r.n_valid for r in rs if r.n_valid > 0])
        if rates.size == 0:
            summaries.append(MethodSummary(method, len(rs), math.nan, math.nan, math.nan, math.nan,
                                           sum(r.failures for r in rs), math.nan))
            continue
        # binomial standard error of the mean rate under the nominal-level hypothesis
        mean_se = math.sqrt(np.sum(rates * (1 - rates) / valid)) / rates.size
        summaries.append(MethodSummary(
            method, len(rs), float(rates.mean()), float(rates.std(ddof=1)) if rates.size > 1 else 0.0,
            float(rates.min()), float(rates.max()), sum(r.failures for r in rs), mean_se,
        ))
    return CoverageReport(tuple(summaries), tuple(result_row(r) for r in sorted(results, key=lambda r: (r.cell, r.method))))
