"""Hamiltonian Monte Carlo with step-size and diagonal-metric adaptation.

Two transition kernels are available: the no-U-turn sampler with multinomial
trajectory sampling and the generalised U-turn criterion (``"nuts"``), and
plain HMC with a fixed number of leapfrog steps (``"static"``). Warmup follows
the usual fast/slow/fast window schedule: dual averaging of the step size
throughout, diagonal inverse metric re-estimated at the end of each doubling
slow window.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from .diagnostics import ChainDiagnostics, diagnostics

log = logging.getLogger(__name__)

Target = Callable[[np.ndarray], "tuple[float, np.ndarray]"]

MAX_ENERGY_ERROR = 1000.0
# Warmup schedule. The terminal buffer and t0 are larger than the common
# 50 / 10 so that the averaged step size lands near the acceptance target.
INIT_BUFFER, TERM_BUFFER, BASE_WINDOW = 75, 100, 25
DA_T0 = 50.0


class SamplerFailure(RuntimeError):
    """A chain could not initialise or produced nothing but divergences."""


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    samples: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    algorithm: str = "nuts"
    n_leapfrog: int = 16
    init_radius: float = 2.0
    jobs: int = 1
    metric: str = "diag"

    def __post_init__(self):
        for name in ("chains", "warmup", "samples", "max_tree_depth", "n_leapfrog", "jobs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.algorithm not in ("nuts", "static"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.metric not in ("diag", "dense"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class SamplerResult:
    draws: np.ndarray
    log_density: np.ndarray
    accept_stat: np.ndarray
    divergent: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    step_size: np.ndarray
    inv_metric: np.ndarray
    warmup_accept: np.ndarray
    floor_hits: int = 0
    diagnostics: ChainDiagnostics | None = field(default=None, repr=False)

    @property
    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])


class _DualAveraging:
    def __init__(self, step: float, target: float, gamma=0.05, t0=DA_T0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step)

    def restart(self, step: float) -> None:
        self.mu = math.log(10.0 * step)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept: float) -> float:
        self.counter += 1
        accept = min(1.0, accept)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    @property
    def final(self) -> float:
        return math.exp(self.x_bar)


def _buffers(warmup, init_buffer=INIT_BUFFER, term_buffer=TERM_BUFFER,
             base_window=BASE_WINDOW):
    if init_buffer + base_window + term_buffer > warmup:
        init_buffer = int(0.15 * warmup)
        term_buffer = int(0.1 * warmup)
        base_window = warmup - init_buffer - term_buffer
    return init_buffer, term_buffer, base_window


def adaptation_windows(warmup: int) -> list[int]:
    """End iterations (exclusive) of the slow metric-adaptation windows."""
    if warmup < 20:
        return []
    init_buffer, term_buffer, base_window = _buffers(warmup)
    ends = []
    start, size = init_buffer, base_window
    stop = warmup - term_buffer
    while start < stop:
        end = start + size
        if end + 2 * size > stop:
            end = stop
        ends.append(end)
        start, size = end, 2 * size
    return ends


class _Kernel:
    def __init__(self, target: Target, rng: np.random.Generator, max_depth: int):
        self.target = target
        self.rng = rng
        self.max_depth = max_depth
        self._inv_metric = None
        self._chol = None

    @property
    def inv_metric(self):
        return self._inv_metric

    @inv_metric.setter
    def inv_metric(self, value):
        """A vector (diagonal metric) or a symmetric positive definite matrix."""
        value = np.asarray(value, dtype=float)
        self._inv_metric = value
        self._chol = np.linalg.cholesky(value) if value.ndim == 2 else None

    def velocity(self, p):
        if self._chol is None:
            return self._inv_metric * p
        return self._inv_metric @ p

    def kinetic(self, p):
        return 0.5 * float(np.dot(self.velocity(p), p))

    def momentum(self, dim):
        z = self.rng.standard_normal(dim)
        if self._chol is None:
            return z / np.sqrt(self._inv_metric)
        return solve_triangular(self._chol, z, lower=True, trans="T")

    def leapfrog(self, q, p, grad, eps):
        p = p + 0.5 * eps * grad
        q = q + eps * self.velocity(p)
        lp, grad = self.target(q)
        p = p + 0.5 * eps * grad
        return q, p, grad, lp

    def hamiltonian(self, lp, p):
        h = -lp + self.kinetic(p)
        return h if math.isfinite(h) else math.inf

    def initial_step_size(self, q, lp, grad, eps=1.0):
        log_target = math.log(0.8)

        def delta(e):
            p = self.momentum(len(q))
            h0 = self.hamiltonian(lp, p)
            _, p1, _, lp1 = self.leapfrog(q, p, grad, e)
            h = h0 - self.hamiltonian(lp1, p1)
            return h if math.isfinite(h) else -math.inf

        direction = 1 if delta(eps) > log_target else -1
        for _ in range(100):
            eps = eps * (2.0 ** direction)
            h = delta(eps)
            if direction == 1 and not h > log_target:
                break
            if direction == -1 and not h < log_target:
                break
        return eps


class _Tree:
    __slots__ = ("q", "p", "grad", "lp", "p_beg", "p_end", "ps_beg", "ps_end", "rho",
                 "log_w", "prop", "n", "sum_metro", "valid", "divergent")


def _no_uturn(ps_a, ps_b, rho) -> bool:
    return float(np.dot(ps_a, rho)) > 0 and float(np.dot(ps_b, rho)) > 0


class NutsKernel(_Kernel):
    def _leaf(self, q, p, grad, eps, h0):
        q1, p1, g1, lp1 = self.leapfrog(q, p, grad, eps)
        h = self.hamiltonian(lp1, p1)
        t = _Tree()
        t.q, t.p, t.grad, t.lp = q1, p1, g1, lp1
        t.p_beg = t.p_end = p1
        t.ps_beg = t.ps_end = self.velocity(p1)
        t.rho = p1
        err = h - h0
        t.divergent = not (err <= MAX_ENERGY_ERROR)
        t.valid = not t.divergent
        t.log_w = -err
        t.sum_metro = math.exp(min(0.0, -err)) if math.isfinite(err) else 0.0
        t.prop = (q1, lp1, g1)
        t.n = 1
        return t

    def _build(self, q, p, grad, depth, eps, h0):
        if depth == 0:
            return self._leaf(q, p, grad, eps, h0)
        left = self._build(q, p, grad, depth - 1, eps, h0)
        if not left.valid:
            return left
        right = self._build(left.q, left.p, left.grad, depth - 1, eps, h0)
        merged = _Tree()
        merged.n = left.n + right.n
        merged.sum_metro = left.sum_metro + right.sum_metro
        merged.divergent = right.divergent
        if not right.valid:
            merged.valid = False
            return merged
        merged.log_w = np.logaddexp(left.log_w, right.log_w)
        if self.rng.uniform() < math.exp(right.log_w - merged.log_w):
            merged.prop = right.prop
        else:
            merged.prop = left.prop
        merged.rho = left.rho + right.rho
        merged.q, merged.p, merged.grad, merged.lp = right.q, right.p, right.grad, right.lp
        merged.p_beg, merged.ps_beg = left.p_beg, left.ps_beg
        merged.p_end, merged.ps_end = right.p_end, right.ps_end
        merged.valid = (
            _no_uturn(left.ps_beg, right.ps_end, merged.rho)
            and _no_uturn(left.ps_beg, right.ps_beg, left.rho + right.p_beg)
            and _no_uturn(left.ps_end, right.ps_end, right.rho + left.p_end)
        )
        return merged

    def transition(self, q, lp, grad, eps):
        p0 = self.momentum(len(q))
        h0 = self.hamiltonian(lp, p0)
        ends = {1: (q, p0, grad), -1: (q, p0, grad)}
        p_end = {1: p0, -1: p0}
        ps_end = {1: self.velocity(p0), -1: self.velocity(p0)}
        rho = p0.copy()
        log_w = 0.0
        sample = (q, lp, grad)
        n_leap, sum_metro, depth, divergent = 0, 0.0, 0, False
        while depth < self.max_depth:
            v = 1 if self.rng.uniform() > 0.5 else -1
            sq, sp, sg = ends[v]
            new = self._build(sq, sp, sg, depth, v * eps, h0)
            n_leap += new.n
            sum_metro += new.sum_metro
            depth += 1
            if new.divergent:
                divergent = True
            if not new.valid:
                break
            if new.log_w > log_w or self.rng.uniform() < math.exp(new.log_w - log_w):
                sample = new.prop
            log_w = np.logaddexp(log_w, new.log_w)
            far = -v
            persist = (
                _no_uturn(ps_end[far], new.ps_beg, rho + new.p_beg)
                and _no_uturn(ps_end[v], new.ps_end, new.rho + p_end[v])
            )
            rho = rho + new.rho
            ends[v] = (new.q, new.p, new.grad)
            p_end[v], ps_end[v] = new.p_end, new.ps_end
            persist = persist and _no_uturn(ps_end[1], ps_end[-1], rho)
            if not persist:
                break
        q1, lp1, g1 = sample
        accept = sum_metro / n_leap if n_leap else 0.0
        return q1, lp1, g1, accept, divergent, depth, n_leap


class StaticKernel(_Kernel):
    def __init__(self, target, rng, n_leapfrog):
        super().__init__(target, rng, max_depth=0)
        self.n_leapfrog = n_leapfrog

    def transition(self, q, lp, grad, eps):
        p = self.momentum(len(q))
        h0 = self.hamiltonian(lp, p)
        q1, p1, g1, lp1 = q, p, grad, lp
        divergent = False
        for _ in range(self.n_leapfrog):
            q1, p1, g1, lp1 = self.leapfrog(q1, p1, g1, eps)
            if not (self.hamiltonian(lp1, p1) - h0 <= MAX_ENERGY_ERROR):
                divergent = True
                break
        err = self.hamiltonian(lp1, p1) - h0
        accept = math.exp(min(0.0, -err)) if math.isfinite(err) and not divergent else 0.0
        if self.rng.uniform() < accept:
            return q1, lp1, g1, accept, divergent, 0, self.n_leapfrog
        return q, lp, grad, accept, divergent, 0, self.n_leapfrog


def _initial_point(target, rng, dim, init, radius):
    if init is not None:
        q = np.array(init, dtype=float)
        lp, grad = target(q)
        if math.isfinite(lp):
            return q, lp, grad
        raise SamplerFailure("log density is not finite at the supplied initial point")
    for _ in range(100):
        q = rng.uniform(-radius, radius, size=dim)
        lp, grad = target(q)
        if math.isfinite(lp) and np.all(np.isfinite(grad)):
            return q, lp, grad
    raise SamplerFailure("no finite initial point found after 100 attempts")


def run_chain(target: Target, dim: int, config: SamplerConfig, seed_seq, init=None) -> dict:
    rng = np.random.default_rng(seed_seq)
    counter = getattr(target, "counter", None)
    hits_before = counter.hits if counter is not None else 0
    if config.algorithm == "nuts":
        kernel = NutsKernel(target, rng, config.max_tree_depth)
    else:
        kernel = StaticKernel(target, rng, config.n_leapfrog)
    kernel.inv_metric = np.ones(dim)
    q, lp, grad = _initial_point(target, rng, dim, init, config.init_radius)
    eps = kernel.initial_step_size(q, lp, grad)
    da = _DualAveraging(eps, config.target_accept)
    windows = adaptation_windows(config.warmup)
    window_start = _window_begin(config.warmup, windows)
    win_idx = 0
    dense = config.metric == "dense"

    def fresh():
        return 0, np.zeros(dim), np.zeros((dim, dim) if dense else dim)

    n_w, mean_w, m2_w = fresh()
    W, N = config.warmup, config.samples
    out_q = np.empty((N, dim))
    out = {k: np.empty(N) for k in ("lp", "accept")}
    div = np.zeros(N, dtype=bool)
    depth_arr = np.zeros(N, dtype=np.int64)
    leap_arr = np.zeros(N, dtype=np.int64)
    warm_accept = np.empty(W)
    for it in range(W + N):
        q, lp, grad, accept, divergent, depth, n_leap = kernel.transition(q, lp, grad, eps)
        if it < W:
            warm_accept[it] = accept
            eps = da.update(accept)
            if win_idx < len(windows) and it >= window_start:
                n_w += 1
                delta = q - mean_w
                mean_w += delta / n_w
                m2_w += np.outer(delta, q - mean_w) if dense else delta * (q - mean_w)
                if it + 1 == windows[win_idx]:
                    cov = m2_w / max(n_w - 1, 1)
                    shrink = 1e-3 * (5.0 / (n_w + 5.0))
                    if dense:
                        cov = 0.5 * (cov + cov.T)
                        kernel.inv_metric = (n_w / (n_w + 5.0)) * cov + shrink * np.eye(dim)
                    else:
                        kernel.inv_metric = (n_w / (n_w + 5.0)) * cov + shrink
                    n_w, mean_w, m2_w = fresh()
                    eps = kernel.initial_step_size(q, lp, grad, eps)
                    da.restart(eps)
                    window_start = it + 1
                    win_idx += 1
            if it == W - 1:
                eps = da.final
        else:
            j = it - W
            out_q[j] = q
            out["lp"][j] = lp
            out["accept"][j] = accept
            div[j] = divergent
            depth_arr[j] = depth
            leap_arr[j] = n_leap
    hits = (counter.hits - hits_before) if counter is not None else 0
    return dict(draws=out_q, lp=out["lp"], accept=out["accept"], divergent=div,
                depth=depth_arr, n_leapfrog=leap_arr, step_size=eps,
                inv_metric=kernel.inv_metric.copy(), warmup_accept=warm_accept,
                floor_hits=hits)


def _window_begin(warmup, windows):
    """First iteration of the first slow window."""
    if not windows:
        return warmup
    return _buffers(warmup)[0]


def _chain_job(args):
    target, dim, config, seed_seq, init = args
    return run_chain(target, dim, config, seed_seq, init)


def hmc_sample(target: Target, dim: int, config: SamplerConfig = SamplerConfig(),
               init=None, names: list[str] | None = None) -> SamplerResult:
    """Run ``config.chains`` independent chains on ``target``.

    ``target(u)`` returns ``(log density, gradient)``. Chain ``k`` is seeded
    from ``SeedSequence(config.seed).spawn(chains)[k]``, so results do not
    depend on ``config.jobs``. ``init`` is ``None``, one vector, or one
    vector per chain.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    if init is None:
        inits = [None] * config.chains
    else:
        init = np.asarray(init, dtype=float)
        inits = [init] * config.chains if init.ndim == 1 else list(init)
    jobs = [(target, dim, config, s, i) for s, i in zip(seeds, inits)]
    if config.jobs > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.jobs, config.chains)) as pool:
            results = list(pool.map(_chain_job, jobs))
    else:
        results = [_chain_job(j) for j in jobs]

    for k, r in enumerate(results):
        if r["divergent"].all():
            raise SamplerFailure(f"chain {k}: every post-warmup transition diverged")
    res = SamplerResult(
        draws=np.stack([r["draws"] for r in results]),
        log_density=np.stack([r["lp"] for r in results]),
        accept_stat=np.stack([r["accept"] for r in results]),
        divergent=np.stack([r["divergent"] for r in results]),
        tree_depth=np.stack([r["depth"] for r in results]),
        n_leapfrog=np.stack([r["n_leapfrog"] for r in results]),
        step_size=np.array([r["step_size"] for r in results]),
        inv_metric=np.stack([r["inv_metric"] for r in results]),
        warmup_accept=np.stack([r["warmup_accept"] for r in results]),
        floor_hits=int(sum(r["floor_hits"] for r in results)),
    )
    if config.samples >= 4:
        res.diagnostics = diagnostics(res.draws, names=names,
                                      divergences=int(res.divergent.sum()),
                                      floor_hits=res.floor_hits)
    n_div = int(res.divergent.sum())
    if n_div:
        log.warning("%d divergent transitions after warmup", n_div)
    return res
