"""Independent reference values.

``dp_oracle`` enumerates every mode sequence on a coarse decision grid for
deterministic dynamics.  ``mc_oracle`` estimates the Feynman-Kac value of a
one-mode jump diffusion by simulation; the diffusion is scaled by sqrt(2)
because the generator carries a = sigma sigma^T without a factor 1/2.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .grid import check_points
from .model import ProblemSpec

__all__ = [
    "DPOracleConfig",
    "MCOracleConfig",
    "MCResult",
    "OracleError",
    "dp_oracle",
    "mc_oracle",
]


class OracleError(ValueError):
    """The oracle does not apply to this problem or configuration."""


@dataclass(frozen=True)
class DPOracleConfig:
    """``nt_coarse`` decision intervals, ``substeps`` RK4 steps per interval."""

    nt_coarse: int = 8
    substeps: int = 16
    max_sequences: int = 2**24
    chunk: int = 2**16

    def __post_init__(self):
        if self.nt_coarse < 1 or self.substeps < 1:
            raise ValueError("nt_coarse and substeps must be positive")


@dataclass(frozen=True)
class MCOracleConfig:
    paths: int = 100_000
    dt_sim: float = 1e-2
    seed: int = 0
    antithetic: bool = False
    batch: int = 10_000
    threads: int = 1

    def __post_init__(self):
        if self.paths < 2 or self.batch < 2:
            raise ValueError("need at least two paths per batch")
        if not self.dt_sim > 0:
            raise ValueError("dt_sim must be positive")
        if self.antithetic and self.batch % 2:
            raise ValueError("antithetic batches must have even size")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")


@dataclass(frozen=True)
class MCResult:
    estimate: float
    se: float
    paths: int
    config: MCOracleConfig

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "se": self.se, "paths": self.paths, **asdict(self.config)}


def _is_zero(expr) -> bool:
    return expr.is_constant and float(expr(np.zeros((1, 1)))[0]) == 0.0


# ------------------------------------------------------------------------ DP
def dp_oracle(spec: ProblemSpec, x0, cfg: DPOracleConfig | None = None) -> np.ndarray:
    """Values (u_1, ..., u_m) at (x0, 0) by exhaustive search over mode sequences.

    The mode is constant on each of ``nt_coarse`` equal intervals and may
    change only at their left ends, paying the cheapest-chain cost there.
    Running rewards are integrated with the state by RK4 and discounted by
    the zeroth-order coefficient.
    """
    cfg = cfg or DPOracleConfig()
    for i, md in enumerate(spec.modes):
        if not all(_is_zero(e) for row in md.sigma for e in row):
            raise OracleError(f"dp_oracle needs sigma = 0 (mode {i})")
    if any(j.kind != "empty" for j in spec.jumps):
        raise OracleError("dp_oracle needs empty jump measures")
    m, K = spec.m, cfg.nt_coarse
    if float(m) ** K > cfg.max_sequences:
        raise OracleError(f"enumeration of {m}^{K} mode sequences exceeds the cap {cfg.max_sequences}")
    if m > 1:
        spec = spec.with_closed_costs()
    x0 = check_points(x0, spec.n)[0]
    edges = np.linspace(0.0, spec.T, K + 1)

    def rhs(mode, X, t):
        out = np.empty((X.shape[0], spec.n + 2))
        logd = X[:, spec.n]
        P = X[:, : spec.n]
        for j in np.unique(mode):
            sel = mode == j
            _, b, c0, f = spec.modes[j].evaluate(P[sel], t)
            out[sel, : spec.n] = b
            out[sel, spec.n] = -c0
            out[sel, spec.n + 1] = np.exp(logd[sel]) * f
        return out

    def flow(mode, P, t0, t1):
        """Integrate state, log-discount and running reward over [t0, t1]."""
        Y = np.concatenate([P, np.zeros((P.shape[0], 2))], axis=1)
        h = (t1 - t0) / cfg.substeps
        t = t0
        for _ in range(cfg.substeps):
            k1 = rhs(mode, Y, t)
            k2 = rhs(mode, Y + 0.5 * h * k1, t + 0.5 * h)
            k3 = rhs(mode, Y + 0.5 * h * k2, t + 0.5 * h)
            k4 = rhs(mode, Y + h * k3, t + h)
            Y = Y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        return Y[:, : spec.n], np.exp(Y[:, spec.n]), Y[:, spec.n + 1]

    def best(P, mode, k):
        """Max over all continuations from states (P, mode) at decision time k."""
        if k == K:
            g = spec.terminal(P)
            return g[mode, np.arange(P.shape[0])]
        if P.shape[0] * m > cfg.chunk and P.shape[0] > 1:
            half = P.shape[0] // 2
            return np.concatenate([best(P[:half], mode[:half], k), best(P[half:], mode[half:], k)])
        n = P.shape[0]
        Pc = np.repeat(P, m, axis=0)
        prev = np.repeat(mode, m)
        new = np.tile(np.arange(m), n)
        if m > 1:
            C = spec.costs(Pc, edges[k])
            switch = C[np.arange(n * m), prev, new]
        else:
            switch = np.zeros(n * m)
        P1, disc, reward = flow(new, Pc, edges[k], edges[k + 1])
        total = -switch + reward + disc * best(P1, new, k + 1)
        return total.reshape(n, m).max(axis=1)

    starts = np.arange(m)
    return best(np.repeat(x0[None, :], m, axis=0), starts, 0)


# ------------------------------------------------------------------------ MC
def _simulation_plan(spec: ProblemSpec):
    nu = spec.jumps[0]
    if nu.kind == "truncated-stable":
        raise OracleError("truncated-stable measures are not simulable by this oracle (infinite activity)")
    if nu.kind == "finite-atoms":
        return nu.atoms, nu.weights, None
    if nu.kind == "compound-poisson-gaussian":
        z, w = np.polynomial.legendre.leggauss(64)
        return z.reshape(-1, 1), w * nu.density(z), nu
    return np.zeros((0, spec.n)), np.zeros(0), None


def _simulate_batch(spec: ProblemSpec, x0, t0, cfg: MCOracleConfig, size: int, seed_seq) -> np.ndarray:
    rng = np.random.default_rng(seed_seq)
    n = spec.n
    md = spec.modes[0]
    nu = spec.jumps[0]
    nodes, weights, cpg = _simulation_plan(spec)
    steps = max(1, int(math.ceil((spec.T - t0) / cfg.dt_sim - 1e-12)))
    dt = (spec.T - t0) / steps
    X = np.repeat(x0[None, :], size, axis=0)
    logd = np.zeros(size)
    run = np.zeros(size)
    half = size // 2
    for q in range(steps):
        t = t0 + q * dt
        _, b, c0, f = md.evaluate(X, t)
        run += np.exp(logd) * f * dt
        drift = b
        if cpg is None:
            inner = np.linalg.norm(nodes, axis=1) <= 1.0 if len(weights) else np.zeros(0, bool)
            for zq, wq in zip(nodes[inner], weights[inner]):
                drift = drift - wq * spec.eta(0, X, t, zq)
        else:
            # compensator over |z| <= 1: Gauss-Legendre on [-1, 1]
            for zq, wq in zip(nodes, weights):
                drift = drift - wq * spec.eta(0, X, t, zq)
        if cfg.antithetic:
            Zh = rng.standard_normal((half, n))
            Z = np.concatenate([Zh, -Zh])
        else:
            Z = rng.standard_normal((size, n))
        S = md.sigma_at(X, t)
        dX = drift * dt + math.sqrt(2.0 * dt) * np.einsum("pkl,pl->pk", S, Z)
        if nu.kind == "finite-atoms":
            counts = rng.poisson(nu.weights * dt, size=(size, len(nu.weights)))
            for a, zq in enumerate(nu.atoms):
                hit = counts[:, a] > 0
                if hit.any():
                    dX[hit] += counts[hit, a, None] * spec.eta(0, X[hit], t, zq)
        elif nu.kind == "compound-poisson-gaussian":
            counts = rng.poisson(nu.intensity * dt, size=size)
            for r in range(int(counts.max(initial=0))):
                hit = counts > r
                z = nu.mean + nu.std * rng.standard_normal((int(hit.sum()), 1))
                dX[hit] += spec.eta(0, X[hit], t, z)
        logd -= c0 * dt
        X = X + dX
    payoff = np.exp(logd) * spec.terminal(X)[0] + run
    if cfg.antithetic:
        payoff = 0.5 * (payoff[:half] + payoff[half:])
    return payoff


def mc_oracle(spec: ProblemSpec, x0, t0: float = 0.0, cfg: MCOracleConfig | None = None) -> MCResult:
    """Monte Carlo estimate of u(x0, t0) for a one-mode problem, with standard error.

    Batches get independent child seeds of ``cfg.seed``; results do not depend
    on the thread count.
    """
    cfg = cfg or MCOracleConfig()
    if spec.m != 1:
        raise OracleError("mc_oracle handles one-mode problems only")
    if not 0 <= t0 < spec.T:
        raise OracleError(f"t0={t0} outside [0, T)")
    x0 = check_points(x0, spec.n)[0]
    _simulation_plan(spec)
    sizes = [cfg.batch] * (cfg.paths // cfg.batch)
    if cfg.paths % cfg.batch:
        rest = cfg.paths % cfg.batch
        sizes.append(rest + (rest % 2 if cfg.antithetic else 0))
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(sizes))
    jobs = list(zip(sizes, seeds))
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(lambda job: _simulate_batch(spec, x0, t0, cfg, *job), jobs))
    else:
        parts = [_simulate_batch(spec, x0, t0, cfg, *job) for job in jobs]
    samples = np.concatenate(parts)
    est = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(samples.size))
    return MCResult(est, se, int(sum(sizes)), cfg)
