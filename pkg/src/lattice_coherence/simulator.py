"""Euler-Maruyama Monte Carlo of the closed loop on a ring or an open string.

Only d = 1 is simulated.  The full state is laid out block by block in the
template's state order, e.g. (z_0..z_{L-1}, x_0..x_{L-1}, v_0..v_{L-1}).
White noise of intensity ``noise_intensity`` enters every site of the
disturbance block.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import _backend
from .admissibility import InstabilityError, require_hurwitz
from .lattice import LocalArray, PreconditionError, check_lattice_size, wavenumber_grid
from .models import Kind, ModelSpec, symbol_matrices

#: minimum post-warmup samples per site for a variance estimate
MIN_SAMPLES = 10_000
#: steps generated per noise chunk
CHUNK = 512


@dataclass(frozen=True)
class SimConfig:
    L: int
    topology: str = "ring"
    dt: float = 0.1
    t_end: float = 2e4
    warmup: float | None = None  # defaults to 0.95 * t_end
    noise_intensity: float = 1.0
    seed: int = 0
    trajectories: int = 4
    delta_x: float = 2.0
    record_every: int = 0  # 0 keeps no trace samples

    def __post_init__(self) -> None:
        if self.topology not in ("ring", "string"):
            raise ValueError(f"topology must be 'ring' or 'string', got {self.topology!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.warmup is None:
            object.__setattr__(self, "warmup", 0.95 * self.t_end)
        if not 0 <= self.warmup < self.t_end:
            raise ValueError("need 0 <= warmup < t_end")
        if self.noise_intensity < 0:
            raise ValueError("noise intensity must be non-negative")
        if self.trajectories < 1:
            raise ValueError("need at least one trajectory")

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup / self.dt))


@dataclass
class Trace:
    """Outputs of one simulation run.

    ``samples`` holds y_k(t) of trajectory 0 every ``record_every`` steps after
    warmup; ``ysum``/``ysq`` are per-trajectory, per-site running sums.
    """

    config: SimConfig
    times: np.ndarray
    samples: np.ndarray
    ysum: np.ndarray
    ysq: np.ndarray
    count: int
    final_state: np.ndarray = field(repr=False)

    @property
    def n_sites(self) -> int:
        return self.ysum.shape[1]


# -- closed-loop matrix -------------------------------------------------------------------


def stencil_matrix(array: LocalArray, L: int, topology: str) -> sp.csr_matrix:
    """Sparse matrix of the convolution x -> a * x on a ring or an open string.

    On the string the wraparound couplings are dropped and the diagonal is
    rebalanced so every row keeps the entry sum of the array (zero for
    relative operators).
    """
    if array.dimension != 1:
        raise PreconditionError("the simulator supports d = 1 only")
    check_lattice_size(array, L)
    if not array.entries:
        return sp.csr_matrix((L, L))
    rows, cols, vals = [], [], []
    total = array.total
    for (k,), v in array.entries.items():
        i = np.arange(L)
        j = i - k  # (A x)_i = sum_k a_k x_{i-k}
        if topology == "ring":
            rows.append(i)
            cols.append(j % L)
            vals.append(np.full(L, v))
        else:
            inside = (j >= 0) & (j < L)
            rows.append(i[inside])
            cols.append(j[inside])
            vals.append(np.full(inside.sum(), v))
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(L, L)).tocsr()
    if topology == "string":
        diag = total - np.asarray(M.sum(axis=1)).ravel()
        M = M + sp.diags(diag)
    return M.tocsr()


def closed_loop_matrix(model: ModelSpec, L: int, topology: str = "ring") -> sp.csr_matrix:
    if model.dimension != 1:
        raise PreconditionError("the simulator supports d = 1 only")
    S = {n: stencil_matrix(a, L, topology) for n, a in model.arrays.items()}
    I, Z = sp.identity(L, format="csr"), None
    if model.kind is Kind.CONSENSUS_STATIC:
        blocks = [[S["F"]]]
    elif model.kind is Kind.CONSENSUS_DYNAMIC:
        blocks = [[S["A"], S["B"]], [I, S["F"]]]
    elif model.kind is Kind.VEHICULAR_STATIC:
        blocks = [[Z, I], [S["F"], S["G"]]]
    else:
        blocks = [[S["A"], S["B"], S["C"]], [Z, Z, I], [I, S["F"], S["G"]]]
    M = sp.bmat(blocks, format="csr")
    M.eliminate_zeros()
    M.sort_indices()
    return M


def check_step_size(model: ModelSpec, config: SimConfig) -> float:
    """Largest |eigenvalue| of I + dt A over nonzero modes; must be below 1.

    The ring uses the wavenumber symbols; the string uses the dense matrix.
    """
    L, dt = config.L, config.dt
    if config.topology == "ring":
        lam = np.linalg.eigvals(symbol_matrices(model, wavenumber_grid(L, 1)))
    else:
        M = closed_loop_matrix(model, L, "string").toarray()
        lam = np.linalg.eigvals(M)
        # drop the marginal average modes, which EM leaves unchanged; a Jordan
        # block at zero splits into eigenvalues of size ~sqrt(machine epsilon)
        lam = lam[np.abs(lam) > 1e-6 * max(1.0, np.abs(lam).max())]
    rho = float(np.abs(1.0 + dt * lam).max()) if lam.size else 0.0
    if rho >= 1.0:
        raise PreconditionError(
            f"dt={dt} too large: |1 + dt*lambda| reaches {rho:.6f} >= 1 on the {config.topology}"
        )
    return rho


# -- simulation -------------------------------------------------------------------------------


def simulate(model: ModelSpec, config: SimConfig, x0: np.ndarray | None = None) -> Trace:
    """Run ``config.trajectories`` independent Euler-Maruyama trajectories."""
    if model.dimension != 1:
        raise PreconditionError("the simulator supports d = 1 only")
    L = config.L
    require_hurwitz(model, wavenumber_grid(L, 1), L)  # admissible on the ring of the same size
    check_step_size(model, config)
    M = closed_loop_matrix(model, L, config.topology)
    n = M.shape[0]
    T = config.trajectories
    noise_rows = np.arange(model.disturbance_index * L, (model.disturbance_index + 1) * L, dtype=np.intp)
    pos_rows = np.arange(model.position_index * L, (model.position_index + 1) * L, dtype=np.intp)
    X = np.zeros((T, n)) if x0 is None else np.array(np.broadcast_to(x0, (T, n)), dtype=float)
    ysum = np.zeros((T, L))
    ysq = np.zeros((T, L))
    steps, acc_start = config.steps, config.warmup_steps
    n_acc = steps - acc_start
    R = (n_acc + config.record_every - 1) // config.record_every if config.record_every > 0 else 0
    rec = np.zeros((R, L))
    scale = math.sqrt(config.dt * config.noise_intensity)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(T)]
    indptr = M.indptr.astype(np.int32)
    indices = M.indices.astype(np.int32)
    data = M.data.astype(float)
    noise = np.empty((CHUNK, T, L))
    for step0 in range(0, steps, CHUNK):
        S = min(CHUNK, steps - step0)
        for t, rng in enumerate(rngs):
            noise[:S, t, :] = rng.standard_normal((S, L))
        _backend.em_chunk(
            indptr, indices, data, X, noise[:S], noise_rows, pos_rows,
            config.dt, scale, step0, acc_start, ysum, ysq, rec, config.record_every,
        )
    times = (acc_start + 1 + np.arange(R) * config.record_every) * config.dt
    return Trace(config, times, rec, ysum, ysq, n_acc, X)


def output_variance(trace: Trace) -> tuple[float, float]:
    """Time- and site-averaged E[y^2] and its standard error across trajectories."""
    if trace.count < MIN_SAMPLES:
        raise PreconditionError(f"need at least {MIN_SAMPLES} post-warmup samples per site, got {trace.count}")
    per_traj = trace.ysq.mean(axis=1) / trace.count
    v = float(per_traj.mean())
    T = per_traj.size
    se = float(per_traj.std(ddof=1) / math.sqrt(T)) if T > 1 else math.nan
    return v, se


@dataclass(frozen=True)
class EmbeddingComparison:
    L: int
    v_string: float
    se_string: float
    v_ring: float
    se_ring: float

    @property
    def combined_se(self) -> float:
        return math.hypot(self.se_string, self.se_ring)

    @property
    def string_at_least_ring(self) -> bool:
        return self.v_string >= self.v_ring - 2 * self.combined_se


def string_embedding_compare(model: ModelSpec, L: int, config: SimConfig) -> EmbeddingComparison:
    """Simulate ring and string with identical seeds and compare mean variances."""
    ring = simulate(model, replace(config, L=L, topology="ring"))
    string = simulate(model, replace(config, L=L, topology="string"))
    v_r, se_r = output_variance(ring)
    v_s, se_s = output_variance(string)
    return EmbeddingComparison(L, v_s, se_s, v_r, se_r)


def analytic_variance(model: ModelSpec, L: int, topology: str = "ring") -> float:
    """Steady-state mean output variance from a dense Lyapunov solve of the simulated matrix.

    Requires the constants to be a left null direction of every relative
    block (true for symmetric stencils), so the average mode can be removed.
    """
    M = closed_loop_matrix(model, L, topology).toarray()
    m = model.state_size
    Q = sla.null_space(np.ones((1, L)))
    T = np.kron(np.eye(m), Q)
    Ar = T.T @ M @ T
    if np.abs(M @ T - T @ Ar).max() > 1e-9 * max(1.0, np.abs(M).max()):
        raise PreconditionError("the complement of the average mode is not invariant for this model")
    lam = np.linalg.eigvals(Ar)
    if lam.real.max() >= 0:
        raise InstabilityError(f"{topology} closed loop is unstable at L={L}", L=L)
    n = L - 1
    Br = np.zeros((m * n, n))
    Br[model.disturbance_index * n : (model.disturbance_index + 1) * n] = np.eye(n)
    X = sla.solve_continuous_lyapunov(Ar, -Br @ Br.T)
    p = model.position_index
    return float(np.trace(X[p * n : (p + 1) * n, p * n : (p + 1) * n]) / L)


# -- export -------------------------------------------------------------------------------------


def write_trace_csv(trace: Trace, path: str | Path, stride: int = 1, header: str | None = None) -> None:
    """Long-format (t, site, y) rows of the recorded trajectory."""
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["t", "site", "y"])
        for r in range(0, trace.samples.shape[0], stride):
            t = trace.times[r]
            for k, y in enumerate(trace.samples[r]):
                w.writerow([f"{t:.6g}", k, repr(float(y))])


def write_positions_csv(trace: Trace, path: str | Path, stride: int = 1, header: str | None = None) -> None:
    """Wide-format positions y_k(t) + k * delta_x, one column per vehicle."""
    L, dx = trace.n_sites, trace.config.delta_x
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["t"] + [f"pos_{k}" for k in range(L)])
        for r in range(0, trace.samples.shape[0], stride):
            row = trace.samples[r] + dx * np.arange(L)
            w.writerow([f"{trace.times[r]:.6g}"] + [repr(float(p)) for p in row])


SUMMARY_FIELDS = ("N", "topology", "v_hat", "stderr")


def summary_row(trace: Trace) -> dict:
    v, se = output_variance(trace)
    return {"N": trace.config.L, "topology": trace.config.topology, "v_hat": v, "stderr": se}
