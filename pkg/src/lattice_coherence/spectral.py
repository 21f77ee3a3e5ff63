"""Per-frequency Lyapunov solves, H2-norm densities and per-site variances.

The per-site variance of the deviation-from-average output on Z_L^d is

    V_N = (1/N) * sum_{n != 0} p_hat(2 pi n / L),

where p_hat(theta) = B^H P(theta) B and P solves A^H P + P A = -C^H C for
the symbol matrices of one coordinate.  For vehicular models p_hat is
multiplied by d (the coordinates are identical and decoupled).
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy import integrate

from . import _backend
from .admissibility import InstabilityError, require_hurwitz, rightmost_eigenvalues
from .lattice import PreconditionError, check_lattice_size, circular_convolve, wavenumber_grid, z_symbol
from .models import Kind, ModelSpec, StateSpaceSymbol, assemble_symbol, symbol_matrices

#: largest m * L**d accepted by the dense real-space oracle
ORACLE_BUDGET = 4000
#: symbols processed per batched Lyapunov call
BATCH = 65536
#: relative rounding allowance when comparing effort with its lower bounds
EFFORT_RTOL = 1e-12


class UnsupportedTemplate(ValueError):
    """No closed-form density exists for this operator combination."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


@dataclass(frozen=True)
class DensitySample:
    theta: tuple[float, ...]
    p_hat: float


@dataclass(frozen=True)
class VarianceReport:
    L: int
    N: int
    v_exact: float
    s_lower: float | None = None
    s_upper: float | None = None
    v_oracle: float | None = None

    @property
    def within_bounds(self) -> bool | None:
        if self.s_lower is None or self.s_upper is None:
            return None
        return self.s_lower <= self.v_exact <= self.s_upper


@dataclass(frozen=True)
class ControlEffort:
    L: int
    effort: float
    bound_f: float
    bound_ab: float

    @property
    def satisfies_bounds(self) -> bool:
        # the f bound is attained exactly when B = 0 and every symbol is real and
        # non-positive, so compare up to rounding of the two sums
        bound = max(self.bound_f, self.bound_ab)
        return self.effort >= bound - EFFORT_RTOL * max(1.0, bound)


# -- single-frequency quantities -----------------------------------------------------


def solve_gramian(symbol: StateSpaceSymbol) -> np.ndarray:
    """Observability Gramian P with A^H P + P A = -C^H C."""
    a = np.asarray(symbol.a_hat, dtype=complex)
    m = a.shape[0]
    lam = np.linalg.eigvals(a)
    k = int(np.argmax(lam.real))
    if lam[k].real >= 0:
        raise InstabilityError(
            f"symbol is not Hurwitz at theta={symbol.theta}: eigenvalue {lam[k]:.6g}",
            theta=symbol.theta,
            eigenvalue=complex(lam[k]),
        )
    c = np.asarray(symbol.c_hat, dtype=complex)
    Q = c.conj().T @ c
    if not Q.any():
        return np.zeros((m, m), dtype=complex)
    # vec(A^H P + P A) = (I kron A^H + A^T kron I) vec(P), column-major vec
    M = np.kron(np.eye(m), a.conj().T) + np.kron(a.T, np.eye(m))
    P = np.linalg.solve(M, -Q.reshape(-1, order="F")).reshape(m, m, order="F")
    P = 0.5 * (P + P.conj().T)
    resid = np.linalg.norm(a.conj().T @ P + P @ a + Q)
    if resid > 1e-10 * (1.0 + np.linalg.norm(P)):
        raise np.linalg.LinAlgError(f"Lyapunov residual {resid:.3g} too large at theta={symbol.theta}")
    return P


def _theta_tuple(model: ModelSpec, theta) -> tuple[float, ...]:
    th = tuple(float(t) for t in np.atleast_1d(np.asarray(theta, dtype=float)))
    if len(th) != model.dimension:
        raise ValueError(f"theta has {len(th)} components, model dimension is {model.dimension}")
    if not any(th):
        raise PreconditionError("the density is not defined at theta = 0 (unobservable average mode)")
    return th


def h2_density(model: ModelSpec, theta) -> DensitySample:
    """Per-site H2-norm density from the Lyapunov solution at one frequency."""
    th = _theta_tuple(model, theta)
    sym = assemble_symbol(model, th)
    P = solve_gramian(sym)
    b = sym.b_hat
    p = float((b.conj().T @ P @ b)[0, 0].real) * model.output_multiplicity
    return DensitySample(th, p)


def density_batch(model: ModelSpec, thetas: np.ndarray, L: int | None = None) -> np.ndarray:
    """Densities at many nonzero frequencies (K, d) through the selected kernel backend."""
    th = np.asarray(thetas, dtype=float).reshape(-1, model.dimension)
    out = np.empty(th.shape[0])
    for start in range(0, th.shape[0], BATCH):
        chunk = th[start : start + BATCH]
        require_hurwitz(model, chunk, L)
        a_hat = symbol_matrices(model, chunk)
        out[start : start + BATCH] = _backend.lyap_density_batch(a_hat, model.position_index, model.disturbance_index)
    return out * model.output_multiplicity


# -- closed forms ------------------------------------------------------------------


def _phi_consensus(a: np.ndarray, b: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Correction term of the dynamic-consensus density for general complex a, b and real f."""
    ar, ai, br, bi = a.real, a.imag, b.real, b.imag
    num = ai * ar * bi + ar**2 * br + ar * br * f + bi**2
    den = ai**2 * ar + ai * bi + ar**3 + 2 * ar**2 * f - ar * br + ar * f**2 - br * f
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = -num / den
    # a = b = 0 makes the memory state decouple; the correction vanishes
    return np.where((num == 0) & (den == 0), 0.0, phi)


def _phi_vehicular(a, b, c, f, g) -> np.ndarray:
    num = b**2 + b * (a * c + c * g - a * f - a * g**2 - a**2 * g) - c * f * a * (a + g)
    den = b - a * f + a**2 * (a + g)
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = num / den
    return np.where((num == 0) & (den == 0), 0.0, phi)


def closed_form_density_batch(model: ModelSpec, thetas: np.ndarray) -> np.ndarray:
    th = np.asarray(thetas, dtype=float).reshape(-1, model.dimension)
    s = {n: np.asarray(z_symbol(a, th)).reshape(-1) for n, a in model.arrays.items()}
    d = model.output_multiplicity
    with np.errstate(divide="ignore", invalid="ignore"):
        if model.kind is Kind.CONSENSUS_STATIC:
            return -1.0 / (2.0 * s["F"].real)
        if model.kind is Kind.CONSENSUS_DYNAMIC:
            f = s["F"].real  # F is symmetric for this template
            return -1.0 / (2.0 * f + 2.0 * _phi_consensus(s["A"], s["B"], f))
        if model.kind is Kind.VEHICULAR_STATIC:
            return d / (2.0 * s["F"].real * s["G"].real)
        a, b, c, f, g = (s[n].real for n in ("A", "B", "C", "F", "G"))
        den = b - a * f + a**2 * (a + g)
        num = b**2 + b * (a * c + c * g - a * f - a * g**2 - a**2 * g) - c * f * a * (a + g)
        if np.any((den == 0) & (num != 0)):
            raise UnsupportedTemplate("the vehicular correction term is singular at a sampled frequency")
        return d / (2.0 * f * g + 2.0 * _phi_vehicular(a, b, c, f, g))


def closed_form_density(model: ModelSpec, theta) -> DensitySample:
    """Density from the template's closed-form expression."""
    th = _theta_tuple(model, theta)
    if model.kind is Kind.CONSENSUS_DYNAMIC and not np.allclose(
        np.imag(z_symbol(model.arrays["F"], np.array([th]))), 0.0, atol=1e-12
    ):
        raise UnsupportedTemplate("dynamic consensus closed form needs a symmetric F")
    return DensitySample(th, float(closed_form_density_batch(model, np.array([th]))[0]))


def dapi_density(theta, f_plus: float = 1.0, g_o: float = 1.0, a_plus: float = 1.0, c_o: float = 1.0) -> np.ndarray:
    """Simplified density of the averaging PI platoon, uniformly bounded in theta."""
    u = 1.0 - np.cos(np.asarray(theta, dtype=float))
    ratio = (c_o * g_o * f_plus + 2 * c_o * f_plus * a_plus * u) / (f_plus + a_plus * g_o + 2 * a_plus**2 * u)
    return 1.0 / (4 * g_o * f_plus * u + 2 * ratio)


# -- sums, integrals and the dense oracle ----------------------------------------------


def _check_sizes(model: ModelSpec, L: int) -> None:
    for a in model.arrays.values():
        check_lattice_size(a, L)


def exact_variance(model: ModelSpec, L: int) -> float:
    """(1/N) times the sum of densities over all nonzero wavenumbers of Z_L^d."""
    _check_sizes(model, L)
    th = wavenumber_grid(L, model.dimension)
    p = density_batch(model, th, L)
    if not np.all(np.isfinite(p)):
        raise InstabilityError(f"singular Lyapunov system on the wavenumber grid of L={L}", L=L)
    return math.fsum(p) / L**model.dimension


def per_site_variance(model: ModelSpec, L: int, oracle: bool = False, bounds: bool = True) -> VarianceReport:
    """Exact per-site variance with optional integral bounds and dense oracle value."""
    v = exact_variance(model, L)
    s_lo = s_hi = None
    if bounds:
        s_lo, s_hi = integral_bounds(model, L)
    v_or = None
    if oracle and model.state_size * L**model.dimension <= ORACLE_BUDGET:
        v_or = brute_force_variance(model, L)
    return VarianceReport(L, L**model.dimension, v, s_lo, s_hi, v_or)


def _scalar_density(model: ModelSpec):
    def p(*theta: float) -> float:
        return float(closed_form_density_batch(model, np.array([theta]))[0])

    return p


def shell_integral(model: ModelSpec, delta: float, epsrel: float = 1e-6) -> float:
    """Integral of the density over the product of shells delta <= |theta_i| <= pi."""
    if not 0 < delta:
        raise PreconditionError("the deleted neighbourhood must have positive size")
    if delta >= np.pi:
        return 0.0
    d = model.dimension
    p = _scalar_density(model)
    pieces = [(-np.pi, -delta), (delta, np.pi)]
    total = []
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            for box in np.ndindex(*([2] * d)):
                ranges = [pieces[i] for i in box]
                if d == 1:
                    val, _ = integrate.quad(p, *ranges[0], epsrel=epsrel, epsabs=0.0, limit=200)
                else:
                    val, _ = integrate.nquad(
                        p, ranges[::-1], opts={"epsrel": epsrel, "epsabs": 0.0, "limit": 200}
                    )
                total.append(val)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"quadrature did not converge for delta={delta:.4g}: {exc}") from exc
    return math.fsum(total)


def integral_bounds(model: ModelSpec, L: int, epsrel: float = 1e-6) -> tuple[float, float]:
    """Shell integrals at the lower (4 pi / L) and upper (2 pi / L) deleted neighbourhoods."""
    _check_sizes(model, L)
    return shell_integral(model, 4 * np.pi / L, epsrel), shell_integral(model, 2 * np.pi / L, epsrel)


def circulant_matrix(array, L: int) -> np.ndarray:
    """Dense matrix of x -> circular_convolve(array, x, L), assembled column by column."""
    N = L**array.dimension
    out = np.empty((N, N))
    e = np.zeros(N)
    for j in range(N):
        e[j] = 1.0
        out[:, j] = circular_convolve(array, e, L)
        e[j] = 0.0
    return out


def closed_loop_blocks(model: ModelSpec, L: int) -> np.ndarray:
    """Full real-space state matrix of one coordinate, state blocks ordered as the template."""
    N = L**model.dimension
    C = {n: circulant_matrix(a, L) for n, a in model.arrays.items()}
    I, Z = np.eye(N), np.zeros((N, N))
    if model.kind is Kind.CONSENSUS_STATIC:
        rows = [[C["F"]]]
    elif model.kind is Kind.CONSENSUS_DYNAMIC:
        rows = [[C["A"], C["B"]], [I, C["F"]]]
    elif model.kind is Kind.VEHICULAR_STATIC:
        rows = [[Z, I], [C["F"], C["G"]]]
    else:
        rows = [[C["A"], C["B"], C["C"]], [Z, Z, I], [I, C["F"], C["G"]]]
    return np.block(rows)


def brute_force_variance(model: ModelSpec, L: int) -> float:
    """Per-site variance from one dense Lyapunov solve in real space.

    The average of every state block is an invariant, unobservable subspace,
    so the system is restricted to the complement of constants with an
    orthonormal basis Q; the output H x = (I - J/N) x then has norm |Q^T x|.
    """
    _check_sizes(model, L)
    m, N = model.state_size, L**model.dimension
    if m * N > ORACLE_BUDGET:
        raise PreconditionError(f"dense oracle needs m*L^d <= {ORACLE_BUDGET}, got {m * N}")
    A = closed_loop_blocks(model, L)
    Q = sla.null_space(np.ones((1, N)))
    T = np.kron(np.eye(m), Q)
    Ar = T.T @ A @ T
    lam = np.linalg.eigvals(Ar)
    if lam.real.max() >= 0:
        raise InstabilityError(f"dense closed loop is unstable at L={L}: eigenvalue {lam[np.argmax(lam.real)]:.6g}", L=L)
    n = N - 1
    Br = np.zeros((m * n, n))
    Br[model.disturbance_index * n : (model.disturbance_index + 1) * n] = np.eye(n)
    X = sla.solve_continuous_lyapunov(Ar, -Br @ Br.T)
    p = model.position_index
    v = np.trace(X[p * n : (p + 1) * n, p * n : (p + 1) * n]) / N
    return float(v) * model.output_multiplicity


# -- control effort ---------------------------------------------------------------------


def control_effort(model: ModelSpec, L: int) -> ControlEffort:
    """Per-site control variance E|u_k|^2 of dynamic consensus and its gain lower bounds."""
    if model.kind is not Kind.CONSENSUS_DYNAMIC:
        raise UnsupportedTemplate("control effort bounds are available for dynamic consensus only")
    from .lattice import is_symmetric

    asym = [n for n, a in model.arrays.items() if not is_symmetric(a)]
    if asym:
        raise UnsupportedTemplate(f"control effort bounds need symmetric arrays; {', '.join(asym)} are not")
    _check_sizes(model, L)
    th = wavenumber_grid(L, model.dimension)
    # with A = B = 0 the memory state is unreachable, so only a + f is checked here
    a, b, f = (np.asarray(z_symbol(model.arrays[n], th)).real for n in ("A", "B", "F"))
    bad = np.flatnonzero(a + f >= 0)
    if bad.size:
        n = tuple(int(round(t * L / (2 * np.pi))) for t in th[bad[0]])
        raise InstabilityError(f"a_hat + f_hat >= 0 at wavenumber n={n}", wavenumber=n, L=L)
    N = L**model.dimension
    effort = (math.fsum(np.abs(f)) + math.fsum(np.abs(b / (a + f)))) / (2 * N)
    f_inf = model.arrays["F"].max_abs
    a_inf = model.arrays["A"].max_abs
    b_inf = model.arrays["B"].max_abs
    q = model.support_radius
    bound_f = f_inf / 2
    if b_inf == 0:
        bound_ab = 0.0
    else:
        bound_ab = math.sqrt((a_inf / 4) ** 2 + b_inf / (4 * (2 * q) ** model.dimension)) - a_inf / 4
    return ControlEffort(L, effort, bound_f, bound_ab)


def control_effort_lyapunov(model: ModelSpec, L: int) -> float:
    """E|u_k|^2 with u = z + F x, from per-wavenumber Lyapunov solves (cross-check)."""
    th = wavenumber_grid(L, model.dimension)
    require_hurwitz(model, th, L)
    a_hat = symbol_matrices(model, th)
    f = np.asarray(z_symbol(model.arrays["F"], th))
    total = []
    for A, fk in zip(a_hat, f):
        C = np.array([[1.0, fk]])
        M = np.kron(np.eye(2), A.conj().T) + np.kron(A.T, np.eye(2))
        P = np.linalg.solve(M, -(C.conj().T @ C).reshape(-1, order="F")).reshape(2, 2, order="F")
        total.append(P[1, 1].real)
    return math.fsum(total) / L**model.dimension


# -- CSV output ------------------------------------------------------------------------


def density_rows(model: ModelSpec, thetas: Iterable[Sequence[float]]) -> list[dict]:
    """Density samples, with unstable or undefined frequencies flagged rather than fatal."""
    rows = []
    for th in thetas:
        th = tuple(float(t) for t in np.atleast_1d(th))
        row = {f"theta_{i + 1}": t for i, t in enumerate(th)}
        try:
            row["p_hat"] = h2_density(model, th).p_hat
            row["flag"] = ""
        except InstabilityError as exc:
            row["p_hat"] = float("nan")
            row["flag"] = f"unstable eigenvalue {exc.eigenvalue:.4g}"
        except PreconditionError:
            row["p_hat"] = float("nan")
            row["flag"] = "theta=0 refused"
        rows.append(row)
    return rows


def write_csv(path: str | Path, rows: list[dict], fieldnames: Sequence[str], header: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in fieldnames})


REPORT_FIELDS = ("L", "N", "v_exact", "s_lower", "s_upper", "v_oracle")


def report_rows(reports: Iterable[VarianceReport]) -> list[dict]:
    return [{k: getattr(r, k) for k in REPORT_FIELDS} for r in reports]
