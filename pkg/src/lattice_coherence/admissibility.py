"""Stability and admissibility verdicts for spatially invariant closed loops.

A feedback law is admissible when the closed loop is stable, with respect to
the deviation-from-average output, at every lattice size.  That amounts to the
symbol being Hurwitz at every nonzero frequency.  A finite grid can only give
evidence for this; an unstable grid point is a conclusive counterexample.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .lattice import PreconditionError, is_relative, is_symmetric, wavenumber_grid
from .models import Kind, ModelSpec, symbol_matrices

#: real parts above this are conclusive instability witnesses
HURWITZ_TOL = 1e-10

ADMISSIBLE = "admissible"
INADMISSIBLE = "inadmissible"
NECESSARY_FAIL = "necessary-conditions-fail"


class InstabilityError(RuntimeError):
    """The symbol is not Hurwitz at some frequency."""

    def __init__(self, message: str, theta=None, eigenvalue=None, wavenumber=None, L=None):
        super().__init__(message)
        self.theta = theta
        self.eigenvalue = eigenvalue
        self.wavenumber = wavenumber
        self.L = L


class HypothesisNotApplicable(ValueError):
    """A necessary-condition test was called on a model outside its hypothesis."""


@dataclass
class AdmissibilityVerdict:
    verdict: str
    witness: tuple | None = None
    eigenvalue: complex | None = None
    failed_condition: str | None = None
    passed_condition: str | None = None
    L_crit: int | None = None
    evidence: str = ""
    unstable_L: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.verdict == INADMISSIBLE and self.witness is None:
            raise ValueError("an inadmissible verdict needs a witness")
        if self.verdict == NECESSARY_FAIL and self.failed_condition is None:
            raise ValueError("a necessary-conditions failure must name the condition")

    @property
    def ok(self) -> bool:
        return self.verdict == ADMISSIBLE

    def to_dict(self) -> dict:
        doc = asdict(self)
        if self.witness is not None:
            doc["witness"] = [float(t) for t in self.witness]
        if self.eigenvalue is not None:
            doc["eigenvalue"] = [float(np.real(self.eigenvalue)), float(np.imag(self.eigenvalue))]
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# -- eigenvalues -----------------------------------------------------------------


def rightmost_eigenvalues(a_hat: np.ndarray) -> np.ndarray:
    """Eigenvalue with the largest real part for each matrix in a (K, m, m) stack.

    Sizes 1 and 2 use the characteristic roots directly; size 3 uses a
    batched eigenvalue solver.
    """
    a = np.asarray(a_hat, dtype=complex)
    m = a.shape[-1]
    if m == 1:
        return a[:, 0, 0]
    if m == 2:
        tr = a[:, 0, 0] + a[:, 1, 1]
        det = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
        disc = np.sqrt(tr * tr / 4.0 - det)
        r1, r2 = tr / 2.0 + disc, tr / 2.0 - disc
        return np.where(r1.real >= r2.real, r1, r2)
    ev = np.linalg.eigvals(a)
    idx = np.argmax(ev.real, axis=-1)
    return np.take_along_axis(ev, idx[:, None], axis=-1)[:, 0]


def routh_hurwitz_cubic(m3: float, m2: float, m1: float, m0: float) -> bool:
    """True iff m3 s^3 + m2 s^2 + m1 s + m0 has all roots in the open left half plane."""
    return bool(m3 > 0 and m2 > 0 and m1 > 0 and m0 > 0 and m2 * m1 > m3 * m0)


def _vehicular_cubic_stable(a_hat: np.ndarray) -> np.ndarray:
    """Vectorised Routh test on s^3 - (a+g) s^2 + (a g - f - c) s + a f - b."""
    a = a_hat[:, 0, 0].real
    b = a_hat[:, 0, 1].real
    c = a_hat[:, 0, 2].real
    f = a_hat[:, 2, 1].real
    g = a_hat[:, 2, 2].real
    m2 = -(a + g)
    m1 = a * g - f - c
    m0 = a * f - b
    return (m2 > 0) & (m1 > 0) & (m0 > 0) & (m2 * m1 > m0)


def first_unstable(model: ModelSpec, thetas: np.ndarray, tol: float = 0.0):
    """Index and eigenvalue of the first frequency whose symbol has Re(lambda) > tol, or None."""
    th = np.asarray(thetas, dtype=float).reshape(-1, model.dimension)
    if th.shape[0] == 0:
        return None
    lam = rightmost_eigenvalues(symbol_matrices(model, th))
    bad = np.flatnonzero(lam.real > tol)
    if bad.size == 0:
        return None
    return int(bad[0]), complex(lam[bad[0]])


def require_hurwitz(model: ModelSpec, thetas: np.ndarray, L: int | None = None) -> None:
    """Raise :class:`InstabilityError` unless the symbol is Hurwitz at every frequency."""
    th = np.asarray(thetas, dtype=float).reshape(-1, model.dimension)
    if th.shape[0] == 0:
        return
    lam = rightmost_eigenvalues(symbol_matrices(model, th))
    bad = np.flatnonzero(lam.real >= 0.0)
    if bad.size:
        k = int(bad[0])
        theta = tuple(float(t) for t in th[k])
        n = tuple(int(round(t * L / (2 * np.pi))) for t in theta) if L else None
        where = f"wavenumber n={n} (L={L})" if L else f"theta={theta}"
        raise InstabilityError(
            f"symbol is not Hurwitz at {where}: eigenvalue {lam[k]:.6g}",
            theta=theta,
            eigenvalue=complex(lam[k]),
            wavenumber=n,
            L=L,
        )


# -- grid check -------------------------------------------------------------------


def admissibility_grid(d: int, points_per_dim: int, L_max: int = 4096) -> np.ndarray:
    """Frequencies in the half space theta_1 >= 0 (conjugate symmetry covers the rest).

    Each axis combines a uniform grid on [-pi, pi] with logarithmically
    spaced points down to 2 pi / L_max, since instabilities of relative
    feedback laws emerge at vanishing frequency.
    """
    uniform = np.linspace(-np.pi, np.pi, points_per_dim)
    small = np.geomspace(2 * np.pi / L_max, 0.5, max(8, points_per_dim // 4))
    axis = np.unique(np.concatenate([uniform, small, -small, [0.0]]))
    if d == 1:
        th = axis[axis > 0][:, None]
        return th
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=-1)
    keep = (grid[:, 0] > 0) | ((grid[:, 0] == 0) & np.any(grid != 0, axis=1))
    return grid[keep]


def default_grid_points(d: int) -> int:
    """Points per axis: 10^4 in one dimension, shrinking so the total stays near 10^5 to 10^6."""
    return 10_000 if d == 1 else max(64, int(round(10_000 ** (2 / (d + 1)))))


def hurwitz_grid_check(
    model: ModelSpec, grid_points_per_dim: int | None = None, L_max: int = 4096
) -> AdmissibilityVerdict:
    """Check that the symbol is Hurwitz on a frequency grid that avoids theta = 0."""
    if grid_points_per_dim is None:
        grid_points_per_dim = default_grid_points(model.dimension)
    if grid_points_per_dim < 2:
        raise ValueError("need at least 2 grid points per dimension")
    grid = admissibility_grid(model.dimension, grid_points_per_dim, L_max)
    worst_margin = -math.inf
    for start in range(0, grid.shape[0], 65536):
        chunk = grid[start : start + 65536]
        lam = rightmost_eigenvalues(symbol_matrices(model, chunk))
        bad = np.flatnonzero(lam.real > HURWITZ_TOL)
        if bad.size:
            k = int(bad[np.argmax(lam.real[bad])])
            return AdmissibilityVerdict(
                INADMISSIBLE,
                witness=tuple(float(t) for t in chunk[k]),
                eigenvalue=complex(lam[k]),
                evidence=f"unstable eigenvalue on a {grid.shape[0]}-point grid",
            )
        worst_margin = max(worst_margin, float(lam.real.max()))
    h = float(np.min(np.abs(grid[np.any(grid != 0, axis=1)]).max(axis=1)))
    return AdmissibilityVerdict(
        ADMISSIBLE,
        evidence=(
            f"Hurwitz on {grid.shape[0]} grid points, smallest |theta| {h:.3g}, "
            f"largest real part {worst_margin:.3g}; grid evidence, not a proof"
        ),
    )


# -- necessary conditions ----------------------------------------------------------


def necessary_conditions_consensus(model: ModelSpec) -> AdmissibilityVerdict:
    """Dynamic consensus needs a symmetric B or absolute feedback in A."""
    if model.kind is not Kind.CONSENSUS_DYNAMIC:
        raise HypothesisNotApplicable("the consensus necessary conditions apply to dynamic consensus only")
    A, B = model.arrays["A"], model.arrays["B"]
    if is_symmetric(B):
        return AdmissibilityVerdict(ADMISSIBLE, passed_condition="Theorem 3a", evidence="B is symmetric")
    if not is_relative(A):
        return AdmissibilityVerdict(ADMISSIBLE, passed_condition="Theorem 3b", evidence="A has absolute feedback")
    return AdmissibilityVerdict(
        NECESSARY_FAIL,
        failed_condition="Theorem 3",
        evidence="B is asymmetric and A uses relative feedback only; the loop destabilises at some lattice size",
    )


def necessary_conditions_vehicular(model: ModelSpec) -> AdmissibilityVerdict:
    """Dynamic vehicular control with relative velocity feedback needs B = 0, A != 0, or absolute A."""
    if model.kind is not Kind.VEHICULAR_DYNAMIC:
        raise HypothesisNotApplicable("the vehicular necessary conditions apply to dynamic vehicular models only")
    if model.velocity_feedback != "relative":
        raise HypothesisNotApplicable(
            "the vehicular necessary conditions assume relative velocity feedback in G and C"
        )
    A, B = model.arrays["A"], model.arrays["B"]
    if B.is_zero() and not A.is_zero():
        return AdmissibilityVerdict(ADMISSIBLE, passed_condition="Theorem 4a", evidence="B = 0 and A != 0")
    if not is_relative(A):
        return AdmissibilityVerdict(ADMISSIBLE, passed_condition="Theorem 4b", evidence="A has absolute feedback")
    return AdmissibilityVerdict(
        NECESSARY_FAIL,
        failed_condition="Theorem 4",
        evidence="A is relative and not (B = 0 with A != 0)",
    )


# -- critical lattice size -----------------------------------------------------------


def _unstable_on_lattice_sizes(model: ModelSpec, Ls: np.ndarray) -> np.ndarray:
    """Boolean per L: is some nonzero wavenumber of Z_L^d non-Hurwitz (d = 1)."""
    L_of, n_of = [], []
    for L in Ls:
        n = np.arange(1, L // 2 + 1)  # conjugate symmetry covers the negative half
        L_of.append(np.full(n.size, L))
        n_of.append(n)
    L_all = np.concatenate(L_of)
    th = (2 * np.pi * np.concatenate(n_of) / L_all)[:, None]
    a_hat = symbol_matrices(model, th)
    if model.kind is Kind.VEHICULAR_DYNAMIC:
        # symmetric arrays give real cubics; confirm Routh failures on the eigenvalues
        unstable = ~_vehicular_cubic_stable(a_hat)
        idx = np.flatnonzero(unstable)
        if idx.size:
            lam = rightmost_eigenvalues(a_hat[idx])
            unstable[idx] = lam.real > HURWITZ_TOL
    else:
        unstable = rightmost_eigenvalues(a_hat).real > HURWITZ_TOL
    bad_L = np.unique(L_all[unstable])
    return np.isin(Ls, bad_L)


def find_critical_L(model: ModelSpec, L_max: int, stop_at_first: bool = False, block: int = 128) -> AdmissibilityVerdict:
    """Smallest lattice side L <= L_max at which some wavenumber is unstable.

    Instability at L does not imply instability at larger L, so by default the
    whole range is scanned and every unstable L is reported.
    """
    q = model.support_radius
    if L_max < 2 * q + 2:
        raise PreconditionError(f"L_max={L_max} must be at least {2 * q + 2}")
    unstable: list[int] = []
    for lo in range(2 * q + 1, L_max + 1, block):
        Ls = np.arange(lo, min(lo + block, L_max + 1))
        if model.dimension == 1:
            mask = _unstable_on_lattice_sizes(model, Ls)
        else:
            mask = np.array(
                [first_unstable(model, wavenumber_grid(int(L), model.dimension), HURWITZ_TOL) is not None for L in Ls]
            )
        unstable.extend(int(L) for L in Ls[mask])
        if stop_at_first and unstable:
            break
    if not unstable:
        return AdmissibilityVerdict(ADMISSIBLE, evidence=f"all wavenumbers Hurwitz for {2 * q + 1} <= L <= {L_max}")
    L_crit = unstable[0]
    found = first_unstable(model, wavenumber_grid(L_crit, model.dimension), HURWITZ_TOL)
    th = wavenumber_grid(L_crit, model.dimension)[found[0]]
    return AdmissibilityVerdict(
        INADMISSIBLE,
        witness=tuple(float(t) for t in th),
        eigenvalue=found[1],
        L_crit=L_crit,
        unstable_L=unstable,
        evidence=f"{len(unstable)} unstable lattice side(s) found up to L={unstable[-1] if stop_at_first else L_max}",
    )
