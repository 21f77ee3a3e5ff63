"""Random model generators shared by the test modules."""
import itertools

import numpy as np

from lattice_coherence.admissibility import first_unstable
from lattice_coherence.lattice import LocalArray, wavenumber_grid
from lattice_coherence.models import (
    TEMPLATES,
    consensus_dynamic,
    consensus_static,
    vehicular_dynamic,
    vehicular_static,
)


def random_symmetric(rng, d, radius=1, absolute=0.0, scale=(0.1, 2.0)):
    """Symmetric array with non-negative off-centre weights, so its symbol is <= -absolute."""
    entries = {}
    offsets = [k for k in itertools.product(range(-radius, radius + 1), repeat=d) if any(k)]
    for k in offsets:
        neg = tuple(-c for c in k)
        if neg in entries:
            continue
        w = rng.uniform(*scale) if rng.random() < 0.7 else 0.0
        entries[k] = entries[neg] = w
    if not any(entries.values()):
        k = offsets[0]
        entries[k] = entries[tuple(-c for c in k)] = rng.uniform(*scale)
    entries[(0,) * d] = -sum(entries.values()) - absolute
    return LocalArray(d, entries)


def random_asymmetric_relative(rng, d):
    e = np.eye(d, dtype=int)
    entries = {}
    for i in range(d):
        entries[tuple(e[i])] = rng.uniform(0.1, 1.0)
        entries[tuple(-e[i])] = rng.uniform(0.1, 1.0)
    entries[(0,) * d] = -sum(entries.values())
    return LocalArray(d, entries)


def random_model(template, d, rng):
    """Random gains for a template; symbols are negative off zero."""
    sym = lambda **kw: random_symmetric(rng, d, **kw)
    if template == "consensus_static":
        return consensus_static(sym())
    if template == "consensus_dynamic":
        if rng.random() < 0.5:
            return consensus_dynamic(sym(absolute=rng.uniform(0, 1)), sym(), sym())
        # asymmetric B is admissible once A has enough absolute feedback
        return consensus_dynamic(sym(absolute=rng.uniform(2, 4)), random_asymmetric_relative(rng, d), sym())
    if template == "vehicular_static":
        return vehicular_static(sym(), sym(absolute=rng.uniform(0, 1) if rng.random() < 0.5 else 0.0))
    if template == "vehicular_dynamic_relative":
        return vehicular_dynamic(sym(), LocalArray.zero(d), sym(), sym(), sym())
    if template == "vehicular_dynamic_absolute":
        return vehicular_dynamic(
            sym(), LocalArray.zero(d), sym(absolute=rng.uniform(0.1, 1)), sym(), sym(absolute=rng.uniform(0.1, 1))
        )
    raise ValueError(template)


def admissible_model(template, d, L, rng, tries=50):
    """Random model that is Hurwitz at every nonzero wavenumber of Z_L^d."""
    for _ in range(tries):
        m = random_model(template, d, rng)
        if first_unstable(m, wavenumber_grid(L, d), tol=-1e-9) is None:
            return m
    raise RuntimeError(f"no admissible {template} model found")


