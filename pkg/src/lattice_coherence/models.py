"""Closed-loop templates for consensus and vehicular formations on Z_L^d.

Four model kinds are supported.  State ordering per site is

* consensus_static   : (x)
* consensus_dynamic  : (z, x)       with  z' = A z + B x,  x' = z + F x + w
* vehicular_static   : (x, v)       with  v' = F x + G v + w
* vehicular_dynamic  : (z, x, v)    with  z' = A z + B x + C v,  v' = z + F x + G v + w

Vehicular arrays act identically and independently on each of the d
coordinates, so every symbol is assembled for a single coordinate and
per-site quantities are multiplied by d afterwards.
"""
from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .lattice import (
    LocalArray,
    is_relative,
    is_symmetric,
    nearest_neighbour_array,
    standard_consensus_array,
    z_symbol,
)

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib


class ModelError(ValueError):
    """The arrays given for a model violate its structural assumptions."""


class Kind(str, enum.Enum):
    CONSENSUS_STATIC = "consensus_static"
    CONSENSUS_DYNAMIC = "consensus_dynamic"
    VEHICULAR_STATIC = "vehicular_static"
    VEHICULAR_DYNAMIC = "vehicular_dynamic"


REQUIRED_ARRAYS: dict[Kind, tuple[str, ...]] = {
    Kind.CONSENSUS_STATIC: ("F",),
    Kind.CONSENSUS_DYNAMIC: ("A", "B", "F"),
    Kind.VEHICULAR_STATIC: ("F", "G"),
    Kind.VEHICULAR_DYNAMIC: ("A", "B", "C", "F", "G"),
}

STATE_ORDER: dict[Kind, tuple[str, ...]] = {
    Kind.CONSENSUS_STATIC: ("x",),
    Kind.CONSENSUS_DYNAMIC: ("z", "x"),
    Kind.VEHICULAR_STATIC: ("x", "v"),
    Kind.VEHICULAR_DYNAMIC: ("z", "x", "v"),
}

TEMPLATES = (
    "consensus_static",
    "consensus_dynamic",
    "vehicular_static",
    "vehicular_dynamic_relative",
    "vehicular_dynamic_absolute",
)


@dataclass(frozen=True)
class ModelSpec:
    kind: Kind
    arrays: Mapping[str, LocalArray]
    name: str = ""

    def __post_init__(self) -> None:
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        required = REQUIRED_ARRAYS[kind]
        missing = [n for n in required if n not in self.arrays]
        if missing:
            raise ModelError(f"{kind.value} model is missing required array(s) {', '.join(missing)}")
        extra = sorted(set(self.arrays) - set(required))
        if extra:
            raise ModelError(f"{kind.value} model does not use array(s) {', '.join(extra)}")
        dims = {a.dimension for a in self.arrays.values()}
        if len(dims) != 1:
            raise ModelError(f"arrays have inconsistent dimensions {sorted(dims)}")
        object.__setattr__(self, "arrays", {n: self.arrays[n] for n in required})

        for n in ("F", "B"):
            if n in self.arrays and not is_relative(self.arrays[n]):
                raise ModelError(f"array {n} must use relative measurements only (entries must sum to 0)")
        if self.is_vehicular:
            asym = [n for n, a in self.arrays.items() if not is_symmetric(a)]
            if asym:
                raise ModelError(f"vehicular arrays must be reflection symmetric; {', '.join(asym)} are not")
        if kind is Kind.CONSENSUS_DYNAMIC and not is_symmetric(self.arrays["F"]):
            raise ModelError("dynamic consensus requires a symmetric F")

    @property
    def dimension(self) -> int:
        return next(iter(self.arrays.values())).dimension

    @property
    def is_vehicular(self) -> bool:
        return self.kind in (Kind.VEHICULAR_STATIC, Kind.VEHICULAR_DYNAMIC)

    @property
    def is_dynamic(self) -> bool:
        return self.kind in (Kind.CONSENSUS_DYNAMIC, Kind.VEHICULAR_DYNAMIC)

    @property
    def velocity_feedback(self) -> str | None:
        """``"relative"`` or ``"absolute"`` for vehicular models, None otherwise."""
        if not self.is_vehicular:
            return None
        names = ("G", "C") if self.is_dynamic else ("G",)
        return "relative" if all(is_relative(self.arrays[n]) for n in names) else "absolute"

    @property
    def template(self) -> str:
        if self.kind is Kind.VEHICULAR_DYNAMIC:
            return f"vehicular_dynamic_{self.velocity_feedback}"
        return self.kind.value

    @property
    def state_size(self) -> int:
        return len(STATE_ORDER[self.kind])

    @property
    def position_index(self) -> int:
        return STATE_ORDER[self.kind].index("x")

    @property
    def disturbance_index(self) -> int:
        return self.state_size - 1

    @property
    def output_multiplicity(self) -> int:
        """Number of identical decoupled coordinates summed in the per-site output."""
        return self.dimension if self.is_vehicular else 1

    @property
    def support_radius(self) -> int:
        return max(a.support_radius for a in self.arrays.values())

    @property
    def beta(self) -> float:
        """Gain magnitude max(||f||_inf, ||g||_inf)."""
        return max(self.arrays[n].max_abs for n in ("F", "G") if n in self.arrays)

    def to_dict(self) -> dict:
        doc = {"kind": self.kind.value, "dimension": self.dimension, "arrays": {}}
        if self.name:
            doc["name"] = self.name
        if self.velocity_feedback:
            doc["velocity_feedback"] = self.velocity_feedback
        for n, a in self.arrays.items():
            doc["arrays"][n] = {"offsets": [list(k) for k in a.entries], "values": list(a.entries.values())}
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class StateSpaceSymbol:
    """Per-frequency matrices of one coordinate of the closed loop."""

    a_hat: np.ndarray
    b_hat: np.ndarray
    c_hat: np.ndarray
    theta: tuple[float, ...]


def symbol_matrices(model: ModelSpec, thetas: np.ndarray) -> np.ndarray:
    """Stack of a_hat matrices, shape (K, m, m), for frequencies of shape (K, d)."""
    th = np.asarray(thetas, dtype=float).reshape(-1, model.dimension)
    K = th.shape[0]
    s = {n: np.asarray(z_symbol(a, th)).reshape(K) for n, a in model.arrays.items()}
    m = model.state_size
    out = np.zeros((K, m, m), dtype=complex)
    if model.kind is Kind.CONSENSUS_STATIC:
        out[:, 0, 0] = s["F"]
    elif model.kind is Kind.CONSENSUS_DYNAMIC:
        out[:, 0, 0] = s["A"]
        out[:, 0, 1] = s["B"]
        out[:, 1, 0] = 1.0
        out[:, 1, 1] = s["F"]
    elif model.kind is Kind.VEHICULAR_STATIC:
        out[:, 0, 1] = 1.0
        out[:, 1, 0] = s["F"]
        out[:, 1, 1] = s["G"]
    else:
        out[:, 0, 0] = s["A"]
        out[:, 0, 1] = s["B"]
        out[:, 0, 2] = s["C"]
        out[:, 1, 2] = 1.0
        out[:, 2, 0] = 1.0
        out[:, 2, 1] = s["F"]
        out[:, 2, 2] = s["G"]
    return out


def assemble_symbol(model: ModelSpec, theta) -> StateSpaceSymbol:
    th = tuple(float(t) for t in np.atleast_1d(np.asarray(theta, dtype=float)))
    if len(th) != model.dimension:
        raise ValueError(f"theta has {len(th)} components, model dimension is {model.dimension}")
    a_hat = symbol_matrices(model, np.array([th]))[0]
    m = model.state_size
    b_hat = np.zeros((m, 1), dtype=complex)
    b_hat[model.disturbance_index, 0] = 1.0
    c_hat = np.zeros((1, m), dtype=complex)
    if any(t != 0.0 for t in th):
        # deviation-from-average output: the average mode is unobservable
        c_hat[0, model.position_index] = 1.0
    return StateSpaceSymbol(a_hat, b_hat, c_hat, th)


# -- builders -----------------------------------------------------------------


def consensus_static(F: LocalArray, name: str = "") -> ModelSpec:
    return ModelSpec(Kind.CONSENSUS_STATIC, {"F": F}, name)


def consensus_dynamic(A: LocalArray, B: LocalArray, F: LocalArray, name: str = "") -> ModelSpec:
    return ModelSpec(Kind.CONSENSUS_DYNAMIC, {"A": A, "B": B, "F": F}, name)


def _diag(a: LocalArray) -> LocalArray:
    return LocalArray(a.dimension, a.entries, "diagonal")


def vehicular_static(F: LocalArray, G: LocalArray, name: str = "") -> ModelSpec:
    return ModelSpec(Kind.VEHICULAR_STATIC, {"F": _diag(F), "G": _diag(G)}, name)


def vehicular_dynamic(
    A: LocalArray, B: LocalArray, C: LocalArray, F: LocalArray, G: LocalArray, name: str = ""
) -> ModelSpec:
    arrays = {"A": A, "B": B, "C": C, "F": F, "G": G}
    return ModelSpec(Kind.VEHICULAR_DYNAMIC, {k: _diag(v) for k, v in arrays.items()}, name)


def standard_consensus_model(d: int = 1, f_tilde: float = 1.0) -> ModelSpec:
    return consensus_static(standard_consensus_array(d, f_tilde), name="standard_consensus")


def dapi_model(f_plus: float, g_o: float, a_plus: float, c_o: float) -> ModelSpec:
    """Distributed-averaging proportional-integral control of a 1-D platoon.

    ``a_plus = 0`` is accepted with a warning: without averaging of the
    integral states the controller is a decentralised PI, which drifts.
    """
    for label, g in (("f_plus", f_plus), ("g_o", g_o), ("c_o", c_o)):
        if not g > 0:
            raise ModelError(f"{label} must be positive, got {g}")
    if a_plus < 0:
        raise ModelError(f"a_plus must be non-negative, got {a_plus}")
    if a_plus == 0:
        warnings.warn(
            "a_plus = 0 gives decentralised PI control; the integral states are not averaged "
            "and the closed loop is not stable",
            stacklevel=2,
        )
    F = nearest_neighbour_array(1, f_plus)
    A = nearest_neighbour_array(1, a_plus)
    G = LocalArray(1, {(0,): -g_o})
    C = LocalArray(1, {(0,): -c_o})
    return vehicular_dynamic(A, LocalArray.zero(1), C, F, G, name="dapi")


def lookahead_model(f_plus: float, f_minus: float, g_plus: float, g_minus: float, g_o: float = 0.0) -> ModelSpec:
    """Look-ahead / look-behind platoon controller with optional absolute velocity term."""
    gains = {"f_plus": f_plus, "f_minus": f_minus, "g_plus": g_plus, "g_minus": g_minus, "g_o": g_o}
    for label, g in gains.items():
        if g < 0:
            raise ModelError(f"{label} must be non-negative, got {g}")
    if f_plus != f_minus or g_plus != g_minus:
        raise ModelError(
            "look-ahead and look-behind gains must match (f_plus == f_minus, g_plus == g_minus): "
            "vehicular feedback has to be reflection symmetric"
        )
    F = nearest_neighbour_array(1, f_plus)
    G = nearest_neighbour_array(1, g_plus, absolute=g_o)
    return vehicular_static(F, G, name="lookahead")


# -- model files ----------------------------------------------------------------

_BUILDERS = {
    "dapi": dapi_model,
    "lookahead": lookahead_model,
    "standard_consensus": standard_consensus_model,
}


def _array_from_doc(doc: Mapping, d: int, base_dir: Path) -> LocalArray:
    if "file" in doc:
        path = Path(doc["file"])
        if not path.is_absolute():
            path = base_dir / path
        return LocalArray.from_json(path.read_text())
    if "nearest" in doc or "absolute" in doc:
        return nearest_neighbour_array(d, float(doc.get("nearest", 0.0)), float(doc.get("absolute", 0.0)))
    return LocalArray.from_dict({"dimension": d, **doc})


def model_from_dict(doc: Mapping, base_dir: Path | str = ".") -> ModelSpec:
    """Build a model from a parsed model document (TOML or JSON layout)."""
    base_dir = Path(base_dir)
    if "builder" in doc:
        builder = doc["builder"]
        if builder not in _BUILDERS:
            raise ModelError(f"unknown builder {builder!r}; choose from {sorted(_BUILDERS)}")
        model = _BUILDERS[builder](**doc.get("params", {}))
    else:
        kind = Kind(doc["kind"])
        d = int(doc.get("dimension", 1))
        arrays = {n: _array_from_doc(a, d, base_dir) for n, a in doc.get("arrays", {}).items()}
        if kind in (Kind.VEHICULAR_STATIC, Kind.VEHICULAR_DYNAMIC):
            arrays = {n: _diag(a) for n, a in arrays.items()}
        if doc.get("zero_missing", False):
            # convenience for files that only list the nonzero arrays
            for n in REQUIRED_ARRAYS[kind]:
                arrays.setdefault(n, LocalArray.zero(d, "diagonal" if "G" in REQUIRED_ARRAYS[kind] else "scalar"))
        model = ModelSpec(kind, arrays, doc.get("name", ""))
    declared = doc.get("velocity_feedback")
    if declared is not None and declared != model.velocity_feedback:
        raise ModelError(
            f"model declares {declared} velocity feedback but its arrays give {model.velocity_feedback}"
        )
    return model


def load_model(path: str | Path) -> ModelSpec:
    path = Path(path)
    text = path.read_text()
    doc = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    if "model" in doc and isinstance(doc["model"], Mapping):
        doc = doc["model"]
    return model_from_dict(doc, path.parent)
