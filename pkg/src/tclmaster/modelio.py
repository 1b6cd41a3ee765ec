"""Model files and numeric output documents.

A model file is a JSON object::

    {
      "dimension": 3,
      "l0": {"hamiltonian": [[[re, im], ...], ...],
             "jumps": [{"operator": [[[re, im], ...], ...], "rate": 1.0}]},
      "l_int": {"commutator": {"operator": [...], "prefactor": [0.0, -1.0]}},
      "projector": {"named": "argyres-kelley-example"},
      "lambda": 0.1,
      "t0": 0.0
    }

``l0``, ``l_int`` and ``projector`` also accept ``{"matrix": ...}`` with a
d^2 x d^2 superoperator in column-stacking convention. Complex numbers are
always written as [re, im] pairs. Unknown keys, NaN and Infinity are errors.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from . import example_model, superops
from .errors import ValidationError
from .tcl import ModelSpec

NAMED_PROJECTORS = {"argyres-kelley-example": example_model.projector}


class ModelFileError(ValidationError):
    """A model or state file could not be parsed; ``where`` names the key path."""

    def __init__(self, where, message):
        super().__init__(f"{where}: {message}")
        self.where = where


def _reject_constant(name):
    raise ValueError(f"non-finite number {name} is not allowed")


def load_json(text, source="<input>"):
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{source}:{exc.lineno}:{exc.colno}", exc.msg) from None
    except ValueError as exc:
        raise ModelFileError(source, str(exc)) from None


def _keys(obj, where, required, optional=()):
    if not isinstance(obj, dict):
        raise ModelFileError(where, "expected an object")
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise ModelFileError(where, f"unknown keys {sorted(unknown)}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise ModelFileError(where, f"missing keys {missing}")


def _one_of(obj, where, choices):
    if not isinstance(obj, dict) or len(obj) != 1 or next(iter(obj)) not in choices:
        raise ModelFileError(where, f"expected exactly one of {sorted(choices)}")
    return next(iter(obj))


def _real(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ModelFileError(where, f"expected a finite number, got {value!r}")
    return float(value)


def _complex(value, where):
    if not isinstance(value, list) or len(value) != 2:
        raise ModelFileError(where, "expected an [re, im] pair")
    return complex(_real(value[0], where), _real(value[1], where))


def parse_matrix(value, where, shape=None):
    if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
        raise ModelFileError(where, "expected a nested array of [re, im] pairs")
    rows = [[_complex(x, f"{where}[{i}][{j}]") for j, x in enumerate(row)] for i, row in enumerate(value)]
    if len({len(r) for r in rows}) != 1:
        raise ModelFileError(where, "ragged matrix")
    out = np.array(rows, dtype=complex)
    if shape is not None and out.shape != shape:
        raise ModelFileError(where, f"expected shape {shape}, got {out.shape}")
    return out


def _free(obj, d):
    if isinstance(obj, dict) and "matrix" in obj:
        _keys(obj, "l0", ["matrix"])
        return parse_matrix(obj["matrix"], "l0.matrix", (d * d, d * d))
    _keys(obj, "l0", ["hamiltonian"], ["jumps"])
    ham = parse_matrix(obj["hamiltonian"], "l0.hamiltonian", (d, d))
    jumps = []
    for n, jump in enumerate(obj.get("jumps", [])):
        where = f"l0.jumps[{n}]"
        _keys(jump, where, ["operator", "rate"])
        jumps.append((parse_matrix(jump["operator"], f"{where}.operator", (d, d)),
                      _real(jump["rate"], f"{where}.rate")))
    try:
        return superops.gksl_superoperator(superops.GkslSpec(ham, tuple(jumps)))
    except ValidationError as exc:
        raise ModelFileError("l0", str(exc)) from None


def _interaction(obj, d):
    kind = _one_of(obj, "l_int", {"commutator", "matrix"})
    if kind == "matrix":
        return parse_matrix(obj["matrix"], "l_int.matrix", (d * d, d * d))
    comm = obj["commutator"]
    _keys(comm, "l_int.commutator", ["operator"], ["prefactor"])
    op = parse_matrix(comm["operator"], "l_int.commutator.operator", (d, d))
    pref = _complex(comm.get("prefactor", [1.0, 0.0]), "l_int.commutator.prefactor")
    return superops.commutator_superoperator(op, pref)


def _projector(obj, d):
    kind = _one_of(obj, "projector", {"matrix", "named"})
    if kind == "matrix":
        return parse_matrix(obj["matrix"], "projector.matrix", (d * d, d * d))
    name = obj["named"]
    if name not in NAMED_PROJECTORS:
        raise ModelFileError("projector.named", f"unknown projector {name!r}")
    p = NAMED_PROJECTORS[name]()
    if p.shape != (d * d, d * d):
        raise ModelFileError("projector.named", f"{name!r} needs dimension {superops.hilbert_dim(p)}")
    return p


def parse_model(doc) -> ModelSpec:
    _keys(doc, "model", ["dimension", "l0", "l_int", "projector"], ["lambda", "t0"])
    d = doc["dimension"]
    if isinstance(d, bool) or not isinstance(d, int) or d < 1:
        raise ModelFileError("dimension", f"expected a positive integer, got {d!r}")
    l0 = _free(doc["l0"], d)
    l_int = _interaction(doc["l_int"], d)
    p = _projector(doc["projector"], d)
    lam = _real(doc.get("lambda", 0.0), "lambda")
    t0 = _real(doc.get("t0", 0.0), "t0")
    try:
        return ModelSpec(l0, l_int, p, lam=lam, t0=t0)
    except ValidationError as exc:
        raise ModelFileError("model", str(exc)) from None


def read_model(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_model(load_json(text, str(path))), model_hash(text)


def read_state(path, d):
    """A state file is {"rho0": nested [re, im] array}."""
    with open(path, encoding="utf-8") as fh:
        doc = load_json(fh.read(), str(path))
    _keys(doc, "state", ["rho0"])
    return parse_matrix(doc["rho0"], "rho0", (d, d))


def model_hash(text) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def matrix_to_pairs(m):
    """Nested [re, im] pairs, the inverse of :func:`parse_matrix`."""
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def _fmt(x):
    # fixed 17 significant digits; -0.0 folded to 0.0 for stable output
    if x == 0.0:
        x = 0.0
    if not math.isfinite(x):
        return "null"
    return f"{x:.16e}"


def dumps(obj, indent=0, step=1) -> str:
    """Deterministic JSON with every float in 17-digit scientific notation.

    Lists of scalars or [re, im] pairs go on one line to keep matrices readable.
    """
    pad = " " * (indent + step)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent + step, step)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + " " * indent + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple)) for v in obj) or all(
            isinstance(v, (list, tuple)) and all(not isinstance(w, (dict, list, tuple)) for w in v) for v in obj
        ):
            return "[" + ", ".join(dumps(v, indent, step) for v in obj) + "]"
        items = [pad + dumps(v, indent + step, step) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + " " * indent + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def example_model_doc(gamma=1.0, g=1.0, lam=0.1):
    """Model-file document for the three-level example."""
    d = example_model.D
    ham = np.zeros((d, d))
    jump = superops.ket_bra(0, 2, d)
    coupling = superops.ket_bra(2, 1, d) + superops.ket_bra(1, 2, d)
    return {
        "dimension": d,
        "l0": {"hamiltonian": matrix_to_pairs(ham), "jumps": [{"operator": matrix_to_pairs(jump), "rate": gamma}]},
        "l_int": {"commutator": {"operator": matrix_to_pairs(coupling), "prefactor": [0.0, -g]}},
        "projector": {"named": "argyres-kelley-example"},
        "lambda": lam,
        "t0": 0.0,
    }
