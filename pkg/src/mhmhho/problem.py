"""Diffusion coefficients, source terms and the ProblemSpec bundle.

Coefficients and sources are built from small JSON-able dicts so that a run
configuration can describe them and the offline cache can hash them.
"""
import json
from dataclasses import dataclass, field

import numpy as np


class Coefficient:
    """Symmetric positive definite 2x2 field A(x, y)."""

    def __init__(self, spec):
        spec = dict(spec)
        kind = spec.get("type", "identity")
        if kind == "identity":
            pass
        elif kind == "scalar":
            if float(spec["a"]) <= 0:
                raise ValueError("scalar coefficient must be positive")
        elif kind == "anisotropic":
            m = np.asarray(spec["matrix"], float)
            if m.shape != (2, 2) or not np.allclose(m, m.T) or np.linalg.eigvalsh(m)[0] <= 0:
                raise ValueError("anisotropic coefficient must be a 2x2 SPD matrix")
        elif kind == "oscillatory":
            if float(spec["eps"]) <= 0:
                raise ValueError("eps must be > 0")
        elif kind == "contrast":
            if float(spec["ratio"]) <= 0:
                raise ValueError("contrast ratio must be > 0")
            spec.setdefault("period", 0.1)
        else:
            raise ValueError(f"unknown coefficient type {kind!r}")
        spec["type"] = kind
        self.spec = spec

    def __repr__(self):
        return f"Coefficient({self.spec})"

    def key(self):
        return json.dumps(self.spec, sort_keys=True)

    def __call__(self, x, y):
        """Values at points, shape ``x.shape + (2, 2)``."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        s = self.spec
        kind = s["type"]
        out = np.zeros(x.shape + (2, 2))
        if kind == "anisotropic":
            out[...] = np.asarray(s["matrix"], float)
            return out
        if kind == "identity":
            a = np.ones_like(x)
        elif kind == "scalar":
            a = np.full_like(x, float(s["a"]))
        elif kind == "oscillatory":
            e = float(s["eps"])
            a = (2 + np.sin(2 * np.pi * x / e)) * (2 + np.sin(2 * np.pi * y / e))
        else:  # contrast: checkerboard of period ``period``
            p = float(s["period"])
            even = (np.floor(x / p) + np.floor(y / p)) % 2 == 0
            a = np.where(even, float(s["ratio"]), 1.0)
        out[..., 0, 0] = a
        out[..., 1, 1] = a
        return out

    def min_eigenvalue(self, x, y):
        return np.linalg.eigvalsh(self(x, y))[..., 0]


# --------------------------------------------------------------------------
# sources
# --------------------------------------------------------------------------

@dataclass
class Source:
    """Either a closed-form field or per-cell polynomial coefficients.

    ``cell_coeffs`` (n_cells, n) are coefficients in the scaled monomial
    basis of each cell; ``func`` is a vectorised ``f(x, y)``.
    """

    func: object = None
    cell_coeffs: np.ndarray = None
    label: str = ""

    @property
    def is_piecewise_polynomial(self):
        return self.cell_coeffs is not None


def _sinsin(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def _laplace_sinsin(x, y):
    return 2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)


def exact_sinsin(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


CLOSED_FORM = {
    "sinsin": _sinsin,
    "laplace_sinsin": _laplace_sinsin,
    "zero": lambda x, y: np.zeros_like(np.asarray(x, float)),
    "one": lambda x, y: np.ones_like(np.asarray(x, float)),
}


def make_source(spec, n_cells=None, dim=None):
    """Build a :class:`Source` from a dict.

    ``{"type": "sinsin"}`` and the other closed forms, ``{"type": "constant",
    "value": c}``, ``{"type": "random_poly", "seed": s}`` (needs ``n_cells``
    and the cell basis dimension ``dim``), or ``{"type": "poly", "coeffs":
    [[...], ...]}``.
    """
    kind = spec.get("type")
    if kind in CLOSED_FORM:
        return Source(func=CLOSED_FORM[kind], label=kind)
    if kind == "constant":
        c = float(spec["value"])
        return Source(func=lambda x, y: np.full_like(np.asarray(x, float), c), label=f"constant:{c}")
    if kind == "random_poly":
        if n_cells is None or dim is None:
            raise ValueError("random_poly needs n_cells and dim")
        rng = np.random.default_rng(spec.get("seed", 0))
        return Source(cell_coeffs=rng.standard_normal((n_cells, dim)), label=f"random_poly:{spec.get('seed', 0)}")
    if kind == "poly":
        return Source(cell_coeffs=np.asarray(spec["coeffs"], float), label="poly")
    raise ValueError(f"unknown source type {kind!r}")


@dataclass
class ProblemSpec:
    """Coefficient plus degrees: face degree ``k`` and cell degree ``m``."""

    coefficient: Coefficient = field(default_factory=lambda: Coefficient({"type": "identity"}))
    k: int = 1
    m: int = None

    def __post_init__(self):
        if isinstance(self.coefficient, dict):
            self.coefficient = Coefficient(self.coefficient)
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.m is None:
            self.m = self.k - 1 if self.k >= 1 else 0
        if self.m < 0:
            raise ValueError("m must be >= 0 (the m = -1 variant is not supported)")

    def key(self):
        return json.dumps({"A": self.coefficient.spec, "k": self.k, "m": self.m}, sort_keys=True)
