"""Solution fields and source projection."""
from dataclasses import dataclass, field

import numpy as np

from .polyspace import CellPolyBasis


@dataclass
class SolutionField:
    """Per-cell fine nodal values, discontinuous across coarse faces.

    ``key`` is the content key of the discretization that produced the
    field; comparisons between fields require equal keys.
    """

    values: list
    key: bytes
    method: str
    data: dict = field(default_factory=dict)

    def __sub__(self, other):
        _check_same(self, other)
        return SolutionField([a - b for a, b in zip(self.values, other.values)], self.key,
                             f"{self.method}-{other.method}")

    def max_abs(self):
        return max(float(np.abs(v).max()) for v in self.values)


def _check_same(a, b):
    if a.key != b.key or len(a.values) != len(b.values):
        raise ValueError("fields live on different discretizations")


def zero_field(disc, method="zero"):
    return SolutionField([np.zeros(s.nn) for s in disc.spaces], disc.key, method)


def project_source(disc, source, quad_degree=None):
    """Coefficients of Pi^m_K f for every cell, shape (n_cells, n_m)."""
    n_m = disc.n_m
    if source.cell_coeffs is not None:
        coeffs = np.asarray(source.cell_coeffs, float)
        if coeffs.shape != (disc.coarse.n_cells, n_m):
            raise ValueError(f"source coefficients must have shape {(disc.coarse.n_cells, n_m)}")
        return coeffs
    if quad_degree is None:
        quad_degree = 2 * disc.m + 6
    out = np.empty((disc.coarse.n_cells, n_m))
    for c, s in enumerate(disc.spaces):
        rhs = s.cell_basis.moments_of(source.func, s.points, s.tris, quad_degree)
        out[c] = np.linalg.solve(s.cell_gram, rhs)
    return out


def cell_poly_values(disc, coeffs):
    """Nodal values of per-cell polynomials (for inspection/export)."""
    out = []
    for c, s in enumerate(disc.spaces):
        b = CellPolyBasis(s.cell_basis.center, s.cell_basis.scale, s.m)
        out.append(b.evaluate(coeffs[c], s.points[:, 0], s.points[:, 1]))
    return out
