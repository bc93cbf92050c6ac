"""Grid transfer between nested tensor spline spaces."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .bspline import two_scale_matrix
from .linalg import KroneckerOp
from .tensor_space import TensorSpace


class NonNestedError(ValueError):
    pass


@dataclass(eq=False)
class Transfer:
    """Prolongation ``P = (x)_k E_k`` on the spaces with zero boundary layer.

    Restriction is ``P^T``.
    """

    coarse: TensorSpace
    fine: TensorSpace
    factors: tuple

    @cached_property
    def op(self) -> KroneckerOp:
        return KroneckerOp(list(self.factors))

    def prolong(self, x):
        return self.op @ x

    def restrict(self, y):
        return self.op.T @ y

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        return self.op.tocsr()

    @property
    def shape(self):
        return self.op.shape


def build_transfer(coarse: TensorSpace, fine: TensorSpace) -> Transfer:
    if coarse.dim_count != fine.dim_count or coarse.degree != fine.degree:
        raise NonNestedError("spaces differ in dimension or degree")
    factors = []
    for kc, kf in zip(coarse.kvs, fine.kvs):
        try:
            E = two_scale_matrix(kc, kf)
        except ValueError as e:
            raise NonNestedError(str(e)) from e
        factors.append(E[1:-1, 1:-1].tocsr())
    return Transfer(coarse, fine, tuple(factors))
