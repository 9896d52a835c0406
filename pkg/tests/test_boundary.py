import numpy as np
import pytest

from kfpbench.boundary import (
    BoundaryOperator,
    BoundaryTrace,
    apply_bc_defect,
    boundary_galerkin,
    kernel_to_A,
    validate,
)
from kfpbench.errors import HypothesisViolation, NonStochasticPolicy, OutsideContractionClass, ValidationError
from kfpbench.nu_basis import NuBasis


def test_reflection_of_named_kinds():
    r = np.array([0.1, 1.0, 5.0])
    assert np.allclose(BoundaryOperator.zero().reflection(r), 1.0)
    assert np.allclose(BoundaryOperator.identity().reflection(r), 0.0)
    assert np.allclose(BoundaryOperator.scalar(0.5).reflection(r), 1 / 3)
    # "reflect with probability eps" has Cayley transform eps
    assert np.allclose(BoundaryOperator.partial(0.4).reflection(r), 0.4)
    assert np.allclose(BoundaryOperator.partial(0.4).multiplier(r), 0.6 / 1.4)


def test_step_table_lookup():
    A = BoundaryOperator.partial(((0.0, 0.1), (1.0, 0.5), (2.0, 0.2)))
    assert np.allclose(A.epsilon([0.0, 0.99, 1.0, 1.5, 2.0, 9.0]), [0.1, 0.1, 0.5, 0.5, 0.2, 0.2])
    assert A.alpha == pytest.approx(0.5)
    assert A.breakpoints == (1.0, 2.0)


def test_cayley_contraction_bound():
    rep = validate(BoundaryOperator.scalar(0.5))
    assert rep.cayley_norm == pytest.approx(1 / 3)
    c, n = 0.5, 0.5
    assert rep.cayley_bound == pytest.approx((1 + 2 * c / (1 + n * n)) ** -0.5)
    assert rep.cayley_norm <= rep.cayley_bound
    rep = validate(BoundaryOperator.identity(), NuBasis(4, 64))
    assert rep.cayley_norm == 0.0 and rep.commutator_norm < 1e-12


def test_hypothesis_violations():
    with pytest.raises(HypothesisViolation):
        BoundaryOperator.scalar(-1.0)
    with pytest.raises(HypothesisViolation):
        BoundaryOperator.scalar(1j)
    with pytest.raises(OutsideContractionClass):
        BoundaryOperator("bounce_back")
    with pytest.raises(ValidationError):
        BoundaryOperator.partial(1.0)
    with pytest.raises(ValidationError):
        BoundaryOperator("identity", j=0)


def test_stochastic_realizability():
    BoundaryOperator.partial(0.3).require_stochastic()
    with pytest.raises(NonStochasticPolicy):
        BoundaryOperator.identity(j=-1).require_stochastic()
    with pytest.raises(NonStochasticPolicy):
        BoundaryOperator.scalar(2.0).require_stochastic()


def test_kernel_to_A():
    A = kernel_to_A(0.5, 0.5)
    assert A.kind == "partial"
    assert np.allclose(A.multiplier([1.0]), 1 / 3)
    assert kernel_to_A(0.0, 1.0).kind == "identity"
    B = kernel_to_A(lambda r: 0.3 * np.exp(-r), 0.7)
    assert np.all(B.epsilon([0.0, 0.5, 3.0]) <= 0.3)
    with pytest.raises(ValidationError):
        kernel_to_A(0.6, 0.5)


def test_serialization_roundtrip():
    for A in (BoundaryOperator.zero(), BoundaryOperator.scalar(0.5 + 0.25j, -1),
              BoundaryOperator.partial(((0.0, 0.1), (2.0, 0.3)))):
        assert BoundaryOperator.from_dict(A.to_dict()) == A
    with pytest.raises(ValidationError):
        BoundaryOperator.from_dict({"kind": "zero", "extra": 1})


@pytest.mark.parametrize("A", [BoundaryOperator.identity(), BoundaryOperator.scalar(0.5 + 1j),
                               BoundaryOperator.partial(((0.0, 0.2), (1.5, 0.6)))])
def test_galerkin_blocks(A):
    b = NuBasis(6, 96)
    bg = boundary_galerkin(b, A)
    assert np.abs(bg.D - np.diag(bg.mu)).max() < 1e-12
    assert np.abs(bg.X).max() < 1e-12
    assert np.allclose(bg.G_ev, bg.G_ev.conj().T)
    # accretive: Re <x, A x> > 0
    w = np.linalg.eigvalsh(0.5 * (bg.G_A + bg.G_A.conj().T))
    assert w.min() > 0


def test_bc_defect_two_routes_agree():
    # a trace satisfying gamma_odd = sign(p) a gamma_ev for constant a
    a = 0.5
    ev = lambda p: np.exp(-p ** 2)
    tr = BoundaryTrace(lambda p: ev(p) * (1 + a * np.sign(p)))
    d = apply_bc_defect(tr, BoundaryOperator.scalar(a), 1)
    assert d.direct < 1e-14 and d.cayley < 1e-14
    d = apply_bc_defect(tr, BoundaryOperator.identity(), 1)
    assert d.direct == pytest.approx(d.cayley, rel=1e-12)
    assert d.direct > 0.1
