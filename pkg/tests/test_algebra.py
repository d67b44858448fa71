"""Ring laws, conjugations, augmentation and solve behaviour."""

import numpy as np
import pytest

from tessfuse import algebra as alg
from tessfuse.algebra import (
    ComplexPair,
    SingularMatrixError,
    TessArray,
    Tessarine,
    augment,
    augmentation_matrix,
    conjugate,
    solve,
    solve_right,
    star,
    star_matrix,
    tmul,
)

RNG = np.random.default_rng(20250810)


def rand_tess(shape=(), scale=1.0, rng=RNG):
    return TessArray(rng.normal(scale=scale, size=(4,) + tuple(shape)))


def rand_scalar(rng=RNG):
    return Tessarine(*rng.normal(size=4))


# -- multiplication table -------------------------------------------------

UNIT_I = Tessarine(0, 1, 0, 0)
UNIT_J = Tessarine(0, 0, 1, 0)
UNIT_K = Tessarine(0, 0, 0, 1)
ONE = Tessarine(1, 0, 0, 0)


@pytest.mark.parametrize("a,b,expect", [
    (UNIT_J, UNIT_J, ONE),
    (UNIT_I, UNIT_I, Tessarine(-1)),
    (UNIT_K, UNIT_K, Tessarine(-1)),
    (UNIT_I, UNIT_J, UNIT_K),
    (UNIT_J, UNIT_K, UNIT_I),
    (UNIT_K, UNIT_I, -UNIT_J),
])
def test_unit_table(a, b, expect):
    assert tmul(a, b) == expect
    assert tmul(b, a) == expect  # commutative


def test_identity_and_zero_divisor():
    x = rand_scalar()
    assert tmul(ONE, x) == x
    z = tmul(Tessarine(1, 0, 1, 0), Tessarine(1, 0, -1, 0))
    assert z == Tessarine(0, 0, 0, 0)


def test_ring_laws_bulk():
    # commutativity / associativity / distributivity on 1e4 random triples
    rng = np.random.default_rng(7)
    n = 10_000
    a = TessArray(rng.normal(size=(4, n)))
    b = TessArray(rng.normal(size=(4, n)))
    c = TessArray(rng.normal(size=(4, n)))
    scale = max(a.max_abs(), b.max_abs(), c.max_abs()) ** 3
    assert ((a * b) - (b * a)).max_abs() <= 1e-12 * scale
    assert (((a * b) * c) - (a * (b * c))).max_abs() <= 1e-12 * scale
    assert ((a * (b + c)) - (a * b + a * c)).max_abs() <= 1e-12 * scale


# -- conjugations ----------------------------------------------------------

def test_conjugation_signs():
    x = Tessarine(1, 1, 1, 1)
    assert conjugate(x, "star") == Tessarine(1, -1, 1, -1)
    assert conjugate(x, "iota") == Tessarine(1, 1, -1, -1)
    assert conjugate(x, "kappa") == Tessarine(1, -1, -1, 1)


def test_conjugations_fix_reals_and_are_involutions():
    c = Tessarine(3.25)
    for kind in ("star", "iota", "kappa"):
        assert conjugate(c, kind) == c
    for _ in range(20):
        x = rand_scalar()
        for kind in ("star", "iota", "kappa"):
            assert conjugate(conjugate(x, kind), kind) == x


def test_conjugations_are_ring_automorphisms():
    for kind in ("star", "iota", "kappa"):
        a, b = rand_scalar(), rand_scalar()
        lhs = conjugate(tmul(a, b), kind)
        rhs = tmul(conjugate(a, kind), conjugate(b, kind))
        assert lhs.isclose(rhs, tol=1e-12)


def test_unknown_conjugation_kind():
    with pytest.raises(ValueError):
        conjugate(rand_scalar(), "flip")


# -- complex pair ----------------------------------------------------------

def test_pair_homomorphism_bulk():
    rng = np.random.default_rng(11)
    n = 10_000
    a = TessArray(rng.normal(size=(4, n)))
    b = TessArray(rng.normal(size=(4, n)))
    ap, am = a.pair
    bp, bm = b.pair
    prodp, prodm = (a * b).pair
    sump, summ = (a + b).pair
    scale = max(1.0, np.abs(ap).max() * np.abs(bp).max())
    assert np.max(np.abs(prodp - ap * bp)) <= 1e-13 * scale
    assert np.max(np.abs(prodm - am * bm)) <= 1e-13 * scale
    assert np.max(np.abs(sump - (ap + bp))) <= 1e-13 * scale
    assert np.max(np.abs(summ - (am + bm))) <= 1e-13 * scale


def test_pair_round_trip_exact_on_dyadics():
    # dyadic rationals make every +/- and halving exact in binary floating
    # point, so the round trip must be bit-identical there
    rng = np.random.default_rng(3)
    for _ in range(200):
        x = Tessarine(*(rng.integers(-2**20, 2**20, size=4) / 2.0**10))
        assert ComplexPair.from_tessarine(x).to_tessarine() == x
    p = ComplexPair(complex(1.5, -2.25), complex(-0.75, 8.0))
    back = ComplexPair.from_tessarine(p.to_tessarine())
    assert back == p


def test_pair_round_trip_close_on_generic_floats():
    for _ in range(200):
        x = rand_scalar()
        y = ComplexPair.from_tessarine(x).to_tessarine()
        assert x.isclose(y, tol=1e-15)


# -- augmentation -----------------------------------------------------------

@pytest.mark.parametrize("n", [1, 2, 3])
def test_augmentation_map_unitary(n):
    jmap = augmentation_matrix(n)
    ident = TessArray.eye(4 * n)
    assert ((jmap.H @ jmap) - ident).max_abs() <= 1e-14


def test_augment_matches_real_stack_map():
    for n in (1, 2, 4):
        x = rand_tess((n,))
        jmap = augmentation_matrix(n)
        xr = TessArray.from_real(alg.to_real_stack(x))
        direct = augment(x)
        mapped = (jmap @ xr) * 2.0
        assert (direct - mapped).max_abs() <= 1e-14


def test_augment_real_and_iota_blocks():
    x = TessArray.from_parts([1.0])
    a = augment(x)
    assert a.allclose(TessArray.from_real(np.ones(4)))
    xi = TessArray.from_parts([0.0], i=[1.0])
    blocks = augment(xi)
    expect = TessArray.from_parts(np.zeros(4), i=[1.0, -1.0, 1.0, -1.0])
    assert blocks.allclose(expect)


# -- star product -----------------------------------------------------------

def test_star_identity_and_partwise_zero():
    x = rand_tess((5,))
    ones = TessArray(np.ones((4, 5)))
    assert star(ones, x).allclose(x, atol=0)
    a = TessArray.from_parts(np.ones(3))
    b = TessArray.from_parts(np.zeros(3), i=np.ones(3))
    assert star(a, b).max_abs() == 0.0  # parts only meet like parts


def test_star_length_mismatch():
    with pytest.raises(ValueError):
        star(rand_tess((3,)), rand_tess((4,)))


def test_star_matrix_reproduces_star_product():
    rng = np.random.default_rng(23)
    for _ in range(50):
        n = int(rng.integers(1, 4))
        x = rand_tess((n,), rng=rng)
        y = rand_tess((n,), rng=rng)
        lhs = augment(star(x, y))
        rhs = star_matrix(x) @ augment(y)
        assert (lhs - rhs).max_abs() <= 1e-12


def test_star_matrix_identity_and_zero():
    ones = TessArray(np.ones((4, 3)))
    assert (star_matrix(ones) - TessArray.eye(12)).max_abs() <= 1e-14
    zeros = TessArray.zeros((3,))
    assert star_matrix(zeros).max_abs() <= 1e-15


# -- matrix algebra ----------------------------------------------------------

def test_hermitian_transpose_antihomomorphism():
    a = rand_tess((3, 4))
    b = rand_tess((4, 2))
    lhs = (a @ b).H
    rhs = b.H @ a.H
    assert (lhs - rhs).max_abs() <= 1e-12


def test_matmul_matches_scalar_products():
    a = rand_tess((2, 2))
    b = rand_tess((2, 2))
    c = a @ b
    for r in range(2):
        for s in range(2):
            acc = Tessarine()
            for m in range(2):
                acc = acc + tmul(a[r, m].item(), b[m, s].item())
            assert c[r, s].item().isclose(acc, tol=1e-12)


def test_solve_identity_and_residual():
    b = rand_tess((4, 2))
    x = solve(TessArray.eye(4), b)
    assert (x - b).max_abs() <= 1e-14  # pair round trip costs at most an ulp

    rng = np.random.default_rng(5)
    for _ in range(20):
        a = TessArray(rng.normal(size=(4, 4, 4))) + 3.0 * TessArray.eye(4)
        bb = TessArray(rng.normal(size=(4, 4, 3)))
        xx = solve(a, bb)
        res = (a @ xx - bb).norm()
        assert res <= 1e-10 * max(bb.norm(), 1.0)


def test_solve_right_residual():
    rng = np.random.default_rng(6)
    a = TessArray(rng.normal(size=(4, 3, 3))) + 3.0 * TessArray.eye(3)
    b = TessArray(rng.normal(size=(4, 2, 3)))
    x = solve_right(b, a)
    assert (x @ a - b).norm() <= 1e-10 * b.norm()


def test_solve_zero_divisor_is_singular():
    a = TessArray.from_scalar(Tessarine(1, 0, 1, 0), (1, 1))  # z_minus == 0
    b = TessArray.from_real(np.ones((1, 1)))
    with pytest.raises(SingularMatrixError):
        solve(a, b)


def test_solve_shape_checks():
    with pytest.raises(ValueError):
        solve(rand_tess((2, 3)), rand_tess((2, 1)))
    with pytest.raises(ValueError):
        solve(rand_tess((2, 2)), rand_tess((3, 1)))


def test_restrict_augmented_blocks():
    x = rand_tess((2,))
    assert alg.restrict_augmented(x, 1) is x
    two = alg.restrict_augmented(x, 2)
    assert two.shape == (4,)
    assert (two[:2] - x).max_abs() == 0.0
    assert (two[2:] - x.conj_star()).max_abs() == 0.0
    assert (alg.restrict_augmented(x, 4) - augment(x)).max_abs() == 0.0
    with pytest.raises(ValueError):
        alg.restrict_augmented(x, 3)


def test_block_assembly_and_immutability():
    a = TessArray.eye(2)
    z = TessArray.zeros((2, 2))
    m = alg.block([[a, z], [z, a]])
    assert (m - TessArray.eye(4)).max_abs() == 0.0
    with pytest.raises(ValueError):
        m.parts[0, 0, 0] = 5.0
