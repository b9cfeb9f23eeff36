import numpy as np
import pytest

from votacast.core import (
    DEFAULT_CANON,
    InvalidInputError,
    OutOfSimplexError,
    PartyCanon,
    lift_shares,
    reduce_shares,
    softmax,
    validate_cov_matrix,
    validate_share_vector,
)


def test_canon_basic():
    canon = PartyCanon(("A", "B", "OTH"))
    assert canon.n_parties == 3
    assert canon.reduced_dim == 2
    assert canon.pivot_index == 2
    assert canon.pivot_label == "OTH"
    assert canon.index("B") == 1


def test_canon_rejects_duplicates_and_short():
    with pytest.raises(InvalidInputError):
        PartyCanon(("A", "A", "B"))
    with pytest.raises(InvalidInputError):
        PartyCanon(("A",))
    with pytest.raises(InvalidInputError):
        PartyCanon(("A", "B", "C"), pivot_index=0)


def test_softmax_uniform_on_zeros():
    out = softmax(np.zeros(5))
    assert np.allclose(out, 0.2)
    validate_share_vector(out)


def test_softmax_shift_invariance_exact():
    # Bit-exact whenever f + c rounds to nothing: dyadic scores, integer shifts.
    rng = np.random.default_rng(7)
    for _ in range(50):
        f = rng.integers(-2048, 2048, size=4) / 1024.0
        c = float(rng.integers(-1000, 1000))
        assert np.array_equal(softmax(f), softmax(f + c))


def test_softmax_shift_invariance_general_floats():
    # Arbitrary shifts round the inputs themselves; invariance holds to the ulp.
    rng = np.random.default_rng(8)
    for _ in range(50):
        f = rng.normal(size=4) * 10
        c = rng.normal() * 100
        assert np.allclose(softmax(f), softmax(f + c), rtol=1e-12, atol=1e-15)


def test_softmax_closed_form():
    e = np.e
    expected = np.array([e / (e + 2), 1 / (e + 2), 1 / (e + 2)])
    assert np.allclose(softmax([1.0, 0.0, 0.0]), expected, atol=1e-15)


def test_softmax_order_preserving_and_huge_scores():
    f = np.array([900.0, -900.0, 30.0])
    out = softmax(f)
    validate_share_vector(out)
    assert np.argmax(out) == np.argmax(f)


def test_softmax_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        softmax([np.inf, 0.0])
    with pytest.raises(InvalidInputError):
        softmax([np.nan, 0.0])


def test_reduce_lift_round_trip():
    full = np.array([0.2, 0.3, 0.5])
    red = reduce_shares(full)
    assert np.allclose(red, [0.2, 0.3])
    assert np.allclose(lift_shares(red), full, atol=1e-12)


def test_reduce_vertex():
    full = np.zeros(5)
    full[0] = 1.0
    red = reduce_shares(full)
    assert np.allclose(red, [1, 0, 0, 0])


def test_round_trip_random_simplex_points():
    rng = np.random.default_rng(123)
    for _ in range(1000):
        x = rng.dirichlet(np.ones(DEFAULT_CANON.n_parties))
        back = lift_shares(reduce_shares(x, DEFAULT_CANON), DEFAULT_CANON)
        assert np.max(np.abs(back - x)) < 1e-12


def test_lift_rejects_out_of_simplex():
    with pytest.raises(OutOfSimplexError):
        lift_shares([0.7, 0.7])
    with pytest.raises(OutOfSimplexError):
        lift_shares([-0.2, 0.3])


def test_share_vector_validation():
    with pytest.raises(InvalidInputError):
        validate_share_vector([0.5, 0.6])
    with pytest.raises(InvalidInputError):
        validate_share_vector([1.2, -0.2])


def test_cov_matrix_validation():
    good = np.array([[2.0, 0.5], [0.5, 1.0]])
    validate_cov_matrix(good)
    with pytest.raises(InvalidInputError):
        validate_cov_matrix(np.array([[1.0, 0.9], [0.2, 1.0]]))
    with pytest.raises(InvalidInputError):
        validate_cov_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))  # eigenvalue -1
