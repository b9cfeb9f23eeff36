import numpy as np
import pytest

from votacast.core import InvalidInputError
from votacast.seats import (
    DuplicateProvinceError,
    NoEligiblePartyError,
    ProvinceVotes,
    allocate_nation,
    dhondt_allocate,
    jefferson_allocate,
    jefferson_allocate_with_price,
)


def brute_force_dhondt(votes: dict, contingent: int) -> dict:
    """Oracle: enumerate all quotients v/1..v/contingent and take the top ones."""
    table = []
    for rank, (party, v) in enumerate(votes.items()):
        for k in range(1, contingent + 1):
            table.append((v / k, v, -rank, party))
    table.sort(reverse=True)
    seats = {p: 0 for p in votes}
    for _, _, _, party in table[:contingent]:
        seats[party] += 1
    return seats


def test_single_party_takes_all():
    assert dhondt_allocate({"A": 123.0}, 7) == {"A": 7}


def test_three_party_example_matches_quotient_enumeration():
    votes = {"A": 100, "B": 80, "C": 30}
    expected = brute_force_dhondt(votes, 5)
    assert expected == {"A": 3, "B": 2, "C": 0}
    assert dhondt_allocate(votes, 5, 0.0) == expected


def test_threshold_exclusion():
    votes = {"A": 960, "B": 25, "C": 15}
    # B at 2.5% and C at 1.5% fall below the 3% mark.
    assert dhondt_allocate(votes, 10, 0.03) == {"A": 10, "B": 0, "C": 0}


def test_all_below_threshold_raises():
    with pytest.raises(NoEligiblePartyError):
        dhondt_allocate({"A": 1, "B": 1, "C": 1}, 3, 0.5)


def test_negative_votes_rejected():
    with pytest.raises(InvalidInputError):
        dhondt_allocate({"A": -1, "B": 5}, 3)


def test_jefferson_example_and_price():
    seats, price = jefferson_allocate_with_price({"A": 100, "B": 80, "C": 30}, 5)
    assert seats == {"A": 3, "B": 2, "C": 0}
    assert 30 < price <= 100 / 3 + 1e-6


def test_jefferson_single_party():
    assert jefferson_allocate({"A": 50.0}, 5) == {"A": 5}


def test_oracle_equivalence_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n_parties = rng.integers(2, 9)
        contingent = int(rng.integers(1, 41))
        threshold = float(rng.choice([0.0, 0.03, 0.05]))
        votes = {f"P{i}": int(rng.integers(1, 1_000_000)) for i in range(n_parties)}
        try:
            a = dhondt_allocate(votes, contingent, threshold)
            b = jefferson_allocate(votes, contingent, threshold)
        except NoEligiblePartyError:
            continue
        assert a == b, (votes, contingent, threshold)
        assert sum(a.values()) == contingent


def test_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(99)
    for _ in range(200):
        n_parties = rng.integers(2, 7)
        contingent = int(rng.integers(1, 21))
        votes = {f"P{i}": float(rng.uniform(1, 1000)) for i in range(n_parties)}
        assert dhondt_allocate(votes, contingent) == brute_force_dhondt(votes, contingent)


def test_tie_resolution_prefers_larger_total_then_order():
    # A/2 == B/1 == 50 competing for the last seat; A has more total votes.
    assert dhondt_allocate({"A": 100, "B": 50}, 2) == {"A": 2, "B": 0}
    # Exact tie in totals: earlier order wins.
    assert dhondt_allocate({"X": 50, "Y": 50}, 1) == {"X": 1, "Y": 0}
    assert jefferson_allocate({"X": 50, "Y": 50}, 1) == {"X": 1, "Y": 0}


def test_monotonicity_in_own_votes():
    rng = np.random.default_rng(5)
    for _ in range(100):
        votes = {f"P{i}": float(rng.uniform(10, 1000)) for i in range(4)}
        base = dhondt_allocate(votes, 9)["P0"]
        votes["P0"] *= 1.0 + rng.uniform(0.01, 2.0)
        assert dhondt_allocate(votes, 9)["P0"] >= base


def test_scale_invariance():
    votes = {"A": 12.3, "B": 45.6, "C": 7.89}
    base = dhondt_allocate(votes, 11, 0.03)
    scaled = {p: v * 1234.5 for p, v in votes.items()}
    assert dhondt_allocate(scaled, 11, 0.03) == base


def test_allocate_nation_additivity_and_duplicates():
    pv = ProvinceVotes(1, {"A": 100, "B": 60}, 3)
    pv2 = ProvinceVotes(2, {"A": 100, "B": 60}, 3)
    result = allocate_nation([pv, pv2])
    single = dhondt_allocate({"A": 100, "B": 60}, 3)
    assert result.national == {p: 2 * s for p, s in single.items()}
    assert result.total_seats == 6
    with pytest.raises(DuplicateProvinceError):
        allocate_nation([pv, pv])


def test_province_votes_validation():
    with pytest.raises(InvalidInputError):
        ProvinceVotes(1, {"A": 0.0}, 3)
    with pytest.raises(InvalidInputError):
        ProvinceVotes(1, {"A": 10.0}, 0)
