import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from spillover.damage import (BridgeModel, aggregate_cbg_damage, compute_pde, exhaustive_match,
                              fit_ia_nfip_bridge, match_claims_to_parcels,
                              paired_bridge_samples)


def test_bridge_exact_fit():
    ia = np.array([1e3, 5e3, 2e4, 8e4, 3e5])
    nfip = np.exp(0.2 + 1.1 * np.log(ia))
    b = fit_ia_nfip_bridge(ia, nfip)
    assert b.slope == pytest.approx(1.1, abs=1e-12)
    assert b.intercept == pytest.approx(0.2, abs=1e-10)
    assert b.rsquared == pytest.approx(1.0, abs=1e-12)
    assert b.apply(ia) == pytest.approx(nfip, rel=1e-12)


@pytest.mark.parametrize("ia, nfip", [
    ([100.0, 100.0, 100.0], [1.0, 2.0, 3.0]),   # constant regressor
    ([100.0, 200.0], [1.0, 2.0]),               # too few pairs
    ([100.0, -2.0, 300.0], [1.0, 2.0, 3.0]),    # nonpositive amount
])
def test_bridge_degenerate_inputs_raise(ia, nfip):
    with pytest.raises(ValueError):
        fit_ia_nfip_bridge(ia, nfip)


def _parcels(rows):
    return pd.DataFrame(rows, columns=["parcel_id", "lon", "lat", "market_value", "cbg_id"])


def _claims(rows):
    return pd.DataFrame(rows, columns=["claim_id", "source", "lon", "lat", "amount"])


def test_claim_matches_nearer_parcel():
    parcels = _parcels([("far", 0.0, 0.01, 1e5, "A"), ("near", 0.0, 0.001, 1e5, "A")])
    matched, unmatched = match_claims_to_parcels(_claims([("c", "NFIP", 0.0, 0.0, 10.0)]),
                                                 parcels)
    assert matched["parcel_id"].tolist() == ["near"]
    assert unmatched.empty


def test_equidistant_claim_goes_to_smallest_parcel_id():
    parcels = _parcels([("p9", 0.001, 0.0, 1e5, "A"), ("p1", -0.001, 0.0, 1e5, "A")])
    matched, _ = match_claims_to_parcels(_claims([("c", "NFIP", 0.0, 0.0, 10.0)]), parcels,
                                         ref_lat=0.0)
    assert matched["parcel_id"].tolist() == ["p1"]


def test_far_claim_is_reported_unmatched():
    parcels = _parcels([("p", 0.0, 0.0, 1e5, "A")])
    matched, unmatched = match_claims_to_parcels(_claims([("c", "IA", 1.0, 0.0, 10.0)]), parcels)
    assert matched.empty
    assert unmatched["claim_id"].tolist() == ["c"]
    assert unmatched["distance_miles"].iloc[0] > 0.25


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_kdtree_matching_agrees_with_exhaustive_scan(seed):
    rng = np.random.default_rng(seed)
    n_p = int(rng.integers(1, 30))
    # coarse grid so exact ties actually occur
    plon = rng.integers(-5, 6, n_p) * 1e-3
    plat = rng.integers(-5, 6, n_p) * 1e-3
    parcels = _parcels([(f"p{rng.integers(1000):03d}{i}", a, b, 1.0, "A")
                        for i, (a, b) in enumerate(zip(plon, plat))])
    parcels = parcels.drop_duplicates("parcel_id")
    claims = _claims([(f"c{i}", "NFIP", a, b, 1.0)
                      for i, (a, b) in enumerate(zip(rng.integers(-6, 7, 10) * 1e-3,
                                                     rng.integers(-6, 7, 10) * 1e-3))])
    matched, _ = match_claims_to_parcels(claims, parcels, max_distance=np.inf)
    oracle = exhaustive_match(claims, parcels)
    assert matched["parcel_id"].tolist() == [pid for _, pid in oracle]
    assert matched["distance_miles"].tolist() == pytest.approx([d for d, _ in oracle],
                                                               abs=1e-12)


def _matched(rows):
    return pd.DataFrame(rows, columns=["parcel_id", "source", "amount"])


PARCEL_INFO = pd.DataFrame({"parcel_id": ["a", "b", "c"], "cbg_id": ["G1", "G1", "G2"],
                            "market_value": [200_000.0, 200_000.0, 100_000.0]})


def test_pde_hand_value():
    out = compute_pde(_matched([("a", "NFIP", 50_000.0)]), PARCEL_INFO)
    assert out["pde"].tolist() == [0.25]
    assert not out["capped"].iloc[0]


def test_nfip_wins_over_ia_on_the_same_parcel():
    bridge = BridgeModel(slope=1.0, intercept=5.0, rsquared=1.0, n=3)
    out = compute_pde(_matched([("a", "NFIP", 30_000.0), ("a", "IA", 90_000.0)]),
                      PARCEL_INFO, bridge=bridge)
    assert out["claim_value"].tolist() == [30_000.0]
    assert out["source"].tolist() == ["NFIP"]


def test_pde_cap_sets_flag():
    out = compute_pde(_matched([("a", "NFIP", 300_000.0)]), PARCEL_INFO, pde_cap=1.0)
    assert out["pde"].tolist() == [1.0]
    assert out["capped"].tolist() == [True]


def test_ia_only_parcel_goes_through_bridge():
    bridge = BridgeModel(slope=1.1, intercept=0.2, rsquared=1.0, n=3)
    out = compute_pde(_matched([("c", "IA", 1_000.0)]), PARCEL_INFO, bridge=bridge)
    assert out["claim_value"].iloc[0] == pytest.approx(math.exp(0.2) * 1000 ** 1.1, rel=1e-14)


def test_ia_only_parcel_without_bridge_raises():
    with pytest.raises(ValueError, match="bridge"):
        compute_pde(_matched([("c", "IA", 1_000.0)]), PARCEL_INFO)


def test_paired_samples_come_from_dual_parcels():
    pairs = paired_bridge_samples(_matched([("a", "NFIP", 2.0), ("a", "IA", 1.0),
                                            ("b", "IA", 5.0)]))
    assert pairs.to_dict("list") == {"ia_amount": [1.0], "nfip_amount": [2.0]}


def _records(cbg_pdes):
    return pd.DataFrame([(c, p) for c, ps in cbg_pdes.items() for p in ps],
                        columns=["cbg_id", "pde"])


def test_aggregate_hand_case():
    out = aggregate_cbg_damage(_records({"G1": [0.2, 0.6, 0.7]}), ["G1"]).iloc[0]
    assert out["nc"] == 3
    assert out["mp"] == pytest.approx(0.5, abs=1e-15)
    assert out["sdp"] == pytest.approx(math.sqrt(0.07), abs=1e-12)
    assert out["sdp"] == pytest.approx(0.26458, abs=1e-5)
    assert out["mdp"] == 2


@pytest.mark.parametrize("pdes, expected", [
    ([], (0, 0.0, 0.0, 0)),
    ([0.4], (1, 0.4, 0.0, 0)),
])
def test_aggregate_trivial_cases(pdes, expected):
    records = _records({"G1": pdes}) if pdes else _records({})
    out = aggregate_cbg_damage(records, ["G1"]).iloc[0]
    assert (out["nc"], out["mp"], out["sdp"], out["mdp"]) == expected


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=1, max_size=20))
def test_aggregate_invariants(pdes):
    out = aggregate_cbg_damage(_records({"G1": pdes}), ["G1", "G2"]).set_index("cbg_id")
    g1 = out.loc["G1"]
    assert g1["nc"] == len(pdes)
    assert 0 <= g1["mdp"] <= g1["nc"]
    assert min(pdes) - 1e-12 <= g1["mp"] <= max(pdes) + 1e-12
    assert g1["sdp"] >= 0
    assert tuple(out.loc["G2"]) == (0, 0.0, 0.0, 0)
