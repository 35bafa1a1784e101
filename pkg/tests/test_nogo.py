import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpqlab.core import (
    ReducedStateMismatch,
    RegisterLayout,
    apply_unitary,
    fidelity,
    make_basis_state,
)
from qpqlab.nogo import (
    CommitmentScheme,
    NotConcealingError,
    OTInstance,
    TwoPartyFunction,
    bell_scheme,
    concealing_gap,
    delayed_choice_attack,
    k_ambiguity,
    onesided_via_spqpq,
    oot_as_1s2pc,
    random_concealing_scheme,
    random_revealing_scheme,
    rotation_attack_1s2pc,
    spqpq_as_1s2pc,
)
from qpqlab.protocol import Database, DatabaseError, appendix_database, random_rectangular_database

X = np.array([[0, 1], [1, 0]], dtype=complex)


class TestConcealingGap:
    def test_bell_scheme_conceals(self):
        assert concealing_gap(bell_scheme()) == pytest.approx(0, abs=1e-12)

    def test_orthogonal_reveal(self):
        lay = RegisterLayout([("A", 2), ("B", 2)])
        scheme = CommitmentScheme(make_basis_state(lay, {"A": 0, "B": 0}),
                                  make_basis_state(lay, {"A": 1, "B": 1}), ("A",))
        assert concealing_gap(scheme) == pytest.approx(1)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_range_and_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        s = random_revealing_scheme(rng, 3, 2)
        gap = concealing_gap(s)
        swapped = CommitmentScheme(s.psi1, s.psi0, s.alice)
        assert 0 <= gap <= 1
        assert concealing_gap(swapped) == pytest.approx(gap, abs=1e-12)


class TestDelayedChoice:
    def test_bell_commit0_open1(self):
        u, fid = delayed_choice_attack(bell_scheme(), 0, 1)
        assert u.target_registers == ("A",)
        np.testing.assert_allclose(np.abs(u.matrix), np.abs(X), atol=1e-10)
        assert fid == pytest.approx(1, abs=1e-8)

    @pytest.mark.parametrize("b", [0, 1])
    def test_same_bit(self, b):
        _, fid = delayed_choice_attack(bell_scheme(), b, b)
        assert fid == pytest.approx(1, abs=1e-8)

    def test_revealing_scheme_reports_gap(self):
        s = random_revealing_scheme(np.random.default_rng(0), 3, 3)
        with pytest.raises(NotConcealingError) as exc:
            delayed_choice_attack(s, 0, 1)
        assert exc.value.gap == pytest.approx(concealing_gap(s)) and exc.value.gap > 1e-8

    @settings(max_examples=40, deadline=None)
    @given(da=st.integers(1, 8), db=st.integers(1, 8), degenerate=st.booleans(),
           seed=st.integers(0, 2**32 - 1))
    def test_random_concealing_both_directions(self, da, db, degenerate, seed):
        s = random_concealing_scheme(np.random.default_rng(seed), da, db, degenerate)
        for c, o in ((0, 1), (1, 0)):
            u, fid = delayed_choice_attack(s, c, o)
            assert fid > 1 - 1e-8
            assert fidelity(s.state(o), apply_unitary(s.state(c), u)) == pytest.approx(fid)

    def test_scheme_json_roundtrip(self):
        s = bell_scheme()
        back = CommitmentScheme.from_json(json.loads(json.dumps(s.to_json())))
        assert back.alice == ("A",) and concealing_gap(back) == pytest.approx(0, abs=1e-12)


class TestRotationAttack:
    def test_product_outputs(self):
        lay = RegisterLayout([("alice", 3), ("bob", 4)])
        states = {1: make_basis_state(lay, {"alice": 2, "bob": 1}),
                  2: make_basis_state(lay, {"alice": 2, "bob": 3})}
        u, fid = rotation_attack_1s2pc(states, ["alice"], 1, 2)
        assert u.target_registers == ("bob",)
        assert fid == pytest.approx(1, abs=1e-8)
        assert abs(u.matrix[3, 1]) == pytest.approx(1)

    def test_identical_states(self):
        lay = RegisterLayout([("alice", 2), ("bob", 2)])
        s = make_basis_state(lay, {"alice": 1, "bob": 0})
        _, fid = rotation_attack_1s2pc({"k1": s, "k2": s}, ["alice"], "k1", "k2")
        assert fid == pytest.approx(1, abs=1e-8)

    def test_alice_knows_k(self):
        lay = RegisterLayout([("alice", 2), ("bob", 2)])
        states = {0: make_basis_state(lay, {"alice": 0, "bob": 0}),
                  1: make_basis_state(lay, {"alice": 1, "bob": 0})}
        with pytest.raises(ReducedStateMismatch):
            rotation_attack_1s2pc(states, ["alice"], 0, 1)

    def test_side_duality_with_commitment(self):
        # same state pair: 'A' keeps its reduced state fixed for the 1S2PC reading
        rng = np.random.default_rng(8)
        s = random_concealing_scheme(rng, 4, 3, degenerate=True)
        _, fid_commit = delayed_choice_attack(s, 0, 1)
        _, fid_rot = rotation_attack_1s2pc({0: s.psi0, 1: s.psi1}, ["B"], 0, 1)
        assert fid_commit == pytest.approx(fid_rot, abs=1e-8) and fid_rot > 1 - 1e-8


class TestReductions:
    def test_appendix_table(self):
        f = spqpq_as_1s2pc(appendix_database())
        assert f.j_domain == (1, 2) and f.k_domain == (1, 2)
        assert [f(1, 1), f(1, 2), f(2, 1), f(2, 2)] == [2, 3, 4, 5]

    def test_deterministic_has_single_k(self):
        db = appendix_database().deterministic_restriction()
        f = spqpq_as_1s2pc(db)
        assert f.k_domain == (1,) and f(1, 1) == 2 and f(2, 1) == 4

    def test_ragged_rejected(self):
        with pytest.raises(DatabaseError):
            spqpq_as_1s2pc(Database(3, 6, ((1,), (2, 3), (4,))))

    def test_roundtrip_appendix(self):
        db = appendix_database()
        assert onesided_via_spqpq(spqpq_as_1s2pc(db)) == db

    def test_constant_function_deduplicates(self):
        f = TwoPartyFunction((1, 2), (1, 2, 3), {(j, k): 7 for j in (1, 2) for k in (1, 2, 3)})
        db = onesided_via_spqpq(f)
        assert db.answers[1:] == ((7,), (7,))
        assert db.k_map[1] == (0, 0, 0)
        # multiplicity survives the round trip
        assert spqpq_as_1s2pc(db).table == f.table
        assert k_ambiguity(f)[(1, 7)] == [1, 2, 3]

    def test_distinct_two_by_two(self):
        table = {(1, 1): 3, (1, 2): 5, (2, 1): 2, (2, 2): 4}
        f = TwoPartyFunction((1, 2), (1, 2), table)
        db = onesided_via_spqpq(f)
        assert db.n == 3 and db.answers[1:] == ((3, 5), (2, 4))
        assert db.k_map is None
        assert spqpq_as_1s2pc(db).table == table

    def test_random_rectangular_roundtrips(self):
        rng = np.random.default_rng(21)
        for _ in range(30):
            db = random_rectangular_database(rng)
            assert onesided_via_spqpq(spqpq_as_1s2pc(db)) == db

    def test_function_json(self):
        f, _ = oot_as_1s2pc(OTInstance(1, 2, 0))
        back = TwoPartyFunction.from_json(json.loads(json.dumps(f.to_json())))
        assert back.table == f.table


class TestOOT:
    def test_selects_m0(self):
        assert oot_as_1s2pc(OTInstance(5, 9, 0))[1] == 5

    def test_selects_m1(self):
        assert oot_as_1s2pc(OTInstance(5, 9, 1))[1] == 9

    def test_equal_messages(self):
        assert oot_as_1s2pc(OTInstance(4, 4, 0))[1] == oot_as_1s2pc(OTInstance(4, 4, 1))[1]

    def test_bad_choice_bit(self):
        with pytest.raises(ValueError):
            OTInstance(1, 2, 2)
