"""Exit criteria for the package. Each test adds one PASS/FAIL line to the
terminal summary (see conftest)."""
import itertools
import json

import numpy as np
import pytest

from qpqlab.adversaries import (
    appendix_attack_strategy,
    bob_extract_probability,
    build_U1,
    build_U2,
    honest_strategy,
)
from qpqlab.cli import main
from qpqlab.core import (
    DensityMatrix,
    RegisterLayout,
    StateVector,
    apply_unitary,
    born_probabilities,
    fidelity,
    local_conversion_unitary,
    partial_trace,
    schmidt_decompose,
    trace_distance,
    unitarity_error,
)
from qpqlab.harness import ExperimentConfig, audit_requirements, run_experiment
from qpqlab.nogo import (
    NotConcealingError,
    OTInstance,
    concealing_gap,
    delayed_choice_attack,
    onesided_via_spqpq,
    oot_as_1s2pc,
    random_concealing_scheme,
    random_revealing_scheme,
    random_unitary,
    spqpq_as_1s2pc,
)
from qpqlab.protocol import (
    Database,
    Scenario,
    appendix_database,
    bob_honest_oracle,
    exact_round,
    final_branches,
    random_deterministic_database,
    random_rectangular_database,
    run_round,
)

S = 1 / np.sqrt(2)
APPENDIX = appendix_database()
DET = APPENDIX.deterministic_restriction()
B3 = RegisterLayout([("B", 3)])


def qr(n, d, q, r):
    v = np.zeros(n * d, dtype=complex)
    v[q * d + r] = 1
    return v


def random_state(rng, dims):
    layout = RegisterLayout((f"r{i}", d) for i, d in enumerate(dims))
    v = rng.normal(size=layout.total_dim) + 1j * rng.normal(size=layout.total_dim)
    return StateVector(layout, v / np.linalg.norm(v))


def test_c1_honest_completeness(acceptance_log):
    """C1 honest completeness: 50 random deterministic tables, P=1 and answer A_j w.p. 1 (1e-9)"""
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(50):
        db = random_deterministic_database(rng, max_n=6, max_answer_dim=8)
        bob = honest_strategy(db)
        for j in range(1, db.n):
            for sc in Scenario:
                s = exact_round(j, db, sc, bob)
                assert abs(s.pass_probability - 1) <= 1e-9
                assert abs(s.answer_distribution.get(db.answers[j][0], 0.0) - 1) <= 1e-9
                checked += 1
    assert checked >= 100


def test_c2_closed_form_conformance(acceptance_log):
    """C2 honest end states equal the plain-then-superposed / superposed-then-plain closed forms (1e-10)"""
    n, d = DET.n, DET.answer_dim
    blank_memory = np.eye(n)[0]
    for j in range(1, n):
        aj = DET.answers[j][0]
        plain = qr(n, d, j, aj)
        phi = (qr(n, d, j, aj) + qr(n, d, 0, DET.fixed_answer)) * S
        closed = {"a": np.kron(np.kron(plain, phi), blank_memory),
                  "b": np.kron(np.kron(phi, plain), blank_memory)}
        for sc in "ab":
            (_, final), = final_branches(j, DET, sc, honest_strategy(DET))
            assert abs(abs(np.vdot(closed[sc], final.amplitudes)) - 1) <= 1e-10
            t = run_round(j, DET, sc, honest_strategy(DET), np.random.default_rng(j))
            assert abs(abs(np.vdot(closed[sc], t.final_state.amplitudes)) - 1) <= 1e-10


def test_c3_appendix_attack_exact(acceptance_log):
    """C3 two-answer attack: P=1 (1e-9), answers 1/2-1/2, Bob's memory and conditional states (1e-9)"""
    bob = appendix_attack_strategy(APPENDIX)
    for j in (1, 2):
        plus, minus = APPENDIX.answers[j]
        avg = np.zeros((3, 3))
        avg[0, 0] = avg[j, j] = 0.5
        for sc in Scenario:
            s = exact_round(j, APPENDIX, sc, bob)
            assert abs(s.pass_probability - 1) <= 1e-9
            assert set(s.answer_distribution) == {plus, minus}
            assert abs(s.answer_distribution[plus] - 0.5) <= 1e-12
            assert abs(s.answer_distribution[minus] - 0.5) <= 1e-12
            assert trace_distance(DensityMatrix(B3, s.bob_memory), DensityMatrix(B3, avg)) <= 1e-9
            for label, sign in ((plus, 1), (minus, -1)):
                v = np.eye(3)[0] + sign * np.eye(3)[j]
                v = v / np.linalg.norm(v)
                target = DensityMatrix(B3, np.outer(v, v))
                assert trace_distance(DensityMatrix(B3, s.conditional_memory[label]),
                                      target) <= 1e-9


def test_c4_pqpq_audit(acceptance_log):
    """C4 pQPQ audit: attack gives items 1,2 pass and 3 fail; intercept item 3 pass with detection 1/2 (1e-9)"""
    attack = run_experiment(ExperimentConfig(database="builtin:appendix",
                                             strategy="appendix-attack", mode="exact"))
    items = audit_requirements(attack, "pqpq")
    assert [items[i]["verdict"] for i in "123"] == ["pass", "pass", "fail"]

    # branch-enumeration oracle: Bob's collapse leaves |j>|A_j> or |0>|A_0> in the
    # superposed slot, each branch w.p. 1/2 and each overlapping Phi with |amp|^2 = 1/2
    n, d = DET.n, DET.answer_dim
    oracle = {}
    for j in (1, 2):
        phi = (qr(n, d, j, DET.answers[j][0]) + qr(n, d, 0, DET.fixed_answer)) * S
        branches = [qr(n, d, j, DET.answers[j][0]), qr(n, d, 0, DET.fixed_answer)]
        oracle[j] = 1 - sum(0.5 * abs(np.vdot(phi, b)) ** 2 for b in branches)

    report = run_experiment(ExperimentConfig(database="builtin:appendix-deterministic",
                                             strategy="intercept", mode="exact"))
    items = audit_requirements(report, "pqpq")
    assert items["3"]["verdict"] == "pass"
    for c in report.cells:
        assert abs(c["detection_probability"] - oracle[c["j"]]) <= 1e-9
        assert abs(c["detection_probability"] - 0.5) <= 1e-9


def test_c5_bob_recovers_j(acceptance_log):
    """C5 Bob's j-guess under the attack succeeds w.p. 3/4, above the 1/2 baseline"""
    bob = appendix_attack_strategy(APPENDIX)
    for j in (1, 2):
        for sc in Scenario:
            s = exact_round(j, APPENDIX, sc, bob)
            diag = np.real(np.diag(s.bob_memory))
            # outcome j -> correct; outcome 0 -> uniform over {1, 2}
            oracle = diag[j] + diag[0] * 0.5
            assert abs(s.bob_guess_probability - 0.75) <= 1e-9
            assert abs(s.bob_guess_probability - oracle) <= 1e-12
            assert s.bob_guess_probability > 0.5
            assert abs(bob_extract_probability(s.bob_memory, j, 3) - 0.75) <= 1e-9


def test_c6_delayed_choice_attack(acceptance_log):
    """C6 delayed-choice attack: 100 concealing schemes (>=20 degenerate) fidelity 1 (1e-8); 20 revealing report gap"""
    rng = np.random.default_rng(77)
    degenerate_count = 0
    for i in range(100):
        degenerate = i < 30
        da = int(rng.integers(2 if degenerate else 1, 9))
        db = int(rng.integers(2 if degenerate else 1, 9))
        scheme = random_concealing_scheme(rng, da, db, degenerate=degenerate)
        coeffs = schmidt_decompose(scheme.psi0, ["A"]).coefficients
        if len(coeffs) > 1 and np.min(np.abs(np.diff(coeffs))) < 1e-9:
            degenerate_count += 1
        assert concealing_gap(scheme) <= 1e-8
        for c, o in ((0, 1), (1, 0)):
            u, fid = delayed_choice_attack(scheme, c, o)
            assert abs(fid - 1) <= 1e-8
            assert abs(fidelity(scheme.state(o), apply_unitary(scheme.state(c), u)) - 1) <= 1e-8
    assert degenerate_count >= 20

    for _ in range(20):
        scheme = random_revealing_scheme(rng, int(rng.integers(1, 9)), int(rng.integers(2, 9)))
        with pytest.raises(NotConcealingError) as exc:
            delayed_choice_attack(scheme, 0, 1)
        assert exc.value.gap > 1e-8
        assert abs(exc.value.gap - concealing_gap(scheme)) <= 1e-12


def test_c7_reduction_roundtrip(acceptance_log):
    """C7 reductions: database -> f(j,k) -> database is the identity on 100 tables; OT selects m_k over 8 values"""
    rng = np.random.default_rng(5)
    for _ in range(100):
        db = random_rectangular_database(rng)
        f = spqpq_as_1s2pc(db)
        for j in f.j_domain:
            for k in f.k_domain:
                assert f(j, k) == db.answers[j][k - 1]
        assert onesided_via_spqpq(f) == db
    for m0, m1, k in itertools.product(range(8), range(8), (0, 1)):
        f, value = oot_as_1s2pc(OTInstance(m0, m1, k), alphabet_size=8)
        assert value == (m0, m1)[k]
        assert len(f.table) == 128


def test_c8_core_properties(acceptance_log):
    """C8 core properties over >=200 instances: Schmidt 1e-10, spectra 1e-9, unitarity 1e-10, Born sums 1e-9"""
    rng = np.random.default_rng(8)
    for _ in range(200):
        dims = [int(d) for d in rng.integers(1, 5, size=int(rng.integers(2, 5)))]
        s = random_state(rng, dims)
        names = s.layout.names
        cut = int(rng.integers(1, len(names)))
        left = list(rng.permutation(names)[:cut])
        dec = schmidt_decompose(s, left)
        recon = dec.reconstruct()
        assert abs(abs(np.vdot(recon.amplitudes, s.amplitudes)) - 1) <= 1e-10
        assert np.max(np.abs(recon.amplitudes - s.amplitudes)) <= 1e-10
        eig = np.sort(np.linalg.eigvalsh(partial_trace(s, left).matrix))[::-1]
        sq = np.zeros_like(eig)
        sq[:dec.rank] = dec.coefficients ** 2
        assert np.max(np.abs(sq - eig)) <= 1e-9

        k = int(rng.integers(0, len(dims)))
        u = random_unitary(dims[k], rng)
        projectors = [np.outer(u[:, i], u[:, i].conj()) for i in range(dims[k])]
        assert abs(born_probabilities(s, projectors, [names[k]]).sum() - 1) <= 1e-9

    built = 0
    for _ in range(200):
        n = int(rng.integers(2, 5))
        d = int(rng.integers(3, 7))
        answers = [(int(rng.integers(1, d)),)]
        for _ in range(1, n):
            m = int(rng.integers(1, 3))
            answers.append(tuple(int(x) for x in rng.choice(np.arange(1, d), m, replace=False)))
        db = Database(n, d, tuple(answers))
        ops = [build_U1(db), build_U2(db)]
        if db.is_deterministic:
            ops += [bob_honest_oracle(db, "1"), bob_honest_oracle(db, "2")]
        scheme = random_concealing_scheme(rng, int(rng.integers(1, 6)), int(rng.integers(1, 6)),
                                          degenerate=bool(rng.random() < 0.3))
        ops.append(local_conversion_unitary(scheme.psi0, scheme.psi1, ["A"]))
        for op in ops:
            assert unitarity_error(op.matrix) <= 1e-10
            built += 1
    for op in (build_U1(APPENDIX), build_U2(APPENDIX)):
        assert unitarity_error(op.matrix) <= 1e-10
    assert built >= 600


def test_c9_determinism(acceptance_log, tmp_path):
    """C9 determinism: repeated CLI runs are byte-identical; parallel and sequential reports agree"""
    runs = {
        "sampled": ["run-qpq", "--strategy", "appendix-attack", "--mode", "sampled",
                    "--trials", "300", "--seed", "12345678901234"],
        "intercept": ["run-qpq", "--strategy", "intercept", "--db",
                      "builtin:appendix-deterministic", "--mode", "sampled", "--trials", "200",
                      "--seed", "3"],
        "exact": ["run-qpq", "--strategy", "appendix-attack", "--mode", "exact"],
        "qbc": ["qbc-attack", "--scheme", "builtin:bell", "--commit", "1", "--open", "0"],
        "oot": ["reduce", "--oot", "3", "6", "1"],
    }
    for name, argv in runs.items():
        outs = []
        for rep in range(2):
            path = tmp_path / f"{name}{rep}.json"
            assert main(argv + ["--out", str(path)]) == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1], name
    audit = []
    for rep in range(2):
        path = tmp_path / f"audit{rep}.json"
        assert main(["audit", "--report", str(tmp_path / "exact0.json"), "--list", "spqpq",
                     "--out", str(path)]) == 0
        audit.append(path.read_bytes())
    assert audit[0] == audit[1]

    for strategy, db in (("appendix-attack", "builtin:appendix"),
                         ("intercept", "builtin:appendix-deterministic")):
        cfg = ExperimentConfig(database=db, strategy=strategy, mode="sampled", trials=400, seed=99)
        sequential = run_experiment(cfg, workers=1).dumps()
        assert run_experiment(cfg, workers=4).dumps() == sequential
        assert json.loads(sequential)["summary"]["trials"] == 400
    parallel_cli = tmp_path / "par.json"
    assert main(runs["sampled"] + ["--workers", "4", "--out", str(parallel_cli)]) == 0
    assert parallel_cli.read_bytes() == (tmp_path / "sampled0.json").read_bytes()
