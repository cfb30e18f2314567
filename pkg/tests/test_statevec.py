import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ghzqkd.statevec import (
    EXACT_TOL,
    Gate,
    MeasurementBasis,
    ProjectiveFamily,
    StateCorruptionError,
    StateVector,
    apply_cnot,
    apply_gate,
    append_zero_qubits,
    basis_state,
    equal_up_to_phase,
    from_amplitudes,
    inner_product,
    measure_in_family,
    measure_qubit,
    new_register,
    tensor,
)

R = 1 / np.sqrt(2)


def ket(bits, amp=1.0):
    return basis_state([int(c) for c in bits]).amplitudes * amp


def ghz(plus_bits, sign=1):
    return from_amplitudes(ket(plus_bits, R) + sign * ket("".join("1" if c == "0" else "0" for c in plus_bits), R))


# brute-force 2x2 matrix on one qubit via full Kronecker product
def dense_op(matrix, qubit, n):
    ops = [np.eye(2)] * n
    ops[qubit] = matrix
    out = ops[0]
    for m in ops[1:]:
        out = np.kron(out, m)
    return out


MATS = {
    Gate.IDENTITY: np.eye(2),
    Gate.PAULI_X: np.array([[0, 1], [1, 0]]),
    Gate.PAULI_Y: np.array([[0, -1j], [1j, 0]]),
    Gate.PAULI_Z: np.diag([1, -1]),
    Gate.HADAMARD: np.array([[1, 1], [1, -1]]) * R,
}


random_states = st.integers(1, 5).flatmap(
    lambda n: st.lists(
        st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1 << n, max_size=1 << n
    ).filter(lambda v: sum(a * a + b * b for a, b in v) > 1e-3)
)


def normalized(pairs):
    v = np.array([a + 1j * b for a, b in pairs])
    return from_amplitudes(v / np.linalg.norm(v))


class TestRegister:
    def test_single_qubit_ground(self):
        np.testing.assert_array_equal(new_register(1).amplitudes, [1, 0])

    def test_three_qubit_ground(self):
        s = new_register(3)
        assert s.amplitudes[0] == 1
        assert np.count_nonzero(s.amplitudes) == 1

    def test_five_qubit_workspace(self):
        assert new_register(5).amplitudes.shape == (32,)

    @pytest.mark.parametrize("n", [0, 25, -1])
    def test_size_out_of_range(self, n):
        with pytest.raises(ValueError):
            new_register(n)

    def test_length_invariant(self):
        with pytest.raises(ValueError):
            StateVector(2, np.zeros(3, dtype=complex))

    def test_append_zero_matches_tensor(self):
        s = ghz("000")
        a = append_zero_qubits(s, 2)
        b = tensor(s, new_register(2))
        np.testing.assert_allclose(a.amplitudes, b.amplitudes)


class TestGates:
    def test_x_on_zero(self):
        out = apply_gate(new_register(1), Gate.PAULI_X, 0)
        np.testing.assert_array_equal(out.amplitudes, [0, 1])

    def test_z_on_ghz_third_qubit(self):
        # direct 8-amplitude arithmetic: Z on qubit 2 negates odd indices
        psi1 = ghz("000")
        expected = psi1.amplitudes.copy()
        expected[1::2] *= -1
        out = apply_gate(psi1, Gate.PAULI_Z, 2)
        np.testing.assert_allclose(out.amplitudes, expected, atol=EXACT_TOL)
        np.testing.assert_allclose(out.amplitudes, ghz("000", -1).amplitudes, atol=EXACT_TOL)

    def test_qubit_out_of_range(self):
        with pytest.raises(IndexError):
            apply_gate(new_register(2), Gate.PAULI_X, 2)

    @settings(max_examples=60, deadline=None)
    @given(random_states, st.sampled_from(list(Gate)), st.data())
    def test_matches_dense_matrix(self, pairs, gate, data):
        s = normalized(pairs)
        q = data.draw(st.integers(0, s.num_qubits - 1))
        expected = dense_op(MATS[gate], q, s.num_qubits) @ s.amplitudes
        out = apply_gate(s, gate, q)
        np.testing.assert_allclose(out.amplitudes, expected, atol=1e-12)
        assert abs(out.norm - 1) < 1e-9

    @settings(max_examples=60, deadline=None)
    @given(random_states, st.sampled_from(list(Gate)), st.data())
    def test_involution_up_to_phase(self, pairs, gate, data):
        s = normalized(pairs)
        q = data.draw(st.integers(0, s.num_qubits - 1))
        twice = apply_gate(apply_gate(s, gate, q), gate, q)
        assert abs(abs(inner_product(s, twice)) - 1) < 1e-12


class TestCnot:
    def test_basis(self):
        out = apply_cnot(basis_state([1, 0]), 0, 1)
        np.testing.assert_array_equal(out.amplitudes, basis_state([1, 1]).amplitudes)

    def test_control_zero_untouched(self):
        out = apply_cnot(basis_state([0, 1]), 0, 1)
        np.testing.assert_array_equal(out.amplitudes, basis_state([0, 1]).amplitudes)

    def test_collision(self):
        with pytest.raises(ValueError):
            apply_cnot(new_register(2), 1, 1)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            apply_cnot(new_register(2), 0, 3)

    @settings(max_examples=40, deadline=None)
    @given(random_states.filter(lambda v: len(v) >= 4), st.data())
    def test_matches_dense(self, pairs, data):
        s = normalized(pairs)
        n = s.num_qubits
        c = data.draw(st.integers(0, n - 1))
        t = data.draw(st.integers(0, n - 1).filter(lambda x: x != c))
        p0 = dense_op(np.diag([1, 0]), c, n)
        p1 = dense_op(np.diag([0, 1]), c, n)
        full = p0 + p1 @ dense_op(MATS[Gate.PAULI_X], t, n)
        np.testing.assert_allclose(apply_cnot(s, c, t).amplitudes, full @ s.amplitudes, atol=1e-12)


class TestMeasureQubit:
    def test_eigenstate(self):
        rng = np.random.default_rng(0)
        outcome, post = measure_qubit(basis_state([1]), 0, MeasurementBasis.Z, rng)
        assert outcome == 1
        np.testing.assert_array_equal(post.amplitudes, [0, 1])

    def test_ghz_z_outcomes_all_equal(self):
        rng = np.random.default_rng(1)
        counts = {"000": 0, "111": 0}
        for _ in range(2000):
            s = ghz("000")
            bits = []
            for q in range(3):
                b, s = measure_qubit(s, q, MeasurementBasis.Z, rng)
                bits.append(b)
            counts["".join(map(str, bits))] += 1
        assert sum(counts.values()) == 2000

    def test_ghz_x_parity_brute_force(self):
        # expand psi1 in the Hadamard basis: only even-parity X strings survive
        h3 = dense_op(MATS[Gate.HADAMARD], 0, 3) @ dense_op(MATS[Gate.HADAMARD], 1, 3) @ dense_op(
            MATS[Gate.HADAMARD], 2, 3
        )
        coeffs = h3 @ ghz("000").amplitudes
        for idx, c in enumerate(coeffs):
            if abs(c) > 1e-12:
                assert bin(idx).count("1") % 2 == 0
        rng = np.random.default_rng(2)
        for _ in range(500):
            s = ghz("000")
            bits = []
            for q in range(3):
                b, s = measure_qubit(s, q, MeasurementBasis.X, rng)
                bits.append(b)
            assert sum(bits) % 2 == 0

    def test_repeat_reproduces(self):
        rng = np.random.default_rng(3)
        for basis in MeasurementBasis:
            for _ in range(50):
                s = ghz("010", -1)
                b1, s = measure_qubit(s, 1, basis, rng)
                b2, s = measure_qubit(s, 1, basis, rng)
                assert b1 == b2

    def test_x_collapse_is_eigenstate(self):
        rng = np.random.default_rng(4)
        b, post = measure_qubit(new_register(1), 0, MeasurementBasis.X, rng)
        sign = -1 if b else 1
        np.testing.assert_allclose(post.amplitudes, [R, sign * R], atol=1e-12)

    def test_born_statistics(self):
        # |amp|^2 marginal for qubit 0 of a skewed 2-qubit state
        amps = np.array([0.6, 0.0, 0.0, 0.8j])
        s = from_amplitudes(amps)
        rng = np.random.default_rng(5)
        trials = 10_000
        ones = sum(measure_qubit(s, 0, MeasurementBasis.Z, rng)[0] for _ in range(trials))
        p = 0.64
        se = np.sqrt(p * (1 - p) / trials)
        assert abs(ones / trials - p) < 3 * se

    def test_zero_norm(self):
        with pytest.raises(StateCorruptionError):
            measure_qubit(StateVector(1, np.zeros(2, complex)), 0, MeasurementBasis.Z, np.random.default_rng())

    @settings(max_examples=40, deadline=None)
    @given(random_states, st.sampled_from(list(MeasurementBasis)), st.data())
    def test_norm_preserved(self, pairs, basis, data):
        s = normalized(pairs)
        q = data.draw(st.integers(0, s.num_qubits - 1))
        _, post = measure_qubit(s, q, basis, np.random.default_rng(data.draw(st.integers(0, 2**32))))
        assert abs(post.norm - 1) < 1e-9


def eq1_family():
    return [
        ghz("000"), ghz("000", -1), ghz("100"), ghz("100", -1),
        ghz("010"), ghz("010", -1), ghz("110"), ghz("110", -1),
    ]


class TestFamily:
    def test_eq1_family_orthonormal(self):
        fam = ProjectiveFamily(eq1_family())
        assert len(fam) == 8

    def test_rejects_non_orthonormal(self):
        bad = eq1_family()
        bad[1] = ghz("000")
        with pytest.raises(ValueError):
            ProjectiveFamily(bad)

    def test_rejects_incomplete(self):
        with pytest.raises(ValueError):
            ProjectiveFamily(eq1_family()[:4])

    def test_eigenstate(self):
        fam = eq1_family()
        idx, _ = measure_in_family(fam[2], fam, np.random.default_rng(0))
        assert idx == 2

    def test_superposition_half_half(self):
        fam = eq1_family()
        s = from_amplitudes((fam[0].amplitudes + fam[2].amplitudes) * R)
        # brute-force inner products give 1/2, 1/2
        probs = [abs(inner_product(f, s)) ** 2 for f in fam]
        np.testing.assert_allclose(probs, [0.5, 0, 0.5, 0, 0, 0, 0, 0], atol=1e-12)
        rng = np.random.default_rng(7)
        trials = 4000
        hits = [measure_in_family(s, fam, rng)[0] for _ in range(trials)]
        assert set(hits) <= {0, 2}
        se = np.sqrt(0.25 / trials)
        assert abs(hits.count(0) / trials - 0.5) < 3 * se

    def test_subset_with_entangled_rest(self):
        # psi7 on qubits 0..2, ancillae |0>|1> on qubits 3,4
        fam = eq1_family()
        s = tensor(fam[6], basis_state([0, 1]))
        idx, post = measure_in_family(s, fam, np.random.default_rng(0), qubits=[0, 1, 2])
        assert idx == 6
        assert equal_up_to_phase(post, s)

    def test_permuted_subset(self):
        # family measured on qubits (2, 0, 1) of a state laid out on (0, 1, 2)
        fam = eq1_family()
        s = tensor(basis_state([1]), fam[4])  # psi5 on qubits 1,2,3; qubit 0 spectator
        idx, post = measure_in_family(s, fam, np.random.default_rng(0), qubits=[1, 2, 3])
        assert idx == 4
        assert equal_up_to_phase(post, s)
        # psi5 read in qubit order (q3, q1, q2) is |001>+|110>, i.e. psi7
        idx, _ = measure_in_family(s, fam, np.random.default_rng(0), qubits=[3, 1, 2])
        assert idx == 6


class TestInnerProduct:
    def test_self(self):
        assert abs(inner_product(ghz("000"), ghz("000")) - 1) < 1e-12

    def test_orthogonal(self):
        assert abs(inner_product(ghz("000"), ghz("000", -1))) < 1e-12

    def test_xx_maps_psi3_to_psi1(self):
        psi3 = ghz("100")
        moved = apply_gate(apply_gate(psi3, Gate.PAULI_X, 1), Gate.PAULI_X, 2)
        assert abs(inner_product(ghz("000"), moved) - 1) < 1e-12

    def test_mismatch(self):
        with pytest.raises(ValueError):
            inner_product(new_register(1), new_register(2))
