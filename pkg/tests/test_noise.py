import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from conftest import X, Z, kron_sites, random_density
from gibbsforge.hilbert import LatticeSpec, SiteSubset, embed_local_operator, enumerate_sector, full_basis, popcounts
from gibbsforge.noise import (
    CompletenessError,
    PauliChannelSpec,
    PauliString,
    apply_kraus,
    apply_pauli_channel,
    apply_phase_flip,
    apply_unitary,
    check_thermalizing_conditions,
    haar_unitary,
    pauli_channel_kraus,
    sample_haar_block,
)
from gibbsforge.spinmodel import CouplingParams, build_hamiltonian
from gibbsforge.states import QuantumState

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), seeds)
def test_haar_block_structure(m, seed):
    U = sample_haar_block(list(range(m)), seed).matrix
    assert np.abs(U.conj().T @ U - np.eye(2**m)).max() <= 1e-12
    pc = popcounts(m)
    assert np.all(U[pc[:, None] != pc[None, :]] == 0)
    assert U[0, 0] == 1 and U[-1, -1] == 1
    Q = np.diag(2.0 * pc - m)
    assert np.abs(U @ Q - Q @ U).max() <= 1e-12


def test_three_site_block_shapes():
    U = sample_haar_block([4, 7, 9], 3).matrix
    pc = popcounts(3)
    for c, size in zip(range(4), (1, 3, 3, 1)):
        idx = np.nonzero(pc == c)[0]
        assert len(idx) == size
        blk = U[np.ix_(idx, idx)]
        np.testing.assert_allclose(blk.conj().T @ blk, np.eye(size), atol=1e-12)
    e = np.zeros(8)
    e[0] = 1
    np.testing.assert_array_equal(U @ e, e)


def test_haar_determinism():
    a = sample_haar_block([0, 1, 2], 11).matrix
    b = sample_haar_block([0, 1, 2], 11).matrix
    c = sample_haar_block([0, 1, 2], 12).matrix
    np.testing.assert_array_equal(a, b)
    assert np.abs(a - c).max() > 1e-3


def test_haar_size_limits():
    with pytest.raises(ValueError):
        sample_haar_block(list(range(7)), 0)


def test_haar_unitary_is_haar_in_distribution():
    """Mean |U_00|^2 is 1/n and the phases of diagonal entries are uniform."""
    rng = np.random.default_rng(5)
    n = 3
    samples = np.array([haar_unitary(n, rng) for _ in range(4000)])
    assert abs(np.mean(np.abs(samples[:, 0, 0]) ** 2) - 1 / n) < 0.01
    # the phase fix makes the diagonal of R positive, so no phase is preferred
    assert abs(np.mean(np.exp(1j * np.angle(samples[:, 0, 0])))) < 0.05


@settings(max_examples=20, deadline=None)
@given(st.integers(4, 8), seeds)
def test_haar_embedding_preserves_sector(L, seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(0, L + 1))
    sites = [int(s) for s in rng.choice(L, 3, replace=False)]
    b = enumerate_sector(LatticeSpec(L, p))
    E = embed_local_operator(sample_haar_block(sites, rng).matrix, sites, b)
    np.testing.assert_allclose(E.conj().T @ E, np.eye(b.dim), atol=1e-12)


def test_phase_flip_identity_cases(rng):
    b = full_basis(3)
    rho = random_density(8, rng)
    np.testing.assert_array_equal(apply_phase_flip(rho, SiteSubset([0, 1, 2]), 0.0, b), rho)
    diag = np.diag(np.diag(rho))
    np.testing.assert_allclose(apply_phase_flip(diag, SiteSubset([0, 1, 2]), 0.7, b), diag)
    with pytest.raises(ValueError):
        apply_phase_flip(rho, SiteSubset([0]), 1.5, b)


def test_phase_flip_half_on_plus_state():
    b = full_basis(3)
    plus = np.ones(8) / np.sqrt(8)
    rho = np.outer(plus, plus)
    S = kron_sites({0: Z, 1: Z, 2: Z}, 3)
    oracle = 0.5 * rho + 0.5 * S @ rho @ S
    got = apply_phase_flip(rho, SiteSubset([0, 1, 2]), 0.5, b)
    np.testing.assert_allclose(got, oracle, atol=1e-15)
    parity = np.diag(S)
    odd = parity[:, None] != parity[None, :]
    assert np.all(got[odd] == 0) and np.all(got[~odd] != 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), seeds)
def test_phase_flip_channel_properties(p, seed):
    rng = np.random.default_rng(seed)
    b = enumerate_sector(LatticeSpec(6, 3))
    rho = random_density(b.dim, rng)
    sub = SiteSubset([1, 2, 4])
    out = apply_phase_flip(rho, sub, p, b)
    assert abs(np.trace(out) - 1) <= 1e-12
    assert np.abs(out - out.conj().T).max() <= 1e-12
    assert np.linalg.eigvalsh(out).min() >= -1e-10
    np.testing.assert_allclose(np.diag(out), np.diag(rho), atol=1e-15)
    assert np.sum(np.abs(out) ** 2) <= np.sum(np.abs(rho) ** 2) + 1e-12
    mixed = np.eye(b.dim) / b.dim
    np.testing.assert_array_equal(apply_phase_flip(mixed, sub, p, b), mixed)


def test_phase_flip_factored_matches_dense(rng):
    b = enumerate_sector(LatticeSpec(7, 2))
    psi = rng.normal(size=b.dim) + 1j * rng.normal(size=b.dim)
    psi /= np.linalg.norm(psi)
    st_ = QuantumState.pure(psi, b)
    sub = SiteSubset([0, 3, 5])
    dense = apply_phase_flip(np.outer(psi, psi.conj()), sub, 0.3, b)
    np.testing.assert_allclose(apply_phase_flip(st_, sub, 0.3).density(), dense, atol=1e-14)


def test_pauli_identity_channel(rng):
    b = full_basis(3)
    rho = random_density(8, rng)
    spec = PauliChannelSpec((PauliString("II", (0, 1)),), (1.0,))
    np.testing.assert_allclose(apply_pauli_channel(rho, spec, b), rho, atol=1e-14)


def test_pauli_reduces_to_phase_flip(rng):
    b = enumerate_sector(LatticeSpec(5, 2))
    rho = random_density(b.dim, rng)
    p = 0.35
    spec = PauliChannelSpec.admissible_pair(1, 3, p, 0.0, 1 - p)
    got = apply_pauli_channel(rho, spec, b)
    np.testing.assert_allclose(got, apply_phase_flip(rho, SiteSubset([1, 3]), p, b), atol=1e-14)


def test_pauli_channel_random_spec_matches_kraus_oracle(rng):
    L = 4
    b = full_basis(L)
    rho = random_density(16, rng)
    probs = rng.dirichlet(np.ones(3))
    spec = PauliChannelSpec.admissible_pair(0, 2, *probs)
    ZZ = kron_sites({0: Z, 2: Z}, L)
    XX = kron_sites({0: X, 2: X}, L)
    P = (np.eye(16) - ZZ) / 2
    XXP = XX @ P
    deficit = np.eye(16) - (probs[0] * ZZ @ ZZ + probs[1] * XXP.T @ XXP + probs[2] * np.eye(16))
    w, v = np.linalg.eigh(probs[2] * np.eye(16) + deficit)
    K_id = (v * np.sqrt(np.clip(w, 0, None))) @ v.T
    oracle = probs[0] * ZZ @ rho @ ZZ + probs[1] * XXP @ rho @ XXP.T + K_id @ rho @ K_id.T
    got = apply_pauli_channel(rho, spec, b)
    np.testing.assert_allclose(got, oracle, atol=1e-13)
    assert abs(np.trace(got) - 1) <= 1e-12
    assert np.linalg.eigvalsh(got).min() >= -1e-10


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_pauli_kraus_completeness(seed):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(3))
    ks = pauli_channel_kraus(PauliChannelSpec.admissible_pair(2, 5, *probs))
    total = sum(K.conj().T @ K for K in ks.operators)
    assert np.abs(total - np.eye(4)).max() <= 1e-12
    # the projected XX term is non-unitary, so a correction is reported whenever it carries weight
    assert (ks.correction_norm > 0) == (probs[1] > 0)


def test_pauli_channel_conserves_populations(rng):
    b = enumerate_sector(LatticeSpec(6, 3))
    st_ = QuantumState.pure(rng.normal(size=b.dim) + 0j, b)
    st_ = QuantumState(b, st_.factor / np.linalg.norm(st_.factor))
    spec = PauliChannelSpec.admissible_pair(0, 1, 0.2, 0.5, 0.3)
    out = apply_pauli_channel(st_, spec)
    zz = b.spins[:, 0] * b.spins[:, 1]
    before = np.sum(zz * np.abs(st_.factor[:, 0]) ** 2)
    after = np.real(np.sum(zz[:, None] * np.abs(out.factor) ** 2))
    assert abs(before - after) < 1e-12
    assert abs(out.trace() - 1) < 1e-12


def test_pauli_spec_validation():
    with pytest.raises(ValueError):
        PauliChannelSpec((PauliString("ZZ", (0, 1)),), (0.5,))
    with pytest.raises(ValueError):
        pauli_channel_kraus(PauliChannelSpec((PauliString("XI", (0, 1)),), (1.0,)))


def test_pauli_surplus_is_completeness_error():
    spec = PauliChannelSpec((PauliString("ZZ", (0, 1)), PauliString("II", (0, 1))), (0.5, 0.5), conserved=None)
    pauli_channel_kraus(spec)  # complete: fine
    bad = PauliChannelSpec.__new__(PauliChannelSpec)
    object.__setattr__(bad, "strings", (PauliString("ZZ", (0, 1)), PauliString("II", (0, 1))))
    object.__setattr__(bad, "probs", (0.8, 0.8))
    object.__setattr__(bad, "conserved", None)
    with pytest.raises(CompletenessError):
        pauli_channel_kraus(bad)


def test_pauli_from_config():
    spec = PauliChannelSpec.from_config({"sites": [3, 4], "strings": ["ZZ", "XX|P", "I"], "probs": [0.2, 0.3, 0.5]})
    assert spec.strings[1].projector and spec.strings[2].letters == "II"
    assert spec.support == (3, 4)


def test_kraus_on_factored_state_is_trace_preserving(rng):
    b = enumerate_sector(LatticeSpec(6, 2))
    psi = rng.normal(size=b.dim) + 1j * rng.normal(size=b.dim)
    st_ = QuantumState.pure(psi / np.linalg.norm(psi), b)
    ks = pauli_channel_kraus(PauliChannelSpec.admissible_pair(0, 1, 0.3, 0.3, 0.4))
    out = apply_kraus(st_, ks.operators, ks.support)
    assert abs(out.trace() - 1) <= 1e-12
    U = sample_haar_block([1, 2, 3], rng).matrix
    assert abs(apply_unitary(st_, U, SiteSubset([1, 2, 3])).trace() - 1) <= 1e-12


def test_thermalizing_conditions():
    b = enumerate_sector(LatticeSpec(6, 3))
    H = build_hamiltonian(CouplingParams(), b)
    rep = check_thermalizing_conditions(np.eye(b.dim), H, [4, 5], [0, 1, 2])
    assert rep.commutator_norm == 0 and not rep.straddles and not rep.candidate
    M = embed_local_operator(sample_haar_block([1, 2, 3], 4).matrix, [1, 2, 3], b)
    assert check_thermalizing_conditions(M, H, [1, 2, 3], [0, 1]).commutator_norm > 0
    sym = expm(1j * H)
    rep = check_thermalizing_conditions(sym, H, [3, 4, 5], [0, 1, 2])
    assert rep.commutator_norm < 1e-10 and not rep.straddles and not rep.candidate
    assert check_thermalizing_conditions(np.eye(b.dim), H, [2, 3], [0, 1, 2]).candidate
