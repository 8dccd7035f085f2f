import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from combqfi.comb_algebra import (
    FactorizedComb,
    KrausChannel,
    choi_from_kraus,
    compose_kraus,
    double_ket,
    factorize,
    kraus_product_comb,
    link_product,
    max_ent_ket,
    purify,
    validate_comb,
)
from combqfi.errors import InvalidChannelError, RankInstabilityError
from combqfi.metrology_zoo import amplitude_damping, bit_flip, rz
from combqfi.tensor_algebra import (
    LabeledMatrix,
    SubsystemLayout,
    partial_trace,
    permute_factors,
    tensor,
)

sys.path.insert(0, "tests")
from util import random_channel, random_state  # noqa: E402


class TestKrausChannel:
    def test_tp_violation_rejected(self):
        with pytest.raises(InvalidChannelError):
            KrausChannel((np.eye(2) * 0.5,), (np.zeros((2, 2)),))

    def test_derivative_tp_violation_rejected(self):
        with pytest.raises(InvalidChannelError):
            KrausChannel((np.eye(2),), (np.eye(2),))


class TestChoiFromKraus:
    def test_identity_channel_rank_one(self):
        fc = choi_from_kraus(KrausChannel((np.eye(2),), (np.zeros((2, 2)),)))
        k = max_ent_ket(2)
        assert fc.rank == 1
        assert np.allclose(fc.choi().entries, np.outer(k, k.conj()))

    def test_full_damping_constant_map(self):
        # p=1 sends everything to |0>; explicit 4x4 expected matrix
        fc = choi_from_kraus(amplitude_damping(1.0))
        expected = np.kron(np.eye(2), np.diag([1.0, 0.0]))
        assert fc.rank == 2
        assert np.allclose(fc.choi().entries, expected)

    def test_unitary_channel_rank_one(self):
        fc = choi_from_kraus(rz(0.3))
        w = np.linalg.eigvalsh(fc.choi().entries)
        assert np.sum(w > 1e-12) == 1


class TestLinkProduct:
    def test_identity_link(self, rng):
        ch = random_channel(2, 2, 2, rng)
        fc = choi_from_kraus(ch, "2", "3")
        k = max_ent_ket(2)
        ident = LabeledMatrix(
            SubsystemLayout.of(("1", 2), ("2", 2)), np.outer(k, k.conj()), hermitian=True
        )
        out = link_product(ident, fc.choi())
        relabeled = choi_from_kraus(ch, "1", "3").choi()
        assert np.allclose(out.entries, relabeled.entries, atol=1e-12)

    def test_state_link_is_channel_action(self, rng):
        ch = random_channel(2, 3, 2, rng)
        rho = random_state(2, rng)
        state = LabeledMatrix(SubsystemLayout.of(("1", 2)), rho, hermitian=True)
        out = link_product(state, choi_from_kraus(ch).choi())
        assert np.allclose(out.entries, ch.apply(rho), atol=1e-12)

    def test_composition_matches_kraus(self, rng):
        a = random_channel(2, 2, 2, rng)
        b = random_channel(2, 2, 3, rng)
        ca = choi_from_kraus(a, "1", "2").choi()
        cb = choi_from_kraus(b, "2", "3").choi()
        lk = link_product(ca, cb)
        direct = choi_from_kraus(compose_kraus(b, a), "1", "3").choi()
        assert np.allclose(lk.entries, direct.entries, atol=1e-11)

    @given(st.integers(0, 2**31 - 1))
    def test_commutative_up_to_reordering(self, seed):
        rng = np.random.default_rng(seed)
        a = choi_from_kraus(random_channel(2, 2, 2, rng), "1", "2").choi()
        b = choi_from_kraus(random_channel(2, 2, 2, rng), "2", "3").choi()
        ab = link_product(a, b)
        ba = link_product(b, a)
        assert np.allclose(
            permute_factors(ba, ab.layout.labels).entries, ab.entries, atol=1e-11
        )

    @given(st.integers(0, 2**31 - 1))
    def test_associative_on_chains(self, seed):
        rng = np.random.default_rng(seed)
        a = choi_from_kraus(random_channel(2, 2, 2, rng), "1", "2").choi()
        b = choi_from_kraus(random_channel(2, 2, 2, rng), "2", "3").choi()
        c = choi_from_kraus(random_channel(2, 2, 2, rng), "3", "4").choi()
        left = link_product(link_product(a, b), c)
        right = link_product(a, link_product(b, c))
        assert np.linalg.norm(left.entries - right.entries) < 1e-10

    def test_dimension_mismatch(self, rng):
        a = choi_from_kraus(random_channel(2, 2, 2, rng), "1", "2").choi()
        b = choi_from_kraus(random_channel(3, 3, 2, rng), "2", "3").choi()
        with pytest.raises(Exception):
            link_product(a, b)


class TestValidateComb:
    def test_tp_channel_passes(self, rng):
        c = choi_from_kraus(random_channel(2, 2, 2, rng)).choi()
        assert validate_comb(c, [("1", "2")]).passed

    def test_product_comb_passes(self, rng):
        ch = random_channel(2, 2, 2, rng)
        c2 = kraus_product_comb([ch, ch]).choi()
        rep = validate_comb(c2, [("1", "2"), ("3", "4")])
        assert rep.passed
        assert max(rep.residuals) < 1e-12

    def test_reversed_role_wire_fails(self, rng):
        # a strategy-side wire |I>><<I| placed as a process tooth violates
        # the trace tower: the declared output signals backwards
        k = max_ent_ket(2)
        wire = LabeledMatrix(
            SubsystemLayout.of(("2", 2), ("3", 2)), np.outer(k, k.conj()), hermitian=True
        )
        rho = LabeledMatrix(SubsystemLayout.of(("1", 2)), random_state(2, rng), hermitian=True)
        ident4 = LabeledMatrix(SubsystemLayout.of(("4", 2)), np.eye(2), hermitian=True)
        c = tensor(tensor(rho, wire), ident4)
        rep = validate_comb(c, [("1", "2"), ("3", "4")])
        assert not rep.passed
        assert max(rep.residuals) > 1e-2


class TestFactorize:
    def test_rank_one(self, rng):
        v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        lay = SubsystemLayout.of(("1", 2), ("2", 2))
        c = LabeledMatrix(lay, np.outer(v, v.conj()), hermitian=True)
        zero = LabeledMatrix(lay, np.zeros((4, 4)), hermitian=True)
        fc = factorize(c, zero)
        assert fc.rank == 1
        assert np.allclose(np.abs(np.vdot(fc.vectors[:, 0], v)), np.linalg.norm(v) ** 2)

    def test_product_comb_agrees_with_eigen_path(self, rng):
        # both decompositions satisfy the defining identity of the derivative
        fc = kraus_product_comb([amplitude_damping(0.5), amplitude_damping(0.5)])
        alt = factorize(fc.choi(), fc.choi_deriv())
        for f in (fc, alt):
            resid = (
                f.dvectors @ f.vectors.conj().T
                + f.vectors @ f.dvectors.conj().T
                - fc.choi_deriv().entries
            )
            assert np.linalg.norm(resid) < 1e-9
        assert np.allclose(alt.choi().entries, fc.choi().entries, atol=1e-10)

    def test_damping_rank_two(self):
        fc0 = choi_from_kraus(amplitude_damping(0.5))
        out = factorize(fc0.choi(), fc0.choi_deriv())
        assert out.rank == 2

    def test_rank_instability_refused(self, rng):
        lay = SubsystemLayout.of(("1", 2))
        c = LabeledMatrix(lay, np.diag([1.0, 0.0]), hermitian=True)
        cd = LabeledMatrix(lay, np.diag([0.0, 1.0]), hermitian=True)
        with pytest.raises(RankInstabilityError):
            factorize(c, cd)

    @given(st.integers(0, 2**31 - 1))
    def test_roundtrip_reproduces_choi(self, seed):
        rng = np.random.default_rng(seed)
        ch = random_channel(2, 2, 3, rng)
        c = choi_from_kraus(ch).choi()
        zero = LabeledMatrix(c.layout, np.zeros_like(c.entries), hermitian=True)
        fc = factorize(c, zero)
        assert np.linalg.norm(fc.choi().entries - c.entries) < 1e-10


class TestPurify:
    def test_pure_state_trivial_future(self, rng):
        v = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        v /= np.linalg.norm(v)
        lay = SubsystemLayout.of(("s", 3))
        psi, full = purify(LabeledMatrix(lay, np.outer(v, v.conj()), hermitian=True))
        assert full.dim("F") == 1
        assert np.isclose(abs(np.vdot(psi, v)), 1.0, atol=1e-9)

    def test_maximally_mixed(self):
        lay = SubsystemLayout.of(("s", 2))
        psi, full = purify(LabeledMatrix(lay, np.eye(2) / 2, hermitian=True))
        assert full.dim("F") == 2
        m = psi.reshape(2, 2)
        assert np.allclose(m @ m.conj().T, np.eye(2) / 2, atol=1e-12)

    @given(st.integers(0, 2**31 - 1))
    def test_roundtrip_partial_trace(self, seed):
        rng = np.random.default_rng(seed)
        rho = random_state(6, rng, rank=3)
        lay = SubsystemLayout.of(("a", 2), ("b", 3))
        psi, full = purify(LabeledMatrix(lay, rho, hermitian=True))
        assert full.dim("F") == 3
        lm = LabeledMatrix(full, np.outer(psi, psi.conj()), hermitian=True)
        assert np.linalg.norm(partial_trace(lm, ["F"]).entries - rho) < 1e-9


def test_double_ket_convention():
    a = np.array([[1, 2], [3, 4]], dtype=complex)
    v = double_ket(a)
    # |A>> = sum_{mn} A_mn |n>_in |m>_out
    assert v[0] == a[0, 0] and v[1] == a[1, 0] and v[2] == a[0, 1] and v[3] == a[1, 1]
