import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from qrconnect import states as st
from qrconnect import tomography as tm
from qrconnect.sim import round_rng

PHI_PLUS = st.bell_state("phi+", ("S1", "S4")).density()
MIXED = st.DensityMatrix.maximally_mixed(("S1", "S4"))


def dephased_state(fidelity, phase_deg=337.5):
    lam = 2 * fidelity - 1
    return st.apply_channel(st.phase_family_state(math.radians(phase_deg)),
                            st.NoiseChannel.dephasing(lam, ["S4"]))


class TestBases:
    def test_standard_set(self):
        assert len(tm.STANDARD_BASES) == 16 and len(set(tm.STANDARD_BASES)) == 16

    @pytest.mark.parametrize("basis", tm.STANDARD_BASES, ids=str)
    def test_projectors(self, basis):
        P = basis.projector
        np.testing.assert_allclose(P @ P, P, atol=1e-15)
        np.testing.assert_allclose(P, P.conj().T, atol=0)
        assert np.linalg.matrix_rank(P) == 1

    def test_unknown_token(self):
        with pytest.raises(tm.TomographyError, match="'X'"):
            tm.MeasurementBasis("H", "X")


class TestForwardModel:
    def test_orthogonal_projector_zero(self):
        hh = st.ket("HH", ("S1", "S4")).density()
        c = tm.expected_counts(hh, [tm.MeasurementBasis("V", "V")], 1234.0)
        assert c.counts[0] == 0.0

    def test_phi_plus_dd_half(self):
        c = tm.expected_counts(PHI_PLUS, [tm.MeasurementBasis("D", "D")], 1000.0)
        assert c.counts[0] == pytest.approx(500.0, abs=1e-10)

    def test_poisson_frequencies_converge(self):
        rho = dephased_state(0.8)
        p = tm.probabilities(rho)
        errs = []
        for n in (1e2, 1e4, 1e6):
            devs = [np.abs(tm.simulate_counts(rho, n_expected=n, rng=round_rng(1, k)).counts / n - p).mean()
                    for k in range(20)]
            errs.append(np.mean(devs))
        # each factor 100 in n shrinks the error about tenfold
        assert errs[0] / errs[1] == pytest.approx(10, rel=0.35)
        assert errs[1] / errs[2] == pytest.approx(10, rel=0.35)

    def test_counts_non_negative(self):
        c = tm.simulate_counts(MIXED, n_expected=3.0, rng=round_rng(0, 0))
        assert np.all(c.counts >= 0) and c.counts.dtype.kind == "i"

    def test_negative_counts_rejected(self):
        with pytest.raises(tm.TomographyError):
            tm.CountsRecord(tm.STANDARD_BASES, -np.ones(16))


class TestReconstruction:
    def test_exact_phi_plus(self):
        res = tm.mle_reconstruct(tm.expected_counts(PHI_PLUS, n_expected=1e4))
        assert st.fidelity(res.rho_hat, PHI_PLUS) >= 1 - 1e-6
        assert res.converged

    def test_exact_mixed(self):
        res = tm.mle_reconstruct(tm.expected_counts(MIXED, n_expected=1e4))
        np.testing.assert_allclose(res.rho_hat.entries, np.eye(4) / 4, atol=1e-4)

    def test_likelihood_monotone(self):
        counts = tm.simulate_counts(dephased_state(0.8), n_expected=41, rng=round_rng(2, 0))
        res = tm.mle_reconstruct(counts, track=True)
        assert np.all(np.diff(res.history) >= 0)

    def test_plain_iteration_available(self):
        counts = tm.simulate_counts(PHI_PLUS, n_expected=1e3, rng=round_rng(3, 0))
        res = tm.mle_reconstruct(counts, dilution=1.0, track=True)
        assert np.all(np.diff(res.history) >= 0)
        assert res.fidelity > 0.95

    @settings(max_examples=15, deadline=None)
    @given(hst.integers(0, 2**31), hst.sampled_from([20.0, 200.0, 5000.0]))
    def test_output_is_valid_state(self, seed, n):
        rng = np.random.default_rng(seed)
        g = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
        rho = g @ g.conj().T
        rho /= np.trace(rho).real
        counts = tm.simulate_counts(st.DensityMatrix(rho, ("S1", "S4")), n_expected=n, rng=rng)
        if counts.total == 0:
            return
        res = tm.mle_reconstruct(counts, track=True)
        m = res.rho_hat.entries
        assert np.max(np.abs(m - m.conj().T)) < 1e-12
        assert abs(np.trace(m).real - 1) < 1e-12
        assert np.linalg.eigvalsh(m).min() >= -1e-12
        assert 0 <= res.fidelity <= 1
        assert np.all(np.diff(res.history) >= 0)

    def test_basis_order_invariance(self):
        counts = tm.simulate_counts(dephased_state(0.8), n_expected=100, rng=round_rng(4, 0))
        perm = np.random.default_rng(0).permutation(16)
        shuffled = tm.CountsRecord(tuple(counts.bases[i] for i in perm), counts.counts[perm])
        a = tm.mle_reconstruct(counts)
        b = tm.mle_reconstruct(shuffled)
        np.testing.assert_allclose(a.rho_hat.entries, b.rho_hat.entries, atol=1e-8)

    def test_self_consistency(self):
        counts = tm.simulate_counts(dephased_state(0.8), n_expected=2000, rng=round_rng(5, 0))
        res = tm.mle_reconstruct(counts)
        mu = tm.predicted_counts(res, counts)
        z = (counts.counts - mu) / np.sqrt(np.maximum(mu, 1.0))
        assert np.all(np.abs(z) < 4)
        assert np.sum(z**2) < 16 + 6 * math.sqrt(32)

    @pytest.mark.parametrize("name, rho", [
        ("phi+", PHI_PLUS), ("mixed", MIXED),
        ("werner", st.apply_channel(PHI_PLUS, st.NoiseChannel.werner(0.4, ("S1", "S4")))),
    ])
    def test_median_fidelity_to_truth(self, name, rho):
        fids = [st.fidelity(tm.mle_reconstruct(tm.simulate_counts(rho, n_expected=1e4,
                                                                  rng=round_rng(100, k))).rho_hat, rho)
                for k in range(30)]
        assert np.median(fids) >= 0.995

    def test_all_zero(self):
        with pytest.raises(tm.TomographyError, match="zero"):
            tm.mle_reconstruct(tm.CountsRecord(tm.STANDARD_BASES, np.zeros(16)))

    def test_incomplete_bases(self):
        bases = [tm.MeasurementBasis(a, b) for a in "HV" for b in "HVD"]
        with pytest.raises(tm.TomographyError, match="complete"):
            tm.mle_reconstruct(tm.CountsRecord(bases, np.ones(6)))


class TestErrorBars:
    def test_noiseless_phi_plus(self):
        mean, std, res = tm.fidelity_with_error(tm.expected_counts(PHI_PLUS, n_expected=1e5))
        assert res.fidelity == pytest.approx(1.0, abs=1e-6)
        assert std < 0.01

    def test_order_of_magnitude_at_656_counts(self):
        rho = dephased_state(0.8)
        n = 656 / tm.probabilities(rho).sum()
        counts = tm.simulate_counts(rho, n_expected=n, rng=round_rng(7, 0))
        mean, std, res = tm.fidelity_with_error(counts, seed=7)
        assert 0.03 <= std <= 0.06
        assert abs(res.fidelity - 0.8) <= 3 * std

    def test_std_scales_inverse_sqrt(self):
        rho = dephased_state(0.8)
        scale = tm.probabilities(rho).sum()
        stds = []
        for total in (656, 6560, 65600):
            counts = tm.expected_counts(rho, n_expected=total / scale)
            stds.append(tm.fidelity_with_error(counts, seed=1)[1])
        ratios = np.array(stds[:-1]) / np.array(stds[1:])
        np.testing.assert_allclose(ratios, math.sqrt(10), rtol=0.3)

    def test_requires_100_replicas(self):
        with pytest.raises(tm.TomographyError, match="100"):
            tm.fidelity_with_error(tm.expected_counts(PHI_PLUS, n_expected=10), n_bootstrap=10)


class TestPhase:
    def test_atom_photon_3375(self):
        rho = st.atom_photon_state(math.radians(337.5))
        assert tm.extract_phase(rho) == pytest.approx(337.5, abs=1e-10)

    def test_zero(self):
        assert tm.extract_phase(st.atom_photon_state(0.0)) == pytest.approx(0.0, abs=1e-12)

    def test_dephasing_preserves_phase(self):
        rho = st.apply_channel(st.phase_family_state(math.radians(120)),
                               st.NoiseChannel.dephasing(0.5, ["S4"]))
        assert tm.extract_phase(rho) == pytest.approx(120.0, abs=1e-10)

    def test_reconstructed_phase(self):
        counts = tm.expected_counts(dephased_state(0.9, 337.5), n_expected=1e4)
        res = tm.mle_reconstruct(counts)
        assert tm.extract_phase(res.rho_hat) == pytest.approx(337.5, abs=1e-2)

    def test_no_coherence(self):
        with pytest.raises(tm.TomographyError, match="undefined"):
            tm.extract_phase(MIXED)


class TestCountsFile:
    def test_round_trip(self, tmp_path):
        counts = tm.simulate_counts(dephased_state(0.8), n_expected=50, rng=round_rng(8, 0))
        path = tmp_path / "c.txt"
        tm.write_counts(counts, path)
        back = tm.read_counts(path)
        assert back.bases == counts.bases
        np.testing.assert_array_equal(back.counts, counts.counts)

    def test_comments_and_blank_lines(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("# header\n\nH H 3  # trailing\nV V 4\n")
        rec = tm.read_counts(path)
        assert rec.total == 7.0

    @pytest.mark.parametrize("text, match", [
        ("H H 3\nH Q 2\n", "line 2: unknown basis token 'Q'"),
        ("H H x\n", "line 1: invalid count 'x'"),
        ("H H -1\n", "invalid count"),
        ("H H\n", "expected 'basis1 basis2 count'"),
        ("H H 1\nH H 2\n", "duplicate"),
        ("# nothing\n", "no records"),
    ])
    def test_malformed(self, tmp_path, text, match):
        path = tmp_path / "c.txt"
        path.write_text(text)
        with pytest.raises(tm.TomographyError, match=match):
            tm.read_counts(path)
