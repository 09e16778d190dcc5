"""Tests for the linear-chain CRF."""

import itertools

import numpy as np
import pytest
from scipy.special import logsumexp

from sentigraph.crf import BIO_LABELS, CrfLayer, crf_log_partition, crf_nll, crf_viterbi
from sentigraph.model import gradient_check


def _random_crf(rng: np.random.Generator, n_labels: int) -> CrfLayer:
    crf = CrfLayer.create(4, labels=[f"L{i}" for i in range(n_labels)])
    crf.params["crf.trans"] = rng.normal(size=(n_labels, n_labels))
    crf.params["crf.start"] = rng.normal(size=n_labels)
    crf.params["crf.end"] = rng.normal(size=n_labels)
    return crf


def test_zero_potentials_partition():
    """Test that two positions with two labels and zero scores give log 4."""
    crf = CrfLayer.create(4, labels=["O", "B-aspect"])
    assert crf_log_partition(crf, np.zeros((2, 2))) == pytest.approx(np.log(4.0), abs=1e-12)


def test_against_brute_force():
    """Test partition, Viterbi path and score against enumeration of every path."""
    rng = np.random.default_rng(5)
    for length in range(1, 5):
        for n_labels in (2, 3):
            for _ in range(5):
                crf = _random_crf(rng, n_labels)
                emissions = rng.normal(size=(length, n_labels))
                paths = list(itertools.product(range(n_labels), repeat=length))
                scores = np.array([crf.path_score(emissions, path) for path in paths])

                assert crf_log_partition(crf, emissions) == pytest.approx(logsumexp(scores), abs=1e-8)
                path, score = crf_viterbi(crf, emissions)
                assert tuple(path) == paths[int(np.argmax(scores))]
                assert score == pytest.approx(scores.max(), abs=1e-8)


def test_emission_shift():
    """Test that shifting every emission by c adds length * c to log Z and leaves the NLL alone."""
    rng = np.random.default_rng(1)
    crf = _random_crf(rng, 3)
    emissions = rng.normal(size=(4, 3))
    tags = [0, 2, 2, 1]
    shift = 1.7
    assert crf_log_partition(crf, emissions + shift) == pytest.approx(
        crf_log_partition(crf, emissions) + 4 * shift, abs=1e-10
    )
    assert crf_nll(crf, emissions + shift, tags)[0] == pytest.approx(crf_nll(crf, emissions, tags)[0], abs=1e-10)


def test_viterbi_ties_pick_lowest_label():
    """Test that all-zero potentials decode to the all-O path."""
    crf = CrfLayer.create(8)
    path, score = crf_viterbi(crf, np.zeros((6, len(BIO_LABELS))))
    assert path == [0] * 6
    assert score == 0.0


def test_viterbi_score_bounded_by_partition():
    """Test that the best path score never exceeds log Z."""
    rng = np.random.default_rng(2)
    for _ in range(20):
        crf = _random_crf(rng, len(BIO_LABELS))
        emissions = rng.normal(size=(7, len(BIO_LABELS)))
        assert crf_viterbi(crf, emissions)[1] <= crf_log_partition(crf, emissions)


def test_nll_gradient_check():
    """Test NLL gradients of emissions and transition scores against central differences."""
    rng = np.random.default_rng(3)
    crf = _random_crf(rng, len(BIO_LABELS))
    crf.params["emissions"] = rng.normal(size=(5, len(BIO_LABELS)))
    tags = [1, 2, 0, 3, 4]

    def loss_and_grads():
        nll, d_emissions, grads = crf_nll(crf, crf.params["emissions"], tags)
        grads["emissions"] = d_emissions
        return nll, grads

    errors = gradient_check(loss_and_grads, crf.params, names=["emissions", "crf.trans", "crf.start", "crf.end"])
    assert max(errors.values()) < 1e-6, errors


def test_nll_is_positive_and_marginals_normalised():
    """Test that the NLL is positive and emission gradients sum to zero per position."""
    rng = np.random.default_rng(4)
    crf = _random_crf(rng, 3)
    nll, d_emissions, _ = crf_nll(crf, rng.normal(size=(4, 3)), [0, 1, 1, 2])
    assert nll > 0.0
    np.testing.assert_allclose(d_emissions.sum(axis=1), 0.0, atol=1e-12)


def test_input_checks():
    """Test emission shape, finiteness and tag length checks."""
    crf = CrfLayer.create(4)
    with pytest.raises(ValueError, match="Emissions must have shape"):
        crf_log_partition(crf, np.zeros((3, 2)))
    with pytest.raises(ValueError, match="Emissions must have shape"):
        crf_viterbi(crf, np.zeros((0, len(BIO_LABELS))))
    with pytest.raises(ValueError, match="finite"):
        crf_log_partition(crf, np.full((2, len(BIO_LABELS)), np.inf))
    with pytest.raises(ValueError, match="Expected 2 tags"):
        crf_nll(crf, np.zeros((2, len(BIO_LABELS))), [0])
    with pytest.raises(ValueError, match="at least two labels"):
        CrfLayer.create(4, labels=["O"])
