"""Linear-chain CRF over BIO tags for aspect and sentiment term extraction."""

from collections.abc import Sequence

import numpy as np
from scipy.special import logsumexp

from .model import ParamSet

BIO_LABELS = ("O", "B-aspect", "I-aspect", "B-sentiment", "I-sentiment")


class CrfLayer:
    """Emission projection plus transition, start and end scores.

    Parameters are stored under the ``crf.`` prefix so they can live in the same
    `ParamSet` as the encoder they sit on.
    """

    def __init__(self, params: ParamSet, labels: Sequence[str] = BIO_LABELS):
        self.params = params
        self.labels = tuple(labels)

    @classmethod
    def create(cls, d_model: int, labels: Sequence[str] = BIO_LABELS, seed: int = 0, init_std: float = 0.02):
        if len(labels) < 2:
            raise ValueError("A CRF needs at least two labels")
        rng = np.random.default_rng(seed)
        n = len(labels)
        params = ParamSet(
            {
                "crf.w": rng.normal(0.0, init_std, size=(d_model, n)),
                "crf.b": np.zeros(n),
                "crf.trans": np.zeros((n, n)),
                "crf.start": np.zeros(n),
                "crf.end": np.zeros(n),
            }
        )
        return cls(params, labels)

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    @property
    def transitions(self) -> np.ndarray:
        return self.params["crf.trans"]

    @property
    def start(self) -> np.ndarray:
        return self.params["crf.start"]

    @property
    def end(self) -> np.ndarray:
        return self.params["crf.end"]

    def emissions(self, hidden: np.ndarray) -> np.ndarray:
        return hidden @ self.params["crf.w"] + self.params["crf.b"]

    def path_score(self, emissions: np.ndarray, path: Sequence[int]) -> float:
        path = np.asarray(path)
        score = self.start[path[0]] + emissions[np.arange(len(path)), path].sum() + self.end[path[-1]]
        return float(score + self.transitions[path[:-1], path[1:]].sum())


def _check_emissions(crf: CrfLayer, emissions: np.ndarray) -> np.ndarray:
    emissions = np.asarray(emissions, dtype=np.float64)
    if emissions.ndim != 2 or emissions.shape[0] < 1 or emissions.shape[1] != crf.n_labels:
        raise ValueError(f"Emissions must have shape (length >= 1, {crf.n_labels}), got {emissions.shape}")
    if not np.isfinite(emissions).all():
        raise ValueError("Emissions must be finite")
    return emissions


def _forward(crf: CrfLayer, emissions: np.ndarray) -> np.ndarray:
    alpha = np.empty_like(emissions)
    alpha[0] = crf.start + emissions[0]
    for t in range(1, len(emissions)):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + crf.transitions, axis=0) + emissions[t]
    return alpha


def _backward(crf: CrfLayer, emissions: np.ndarray) -> np.ndarray:
    beta = np.empty_like(emissions)
    beta[-1] = crf.end
    for t in range(len(emissions) - 2, -1, -1):
        beta[t] = logsumexp(crf.transitions + emissions[t + 1] + beta[t + 1], axis=1)
    return beta


def crf_log_partition(crf: CrfLayer, emissions: np.ndarray) -> float:
    """Log of the summed exponentiated score of every label path."""
    emissions = _check_emissions(crf, emissions)
    return float(logsumexp(_forward(crf, emissions)[-1] + crf.end))


def crf_viterbi(crf: CrfLayer, emissions: np.ndarray) -> tuple[list[int], float]:
    """Highest-scoring label path and its score.

    Ties go to the lowest label index at every step, so all-zero potentials decode
    to the all-``O`` path.
    """
    emissions = _check_emissions(crf, emissions)
    n = len(emissions)
    delta = crf.start + emissions[0]
    backpointers = np.zeros((n, crf.n_labels), dtype=np.int64)
    for t in range(1, n):
        candidates = delta[:, None] + crf.transitions
        backpointers[t] = np.argmax(candidates, axis=0)
        delta = candidates[backpointers[t], np.arange(crf.n_labels)] + emissions[t]
    final = delta + crf.end
    path = [int(np.argmax(final))]
    for t in range(n - 1, 0, -1):
        path.append(int(backpointers[t, path[-1]]))
    path.reverse()
    return path, float(final[path[-1]])


def crf_nll(
    crf: CrfLayer, emissions: np.ndarray, tags: Sequence[int], grads: ParamSet | None = None
) -> tuple[float, np.ndarray, ParamSet]:
    """Negative log-likelihood of a tag path with its gradients.

    Returns
    -------
    tuple[float, np.ndarray, ParamSet]
        The NLL, its gradient with respect to the emissions, and the accumulated
        gradients of the transition, start and end scores.
    """
    emissions = _check_emissions(crf, emissions)
    tags = np.asarray(tags, dtype=np.int64)
    if tags.shape != (len(emissions),):
        raise ValueError(f"Expected {len(emissions)} tags, got {tags.shape}")
    grads = grads if grads is not None else crf.params.zeros_like()
    alpha = _forward(crf, emissions)
    beta = _backward(crf, emissions)
    log_z = float(logsumexp(alpha[-1] + crf.end))
    nll = log_z - crf.path_score(emissions, tags)

    marginals = np.exp(alpha + beta - log_z)
    d_emissions = marginals.copy()
    d_emissions[np.arange(len(tags)), tags] -= 1.0
    for t in range(1, len(tags)):
        pairwise = np.exp(alpha[t - 1][:, None] + crf.transitions + (emissions[t] + beta[t])[None, :] - log_z)
        grads["crf.trans"] += pairwise
        grads["crf.trans"][tags[t - 1], tags[t]] -= 1.0
    grads["crf.start"] += marginals[0]
    grads["crf.start"][tags[0]] -= 1.0
    grads["crf.end"] += marginals[-1]
    grads["crf.end"][tags[-1]] -= 1.0
    return nll, d_emissions, grads
