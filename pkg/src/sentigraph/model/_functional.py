"""Forward and backward rules of the encoder building blocks."""

import numpy as np

LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> tuple[np.ndarray, tuple]:
    mu = x.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + LN_EPS)
    x_hat = (x - mu) * inv_std
    return gamma * x_hat + beta, (x_hat, inv_std, gamma)


def layer_norm_backward(dy: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (dx, dgamma, dbeta)."""
    x_hat, inv_std, gamma = cache
    d_hat = dy * gamma
    n = x_hat.shape[-1]
    dx = inv_std / n * (n * d_hat - d_hat.sum(axis=-1, keepdims=True) - x_hat * (d_hat * x_hat).sum(axis=-1, keepdims=True))
    return dx, (dy * x_hat).sum(axis=0), dy.sum(axis=0)


def gelu(x: np.ndarray) -> np.ndarray:
    """Tanh approximation of GELU."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x**3)))


def gelu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2))


def softmax_backward(dp: np.ndarray, p: np.ndarray) -> np.ndarray:
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


def cosine(a: np.ndarray, b: np.ndarray, eps: float = 1e-12) -> tuple[float, np.ndarray, np.ndarray]:
    """Cosine similarity with its gradients; 0 with zero gradients if either vector vanishes."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < eps or nb < eps:
        return 0.0, np.zeros_like(a), np.zeros_like(b)
    c = float(a @ b / (na * nb))
    return c, b / (na * nb) - c * a / na**2, a / (na * nb) - c * b / nb**2
