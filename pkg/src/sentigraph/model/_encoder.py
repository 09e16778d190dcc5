"""A small pre-norm transformer encoder with hand-written backward pass."""

import logging
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, softmax

from ._functional import gelu, gelu_backward, layer_norm, layer_norm_backward, softmax_backward
from ._params import ParamSet

logger = logging.getLogger(__name__)

_MASKED_SCORE = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    """Shape and initialisation settings of the encoder."""

    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 128
    d_ff: int = 0
    seed: int = 0
    init_std: float = 0.02

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if min(self.vocab_size, self.d_model, self.n_layers, self.n_heads, self.max_len) < 1:
            raise ValueError(f"Encoder sizes must be positive: {self}")
        if self.d_ff == 0:
            object.__setattr__(self, "d_ff", 4 * self.d_model)

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(config: EncoderConfig) -> ParamSet:
    """Random initial parameters for the encoder and its two pretraining heads."""
    rng = np.random.default_rng(config.seed)
    d, v, f = config.d_model, config.vocab_size, config.d_ff

    def normal(*shape):
        return rng.normal(0.0, config.init_std, size=shape)

    params = ParamSet({"tok_emb": normal(v, d), "pos_emb": normal(config.max_len, d)})
    for layer in range(config.n_layers):
        p = f"layers.{layer}."
        params[p + "ln1.gamma"] = np.ones(d)
        params[p + "ln1.beta"] = np.zeros(d)
        for proj in ("q", "k", "v", "o"):
            params[p + f"attn.w{proj}"] = normal(d, d)
            params[p + f"attn.b{proj}"] = np.zeros(d)
        params[p + "ln2.gamma"] = np.ones(d)
        params[p + "ln2.beta"] = np.zeros(d)
        params[p + "ffn.w1"] = normal(d, f)
        params[p + "ffn.b1"] = np.zeros(f)
        params[p + "ffn.w2"] = normal(f, d)
        params[p + "ffn.b2"] = np.zeros(d)
    params["ln_f.gamma"] = np.ones(d)
    params["ln_f.beta"] = np.zeros(d)
    # token prediction head; the bias is vocabulary-sized
    params["mlm.w"] = normal(d, v)
    params["mlm.b"] = np.zeros(v)
    params["pair.w"] = normal(d)
    params["pair.b"] = np.zeros(1)
    return params


@dataclass
class ForwardCache:
    """Intermediate values of one forward pass, consumed by `Encoder.backward`."""

    token_ids: np.ndarray
    layers: list[dict] = field(default_factory=list)
    final_norm: tuple | None = None


class Encoder:
    """Transformer encoder over token id sequences.

    Parameters
    ----------
    config : EncoderConfig
        Shapes and seed.
    params : ParamSet | None
        Existing parameters, e.g. from a checkpoint; freshly initialised when omitted.
    """

    def __init__(self, config: EncoderConfig, params: ParamSet | None = None):
        self.config = config
        self.params = params if params is not None else init_params(config)

    def _check_input(self, token_ids: Sequence[int]) -> np.ndarray:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ValueError("Encoder input must be a non-empty 1-d id sequence")
        if ids.size > self.config.max_len:
            raise ValueError(f"Sequence of length {ids.size} exceeds max_len {self.config.max_len}")
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            raise ValueError(f"Token id out of vocabulary range [0, {self.config.vocab_size})")
        return ids

    def forward(
        self, token_ids: Sequence[int], attention_mask: Sequence[bool] | None = None
    ) -> tuple[np.ndarray, ForwardCache]:
        """Encode one sequence.

        Parameters
        ----------
        token_ids : Sequence[int]
            Ids below ``vocab_size``, at most ``max_len`` of them.
        attention_mask : Sequence[bool] | None
            False marks padding keys that no position may attend to.

        Returns
        -------
        tuple[np.ndarray, ForwardCache]
            Hidden states of shape ``(len, d_model)`` and the cache needed by `backward`.
        """
        ids = self._check_input(token_ids)
        n = ids.size
        cfg, p = self.config, self.params
        key_bias = np.zeros(n)
        if attention_mask is not None:
            key_bias = np.where(np.asarray(attention_mask, dtype=bool), 0.0, _MASKED_SCORE)

        cache = ForwardCache(token_ids=ids)
        x = p["tok_emb"][ids] + p["pos_emb"][:n]
        for layer in range(cfg.n_layers):
            pre = f"layers.{layer}."
            a, ln1 = layer_norm(x, p[pre + "ln1.gamma"], p[pre + "ln1.beta"])
            q = a @ p[pre + "attn.wq"] + p[pre + "attn.bq"]
            k = a @ p[pre + "attn.wk"] + p[pre + "attn.bk"]
            v = a @ p[pre + "attn.wv"] + p[pre + "attn.bv"]
            qh, kh, vh = (t.reshape(n, cfg.n_heads, cfg.d_head).transpose(1, 0, 2) for t in (q, k, v))
            scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(cfg.d_head) + key_bias
            probs = softmax(scores, axis=-1)
            o = (probs @ vh).transpose(1, 0, 2).reshape(n, cfg.d_model)
            x1 = x + o @ p[pre + "attn.wo"] + p[pre + "attn.bo"]

            b, ln2 = layer_norm(x1, p[pre + "ln2.gamma"], p[pre + "ln2.beta"])
            h_pre = b @ p[pre + "ffn.w1"] + p[pre + "ffn.b1"]
            g = gelu(h_pre)
            x = x1 + g @ p[pre + "ffn.w2"] + p[pre + "ffn.b2"]
            cache.layers.append(
                dict(a=a, ln1=ln1, qh=qh, kh=kh, vh=vh, probs=probs, o=o, b=b, ln2=ln2, h_pre=h_pre, g=g)
            )
        hidden, cache.final_norm = layer_norm(x, p["ln_f.gamma"], p["ln_f.beta"])
        return hidden, cache

    def encode(self, token_ids: Sequence[int], attention_mask: Sequence[bool] | None = None) -> np.ndarray:
        return self.forward(token_ids, attention_mask)[0]

    def backward(self, cache: ForwardCache | None, d_hidden: np.ndarray, grads: ParamSet | None = None) -> ParamSet:
        """Back-propagate a hidden-state gradient through the encoder.

        Parameters
        ----------
        cache : ForwardCache
            Cache returned by `forward` for the same input.
        d_hidden : np.ndarray
            Loss gradient with respect to the hidden states, shape ``(len, d_model)``.
        grads : ParamSet | None
            Accumulator; a zeroed gradient set is created when omitted.

        Returns
        -------
        ParamSet
            The accumulated gradients.

        Raises
        ------
        ValueError
            If no forward cache is given or shapes disagree.
        """
        if not isinstance(cache, ForwardCache) or cache.final_norm is None:
            raise ValueError("backward requires the cache of a completed forward pass")
        cfg, p = self.config, self.params
        n = cache.token_ids.size
        d_hidden = np.asarray(d_hidden, dtype=np.float64)
        if d_hidden.shape != (n, cfg.d_model):
            raise ValueError(f"d_hidden has shape {d_hidden.shape}, expected {(n, cfg.d_model)}")
        if grads is None:
            grads = self.params.zeros_like()

        dx, dgamma, dbeta = layer_norm_backward(d_hidden, cache.final_norm)
        grads["ln_f.gamma"] += dgamma
        grads["ln_f.beta"] += dbeta
        for layer in reversed(range(cfg.n_layers)):
            pre = f"layers.{layer}."
            c = cache.layers[layer]
            # feed-forward residual branch
            grads[pre + "ffn.w2"] += c["g"].T @ dx
            grads[pre + "ffn.b2"] += dx.sum(axis=0)
            dh_pre = gelu_backward(dx @ p[pre + "ffn.w2"].T, c["h_pre"])
            grads[pre + "ffn.w1"] += c["b"].T @ dh_pre
            grads[pre + "ffn.b1"] += dh_pre.sum(axis=0)
            d_ln2, dgamma, dbeta = layer_norm_backward(dh_pre @ p[pre + "ffn.w1"].T, c["ln2"])
            grads[pre + "ln2.gamma"] += dgamma
            grads[pre + "ln2.beta"] += dbeta
            dx1 = dx + d_ln2

            # attention residual branch
            grads[pre + "attn.wo"] += c["o"].T @ dx1
            grads[pre + "attn.bo"] += dx1.sum(axis=0)
            doh = (dx1 @ p[pre + "attn.wo"].T).reshape(n, cfg.n_heads, cfg.d_head).transpose(1, 0, 2)
            dprobs = doh @ c["vh"].transpose(0, 2, 1)
            dvh = c["probs"].transpose(0, 2, 1) @ doh
            dscores = softmax_backward(dprobs, c["probs"]) / np.sqrt(cfg.d_head)
            dqh = dscores @ c["kh"]
            dkh = dscores.transpose(0, 2, 1) @ c["qh"]
            da = np.zeros((n, cfg.d_model))
            for proj, dth in (("q", dqh), ("k", dkh), ("v", dvh)):
                dt = dth.transpose(1, 0, 2).reshape(n, cfg.d_model)
                grads[pre + f"attn.w{proj}"] += c["a"].T @ dt
                grads[pre + f"attn.b{proj}"] += dt.sum(axis=0)
                da += dt @ p[pre + f"attn.w{proj}"].T
            d_ln1, dgamma, dbeta = layer_norm_backward(da, c["ln1"])
            grads[pre + "ln1.gamma"] += dgamma
            grads[pre + "ln1.beta"] += dbeta
            dx = dx1 + d_ln1

        np.add.at(grads["tok_emb"], cache.token_ids, dx)
        grads["pos_emb"][:n] += dx
        return grads

    def token_logits(self, hidden: np.ndarray) -> np.ndarray:
        return hidden @ self.params["mlm.w"] + self.params["mlm.b"]

    def predict_token_distribution(self, hidden: np.ndarray) -> np.ndarray:
        """Softmax over the vocabulary for one (or a stack of) hidden vectors."""
        return softmax(self.token_logits(np.asarray(hidden, dtype=np.float64)), axis=-1)

    def pair_probability(self, hidden: np.ndarray) -> float:
        """Probability that a pair sequence is a true pair, from its first ([CLS]) state."""
        return float(expit(hidden[0] @ self.params["pair.w"] + self.params["pair.b"][0]))

    def pooled(self, token_ids: Sequence[int]) -> tuple[np.ndarray, ForwardCache]:
        """Mean of the hidden states of a sequence."""
        hidden, cache = self.forward(token_ids)
        return hidden.mean(axis=0), cache
