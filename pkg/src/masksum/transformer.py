"""Shared-stack seq2seq transformer driven entirely by an additive attention mask.

One stack of pre-LN transformer blocks reads ``[SOS] source [SEP] target [EOS]``.
The static mask lets source positions see the whole source and target
positions see the source plus their own prefix. A dynamic overlay can
additionally hide source columns; the attention weights of one layer are
captured and exposed as the reinforcement-learning state.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Callable, Mapping, Sequence

import numpy as np

from . import numerics as nx
from .numerics import Tensor
from .tokenizer import EOS, PAD, SEP, SOS, SOURCE, TARGET, TokenSequence, Vocab, encode_source

MASKED = -10000.0
IGNORE = -100


@dataclass
class ModelConfig:
    vocab_size: int
    num_layers: int = 2
    num_heads: int = 2
    d_model: int = 64
    d_ff: int = 128
    max_seq_len: int = 64
    dropout_rate: float = 0.1
    capture_layer: int | None = None
    apply_layers: str = "all"

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ValueError("d_model must be divisible by num_heads")
        if self.max_seq_len < 8:
            raise ValueError("max_seq_len must be >= 8")
        if self.capture_layer is None:
            self.capture_layer = (self.num_layers - 1) // 2
        if not 0 <= self.capture_layer < self.num_layers:
            raise ValueError("capture_layer out of range")
        if self.apply_layers not in ("all", "captured"):
            raise ValueError("apply_layers must be 'all' or 'captured'")

    def to_header(self) -> dict[str, object]:
        return {f"model.{k}": v for k, v in asdict(self).items()}

    @classmethod
    def from_header(cls, header: Mapping[str, str]) -> ModelConfig:
        kwargs = {}
        for f in fields(cls):
            raw = header.get(f"model.{f.name}")
            if raw is None:
                continue
            if f.name == "apply_layers":
                kwargs[f.name] = raw
            elif f.name == "dropout_rate":
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = None if raw == "None" else int(raw)
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

@dataclass
class AttentionMask:
    additive: np.ndarray

    @property
    def size(self) -> int:
        return self.additive.shape[0]

    def zeros_per_row(self) -> np.ndarray:
        return (self.additive == 0.0).sum(axis=1)


def static_mask(segment: np.ndarray) -> AttentionMask:
    segment = np.asarray(segment)
    n = segment.size
    is_src = segment == SOURCE
    m = np.full((n, n), MASKED)
    m[:, is_src] = 0.0
    tgt = np.nonzero(~is_src)[0]
    if tgt.size:
        causal = tgt[:, None] >= tgt[None, :]
        m[np.ix_(tgt, tgt)] = np.where(causal, 0.0, MASKED)
    return AttentionMask(m)


def guard_actions(actions: np.ndarray, received: np.ndarray | None = None) -> np.ndarray:
    """Keep at least one source token attended.

    If every token is masked, the most-attended one (by ``received``) is
    unmasked; ties go to the earliest position.
    """
    actions = np.asarray(actions, dtype=np.int64).copy()
    if actions.size and not actions.any():
        idx = int(np.argmax(received)) if received is not None else 0
        actions[idx] = 1
    return actions


def overlay(mask: AttentionMask, columns: np.ndarray) -> AttentionMask:
    """Hide key ``columns`` from every query row; never unmasks anything."""
    m = mask.additive.copy()
    if len(columns):
        m[:, np.asarray(columns, dtype=np.int64)] = MASKED
    if np.any((m == 0.0).sum(axis=1) == 0):
        raise ValueError("overlay would leave a query row with no attendable key")
    return AttentionMask(m)


def overlay_from_actions(mask: AttentionMask, source_positions: np.ndarray, actions: np.ndarray) -> AttentionMask:
    """Actions are 1 = attend, 0 = mask, one per source content position."""
    actions = np.asarray(actions)
    if actions.shape[0] != len(source_positions):
        raise ValueError(f"got {actions.shape[0]} actions for {len(source_positions)} source tokens")
    return overlay(mask, np.asarray(source_positions)[actions == 0])


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass
class AttentionScores:
    """Post-softmax attention weights per layer, each ``[heads, L, L]``."""

    layers: list[np.ndarray]
    capture_layer: int

    @property
    def captured(self) -> np.ndarray:
        return self.layers[self.capture_layer]


class Transformer:
    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self._init(rng if rng is not None else np.random.default_rng(0))

    def _init(self, rng: np.random.Generator) -> None:
        c = self.config
        d, f, v = c.d_model, c.d_ff, c.vocab_size

        def normal(*shape):
            return nx.parameter(rng.normal(0.0, 0.02, size=shape))

        def zeros(*shape):
            return nx.parameter(np.zeros(shape))

        def ones(*shape):
            return nx.parameter(np.ones(shape))

        p = self.params
        p["tok_emb"] = normal(v, d)
        p["pos_emb"] = normal(c.max_seq_len, d)
        for i in range(c.num_layers):
            pre = f"layer{i}."
            p[pre + "ln1.g"], p[pre + "ln1.b"] = ones(d), zeros(d)
            for name in ("q", "k", "v", "o"):
                p[pre + f"w{name}"] = normal(d, d)
                p[pre + f"b{name}"] = zeros(d)
            p[pre + "ln2.g"], p[pre + "ln2.b"] = ones(d), zeros(d)
            p[pre + "w1"], p[pre + "b1"] = normal(d, f), zeros(f)
            p[pre + "w2"], p[pre + "b2"] = normal(f, d), zeros(d)
        p["ln_f.g"], p["ln_f.b"] = ones(d), zeros(d)
        p["w_out"], p["b_out"] = normal(d, v), zeros(v)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def save(self, path, extra: Mapping[str, object] | None = None) -> None:
        header = self.config.to_header()
        header.update(extra or {})
        nx.save_parameters(path, self.params, header)

    @classmethod
    def load(cls, path) -> Transformer:
        arrays, header = nx.load_parameters(path)
        model = cls(ModelConfig.from_header(header))
        nx.assign_parameters(model.params, {k: arrays[k] for k in model.params})
        return model

    def _attention(self, x: Tensor, layer: int, mask: np.ndarray, training: bool,
                   rng) -> tuple[Tensor, np.ndarray]:
        c = self.config
        p = self.params
        pre = f"layer{layer}."
        n = x.shape[0]
        h, dh = c.num_heads, c.d_model // c.num_heads

        def heads(t: Tensor) -> Tensor:
            return t.reshape(n, h, dh).transpose(1, 0, 2)

        q = heads(x @ p[pre + "wq"] + p[pre + "bq"])
        k = heads(x @ p[pre + "wk"] + p[pre + "bk"])
        v = heads(x @ p[pre + "wv"] + p[pre + "bv"])
        scores = (q @ k.transpose(0, 2, 1)) * (1.0 / np.sqrt(dh)) + mask
        weights = nx.softmax_lastdim(scores)
        captured = weights.data
        weights = nx.dropout(weights, c.dropout_rate, rng, training)
        ctx = (weights @ v).transpose(1, 0, 2).reshape(n, c.d_model)
        return ctx @ p[pre + "wo"] + p[pre + "bo"], captured

    def forward(self, seq: TokenSequence, mask: AttentionMask, dynamic: AttentionMask | None = None,
                training: bool = False, rng: np.random.Generator | None = None
                ) -> tuple[Tensor, AttentionScores]:
        """Logits ``[L, vocab]`` and the attention weights of every layer.

        ``mask`` is the static pattern; ``dynamic`` (static plus the RL
        overlay) replaces it in the layers selected by ``apply_layers``.
        """
        c = self.config
        n = len(seq)
        if n > c.max_seq_len:
            raise ValueError(f"sequence length {n} exceeds max_seq_len {c.max_seq_len}")
        for m in (mask, dynamic):
            if m is not None and m.additive.shape != (n, n):
                raise ValueError(f"mask shape {m.additive.shape} does not match sequence length {n}")
        if training and c.dropout_rate > 0 and rng is None:
            raise ValueError("training with dropout needs an rng")
        p = self.params
        x = nx.embedding_lookup(p["tok_emb"], seq.ids) + p["pos_emb"][:n]
        x = nx.dropout(x, c.dropout_rate, rng, training)
        captured = []
        for i in range(c.num_layers):
            use_dynamic = dynamic is not None and (c.apply_layers == "all" or i == c.capture_layer)
            m = (dynamic if use_dynamic else mask).additive
            pre = f"layer{i}."
            a, w = self._attention(nx.layernorm(x, p[pre + "ln1.g"], p[pre + "ln1.b"]), i, m, training, rng)
            captured.append(w)
            x = x + nx.dropout(a, c.dropout_rate, rng, training)
            hdn = nx.gelu(nx.layernorm(x, p[pre + "ln2.g"], p[pre + "ln2.b"]) @ p[pre + "w1"] + p[pre + "b1"])
            x = x + nx.dropout(hdn @ p[pre + "w2"] + p[pre + "b2"], c.dropout_rate, rng, training)
        x = nx.layernorm(x, p["ln_f.g"], p["ln_f.b"])
        return x @ p["w_out"] + p["b_out"], AttentionScores(captured, c.capture_layer)


def next_token_targets(seq: TokenSequence) -> np.ndarray:
    """Position i predicts ids[i+1] whenever position i+1 is a target token."""
    targets = np.full(len(seq), IGNORE, dtype=np.int64)
    nxt = np.nonzero(seq.segment[1:] == TARGET)[0]
    targets[nxt] = seq.ids[nxt + 1]
    targets[(targets == PAD)] = IGNORE
    return targets


def supervised_loss(model: Transformer, seq: TokenSequence, mask: AttentionMask | None = None,
                    dynamic: AttentionMask | None = None, training: bool = False,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Teacher-forced mean cross-entropy over target predictions."""
    targets = next_token_targets(seq)
    if not np.any(targets != IGNORE):
        raise ValueError("sequence has no target positions")
    mask = mask if mask is not None else static_mask(seq.segment)
    logits, _ = model.forward(seq, mask, dynamic=dynamic, training=training, rng=rng)
    return nx.cross_entropy(logits, targets, ignore_index=IGNORE)


POOLINGS = ("offset", "rank")


def state_vector(scores: AttentionScores | np.ndarray, source_positions: np.ndarray,
                 n_buckets: int = 7, pooling: str = "offset") -> np.ndarray:
    """Per-source-token state ``[n_src, 1 + n_buckets]`` from captured attention.

    Column 0 is the head-averaged attention the token receives, averaged over
    query rows and scaled by the row count (1.0 = a uniform share). The rest
    pools the token's own attention row into ``n_buckets`` sums:

    * ``offset``: by key position relative to the token, offsets
      ``-(n_buckets // 2)`` up to ``n_buckets - 1 - n_buckets // 2``, with
      everything farther away folded into the two end buckets;
    * ``rank``: sorted descending and split into contiguous rank groups.

    Either way the buckets of a row sum to the row's attention mass.
    """
    if pooling not in POOLINGS:
        raise ValueError(f"pooling must be one of {POOLINGS}, got {pooling!r}")
    if n_buckets < 1:
        raise ValueError("n_buckets must be >= 1")
    w = scores.captured if isinstance(scores, AttentionScores) else np.asarray(scores)
    avg = w.mean(axis=0)
    n_rows, n_keys = avg.shape
    pos = np.asarray(source_positions, dtype=np.int64)
    received = avg[:, pos].mean(axis=0) * n_rows
    if pooling == "offset":
        lo = -(n_buckets // 2)
        offsets = np.arange(n_keys)[None, :] - pos[:, None]
        bucket = np.clip(offsets, lo, lo + n_buckets - 1) - lo
        given = np.zeros((len(pos), n_buckets))
        np.add.at(given, (np.repeat(np.arange(len(pos)), n_keys), bucket.ravel()), avg[pos].ravel())
    else:
        rows = -np.sort(-avg[pos], axis=1)
        edges = (np.arange(n_buckets + 1) * n_keys) // n_buckets
        csum = np.concatenate([np.zeros((len(pos), 1)), np.cumsum(rows, axis=1)], axis=1)
        given = csum[:, edges[1:]] - csum[:, edges[:-1]]
    return np.concatenate([received[:, None], given], axis=1)


MaskPolicy = Callable[[np.ndarray, AttentionScores], np.ndarray]


def capture_source_state(model: Transformer, src: TokenSequence, n_buckets: int = 7,
                         pooling: str = "offset") -> tuple[np.ndarray, AttentionScores]:
    with nx.no_grad():
        _, scores = model.forward(src, static_mask(src.segment))
    return state_vector(scores, src.source_content(), n_buckets, pooling), scores


def decode_ids(model: Transformer, src: TokenSequence, max_tgt: int,
               masked_positions: np.ndarray | None = None) -> list[int]:
    """Greedy argmax decoding after SEP; ties resolve to the lowest token id."""
    ids = list(src.ids)
    n_src = len(ids)
    out: list[int] = []
    limit = min(max_tgt, model.config.max_seq_len - n_src)
    with nx.no_grad():
        for _ in range(max(0, limit)):
            seg = np.array([SOURCE] * n_src + [TARGET] * len(out), dtype=np.int64)
            seq = TokenSequence(np.array(ids, dtype=np.int64), seg)
            mask = static_mask(seg)
            dynamic = overlay(mask, masked_positions) if masked_positions is not None and len(masked_positions) else None
            logits, _ = model.forward(seq, mask, dynamic=dynamic)
            tok = int(np.argmax(logits.data[-1]))
            if tok == EOS:
                break
            out.append(tok)
            ids.append(tok)
    return out


def greedy_decode(source: str | Sequence[str], vocab: Vocab, model: Transformer,
                  mask_policy: MaskPolicy | None = None, max_tgt: int = 16,
                  max_src: int | None = None, n_buckets: int = 7, pooling: str = "offset") -> str:
    """Summarize ``source``; a ``mask_policy`` picks source tokens to hide once, up front."""
    if max_src is None:
        max_src = model.config.max_seq_len - 2
    src = encode_source(source, vocab, max_src)
    masked = None
    if mask_policy is not None:
        state, scores = capture_source_state(model, src, n_buckets, pooling)
        actions = guard_actions(mask_policy(state, scores), state[:, 0] if len(state) else None)
        masked = src.source_content()[actions == 0]
    return " ".join(vocab.decode(decode_ids(model, src, max_tgt, masked)))
