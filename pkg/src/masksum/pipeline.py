"""Training phases, evaluation protocol and gradient checks."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import numerics as nx
from .agent import (MASK, ActorCritic, AgentConfig, BaselineCache, Trajectory, a2c_loss, advantage,
                    agent_update)
from .corpus import Example, token_classes
from .rouge import DEFAULT_WEIGHTS, CorpusScore, check_weights, corpus_eval, reward, score
from .textrank import EmbeddingTable, extract_summary
from .tokenizer import Vocab, build_vocab, encode_pair, encode_source, tokenize
from .transformer import (POOLINGS, ModelConfig, Transformer, capture_source_state, decode_ids, guard_actions,
                          overlay, overlay_from_actions, static_mask, supervised_loss)

RL_LOG_FIELDS = ("episode", "example_id", "T", "reward", "mean_advantage",
                 "L_actor", "L_critic", "L_entropy", "masked_fraction")


@dataclass
class RunConfig:
    seed: int = 0
    # model
    num_layers: int = 2
    num_heads: int = 2
    d_model: int = 64
    d_ff: int = 128
    max_seq_len: int = 64
    dropout: float = 0.1
    capture_layer: int = -1
    apply_layers: str = "all"
    max_src: int = 48
    max_tgt: int = 12
    # vocabulary
    min_count: int = 1
    max_vocab: int = 5000
    # supervised phase
    supervised_epochs: int = 6
    batch_size: int = 16
    grad_accum: int = 4
    lr: float = 1.5e-4
    lr_decay: bool = False
    # reinforcement phase
    rl_episodes: int = 3000
    joint_finetune: bool = True
    rl_model_lr: float = 1.5e-4
    state_buckets: int = 7
    state_pooling: str = "offset"
    agent_hidden: str = "32"
    beta: float = 0.01
    agent_lr: float = 1e-3
    baseline_mode: str = "previous_value"
    reward_weights: str = "0.4,0.3,0.3"
    eval_every: int = 100
    val_limit: int = 0
    # baseline
    textrank_k: int = 3
    damping: float = 0.85
    embeddings: str = ""
    hash_embeddings: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.grad_accum < 1:
            raise ValueError("batch_size and grad_accum must be >= 1")
        if self.state_pooling not in POOLINGS:
            raise ValueError(f"state_pooling must be one of {POOLINGS}")
        check_weights(self.weights)

    @property
    def weights(self) -> tuple[float, float, float]:
        return check_weights(float(x) for x in str(self.reward_weights).split(","))

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, num_layers=self.num_layers, num_heads=self.num_heads,
                           d_model=self.d_model, d_ff=self.d_ff, max_seq_len=self.max_seq_len,
                           dropout_rate=self.dropout,
                           capture_layer=None if self.capture_layer < 0 else self.capture_layer,
                           apply_layers=self.apply_layers)

    def agent_config(self) -> AgentConfig:
        hidden = tuple(int(h) for h in str(self.agent_hidden).split(",") if h)
        return AgentConfig(state_dim=1 + self.state_buckets, hidden=hidden, beta=self.beta,
                           lr=self.agent_lr, baseline_mode=self.baseline_mode)

    # flat key=value file
    def to_text(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in dataclasses.fields(self))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], base: RunConfig | None = None) -> RunConfig:
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        current = dataclasses.asdict(base) if base is not None else {}
        for key, raw in values.items():
            if key not in types:
                raise KeyError(f"unknown config key {key!r}")
            current[key] = _parse(types[key], raw)
        return cls(**current)

    @classmethod
    def load(cls, path, base: RunConfig | None = None) -> RunConfig:
        values = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
        return cls.from_mapping(values, base)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _parse(kind, raw):
    kind = kind if isinstance(kind, str) else kind.__name__
    if isinstance(raw, str):
        raw = raw.strip()
    if kind == "bool":
        if isinstance(raw, bool):
            return raw
        low = str(raw).lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return str(raw)


def desk_config(**overrides) -> RunConfig:
    """Settings that train a from-scratch model on the synthetic corpus in minutes."""
    base = dict(supervised_epochs=60, batch_size=16, grad_accum=1, lr=1e-3, lr_decay=True,
                rl_model_lr=3e-6, beta=0.03)
    base.update(overrides)
    return RunConfig(**base)


@dataclass
class PhaseReport:
    losses: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    evals: list[tuple[int, float]] = field(default_factory=list)
    log_rows: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    wall_clock: float = 0.0
    extra: dict = field(default_factory=dict)


def params_digest(params: Mapping[str, nx.Tensor]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# supervised phase
# ---------------------------------------------------------------------------

def check_vocab(model: Transformer, vocab: Vocab) -> None:
    if model.config.vocab_size != len(vocab):
        raise ValueError(f"vocab/model mismatch: vocab has {len(vocab)} tokens, "
                         f"model expects {model.config.vocab_size}")


def make_vocab(config: RunConfig, train: Sequence[Example]) -> Vocab:
    return build_vocab((f"{e.article} {e.summary}" for e in train), config.min_count, config.max_vocab)


def summarize(model: Transformer, vocab: Vocab, article: str, config: RunConfig,
              agent: ActorCritic | None = None) -> str:
    src = encode_source(article, vocab, config.max_src)
    masked = None
    if agent is not None:
        masked = agent_mask(model, agent, src, config)[0]
    return " ".join(vocab.decode(decode_ids(model, src, config.max_tgt, masked)))


def agent_mask(model: Transformer, agent: ActorCritic, src, config: RunConfig,
               rng: np.random.Generator | None = None):
    """Masked source positions plus the trajectory; greedy when ``rng`` is None."""
    state, _ = capture_source_state(model, src, config.state_buckets, config.state_pooling)
    positions = src.source_content()
    if len(positions) == 0:
        return np.zeros(0, dtype=np.int64), None
    traj = agent.act(state, rng, greedy=rng is None)
    actions = guard_actions(traj.actions, state[:, 0])
    return positions[actions == MASK], traj


def rouge1_f1(model: Transformer, vocab: Vocab, examples: Sequence[Example], config: RunConfig) -> float:
    return float(np.mean([score(summarize(model, vocab, e.article, config), e.summary).rouge1.f1
                          for e in examples]))


def mean_reward(model: Transformer, vocab: Vocab, examples: Sequence[Example], config: RunConfig,
                agent: ActorCritic | None = None) -> float:
    return float(np.mean([reward(summarize(model, vocab, e.article, config, agent), e.summary, config.weights)
                          for e in examples]))


def accumulate_batch(model: Transformer, seqs, config: RunConfig, rng: np.random.Generator,
                     training: bool = True) -> float:
    """Backpropagate one effective batch as ``grad_accum`` micro-batches.

    Each micro-batch loss is its mean example loss scaled by its share of
    the effective batch, so the summed gradient is the effective-batch mean
    regardless of how it is split.
    """
    total = 0.0
    n = len(seqs)
    for start in range(0, n, config.batch_size):
        micro = seqs[start:start + config.batch_size]
        losses = [supervised_loss(model, s, training=training, rng=rng) for s in micro]
        loss = losses[0]
        for extra in losses[1:]:
            loss = loss + extra
        loss = loss * (1.0 / len(micro)) * (len(micro) / n)
        nx.backward(loss)
        total += loss.item()
    return total


def train_supervised(config: RunConfig, train: Sequence[Example], val: Sequence[Example],
                     vocab: Vocab | None = None, out_dir=None) -> tuple[Transformer, Vocab, PhaseReport]:
    """Teacher-forced fine-tuning under the static mask; keeps the best-val-ROUGE-1 weights."""
    start = time.perf_counter()
    if not train:
        raise ValueError("training split is empty")
    vocab = vocab or make_vocab(config, train)
    rng = np.random.default_rng(config.seed)
    model = Transformer(config.model_config(len(vocab)), rng)
    seqs = [encode_pair(e.article, e.summary, vocab, config.max_src, config.max_tgt) for e in train]
    for s in seqs:
        if s.ids.max() >= len(vocab):
            raise ValueError("corpus/vocab mismatch: token id outside vocabulary")
    opt = nx.Adam(model.params, lr=config.lr)
    report = PhaseReport()
    effective = config.batch_size * config.grad_accum
    val_eval = list(val[:config.val_limit] if config.val_limit else val)
    best, best_state = -1.0, model.snapshot()
    total_steps = config.supervised_epochs * -(-len(seqs) // effective)
    for epoch in range(config.supervised_epochs):
        order = rng.permutation(len(seqs))
        for b in range(0, len(order), effective):
            if config.lr_decay:
                # linear decay to zero over the whole phase
                opt.lr = config.lr * (1.0 - len(report.losses) / total_steps)
            opt.zero_grad()
            loss = accumulate_batch(model, [seqs[i] for i in order[b:b + effective]], config, rng)
            if not np.isfinite(loss):
                raise nx.NumericError(f"non-finite training loss at epoch {epoch}")
            opt.step()
            report.losses.append(loss)
        r1 = rouge1_f1(model, vocab, val_eval, config) if val_eval else 0.0
        report.evals.append((epoch, r1))
        report.log_rows.append({"epoch": epoch, "steps": len(report.losses),
                                "train_loss": report.losses[-1] if report.losses else float("nan"),
                                "val_rouge1_f1": r1})
        if r1 >= best:
            best, best_state, report.best_epoch = r1, model.snapshot(), epoch
    nx.assign_parameters(model.params, best_state)
    report.wall_clock = time.perf_counter() - start
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        vocab.save(out / "vocab.txt")
        model.save(out / "model.ckpt", {"phase": "supervised", "best_epoch": report.best_epoch})
        config.save(out / "config.txt")
        _write_csv(out / "supervised_log.csv", ("epoch", "steps", "train_loss", "val_rouge1_f1"),
                   report.log_rows)
        _write_csv(out / "supervised_steps.csv", ("step", "loss"),
                   [{"step": i, "loss": v} for i, v in enumerate(report.losses)])
    return model, vocab, report


def _write_csv(path, header: Sequence[str], rows: Sequence[Mapping]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(row[h]) for h in header])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _cell(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


# ---------------------------------------------------------------------------
# reinforcement phase
# ---------------------------------------------------------------------------

def train_rl(config: RunConfig, train: Sequence[Example], val: Sequence[Example], model: Transformer,
             vocab: Vocab, agent: ActorCritic | None = None, out_dir=None
             ) -> tuple[Transformer, ActorCritic, PhaseReport]:
    """One document per episode: sample a mask, decode, score, update.

    The agent always takes an A2C step. With ``joint_finetune`` the model
    also takes one teacher-forced step under the sampled mask.
    """
    start = time.perf_counter()
    if not train:
        raise ValueError("training split is empty")
    check_vocab(model, vocab)
    rng = np.random.default_rng(config.seed + 1)
    agent = agent or ActorCritic(config.agent_config(), rng)
    agent_opt = nx.Adam(agent.params, lr=config.agent_lr)
    model_opt = nx.Adam(model.params, lr=config.rl_model_lr) if config.joint_finetune else None
    cache = BaselineCache()
    weights = config.weights
    val_eval = list(val[:config.val_limit] if config.val_limit else val)
    report = PhaseReport()
    if val_eval:
        report.extra["supervised_val_reward"] = mean_reward(model, vocab, val_eval, config)
    order = rng.permutation(len(train))
    for episode in range(config.rl_episodes):
        if episode and episode % len(train) == 0:
            order = rng.permutation(len(train))
        ex = train[order[episode % len(train)]]
        src = encode_source(ex.article, vocab, config.max_src)
        masked, traj = agent_mask(model, agent, src, config, rng)
        summary = vocab.decode(decode_ids(model, src, config.max_tgt, masked))
        r = reward(summary, ex.summary, weights)
        if not np.isfinite(r):
            raise nx.NumericError(f"non-finite reward at episode {episode}")
        row = {"episode": episode, "example_id": ex.id, "T": 0, "reward": r, "mean_advantage": 0.0,
               "L_actor": 0.0, "L_critic": 0.0, "L_entropy": 0.0, "masked_fraction": 0.0}
        if traj is not None:
            current = traj.values.data
            base = cache.get(ex.id, current) if config.baseline_mode == "previous_value" else None
            adv = advantage(traj, r, base)
            losses = a2c_loss(traj, agent.config.beta, agent.config.value_coef)
            agent_update(losses, agent_opt)
            cache.update(ex.id, current)
            _, la, lc, le = losses.values()
            row.update(T=traj.length, mean_advantage=float(adv.mean()), L_actor=la, L_critic=lc,
                       L_entropy=le, masked_fraction=float(len(masked)) / traj.length)
        if model_opt is not None:
            seq = encode_pair(ex.article, ex.summary, vocab, config.max_src, config.max_tgt)
            mask = static_mask(seq.segment)
            dyn = overlay(mask, masked) if masked is not None and len(masked) else None
            model_opt.zero_grad()
            nx.backward(supervised_loss(model, seq, mask, dynamic=dyn, training=True, rng=rng))
            model_opt.step()
        report.rewards.append(r)
        report.log_rows.append(row)
        if val_eval and config.eval_every and (episode + 1) % config.eval_every == 0:
            report.evals.append((episode + 1, mean_reward(model, vocab, val_eval, config, agent)))
    report.wall_clock = time.perf_counter() - start
    if val_eval:
        report.extra["final_val_reward"] = report.evals[-1][1] if report.evals else \
            mean_reward(model, vocab, val_eval, config, agent)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        vocab.save(out / "vocab.txt")
        model.save(out / "model_rl.ckpt", {"phase": "rl"})
        agent.save(out / "agent.ckpt")
        config.save(out / "config.txt")
        _write_csv(out / "rl_log.csv", RL_LOG_FIELDS, report.log_rows)
        _write_csv(out / "rl_val.csv", ("episode", "val_reward"),
                   [{"episode": e, "val_reward": v} for e, v in report.evals])
    return model, agent, report


def mask_rates(model: Transformer, agent: ActorCritic, vocab: Vocab, examples: Sequence[Example],
               config: RunConfig, greedy: bool = False) -> tuple[float, float]:
    """Policy mask rate over (noise, salient) synthetic tokens.

    By default this is the mean mask probability, i.e. the expected rate of
    the stochastic policy. With ``greedy`` it is the fraction of tokens the
    deterministic policy used at evaluation time actually masks.
    """
    noise_p, salient_p = [], []
    for ex in examples:
        toks = tokenize(ex.article)[:config.max_src]
        src = encode_source(toks, vocab, config.max_src)
        state, _ = capture_source_state(model, src, config.state_buckets, config.state_pooling)
        with nx.no_grad():
            step = agent.act(state, greedy=True)
        p_mask = (step.actions == MASK).astype(float) if greedy else step.probs.data[:, MASK]
        salient, noise = token_classes(toks)
        noise_p.extend(p_mask[noise])
        salient_p.extend(p_mask[salient])
    return float(np.mean(noise_p)), float(np.mean(salient_p))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

SYSTEMS = ("oracle", "baseline", "model", "model+agent")


@dataclass
class EvalReport:
    results: dict[str, CorpusScore]
    summaries: dict[str, list[str]]

    def table(self) -> str:
        lines = ["system rouge1 rouge2 rougeL"]
        for name, res in self.results.items():
            s = res.scores
            lines.append(f"{name} {s.rouge1.f1:.4f} {s.rouge2.f1:.4f} {s.rougeL.f1:.4f}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(self.table(), encoding="utf-8")
        for name, res in self.results.items():
            res.write(out / f"results_{name.replace('+', '_')}.txt")


def evaluate(test: Sequence[Example], config: RunConfig, model: Transformer | None = None,
             vocab: Vocab | None = None, agent: ActorCritic | None = None,
             emb: EmbeddingTable | None = None, out_dir=None,
             systems: Sequence[str] | None = None) -> EvalReport:
    """Score every requested system on ``test`` with corpus-level ROUGE.

    ``oracle`` echoes the reference, ``baseline`` is TextRank extraction,
    ``model`` greedy-decodes under the static mask and ``model+agent`` adds
    the agent's most likely mask.
    """
    if not test:
        raise ValueError("evaluation split is empty")
    weights = config.weights
    if model is not None:
        check_vocab(model, vocab)
    if systems is None:
        systems = ["oracle", "baseline"]
        if model is not None:
            systems.append("model")
            if agent is not None:
                systems.append("model+agent")
    summaries: dict[str, list[str]] = {}
    for name in systems:
        if name == "oracle":
            summaries[name] = [e.summary for e in test]
        elif name == "baseline":
            table = emb or _embeddings(config)
            summaries[name] = [extract_summary(e.article, config.textrank_k, table, config.damping)
                               for e in test]
        elif name == "model":
            summaries[name] = [summarize(model, vocab, e.article, config) for e in test]
        elif name == "model+agent":
            summaries[name] = [summarize(model, vocab, e.article, config, agent) for e in test]
        else:
            raise ValueError(f"unknown system {name!r}")
    results = {name: corpus_eval(zip(summaries[name], (e.summary for e in test)), weights)
               for name in systems}
    report = EvalReport(results, summaries)
    if out_dir is not None:
        report.write(out_dir)
    return report


def _embeddings(config: RunConfig) -> EmbeddingTable:
    if config.embeddings:
        return EmbeddingTable.load(config.embeddings)
    return EmbeddingTable.hash_embeddings()


# ---------------------------------------------------------------------------
# gradient checks
# ---------------------------------------------------------------------------

@dataclass
class GradcheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.errors.values())

    @property
    def failures(self) -> list[str]:
        return [k for k, e in self.errors.items() if e > self.tolerance]

    def lines(self) -> list[str]:
        out = [f"{k} {e:.3e} {'ok' if e <= self.tolerance else 'FAIL'}" for k, e in self.errors.items()]
        out.append(f"result {'pass' if self.passed else 'fail'} tolerance {self.tolerance:g}")
        return out


def check_block(prefix: str, params: Mapping[str, nx.Tensor], loss_fn: Callable[[], nx.Tensor],
                h: float = 1e-5) -> dict[str, float]:
    """Relative error between backprop and central differences for each parameter."""
    for p in params.values():
        p.grad = None
    if not params:
        return {}
    nx.backward(loss_fn())

    def value() -> float:
        with nx.no_grad():
            return loss_fn().item()

    errors = {}
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = nx.numerical_gradient(value, p.data, h)
        errors[f"{prefix}{name}"] = nx.relative_error(analytic, numeric)
    return errors


def gradcheck(config: RunConfig | None = None, tolerance: float = 1e-4, seed: int | None = None,
              blocks: Sequence[tuple[str, Mapping[str, nx.Tensor], Callable[[], nx.Tensor]]] | None = None
              ) -> GradcheckReport:
    """Finite-difference check of the supervised loss and the A2C loss on tiny networks."""
    config = config or RunConfig()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    if blocks is None:
        blocks = default_gradcheck_blocks(config, rng)
    errors: dict[str, float] = {}
    for prefix, params, fn in blocks:
        errors.update(check_block(prefix, params, fn))
    return GradcheckReport(errors, tolerance)


def default_gradcheck_blocks(config: RunConfig, rng: np.random.Generator):
    vocab = build_vocab(["the cat sat on the mat while a dog ran by"])
    mcfg = ModelConfig(vocab_size=len(vocab), num_layers=2, num_heads=2, d_model=16, d_ff=32,
                       max_seq_len=16, dropout_rate=0.0)
    model = Transformer(mcfg, rng)
    for p in model.params.values():
        p.data += rng.normal(0.0, 0.05, size=p.shape)
    seq = encode_pair("the cat sat on the mat", "a dog ran", vocab, 8, 4)
    src_positions = seq.source_content()
    acts = np.ones(len(src_positions), dtype=np.int64)
    acts[1] = 0
    mask = static_mask(seq.segment)
    dyn = overlay_from_actions(mask, src_positions, acts)

    acfg = AgentConfig(state_dim=1 + config.state_buckets, hidden=(8,), beta=0.05)
    agent = ActorCritic(acfg, rng)
    for p in agent.params.values():
        p.data += rng.normal(0.0, 0.3, size=p.shape)
    states = rng.random((5, acfg.state_dim))
    actions = rng.integers(0, 2, size=5)
    prev_values = rng.normal(0.0, 0.1, size=5)

    def agent_loss() -> nx.Tensor:
        logits, values = agent.heads(states)
        log_policy = nx.log_softmax_lastdim(logits)
        probs = nx.softmax_lastdim(logits)
        traj = Trajectory(states, actions, probs, log_policy[np.arange(5), actions], log_policy, values)
        advantage(traj, 0.7, prev_values)
        return a2c_loss(traj, acfg.beta).total

    return [
        ("model.", model.params, lambda: supervised_loss(model, seq, mask, dynamic=dyn)),
        ("agent.", agent.params, agent_loss),
    ]
