"""
Training the summarizer and the mask policy
===========================================

The synthetic corpus hides two template sentences among sentences of
made-up words. The summary restates the template sentences with verb
synonyms. First the transformer learns to summarize. Then the agent learns
which source tokens to hide from attention.

Pass ``--full`` for the desk-scale run (about five minutes). The default is a
shorter run that still shows every stage.
"""

import sys
import time

from masksum.corpus import SyntheticSpec, generate_synthetic
from masksum.pipeline import desk_config, evaluate, mask_rates, rouge1_f1, train_rl, train_supervised

full = "--full" in sys.argv
config = desk_config() if full else desk_config(supervised_epochs=20, rl_episodes=600, eval_every=200)
train, val, test = generate_synthetic(SyntheticSpec(num_examples=500))
print("article:", train[0].article)
print("summary:", train[0].summary)

# %%
t0 = time.perf_counter()
model, vocab, sup = train_supervised(config, train, val)
print(f"supervised: {len(sup.losses)} steps, best epoch {sup.best_epoch}, "
      f"test ROUGE-1 F1 {rouge1_f1(model, vocab, test, config):.3f} ({time.perf_counter() - t0:.0f}s)")

# %%
t0 = time.perf_counter()
model, agent, rl = train_rl(config, train, val, model, vocab)
noise, salient = mask_rates(model, agent, vocab, val, config)
print(f"rl: val reward {rl.extra['supervised_val_reward']:.4f} -> {rl.extra['final_val_reward']:.4f}, "
      f"mask rate noise {noise:.3f} vs salient {salient:.3f} ({time.perf_counter() - t0:.0f}s)")

# %%
print(evaluate(test, config, model, vocab, agent).table())
