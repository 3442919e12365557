"""
The mask policy on a toy problem
================================

Each episode is a list of tokens. Attending a salient token or masking a
noise token pays off. The only reward is the one at the end of the
episode. The first state feature says which kind of token it is, plus
some noise.
"""

import numpy as np

from masksum.agent import AgentConfig, run_bandit

# %%
for seed in range(3):
    run = run_bandit(2000, seed=seed)
    curve = [round(float(np.mean(run.rewards[i:i + 250])), 3) for i in range(0, 2000, 250)]
    print(f"seed {seed}: mean reward per 250 episodes {curve}")

# %%
# A larger entropy bonus keeps the policy closer to a coin flip, so it
# converges to a lower reward.
for beta in (0.0, 0.01, 0.3):
    cfg = AgentConfig(beta=beta, baseline_mode="current_value")
    print(f"beta {beta}: last-100 mean {run_bandit(2000, seed=0, config=cfg).tail_mean():.3f}")
