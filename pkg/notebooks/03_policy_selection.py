# %% [markdown]
# # What does the agent pick?
#
# A pool with one near-perfect model and one noisy model. The policy should
# learn to feed the decoder from the good model; the selection
# percentages are logged every round.

# %%
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path.cwd().parent / "tests"))
from oracles import dominance_task  # noqa: E402

from pgs2s import trainer as T  # noqa: E402
from pgs2s.experiment import plot_selection  # noqa: E402

task = dominance_task(seed=0)
cfg = T.TrainConfig(L=12, H=6, n_enc=8, n_dec=8, n_policy=8, max_rounds=6, policy_epochs=10,
                    rnn_epochs=1, patience=0)
res = T.train_pg(cfg, task)
for log in res.logs:
    print(log.round, {k: round(v, 4) for k, v in log.pool_rmse_train.items()},
          [round(p, 1) for p in log.selection_train[0]])

# %%
_, dec = T.evaluate_split(res.seq, cfg, task, "test", res.policy)
print("share of steps feeding GOOD:", np.mean(dec.actions == 0))

# %%
paths = plot_selection([r.to_dict() for r in res.logs], "selection_demo")
print(paths)

# %% [markdown]
# The same run with the argmax epsilon-greedy collection (the procedure as
# written, `sample_actions=False`) can lock onto whichever model the
# untrained policy happens to prefer, since every reward is positive and
# no baseline is subtracted.

# %%
for seed in range(5):
    c = cfg.with_(seed=seed, sample_actions=False)
    t = dominance_task(seed)
    r = T.train_pg(c, t)
    _, d = T.evaluate_split(r.seq, c, t, "test", r.policy)
    print(seed, "argmax collection share GOOD:", round(float(np.mean(d.actions == 0)), 2))
