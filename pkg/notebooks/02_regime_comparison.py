# %% [markdown]
# # Input-feeding regimes on a small MG task
#
# Free running, teacher forcing, scheduled sampling and policy-selected
# inputs, all from the same initial weights. This is a scaled-down version
# of the `pgs2s compare` run (smaller series and network so it finishes in
# about a minute).

# %%
import numpy as np

from pgs2s import experiment as X

spec = X.ExperimentSpec.from_flat({
    "data.n": 1200, "task.L": 24, "task.H": 8, "model.hidden": 16,
    "train.epochs": 10, "pg.max_rounds": 6,
    "run.regimes": "FR,TF,SS,PG,TEACH_MSVR", "run.seeds": "0,1",
    "pool.budget": 4,
})
result = X.run_compare(spec)
print(f"pool validation RMSE: {result.pool_val_rmse}")
print(result.table())

# %% [markdown]
# Per-step RMSE shows where exposure bias bites: the error of regimes that
# never see their own predictions during training grows faster with the
# horizon.

# %%
import matplotlib.pyplot as plt

fig, ax = plt.subplots(figsize=(6, 3.5))
for regime in spec.regimes:
    steps = np.mean([c.report.per_step_rmse for c in result.cells if c.regime == regime and c.ok], axis=0)
    ax.plot(np.arange(1, len(steps) + 1), steps, marker="o", label=X.display_name(regime))
ax.set_xlabel("horizon step")
ax.set_ylabel("RMSE")
ax.legend()
fig.tight_layout()
plt.show()
