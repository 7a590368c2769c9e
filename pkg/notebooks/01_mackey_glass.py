# %% [markdown]
# # Mackey-Glass benchmark series
#
# Generate the chaotic delay series used throughout, check that the RK4
# integration has converged, and look at the attractor.

# %%
import matplotlib.pyplot as plt
import numpy as np

from pgs2s.data import mackey_glass

series = mackey_glass(2000, dt=0.1)
y = series.values
print(len(y), y[:5])

# %% [markdown]
# Step-size study: halving dt should barely move the sampled values.

# %%
for dt in (0.2, 0.1, 0.05):
    half = mackey_glass(2000, dt=dt / 2).values
    print(f"dt={dt:<5} max |x_dt - x_dt/2| = {np.max(np.abs(mackey_glass(2000, dt=dt).values - half)):.2e}")

# %%
fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 3.5))
ax1.plot(y[:600])
ax1.set_xlabel("t")
ax1.set_title("x(t)")
ax2.plot(y[17:], y[:-17], lw=0.4)
ax2.set_xlabel("x(t)")
ax2.set_ylabel("x(t-17)")
ax2.set_title("delay embedding")
fig.tight_layout()
plt.show()

# %% [markdown]
# With the decay sign flipped to +1 the state grows without bound and the
# generator raises a divergence error instead of returning garbage.

# %%
from pgs2s.errors import DivergenceError

try:
    mackey_glass(20000, decay_sign=1)
except DivergenceError as exc:
    print("diverged:", exc)
