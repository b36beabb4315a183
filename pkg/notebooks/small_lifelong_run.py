# A short lifelong run on the tight family: RMax against LRMax.

import numpy as np

from lipschitz_rmax import AgentConfig, DistanceConfig, LifelongConfig, TaskDistribution
from lipschitz_rmax import diagnostics, run_lifelong, summarize

cfg = LifelongConfig(
    distribution=TaskDistribution("tight", support_size=5),
    n_tasks=4,
    n_episodes=200,
    episode_len=10,
    n_repeats=2,
    agents=(
        AgentConfig(),
        AgentConfig(variant="lrmax", distance=DistanceConfig(d_prior=0.1)),
    ),
)
record = run_lifelong(cfg)
record.returns.shape  # (repeats, agents, tasks, episodes)

summary = summarize(record, window=20)
for label, (mean, half) in summary["per_task"].items():
    print(label, np.round(mean, 3), "+/-", np.round(half, 3))

# fraction of RMax's exploration left, and how tight the transferred bound was
for label, row in diagnostics(record).items():
    print(label, {k: row[k] for k in ("rho_lip", "rho_speedup", "rho_return", "prior_use")})

# the task order is shared by both agents of a repeat
print(record.task_ids)
