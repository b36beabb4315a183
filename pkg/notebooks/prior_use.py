# How often the prior on the largest model distance is the active term.

from lipschitz_rmax.config import load_config
from lipschitz_rmax.lifelong import prior_use_curve, run_lifelong

cfg = load_config("docs/configs/heatmap_prior_use.yaml")
record = run_lifelong(cfg)

for i, label in enumerate(record.labels):
    per_repeat = [
        [u for log in record.logs[r][i] if log is not None for u in log.prior_use]
        for r in record.ok_repeats
    ]
    mean, half, n = prior_use_curve(per_repeat)
    if len(mean):
        print(f"{label:>14}: first {mean[0]:.2f}, last {mean[-1]:.2f}, updates {len(mean)}")
