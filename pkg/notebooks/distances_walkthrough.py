# Model distances between two small tasks, from exact to computable.

import numpy as np

from lipschitz_rmax import DistanceConfig, KnownSet, LearnedTask, TabularMdp
from lipschitz_rmax import dhat_dissimilarity, dhat_model, exact_dissimilarity, value_iteration
from lipschitz_rmax.metrics import dhat_model_table
from lipschitz_rmax.dp import solve_optimistic_q

rng = np.random.default_rng(0)
S, A, gamma = 4, 2, 0.9

# two random tasks with dense transitions
T1 = rng.dirichlet(np.ones(S), size=(S, A))
T2 = rng.dirichlet(np.ones(S), size=(S, A))
m1 = TabularMdp(rng.uniform(size=(S, A)), T1, gamma)
m2 = TabularMdp(rng.uniform(size=(S, A)), T2, gamma)

q1, q2 = value_iteration(m1, 1e-6), value_iteration(m2, 1e-6)
gap = np.abs(q1 - q2)
d = np.minimum(exact_dissimilarity(m1, m2), exact_dissimilarity(m2, m1))
print("Q gap\n", gap.round(3))
print("exact dissimilarity\n", d.round(3))
print("bound holds:", np.all(gap <= d + 3e-3))

# the agent only sees learned tasks; mark half the pairs of each as known
mask1 = rng.uniform(size=(S, A)) < 0.5
mask2 = rng.uniform(size=(S, A)) < 0.5


def learned(m, mask):
    T = np.where(mask[..., None], m.transition, np.eye(S)[:, None, :])
    R = np.where(mask, m.reward, 1.0)
    model = TabularMdp(R, T, gamma)
    known = KnownSet.from_mask(mask)
    q = solve_optimistic_q(R, T, mask, np.full((S, A), 1 / (1 - gamma)), gamma, 1e-6)
    return LearnedTask(model, known, q)


l1, l2 = learned(m1, mask1), learned(m2, mask2)
cfg = DistanceConfig(epsilon=0.01)
values, cases = dhat_model_table(l1, l2, cfg)
print("model bound per pair\n", values.round(2))
print("case tags\n", cases)
print("one pair:", dhat_model(l1, l2, cfg, 0, 0))

# the computable dissimilarity dominates the exact one
dh = dhat_dissimilarity(l1, l2, cfg)
print("computable dissimilarity\n", dh.round(2))
print("dominates exact:", np.all(dh >= exact_dissimilarity(m1, m2) - 1e-3))

# a prior on the largest model distance clips the local terms
tight = dhat_dissimilarity(l1, l2, DistanceConfig(epsilon=0.01, d_prior=2.0))
print("with prior 2.0, max:", tight.max().round(2), "vs", dh.max().round(2))
