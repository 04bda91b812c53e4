"""
Ensembles of factorization orders
=================================

One parameter set serves several orders. The joint distribution over
(order, string) is uniform over orders, so marginal string probabilities
average the per-order ones.
"""
# %%
import math

import numpy as np

from remaade.numerics import seeded_rng
from remaade.orders import build_order_set, joint_log_prob, sample_joint
from remaade.policy import init_policy
from remaade.space import build_space, enumerate_strings

space = build_space([2, 2, 2])
rng = seeded_rng(0)
policy = init_policy(space, d=8, rng=rng)
orders = build_order_set(space.n, 3, rng)
print("orders:", orders.perms)

# %%
for s in list(enumerate_strings(space))[:4]:
    per_order = [math.exp(policy.log_prob(s, np.array(z))) for z in orders.perms]
    marginal = sum(math.exp(joint_log_prob(policy, orders, z, s)) for z in orders.perms)
    print(s, "per order:", np.round(per_order, 4), "marginal:", round(marginal, 4))

# %%
print("a joint draw:", sample_joint(policy, orders, rng))
