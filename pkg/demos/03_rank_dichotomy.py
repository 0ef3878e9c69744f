#!/usr/bin/env python3
"""Where the NTK loses rank: parameter count versus constraint count.

The stacked Jacobian has nM columns living in R^P, so P < nM forces a
singular Gram matrix no matter the seed.  Just above the boundary the
smallest eigenvalue turns positive, with one caveat this demo makes
visible: positively homogeneous activations (the leaky-relu family) give
every hidden unit a scaling symmetry, so the attainable rank is capped by
P minus the hidden-unit count, not by P alone.
"""

import numpy as np

from ntkflow import (builtin, build_network, dense_chain, gen_synthetic,
                     init_params, min_eigenvalue, ntk_gram)

act = builtin("leaky_relu", [0.01])
n, M = 20, 3
print(f"dataset: n = {n} examples, M = {M} outputs -> nM = {n * M} constraints\n")

cases = [
    ("under", [5, 3, 3], True),
    ("under", [10, 4, 3], True),
    ("over (wide)", [7, 8, 3], False),
    ("over (wider)", [9, 9, 3], True),
]
print(f"{'regime':<14}{'widths':<16}{'P':>5} {'P-hidden':>9}   min / median lambda_min over 40 seeds")
for regime, widths, bias in cases:
    net = build_network(dense_chain(widths, bias=bias), act)
    hidden = sum(widths[1:-1])
    lams = []
    for seed in range(40):
        data = gen_synthetic(n, widths[0], M, seed=3000 + seed)
        lams.append(min_eigenvalue(ntk_gram(net, init_params(net, seed), data)))
    lams = np.array(lams)
    print(f"{regime:<14}{str(widths):<16}{net.param_count:>5} {net.param_count - hidden:>9}"
          f"   {lams.min():>11.3e} / {np.median(lams):.3e}")

print("\nbelow nM the spectrum bottoms out at numerical zero; above it (with")
print("enough symmetry-adjusted parameters) the minimum eigenvalue is")
print("strictly positive for every seed, which is what the decay rate feeds on")
