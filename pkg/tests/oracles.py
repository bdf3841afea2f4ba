"""Independent reference computations used by the tests."""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np


def enumerate_trees(q_probs, off_pmf, depth, root_q_probs=None, root_off_pmf=None):
    """All marked trees to ``depth`` as (prob, node) with node = (q, N, children).

    Nodes at the last level carry N but no children.
    """
    def level(l, qp, op):
        out = []
        for q, pq in qp.items():
            for n, pn in enumerate(op):
                if pn == 0:
                    continue
                if l == depth or n == 0:
                    out.append((pq * pn, (q, n, ())))
                    continue
                sub = level(l + 1, q_probs, off_pmf)
                for combo in itertools.product(sub, repeat=n):
                    p = pq * pn
                    for pc, _ in combo:
                        p *= pc
                    out.append((p, (q, n, tuple(node for _, node in combo))))
        return out
    return level(0, root_q_probs or q_probs, root_off_pmf or off_pmf)


def finite_horizon_bruteforce(trees, c, d, law_of_q, steps):
    """Mean and variance of the root opinion after ``steps`` updates from zero.

    ``law_of_q(q)`` returns the (mean, variance) of the media signal.  Each
    tree's opinion is a linear form in independent signals, propagated
    symbolically through the recursion.
    """
    b = 1.0 - c - d
    m1 = m2 = 0.0
    for p, root in trees:
        nodes = []

        def flatten(node):
            idx = len(nodes)
            nodes.append(node)
            kids = [flatten(ch) for ch in node[2]]
            return idx, kids
        tree = flatten(root)
        n_nodes = len(nodes)
        # coef[v] : array (n_nodes, steps) of coefficients of W_u^(t) in R_v at the current time
        def opinion(entry, t):
            """Coefficient array for R_v^(t)."""
            v, kids = entry
            out = np.zeros((n_nodes, steps))
            if t == 0:
                return out
            prev = opinion(entry, t - 1)
            out += b * prev
            out[v, t - 1] += 1.0
            q, n, _ = nodes[v]
            for ch in kids:
                out += (c / n) * opinion(ch, t - 1)
            return out
        coef = opinion(tree, steps)
        mean_w = np.zeros(n_nodes)
        var_w = np.zeros(n_nodes)
        for v, (q, n, _) in enumerate(nodes):
            mz, vz = law_of_q(q)
            sc = c if n > 0 else 0.0
            mean_w[v] = q * (c - sc) + d * mz
            var_w[v] = d * d * vz
        mu = float(coef.sum(axis=1) @ mean_w)
        var = float((coef ** 2).sum(axis=1) @ var_w)
        m1 += p * mu
        m2 += p * (var + mu * mu)
    return m1, m2 - m1 * m1
