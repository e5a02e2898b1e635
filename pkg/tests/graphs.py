"""Seeded random pose graphs, built twice: as a package FactorGraph and as
the dense oracle problem."""
import numpy as np

from oracles import DenseProblem, dense_lm, mat_of, xyt
from poseslam2d.factor_graph import BetweenFactor, FactorGraph, LMConfig, NoiseModel, PriorFactor, Values, optimize
from poseslam2d.geometry import Pose2, between, exp


def rand_cov(rng):
    s = np.diag(rng.uniform(0.02, 0.3, 3))
    a = rng.normal(size=(3, 3)) * 0.1
    return s @ s + 0.01 * a @ a.T


def random_graph(rng, consistent, n=None, perturb=0.1):
    """Random anchored graph plus the same problem in dense-oracle form.

    Consistent graphs take measurements straight from the true poses;
    otherwise each measurement carries noise. Initial values are the truth
    perturbed by ``perturb``.
    """
    n = n or int(rng.integers(2, 7))
    truth = [Pose2(*rng.uniform(-3, 3, 2), rng.uniform(-3, 3)) for _ in range(n)]
    noisy = (lambda p: p) if consistent else (lambda p: p.compose(exp(rng.normal(0, 0.05, 3))))
    g, dense = FactorGraph(), DenseProblem(n)
    nm, z = NoiseModel(rand_cov(rng)), noisy(truth[0])
    g.add(PriorFactor(0, z, nm))
    dense.priors.append((0, mat_of(z), nm.sqrt_info))
    edges = [(i, i + 1) for i in range(n - 1)]
    for _ in range(int(rng.integers(0, n + 1))):
        i, j = rng.choice(n, 2, replace=False)
        edges.append((int(i), int(j)))
    for i, j in edges:
        nm, z = NoiseModel(rand_cov(rng)), noisy(between(truth[i], truth[j]))
        g.add(BetweenFactor(i, j, z, nm))
        dense.betweens.append((i, j, mat_of(z), nm.sqrt_info))
    init = Values({k: truth[k].compose(exp(rng.normal(0, perturb, 3))) if perturb else truth[k]
                   for k in range(n)})
    return g, dense, init, truth


def pose_diff(a, b):
    d = np.abs(a - b)
    d[:, 2] = np.abs((a[:, 2] - b[:, 2] + np.pi) % (2 * np.pi) - np.pi)
    return d.max()


def solve_both(g, dense, init, **kw):
    keys = list(init)
    v, rep = optimize(g, init, LMConfig(**kw))
    X, err = dense_lm(dense, [mat_of(init[k]) for k in keys], **kw)
    return v.as_array(keys), np.array([xyt(m) for m in X]), rep, err


def chained_values(graph, n):
    """Initial values composed along the prior and the odometry chain, the
    way a front end would initialize them."""
    factors = list(graph)
    v = Values({0: factors[0].z})
    for f in factors[1:n]:
        v[f.var_b] = v[f.var_a].compose(f.z)
    return v
