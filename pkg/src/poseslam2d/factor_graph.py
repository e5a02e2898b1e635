"""Pose-graph factors and Levenberg-Marquardt MAP optimization over SE(2).

Every factor contributes a whitened residual ``W log(z^-1 h(X))`` where ``h``
is the identity (prior) or the relative pose (between factor) and
``W^T W = Sigma^-1``. The total error is the sum of squared whitened
residuals; the optimizer minimizes it over right-multiplicative updates
``x_i <- x_i exp(xi_i)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg
from scipy.sparse.csgraph import connected_components

from ._kernels import banded_normal_equations, graph_error
from .errors import IndefiniteSystem, MissingVariable
from .geometry import (
    Pose2,
    adjoint_batch,
    between_batch,
    exp_batch,
    compose_batch,
    log_batch,
    right_jacobian_inverse_batch,
)

log = logging.getLogger(__name__)

PRIOR, BETWEEN = "prior", "between"


class NoiseModel:
    """Gaussian noise with covariance ``cov`` and cached square-root information."""

    def __init__(self, cov):
        cov = np.asarray(cov, dtype=float).reshape(3, 3)
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
            raise ValueError("covariance must be symmetric")
        try:
            lower = np.linalg.cholesky(np.linalg.inv(cov))
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be positive definite") from exc
        self.cov = cov
        self.sqrt_info = lower.T  # upper triangular, positive diagonal

    @classmethod
    def from_sigmas(cls, sigmas) -> NoiseModel:
        s = np.asarray(sigmas, dtype=float).reshape(3)
        if np.any(s <= 0):
            raise ValueError("sigmas must be positive")
        return cls(np.diag(s ** 2))

    @classmethod
    def isotropic(cls, sigma: float) -> NoiseModel:
        return cls.from_sigmas([sigma] * 3)

    def whiten(self, r):
        return self.sqrt_info @ r

    def __repr__(self):
        return f"NoiseModel(diag={np.diag(self.cov).tolist()})"


@dataclass(frozen=True)
class PriorFactor:
    var: int
    z: Pose2
    noise: NoiseModel

    @property
    def keys(self):
        return (self.var,)

    def error(self, values) -> np.ndarray:
        return factor_error(self, values)


@dataclass(frozen=True)
class BetweenFactor:
    var_a: int
    var_b: int
    z: Pose2
    noise: NoiseModel

    def __post_init__(self):
        if self.var_a == self.var_b:
            raise ValueError("between factor must connect two distinct variables")

    @property
    def keys(self):
        return (self.var_a, self.var_b)

    def error(self, values) -> np.ndarray:
        return factor_error(self, values)


class Values(dict):
    """Assignment VarId -> Pose2. Iteration (insertion) order fixes column order."""

    def as_array(self, keys=None) -> np.ndarray:
        keys = list(self) if keys is None else keys
        return np.array([[p.x, p.y, p.theta] for p in (self[k] for k in keys)]).reshape(-1, 3)

    @classmethod
    def from_array(cls, keys, xyt) -> Values:
        return cls((k, Pose2(*row)) for k, row in zip(keys, xyt.tolist()))


class _Buffer:
    """Append-only row storage backed by a growing numpy array."""

    def __init__(self, width, dtype=float):
        self._data = np.zeros((16, *width) if isinstance(width, tuple) else (16, width), dtype=dtype)
        self.n = 0

    def append(self, row):
        if self.n == len(self._data):
            self._data = np.concatenate([self._data, np.zeros_like(self._data)])
        self._data[self.n] = row
        self.n += 1

    @property
    def view(self):
        return self._data[: self.n]


class FactorGraph:
    """Ordered collection of prior and between factors.

    Factor parameters are mirrored into packed arrays as they are added so
    that linearization is vectorized over all factors of a kind.
    """

    def __init__(self, factors=()):
        self.factors = []
        self._pk = _Buffer(1, int)
        self._pz = _Buffer(3)
        self._pw = _Buffer((3, 3))
        self._bk = _Buffer(2, int)
        self._bz = _Buffer(3)
        self._bw = _Buffer((3, 3))
        for f in factors:
            self.add(f)

    def add(self, factor):
        if isinstance(factor, PriorFactor):
            self._pk.append([factor.var])
            self._pz.append(factor.z.as_array())
            self._pw.append(factor.noise.sqrt_info)
        elif isinstance(factor, BetweenFactor):
            self._bk.append([factor.var_a, factor.var_b])
            self._bz.append(factor.z.as_array())
            self._bw.append(factor.noise.sqrt_info)
        else:
            raise TypeError(f"unsupported factor type {type(factor).__name__}")
        self.factors.append(factor)
        return factor

    def __len__(self):
        return len(self.factors)

    def __iter__(self):
        return iter(self.factors)

    def keys(self) -> set[int]:
        return {k for f in self.factors for k in f.keys}

    def num_priors(self) -> int:
        return self._pk.n

    def error(self, values) -> float:
        return _Problem(self, values).error(values.as_array(_Problem.order(values)))

    def dump(self, stream):
        """Write a plain-text edge list, one factor per line."""
        for f in self.factors:
            z = f.z
            diag = " ".join(repr(float(v)) for v in np.diag(f.noise.cov))
            ids = " ".join(str(k) for k in f.keys)
            kind = PRIOR if isinstance(f, PriorFactor) else BETWEEN
            stream.write(f"{kind} {ids} {z.x!r} {z.y!r} {z.theta!r} {diag}\n")


def factor_error(f, values) -> np.ndarray:
    """Whitened 3-vector residual of one factor."""
    for k in f.keys:
        if k not in values:
            raise MissingVariable(k)
    if isinstance(f, PriorFactor):
        pred = values[f.var].as_array()[None]
    else:
        pred = between_batch(values[f.var_a].as_array()[None], values[f.var_b].as_array()[None])
    r = log_batch(between_batch(f.z.as_array()[None], pred))[0]
    return f.noise.sqrt_info @ r


class _Problem:
    """Index arrays binding a graph's packed factors to columns of an ordering."""

    def __init__(self, graph: FactorGraph, values):
        keys = self.order(values)
        self.keys = keys
        self.n = len(keys)
        max_id = max(max(keys, default=0), int(graph._pk.view.max(initial=0)),
                     int(graph._bk.view.max(initial=0)))
        col = np.full(max_id + 1, -1, dtype=int)
        col[np.asarray(keys, dtype=int)] = np.arange(self.n)
        self.pi = col[graph._pk.view[:, 0]]
        self.ba = col[graph._bk.view[:, 0]]
        self.bb = col[graph._bk.view[:, 1]]
        for cols, ids in ((self.pi, graph._pk.view[:, 0]), (self.ba, graph._bk.view[:, 0]),
                          (self.bb, graph._bk.view[:, 1])):
            if np.any(cols < 0):
                raise MissingVariable(int(ids[np.argmax(cols < 0)]))
        self.pz, self.pw = graph._pz.view, graph._pw.view
        self.bz, self.bw = graph._bz.view, graph._bw.view

    @staticmethod
    def order(values):
        return list(values)

    def residuals(self, x):
        rp = log_batch(between_batch(self.pz, x[self.pi]))
        rb = log_batch(between_batch(self.bz, between_batch(x[self.ba], x[self.bb])))
        return rp, rb

    def error(self, x) -> float:
        rp, rb = self.residuals(x)
        wp = np.einsum("nij,nj->ni", self.pw, rp)
        wb = np.einsum("nij,nj->ni", self.bw, rb)
        return float(np.sum(wp * wp) + np.sum(wb * wb))

    def fast_error(self, x) -> float:
        return graph_error(x, self.pi, self.pz, self.pw, self.ba, self.bb, self.bz, self.bw)

    def banded_system(self, x, band):
        """Compiled equivalent of ``normal_equations(x, band)`` without the error."""
        n3 = 3 * self.n
        ab = np.zeros((band + 1, n3))
        g = np.zeros(n3)
        banded_normal_equations(x, self.pi, self.pz, self.pw, self.ba, self.bb, self.bz,
                                self.bw, band, ab, g)
        return ab, g

    def jacobians(self, x):
        """Whitened residuals and Jacobian blocks for every factor."""
        rp, rb = self.residuals(x)
        jp = right_jacobian_inverse_batch(rp)
        jb = right_jacobian_inverse_batch(rb)
        xa, xb = x[self.ba], x[self.bb]
        ja = -np.matmul(jb, adjoint_batch(between_batch(xb, xa)))
        wrp = np.einsum("nij,nj->ni", self.pw, rp)
        wrb = np.einsum("nij,nj->ni", self.bw, rb)
        return wrp, np.matmul(self.pw, jp), wrb, np.matmul(self.bw, ja), np.matmul(self.bw, jb)

    def bandwidth(self) -> int:
        if len(self.ba) == 0:
            return 2
        return 3 * int(np.max(np.abs(self.ba - self.bb))) + 2

    def _block_index(self, cols_r, cols_c):
        rows = 3 * cols_r[:, None, None] + np.arange(3)[None, :, None] + np.zeros((1, 1, 3), int)
        cols = 3 * cols_c[:, None, None] + np.arange(3)[None, None, :] + np.zeros((1, 3, 1), int)
        return rows.ravel(), cols.ravel()

    def _structure(self, band):
        """Scatter indices for H, computed once per problem (the sparsity is fixed)."""
        key = ("band", band)
        if getattr(self, "_struct_key", None) == key:
            return self._struct
        pairs = [(self.pi, self.pi), (self.ba, self.ba), (self.bb, self.bb), (self.ba, self.bb)]
        if band is None:
            pairs.append((self.bb, self.ba))
        rows, cols = zip(*(self._block_index(r, c) for r, c in pairs))
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        n3 = 3 * self.n
        if band is not None:
            # Cross blocks may sit below the diagonal; mirror them up. Diagonal
            # blocks keep only their upper triangle.
            ndiag = 9 * (len(self.pi) + 2 * len(self.ba))
            lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
            keep = np.ones(len(rows), dtype=bool)
            keep[:ndiag] = rows[:ndiag] <= cols[:ndiag]
            flat = (band + lo - hi) * n3 + hi
            struct = (keep, flat[keep])
        else:
            struct = (rows, cols)
        gidx = [(3 * c[:, None] + np.arange(3)).ravel() for c in (self.pi, self.ba, self.bb)]
        self._struct_key, self._struct = key, (struct, np.concatenate(gidx))
        return self._struct

    def normal_equations(self, x, band: int | None):
        """Gauss-Newton H = J^T J and g = J^T r.

        H is returned in LAPACK upper banded storage when ``band`` is given,
        otherwise as a sparse CSC matrix.
        """
        wrp, Jp, wrb, Ja, Jb = self.jacobians(x)
        err = float(np.sum(wrp * wrp) + np.sum(wrb * wrb))
        n3 = 3 * self.n
        struct, gidx = self._structure(band)
        JaT, JbT = Ja.transpose(0, 2, 1), Jb.transpose(0, 2, 1)
        blocks = [np.matmul(Jp.transpose(0, 2, 1), Jp), np.matmul(JaT, Ja), np.matmul(JbT, Jb),
                  np.matmul(JaT, Jb)]
        gv = np.concatenate([np.einsum("nji,nj->ni", Jp, wrp).ravel(),
                             np.einsum("nji,nj->ni", Ja, wrb).ravel(),
                             np.einsum("nji,nj->ni", Jb, wrb).ravel()])
        g = np.bincount(gidx, weights=gv, minlength=n3)
        if band is not None:
            keep, flat = struct
            vals = np.concatenate([b.ravel() for b in blocks])[keep]
            ab = np.bincount(flat, weights=vals, minlength=(band + 1) * n3)
            return ab.reshape(band + 1, n3), g, err
        blocks.append(np.matmul(JbT, Ja))
        vals = np.concatenate([b.ravel() for b in blocks])
        rows, cols = struct
        H = sp.coo_matrix((vals, (rows, cols)), shape=(n3, n3)).tocsc()
        return H, g, err

    def check_gauge(self):
        """Every connected component must contain at least one prior."""
        adj = sp.coo_matrix((np.ones(len(self.ba)), (self.ba, self.bb)), shape=(self.n, self.n))
        _, label = connected_components(adj, directed=False)
        anchored = np.zeros(label.max() + 1, dtype=bool)
        anchored[label[self.pi]] = True
        loose = np.flatnonzero(~anchored[label])
        if len(loose):
            raise IndefiniteSystem(
                f"gauge not anchored: no prior reaches variable {self.keys[loose[0]]}")


def linearize(graph: FactorGraph, values):
    """Stacked whitened Jacobian J (sparse) and residual r at ``values``.

    Rows are 3 per factor in graph order; columns 3 per variable in the
    iteration order of ``values``.
    """
    prob = _Problem(graph, values)
    x = values.as_array(prob.keys)
    wrp, Jp, wrb, Ja, Jb = prob.jacobians(x)
    # interleave priors and betweens back into graph order
    is_prior = np.array([isinstance(f, PriorFactor) for f in graph.factors], dtype=bool)
    r = np.zeros((len(graph), 3))
    r[is_prior], r[~is_prior] = wrp, wrb
    rows, cols, vals = [], [], []
    fp = np.flatnonzero(is_prior)
    fb = np.flatnonzero(~is_prior)
    for frows, fcols, blocks in ((fp, prob.pi, Jp), (fb, prob.ba, Ja), (fb, prob.bb, Jb)):
        rr = 3 * frows[:, None, None] + np.arange(3)[None, :, None] + np.zeros((1, 1, 3), int)
        cc = 3 * fcols[:, None, None] + np.arange(3)[None, None, :] + np.zeros((1, 3, 1), int)
        rows.append(rr.ravel())
        cols.append(cc.ravel())
        vals.append(blocks.ravel())
    J = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(3 * len(graph), 3 * prob.n))
    return J, r.ravel()


def retract(values, delta) -> Values:
    """Right retraction x_k <- x_k exp(delta_k) for every key in ``delta``."""
    out = Values(values)
    for k, d in delta.items():
        if k not in values:
            raise MissingVariable(k)
        out[k] = values[k].retract(d)
    return out


@dataclass
class LMConfig:
    max_iterations: int = 100
    tol: float = 1e-9
    abs_tol: float = 1e-12
    lambda_init: float = 1e-5
    lambda_min: float = 1e-12
    lambda_max: float = 1e4
    max_band_fraction: float = 0.5


@dataclass
class SolveReport:
    initial_error: float
    final_error: float
    iterations: int
    converged: bool


def optimize(graph: FactorGraph, initial, cfg: LMConfig | None = None):
    """Levenberg-Marquardt with diagonal (Marquardt) damping.

    Returns ``(values, report)``. Variables are factored in the iteration
    order of ``initial``; banded Cholesky is used when the graph's bandwidth
    in that order is small, sparse LU otherwise.
    """
    cfg = cfg or LMConfig()
    prob = _Problem(graph, initial)
    if prob.n == 0:
        return Values(initial), SolveReport(0.0, 0.0, 0, True)
    prob.check_gauge()
    n3 = 3 * prob.n
    band = prob.bandwidth()
    use_band = band < cfg.max_band_fraction * n3
    x = initial.as_array(prob.keys)
    err0 = err = prob.fast_error(x)
    lam = cfg.lambda_init
    converged = False
    it = 0
    while it < cfg.max_iterations:
        if err < cfg.abs_tol:
            converged = True
            break
        it += 1
        if use_band:
            H, g = prob.banded_system(x, band)
        else:
            H, g, _ = prob.normal_equations(x, None)
        diag = H[band] if use_band else H.diagonal()
        accepted = False
        while True:
            delta = _solve_damped(H, g, lam, band if use_band else None)
            # Decrease predicted by the linear model; from (H + lam D) delta = -g
            # it equals -g.delta + lam delta.D.delta.
            predicted = -g @ delta + lam * delta @ (diag * delta)
            cand = compose_batch(x, exp_batch(delta.reshape(-1, 3)))
            new_err = prob.fast_error(cand)
            if new_err < err:
                lam = max(lam / 10.0, cfg.lambda_min)
                accepted = True
                break
            # A rejected step whose predicted gain is already below tol
            # means more damping cannot buy a measurable decrease.
            if predicted <= cfg.tol * err or lam >= cfg.lambda_max:
                break
            lam = min(lam * 10.0, cfg.lambda_max)
        if not accepted:
            converged = True  # no meaningful descent left
            break
        rel = (err - new_err) / err
        x, err = cand, new_err
        if rel < cfg.tol or err < cfg.abs_tol:
            converged = True
            break
    log.debug("lm: %d iterations, error %.3e -> %.3e", it, err0, err)
    return Values.from_array(prob.keys, x), SolveReport(err0, err, it, converged)


def _solve_damped(H, g, lam, band):
    if band is not None:
        ab = H.copy()
        ab[band] += lam * H[band]
        try:
            cb = scipy.linalg.cholesky_banded(ab, lower=False, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise IndefiniteSystem("normal equations are not positive definite") from exc
        return scipy.linalg.cho_solve_banded((cb, False), -g, check_finite=False)
    d = H.diagonal()
    A = (H + sp.diags(lam * d)).tocsc()
    try:
        lu = scipy.sparse.linalg.splu(A, permc_spec="NATURAL")
    except RuntimeError as exc:
        raise IndefiniteSystem("normal equations are singular") from exc
    out = lu.solve(-g)
    if not np.all(np.isfinite(out)):
        raise IndefiniteSystem("normal equations are singular")
    return out


def total_error(graph: FactorGraph, values) -> float:
    return sum(float(np.dot(e, e)) for e in (factor_error(f, values) for f in graph))
