"""Exact mutual-information oracles and the three lower bounds used by the
training objective: the contrastive (NCE) bound, the NWJ bound, and the
reconstruction (Barber-Agakov style) bound, sharing a bilinear critic.

The critic scores are exp(embed(o)^T W z); raw scores are clamped to
[-30, 30] before exponentiation so the NWJ term cannot overflow.
"""

from dataclasses import dataclass

import numpy as np

from .nets import DenseNet, ShapeError

SCORE_CLAMP = 30.0
_LN_2PI = float(np.log(2.0 * np.pi))


class DiscreteJoint:
    """Joint probability table p[x, y]; entries must sum to 1 within 1e-12."""

    def __init__(self, p):
        p = np.asarray(p, dtype=np.float64)
        if p.ndim != 2 or np.any(p < 0):
            raise ValueError("joint must be a nonnegative matrix")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"joint sums to {p.sum()!r}, not 1")
        self.p = p


def exact_mi_discrete(joint):
    """I(X;Y) in nats by direct summation, with 0 ln 0 := 0."""
    p = joint.p
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    mask = p > 0.0
    terms = np.zeros_like(p)
    terms[mask] = p[mask] * np.log(p[mask] / (px @ py)[mask])
    return float(terms.sum())


def exact_mi_gaussian(rho, dims=1):
    """MI of `dims` independent correlated Gaussian pairs: -dims/2 ln(1-rho^2)."""
    if not abs(rho) < 1.0:
        raise ValueError(f"|rho| must be < 1, got {rho}")
    if dims < 1:
        raise ValueError("dims must be >= 1")
    return float(dims * (-0.5 * np.log1p(-rho * rho)))


@dataclass
class MIBoundEstimate:
    name: str                  # nce-exclusive | nce-inclusive | nwj | ba
    value: float
    n: int
    stderr: float
    negatives: str = "batch"   # time | batch | both
    note: str = ""

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("sample count must be >= 1")
        if self.stderr < 0:
            raise ValueError("standard error must be >= 0")


def _estimate(name, per_sample, negatives="batch", note=""):
    per_sample = np.asarray(per_sample, dtype=np.float64)
    n = per_sample.size
    se = float(per_sample.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return MIBoundEstimate(name=name, value=float(per_sample.mean()), n=n,
                           stderr=se, negatives=negatives, note=note)


class BilinearCritic:
    """Score f(z, o) = exp(embed(o)^T W feat(z)), strictly positive and finite.

    ``affine_latent`` appends a constant 1 to the latent features, letting
    the critic carry an observation-dependent offset; without it the family
    cannot represent the optimal critic on even simple joints.
    """

    def __init__(self, embed, w, affine_latent=False):
        self.embed = embed
        self.w = np.asarray(w, dtype=np.float64)
        self.affine_latent = affine_latent
        feat_dim = self.w.shape[1]
        if self.w.ndim != 2 or self.w.shape[0] != embed.out_dim:
            raise ShapeError(f"W {self.w.shape} incompatible with embed out_dim {embed.out_dim}")
        self._z_dim = feat_dim - 1 if affine_latent else feat_dim

    @classmethod
    def init(cls, obs_dim, z_dim, hidden, rng_, affine_latent=False, scale=0.1):
        feat = z_dim + 1 if affine_latent else z_dim
        embed = DenseNet.init([obs_dim, *hidden, feat], rng_)
        w = rng_.normal(0.0, scale / np.sqrt(feat), size=(feat, feat))
        return cls(embed=embed, w=w, affine_latent=affine_latent)

    @property
    def params(self):
        return self.embed.params + [self.w]

    def set_params(self, params):
        self.embed.set_params(params[:-1])
        self.w = np.asarray(params[-1], dtype=np.float64)

    def _feat(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self._z_dim:
            raise ShapeError(f"latent dim {z.shape[1]} != critic z dim {self._z_dim}")
        if self.affine_latent:
            return np.concatenate([z, np.ones((z.shape[0], 1))], axis=1)
        return z

    def scores(self, z, obs):
        """Raw pairwise score matrix g[i, j] = score(z_i, obs_j), clamped."""
        g, _ = self.scores_cached(z, obs)
        return g

    def scores_cached(self, z, obs):
        zf = self._feat(z)
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        emb, cache = self.embed.forward_cached(obs)
        raw = zf @ (emb @ self.w).T
        clipped = np.clip(raw, -SCORE_CLAMP, SCORE_CLAMP)
        return clipped, (zf, emb, cache, raw)

    def scores_backward(self, cache, d_g):
        """Backprop through the pairwise score matrix.

        Returns (critic_param_grads, d_z) where d_z is (n, z_dim).
        """
        zf, emb, net_cache, raw = cache
        d_g = np.where(np.abs(raw) < SCORE_CLAMP, d_g, 0.0)
        ew = emb @ self.w                       # (m, feat)
        d_zf = d_g @ ew                         # (n, feat)
        d_ew = d_g.T @ zf                       # (m, feat)
        d_emb = d_ew @ self.w.T
        d_w = emb.T @ d_ew
        emb_grads, _ = self.embed.backward(net_cache, d_emb)
        d_z = d_zf[:, :-1] if self.affine_latent else d_zf
        return emb_grads + [d_w], d_z


def _logsumexp(a, axis=None):
    m = np.max(a, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))).squeeze(axis)


def nce_bound(critic, z, obs_pos, obs_neg, mode="inclusive", negatives="batch"):
    """Contrastive bound from positive pairs (z_i, obs_pos_i) against a
    shared negative pool.

    Exclusive mode is the plain contrastive objective
    mean_i [g(z_i, o_i) - log sum_neg exp g(z_i, o')]; inclusive mode adds
    the positive to the denominator plus ln(K+1), making the estimate a
    valid MI lower bound comparable to the oracles.
    """
    z = np.atleast_2d(z)
    obs_pos = np.atleast_2d(obs_pos)
    obs_neg = np.atleast_2d(obs_neg)
    if len(obs_pos) != len(z) or len(z) < 1:
        raise ShapeError("need matched positive pairs")
    if len(obs_neg) < 1:
        raise ValueError("empty negative set")
    g_pos = np.diag(critic.scores(z, obs_pos))
    g_neg = critic.scores(z, obs_neg)
    if mode == "exclusive":
        per = g_pos - _logsumexp(g_neg, axis=1)
        return _estimate("nce-exclusive", per, negatives)
    if mode == "inclusive":
        k = obs_neg.shape[0]
        stacked = np.concatenate([g_neg, g_pos[:, None]], axis=1)
        per = g_pos - _logsumexp(stacked, axis=1) + np.log(k + 1.0)
        return _estimate("nce-inclusive", per, negatives)
    raise ValueError(f"unknown mode {mode!r}")


def nwj_bound(critic, z_joint, obs_joint, z_marginal, obs_marginal, negatives="batch"):
    """NWJ bound: E_joint[g] - e^{-1} E_marginal[e^g].

    The marginal batch must pair z against independently drawn observations.
    """
    zj = np.atleast_2d(z_joint)
    oj = np.atleast_2d(obs_joint)
    zm = np.atleast_2d(z_marginal)
    om = np.atleast_2d(obs_marginal)
    if len(zj) < 1 or len(zm) < 1:
        raise ShapeError("both batches must be nonempty")
    g_joint = np.diag(critic.scores(zj, oj))
    g_marg = np.diag(critic.scores(zm, om))
    per = g_joint - np.exp(-1.0) * np.exp(g_marg)  # valid per-sample when sizes match
    if len(g_joint) == len(g_marg):
        return _estimate("nwj", per, negatives)
    value = float(g_joint.mean() - np.exp(-1.0) * np.exp(g_marg).mean())
    return MIBoundEstimate(name="nwj", value=value, n=len(g_joint), stderr=0.0,
                           negatives=negatives, note="unpaired batches; no stderr")


def ba_reconstruction_bound(decoder, z, obs):
    """Reconstruction bound: mean unit-variance Gaussian log-likelihood of o
    under the decoder mean.  The observation-entropy constant is policy
    independent and reported as not estimated.
    """
    z = np.atleast_2d(z)
    obs = np.atleast_2d(obs)
    if decoder.out_dim != obs.shape[1]:
        raise ShapeError(f"decoder out_dim {decoder.out_dim} != obs dim {obs.shape[1]}")
    mean = decoder.forward(z)
    resid = obs - mean
    d = obs.shape[1]
    per = -0.5 * d * _LN_2PI - 0.5 * (resid**2).sum(axis=1)
    return _estimate("ba", per, negatives="batch", note="H(p(o)) not estimated")


def optimal_nwj_critic_value(joint):
    """Exact NWJ value at the analytically optimal critic g* = 1 + ln p(y|x)/p(y),
    summed over the full joint (no sampling).  Equals the exact MI.
    """
    p = joint.p
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    prod = px @ py
    mask = p > 0
    g = np.zeros_like(p)
    g[mask] = 1.0 + np.log(p[mask] / prod[mask])
    # cells with p == 0 have g* = -inf, so e^{g*} = 0 and they drop out
    term1 = float((p[mask] * g[mask]).sum())
    term2 = float(np.exp(-1.0) * (prod[mask] * np.exp(g[mask])).sum())
    return term1 - term2


def gaussian_pair_sampler(rho, dims, seed_stream):
    """Sampler for correlated Gaussian (z, o) pairs with per-dim correlation rho."""
    def sample(n):
        o = seed_stream.normal(size=(n, dims))
        z = rho * o + np.sqrt(1.0 - rho * rho) * seed_stream.normal(size=(n, dims))
        return z, o
    return sample


def train_gaussian_critic(rho, dims=1, bound="nce", batch=512, steps=1200,
                          lr=3e-3, seed=0, hidden=(64, 64)):
    """Train a bilinear critic on correlated Gaussian pairs and evaluate the
    requested bound on fresh data.

    Returns (critic, MIBoundEstimate); "nce" evaluates in inclusive mode so
    the estimate is comparable to the Gaussian oracle.
    """
    from . import rng as rng_mod
    from .nets import AdamState, adam_step

    train_stream = rng_mod.stream(seed, "mi.train")
    sampler = gaussian_pair_sampler(rho, dims, train_stream)
    critic = BilinearCritic.init(dims, dims, hidden, rng_mod.stream(seed, "mi.critic"),
                                 affine_latent=True)
    state = AdamState.init(critic.params, lr=lr)
    perm_stream = rng_mod.stream(seed, "mi.perm")
    for _ in range(steps):
        z, obs = sampler(batch)
        perm = perm_stream.permutation(batch) if bound == "nwj" else None
        _, grads = critic_training_loss(critic, z, obs, bound, perm=perm)
        new_params, state = adam_step(state, critic.params, grads)
        critic.set_params(new_params)

    eval_stream = rng_mod.stream(seed, "mi.eval")
    eval_sampler = gaussian_pair_sampler(rho, dims, eval_stream)
    z, obs = eval_sampler(batch)
    if bound == "nce":
        _, neg = eval_sampler(batch - 1)
        return critic, nce_bound(critic, z, obs, neg, mode="inclusive")
    if bound == "nwj":
        perm = eval_stream.permutation(batch)
        return critic, nwj_bound(critic, z, obs, z, obs[perm])
    raise ValueError(f"unknown bound {bound!r}")


def critic_training_loss(critic, z, obs, bound, perm=None):
    """Negated bound value with gradients for the critic parameters.

    ``bound`` is "nce" (exclusive over the in-batch pool, self excluded) or
    "nwj" (marginal pairs formed by the permutation ``perm``).
    Returns (loss, grads).
    """
    n = len(z)
    g, cache = critic.scores_cached(z, obs)
    if bound == "nce":
        eye = np.eye(n, dtype=bool)
        masked = np.where(eye, -np.inf, g)
        lse = _logsumexp(masked, axis=1)
        value = float((np.diag(g) - lse).mean())
        d_g = -np.eye(n) / n
        soft = np.exp(masked - lse[:, None])
        d_g += soft / n
    elif bound == "nwj":
        if perm is None:
            raise ValueError("nwj needs a permutation for the marginal pairs")
        g_joint = np.diag(g)
        g_marg = g[np.arange(n), perm]
        value = float(g_joint.mean() - np.exp(-1.0) * np.exp(g_marg).mean())
        d_g = np.zeros_like(g)
        d_g[np.arange(n), np.arange(n)] -= 1.0 / n
        np.add.at(d_g, (np.arange(n), perm), np.exp(-1.0) * np.exp(g_marg) / n)
    else:
        raise ValueError(f"unknown bound {bound!r}")
    grads, _ = critic.scores_backward(cache, d_g)
    return -value, grads
