"""Model families and training losses.

Predictors map a (possibly reconstructed) phase-diagram vector to an
alloy composition: a mixture-density head for multimodal targets and a
plain MLP baseline.  Imputers reconstruct the hidden part of a partially
specified diagram: a conditional VAE and a conditional GAN.  Hybrid
objectives couple an imputer with a predictor through the imputed mean,
so prediction gradients reach the imputer.

All losses here operate on standardized inputs/targets and return
scalar Tensors averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (ConfigError, ContractError, DimensionError, DomainError,
                     NumericError)
from .nn import FeedForward
from .tensor import Tensor, concat, logsumexp, softmax

LOG_2PI = float(np.log(2.0 * np.pi))
DISC_CLAMP = 1e-7
MDN_WEIGHT_FLOOR = 1e-3  # keeps every mixture component trainable


# ---------------------------------------------------------------------------
# mixture density
# ---------------------------------------------------------------------------

@dataclass
class MixtureDensity:
    """K weighted isotropic Gaussians over composition space."""

    weights: np.ndarray    # [K]
    means: np.ndarray      # [K, M]
    variances: np.ndarray  # [K], isotropic

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ContractError("mixture weights must be >= 0 and sum to 1")
        if np.any(self.variances <= 0):
            raise ContractError("mixture variances must be strictly positive")
        if len(self.weights) != len(self.means) or len(self.weights) != len(self.variances):
            raise ContractError("mixture component counts disagree")

    @property
    def n_components(self) -> int:
        return len(self.weights)


def mdn_log_density(mix: MixtureDensity, x) -> float:
    """log sum_k w_k N(x; mu_k, I var_k), via log-sum-exp."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("mdn_log_density: non-finite query point")
    m = mix.means.shape[1]
    sq = np.sum((mix.means - x[None, :]) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        log_w = np.where(mix.weights > 0, np.log(np.maximum(mix.weights, 1e-300)), -1e30)
    log_comp = log_w - 0.5 * m * (LOG_2PI + np.log(mix.variances)) - sq / (2.0 * mix.variances)
    top = log_comp.max()
    return float(top + np.log(np.exp(log_comp - top).sum()))


class MDNHead:
    """Mixture-density predictor with three sub-networks.

    One network produces the K mixing logits, one the K*M component
    means, and one the K isotropic log-variances.
    """

    def __init__(self, rng, cond_dim: int, out_dim: int, n_components: int = 5,
                 hidden=(500, 100, 50)):
        if n_components < 1:
            raise ConfigError("n_components must be >= 1")
        self.n_components = n_components
        self.out_dim = out_dim
        self.cond_dim = cond_dim
        h = list(hidden)
        self.weight_net = FeedForward(rng, [cond_dim] + h + [n_components])
        self.mean_net = FeedForward(rng, [cond_dim] + h + [n_components * out_dim])
        self.logvar_net = FeedForward(rng, [cond_dim] + h + [n_components])

    def forward(self, cond: Tensor):
        """Returns (mix logits [B,K], means [B,K*M], logvars [B,K])."""
        return self.weight_net(cond), self.mean_net(cond), self.logvar_net(cond)

    def log_prob(self, cond: Tensor, x: np.ndarray) -> Tensor:
        """Mean per-row mixture log-density, differentiable."""
        return -mdn_nll(self, cond, x)

    def mixture_for(self, cond_row: np.ndarray) -> MixtureDensity:
        """Mixture parameters at one condition vector (no gradients)."""
        logits, means, logvars = self.forward(Tensor(cond_row.reshape(1, -1)))
        w = (softmax(logits).data[0] * (1.0 - MDN_WEIGHT_FLOOR)
             + MDN_WEIGHT_FLOOR / self.n_components)
        mu = means.data[0].reshape(self.n_components, self.out_dim)
        var = np.exp(np.clip(logvars.data[0], -20.0, 20.0))
        return MixtureDensity(weights=w, means=mu, variances=var)

    def params(self):
        return self.weight_net.params() + self.mean_net.params() + self.logvar_net.params()


def mdn_nll(head: MDNHead, cond: Tensor, x) -> Tensor:
    """Negative mixture log-likelihood, averaged over the batch rows."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    logits, means, logvars = head.forward(cond)
    for name, t in (("weight_net", logits), ("mean_net", means), ("logvar_net", logvars)):
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"non-finite forward values from {name}")
    k, m = head.n_components, head.out_dim
    # floor the mixing weights so no component's responsibility hits zero
    alpha = softmax(logits) * (1.0 - MDN_WEIGHT_FLOOR) + MDN_WEIGHT_FLOOR / k
    log_alpha = alpha.log()
    lv = logvars.clip(-20.0, 20.0)
    inv_var = (-lv).exp()
    cols = []
    for j in range(k):
        mu_j = means.cols(j * m, (j + 1) * m)
        sq = ((Tensor(x) - mu_j) ** 2.0).sum(axis=1, keepdims=True)
        lv_j = lv.cols(j, j + 1)
        log_n = (-0.5 * m) * (LOG_2PI + lv_j) - 0.5 * sq * inv_var.cols(j, j + 1)
        cols.append(log_alpha.cols(j, j + 1) + log_n)
    row_ll = logsumexp(concat(cols, axis=1), axis=1)
    return -row_ll.mean()


class MLPPredictor:
    """Plain MLP predictor, read as a unit-variance Gaussian density."""

    def __init__(self, rng, cond_dim: int, out_dim: int, hidden=(500, 100, 50)):
        self.out_dim = out_dim
        self.cond_dim = cond_dim
        self.net = FeedForward(rng, [cond_dim] + list(hidden) + [out_dim])

    def forward(self, cond: Tensor) -> Tensor:
        return self.net(cond)

    def log_prob(self, cond: Tensor, x: np.ndarray) -> Tensor:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = self.forward(cond)
        sq = ((out - Tensor(x)) ** 2.0).sum(axis=1, keepdims=True)
        return (-0.5 * sq - 0.5 * self.out_dim * LOG_2PI).mean()

    def mixture_for(self, cond_row: np.ndarray) -> MixtureDensity:
        out = self.forward(Tensor(cond_row.reshape(1, -1))).data[0]
        # degenerate single component; tiny variance stands in for zero
        return MixtureDensity(weights=np.array([1.0]), means=out.reshape(1, -1),
                              variances=np.array([1e-12]))

    def params(self):
        return self.net.params()


# ---------------------------------------------------------------------------
# shared Gaussian utilities
# ---------------------------------------------------------------------------

def kl_diag_gaussian(mu, sigma2) -> float:
    """KL(N(mu, diag sigma2) || N(0, I)) in closed form."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 <= 0):
        raise DomainError("kl_diag_gaussian: variances must be positive")
    return float(0.5 * np.sum(sigma2 + mu**2 - 1.0 - np.log(sigma2)))


def reparameterize(mu, sigma, epsilon):
    """z = mu + sigma * eps; gradient flows to mu and sigma only."""
    if isinstance(mu, Tensor) or isinstance(sigma, Tensor):
        eps = np.asarray(epsilon, dtype=np.float64)
        mu_t = mu if isinstance(mu, Tensor) else Tensor(mu)
        sig_t = sigma if isinstance(sigma, Tensor) else Tensor(sigma)
        if mu_t.data.shape != sig_t.data.shape or mu_t.data.shape != eps.shape:
            raise DimensionError(
                f"reparameterize: shape mismatch {mu_t.data.shape} {sig_t.data.shape} {eps.shape}")
        return mu_t + sig_t * Tensor(eps)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if mu.shape != sigma.shape or mu.shape != epsilon.shape:
        raise DimensionError(
            f"reparameterize: shape mismatch {mu.shape} {sigma.shape} {epsilon.shape}")
    return mu + sigma * epsilon


def _kl_term(mu_t: Tensor, logvar_t: Tensor) -> Tensor:
    """Per-batch mean KL to the standard normal, from mean and log-variance."""
    lv = logvar_t.clip(-20.0, 20.0)
    per_row = 0.5 * (lv.exp() + mu_t**2.0 - 1.0 - lv).sum(axis=1, keepdims=True)
    return per_row.mean()


def _masked_gaussian_loglik(y: np.ndarray, mu_t: Tensor, logvar_t: Tensor,
                            mask: np.ndarray) -> Tensor:
    """Mean diagonal-Gaussian log-density of y restricted to masked entries."""
    m = np.atleast_2d(mask)
    lv = logvar_t.clip(-10.0, 10.0)
    sq = (Tensor(y) - mu_t) ** 2.0
    per_dim = -0.5 * (LOG_2PI + lv) - 0.5 * sq * (-lv).exp()
    return (per_dim * Tensor(m)).sum(axis=1, keepdims=True).mean()


# ---------------------------------------------------------------------------
# CVAE imputer
# ---------------------------------------------------------------------------

class CVAEImputer:
    """Conditional VAE that reconstructs hidden diagram entries.

    Both nets see the full-length standardized diagram with hidden
    entries zero-filled, plus the binary mask vector, so one model
    serves any mask.  The decoder mirrors the encoder's hidden sizes in
    reverse order.
    """

    def __init__(self, rng, y_dim: int, latent_dim: int = 30, hidden=(500, 100, 50)):
        self.y_dim = y_dim
        self.latent_dim = latent_dim
        h = list(hidden)
        self.recognition_net = FeedForward(rng, [2 * y_dim] + h + [2 * latent_dim])
        self.generation_net = FeedForward(
            rng, [latent_dim + 2 * y_dim] + h[::-1] + [2 * y_dim])

    def recognize(self, y_full: np.ndarray, mask: np.ndarray):
        """Posterior (mu, logvar) Tensors from the full target and its mask."""
        b = y_full.shape[0]
        inp = np.concatenate([y_full, np.broadcast_to(mask, (b, self.y_dim))], axis=1)
        out = self.recognition_net(Tensor(inp))
        return out.cols(0, self.latent_dim), out.cols(self.latent_dim, 2 * self.latent_dim)

    def decode(self, z: Tensor, v_filled: np.ndarray, mask: np.ndarray):
        """Decoder (mu, logvar) Tensors over the full diagram layout."""
        b = v_filled.shape[0]
        cond = np.concatenate([v_filled, np.broadcast_to(mask, (b, self.y_dim))], axis=1)
        out = self.generation_net(concat([z, Tensor(cond)], axis=1))
        return out.cols(0, self.y_dim), out.cols(self.y_dim, 2 * self.y_dim)

    def impute_mean(self, v_filled: np.ndarray, mask: np.ndarray, z: np.ndarray) -> Tensor:
        """Hidden-part reconstruction at the decoder mode for given latents."""
        mu, _ = self.decode(Tensor(z), v_filled, mask)
        return mu

    def params(self):
        return self.recognition_net.params() + self.generation_net.params()


def cvae_elbo(model: CVAEImputer, y_full: np.ndarray, mask: np.ndarray,
              epsilon: np.ndarray) -> Tensor:
    """Evidence lower bound on the hidden-part likelihood, batch mean."""
    y_full = np.atleast_2d(np.asarray(y_full, dtype=np.float64))
    mask = np.asarray(mask, dtype=np.float64)
    mu_q, logvar_q = model.recognize(y_full, mask)
    sigma_q = (0.5 * logvar_q.clip(-20.0, 20.0)).exp()
    z = reparameterize(mu_q, sigma_q, epsilon)
    v_filled = y_full * (1.0 - np.atleast_2d(mask))
    mu_y, logvar_y = model.decode(z, v_filled, mask)
    loglik = _masked_gaussian_loglik(y_full, mu_y, logvar_y, mask)
    return loglik - _kl_term(mu_q, logvar_q)


def hybrid_cvae_loss(model: CVAEImputer, predictor, y_full: np.ndarray,
                     x: np.ndarray, mask: np.ndarray, lam: float,
                     epsilon: np.ndarray) -> Tensor:
    """Imputer bound plus weighted prediction log-likelihood, to maximize.

    The predictor is conditioned on the observed entries merged with the
    decoder-mean reconstruction of the hidden ones, so its gradient
    reaches the decoder and encoder.
    """
    if lam <= 0:
        raise ConfigError("hybrid loss weight must be > 0")
    y_full = np.atleast_2d(np.asarray(y_full, dtype=np.float64))
    mask = np.asarray(mask, dtype=np.float64)
    mu_q, logvar_q = model.recognize(y_full, mask)
    sigma_q = (0.5 * logvar_q.clip(-20.0, 20.0)).exp()
    z = reparameterize(mu_q, sigma_q, epsilon)
    v_filled = y_full * (1.0 - np.atleast_2d(mask))
    mu_y, logvar_y = model.decode(z, v_filled, mask)
    elbo = _masked_gaussian_loglik(y_full, mu_y, logvar_y, mask) - _kl_term(mu_q, logvar_q)
    merged = Tensor(v_filled) + mu_y * Tensor(np.atleast_2d(mask))
    return elbo + lam * predictor.log_prob(merged, x)


# ---------------------------------------------------------------------------
# CGAN imputer
# ---------------------------------------------------------------------------

class CGANImputer:
    """Conditional GAN that generates hidden diagram entries."""

    def __init__(self, rng, y_dim: int, latent_dim: int = 30, hidden=(500, 100, 50)):
        self.y_dim = y_dim
        self.latent_dim = latent_dim
        h = list(hidden)
        self.generator = FeedForward(rng, [latent_dim + 2 * y_dim] + h[::-1] + [y_dim])
        self.discriminator = FeedForward(rng, [2 * y_dim] + h + [1])

    def generate(self, z: Tensor, v_filled: np.ndarray, mask: np.ndarray) -> Tensor:
        b = v_filled.shape[0]
        cond = np.concatenate([v_filled, np.broadcast_to(mask, (b, self.y_dim))], axis=1)
        return self.generator(concat([z, Tensor(cond)], axis=1))

    def discriminate(self, y_merged: Tensor, mask: np.ndarray) -> Tensor:
        """Probability-of-real in (0,1) for a merged diagram."""
        b = y_merged.data.shape[0]
        m = Tensor(np.broadcast_to(mask, (b, self.y_dim)).copy())
        logit = self.discriminator(concat([y_merged, m], axis=1))
        return logit.sigmoid().clip(DISC_CLAMP, 1.0 - DISC_CLAMP)

    def gen_params(self):
        return self.generator.params()

    def disc_params(self):
        return self.discriminator.params()


def _merge_fake(v_filled: np.ndarray, fake: Tensor, mask: np.ndarray) -> Tensor:
    return Tensor(v_filled) + fake * Tensor(np.atleast_2d(mask))


def cgan_losses(model: CGANImputer, y_real: np.ndarray, mask: np.ndarray,
                z: np.ndarray):
    """(disc_loss, gen_loss): cross-entropy critic, non-saturating generator."""
    y_real = np.atleast_2d(np.asarray(y_real, dtype=np.float64))
    mask = np.asarray(mask, dtype=np.float64)
    v_filled = y_real * (1.0 - np.atleast_2d(mask))
    fake = model.generate(Tensor(z), v_filled, mask)
    fake_merged = _merge_fake(v_filled, fake, mask)

    d_real = model.discriminate(Tensor(y_real), mask)
    d_fake_detached = model.discriminate(fake_merged.detach(), mask)
    disc_loss = -(d_real.log().mean() + (1.0 - d_fake_detached).log().mean())

    d_fake = model.discriminate(fake_merged, mask)
    gen_loss = -d_fake.log().mean()
    return disc_loss, gen_loss


def hybrid_cgan_loss(model: CGANImputer, predictor, y_real: np.ndarray,
                     x: np.ndarray, mask: np.ndarray, lam: float, z: np.ndarray):
    """(disc_loss, joint_loss); joint_loss is maximized over generator+predictor."""
    if lam <= 0:
        raise ConfigError("hybrid loss weight must be > 0")
    y_real = np.atleast_2d(np.asarray(y_real, dtype=np.float64))
    mask = np.asarray(mask, dtype=np.float64)
    v_filled = y_real * (1.0 - np.atleast_2d(mask))
    fake = model.generate(Tensor(z), v_filled, mask)
    fake_merged = _merge_fake(v_filled, fake, mask)

    d_real = model.discriminate(Tensor(y_real), mask)
    d_fake_detached = model.discriminate(fake_merged.detach(), mask)
    disc_loss = -(d_real.log().mean() + (1.0 - d_fake_detached).log().mean())

    d_fake = model.discriminate(fake_merged, mask)
    joint = d_fake.log().mean() + lam * predictor.log_prob(fake_merged, x)
    return disc_loss, joint
