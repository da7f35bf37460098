"""Variational autoencoder over weight vectors with input/latent noise injection.

Training objective per example:
    ||w - dec(z + xi_lat)||^2 + beta * KL(N(mu, diag(exp(logvar))) || N(0, I)),
    z = mu + exp(logvar / 2) * eps,  (mu, logvar) = enc(w + xi_in).
The reconstruction term is the negative log-likelihood of a fixed-variance
Gaussian decoder up to an additive constant (sum over coordinates).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import nn
from ..nn import tensor as T
from ..nn.modules import MLP, Module
from ..nn.tensor import NonFiniteError, Tensor

SIGMA_IN = 0.001
SIGMA_LAT = 0.5
BETA_RETRIEVAL = 1e-2
BETA_FEWSHOT = 1e-6


@dataclass(frozen=True)
class VaeConfig:
    latent_dim: int = 64
    hidden: tuple = (256,)
    beta: float = BETA_RETRIEVAL
    sigma_in: float = SIGMA_IN
    sigma_lat: float = SIGMA_LAT
    act: str = "silu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.sigma_in < 0 or self.sigma_lat < 0:
            raise ValueError("noise stds must be >= 0")
        if self.latent_dim <= 0:
            raise ValueError("latent_dim must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass(frozen=True)
class VaeTrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 2e-6
    lr_min: float = 0.0
    schedule: str = "cosine"


class VaeModel(Module):
    def __init__(self, d_in: int, cfg: VaeConfig, rng: np.random.Generator):
        self.d_in = int(d_in)
        self.cfg = cfg
        self.encoder = MLP([self.d_in, *cfg.hidden, 2 * cfg.latent_dim], rng, cfg.act)
        self.decoder = MLP([cfg.latent_dim, *reversed(cfg.hidden), self.d_in], rng, cfg.act)

    @property
    def latent_dim(self) -> int:
        return self.cfg.latent_dim

    def encode_stats(self, x: Tensor) -> tuple:
        h = self.encoder(x)
        L = self.latent_dim
        return h[:, :L], h[:, L:]


def _as_batch(w) -> Tensor:
    t = T.as_tensor(w)
    if t.ndim == 1:
        t = T.reshape(t, (1, -1))
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError("non-finite input to the VAE")
    return t


def vae_encode(m: VaeModel, w, rng: np.random.Generator | None = None, train_mode: bool = False) -> tuple:
    """Return (mean, logvar, z) Tensors of shape (n, latent_dim).

    Train mode perturbs the input by N(0, sigma_in^2) and samples z by
    reparameterization; eval mode uses the clean input and z = mean.
    """
    x = _as_batch(w)
    if x.shape[1] != m.d_in:
        raise ValueError(f"VAE expects length {m.d_in}, got {x.shape[1]}")
    if train_mode and m.cfg.sigma_in > 0:
        x = T.add(x, m.cfg.sigma_in * rng.standard_normal(x.shape))
    mean, logvar = m.encode_stats(x)
    if not train_mode:
        return mean, logvar, mean
    eps = rng.standard_normal(mean.shape)
    z = T.add(mean, T.mul(T.exp(T.mul(logvar, 0.5)), eps))
    return mean, logvar, z


def vae_decode(m: VaeModel, z, rng: np.random.Generator | None = None, train_mode: bool = False) -> Tensor:
    z = _as_batch(z)
    if z.shape[1] != m.latent_dim:
        raise ValueError(f"latent length {z.shape[1]} != {m.latent_dim}")
    if train_mode and m.cfg.sigma_lat > 0:
        z = T.add(z, m.cfg.sigma_lat * rng.standard_normal(z.shape))
    return m.decoder(z)


def kl_to_standard(mean: Tensor, logvar: Tensor) -> Tensor:
    """Closed-form KL(N(mean, exp(logvar)) || N(0, I)) per row."""
    terms = T.sub(T.add(T.square(mean), T.exp(logvar)), T.add(logvar, 1.0))
    return T.mul(T.tsum(terms, axis=1), 0.5)


def vae_loss_terms(m: VaeModel, w, rng: np.random.Generator, beta: float | None = None) -> tuple:
    """(total, recon, kl) Tensors, averaged over the batch, in train mode."""
    beta = m.cfg.beta if beta is None else beta
    x = _as_batch(w)
    mean, logvar, z = vae_encode(m, x, rng, train_mode=True)
    recon_w = vae_decode(m, z, rng, train_mode=True)
    recon = T.tmean(T.tsum(T.square(T.sub(recon_w, x.detach())), axis=1))
    kl = T.tmean(kl_to_standard(mean, logvar))
    return T.add(recon, T.mul(kl, beta)), recon, kl


def vae_loss(m: VaeModel, w, rng: np.random.Generator) -> Tensor:
    return vae_loss_terms(m, w, rng)[0]


def reconstruct(m: VaeModel, w) -> np.ndarray:
    """Eval-mode encode then decode."""
    _, _, z = vae_encode(m, w)
    return vae_decode(m, z).data


@dataclass
class TrainCurve:
    loss: list = field(default_factory=list)
    recon: list = field(default_factory=list)
    kl: list = field(default_factory=list)


def train_vae(m: VaeModel, codes: np.ndarray, hp: VaeTrainConfig, rng: np.random.Generator,
              log_every: int = 1) -> TrainCurve:
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[0] < 1:
        raise ValueError("train_vae needs a (n >= 1, d) array of codes")
    opt = nn.AdamW(m.parameters(), hp.lr, hp.weight_decay)
    curve = TrainCurve()
    n = codes.shape[0]
    bs = min(hp.batch_size, n)
    order, pos = rng.permutation(n), 0
    for step in range(hp.steps):
        if pos + bs > n:
            order, pos = rng.permutation(n), 0
        idx = order[pos:pos + bs]
        pos += bs
        if hp.schedule == "cosine":
            opt.lr = nn.cosine_anneal(hp.lr, hp.lr_min, step, hp.steps)
        opt.zero_grad()
        loss, recon, kl = vae_loss_terms(m, codes[idx], rng)
        loss.backward()
        opt.step()
        if step % log_every == 0 or step == hp.steps - 1:
            curve.loss.append(loss.item())
            curve.recon.append(recon.item())
            curve.kl.append(kl.item())
    return curve
