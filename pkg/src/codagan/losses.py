"""Loss components and their weighted composition.

All reductions are per-element means, so the weights keep their meaning
across resolutions.
"""
import logging
import math
from dataclasses import dataclass, fields

import torch

log = logging.getLogger(__name__)

CE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_cyc: float = 10.0
    lambda_adv: float = 1.0
    lambda_sup: float = 100.0
    lambda_latent: float = 1.0  # content/style variant only

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")


@dataclass
class LossBreakdown:
    cyc: float = 0.0
    adv_g: float = 0.0
    adv_d: float = 0.0
    sup: float = 0.0
    latent_recon: float = 0.0
    total: float = 0.0


def cross_entropy_masked(target, probs, labeled_flags):
    """Binary cross-entropy averaged over the pixels of labeled samples only.

    Returns 0 (with a zero gradient) when nothing is labeled. Probabilities
    are clamped to [eps, 1 - eps].
    """
    if target.shape != probs.shape:
        raise ValueError(f"target {tuple(target.shape)} and prediction {tuple(probs.shape)} differ in shape")
    flags = torch.as_tensor(labeled_flags, dtype=torch.bool, device=probs.device)
    if not bool(flags.any()):
        return probs.sum() * 0.0
    with torch.no_grad():
        outside = (probs < CE_EPS) | (probs > 1 - CE_EPS)
        if bool(outside[flags].any()):
            log.debug("clamping %d probabilities into [%g, 1 - %g]", int(outside[flags].sum()), CE_EPS, CE_EPS)
    p = probs[flags].clamp(CE_EPS, 1.0 - CE_EPS)
    y = target[flags].to(p.dtype)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()


def adversarial_d(scores_real, scores_fake):
    """Least-squares discriminator loss: real scores pulled to 1, fake to 0."""
    return 0.5 * ((scores_real - 1) ** 2).mean() + 0.5 * (scores_fake ** 2).mean()


def adversarial_g(scores_fake):
    return 0.5 * ((scores_fake - 1) ** 2).mean()


def cycle_l1(x, x_reconstructed):
    if x.shape != x_reconstructed.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_reconstructed.shape)}")
    return (x - x_reconstructed).abs().mean()


def latent_recon(latent, latent_reencoded):
    """Mean absolute difference of content tensors, plus that of style vectors when both have one."""
    a, b = latent.content, latent_reencoded.content
    if a.shape != b.shape:
        raise ValueError(f"content shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    loss = (a - b).abs().mean()
    if latent.style is not None and latent_reencoded.style is not None:
        if latent.style.shape != latent_reencoded.style.shape:
            raise ValueError("style shape mismatch")
        loss = loss + (latent.style - latent_reencoded.style).abs().mean()
    return loss


def _check_finite(name, value):
    v = float(value.detach()) if torch.is_tensor(value) else float(value)
    if not math.isfinite(v):
        raise FloatingPointError(f"loss component {name!r} is not finite ({v})")


def total_coda(components: dict, weights: LossWeights, sup_terms=()):
    """Weighted sum of the objective's terms.

    ``components`` maps ``cyc``, ``adv_g``, ``adv_d`` and ``latent_recon``
    to scalars (tensors or floats), each already summed over both
    translation directions. ``sup_terms`` holds the active supervised terms
    (at most four: M(I_a), M(I_b), M(I_a->b), M(I_b->a)); they are summed.

    Returns ``(total, LossBreakdown)``; ``total`` keeps the autograd graph
    when the inputs carry one. ``adv_d`` is reported but never part of the
    generator/segmenter total.
    """
    cyc = components.get("cyc", 0.0)
    adv_g = components.get("adv_g", 0.0)
    adv_d = components.get("adv_d", 0.0)
    lat = components.get("latent_recon", 0.0)
    sup = sum(sup_terms) if sup_terms else 0.0
    for name, value in (("cyc", cyc), ("adv_g", adv_g), ("adv_d", adv_d), ("latent_recon", lat), ("sup", sup)):
        _check_finite(name, value)
    total = (weights.lambda_cyc * cyc + weights.lambda_adv * adv_g
             + weights.lambda_sup * sup + weights.lambda_latent * lat)
    breakdown = LossBreakdown(*(float(v.detach()) if torch.is_tensor(v) else float(v)
                                for v in (cyc, adv_g, adv_d, sup, lat, total)))
    return total, breakdown
