"""Training routines (D update, G update, M update), phases and checkpoints."""
import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .conditioning import encode_onehot
from .data import apply_label_fraction, make_batch, make_split, open_dataset, sample_pair
from .losses import (
    LossBreakdown, LossWeights, adversarial_d, adversarial_g, cross_entropy_masked, cycle_l1,
    latent_recon, total_coda,
)
from .segmenter import LatentSegmenter, UNet, probabilities
from .translation import Discriminator, Generator, LatentCode, sample_style

log = logging.getLogger(__name__)

ENCODE, DECODE, REENCODE, REDECODE, DISCRIMINATE, SUPERVISION = (
    "Encode", "Decode", "Reencode", "Redecode", "Discriminate", "Supervision")

# subroutines run by each routine
ROUTINE_SCHEDULE = {
    "gen_update": (ENCODE, DECODE, REENCODE, REDECODE),
    "dis_update": (ENCODE, DECODE, DISCRIMINATE),
    "model_update": (ENCODE, DECODE, REENCODE, REDECODE, SUPERVISION),
}

LOG_COLUMNS = ("iteration", "routine", "cyc", "adv_g", "adv_d", "sup", "total")


class ConfigurationError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 400
    full_training_fraction: float = 0.75
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    betas: tuple = (0.5, 0.999)
    batch_size: int = 4
    iterations_per_epoch: int | None = None
    seed: int = 0
    latent_variant: str = "shared"
    style_dim: int = 8
    base_filters: int = 32
    dis_filters: int = 64
    seg_depth: int = 4
    task: str = "lungs"
    train_ratio: float = 0.8
    checkpoint_epochs: list | None = None
    sup_into_generator: bool = False
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.betas = tuple(self.betas)
        if not 0.0 < self.full_training_fraction < 1.0:
            raise ConfigurationError("full_training_fraction must lie in (0, 1)")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.latent_variant not in ("shared", "content-style"):
            raise ConfigurationError(f"unknown latent_variant {self.latent_variant!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def switch_epoch(self) -> int:
        """Last epoch of Full Training; later epochs are Supervision Tuning."""
        return math.ceil(self.full_training_fraction * self.epochs)

    def resolved_checkpoint_epochs(self) -> list:
        if self.checkpoint_epochs is not None:
            return sorted(set(int(e) for e in self.checkpoint_epochs))
        stride = max(1, self.epochs // 40)
        return sorted({e for e in (self.epochs - stride * k for k in range(5)) if e >= 1})


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def build_networks(config: TrainConfig, n_domains: int):
    G = Generator(n_domains, base_filters=config.base_filters, variant=config.latent_variant,
                  style_dim=config.style_dim)
    D = Discriminator(n_domains, base_filters=config.dis_filters)
    M = LatentSegmenter(G.latent_channels, depth=config.seg_depth)
    return G, D, M


def _adam(params, config):
    return torch.optim.Adam(params, lr=config.learning_rate, betas=config.betas,
                            weight_decay=config.weight_decay)


def parameter_digest(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def _set_requires_grad(module, flag):
    for p in module.parameters():
        p.requires_grad_(flag)


class Trainer:
    """Owns G, D, M, their optimizers and all training randomness.

    ``trace`` lists the subroutines executed by the most recent step and
    ``sup_slots`` the supervised terms that were active in it.
    """

    def __init__(self, config: TrainConfig, registry, config_digest: str | None = None):
        if len(registry) < 2:
            raise ConfigurationError("at least two datasets are needed for pairwise translation")
        self.config = config
        self.registry = registry
        self.n_domains = len(registry)
        self.config_digest = config_digest or config_hash(config.to_dict())
        torch.manual_seed(config.seed)
        self.rng = np.random.default_rng(config.seed)
        self.style_gen = torch.Generator().manual_seed(config.seed + 1)
        self.G, self.D, self.M = build_networks(config, self.n_domains)
        self.opt_G = _adam(self.G.parameters(), config)
        self.opt_D = _adam(self.D.parameters(), config)
        self.opt_M = _adam(self.M.parameters(), config)

        self.datasets = [open_dataset(d) for d in registry]
        self.splits = [make_split(ds, config.seed, config.train_ratio) for ds in self.datasets]
        self.labeled = []
        for desc, ds, split in zip(registry, self.datasets, self.splits):
            candidates = [i for i in split.train_indices if ds.has_mask(i, config.task)]
            self.labeled.append(apply_label_fraction(split.train_indices, desc.label_fraction(config.task),
                                                     config.seed, candidates))
        if not any(self.labeled):
            raise ConfigurationError("no labeled data: every dataset has zero labeled training samples")
        self.iterations_per_epoch = config.iterations_per_epoch or math.ceil(
            max(len(s.train_indices) for s in self.splits) / config.batch_size)
        self.epoch = 0
        self.iteration = 0
        self.trace = []
        self.sup_slots = []
        self.batch_log = None  # set to a list to record (dataset_id, sample_indices) per batch

    # -- helpers -----------------------------------------------------------------

    def code(self, k):
        return encode_onehot(k, self.n_domains)

    def _random_style(self, n):
        return sample_style(self.G.style_dim, self.style_gen, n=n)

    def _with_style(self, latent, style):
        if not self.G.style_dim:
            return latent
        return LatentCode(latent.content, style)

    def draw_batches(self):
        a, b = sample_pair(self.n_domains, self.rng)
        batches = []
        for k in (a, b):
            batch = make_batch(self.datasets[k], self.splits[k], self.config.batch_size, self.rng,
                               self.labeled[k], self.config.task)
            if self.batch_log is not None:
                self.batch_log.append((k, list(batch.sample_indices)))
            batches.append(batch)
        return batches

    def _translate_pair(self, x_a, x_b, a, b, reencode):
        """Encode/Decode (and optionally Reencode/Redecode) for both directions."""
        G = self.G
        out = {}
        I_a = G.encode(x_a, self.code(a))
        I_b = G.encode(x_b, self.code(b))
        self.trace.append(ENCODE)
        s_a_rand = s_b_rand = None
        if G.style_dim:
            s_a_rand = self._random_style(x_a.shape[0])
            s_b_rand = self._random_style(x_b.shape[0])
        x_ab = G.decode(self._with_style(I_a, s_b_rand), self.code(b))
        x_ba = G.decode(self._with_style(I_b, s_a_rand), self.code(a))
        self.trace.append(DECODE)
        out.update(I_a=I_a, I_b=I_b, x_ab=x_ab, x_ba=x_ba, s_a_rand=s_a_rand, s_b_rand=s_b_rand)
        if reencode:
            I_ab = G.encode(x_ab, self.code(b))
            I_ba = G.encode(x_ba, self.code(a))
            self.trace.append(REENCODE)
            # cycle decodes with the style recovered from the original image
            x_aba = G.decode(self._with_style(I_ab, I_a.style), self.code(a))
            x_bab = G.decode(self._with_style(I_ba, I_b.style), self.code(b))
            self.trace.append(REDECODE)
            out.update(I_ab=I_ab, I_ba=I_ba, x_aba=x_aba, x_bab=x_bab)
        return out

    # -- routines ----------------------------------------------------------------

    def step_dis_update(self, batch_a, batch_b) -> LossBreakdown:
        self.trace = []
        a, b = batch_a.dataset_id, batch_b.dataset_id
        x_a, x_b = batch_a.images, batch_b.images
        with torch.no_grad():
            t = self._translate_pair(x_a, x_b, a, b, reencode=False)
        _set_requires_grad(self.D, True)
        loss_d = (adversarial_d(self.D(x_b, self.code(b)), self.D(t["x_ab"], self.code(b)))
                  + adversarial_d(self.D(x_a, self.code(a)), self.D(t["x_ba"], self.code(a))))
        self.trace.append(DISCRIMINATE)
        _, breakdown = total_coda({"adv_d": loss_d.detach()}, self.config.weights)
        self.opt_D.zero_grad(set_to_none=True)
        loss_d.backward()
        self.opt_D.step()
        return breakdown

    def step_gen_update(self, batch_a, batch_b) -> LossBreakdown:
        self.trace = []
        a, b = batch_a.dataset_id, batch_b.dataset_id
        x_a, x_b = batch_a.images, batch_b.images
        _set_requires_grad(self.D, False)
        t = self._translate_pair(x_a, x_b, a, b, reencode=True)
        cyc = cycle_l1(x_a, t["x_aba"]) + cycle_l1(x_b, t["x_bab"])
        # generator's adversarial term: D scores synthetic samples only, D is not trained here
        adv_g = adversarial_g(self.D(t["x_ab"], self.code(b))) + adversarial_g(self.D(t["x_ba"], self.code(a)))
        components = {"cyc": cyc, "adv_g": adv_g}
        if self.G.style_dim:
            components["latent_recon"] = (
                latent_recon(LatentCode(t["I_a"].content, t["s_b_rand"]), t["I_ab"])
                + latent_recon(LatentCode(t["I_b"].content, t["s_a_rand"]), t["I_ba"]))
        total, breakdown = total_coda(components, self.config.weights)
        self.opt_G.zero_grad(set_to_none=True)
        total.backward()
        self.opt_G.step()
        _set_requires_grad(self.D, True)
        return breakdown

    def step_model_update(self, batch_a, batch_b, update_generator=None) -> LossBreakdown:
        """Supervised update of M on I_a, I_b, I_{a->b}, I_{b->a} where labels exist.

        With ``update_generator`` the supervised gradient also reaches G
        (defaults to ``config.sup_into_generator``).
        """
        if update_generator is None:
            update_generator = self.config.sup_into_generator
        self.trace = []
        a, b = batch_a.dataset_id, batch_b.dataset_id
        x_a, x_b = batch_a.images, batch_b.images
        with torch.set_grad_enabled(update_generator):
            t = self._translate_pair(x_a, x_b, a, b, reencode=True)
            cyc = (cycle_l1(x_a, t["x_aba"]) + cycle_l1(x_b, t["x_bab"])).detach()

        flags_a, flags_b = batch_a.labeled_flags, batch_b.labeled_flags
        slots = []  # (name, latent content, targets)
        if flags_a.any():
            slots.append(("M(I_a)", t["I_a"].content[flags_a], batch_a.masks[flags_a]))
            slots.append(("M(I_a->b)", t["I_ab"].content[flags_a], batch_a.masks[flags_a]))
        if flags_b.any():
            slots.append(("M(I_b)", t["I_b"].content[flags_b], batch_b.masks[flags_b]))
            slots.append(("M(I_b->a)", t["I_ba"].content[flags_b], batch_b.masks[flags_b]))
        self.sup_slots = [name for name, _, _ in slots]
        self.trace.append(SUPERVISION)

        sup_terms = []
        if slots:
            self.M.train()
            logits = self.M(torch.cat([c for _, c, _ in slots]))
            probs = probabilities(logits)
            offset = 0
            for _, content, target in slots:
                n = content.shape[0]
                p = probs[offset:offset + n]
                sup_terms.append(cross_entropy_masked(target, p, torch.ones(n, dtype=torch.bool)))
                offset += n
        else:
            log.debug("model update at iteration %d has no labeled samples", self.iteration)
        total, breakdown = total_coda({"cyc": cyc}, self.config.weights, sup_terms)
        if sup_terms:
            opt_list = [self.opt_M] + ([self.opt_G] if update_generator else [])
            for opt in opt_list:
                opt.zero_grad(set_to_none=True)
            (self.config.weights.lambda_sup * sum(sup_terms)).backward()
            for opt in opt_list:
                opt.step()
        return breakdown

    # -- loop --------------------------------------------------------------------

    def in_full_training(self, epoch: int) -> bool:
        return epoch <= self.config.switch_epoch

    def train_iteration(self, full_training: bool):
        batch_a, batch_b = self.draw_batches()
        rows = []
        if full_training:
            rows.append(("dis_update", self.step_dis_update(batch_a, batch_b)))
            rows.append(("gen_update", self.step_gen_update(batch_a, batch_b)))
            rows.append(("model_update", self.step_model_update(batch_a, batch_b)))
        else:
            rows.append(("model_update", self.step_model_update(batch_a, batch_b, update_generator=False)))
        self.iteration += 1
        return rows

    def train_epoch(self, writer=None):
        self.epoch += 1
        full = self.in_full_training(self.epoch)
        self.G.train()
        self.D.train()
        self.M.train()
        for _ in range(self.iterations_per_epoch):
            for routine, bd in self.train_iteration(full):
                if writer is not None:
                    writer.writerow([self.iteration, routine, repr(bd.cyc), repr(bd.adv_g), repr(bd.adv_d),
                                     repr(bd.sup), repr(bd.total)])

    # -- persistence -------------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "iteration": self.iteration,
            "G": self.G.state_dict(),
            "D": self.D.state_dict(),
            "M": self.M.state_dict(),
            "opt_G": self.opt_G.state_dict(),
            "opt_D": self.opt_D.state_dict(),
            "opt_M": self.opt_M.state_dict(),
            "rng": self.rng.bit_generator.state,
            "style_gen": self.style_gen.get_state(),
            "torch_rng": torch.get_rng_state(),
            "config": self.config.to_dict(),
            "config_hash": self.config_digest,
            "datasets": [d.name for d in self.registry],
        }

    def load_state_dict(self, state: dict):
        if state["config_hash"] != self.config_digest:
            log.warning("checkpoint config hash %s differs from %s", state["config_hash"], self.config_digest)
        self.epoch = state["epoch"]
        self.iteration = state["iteration"]
        self.G.load_state_dict(state["G"])
        self.D.load_state_dict(state["D"])
        self.M.load_state_dict(state["M"])
        self.opt_G.load_state_dict(state["opt_G"])
        self.opt_D.load_state_dict(state["opt_D"])
        self.opt_M.load_state_dict(state["opt_M"])
        self.rng.bit_generator.state = state["rng"]
        self.style_gen.set_state(state["style_gen"])
        torch.set_rng_state(state["torch_rng"])

    def save_checkpoint(self, out_dir) -> Path:
        path = Path(out_dir) / f"ckpt_{self.epoch}.bin"
        torch.save(self.state_dict(), path)
        return path

    def fit(self, out_dir=None, epochs: int | None = None) -> list:
        """Train up to ``epochs`` (default: config.epochs); returns written checkpoint paths."""
        target = self.config.epochs if epochs is None else epochs
        ckpt_epochs = set(self.config.resolved_checkpoint_epochs())
        paths = []
        log_file = None
        writer = None
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            log_path = out_dir / "train_log.csv"
            fresh = self.iteration == 0 or not log_path.exists()
            log_file = open(log_path, "w" if fresh else "a", newline="")
            writer = csv.writer(log_file)
            if fresh:
                writer.writerow(LOG_COLUMNS)
        try:
            while self.epoch < target:
                self.train_epoch(writer)
                log.info("epoch %d/%d done (%s)", self.epoch, self.config.epochs,
                         "full training" if self.in_full_training(self.epoch) else "supervision tuning")
                if out_dir is not None and self.epoch in ckpt_epochs:
                    paths.append(self.save_checkpoint(out_dir))
        finally:
            if log_file is not None:
                log_file.close()
        return paths


def run_experiment(config: TrainConfig, registry, out_dir=None, config_digest=None) -> list:
    """Full Training then Supervision Tuning; returns the checkpoint paths."""
    trainer = Trainer(config, registry, config_digest)
    return trainer.fit(out_dir)


def load_checkpoint(path) -> dict:
    return torch.load(path, map_location="cpu", weights_only=False)


def networks_from_checkpoint(state: dict):
    """Rebuild (G, D, M) in eval mode from a checkpoint dict."""
    config = TrainConfig.from_dict(state["config"])
    G, D, M = build_networks(config, len(state["datasets"]))
    G.load_state_dict(state["G"])
    D.load_state_dict(state["D"])
    M.load_state_dict(state["M"])
    for net in (G, D, M):
        net.eval()
    return G, D, M


def train_baseline(config: TrainConfig, registry, source_ids, epochs: int | None = None,
                   base_filters: int = 32, depth: int = 4) -> UNet:
    """Full U-Net trained from scratch on the labeled training samples of ``source_ids``."""
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    pool = []
    for k in source_ids:
        desc = registry[k]
        ds = open_dataset(desc)
        split = make_split(ds, config.seed, config.train_ratio)
        candidates = [i for i in split.train_indices if ds.has_mask(i, config.task)]
        labeled = apply_label_fraction(split.train_indices, desc.label_fraction(config.task), config.seed,
                                       candidates)
        pool += [(ds.image(i), ds.mask(i, config.task)) for i in sorted(labeled)]
    if not pool:
        raise ConfigurationError("no labeled data in the baseline source datasets")
    images = torch.from_numpy(np.stack([p[0] for p in pool])[:, None])
    masks = torch.from_numpy(np.stack([p[1] for p in pool])[:, None].astype(np.float32))
    model = UNet(1, base_filters, depth)
    opt = _adam(model.parameters(), config)
    n = len(pool)
    bs = min(config.batch_size, n)
    model.train()
    for _ in range(config.epochs if epochs is None else epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = torch.from_numpy(order[start:start + bs])
            if len(idx) < 2 and n >= 2:
                continue  # batch norm needs two samples
            probs = probabilities(model(images[idx]))
            loss = cross_entropy_masked(masks[idx], probs, torch.ones(len(idx), dtype=torch.bool))
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
    model.eval()
    return model
