"""Acceptance criteria, one test each, run at their stated tolerances.

The desk experiments (criteria 7 to 11) train on the synthetic benchmark in
configs/desk.yaml and take roughly an hour on one CPU core. Each criterion
records a PASS/FAIL line that is repeated in the terminal summary.
"""
import csv
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch
import yaml

from codagan.cli import main as cli
from codagan.conditioning import encode_onehot
from codagan.config import load_config
from codagan.data import DatasetDescriptor, DatasetRegistry, make_split, open_dataset
from codagan.evaluation import embed_project, ensemble_ci, evaluate_baseline, jaccard, separation
from codagan.losses import LossWeights, adversarial_d, adversarial_g, cross_entropy_masked, cycle_l1, total_coda
from codagan.synthetic import DomainStyle, SyntheticRecipe
from codagan.training import (
    ROUTINE_SCHEDULE, TrainConfig, Trainer, load_checkpoint, networks_from_checkpoint, parameter_digest,
    train_baseline,
)
from codagan.translation import Generator

DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk.yaml"
SOURCE, SHIFTED, ARTIFACT = "source", "shifted", "artifact"


# -- helpers -------------------------------------------------------------------

def central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def grad_rel_err(loss_of_tensor, x):
    t = torch.tensor(x, requires_grad=True)
    loss_of_tensor(t).backward()
    numeric = central_diff(lambda a: float(loss_of_tensor(torch.tensor(a))), x)
    return float(np.max(np.abs(t.grad.numpy() - numeric)) / max(np.max(np.abs(numeric)), 1e-12))


def brute_jaccard(pred, gt):
    tp = fp = fn = 0
    for p, g in zip(np.ravel(pred), np.ravel(gt)):
        tp += bool(p and g)
        fp += bool(p and not g)
        fn += bool(g and not p)
    return 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)


def read_report(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return {r["dataset"]: float(r["jaccard_mean"]) for r in rows if r["checkpoint_epoch"] == "ensemble"}


class DeskRuns:
    """Lazily trains and evaluates desk runs through the command-line interface, once per key."""

    def __init__(self, root: Path):
        self.root = root
        self.runs = {}
        self.seconds = {}

    def config_path(self, shifted_fraction):
        if shifted_fraction == 0.0:
            return DESK_CONFIG
        doc = yaml.safe_load(DESK_CONFIG.read_text())
        for d in doc["datasets"]:
            if d["name"] == SHIFTED:
                d["label_fractions"]["lungs"] = shifted_fraction
        path = self.root / f"desk_shifted_{shifted_fraction}.yaml"
        path.write_text(yaml.safe_dump(doc, sort_keys=False))
        return path

    def get(self, seed=0, shifted_fraction=0.0, tag="a"):
        key = (seed, shifted_fraction, tag)
        if key not in self.runs:
            out = self.root / f"seed{seed}_frac{shifted_fraction}_{tag}"
            cfg = str(self.config_path(shifted_fraction))
            start = time.perf_counter()
            assert cli(["train", "--config", cfg, "--out", str(out), "--seed", str(seed)]) == 0
            self.seconds[key] = time.perf_counter() - start
            assert cli(["eval", "--config", cfg, "--checkpoint", str(out / "ckpt_*.bin"), "--out", str(out),
                        "--seed", str(seed)]) == 0
            self.runs[key] = out
        return self.runs[key]

    def report(self, **kw):
        return read_report(self.get(**kw) / "eval_report.csv")


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    return DeskRuns(tmp_path_factory.mktemp("desk"))


@pytest.fixture(scope="session")
def desk_config():
    return load_config(DESK_CONFIG)


# -- 1 to 6: contracts and oracles -----------------------------------------------

def test_c1_latent_shape(criterion):
    torch.manual_seed(0)
    G = Generator(6, base_filters=32)
    start = time.perf_counter()
    with torch.no_grad():
        content = G.encode(torch.zeros(1, 1, 256, 256), encode_onehot(0, 6)).content
    elapsed = time.perf_counter() - start
    n = content[0].numel()
    ok = tuple(content.shape[1:]) == (128, 64, 64) and n == 524_288 and elapsed < 1.0
    criterion(1, ok, f"latent {tuple(content.shape[1:])} = {n} elements in {elapsed:.2f}s")
    assert ok


def test_c2_loss_oracles(criterion):
    f64 = lambda shape, v: torch.full(shape, v, dtype=torch.float64)
    s = (2, 1, 8, 8)
    hand = [
        (float(cross_entropy_masked(torch.ones(s, dtype=torch.float64), f64(s, 0.5), [True, True])), math.log(2)),
        (float(cross_entropy_masked(torch.ones(s, dtype=torch.float64), f64(s, 1 - 1e-7), [True, True])), 1e-7),
        (float(adversarial_d(f64(s, 1.0), f64(s, 0.0))), 0.0),
        (float(adversarial_d(f64(s, 0.5), f64(s, 0.5))), 0.25),
        (float(adversarial_d(f64(s, 0.0), f64(s, 1.0))), 1.0),
        (float(adversarial_g(f64(s, 1.0))), 0.0),
        (float(adversarial_g(f64(s, 0.0))), 0.5),
        (float(adversarial_g(f64(s, 0.5))), 0.125),
        (float(cycle_l1(f64(s, 0.3), f64(s, 0.3))), 0.0),
        (float(cycle_l1(f64(s, 0.2), f64(s, 0.5))), 0.3),
        (float(cycle_l1(f64(s, -1.0), f64(s, 1.0))), 2.0),
        (total_coda({"cyc": 0.3, "adv_g": 0.125}, LossWeights(10, 1, 100), [0.6931])[1].total, 72.435),
        (total_coda({}, LossWeights(), [])[1].total, 0.0),
    ]
    worst_value = max(abs(a - b) for a, b in hand)

    rng = np.random.default_rng(0)
    y = (rng.random((2, 1, 8, 8)) > 0.5).astype(np.float64)
    real = rng.normal(size=(1, 1, 8, 8))
    x = rng.normal(size=(1, 1, 8, 8))
    away = x + rng.choice([-1, 1], size=x.shape) * rng.uniform(0.1, 0.5, x.shape)
    grads = [
        grad_rel_err(lambda t: cross_entropy_masked(torch.tensor(y), t, [True, False]),
                     rng.uniform(0.05, 0.95, (2, 1, 8, 8))),
        grad_rel_err(lambda t: adversarial_d(torch.tensor(real), t), rng.normal(size=(1, 1, 8, 8))),
        grad_rel_err(lambda t: adversarial_d(t, torch.tensor(x)), real.copy()),
        grad_rel_err(adversarial_g, rng.normal(size=(1, 1, 8, 8))),
        grad_rel_err(lambda t: cycle_l1(torch.tensor(x), t), away),
    ]
    worst_grad = max(grads)
    ok = worst_value <= 1e-6 and worst_grad <= 1e-3
    criterion(2, ok, f"max |value - hand| = {worst_value:.2e}, max gradient rel err = {worst_grad:.2e}")
    assert ok


def _small_registry(fracs, count=12, size=16):
    styles = [DomainStyle(), DomainStyle(gamma=1.8, noise=0.03), DomainStyle(gamma=0.5, border_artifact=True)]
    return DatasetRegistry([
        DatasetDescriptor(f"d{i}", SyntheticRecipe(f"d{i}", styles[i], count=count, seed=i, size=size), {"lungs": f})
        for i, f in enumerate(fracs)])


def test_c3_masking_exactness(criterion):
    checks = []
    y = torch.ones(3, 1, 8, 8)
    p = torch.rand(3, 1, 8, 8, requires_grad=True)
    loss = cross_entropy_masked(y, p, [False, False, False])
    loss.backward()
    checks.append(float(loss.detach()) == 0.0 and torch.count_nonzero(p.grad) == 0)

    trainer = Trainer(TrainConfig(epochs=2, batch_size=2, iterations_per_epoch=1, base_filters=4, dis_filters=4),
                      _small_registry((1.0, 1.0)))
    expected = {
        ((False, False), (False, False)): [],
        ((True, True), (False, False)): ["M(I_a)", "M(I_a->b)"],
        ((False, False), (True, True)): ["M(I_b)", "M(I_b->a)"],
        ((True, False), (False, True)): ["M(I_a)", "M(I_a->b)", "M(I_b)", "M(I_b->a)"],
    }
    for (fa, fb), slots in expected.items():
        a, b = trainer.draw_batches()
        a.labeled_flags, b.labeled_flags = torch.tensor(fa), torch.tensor(fb)
        m_before = parameter_digest(trainer.M)
        bd = trainer.step_model_update(a, b)
        checks.append(trainer.sup_slots == slots)
        if not slots:
            checks.append(bd.sup == 0.0 and parameter_digest(trainer.M) == m_before)
    ok = all(checks)
    criterion(3, ok, f"{sum(checks)}/{len(checks)} masking checks")
    assert ok


def test_c4_routine_schedule(criterion):
    cfg = TrainConfig(epochs=10, batch_size=2, iterations_per_epoch=2, base_filters=4, dis_filters=4, seed=0)
    trainer = Trainer(cfg, _small_registry((1.0, 0.0, 0.0), size=32))
    traces = {name: set() for name in ROUTINE_SCHEDULE}
    frozen_digests = set()
    start = time.perf_counter()

    def traced(name, step):
        def run(*args, **kw):
            out = step(*args, **kw)
            traces[name].add(tuple(trainer.trace))
            if not trainer.in_full_training(trainer.epoch):
                frozen_digests.add((parameter_digest(trainer.G), parameter_digest(trainer.D)))
            return out
        return run

    trainer.step_dis_update = traced("dis_update", trainer.step_dis_update)
    trainer.step_gen_update = traced("gen_update", trainer.step_gen_update)
    trainer.step_model_update = traced("model_update", trainer.step_model_update)
    trainer.fit(epochs=cfg.switch_epoch)
    at_switch = (parameter_digest(trainer.G), parameter_digest(trainer.D))
    trainer.fit()
    elapsed = time.perf_counter() - start
    schedule_ok = all(traces[name] == {ROUTINE_SCHEDULE[name]} for name in ROUTINE_SCHEDULE)
    freeze_ok = frozen_digests == {at_switch}
    ok = schedule_ok and freeze_ok and elapsed < 300
    criterion(4, ok, f"traces match table: {schedule_ok}; G/D unchanged over supervision tuning: {freeze_ok}; "
                     f"{elapsed:.0f}s")
    assert ok


def test_c5_jaccard_oracle(criterion):
    mismatches = 0
    grids = [np.array(c).reshape(2, 4) for c in itertools.product([0, 1], repeat=8)]
    for pred in grids:
        for gt in grids:
            mismatches += jaccard(pred, gt) != brute_jaccard(pred, gt)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        pred = rng.random((16, 16)) < rng.random()
        gt = rng.random((16, 16)) < rng.random()
        mismatches += jaccard(pred, gt) != brute_jaccard(pred, gt)
    criterion(5, mismatches == 0, f"{mismatches} mismatches over {len(grids) ** 2} exhaustive + 1000 random pairs")
    assert mismatches == 0


def test_c6_ensemble_ci(criterion):
    s = ensemble_ci([91, 92, 93, 92, 92], p=0.05)
    expected_half = 2.7764451051977987 * math.sqrt(0.5) / math.sqrt(5)  # t_{0.975,4} * s / sqrt(n)
    ok = abs(s.mean - 92.0) <= 1e-6 and abs(s.half_width - expected_half) <= 1e-6 and abs(s.half_width - 0.878) < 5e-4
    criterion(6, ok, f"mean {s.mean:.6f}, half-width {s.half_width:.6f}")
    assert ok


# -- 7 to 11: desk experiments ---------------------------------------------------

def _baseline_score(desk_config, seed):
    cfg = TrainConfig.from_dict({**desk_config.train.to_dict(), "seed": seed})
    registry = desk_config.registry()
    model = train_baseline(cfg, registry, [registry.by_name(SOURCE).id], base_filters=cfg.base_filters)
    ds = open_dataset(registry.by_name(SHIFTED))
    return evaluate_baseline(model, ds, make_split(ds, seed, cfg.train_ratio), cfg.task).mean


def test_c7_uda_margin(criterion, desk, desk_config):
    passed, lines = 0, []
    for seed in (0, 1, 2):
        report = desk.report(seed=seed)
        base = _baseline_score(desk_config, seed)
        ok = report[SHIFTED] >= 0.70 and report[SHIFTED] - base >= 0.10
        passed += ok
        lines.append(f"seed {seed}: shifted {report[SHIFTED]:.3f} vs baseline {base:.3f}, "
                     f"artifact {report[ARTIFACT]:.3f}")
    slowest = max(desk.seconds[(s, 0.0, "a")] for s in (0, 1, 2))
    ok = passed >= 2 and slowest <= 3 * 3600
    criterion(7, ok, f"{passed}/3 seeds; " + "; ".join(lines) + f"; slowest run {slowest / 60:.1f} min")
    assert ok


def test_c8_label_fraction_monotonicity(criterion, desk):
    scores = [desk.report(seed=0, shifted_fraction=f)[SHIFTED] for f in (0.0, 0.1, 1.0)]
    ok = all(later >= earlier - 0.02 for earlier, later in zip(scores, scores[1:]))
    criterion(8, ok, "shifted Jaccard at 0/10/100% labels: " + ", ".join(f"{s:.3f}" for s in scores))
    assert ok


def _probe_cycle(G, probe, n_domains):
    with torch.no_grad():
        errs = []
        for a, b in itertools.permutations(range(n_domains), 2):
            x = probe[a]
            back = G.translate(G.translate(x, encode_onehot(a, n_domains), encode_onehot(b, n_domains)),
                               encode_onehot(b, n_domains), encode_onehot(a, n_domains))
            errs.append(float((back - x).abs().mean()))
    return float(np.mean(errs))


def test_c9_cycle_signal(criterion, desk, desk_config):
    run = desk.get(seed=0)
    registry = desk_config.registry()
    cfg = desk_config.train
    probe = []
    for desc in registry:
        ds = open_dataset(desc)
        held_out = make_split(ds, cfg.seed, cfg.train_ratio).test_indices[:8]
        probe.append(torch.from_numpy(np.stack([ds.image(i) for i in held_out])[:, None]))
    initial_G = Trainer(cfg, registry).G.eval()  # same seed, same initialization as the run
    trained_G, _, _ = networks_from_checkpoint(load_checkpoint(run / f"ckpt_{cfg.epochs}.bin"))
    before = _probe_cycle(initial_G, probe, len(registry))
    after = _probe_cycle(trained_G, probe, len(registry))
    ok = after <= 0.5 * before
    criterion(9, ok, f"probe cycle L1 {before:.4f} -> {after:.4f} ({after / before:.1%})")
    assert ok


def test_c10_embedding_separation(criterion, desk, desk_config):
    run = desk.get(seed=0)
    registry = desk_config.registry()
    start = time.perf_counter()
    proj = embed_project(run / f"ckpt_{desk_config.train.epochs}.bin", registry,
                         desk_config.evaluation.embed_samples, seed=desk_config.train.seed)
    elapsed = time.perf_counter() - start
    dist = separation(proj, registry.by_name(ARTIFACT).id)
    ok = min(dist.values()) > 2.0 and elapsed < 600
    names = {d.id: d.name for d in registry}
    criterion(10, ok, "artifact mean to " + ", ".join(f"{names[k]} {v:.2f}" for k, v in dist.items())
              + f" pooled SD; {elapsed:.0f}s")
    assert ok


def test_c11_determinism(criterion, desk):
    first, second = desk.get(seed=0, tag="a"), desk.get(seed=0, tag="b")
    same = {name: (first / name).read_bytes() == (second / name).read_bytes()
            for name in ("train_log.csv", "eval_report.csv")}
    ok = all(same.values())
    criterion(11, ok, ", ".join(f"{k} identical: {v}" for k, v in same.items()))
    assert ok
