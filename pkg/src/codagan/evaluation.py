"""Jaccard scoring, checkpoint-ensemble confidence intervals and latent embeddings."""
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import stats

from .conditioning import encode_onehot
from .data import make_split, open_dataset
from .segmenter import baseline_predict, predict
from .training import load_checkpoint, networks_from_checkpoint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int


def confusion_counts(pred_mask, gt_mask) -> ConfusionCounts:
    pred = np.asarray(pred_mask).astype(bool)
    gt = np.asarray(gt_mask).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def jaccard(pred_mask, gt_mask) -> float:
    """TP / (TP + FN + FP); two empty masks score 1.0."""
    c = confusion_counts(pred_mask, gt_mask)
    denom = c.tp + c.fn + c.fp
    return 1.0 if denom == 0 else c.tp / denom


@dataclass
class MetricSummary:
    values: list
    mean: float
    std: float
    half_width: float
    p: float = 0.05

    @property
    def ci(self) -> tuple:
        return self.mean - self.half_width, self.mean + self.half_width


def ensemble_ci(values, p: float = 0.05) -> MetricSummary:
    """Mean, sample std and two-sided Student-t half-width over checkpoint scores."""
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    if n < 2:
        raise ValueError(f"need at least 2 values for a confidence interval, got {n}")
    mean = float(v.mean())
    std = float(v.std(ddof=1))
    t = stats.t.ppf(1.0 - p / 2.0, df=n - 1)
    return MetricSummary(list(map(float, v)), mean, std, float(t * std / np.sqrt(n)), p)


@dataclass
class DatasetScore:
    dataset: str
    per_image: list
    sample_ids: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_image))

    @property
    def std(self) -> float:
        return float(np.std(self.per_image))


def _resolve_model(checkpoint):
    if isinstance(checkpoint, tuple):
        return checkpoint
    state = checkpoint if isinstance(checkpoint, dict) else load_checkpoint(checkpoint)
    G, _, M = networks_from_checkpoint(state)
    return G, M, state


def _test_items(dataset, split, task):
    """Test indices that carry a mask; raises when there are none."""
    idx = []
    if dataset.has_mask_dir(task):
        idx = [i for i in split.test_indices if dataset.has_mask(i, task)]
    if not idx:
        raise ValueError(f"dataset {dataset.name!r} has no labeled test split for task {task!r}")
    return idx


@torch.no_grad()
def evaluate_dataset(checkpoint, dataset, split=None, task=None, threshold=0.5, chunk=16) -> DatasetScore:
    """Per-image Jaccard of M on a dataset's test split.

    ``checkpoint`` is a path, a loaded checkpoint dict, or ``(G, M, state)``.
    Each image is encoded with its own dataset code.
    """
    G, M, state = _resolve_model(checkpoint)
    cfg = state["config"]
    task = task or cfg["task"]
    if split is None:
        split = make_split(dataset, cfg["seed"], cfg["train_ratio"])
    idx = _test_items(dataset, split, task)
    n_domains = len(state["datasets"])
    code = encode_onehot(dataset.id, n_domains)
    G.eval()
    M.eval()
    scores = []
    for start in range(0, len(idx), chunk):
        part = idx[start:start + chunk]
        x = torch.from_numpy(np.stack([dataset.image(i) for i in part])[:, None])
        pred = predict(M, G.encode(x, code), threshold).binarized.numpy()
        scores += [jaccard(pred[j, 0], dataset.mask(i, task)) for j, i in enumerate(part)]
    return DatasetScore(dataset.name, scores, [dataset.sample_ids[i] for i in idx])


@torch.no_grad()
def evaluate_baseline(model, dataset, split, task, threshold=0.5, chunk=16) -> DatasetScore:
    idx = _test_items(dataset, split, task)
    model.eval()
    scores = []
    for start in range(0, len(idx), chunk):
        part = idx[start:start + chunk]
        x = torch.from_numpy(np.stack([dataset.image(i) for i in part])[:, None])
        pred = baseline_predict(model, x, threshold).binarized.numpy()
        scores += [jaccard(pred[j, 0], dataset.mask(i, task)) for j, i in enumerate(part)]
    return DatasetScore(dataset.name, scores, [dataset.sample_ids[i] for i in idx])


@dataclass
class EmbeddingProjection:
    coords: np.ndarray  # n x 2
    dataset_ids: np.ndarray  # n
    sample_ids: list
    gaussians: dict  # dataset id -> (mean (2,), covariance (2, 2))
    dataset_names: list
    flat_dim: int


def embed_latents(contents: np.ndarray, dataset_ids, pca_dim=200, perplexity=30.0, seed=0):
    """PCA to at most ``pca_dim`` components, then a 2-D t-SNE, then one Gaussian per dataset."""
    from sklearn.decomposition import PCA
    from sklearn.manifold import TSNE
    from sklearn.mixture import GaussianMixture

    x = contents.reshape(contents.shape[0], -1).astype(np.float64)
    n = x.shape[0]
    k = min(pca_dim, n - 1, x.shape[1])
    reduced = PCA(n_components=k, random_state=seed).fit_transform(x)
    perplexity = min(perplexity, (n - 1) / 3.0)
    coords = TSNE(n_components=2, perplexity=perplexity, init="pca", random_state=seed).fit_transform(reduced)
    gaussians = {}
    dataset_ids = np.asarray(dataset_ids)
    for k_id in np.unique(dataset_ids):
        pts = coords[dataset_ids == k_id]
        gm = GaussianMixture(n_components=1, covariance_type="full", random_state=seed).fit(pts)
        gaussians[int(k_id)] = (gm.means_[0], gm.covariances_[0])
    return coords, gaussians


@torch.no_grad()
def embed_project(checkpoint, registry, samples_per_dataset=50, split="test", pca_dim=200,
                  perplexity=30.0, seed=0) -> EmbeddingProjection:
    """Project each dataset's content tensors into 2-D and fit a Gaussian per dataset."""
    if len(registry) < 2:
        raise ValueError("embedding needs at least two datasets")
    G, _, state = _resolve_model(checkpoint)
    cfg = state["config"]
    n_domains = len(state["datasets"])
    contents, ids, sample_ids = [], [], []
    for desc in registry:
        ds = open_dataset(desc)
        sp = make_split(ds, cfg["seed"], cfg["train_ratio"])
        pool = sp.test_indices if split == "test" else list(range(len(ds)))
        if len(pool) < 3:
            pool = list(range(len(ds)))
        pool = pool[:samples_per_dataset]
        if len(pool) < 3:
            raise ValueError(f"dataset {desc.name!r} has fewer than 3 samples to embed")
        x = torch.from_numpy(np.stack([ds.image(i) for i in pool])[:, None])
        contents.append(G.encode(x, encode_onehot(desc.id, n_domains)).content.numpy())
        ids += [desc.id] * len(pool)
        sample_ids += [ds.sample_ids[i] for i in pool]
    contents = np.concatenate(contents)
    coords, gaussians = embed_latents(contents, ids, pca_dim, perplexity, seed)
    return EmbeddingProjection(coords, np.asarray(ids), sample_ids, gaussians,
                               [d.name for d in registry], int(np.prod(contents.shape[1:])))


def separation(projection: EmbeddingProjection, dataset_id: int) -> dict:
    """Distance from one dataset's Gaussian mean to every other, in pooled standard deviations.

    The pooled standard deviation is the root of the average per-axis
    variance over all fitted Gaussians.
    """
    pooled_var = np.mean([np.trace(cov) / 2.0 for _, cov in projection.gaussians.values()])
    pooled_sd = float(np.sqrt(pooled_var))
    mu = projection.gaussians[dataset_id][0]
    return {k: float(np.linalg.norm(mu - m) / pooled_sd)
            for k, (m, _) in projection.gaussians.items() if k != dataset_id}
