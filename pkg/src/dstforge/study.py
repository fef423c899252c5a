"""Desk-scale robustness study: a small stable of models on one dataset.

Trains dense and sparse variants over several seeds, builds the corrupted
test grid once, and collects robustness accuracies plus frequency-attenuation
curves. Finished runs are recognized by their saved config text and reused,
so a crashed or repeated invocation only pays for what is missing.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint
from .config import RunConfig, parse_config
from .corruption import KINDS, CorruptionSpec, corrupt_images
from .data import ImageSet, corrupted_set_filename, load_idx, load_image_set, save_image_set
from .metrics import MetricsReport, accuracy
from .models import Model
from .spectral import RACurve, attenuate_images, write_ra_curves_svg
from .train import run_train

DEFAULT_RADII = (2, 4, 6, 8, 10)
DEFAULT_SEEDS = (1, 2, 3)

CANONICAL_IDX_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class StudyError(RuntimeError):
    pass


def find_idx_dataset(root: str | None = None) -> dict[str, str] | None:
    """Locate a canonical IDX dataset (train/t10k image+label files).

    Searches `root` (default: $DSTFORGE_DATA or ./data) and its first-level
    subdirectories; returns path dict or None when any file is missing.
    """
    root = root or os.environ.get("DSTFORGE_DATA") or "data"
    candidates = [root]
    if os.path.isdir(root):
        candidates += sorted(
            os.path.join(root, d) for d in os.listdir(root)
            if os.path.isdir(os.path.join(root, d)))
    for base in candidates:
        paths = {k: os.path.join(base, v) for k, v in CANONICAL_IDX_NAMES.items()}
        if all(os.path.exists(p) for p in paths.values()):
            return paths
    return None


@dataclass(frozen=True)
class StudyMethod:
    label: str
    method: str
    sparsity: float = 0.0


DEFAULT_METHODS = (
    StudyMethod("dense", "dense"),
    StudyMethod("set_s50", "set", 0.5),
    StudyMethod("set_s95", "set", 0.95),
    StudyMethod("rigl_s50", "rigl", 0.5),
)


def study_config_text(m: StudyMethod, seed: int, epochs: int,
                      data: dict[str, str], out_dir: str,
                      model: str = "mlp:784-300-100-10") -> str:
    lines = [
        "[data]",
        "dataset = fashion-mnist",
        "format = idx",
        f"train = {data['train_images']}",
        f"train_labels = {data['train_labels']}",
        f"test = {data['test_images']}",
        f"test_labels = {data['test_labels']}",
        "classes = 10",
        "",
        "[train]",
        f"model = {model}",
        f"epochs = {epochs}",
        f"seed = {seed}",
        "lr = 0.1",
        "bs = 100",
        "lrs = step",
        "wd = 1e-4",
        "momentum = 0.9",
        "eval_every = 5",
        "",
        "[output]",
        f"dir = {out_dir}",
    ]
    if m.method != "dense":
        lines += [
            "",
            "[dst]",
            f"method = {m.method}",
            f"sparsity = {m.sparsity}",
            "sparsity_dist = erk",
            "delta_t = 500",
            "p = 0.1",
        ]
    return "\n".join(lines) + "\n"


def ensure_run(m: StudyMethod, seed: int, epochs: int, data: dict[str, str],
               root: str, echo=None) -> tuple[RunConfig, str]:
    """Train one (method, seed) cell unless its artifacts already exist."""
    run_dir = os.path.join(root, f"{m.label}-seed{seed}")
    os.makedirs(run_dir, exist_ok=True)
    text = study_config_text(m, seed, epochs, data, run_dir)
    cfg_path = os.path.join(run_dir, "config.ini")
    ckpt = os.path.join(run_dir, "final.ckpt")
    if os.path.exists(cfg_path):
        with open(cfg_path) as fh:
            if fh.read() != text:
                raise StudyError(
                    f"{run_dir} holds results for a different config; remove it to rerun")
        if os.path.exists(ckpt):
            return parse_config(text), ckpt
    with open(cfg_path, "w") as fh:
        fh.write(text)
    cfg = parse_config(text)
    if echo:
        echo(f"training {m.label} seed {seed}")
    run_train(cfg)
    return cfg, ckpt


def _corrupted_path(corr_dir: str, base: str, kind: str, severity: int) -> str:
    return os.path.join(corr_dir, corrupted_set_filename(base, kind, severity))


def ensure_corrupted_set(clean: ImageSet, corr_dir: str, base: str, kind: str,
                         severity: int, seed: int) -> ImageSet:
    path = _corrupted_path(corr_dir, base, kind, severity)
    if os.path.exists(path):
        return load_image_set(path, name=f"{base}-{kind}-s{severity}")
    spec = CorruptionSpec(kind=kind, severity=severity, seed=seed)
    images = corrupt_images(clean.images, spec)
    s = ImageSet(images=images, labels=clean.labels.copy(),
                 name=f"{base}-{kind}-s{severity}", fmt=clean.fmt)
    os.makedirs(corr_dir, exist_ok=True)
    save_image_set(s, path)
    # read back so cached and fresh invocations see identical uint8 rounding
    return load_image_set(path, name=s.name)


@dataclass
class StudyResult:
    labels: tuple[str, ...]
    seeds: tuple[int, ...]
    radii: tuple[int, ...]
    checkpoints: dict = field(default_factory=dict)  # (label, seed) -> path
    robustness: dict = field(default_factory=dict)  # (label, seed) -> MetricsReport
    ra: dict = field(default_factory=dict)  # (label, seed, mode) -> RACurve
    clean_accuracy: dict = field(default_factory=dict)  # (label, seed) -> float

    def robustness_mean(self, label: str) -> float:
        return float(np.mean([self.robustness[(label, s)].mean for s in self.seeds]))

    def ra_mean(self, label: str, mode: str) -> list[tuple[int, float]]:
        """Per-radius accuracy averaged over seeds."""
        out = []
        for i, r in enumerate(self.radii):
            vals = [self.ra[(label, s, mode)].points[i][1] for s in self.seeds]
            out.append((r, float(np.mean(vals))))
        return out

    def to_json(self) -> str:
        doc = {
            "seeds": list(self.seeds),
            "radii": list(self.radii),
            "mean_robustness_accuracy": {
                label: self.robustness_mean(label) for label in self.labels},
            "clean_accuracy": {
                f"{label}-seed{seed}": acc
                for (label, seed), acc in sorted(self.clean_accuracy.items())},
            "ra_mean": {
                f"{label}-{mode}": [[r, a] for r, a in self.ra_mean(label, mode)]
                for label in self.labels for mode in ("low", "high")},
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def run_study(data: dict[str, str], root: str, epochs: int = 20,
              seeds=DEFAULT_SEEDS, methods=DEFAULT_METHODS,
              radii=DEFAULT_RADII, corruption_seed: int = 0,
              echo=None) -> StudyResult:
    """Train the stable, evaluate the corruption grid and attenuation sweep.

    Everything lands under `root`: one run directory per (method, seed), the
    corrupted sets under corrupted/, and study.json + RA-curve SVGs on top.
    """
    seeds = tuple(seeds)
    methods = tuple(methods)
    result = StudyResult(labels=tuple(m.label for m in methods), seeds=seeds,
                         radii=tuple(radii))

    models: dict[tuple[str, int], Model] = {}
    test = None
    for m in methods:
        for seed in seeds:
            cfg, ckpt = ensure_run(m, seed, epochs, data, root, echo=echo)
            result.checkpoints[(m.label, seed)] = ckpt
            models[(m.label, seed)] = load_checkpoint(ckpt).build_model()
            if test is None:
                test = load_idx(data["test_images"], data["test_labels"],
                                name="test", classes=cfg.classes)

    for key, model in models.items():
        result.clean_accuracy[key] = accuracy(model, test)

    # corruption grid: one set in memory at a time, every model scored on it
    corr_dir = os.path.join(root, "corrupted")
    base = os.path.basename(data["test_images"])
    cells: dict[tuple[str, int], dict] = {key: {} for key in models}
    for kind in KINDS:
        if echo:
            echo(f"corruption {kind}")
        for severity in (1, 2, 3, 4, 5):
            s = ensure_corrupted_set(test, corr_dir, base, kind, severity, corruption_seed)
            for key, model in models.items():
                cells[key][(kind, severity)] = accuracy(model, s)
    for key, cell in cells.items():
        result.robustness[key] = MetricsReport(
            cells=cell, mean=float(np.mean(list(cell.values()))),
            model_id=f"{key[0]}-seed{key[1]}")

    # attenuation sweep: each filtered set is built once, shared by all models
    points: dict[tuple[str, int, str], list] = {
        (label, seed, mode): []
        for (label, seed) in models for mode in ("low", "high")}
    for mode in ("low", "high"):
        for r in radii:
            if echo:
                echo(f"attenuation {mode} r={r}")
            filtered = ImageSet(images=attenuate_images(test.images, mode, r),
                                labels=test.labels, name=f"att-{mode}-{r}", fmt=test.fmt)
            for (label, seed), model in models.items():
                points[(label, seed, mode)].append((r, accuracy(model, filtered)))
    for (label, seed, mode), pts in points.items():
        result.ra[(label, seed, mode)] = RACurve(
            mode=mode, points=pts, model_id=f"{label}-seed{seed}")

    with open(os.path.join(root, "study.json"), "w") as fh:
        fh.write(result.to_json() + "\n")
    curves = []
    for label in result.labels:
        for mode in ("low", "high"):
            curves.append(RACurve(mode=mode, points=result.ra_mean(label, mode),
                                  model_id=label))
    write_ra_curves_svg(curves, os.path.join(root, "ra_curves.svg"))
    return result
