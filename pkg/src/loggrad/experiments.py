"""Experiment commands: dataset preparation, training sweeps, similarity, reconstruction.

Every command writes its result rows to ``<out>/results.csv``, replacing
earlier rows of the same experiment id, so re-running a command with an
identical config reproduces the file byte for byte.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import analysis
from .config import ExperimentConfig, TrainSettings, config_hash, run_seed
from .preproc import GammaSpec, InputFormat, codes_to_gray8, prepare_batch
from .sensor_io import (
    MAX_VALUE,
    DatasetError,
    LabeledDataset,
    SplitSpec,
    load_pascal_raw,
    save_pgm,
    save_pgm8,
    scale_brightness,
    split_dataset,
    write_manifest,
)
from .synthetic import SceneParams, synth_dataset
from .tinynet import (
    TrainConfig,
    classifier_spec,
    evaluate,
    init_params,
    load_checkpoint,
    predict,
    reconstruction_spec,
    save_checkpoint,
    train,
)
from .tinynet.model import conv_layer_names
from .tinynet.training import loss_and_accuracy

log = logging.getLogger(__name__)

RESULT_FIELDS = ("exp", "fmt", "c1", "c2", "b", "split", "metric", "value", "seed", "config_hash")
CLASSIFY_EXP = "classify"       # seed namespace shared by all classifier runs


@dataclass(frozen=True)
class ResultRow:
    exp: str
    fmt: str
    c1: int
    c2: int
    b: float
    split: str
    metric: str
    value: float
    seed: int
    config_hash: str

    def cells(self) -> list[str]:
        return [self.exp, self.fmt, str(self.c1), str(self.c2), repr(float(self.b)), self.split,
                self.metric, repr(float(self.value)), str(self.seed), self.config_hash]


def checkpoint_name(exp: str, fmt: str, c1: int, c2: int) -> str:
    return f"{exp}_{InputFormat(fmt).value}_c1{c1}_c2{c2}.ckpt"


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def read_results(path) -> list[list[str]]:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != RESULT_FIELDS:
        raise ValueError(f"{path} is not a results file")
    return rows[1:]


def write_results(path, rows: list[ResultRow]) -> None:
    """Replace all earlier rows of the experiments in ``rows``, then write atomically."""
    path = Path(path)
    exps = {r.exp for r in rows}
    kept = [r for r in read_results(path) if r[0] not in exps]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_FIELDS)
    w.writerows(kept)
    w.writerows(r.cells() for r in rows)
    _atomic_text(path, buf.getvalue())


def _train_config(s: TrainSettings, seed: int, loss: str = "xent") -> TrainConfig:
    return TrainConfig(epochs=s.epochs, batch_size=s.batch_size, lr=s.lr, lr_decay=s.lr_decay,
                       beta1=s.beta1, beta2=s.beta2, eps=s.eps, seed=seed, loss=loss)


class Workspace:
    """Config plus output directory, with the dataset and splits loaded once."""

    def __init__(self, cfg: ExperimentConfig, out=None):
        self.cfg = cfg
        self.out = Path(out or cfg.out or "runs")
        self.out.mkdir(parents=True, exist_ok=True)
        self.hash = config_hash(cfg)
        self.q3, self.q5 = cfg.quant.specs()
        self.gamma = GammaSpec(cfg.gamma)
        self._inputs: dict = {}

    @property
    def results_path(self) -> Path:
        return self.out / "results.csv"

    def subdir(self, name: str) -> Path:
        d = self.out / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    @cached_property
    def dataset(self) -> LabeledDataset:
        src = self.cfg.source
        if src.kind == "synthetic":
            return synth_dataset(src.n_images, seed=self.cfg.seed, illum_range=src.illum_range,
                                 noise_std=src.noise_std,
                                 params=SceneParams(size=self.cfg.resolution))
        root = Path(src.path)
        if not root.is_dir():
            raise DatasetError(f"dataset directory {root} does not exist")
        ds = load_pascal_raw(root, size=self.cfg.resolution)
        ds.paths = [str(Path(p).relative_to(root)) for p in ds.paths]
        return ds

    @cached_property
    def splits(self) -> dict[str, LabeledDataset]:
        tr, va, te = split_dataset(self.dataset, SplitSpec(*self.cfg.split, seed=self.cfg.seed))
        return {"train": tr, "val": va, "test": te}

    def inputs(self, split: str, fmt, b: float = 1.0) -> np.ndarray:
        """Network inputs for a split; brightness is applied to a copy, never stored."""
        fmt = InputFormat(fmt).value
        key = (split, fmt, b)
        if key in self._inputs:
            return self._inputs[key]
        images = self.splits[split].images
        if b != 1.0:
            images = np.stack([scale_brightness(im, b) for im in images])
        x = prepare_batch(images, fmt, self.q3, self.q5, self.gamma, self.cfg.shift)
        if b == 1.0:
            self._inputs[key] = x
        return x

    def data(self, split: str, fmt, b: float = 1.0):
        return self.inputs(split, fmt, b), self.splits[split].labels

    def run_meta(self, fmt, seed: int, settings: TrainSettings, extra: dict | None = None) -> dict:
        meta = {
            "fmt": InputFormat(fmt).value,
            "seed": seed,
            "master_seed": self.cfg.seed,
            "config_hash": self.hash,
            "config": self.cfg.model_dump(mode="json"),
            "train": settings.model_dump(mode="json"),
            "q3": list(self.q3.thresholds),
            "q5": list(self.q5.thresholds),
            "gamma": self.cfg.gamma,
            "shift": self.cfg.shift,
            "resolution": self.cfg.resolution,
        }
        meta.update(extra or {})
        return meta

    # -- classifier runs -------------------------------------------------

    def train_key(self, fmt, c1: int, c2: int, settings: TrainSettings) -> dict:
        """Everything a trained classifier depends on; used for checkpoint reuse."""
        c = self.cfg
        return {"source": c.source.model_dump(mode="json"), "resolution": c.resolution,
                "split": list(c.split), "quant": c.quant.model_dump(mode="json"),
                "gamma": c.gamma, "shift": c.shift, "seed": c.seed,
                "arch": [c.arch.kernel, c.arch.pool, c.arch.padding], "fmt": InputFormat(fmt).value,
                "c1": c1, "c2": c2, "train": settings.model_dump(mode="json")}

    def classifier(self, fmt, c1: int, c2: int, settings: TrainSettings | None = None,
                   exp: str = CLASSIFY_EXP):
        """Train (or reload an identical earlier run of) a 2conv1fc model.

        Returns (spec, params, meta, checkpoint path).
        """
        settings = settings or self.cfg.train
        fmt = InputFormat(fmt).value
        path = self.subdir("checkpoints") / checkpoint_name(exp, fmt, c1, c2)
        key = self.train_key(fmt, c1, c2, settings)
        if path.exists():
            spec, params, meta = load_checkpoint(path)
            if meta.get("train_key") == key:
                log.info("reusing %s", path.name)
                return spec, params, meta, path
        a = self.cfg.arch
        spec = classifier_spec(c1, c2, kernel=a.kernel, pool=a.pool,
                               input_size=self.cfg.resolution, padding=a.padding)
        seed = run_seed(self.cfg.seed, exp, fmt, c1)
        log.info("training %s c1=%d c2=%d (seed %d)", fmt, c1, c2, seed)
        params, hist = train(spec, init_params(spec, seed, settings.init), self.data("train", fmt),
                             self.data("val", fmt), self.data("test", fmt),
                             _train_config(settings, seed))
        meta = self.run_meta(fmt, seed, settings, {
            "exp": exp, "c1": c1, "c2": c2, "train_key": key,
            "test_acc": hist.test_acc, "best_epoch": hist.best_epoch,
            "history": {"train_loss": hist.train_loss, "val_loss": hist.val_loss,
                        "val_acc": hist.val_acc},
            "deviations": ["desk-scale resolution and dataset"] if self.cfg.profile == "desk" else [],
        })
        save_checkpoint(path, spec, params, meta)
        hist.to_csv(self.subdir("history") / path.with_suffix(".csv").name)
        return spec, params, meta, path


# --------------------------------------------------------------------------
# previews


def preview_gray8(x: np.ndarray, fmt) -> np.ndarray:
    """8-bit view of one prepared (H, W, 1) input for visual inspection."""
    fmt = InputFormat(fmt)
    v = x[:, :, 0]
    if fmt is InputFormat.RAW16:
        return np.clip(np.rint(v * 255), 0, 255).astype(np.uint8)
    if fmt is InputFormat.JPEG8:
        return np.rint(v * 255).astype(np.uint8)
    if fmt is InputFormat.LOGGRAD_FP:
        return np.clip(np.rint(v * 64 + 128), 0, 255).astype(np.uint8)
    return codes_to_gray8(v.astype(np.int64))


def cmd_prepare(cfg: ExperimentConfig, out=None, n_preview: int = 4) -> dict:
    """Build the dataset, write the split manifest and per-format previews."""
    ws = Workspace(cfg, out)
    sp = ws.splits
    manifest = ws.out / "manifest.json"
    write_manifest(manifest, {k: list(v.paths) for k, v in sp.items()}, cfg.seed)
    pdir = ws.subdir("previews")
    images = sp["train"].images[:n_preview]
    for fmt in InputFormat:
        x = prepare_batch(images, fmt, ws.q3, ws.q5, ws.gamma, cfg.shift)
        tile = np.concatenate([preview_gray8(xi, fmt) for xi in x], axis=1)
        save_pgm8(tile, pdir / f"{fmt.value}.pgm")
    save_pgm(np.concatenate(list(images), axis=1), pdir / "raw16_linear.pgm")
    counts = {k: len(v) for k, v in sp.items()}
    log.info("prepared %s", counts)
    return {"manifest": manifest, "counts": counts, "previews": pdir}


# --------------------------------------------------------------------------
# single runs


def cmd_train(cfg: ExperimentConfig, fmt, c1: int, c2: int | None = None, out=None) -> dict:
    ws = Workspace(cfg, out)
    c2 = cfg.arch.c2 if c2 is None else c2
    spec, params, meta, path = ws.classifier(fmt, c1, c2)
    rows = [ResultRow("train", meta["fmt"], c1, c2, 1.0, "test", "accuracy",
                      meta["test_acc"], meta["seed"], ws.hash)]
    write_results(ws.results_path, rows)
    return {"checkpoint": path, "test_acc": meta["test_acc"], "rows": rows}


def cmd_eval(cfg: ExperimentConfig, checkpoint, b: float = 1.0, split: str = "test",
             out=None) -> dict:
    """Evaluate a saved model on a split of the configured dataset."""
    checkpoint = Path(checkpoint)
    if not checkpoint.exists():
        raise FileNotFoundError(f"checkpoint {checkpoint} does not exist")
    ws = Workspace(cfg, out)
    spec, params, meta = load_checkpoint(checkpoint)
    fmt = meta["fmt"]
    x, y = ws.data(split, fmt, b)
    loss, acc = loss_and_accuracy(spec, params, x, y)
    c1, c2 = meta.get("c1", 0), meta.get("c2", 0)
    rows = [ResultRow("eval", fmt, c1, c2, b, split, "accuracy", acc, meta["seed"], ws.hash),
            ResultRow("eval", fmt, c1, c2, b, split, "loss", loss, meta["seed"], ws.hash)]
    write_results(ws.results_path, rows)
    return {"accuracy": acc, "loss": loss, "rows": rows}


# --------------------------------------------------------------------------
# sweeps


def cmd_sweep_channels(cfg: ExperimentConfig, out=None, formats=None, c1_list=None) -> list[ResultRow]:
    """Test accuracy of 2conv1fc per (format, c1) with fixed c2."""
    ws = Workspace(cfg, out)
    rows = []
    c2 = cfg.arch.c2
    for fmt in formats or cfg.formats:
        for c1 in c1_list or cfg.arch.c1_list:
            _, _, meta, _ = ws.classifier(fmt, c1, c2)
            rows.append(ResultRow("sweep_channels", meta["fmt"], c1, c2, 1.0, "test", "accuracy",
                                  meta["test_acc"], meta["seed"], ws.hash))
    write_results(ws.results_path, rows)
    return rows


def cmd_sweep_brightness(cfg: ExperimentConfig, out=None, formats=None) -> list[ResultRow]:
    """Accuracy vs brightness for models trained at nominal brightness."""
    ws = Workspace(cfg, out)
    bc = cfg.brightness
    rows = []
    for fmt in formats or bc.formats:
        spec, params, meta, _ = ws.classifier(fmt, bc.c1, cfg.arch.c2)
        for b in bc.factors:
            acc = evaluate(spec, params, *ws.data("test", fmt, b))
            rows.append(ResultRow("sweep_brightness", meta["fmt"], bc.c1, cfg.arch.c2, b, "test",
                                  "accuracy", acc, meta["seed"], ws.hash))
    write_results(ws.results_path, rows)
    return rows


# --------------------------------------------------------------------------
# filter similarity


def similarity_reports(params, threshold: float, bins: int) -> list[analysis.SimilarityReport]:
    return [analysis.SimilarityReport.from_params(params, int(name[4:]), threshold, bins)
            for name in conv_layer_names(params)]


def top_bin_fraction(report: analysis.SimilarityReport) -> float:
    cum = report.cum_counts
    return float(cum[-1] - cum[-2]) / float(cum[-1]) if len(cum) > 1 else 1.0


def cmd_similarity(cfg: ExperimentConfig, checkpoint=None, out=None, formats=None) -> dict:
    """Per-layer similarity reports, similar-filter galleries and pair counts.

    With ``checkpoint`` only that model is analysed; otherwise a
    (c1, c2) = similarity.c1/c2 model is trained per format.
    """
    ws = Workspace(cfg, out)
    sc = cfg.similarity
    models = []
    if checkpoint is not None:
        checkpoint = Path(checkpoint)
        if not checkpoint.exists():
            raise FileNotFoundError(f"checkpoint {checkpoint} does not exist")
        spec, params, meta = load_checkpoint(checkpoint)
        models.append((checkpoint.stem, params, meta))
    else:
        for fmt in formats or sc.formats:
            spec, params, meta, path = ws.classifier(fmt, sc.c1, sc.c2, sc.train, exp="similarity")
            models.append((path.stem, params, meta))
    sdir = ws.subdir("similarity")
    rows, reports, by_format = [], {}, {}
    for stem, params, meta in models:
        reps = similarity_reports(params, sc.threshold, sc.bins)
        reports[stem] = reps
        by_format[meta.get("fmt", stem)] = reps
        fmt, c1, c2 = meta.get("fmt", "?"), meta.get("c1", 0), meta.get("c2", 0)
        for rep in reps:
            rep.check()
            _atomic_text(sdir / f"{stem}_L{rep.layer}.json", rep.to_json())
            analysis.export_filter_gallery(params, rep.layer, rep.pairs,
                                           sdir / "gallery" / stem)
            for metric, value in ((f"pairs_L{rep.layer}", rep.n_pairs),
                                  (f"top_bin_fraction_L{rep.layer}", top_bin_fraction(rep))):
                rows.append(ResultRow("similarity", fmt, c1, c2, 1.0, "train", metric, value,
                                      meta.get("seed", 0), ws.hash))
    write_results(ws.results_path, rows)
    return {"reports": reports, "by_format": by_format, "rows": rows}


# --------------------------------------------------------------------------
# reconstruction


def _gray_view(v: np.ndarray, scale: float) -> np.ndarray:
    return np.clip(np.rint(v / scale * 255), 0, 255).astype(np.uint8)


def reconstruction_grid(inputs, preds, targets, fmt) -> np.ndarray:
    """Rows of [input gradient | reconstruction | ground truth] as 8-bit gray."""
    rows = []
    for x, p, t in zip(inputs, preds, targets):
        scale = max(float(t.max()), 1e-12)
        rows.append(np.concatenate([preview_gray8(x, fmt), _gray_view(p[:, :, 0], scale),
                                    _gray_view(t[:, :, 0], scale)], axis=1))
    return np.concatenate(rows, axis=0)


def cmd_reconstruct(cfg: ExperimentConfig, out=None, formats=None) -> dict:
    """Train 2conv to map log-gradient inputs back to linear RAW (scaled to [0, 1])."""
    ws = Workspace(cfg, out)
    rc = cfg.recon
    rdir = ws.subdir("reconstruct")
    n = min(rc.n_train, len(ws.splits["train"]))
    targets = {s: ws.splits[s].images[..., None] / MAX_VALUE for s in ("train", "val", "test")}
    rows, results = [], {}
    for fmt in formats or rc.formats:
        fmt = InputFormat(fmt).value
        spec = reconstruction_spec(rc.channels, rc.kernel, cfg.resolution)
        seed = run_seed(cfg.seed, "reconstruct", fmt, rc.channels)
        x_tr, y_tr = ws.inputs("train", fmt)[:n], targets["train"][:n]
        x_va, y_va = ws.inputs("val", fmt), targets["val"]
        x_te, y_te = ws.inputs("test", fmt), targets["test"]
        params, hist = train(spec, init_params(spec, seed, rc.train.init), (x_tr, y_tr), (x_va, y_va),
                             (x_te, y_te), _train_config(rc.train, seed, loss="mse"))
        final = evaluate(spec, params, x_tr, y_tr)
        path = rdir / checkpoint_name("reconstruct", fmt, rc.channels, 1)
        save_checkpoint(path, spec, params, ws.run_meta(fmt, seed, rc.train, {
            "exp": "reconstruct", "n_train": n, "initial_train_mse": hist.initial_train_loss,
            "final_train_mse": final, "best_epoch": hist.best_epoch}))
        k = min(rc.grid_rows, len(x_te))
        grid = reconstruction_grid(x_te[:k], predict(spec, params, x_te[:k]), y_te[:k], fmt)
        grid_path = rdir / f"grid_{fmt}.pgm"
        save_pgm8(grid, grid_path)
        for split, metric, value in (("train", "mse_initial", hist.initial_train_loss),
                                     ("train", "mse_final", final),
                                     ("test", "mse", hist.test_loss)):
            rows.append(ResultRow("reconstruct", fmt, rc.channels, 1, 1.0, split, metric, value,
                                  seed, ws.hash))
        results[fmt] = {"initial": hist.initial_train_loss, "final": final,
                        "checkpoint": path, "grid": grid_path, "history": hist}
    write_results(ws.results_path, rows)
    return {"results": results, "rows": rows}
