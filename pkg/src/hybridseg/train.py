"""SGD training, checkpoints, and whole-scene prediction / evaluation."""
from __future__ import annotations

import io
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig, dump_config, parse_config
from .data import NormStats, Scene, compute_stats, cover_origins, normalize, patchify
from .fmm import inpaint
from .heads import UNKNOWN, combine_probs, multitask_loss
from .metrics import ConfusionMatrix, EvalReport, evaluate_maps
from .model import HybridSegNet, build_model
from .params import ParamStore
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

CKPT_MAGIC = b"HSCKPT1\n"


class DivergenceError(ArithmeticError):
    pass


class ConfigMismatchError(ValueError):
    pass


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Base rate divided by 10 for every drop epoch already reached (0-based)."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside 0..{cfg.epochs - 1}")
    drops = sum(1 for d in cfg.lr_drop_epochs if d <= epoch)
    return cfg.base_lr * 10.0 ** (-drops)


def sgd_step(params, velocity, lr: float, momentum: float, weight_decay: float) -> None:
    """In-place SGD with momentum and coupled weight decay:
    g' = g + wd * p;  v = m * v + g';  p = p - lr * v."""
    if len(params) != len(velocity):
        raise ValueError(f"{len(params)} parameters but {len(velocity)} velocity buffers")
    for p, v in zip(params, velocity):
        if v.shape != p.shape:
            raise ValueError(f"velocity shape {v.shape} != parameter shape {p.shape}")
        g = p.grad if p.grad is not None else 0.0
        if p.grad is not None and p.grad.shape != p.shape:
            raise ValueError(f"gradient shape {p.grad.shape} != parameter shape {p.shape}")
        v *= momentum
        v += g + weight_decay * p.data
        p.data -= lr * v


@dataclass
class Checkpoint:
    config: TrainConfig
    params: ParamStore
    buffers: ParamStore
    velocity: ParamStore
    stats: NormStats
    epoch: int = 0
    history: list = field(default_factory=list)

    @property
    def config_hash(self) -> str:
        return self.config.model.hash()

    def to_bytes(self) -> bytes:
        meta = {"epoch": self.epoch, "rng": {"seed": self.config.seed, "next_epoch": self.epoch},
                "config": dump_config(self.config), "config_hash": self.config_hash,
                "stats": self.stats.to_dict(), "history": self.history}
        buf = io.BytesIO()
        buf.write(CKPT_MAGIC)
        buf.write(b"meta=" + json.dumps(meta, sort_keys=True).encode("utf-8") + b"\n")
        for name in ("params", "buffers", "velocity"):
            buf.write(f"section={name}\n".encode("ascii"))
            getattr(self, name).write(buf)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        buf = io.BytesIO(blob)
        if buf.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise ValueError("not a checkpoint file")
        line = buf.readline().decode("utf-8")
        if not line.startswith("meta="):
            raise ValueError("checkpoint metadata missing")
        meta = json.loads(line[5:])
        stores = {}
        for name in ("params", "buffers", "velocity"):
            if buf.readline().decode("ascii").strip() != f"section={name}":
                raise ValueError(f"checkpoint section {name} missing")
            stores[name] = ParamStore.read(buf)
        cfg = parse_config(meta["config"])
        if cfg.model.hash() != meta["config_hash"]:
            raise ConfigMismatchError("checkpoint config does not match its recorded hash")
        return cls(cfg, stores["params"], stores["buffers"], stores["velocity"],
                   NormStats.from_dict(meta["stats"]), meta["epoch"], meta["history"])

    def save(self, path) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(self.to_bytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def build(self, expected_hash: str | None = None) -> HybridSegNet:
        if expected_hash is not None and expected_hash != self.config_hash:
            raise ConfigMismatchError(f"checkpoint config hash {self.config_hash[:12]} "
                                      f"does not match expected {expected_hash[:12]}")
        model = HybridSegNet(self.config.model)
        model.load_params(self.params)
        model.load_buffers(self.buffers)
        return model.eval()


def _training_arrays(scenes: list[Scene], stats: NormStats, patch: int, stride: int):
    imgs, dsms, labs = [], [], []
    for s in scenes:
        ps = patchify(normalize(s, stats), patch, stride)
        i, d, l = ps.arrays()
        imgs.append(i), dsms.append(d), labs.append(l)
    return np.concatenate(imgs), np.concatenate(dsms), np.concatenate(labs)


def train(cfg: TrainConfig, train_scenes: list[Scene], val_scenes: list[Scene] | None = None,
          out_dir=None, resume: Checkpoint | None = None, stop_epoch: int | None = None) -> Checkpoint:
    """Train from scratch (or continue ``resume``) up to ``stop_epoch`` (default: all epochs)."""
    if not train_scenes:
        raise ValueError("empty training set")
    if resume is not None:
        if resume.config_hash != cfg.model.hash():
            raise ConfigMismatchError("resume checkpoint was trained with a different model config")
        stats, start, history = resume.stats, resume.epoch, list(resume.history)
    else:
        stats, start, history = compute_stats(train_scenes), 0, []
    model = build_model(cfg.model, cfg.seed)
    if cfg.patch % model.input_multiple:
        raise ValueError(f"patch {cfg.patch} must be a multiple of {model.input_multiple}")
    params = model.parameters()
    names = sorted(p for p, _ in model.named_parameters())
    if resume is not None:
        model.load_params(resume.params)
        model.load_buffers(resume.buffers)
        velocity = [np.array(resume.velocity[n].data) for n in names]
    else:
        velocity = [np.zeros_like(p.data) for p in params]

    img, dsm, lab = _training_arrays(train_scenes, stats, cfg.patch, cfg.stride)
    n = len(img)
    end = cfg.epochs if stop_epoch is None else min(stop_epoch, cfg.epochs)

    def snapshot(epoch):
        return Checkpoint(cfg, model.param_store(), model.buffer_store(),
                          ParamStore({k: Tensor(v.copy()) for k, v in zip(names, velocity)}),
                          stats, epoch, list(history))

    for epoch in range(start, end):
        lr = lr_at(epoch, cfg)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        model.train()
        losses = []
        for b in range(0, n, cfg.batch_size):
            idx = order[b:b + cfg.batch_size]
            model.zero_grad()
            heads = model(Tensor(img[idx]), Tensor(dsm[idx]))
            loss = multitask_loss(heads, lab[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"loss became {value} at epoch {epoch}, batch {b // cfg.batch_size} (lr={lr})")
            loss.backward()
            sgd_step(params, velocity, lr, cfg.momentum, cfg.weight_decay)
            if not all(np.isfinite(p.data).all() for p in params):
                raise DivergenceError(f"parameters became non-finite at epoch {epoch}, "
                                      f"batch {b // cfg.batch_size} (lr={lr})")
            losses.append(value)
        record = {"epoch": epoch, "lr": lr, "loss": float(np.mean(losses))}
        if val_scenes and cfg.val_every and (epoch + 1) % cfg.val_every == 0:
            rep = evaluate(snapshot(epoch + 1), val_scenes, model=model)
            record.update(val_oa=rep.overall_accuracy, val_kappa=rep.kappa, val_mean_f1=rep.mean_f1)
        history.append(record)
        log.info("epoch %d lr %.5g loss %.6f", epoch, lr, record["loss"])
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            snapshot(epoch + 1).save(os.path.join(out_dir, "last.ckpt"))
    return snapshot(end)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def predict_probs(model: HybridSegNet, stats: NormStats, scene: Scene, patch: int,
                  stride: int | None = None, batch: int = 16) -> np.ndarray:
    """Per-head positive probabilities (K,H,W), averaged over overlapping patches."""
    stride = stride or max(1, patch // 2)
    s = normalize(scene, stats)
    h, w = s.shape
    origins = [(r, c) for r in cover_origins(h, patch, stride) for c in cover_origins(w, patch, stride)]
    k = model.cfg.num_classes
    acc = np.zeros((k, h, w))
    hits = np.zeros((h, w))
    model.eval()
    with no_grad():
        for b in range(0, len(origins), batch):
            chunk = origins[b:b + batch]
            img = np.stack([s.image[r:r + patch, c:c + patch].transpose(2, 0, 1) for r, c in chunk])
            dsm = np.stack([s.dsm[None, r:r + patch, c:c + patch] for r, c in chunk])
            heads = model(Tensor(img), Tensor(dsm))
            pos = np.stack([np.exp(hd.data[:, 1]) for hd in heads], axis=1)
            for (r, c), p in zip(chunk, pos):
                acc[:, r:r + patch, c:c + patch] += p
                hits[r:r + patch, c:c + patch] += 1
    return acc / hits


def predict(ckpt: Checkpoint, scene: Scene, model: HybridSegNet | None = None,
            expected_hash: str | None = None) -> np.ndarray:
    """Full-scene label map with no UNKNOWN pixels."""
    model = model if model is not None else ckpt.build(expected_hash)
    probs = predict_probs(model, ckpt.stats, scene, ckpt.config.patch)
    seg = combine_probs(probs, ckpt.config.model.positive_threshold)
    if (seg == UNKNOWN).all():
        # nothing cleared the threshold, so there is no seed to march from
        log.warning("scene %s: no head exceeded the threshold; using argmax", scene.id)
        return probs.argmax(axis=0).astype(np.uint8)
    return inpaint(seg)


def evaluate(ckpt: Checkpoint, scenes: list[Scene], radius: float = 3,
             model: HybridSegNet | None = None) -> EvalReport:
    model = model if model is not None else ckpt.build()
    pairs = [(s.labels, predict(ckpt, s, model)) for s in scenes]
    return evaluate_maps(pairs, radius, ckpt.config.model.num_classes)


def pixel_accuracy(ckpt: Checkpoint, scenes: list[Scene], model: HybridSegNet | None = None) -> float:
    """Un-eroded pixelwise accuracy of full-scene predictions."""
    model = model if model is not None else ckpt.build()
    cm = ConfusionMatrix(ckpt.config.model.num_classes)
    for s in scenes:
        cm.accumulate(s.labels, predict(ckpt, s, model))
    return float(np.trace(cm.counts) / cm.total)
