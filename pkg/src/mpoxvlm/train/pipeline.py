"""Staged training: MAE, supervised classifier, contrastive VL, text-only
language-model pretraining, adapter alignment and LoRA fine-tuning, with
checkpoints and exact resume.

Run directory::

    run.json                       plan, seed, data hash, config
    losses.csv                     step, stage, loss, lr, seed, config_hash
    vocab.txt                      text tokenizer
    ckpt/<stage>/final.bin         trained groups at the end of the stage
    ckpt/<stage>/best.bin          trained groups at the best validation point
    ckpt/<stage>/state.bin         resumable state (weights, optimizer, record)

Row-independent stages (encoders and text pretraining) may live in a separate
``encoder_dir`` so several ablation rows share one run per seed.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from mpoxvlm.config import RunConfig
from mpoxvlm.data.manifest import DatasetManifest, data_hash, load_manifest, load_png
from mpoxvlm.data.synth import sub_seed
from mpoxvlm.data.vqa import lexicon_corpus
from mpoxvlm.encoders import (
    CaptionEncoder,
    ContrastiveHead,
    EncoderConfig,
    MaeConfig,
    augment,
    build_encoders,
    contrastive_loss,
    mae_loss,
    preprocess,
    normalize_pixels,
)
from mpoxvlm.eval.rows import ROWS
from mpoxvlm.fusion.lm import LmConfig, LoraConfig, attach_lora, build_adapters, build_lm
from mpoxvlm.fusion.model import MpoxVLM, pad_layouts
from mpoxvlm.fusion.sequence import text_layout
from mpoxvlm.fusion.tokenizer import TextTokenizer
from mpoxvlm.train import checkpoint
from mpoxvlm.train.optim import AdamW, clip_grad_norm, cosine_lr, early_stop

ENCODER_STAGES = ("mae", "classify", "vl")
LM_STAGES = ("align", "finetune")
# row-independent stages, stored once per seed when an encoder_dir is shared
SHARED_STAGES = ENCODER_STAGES + ("lm_pretrain",)
STAGE_ORDER = ENCODER_STAGES + ("lm_pretrain",) + LM_STAGES
GROUPS = ("patch_embed", "f_clip", "f_v", "mae_decoder", "vl_heads", "w_clip", "w_v", "lm_base", "lora")
TRAINABLE = {
    "mae": ("patch_embed", "f_v", "mae_decoder"),
    "classify": ("f_v",),
    "vl": ("f_clip", "vl_heads"),
    "lm_pretrain": ("lm_base",),
    "align": ("w_clip", "w_v"),
    "finetune": ("lora",),
}


class PipelineError(RuntimeError):
    pass


class MissingPrerequisite(PipelineError):
    pass


class FreezeViolation(PipelineError):
    pass


class StageAborted(PipelineError):
    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class StageSpec:
    name: str
    trainable: tuple
    frozen: tuple
    requires: tuple
    steps: int
    batch_size: int
    lr: float
    eval_every: int
    patience: int


@dataclass(frozen=True)
class StagePlan:
    row: str
    stages: tuple

    @property
    def names(self) -> tuple:
        return tuple(s.name for s in self.stages)

    def get(self, name: str) -> StageSpec:
        for s in self.stages:
            if s.name == name:
                return s
        raise PipelineError(f"stage {name!r} is not part of the plan for row {self.row!r} ({self.names})")

    def to_json(self) -> dict:
        return {"row": self.row, "stages": [asdict(s) for s in self.stages]}


def stage_requires(name: str, row: str) -> tuple:
    r = ROWS[row]
    if name == "mae":
        return ()
    if name in ("classify", "vl"):
        return ("mae",)
    if name == "lm_pretrain":
        return ()
    if name == "align":
        return ("mae", "vl", "lm_pretrain") + (("classify",) if r.use_classifier_token else ())
    return ("align",)


def plan_stages(row: str) -> tuple:
    r = ROWS[row]
    if not r.use_llm:
        return ("mae", "classify")
    return tuple(
        s for s in STAGE_ORDER if s != "classify" or r.use_classifier_token
    )


def build_plan(config: RunConfig, row: str = None) -> StagePlan:
    row = row or config.row
    specs = []
    for name in plan_stages(row):
        sc = config.stages[name]
        trainable = TRAINABLE[name]
        specs.append(
            StageSpec(
                name=name,
                trainable=trainable,
                frozen=tuple(g for g in GROUPS if g not in trainable),
                requires=stage_requires(name, row),
                steps=sc.steps,
                batch_size=sc.batch_size,
                lr=sc.lr,
                eval_every=sc.eval_every,
                patience=sc.patience,
            )
        )
    return StagePlan(row, tuple(specs))


def stage_key(config: RunConfig, stage: str, seed: int, row: str = None) -> str:
    """Fingerprint of everything that determines a stage's result."""
    row = row or config.row
    upto = STAGE_ORDER[: STAGE_ORDER.index(stage) + 1]
    d = {
        "seed": seed,
        "data": {k: v for k, v in asdict(config.data).items() if k != "dir"},
        "encoder": asdict(config.encoder),
        "optim": asdict(config.optim),
        "stages": {s: asdict(config.stages[s]) for s in upto},
    }
    if stage == "lm_pretrain":
        d = {k: v for k, v in d.items() if k in ("seed", "data", "optim")}
        d["stages"] = {stage: asdict(config.stages[stage])}
    if stage == "lm_pretrain" or stage in LM_STAGES:
        d["lm"] = asdict(config.lm)
    if stage in LM_STAGES:
        d["row"] = row
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------- data


@dataclass
class DataBundle:
    manifest: DatasetManifest
    data_hash: str
    images: torch.Tensor  # (N, H, W, 3) float32, standardised
    labels: torch.Tensor  # (N,) long, 1 = mpox
    instances: list
    caption_ids: torch.Tensor  # (N, T) long, right-padded
    caption_class: torch.Tensor  # (N,) long, equal captions share a class
    index: dict  # split -> LongTensor of row indices

    def split(self, name: str) -> torch.Tensor:
        if name not in self.index:
            raise PipelineError(f"unknown split {name!r}")
        return self.index[name]


def load_data(directory, image_size: int, tokenizer: TextTokenizer) -> DataBundle:
    directory = Path(directory)
    manifest = load_manifest(directory)
    records = manifest.records
    images = np.stack([preprocess(load_png(directory / r.image), image_size) for r in records])
    captions = [tokenizer.encode(r.caption) for r in records]
    width = max(len(c) for c in captions)
    cap = torch.full((len(records), width), tokenizer.pad_id, dtype=torch.long)
    for i, c in enumerate(captions):
        cap[i, : len(c)] = torch.tensor(c)
    classes = {c: i for i, c in enumerate(sorted({r.caption for r in records}))}
    index = {
        s: torch.tensor([i for i, r in enumerate(records) if r.split == s], dtype=torch.long)
        for s in ("train", "val", "test")
    }
    return DataBundle(
        manifest=manifest,
        data_hash=data_hash(directory),
        images=normalize_pixels(torch.from_numpy(images).float()),
        labels=torch.tensor([int(r.label) for r in records], dtype=torch.long),
        instances=[r.vqa for r in records],
        caption_ids=cap,
        caption_class=torch.tensor([classes[r.caption] for r in records], dtype=torch.long),
        index=index,
    )


def text_tokenizer() -> TextTokenizer:
    return TextTokenizer.from_corpus(lexicon_corpus())


# ---------------------------------------------------------------- model


class Components:
    """Every trainable module, addressed by parameter group."""

    def __init__(self, config: RunConfig, vocab_size: int, seed: int):
        e, lm = config.encoder, config.lm
        self.enc_cfg = EncoderConfig(e.image_size, e.patch, e.dim, e.depth, e.heads)
        mae = MaeConfig(e.mask_ratio, e.dec_dim, e.dec_depth, e.dec_heads)
        self.patch_tokenizer, self.vl_encoder, self.vit, self.mae_decoder = build_encoders(
            self.enc_cfg, mae, sub_seed(seed, 10)
        )
        g = torch.Generator().manual_seed(sub_seed(seed, 11))
        self.caption_encoder = CaptionEncoder(vocab_size, e.dim, e.contrastive_dim)
        self.contrastive_head = ContrastiveHead(e.dim, e.contrastive_dim)
        for m in (self.caption_encoder, self.contrastive_head):
            for p in m.parameters():
                if p.dim() > 1:
                    torch.nn.init.normal_(p, std=0.02, generator=g)
                elif p is not self.contrastive_head.logit_scale:
                    torch.nn.init.zeros_(p)
        self.adapters = build_adapters(e.dim, lm.adapter_hidden, lm.dim, sub_seed(seed, 12))
        self.lm = build_lm(vocab_size, LmConfig(lm.dim, lm.depth, lm.heads, lm.max_len), sub_seed(seed, 13))
        attach_lora(self.lm, LoraConfig(lm.lora_rank, lm.lora_alpha, tuple(lm.lora_targets)), sub_seed(seed, 14))
        self.mask_ratio = e.mask_ratio

    def groups(self) -> dict:
        lm_named = list(self.lm.named_parameters())
        return {
            "patch_embed": list(self.patch_tokenizer.named_parameters()),
            "f_clip": list(self.vl_encoder.named_parameters()),
            "f_v": list(self.vit.named_parameters()),
            "mae_decoder": list(self.mae_decoder.named_parameters()),
            "vl_heads": [("caption." + n, p) for n, p in self.caption_encoder.named_parameters()]
            + [("head." + n, p) for n, p in self.contrastive_head.named_parameters()],
            "w_clip": list(self.adapters.clip.named_parameters()),
            "w_v": list(self.adapters.cls.named_parameters()),
            "lm_base": [(n, p) for n, p in lm_named if "lora_" not in n],
            "lora": [(n, p) for n, p in lm_named if "lora_" in n],
        }

    def arrays(self, groups) -> dict:
        all_groups = self.groups()
        return {f"{g}/{n}": p.detach().clone() for g in groups for n, p in all_groups[g]}

    @torch.no_grad()
    def load_arrays(self, arrays: dict) -> None:
        named = {f"{g}/{n}": p for g, items in self.groups().items() for n, p in items}
        for key, value in arrays.items():
            if key not in named:
                raise checkpoint.CheckpointError(f"checkpoint array {key!r} matches no parameter")
            target = named[key]
            value = torch.as_tensor(value)
            if tuple(value.shape) != tuple(target.shape):
                raise checkpoint.CheckpointError(
                    f"checkpoint array {key!r} has shape {tuple(value.shape)}, expected {tuple(target.shape)}"
                )
            target.copy_(value)

    def group_bytes(self, group: str) -> bytes:
        return checkpoint.param_bytes(self.groups()[group])

    def set_trainable(self, groups) -> list:
        params = []
        for g, items in self.groups().items():
            for n, p in items:
                p.requires_grad_(g in groups)
                if g in groups:
                    params.append((f"{g}/{n}", p))
        return params

    def model(self, tokenizer: TextTokenizer, row: str) -> MpoxVLM:
        return MpoxVLM(
            self.patch_tokenizer, self.vl_encoder, self.vit, self.adapters, self.lm, tokenizer, ROWS[row].include
        )

    def eval(self):
        for m in (self.patch_tokenizer, self.vl_encoder, self.vit, self.mae_decoder, self.adapters, self.lm):
            m.eval()


@torch.no_grad()
def encode_all(comp: Components, images: torch.Tensor, batch_size: int = 64):
    """Frozen VL patch features (N, k, d_v) and CLS features (N, d_v)."""
    clips, clss = [], []
    for s in range(0, images.shape[0], batch_size):
        tokens = comp.patch_tokenizer(images[s : s + batch_size])
        clips.append(comp.vl_encoder(tokens))
        clss.append(comp.vit(tokens)[0])
    return torch.cat(clips), torch.cat(clss)


# ---------------------------------------------------------------- records


@dataclass
class RunRecord:
    stage: str
    seed: int
    steps: int
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    val: list = field(default_factory=list)  # [(step, value)]
    best_step: int = None
    best_value: float = None
    stopped_early: bool = False
    completed: bool = False
    checkpoints: dict = field(default_factory=dict)
    frozen_hashes: dict = field(default_factory=dict)  # group -> [before, after]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "RunRecord":
        d = dict(d)
        d["val"] = [tuple(v) for v in d["val"]]
        return cls(**d)


def _sha(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


# ---------------------------------------------------------------- pipeline


class Pipeline:
    """Trains one seed of one ablation row."""

    def __init__(self, config: RunConfig, seed: int, run_dir, data_dir=None, encoder_dir=None, row: str = None):
        self.config = config
        self.seed = int(seed)
        self.row = row or config.row
        self.plan = build_plan(config, self.row)
        self.run_dir = Path(run_dir)
        self.encoder_dir = Path(encoder_dir) if encoder_dir is not None else self.run_dir
        self.tokenizer = text_tokenizer()
        self.data = load_data(data_dir or config.data.dir, config.encoder.image_size, self.tokenizer)
        self.comp = Components(config, len(self.tokenizer), self.seed)
        self._features = None
        self._layouts = None
        self._text = None
        self.records = {}

    # paths
    def stage_dir(self, stage: str) -> Path:
        base = self.encoder_dir if stage in SHARED_STAGES else self.run_dir
        return base / "ckpt" / stage

    def has_final(self, stage: str) -> bool:
        path = self.stage_dir(stage) / "final.bin"
        if not path.is_file():
            return False
        side = json.loads(path.with_suffix(".json").read_text())
        return side.get("stage_key") == stage_key(self.config, stage, self.seed, self.row)

    def _meta(self, stage: str, **extra) -> dict:
        return {
            "stage": stage,
            "seed": self.seed,
            "row": self.row,
            "config_hash": self.config.hash(),
            "stage_key": stage_key(self.config, stage, self.seed, self.row),
            "data_hash": self.data.data_hash,
            **extra,
        }

    def write_run_json(self) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        doc = {
            "seed": self.seed,
            "row": self.row,
            "plan": self.plan.to_json(),
            "data_hash": self.data.data_hash,
            "config_hash": self.config.hash(),
            "encoder_dir": str(self.encoder_dir),
            "config": self.config.to_json(),
        }
        (self.run_dir / "run.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        self.tokenizer.save(self.run_dir / "vocab.txt")

    def load_stage(self, stage: str, which: str = "final") -> None:
        arrays, _ = checkpoint.load(self.stage_dir(stage) / f"{which}.bin")
        self.comp.load_arrays(arrays)

    def load_trained(self, upto: str = None) -> None:
        """Load every completed stage of the plan in order."""
        for name in self.plan.names:
            if not self.has_final(name):
                raise MissingPrerequisite(f"missing checkpoint for stage {name!r} in {self.stage_dir(name)}")
            self.load_stage(name)
            if name == upto:
                break
        self._features = None

    # batches
    def batch_indices(self, stage: str, step: int, batch_size: int) -> torch.Tensor:
        """Fixed, seed-derived batch order: epoch permutations keyed by (seed, stage, epoch)."""
        train = self.data.split("train")
        n = len(train)
        per_epoch = max(1, n // batch_size)
        epoch, pos = divmod(step, per_epoch)
        rng = np.random.default_rng(sub_seed(self.seed, 100 + STAGE_ORDER.index(stage), epoch))
        perm = rng.permutation(n)
        take = perm[pos * batch_size : pos * batch_size + batch_size]
        return train[torch.from_numpy(take)]

    def features(self):
        if self._features is None:
            self.comp.eval()
            self._features = encode_all(self.comp, self.data.images)
        return self._features

    def layouts(self):
        if self._layouts is None:
            model = self.comp.model(self.tokenizer, self.row)
            self._layouts = model.layouts(self.data.instances)
        return self._layouts

    def _lm_loss(self, idx: torch.Tensor) -> torch.Tensor:
        clip, cls = self.features()
        layouts = self.layouts()
        ids, mask = pad_layouts([layouts[i] for i in idx.tolist()], self.tokenizer.pad_id)
        model = self.comp.model(self.tokenizer, self.row)
        return model.loss(clip[idx], cls[idx], ids, mask)

    def text_ids(self):
        """Right-padded text-only sequences of every sample, with and without context."""
        if self._text is None:
            pad = self.tokenizer.pad_id
            self._text = tuple(
                pad_layouts([text_layout(inst, self.tokenizer, ctx) for inst in self.data.instances], pad)[0]
                for ctx in (True, False)
            )
        return self._text

    def _text_loss(self, idx: torch.Tensor) -> torch.Tensor:
        """Next-token NLL over every text token of both prompt layouts."""
        lm, pad = self.comp.lm, self.tokenizer.pad_id
        total, count = 0.0, 0
        for ids in self.text_ids():
            ids = ids[idx]
            ids = ids[:, : int((ids != pad).sum(1).max())]
            logp = lm(lm.tok_emb(ids[:, :-1])).log_softmax(-1)
            target = ids[:, 1:]
            keep = (target != pad).to(logp.dtype)
            total = total - (logp.gather(-1, target.unsqueeze(-1)).squeeze(-1) * keep).sum()
            count += keep.sum()
        return total / count

    def step_loss(self, stage: str, step: int, idx: torch.Tensor) -> torch.Tensor:
        """Training loss of one batch; encoder stages augment unless ``step < 0``."""
        c, d = self.comp, self.data
        if stage in LM_STAGES:
            return self._lm_loss(idx)
        if stage == "lm_pretrain":
            return self._text_loss(idx)
        g = torch.Generator().manual_seed(sub_seed(self.seed, 200 + STAGE_ORDER.index(stage), max(step, 0)))
        images = augment(d.images[idx], g) if step >= 0 else d.images[idx]
        if stage == "mae":
            return mae_loss(c.patch_tokenizer, c.vit, c.mae_decoder, images, c.mask_ratio, g)
        if stage == "classify":
            cls, _ = c.vit(c.patch_tokenizer(images))
            return F.cross_entropy(c.vit.head(cls), d.labels[idx])
        if stage == "vl":
            img = c.contrastive_head(c.vl_encoder(c.patch_tokenizer(images)))
            txt = c.caption_encoder(d.caption_ids[idx], self.tokenizer.pad_id)
            return contrastive_loss(img, txt, c.contrastive_head.logit_scale, d.caption_class[idx])
        raise PipelineError(f"unknown stage {stage!r}")

    @torch.no_grad()
    def validate(self, stage: str) -> float:
        """Validation loss: reconstruction (mae), cross-entropy (classify),
        contrastive (vl), text NLL (lm_pretrain) or answer NLL (align, finetune)."""
        idx = self.data.split("val")
        if stage == "mae":
            g = torch.Generator().manual_seed(sub_seed(self.seed, 299))
            c = self.comp
            return float(mae_loss(c.patch_tokenizer, c.vit, c.mae_decoder, self.data.images[idx], c.mask_ratio, g))
        if stage == "lm_pretrain":
            return float(self._text_loss(idx))
        if stage in LM_STAGES:
            total, count = 0.0, 0
            for s in range(0, len(idx), 64):
                part = idx[s : s + 64]
                total += float(self._lm_loss(part)) * len(part)
                count += len(part)
            return total / count
        return float(self.step_loss(stage, -1, idx))  # step -1: no augmentation

    # the stage loop
    def run_stage(self, stage: str, stop_after: int = None, resume: bool = True) -> RunRecord:
        spec = self.plan.get(stage)
        for req in spec.requires:
            if not self.has_final(req):
                raise MissingPrerequisite(
                    f"stage {stage!r} needs a completed {req!r} stage; missing {self.stage_dir(req) / 'final.bin'}"
                )
        for req in self.plan.names[: self.plan.names.index(stage)]:
            if self.has_final(req):
                self.load_stage(req)
        self._features = None
        out = self.stage_dir(stage)
        out.mkdir(parents=True, exist_ok=True)
        self.write_run_json()

        if resume and self.has_final(stage):
            self.load_stage(stage)
            rec = RunRecord.from_json(json.loads((out / "record.json").read_text()))
            self.records[stage] = rec
            return rec

        params = self.comp.set_trainable(spec.trainable)
        trainable_tensors = [p for _, p in params]
        before = {g: self.comp.group_bytes(g) for g in spec.frozen}
        o = self.config.optim
        opt = AdamW(params, lr=spec.lr, weight_decay=o.weight_decay, betas=(o.beta1, o.beta2), eps=o.eps)
        rec = RunRecord(stage=stage, seed=self.seed, steps=spec.steps)
        best = None
        start = 0
        state_path = out / "state.bin"
        if resume and state_path.is_file():
            arrays, side = checkpoint.load(state_path)
            if side.get("stage_key") == stage_key(self.config, stage, self.seed, self.row):
                self.comp.load_arrays({k[len("param/") :]: v for k, v in arrays.items() if k.startswith("param/")})
                opt.load_state_tensors(
                    {k[len("opt/") :]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith("opt/")},
                    side["opt_step"],
                )
                best = {k[len("best/") :]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith("best/")}
                best = best or None
                rec = RunRecord.from_json(side["record"])
                start = len(rec.losses)

        self.comp.eval()  # no dropout or batch statistics anywhere
        step = start
        while step < spec.steps and not rec.stopped_early:
            lr = cosine_lr(step, spec.steps, spec.lr, o.lr_floor)
            idx = self.batch_indices(stage, step, spec.batch_size)
            loss = self.step_loss(stage, step, idx)
            if not torch.isfinite(loss):
                self._save_state(out, opt, rec, best)
                raise StageAborted(f"non-finite loss at step {step} of stage {stage!r}", rec)
            opt.zero_grad()
            loss.backward()
            clip_grad_norm(trainable_tensors, o.grad_clip)
            opt.step(lr)
            rec.losses.append(loss.item())
            rec.lrs.append(lr)
            step += 1
            if step % spec.eval_every == 0 or step == spec.steps:
                value = self.validate(stage)
                rec.val.append((step, value))
                if rec.best_value is None or value < rec.best_value - o.min_delta:
                    rec.best_value, rec.best_step = value, step
                    best = self.comp.arrays(spec.trainable)
                    checkpoint.save(out / "best.bin", best, self._meta(stage, step=step, val=value))
                if early_stop([v for _, v in rec.val], spec.patience, o.min_delta):
                    rec.stopped_early = True
                self._save_state(out, opt, rec, best)
            if stop_after is not None and step >= stop_after and step < spec.steps and not rec.stopped_early:
                self._save_state(out, opt, rec, best)
                self.records[stage] = rec
                return rec

        if best is not None:
            self.comp.load_arrays(best)
        self.comp.set_trainable(())
        for g in spec.frozen:
            after = self.comp.group_bytes(g)
            rec.frozen_hashes[g] = [_sha(before[g]), _sha(after)]
            if after != before[g]:
                raise FreezeViolation(f"frozen group {g!r} changed during stage {stage!r}")
        rec.completed = True
        rec.checkpoints = {"final": str(out / "final.bin"), "best": str(out / "best.bin")}
        checkpoint.save(out / "final.bin", self.comp.arrays(spec.trainable), self._meta(stage, step=step))
        (out / "record.json").write_text(json.dumps(rec.to_json(), sort_keys=True) + "\n")
        if state_path.is_file():
            state_path.unlink()
            state_path.with_suffix(".json").unlink()
        self.records[stage] = rec
        self._features = None
        self.write_losses()
        return rec

    def _save_state(self, out: Path, opt: AdamW, rec: RunRecord, best) -> None:
        arrays = {"param/" + k: v for k, v in self.comp.arrays(self.plan.get(rec.stage).trainable).items()}
        arrays.update({"opt/" + k: v for k, v in opt.state_tensors().items()})
        if best:
            arrays.update({"best/" + k: v for k, v in best.items()})
        meta = self._meta(rec.stage, opt_step=opt.state.step, record=rec.to_json())
        checkpoint.save(out / "state.bin", arrays, meta)

    def write_losses(self) -> None:
        """Rewrite losses.csv from every completed stage record of this run."""
        rows = []
        for stage in self.plan.names:
            path = self.stage_dir(stage) / "record.json"
            if path.is_file():
                rec = json.loads(path.read_text())
                rows += [(i, stage, l, lr) for i, (l, lr) in enumerate(zip(rec["losses"], rec["lrs"]))]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "stage", "loss", "lr", "seed", "config_hash"])
        h = self.config.hash()
        for step, stage, loss, lr in rows:
            w.writerow([step, stage, repr(loss), repr(lr), self.seed, h])
        (self.run_dir / "losses.csv").write_text(buf.getvalue())

    def run(self, stages=None, stop_after: int = None) -> dict:
        names = self.plan.names if stages in (None, "all") else tuple(stages)
        for name in names:
            self.run_stage(name, stop_after=stop_after)
        return self.records
