"""Training loop, optimizers, metrics, settings grammar, checkpoints.

Settings strings follow the experiment naming grammar: G = Gumbel noise,
B = Round & Clip, trailing I/F/O picks the gate, B(UVW) adds binary weight
quantization, NEW moves Round & Clip inside every training iteration. The
empty string is the full-precision baseline.
"""

from __future__ import annotations

import copy
import json
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .backprop import residual_trend
from .data import Dataset, batch_iter
from .lstm import GateMode, GateSpec
from .model import SequenceTagger
from .quantize import GumbelCfg, RoundClipScheme


class TrainingAbort(RuntimeError):
    """Raised when the loss goes non-finite; carries a batch diagnostic."""


# -- settings grammar -------------------------------------------------------

_GATE_BY_LETTER = {"I": "input", "F": "forget", "O": "output"}
VALID_TOKENS = ("GI", "GF", "GO", "BI", "BF", "BO", "B(UVW)", "NEW")


def parse_settings(s: str, r: float = 0.5, c: float = 1.0,
                   epsilon: float = 0.1, gumbel_seed: int = 0,
                   allow_output_gate: bool = False):
    """Parse a settings string into (GateMode, quantize_weights flag)."""
    gumbel: dict[str, GumbelCfg] = {}
    rclip: dict[str, RoundClipScheme] = {}
    train_time = False
    quantize_weights = False
    tokens = [t.strip().upper() for t in s.split(",") if t.strip()]
    for tok in tokens:
        if tok == "NEW":
            train_time = True
        elif tok == "B(UVW)":
            quantize_weights = True
        elif tok in ("GI", "GF", "GO", "BI", "BF", "BO"):
            gate = _GATE_BY_LETTER[tok[1]]
            if gate == "output" and not allow_output_gate:
                raise ValueError(
                    f"token {tok!r} targets the output gate, which is kept "
                    f"full-precision by default; pass allow_output_gate=True "
                    f"(--allow-output-gate) to override")
            if tok[0] == "G":
                gumbel[gate] = GumbelCfg(epsilon=epsilon, rng_seed=gumbel_seed)
            else:
                rclip[gate] = RoundClipScheme(r=r, c=c)
        else:
            raise ValueError(
                f"unknown settings token {tok!r}; valid tokens: "
                f"{', '.join(VALID_TOKENS)}")

    def spec(gate):
        return GateSpec(gumbel=gumbel.get(gate), round_clip=rclip.get(gate))

    mode = GateMode(input_gate=spec("input"), forget_gate=spec("forget"),
                    output_gate=spec("output"), train_time_quant=train_time)
    return mode, quantize_weights


# -- metrics ----------------------------------------------------------------

def extract_chunks(tags: list[str]):
    """BIO spans as (type, start, end_exclusive); orphan I starts a chunk."""
    chunks = []
    start, ctype = None, None
    for idx, tag in enumerate(tags):
        if tag.startswith("B"):
            if start is not None:
                chunks.append((ctype, start, idx))
            start, ctype = idx, tag[2:] if len(tag) > 1 else ""
        elif tag.startswith("I"):
            itype = tag[2:] if len(tag) > 1 else ""
            if start is None or itype != ctype:
                if start is not None:
                    chunks.append((ctype, start, idx))
                start, ctype = idx, itype
        else:
            if start is not None:
                chunks.append((ctype, start, idx))
            start, ctype = None, None
    if start is not None:
        chunks.append((ctype, start, len(tags)))
    return chunks


def chunk_f1(gold: list[list[str]], pred: list[list[str]]):
    """Micro-averaged chunk precision/recall/F1 over tagged sentences."""
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold vs {len(pred)} predicted sentences")
    n_gold = n_pred = n_correct = 0
    for g, p in zip(gold, pred):
        if len(g) != len(p):
            raise ValueError(f"sentence length mismatch: {len(g)} vs {len(p)}")
        gc = set(extract_chunks(g))
        pc = set(extract_chunks(p))
        n_gold += len(gc)
        n_pred += len(pc)
        n_correct += len(gc & pc)
    prec = n_correct / n_pred if n_pred else 0.0
    rec = n_correct / n_gold if n_gold else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    return prec, rec, f1


def token_accuracy(gold: list[list[str]], pred: list[list[str]]) -> float:
    total = correct = 0
    for g, p in zip(gold, pred):
        total += len(g)
        correct += sum(1 for a, b in zip(g, p) if a == b)
    return correct / total if total else 0.0


def evaluate(model: SequenceTagger, sentences, tag_vocab, task: str = "ner"):
    """Decode every sentence with eval-phase transforms and score it.

    Returns {"prec", "rec", "f1"}; for POS-style tasks token accuracy is
    reported in the prec slot and rec/f1 are None.
    """
    gold, pred = [], []
    for tokens, tags in sentences:
        gold.append([tag_vocab.decode(t) for t in tags])
        pred.append([tag_vocab.decode(t) for t in model.predict(tokens)])
    if task == "pos":
        return {"prec": token_accuracy(gold, pred), "rec": None, "f1": None}
    prec, rec, f1 = chunk_f1(gold, pred)
    return {"prec": prec, "rec": rec, "f1": f1}


def selection_metric(metrics: dict, task: str) -> float:
    return metrics["prec"] if task == "pos" else metrics["f1"]


# -- optimizers -------------------------------------------------------------

def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


class SgdOptimizer:
    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.buf: dict[str, np.ndarray] = {}

    def step(self, params, grads):
        for name, arr in params:
            g = grads[name]
            if self.momentum:
                buf = self.buf.setdefault(name, np.zeros_like(arr))
                buf *= self.momentum
                buf += g
                g = buf
            arr -= self.lr * g


class AdamOptimizer:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, arr in params:
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(arr))
            v = self.v.setdefault(name, np.zeros_like(arr))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            arr -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(cfg: "TrainConfig"):
    if cfg.optimizer == "adam":
        return AdamOptimizer(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    if cfg.optimizer == "sgd":
        return SgdOptimizer(cfg.lr, cfg.momentum)
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


# -- config / report --------------------------------------------------------

@dataclass
class TrainConfig:
    settings: str = ""
    r: float = 0.5
    c: float = 1.0
    epsilon: float = 0.1
    ste: str = "full"
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 25
    patience: int = 5
    batch_size: int = 8
    seed: int = 0
    head: str = "crf"
    hidden: int = 16
    emb_dim: int = 16
    bidirectional: bool = True
    peepholes: str = "diag"
    allow_output_gate: bool = False
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        # fail fast on an unparsable settings string
        parse_settings(self.settings, self.r, self.c, self.epsilon,
                       allow_output_gate=self.allow_output_gate)

    def gate_mode(self):
        return parse_settings(self.settings, self.r, self.c, self.epsilon,
                              gumbel_seed=self.seed,
                              allow_output_gate=self.allow_output_gate)


@dataclass
class TrainReport:
    config: dict
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    test: dict | None = None
    residual: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_dict(self) -> dict:
        """Report with wall-clock timing stripped, for determinism checks."""
        d = self.to_dict()
        for row in d["epochs"]:
            row.pop("wall_time", None)
        return d

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.epochs:
                fh.write(json.dumps({"type": "epoch", **row}) + "\n")
            fh.write(json.dumps({
                "type": "summary", "best_epoch": self.best_epoch,
                "test": self.test, "residual": self.residual,
                "config": self.config,
            }) + "\n")


class ResidualAccumulator:
    """Running mean |delta_f| per gate over all cached training steps."""

    def __init__(self):
        self.sums = {"input": 0.0, "forget": 0.0, "output": 0.0}
        self.counts = {"input": 0, "forget": 0, "output": 0}

    def add(self, all_caches):
        for fwd_caches, bwd_caches in all_caches:
            for caches in (fwd_caches, bwd_caches or []):
                for c in caches:
                    for gate, dec in (("input", c.decomp_i),
                                      ("forget", c.decomp_f),
                                      ("output", c.decomp_o)):
                        if dec is not None:
                            self.sums[gate] += float(np.sum(np.abs(dec.delta_f)))
                            self.counts[gate] += dec.delta_f.size

    def summary(self) -> dict[str, float] | None:
        out = {g: self.sums[g] / self.counts[g]
               for g in self.sums if self.counts[g]}
        return out or None


def build_model(cfg: TrainConfig, dataset: Dataset) -> SequenceTagger:
    mode, quant_w = cfg.gate_mode()
    return SequenceTagger.build(
        vocab=len(dataset.token_vocab), emb_dim=cfg.emb_dim, hidden=cfg.hidden,
        n_tags=len(dataset.tag_vocab), seed=cfg.seed, gate_mode=mode,
        head_type=cfg.head, ste=cfg.ste, quantize_weights=quant_w,
        bidirectional=cfg.bidirectional, peepholes=cfg.peepholes)


def train(cfg: TrainConfig, dataset: Dataset):
    """Full training run with early stopping; returns (TrainReport, model).

    Dev evaluation always runs the test-phase graph, so early stopping in
    quantized configurations selects for quantized performance. Single
    worker; fully deterministic given the config seed.
    """
    if "train" not in dataset.splits or "dev" not in dataset.splits:
        raise ValueError("training requires train and dev splits")
    model = build_model(cfg, dataset)
    noise_rng = np.random.default_rng([cfg.seed, 0x6e6f6973])
    opt = make_optimizer(cfg)
    task = dataset.task
    report = TrainReport(config=asdict(cfg))

    best_metric = -1.0
    best_model = None
    best_epoch = 0
    stale = 0
    delta_series: list[float] = []

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        losses = []
        residuals = ResidualAccumulator()
        track_residuals = model.gate_mode.train_time_quant
        for batch in batch_iter(dataset.split("train"), cfg.batch_size,
                                cfg.seed, epoch):
            loss, grads, caches = model.batch_loss_and_grads(
                batch, phase="train", rng=noise_rng)
            if not np.isfinite(loss):
                raise TrainingAbort(
                    f"non-finite loss {loss} at epoch {epoch}; "
                    f"batch tokens: {[b[0] for b in batch]}")
            losses.append(loss)
            if track_residuals:
                residuals.add(caches)
            clip_global_norm(grads, cfg.clip_norm)
            opt.step(model.all_params(), grads)

        decomp = residuals.summary()
        if decomp:
            delta_series.append(float(np.mean(list(decomp.values()))))
        dev = evaluate(model, dataset.split("dev"), dataset.tag_vocab, task)
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "dev": dev,
            "decomp": decomp,
            "wall_time": time.perf_counter() - t0,
        }
        report.epochs.append(row)

        metric = selection_metric(dev, task)
        if metric > best_metric:
            best_metric = metric
            best_model = model.clone()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    if best_model is not None:
        model = best_model
    report.best_epoch = best_epoch
    if "test" in dataset.splits:
        report.test = evaluate(model, dataset.split("test"),
                               dataset.tag_vocab, task)
    if len(delta_series) >= 2:
        report.residual = residual_trend(delta_series)
    return report, model


# -- checkpoints ------------------------------------------------------------

class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    """Bad magic or unreadable header."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


_MAGIC = b"QLSTM\x00"
_VERSION = 1


def checkpoint_save(model: SequenceTagger, path, meta: dict | None = None):
    """Versioned binary checkpoint: header, JSON manifest, raw LE float64."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in model.all_params():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    manifest = {
        "dims": {
            "vocab": model.lstm.embedding.shape[0],
            "emb_dim": model.lstm.embedding.shape[1],
            "hidden": model.lstm.fwd.hidden,
            "tags": model.head.n_tags,
            "bidirectional": model.lstm.bidirectional,
            "peepholes": "diag" if model.lstm.use_peepholes else "none",
            "head": model.head_type,
        },
        "entries": entries,
        "meta": meta or {},
    }
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(mbytes)))
        fh.write(mbytes)
        for blob in blobs:
            fh.write(blob)


def checkpoint_load(path):
    """Load a checkpoint; returns (SequenceTagger, meta dict).

    The model comes back with Identity gate mode and no weight
    quantization; callers reapply transforms as needed.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(_MAGIC) + 12:
        raise CheckpointTruncatedError(f"{path}: file shorter than the header")
    if raw[:len(_MAGIC)] != _MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {raw[:6]!r}")
    pos = len(_MAGIC)
    (version,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if version != _VERSION:
        raise CheckpointVersionError(
            f"{path}: version {version}, reader supports {_VERSION}")
    (mlen,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    if pos + mlen > len(raw):
        raise CheckpointTruncatedError(f"{path}: manifest truncated")
    try:
        manifest = json.loads(raw[pos:pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable manifest: {exc}") from exc
    data_start = pos + mlen
    dims = manifest["dims"]
    model = SequenceTagger.build(
        vocab=dims["vocab"], emb_dim=dims["emb_dim"], hidden=dims["hidden"],
        n_tags=dims["tags"], seed=0, head_type=dims["head"],
        bidirectional=dims["bidirectional"], peepholes=dims["peepholes"])
    params = dict(model.all_params())
    for entry in manifest["entries"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name not in params:
            raise CheckpointShapeError(f"{path}: unexpected parameter {name!r}")
        arr = params[name]
        if tuple(arr.shape) != shape:
            raise CheckpointShapeError(
                f"{path}: {name} stored as {shape}, model expects {arr.shape}")
        nbytes = arr.size * 8
        start = data_start + offset
        if start + nbytes > len(raw):
            raise CheckpointTruncatedError(f"{path}: data for {name} truncated")
        arr[...] = np.frombuffer(raw, dtype="<f8", count=arr.size,
                                 offset=start).reshape(shape)
    return model, manifest.get("meta", {})
