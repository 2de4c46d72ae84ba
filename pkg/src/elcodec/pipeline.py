"""End-to-end runs: base layer, online training, model coding, selection, reports.

Run directory layout::

    manifest.json                 config, config hash, artifact digests, completeness flag
    summary.csv                   one row per QP: base-layer and BL+EL rate / PSNR
    qpNN/bl.bin                   toy base-layer frames (toy-bl mode only)
    qpNN/rate_log.csv             per-frame base-layer bits (index,bits,qp)
    qpNN/gGGG/el.bin              enhancement-layer stream for frame group GGG
    qpNN/gGGG/candidates.csv      one row per checkpoint
    qpNN/gGGG/frames.csv          per-frame costs of the base layer and the chosen option
    qpNN/gGGG/wq_hist.csv         W_Q histogram of the last checkpoint
    qpNN/gGGG/report.json         selection outcome and enhanced-frame digest
    reports/                      written by emit_reports()
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import struct
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import tensor as T
from .baselayer import (
    CTC_QPS,
    FrameGroup,
    RateRecord,
    encode_group,
    ingest,
    read_rate_log,
    read_yuv420,
    toy_decode,
    toy_encode,
    write_rate_log,
    write_yuv420,
)
from .bdrate import RateDistortionCurve, bd_rate
from .errors import ConfigError, DecodeError, ELCodecError
from .modelcodec import (
    ModelCodec,
    empirical_entropy,
    load_reference,
    save_reference,
    serialize_no_el,
)
from .network import (
    NetworkConfig,
    TrainingConfig,
    _sample_crops,
    enhance_frame,
    forward,
    init_params,
    loss_and_grads,
    make_checkpoint,
    train_online,
)
from .rateutility import frames_digest, select
from .svgplot import bar_chart, line_chart
from .synthetic import constant_sequence, textured_sequence

log = logging.getLogger(__name__)

__all__ = [
    "RunConfig",
    "PretrainConfig",
    "run_encode",
    "run_decode",
    "pretrain_initial",
    "emit_reports",
    "bd_rate_from_summary",
    "default_initial_model",
    "REPORT_SCHEMAS",
    "OUTPUT_DIR_ENV",
]

OUTPUT_DIR_ENV = "ELCODEC_OUTPUT_DIR"
IMAGE_SUFFIXES = {".png", ".bmp", ".pgm", ".ppm", ".jpg", ".jpeg", ".tif", ".tiff"}

CANDIDATE_COLUMNS = [
    "epoch", "id", "bytes", "r_model_bits", "r_res_bits", "r_biases_bits", "r_affine_bits",
    "compression_ratio", "wq_entropy", "residue_entropy", "training_mse", "mean_psnr",
    "psnr_gain", "j", "selected",
]
FRAME_COLUMNS = ["frame", "bits", "qp", "lambda", "sse_bl", "psnr_bl", "j_bl", "sse_out", "psnr_out", "j_out"]
SUMMARY_COLUMNS = ["qp", "frames", "bl_bits", "el_bits", "total_bits", "psnr_bl", "psnr_out", "el_groups"]
REPORT_SCHEMAS = {
    "entropy_curve.csv": ["qp", "group", "epoch", "wq_entropy", "residue_entropy"],
    "ratio_psnr.csv": ["qp", "group", "epoch", "compression_ratio", "mean_psnr", "psnr_gain"],
    "cost_curve.csv": ["qp", "group", "epoch", "j", "j_baseline", "selected"],
    "weight_hist.csv": ["qp", "group", "value", "count"],
    "rd_points.csv": ["qp", "bl_bits", "psnr_bl", "total_bits", "psnr_out"],
}


class ManifestMismatch(ELCodecError):
    pass


def default_initial_model() -> Path:
    return Path(str(resources.files("elcodec") / "data" / "initial_model.elm"))


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


def _cell(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "nan")
    return v


def _read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---- configuration ----


@dataclass
class RunConfig:
    """Everything a run depends on.

    ``mode`` is ``"toy-bl"`` (code the source with the built-in codec at each
    QP) or ``"ingest"`` (take original / reconstruction / rate log from an
    external codec).  In toy-bl mode the source is either a planar 4:2:0
    file (``original`` + ``width`` + ``height``) or a ``synthetic`` clip
    description ``{"kind": "textured"|"constant", "seed"|"value", "frames",
    "height", "width"}``.
    """

    output_dir: str
    mode: str = "toy-bl"
    original: str | None = None
    recon: str | None = None
    rate_log: str | None = None
    width: int | None = None
    height: int | None = None
    synthetic: dict | None = None
    qps: tuple = CTC_QPS
    group_size: int = 8
    training: TrainingConfig = field(default_factory=TrainingConfig.desk)
    initial_model: str | None = None
    seed: int = 0
    allow_no_el: bool = True
    max_frames: int | None = None

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)

    def initial_model_path(self) -> Path:
        return Path(self.initial_model) if self.initial_model else default_initial_model()

    def validate(self) -> None:
        if self.mode not in ("toy-bl", "ingest"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not self.qps and self.mode == "toy-bl":
            raise ConfigError("QP list must not be empty")
        for q in self.qps:
            if not (isinstance(q, int) and 0 <= q <= 51):
                raise ConfigError(f"bad QP {q!r}")
        if self.group_size < 1:
            raise ConfigError("group size must be at least 1")
        if self.max_frames is not None and self.max_frames < 1:
            raise ConfigError("max_frames must be positive")
        if not self.initial_model_path().is_file():
            raise ConfigError(f"initial model not found: {self.initial_model_path()}")
        if self.mode == "ingest":
            for name in ("original", "recon", "rate_log"):
                p = getattr(self, name)
                if not p or not Path(p).is_file():
                    raise ConfigError(f"ingest mode needs an existing --{name.replace('_', '-')} file")
            if not self.width or not self.height:
                raise ConfigError("ingest mode needs width and height")
        else:
            if (self.original is None) == (self.synthetic is None):
                raise ConfigError("toy-bl mode needs exactly one of original or synthetic")
            if self.original is not None:
                if not Path(self.original).is_file():
                    raise ConfigError(f"source not found: {self.original}")
                if not self.width or not self.height:
                    raise ConfigError("a YUV source needs width and height")
            else:
                s = self.synthetic
                if s.get("kind", "textured") not in ("textured", "constant"):
                    raise ConfigError(f"unknown synthetic kind {s.get('kind')!r}")
                for key in ("frames", "height", "width"):
                    if int(s.get(key, 0)) < 1:
                        raise ConfigError(f"synthetic source needs a positive {key}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["qps"] = list(self.qps)
        d.pop("output_dir")
        d["initial_model_sha256"] = _sha256(self.initial_model_path()) if self.initial_model_path().is_file() else None
        d.pop("initial_model")
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict, output_dir: str) -> "RunConfig":
        d = dict(d)
        d.pop("initial_model_sha256", None)
        d["training"] = TrainingConfig(**d["training"])
        d["qps"] = tuple(d["qps"])
        return cls(output_dir=output_dir, **d)


def _source_frames(cfg: RunConfig) -> list:
    if cfg.original is not None:
        frames = [f[0] for f in read_yuv420(cfg.original, cfg.width, cfg.height)]
    else:
        s = cfg.synthetic
        if s.get("kind", "textured") == "constant":
            frames = constant_sequence(int(s.get("value", 128)), int(s["frames"]), int(s["height"]), int(s["width"]))
        else:
            frames = textured_sequence(int(s.get("seed", 0)), int(s["frames"]), int(s["height"]), int(s["width"]))
    if cfg.max_frames:
        frames = frames[: cfg.max_frames]
    if not frames:
        raise ConfigError("source has no frames")
    return frames


def _group_seed(seed: int, qp: int, group: int) -> int:
    return int(np.random.SeedSequence([seed, qp, group]).generate_state(1)[0])


def _write_bl(path, streams) -> None:
    with open(path, "wb") as fh:
        for s in streams:
            fh.write(struct.pack("<I", len(s)))
            fh.write(s)


def _read_bl(path) -> list:
    data = Path(path).read_bytes()
    frames, pos = [], 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise DecodeError(f"{path}: truncated frame length")
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise DecodeError(f"{path}: truncated frame")
        frames.append(toy_decode(data[pos : pos + n])[0])
        pos += n
    return frames


# ---- encode ----


@dataclass
class RunResult:
    output_dir: Path
    manifest: dict
    summary: list
    selections: dict  # (qp, group) -> SelectionResult


def _load_initial(cfg: RunConfig):
    qm = load_reference(cfg.initial_model_path())
    return qm, make_checkpoint(qm.to_params(), 0)


def _encode_group(group: FrameGroup, initial_ck, codec, tcfg, allow_no_el, gdir: Path):
    gdir.mkdir(parents=True, exist_ok=True)
    checkpoints = train_online(initial_ck, group.pairs(), tcfg, codec)
    sel = select(checkpoints, group, codec, allow_no_el)
    el = sel.chosen_eval.el if sel.el_present else serialize_no_el().data
    (gdir / "el.bin").write_bytes(el)

    init_wq = codec.initial.flat_w_q()
    rows = []
    for ck, ev in zip(checkpoints, sel.table):
        stream = codec.serialize(ck)
        wq = ck.quantized().flat_w_q()
        rows.append({
            "epoch": ck.epoch,
            "id": ck.id,
            "bytes": stream.nbytes,
            "r_model_bits": stream.r_model,
            "r_res_bits": stream.r_res,
            "r_biases_bits": stream.r_biases,
            "r_affine_bits": stream.r_affine,
            "compression_ratio": float(ev.compression_ratio),
            "wq_entropy": empirical_entropy(wq),
            "residue_entropy": empirical_entropy(wq - init_wq),
            "training_mse": float(ck.training_mse),
            "mean_psnr": ev.mean_psnr,
            "psnr_gain": ev.mean_psnr - sel.baseline.mean_psnr,
            "j": float(ev.j),
            "selected": int(sel.chosen == ev.id),
        })
        ck.metrics.update(rows[-1])
    _write_csv(gdir / "candidates.csv", CANDIDATE_COLUMNS, rows)

    base, out = sel.baseline, sel.chosen_eval
    frows = []
    for i in range(group.n):
        frows.append({
            "frame": i,
            "bits": group.bits[i],
            "qp": group.qps[i],
            "lambda": float(group.lambdas[i]),
            "sse_bl": base.sse[i],
            "psnr_bl": float(base.psnr[i]),
            "j_bl": float(base.costs[i]),
            "sse_out": out.sse[i],
            "psnr_out": float(out.psnr[i]),
            "j_out": float(out.costs[i]),
        })
    _write_csv(gdir / "frames.csv", FRAME_COLUMNS, frows)

    values, counts = np.unique(checkpoints[-1].quantized().flat_w_q(), return_counts=True)
    _write_csv(gdir / "wq_hist.csv", ["value", "count"], [{"value": int(v), "count": int(c)} for v, c in zip(values, counts)])

    report = {
        "chosen": sel.chosen,
        "chosen_epoch": out.epoch,
        "el_present": sel.el_present,
        "el_bytes": len(el),
        "r_model_bits": out.r_model,
        "j": float(sel.j),
        "j_exact": str(sel.j),
        "j_baseline": float(sel.j_baseline),
        "j_baseline_exact": str(sel.j_baseline),
        "psnr_bl": base.mean_psnr,
        "psnr_out": out.mean_psnr,
        "enhanced_digest": out.digest,
        "baseline_digest": base.digest,
        "n_frames": group.n,
        "n_checkpoints": len(checkpoints),
    }
    _dump_json(gdir / "report.json", report)
    return sel, checkpoints


def run_encode(cfg: RunConfig) -> RunResult:
    """Encode every QP point of a run and write its artifacts."""
    cfg.validate()
    out = cfg.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config": cfg.to_dict(), "config_hash": cfg.config_hash(), "complete": False, "artifacts": {}}
    _dump_json(out / "manifest.json", manifest)

    initial_qm, initial_ck = _load_initial(cfg)
    codec = ModelCodec(initial_qm)

    if cfg.mode == "ingest":
        g = ingest(cfg.original, cfg.recon, cfg.rate_log, cfg.width, cfg.height)
        if cfg.max_frames:
            g = g.split(cfg.max_frames)[0]
        materials = [(g.qps[0], g, None)]
    else:
        frames = _source_frames(cfg)
        materials = []
        for qp in cfg.qps:
            g, streams = encode_group(frames, qp)
            materials.append((qp, g, streams))

    summary, selections = [], {}
    try:
        for qp, group, streams in materials:
            qdir = out / f"qp{qp:02d}"
            qdir.mkdir(exist_ok=True)
            if streams is not None:
                _write_bl(qdir / "bl.bin", streams)
            write_rate_log(qdir / "rate_log.csv", [RateRecord(i, b, q) for i, (b, q) in enumerate(zip(group.bits, group.qps))])
            el_bits, n_el, sse_out = 0, 0, []
            for gi, sub in enumerate(group.split(cfg.group_size)):
                tcfg = TrainingConfig(**{**cfg.training.to_dict(), "seed": _group_seed(cfg.seed, qp, gi)})
                log.info("qp %d group %d: %d frames", qp, gi, sub.n)
                sel, _ = _encode_group(sub, initial_ck, codec, tcfg, cfg.allow_no_el, qdir / f"g{gi:03d}")
                selections[(qp, gi)] = sel
                el_bits += sel.chosen_eval.r_model
                n_el += int(sel.el_present)
                sse_out.extend(sel.chosen_eval.sse)
            bl_bits = int(sum(group.bits))
            summary.append({
                "qp": qp,
                "frames": group.n,
                "bl_bits": bl_bits,
                "el_bits": el_bits,
                "total_bits": bl_bits + el_bits,
                "psnr_bl": _mean_psnr([s for s in (_sse(o, r) for o, r in zip(group.originals, group.recons))], group.shape),
                "psnr_out": _mean_psnr(sse_out, group.shape),
                "el_groups": n_el,
            })
    except Exception as exc:
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        _dump_json(out / "manifest.json", manifest)
        log.error("run aborted, outputs in %s are incomplete: %s", out, exc)
        raise

    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
    manifest["artifacts"] = {
        str(p.relative_to(out)): _sha256(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != "manifest.json" and "reports" not in p.relative_to(out).parts
    }
    manifest["complete"] = True
    _dump_json(out / "manifest.json", manifest)
    return RunResult(out, manifest, summary, selections)


def _sse(a, b) -> int:
    d = np.asarray(a, dtype=np.int64) - np.asarray(b, dtype=np.int64)
    return int(np.sum(d * d))


def _mean_psnr(sses, shape) -> float:
    n = shape[0] * shape[1]
    vals = [10 * math.log10(255.0**2 * n / s) if s else math.inf for s in sses]
    return float(np.mean(vals))


# ---- decode ----


@dataclass
class DecodeResult:
    frames: dict  # qp -> list of enhanced luma planes
    psnr: dict  # qp -> list of per-frame PSNR (None when originals are unavailable)
    errors: list
    digests_match: bool
    output_files: list


def _load_manifest(run_dir: Path) -> dict:
    p = run_dir / "manifest.json"
    if not p.is_file():
        raise ManifestMismatch(f"no manifest in {run_dir}")
    m = json.loads(p.read_text())
    if not m.get("complete"):
        raise ManifestMismatch(f"run in {run_dir} is incomplete")
    return m


def run_decode(run_dir, output_dir=None, initial_model=None) -> DecodeResult:
    """Decode every QP point of a run: base layer, then each group's EL.

    A group whose EL fails to decode falls back to the base layer and the
    failure is listed in ``errors``; the base-layer output is always produced.
    """
    run_dir = Path(run_dir)
    manifest = _load_manifest(run_dir)
    cfg = RunConfig.from_dict(manifest["config"], str(run_dir))
    init_path = Path(initial_model) if initial_model else (cfg.initial_model_path())
    if _sha256(init_path) != manifest["config"]["initial_model_sha256"]:
        raise ManifestMismatch("initial model differs from the one the run was encoded with")
    if RunConfig.from_dict(manifest["config"], str(run_dir)).config_hash() != manifest["config_hash"]:
        raise ManifestMismatch("manifest config does not match its hash")
    codec = ModelCodec(load_reference(init_path))
    out_dir = Path(output_dir) if output_dir else run_dir / "decoded"
    out_dir.mkdir(parents=True, exist_ok=True)

    originals = None
    chroma = None
    if cfg.mode == "ingest":
        originals = [f[0] for f in read_yuv420(cfg.original, cfg.width, cfg.height)]
        recon_full = read_yuv420(cfg.recon, cfg.width, cfg.height)
        chroma = [(u, v) for _, u, v in recon_full]
        qps = [read_rate_log(cfg.rate_log)[0].qp]
    else:
        originals = _source_frames(cfg)
        qps = list(cfg.qps)
    if cfg.max_frames and originals is not None:
        originals = originals[: cfg.max_frames]

    frames_out, psnr_out, errors, files = {}, {}, [], []
    match = True
    for qp in qps:
        qdir = run_dir / f"qp{qp:02d}"
        if cfg.mode == "ingest":
            bl = [f[0] for f in recon_full][: len(originals)]
        else:
            bl = _read_bl(qdir / "bl.bin")
        decoded = []
        for gi, a in enumerate(range(0, len(bl), cfg.group_size)):
            chunk = bl[a : a + cfg.group_size]
            gdir = qdir / f"g{gi:03d}"
            rel = str((gdir / "el.bin").relative_to(run_dir))
            try:
                data = (gdir / "el.bin").read_bytes()
                if manifest["artifacts"].get(rel) != hashlib.sha256(data).hexdigest():
                    raise DecodeError(f"{rel} does not match the manifest digest")
                model = codec.deserialize(data)
            except (OSError, ELCodecError) as exc:
                errors.append(f"qp {qp} group {gi}: {exc}")
                decoded.extend(chunk)
                continue
            enhanced = chunk if model is None else [enhance_frame(model, f) for f in chunk]
            report = json.loads((gdir / "report.json").read_text())
            if frames_digest(enhanced) != report["enhanced_digest"]:
                match = False
            decoded.extend(enhanced)
        frames_out[qp] = decoded
        if chroma is not None:
            yuv = [(y, u, v) for y, (u, v) in zip(decoded, chroma)]
        else:
            yuv = decoded
        path = out_dir / f"qp{qp:02d}_enhanced.yuv"
        write_yuv420(path, yuv)
        files.append(path)
        if originals is not None:
            psnr_out[qp] = [
                10 * math.log10(255.0**2 * o.size / s) if (s := _sse(o, d)) else math.inf
                for o, d in zip(originals, decoded)
            ]
    rows = [
        {"qp": qp, "frame": i, "psnr": p}
        for qp, vals in psnr_out.items()
        for i, p in enumerate(vals)
    ]
    _write_csv(out_dir / "psnr.csv", ["qp", "frame", "psnr"], rows)
    return DecodeResult(frames_out, psnr_out, errors, match, files)


# ---- initial model ----


@dataclass
class PretrainConfig:
    iterations: int = 2000
    batch_size: int = 8
    learning_rate: float = 0.001
    final_learning_rate: float = 0.0001
    qps: tuple = CTC_QPS
    patch_size: int = 35
    probe_crops: int = 64
    seed: int = 0

    def learning_rate_at(self, it: int) -> float:
        # cosine decay from learning_rate to final_learning_rate
        frac = it / max(1, self.iterations)
        return self.final_learning_rate + 0.5 * (self.learning_rate - self.final_learning_rate) * (1 + math.cos(math.pi * frac))


def load_corpus(corpus_dir) -> list:
    from PIL import Image

    d = Path(corpus_dir)
    paths = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES) if d.is_dir() else []
    if not paths:
        raise ConfigError(f"no images found in {corpus_dir}")
    images = []
    for p in paths:
        with Image.open(p) as im:
            images.append(np.asarray(im.convert("L"), dtype=np.uint8))
    return images


def pretrain_initial(corpus_dir, cfg: PretrainConfig, out_path, config: NetworkConfig | None = None, progress=None):
    """Train the shared initial model with quantization active and save it.

    Degraded inputs are toy base-layer reconstructions of every corpus image
    at each QP in ``cfg.qps``.  Returns ``(checkpoint, stats)`` where stats
    holds probe MSE before and after training.
    """
    config = config or NetworkConfig.standard()
    images = load_corpus(corpus_dir)
    degraded, original = [], []
    for im in images:
        if min(im.shape) < cfg.patch_size:
            raise ConfigError(f"corpus image {im.shape} smaller than the training patch")
        for qp in cfg.qps:
            degraded.append(toy_encode(im, qp)[0] / 255.0)
            original.append(im / 255.0)

    rng = np.random.default_rng(cfg.seed)
    params = init_params(config, rng)
    probe_x, probe_y = _sample_crops(rng, degraded, original, cfg.probe_crops, cfg.patch_size)
    before = T.mse_loss(forward(params, probe_x), probe_y)[0]
    state = T.OptimizerState(lr=cfg.learning_rate)
    for it in range(cfg.iterations):
        state.lr = cfg.learning_rate_at(it)
        xs, ys = _sample_crops(rng, degraded, original, cfg.batch_size, cfg.patch_size)
        loss, grads = loss_and_grads(params, xs, ys)
        T.adam_step(params.as_dict(), grads, state)
        if progress is not None:
            progress(it + 1, loss)
    stream = save_reference(out_path, make_checkpoint(params, 0))
    # hand back the model as the file stores it (float32 biases, W_L at bin centres)
    shipped = load_reference(out_path, config).to_params()
    after = T.mse_loss(forward(shipped, probe_x), probe_y)[0]
    stats = {"probe_mse_untrained": before, "probe_mse_trained": after, "bytes": stream.nbytes, "images": len(images)}
    return make_checkpoint(shipped, 0, after), stats


# ---- reports ----


def emit_reports(run_dir) -> Path:
    """Aggregate per-group artifacts into CSV tables and SVG plots under ``reports/``."""
    run_dir = Path(run_dir)
    _load_manifest(run_dir)
    rep = run_dir / "reports"
    rep.mkdir(exist_ok=True)
    entropy, ratio, cost, hist = [], [], [], []
    groups = sorted(run_dir.glob("qp*/g*"))
    if not groups:
        raise ManifestMismatch(f"{run_dir} has no frame-group artifacts")
    for gdir in groups:
        qp = int(gdir.parent.name[2:])
        g = int(gdir.name[1:])
        try:
            cands = _read_csv(gdir / "candidates.csv")
            report = json.loads((gdir / "report.json").read_text())
            wq = _read_csv(gdir / "wq_hist.csv")
            for c in cands:
                entropy.append({"qp": qp, "group": g, "epoch": int(c["epoch"]), "wq_entropy": float(c["wq_entropy"]), "residue_entropy": float(c["residue_entropy"])})
                ratio.append({"qp": qp, "group": g, "epoch": int(c["epoch"]), "compression_ratio": float(c["compression_ratio"]), "mean_psnr": float(c["mean_psnr"]), "psnr_gain": float(c["psnr_gain"])})
                cost.append({"qp": qp, "group": g, "epoch": int(c["epoch"]), "j": float(c["j"]), "j_baseline": float(report["j_baseline"]), "selected": int(c["selected"])})
            for h in wq:
                hist.append({"qp": qp, "group": g, "value": int(h["value"]), "count": int(h["count"])})
        except (KeyError, ValueError, OSError) as exc:
            raise ManifestMismatch(f"{gdir}: missing or malformed artifact field ({exc})") from exc

    summary = _read_csv(run_dir / "summary.csv")
    rd = [{"qp": int(r["qp"]), "bl_bits": int(r["bl_bits"]), "psnr_bl": float(r["psnr_bl"]), "total_bits": int(r["total_bits"]), "psnr_out": float(r["psnr_out"])} for r in summary]

    tables = {
        "entropy_curve.csv": entropy,
        "ratio_psnr.csv": ratio,
        "cost_curve.csv": cost,
        "weight_hist.csv": hist,
        "rd_points.csv": rd,
    }
    for name, rows in tables.items():
        _write_csv(rep / name, REPORT_SCHEMAS[name], rows)

    first = groups[0]
    q0, g0 = int(first.parent.name[2:]), int(first.name[1:])
    sel_e = [r for r in entropy if (r["qp"], r["group"]) == (q0, g0)]
    (rep / "entropy_curve.svg").write_text(line_chart(
        {"W_Q": [(r["epoch"], r["wq_entropy"]) for r in sel_e], "residue": [(r["epoch"], r["residue_entropy"]) for r in sel_e]},
        f"Entropy per checkpoint (QP {q0})", "epoch", "bits / weight"))
    sel_r = [r for r in ratio if (r["qp"], r["group"]) == (q0, g0)]
    (rep / "ratio_psnr.svg").write_text(line_chart(
        {"compression ratio": [(r["compression_ratio"], r["mean_psnr"]) for r in sel_r]},
        f"Compression ratio vs PSNR (QP {q0})", "compression ratio", "PSNR (dB)"))
    sel_c = [r for r in cost if (r["qp"], r["group"]) == (q0, g0)]
    (rep / "cost_curve.svg").write_text(line_chart(
        {"J": [(r["epoch"], r["j"]) for r in sel_c]},
        f"Lagrangian cost per checkpoint (QP {q0})", "epoch", "J",
        hlines={"base layer": sel_c[0]["j_baseline"]} if sel_c else None))
    sel_h = [r for r in hist if (r["qp"], r["group"]) == (q0, g0)]
    (rep / "weight_hist.svg").write_text(bar_chart(
        [r["value"] for r in sel_h], [r["count"] for r in sel_h],
        f"Quantized weight histogram (QP {q0})", "W_Q", "count"))
    if len(rd) >= 1:
        (rep / "rd_curve.svg").write_text(line_chart(
            {"base layer": [(r["bl_bits"], r["psnr_bl"]) for r in rd], "base + EL": [(r["total_bits"], r["psnr_out"]) for r in rd]},
            "Rate-distortion", "bits", "PSNR (dB)"))

    out = {"groups": len(groups), "qps": sorted({r["qp"] for r in rd})}
    if len(rd) >= 4:
        out["bd_rate_percent"] = bd_rate_from_summary(run_dir / "summary.csv")
    _dump_json(rep / "summary.json", out)
    return rep


def bd_rate_from_summary(summary_csv) -> float:
    """BD-rate of base+EL against the base layer alone, from a run's summary.csv."""
    rows = _read_csv(summary_csv)
    anchor = RateDistortionCurve.from_points((float(r["bl_bits"]), float(r["psnr_bl"])) for r in rows)
    test = RateDistortionCurve.from_points((float(r["total_bits"]), float(r["psnr_out"])) for r in rows)
    return bd_rate(anchor, test)
