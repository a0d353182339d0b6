"""Command-line experiment runner.

Subcommands: gen-data, train-seg, train-joint, eval, latency-report,
fidelity-report, plot. Every run writes its artifacts plus a frozen copy of
the resolved config into the output directory; re-running with that frozen
config reproduces the CSV outputs exactly. Failures exit nonzero with a
single machine-parsable ``error:`` line and remove partial outputs.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, load_into, save_checkpoint
from .codec import payload_bits_label_map
from .config import ExperimentConfig, load_config
from .corpus import load_corpus, save_corpus, split_indices
from .downstream import DamageClassifier, VQAHead, pad_token_batch, token_vocab_for_palette
from .link import (
    FLOODNET_PAYLOADS,
    RESCUENET_PAYLOADS,
    Payload,
    latency_table,
    write_latency_csv,
)
from .masking import MaskPredictor, MaskPredictorConfig
from .metrics import class_iou, error_rate
from .oracles import build_question_templates
from .pipeline import fidelity_for_pair, input_variants
from .scenes import generate_corpus
from .segmentation import SegConfig, SegmentationNet, predict_mask
from .training import (
    LossWeights,
    hard_masks_for_scenes,
    train_joint,
    train_segmentation,
    write_history_csv,
)


@contextlib.contextmanager
def run_directory(out: str | Path):
    """Create/lock the run directory; on failure remove everything new."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    preexisting = set(p.name for p in out.iterdir())
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        os.close(fd)
    except FileExistsError:
        raise RuntimeError(f"output directory {out} is locked by another run") from None
    try:
        yield out
    except BaseException:
        for p in sorted(out.rglob("*"), reverse=True):
            rel_root = p.relative_to(out).parts[0]
            if rel_root == ".lock" or rel_root in preexisting:
                continue
            if p.is_dir():
                with contextlib.suppress(OSError):
                    p.rmdir()
            else:
                p.unlink(missing_ok=True)
        raise
    finally:
        lock.unlink(missing_ok=True)


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "n", None) is not None:
        cfg = dataclasses.replace(cfg, n_scenes=args.n)
    return cfg


def _freeze_config(cfg: ExperimentConfig, out: Path) -> None:
    (out / "config.json").write_text(cfg.to_json())


def cmd_gen_data(args) -> None:
    cfg = _resolve_config(args)
    with run_directory(args.out) as out:
        samples = generate_corpus(cfg.seed, cfg.n_scenes, cfg.scene)
        split = split_indices(len(samples), seed=cfg.seed)
        save_corpus(samples, out, cfg.scene.palette(), cfg.scene.vocabulary(), split)
        _freeze_config(cfg, out)
    print(f"wrote corpus of {len(samples)} scenes to {args.out}")


def cmd_train_seg(args) -> None:
    cfg = _resolve_config(args)
    samples, split, palette, _ = load_corpus(args.data)
    if not samples:
        raise RuntimeError(f"no samples found under {args.data}")
    seg_cfg = dataclasses.replace(cfg.seg, num_classes=palette.num_classes)
    with run_directory(args.out) as out:
        model, history = train_segmentation(
            samples, split, palette, seg_cfg, cfg.seg_schedule, seed=cfg.seed
        )
        save_checkpoint(
            out / "seg.npz",
            {"segmentation": model},
            meta={"seg_config": dataclasses.asdict(seg_cfg)},
        )
        write_history_csv(history, out / "seg_history.csv")
        _freeze_config(cfg, out)
    print(f"segmentation trained; final mIoU {history[-1]['val_miou']:.3f}")


def _load_seg(path: str | Path) -> SegmentationNet:
    meta, sections = load_checkpoint(path)
    from .config import _load_dataclass

    seg_cfg = _load_dataclass(SegConfig, meta["seg_config"])
    model = SegmentationNet(seg_cfg)
    load_into(model, sections["segmentation"])
    return model


def cmd_train_joint(args) -> None:
    cfg = _resolve_config(args)
    samples, split, palette, vocabulary = load_corpus(args.data)
    if not samples:
        raise RuntimeError(f"no samples found under {args.data}")
    seg_model = _load_seg(args.seg_checkpoint) if args.seg_checkpoint else None
    mask_cfg = None if args.unmasked else cfg.mask
    token_vocab = token_vocab_for_palette(palette)
    if cfg.task == "classification":
        head_cfg = cfg.classifier
    else:
        head_cfg = dataclasses.replace(cfg.vqa, num_answers=vocabulary.size)
    with run_directory(args.out) as out:
        result = train_joint(
            samples, split, palette, seg_model, mask_cfg, head_cfg,
            cfg.loss_weights, cfg.joint_schedule, seed=cfg.seed, task=cfg.task,
            token_vocab=token_vocab,
        )
        sections = {"head": result.head}
        if result.predictor is not None:
            sections["mask_predictor"] = result.predictor
        save_checkpoint(
            out / "joint.npz",
            sections,
            meta={
                "task": cfg.task,
                "mask_config": dataclasses.asdict(mask_cfg) if mask_cfg else None,
                "head_config": dataclasses.asdict(head_cfg),
            },
        )
        write_history_csv(result.history, out / "joint_history.csv")
        _freeze_config(cfg, out)
    last = result.history[-1]
    print(
        f"joint training done; metric {last['metric']:.3f}, "
        f"mask density {last['mask_density']:.3f}"
    )


def _load_joint(path: str | Path, token_vocab_size: int):
    meta, sections = load_checkpoint(path)
    from .config import _load_dataclass
    from .downstream import ClassifierConfig, VQAConfig

    task = meta["task"]
    if task == "classification":
        head = DamageClassifier(_load_dataclass(ClassifierConfig, meta["head_config"]))
    else:
        head = VQAHead(_load_dataclass(VQAConfig, meta["head_config"]), token_vocab_size)
    load_into(head, sections["head"])
    predictor = None
    if meta.get("mask_config"):
        predictor = MaskPredictor(_load_dataclass(MaskPredictorConfig, meta["mask_config"]))
        load_into(predictor, sections["mask_predictor"])
    return task, head, predictor


def _predict_variant_inputs(cfg, samples, split, palette, seg_model, predictor):
    """Per test scene: the four candidate inputs with payload sizes, plus IoU maps."""
    from .masking import predict_binary_mask

    variants_per_scene = []
    pred_maps, true_maps = [], []
    for row, i in enumerate(split.test):
        sample = samples[i]
        predicted = predict_mask(seg_model, sample.image, palette)
        if predictor is not None:
            x = predicted.rgb01.transpose(2, 0, 1)
            from .masking import predictor_input
            import torch

            inp = predictor_input(torch.from_numpy(x)[None], predictor.config)[0].numpy()
            binary = predict_binary_mask(
                inp, predictor, tau=predictor.config.tau_end, hard=True, sample=False
            )
        else:
            from .masking import BinaryMask

            binary = BinaryMask(np.ones(sample.label_map.shape, dtype=np.float32), "hard")
        variants_per_scene.append(input_variants(sample, predicted, binary, palette))
        pred_maps.append(predicted.label_map)
        true_maps.append(sample.label_map)
    return variants_per_scene, np.stack(pred_maps), np.stack(true_maps)


def cmd_eval(args) -> None:
    import torch

    cfg = _resolve_config(args)
    samples, split, palette, vocabulary = load_corpus(args.data)
    if not split.test:
        raise RuntimeError("empty test split")
    seg_model = _load_seg(args.seg_checkpoint)
    token_vocab = token_vocab_for_palette(palette)
    task, head, predictor = _load_joint(args.joint_checkpoint, token_vocab.size)
    templates = {t.question_id: t for t in build_question_templates(palette)}

    with run_directory(args.out) as out:
        variants, pred_maps, true_maps = _predict_variant_inputs(
            cfg, samples, split, palette, seg_model, predictor
        )
        names = list(variants[0].keys())
        rows, cat_rows = [], []
        head.eval()
        for name in names:
            predictions, truths, tags = [], [], []
            payloads = []
            with torch.no_grad():
                for row, i in enumerate(split.test):
                    rgb01, bits = variants[row][name]
                    payloads.append(bits)
                    x = torch.from_numpy(
                        np.ascontiguousarray(rgb01.transpose(2, 0, 1))
                    )[None].float()
                    if task == "classification":
                        predictions.append(int(head(x).argmax(dim=1).item()))
                        truths.append(samples[i].damage.value)
                        tags.append("classification")
                    else:
                        for qa in samples[i].qa:
                            tokens = pad_token_batch([token_vocab.encode(qa.question_text)])
                            predictions.append(int(head(x, tokens).argmax(dim=1).item()))
                            truths.append(qa.answer_id)
                            tags.append(templates[qa.question_id].kind)
            report = error_rate(predictions, truths, tags)
            rows.append(
                {
                    "variant": name,
                    "error_percent": f"{report.overall_percent:.2f}",
                    "mean_payload_bits": f"{np.mean(payloads):.1f}",
                }
            )
            for cat, pct in report.per_category_percent.items():
                cat_rows.append(
                    {"variant": name, "category": cat, "error_percent": f"{pct:.2f}"}
                )

        with open(out / "eval.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["variant", "error_percent", "mean_payload_bits"])
            writer.writeheader()
            writer.writerows(rows)
        with open(out / "eval_categories.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["variant", "category", "error_percent"])
            writer.writeheader()
            writer.writerows(cat_rows)

        ious, miou = class_iou(pred_maps, true_maps, palette.num_classes)
        with open(out / "per_class_iou.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class", "iou"])
            for name, iou in zip(palette.names, ious):
                writer.writerow([name, "" if np.isnan(iou) else f"{iou:.4f}"])
            writer.writerow(["mIoU", f"{miou:.4f}"])
        _freeze_config(cfg, out)
    print(f"eval written to {args.out}")


def cmd_latency_report(args) -> None:
    cfg = _resolve_config(args)
    payloads: list[Payload] = []
    if args.payloads:
        records = json.loads(Path(args.payloads).read_text())
        payloads = [Payload(int(r["size_bits"]), r.get("description", "")) for r in records]
    if args.preset in ("floodnet", "both"):
        payloads += list(FLOODNET_PAYLOADS)
    if args.preset in ("rescuenet", "both"):
        payloads += list(RESCUENET_PAYLOADS)
    if not payloads:
        raise RuntimeError("no payloads given; use --payloads or --preset")
    with run_directory(args.out) as out:
        table = latency_table(payloads, cfg.link)
        write_latency_csv(table, out / "latency.csv")
        _freeze_config(cfg, out)
    print(f"latency report written to {args.out}/latency.csv")


def cmd_fidelity_report(args) -> None:
    cfg = _resolve_config(args)
    samples, split, palette, _ = load_corpus(args.data)
    if not split.test:
        raise RuntimeError("empty test split")
    seg_model = _load_seg(args.seg_checkpoint)
    token_vocab = token_vocab_for_palette(palette)
    task, head, predictor = _load_joint(args.joint_checkpoint, token_vocab.size)
    templates = {t.question_id: t for t in build_question_templates(palette)}

    with run_directory(args.out) as out:
        variants, _, _ = _predict_variant_inputs(
            cfg, samples, split, palette, seg_model, predictor
        )
        by_category: dict[str, list] = {}
        for row, i in enumerate(split.test):
            reference = variants[row]["predicted_mask"][0]
            masked = variants[row]["masked_mask"][0]
            rep = fidelity_for_pair(head, reference, masked, threshold=cfg.fidelity_threshold)
            by_category.setdefault("overall", []).append(rep)
            if task == "vqa":
                for qa in samples[i].qa:
                    kind = templates[qa.question_id].kind
                    by_category.setdefault(kind, []).append(rep)
        with open(out / "fidelity.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["category", "jaccard", "mse", "n"])
            for cat, reps in sorted(by_category.items()):
                writer.writerow(
                    [
                        cat,
                        f"{np.mean([r.jaccard for r in reps]):.4f}",
                        f"{np.mean([r.mse for r in reps]):.6f}",
                        len(reps),
                    ]
                )
        _freeze_config(cfg, out)
    print(f"fidelity report written to {args.out}/fidelity.csv")


def cmd_plot(args) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run = Path(args.run)
    with run_directory(args.out) as out:
        made_any = False
        iou_csv = run / "per_class_iou.csv"
        if iou_csv.exists():
            names, values = [], []
            with open(iou_csv, newline="") as fh:
                for rec in csv.DictReader(fh):
                    if rec["class"] == "mIoU" or rec["iou"] == "":
                        continue
                    names.append(rec["class"])
                    values.append(float(rec["iou"]))
            fig, ax = plt.subplots(figsize=(9, 4))
            ax.bar(range(len(names)), values, color="#4878a8")
            ax.set_xticks(range(len(names)), names, rotation=45, ha="right")
            ax.set_ylim(0, 1)
            ax.set_ylabel("IoU")
            ax.set_title("Per-class IoU")
            fig.tight_layout()
            fig.savefig(out / "miou_bars.png", dpi=150)
            plt.close(fig)
            made_any = True
        eval_csv = run / "eval.csv"
        if eval_csv.exists():
            labels, payload, accuracy = [], [], []
            with open(eval_csv, newline="") as fh:
                for rec in csv.DictReader(fh):
                    labels.append(rec["variant"])
                    payload.append(float(rec["mean_payload_bits"]))
                    accuracy.append(100.0 - float(rec["error_percent"]))
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.plot(payload, accuracy, "o")
            for x, y, name in zip(payload, accuracy, labels):
                ax.annotate(name, (x, y), fontsize=8, xytext=(4, 4), textcoords="offset points")
            ax.set_xscale("log")
            ax.set_xlabel("mean payload (bits)")
            ax.set_ylabel("accuracy (%)")
            ax.set_title("Accuracy vs payload")
            fig.tight_layout()
            fig.savefig(out / "accuracy_vs_payload.png", dpi=150)
            plt.close(fig)
            made_any = True
        if not made_any:
            raise RuntimeError(f"nothing to plot under {run}")
    print(f"plots written to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semask", description=__doc__)
    parser.add_argument("--float64", action="store_true", help="run torch in 64-bit mode")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, seg=False, joint=False):
        p.add_argument("--config", help="path to experiment config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override config seed")
        if data:
            p.add_argument("--data", required=True, help="corpus directory")
        if seg:
            p.add_argument("--seg-checkpoint", required=True)
        if joint:
            p.add_argument("--joint-checkpoint", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--n", type=int, help="number of scenes (overrides config)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-seg", help="train the segmentation network")
    common(p, data=True)
    p.set_defaults(func=cmd_train_seg)

    p = sub.add_parser("train-joint", help="jointly train mask predictor and head")
    common(p, data=True)
    p.add_argument("--seg-checkpoint", help="frozen segmentation checkpoint")
    p.add_argument("--unmasked", action="store_true", help="train the unmasked baseline")
    p.set_defaults(func=cmd_train_joint)

    p = sub.add_parser("eval", help="error rates and payloads per input variant")
    common(p, data=True, seg=True, joint=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("latency-report", help="transmission-latency matrix")
    common(p)
    p.add_argument("--payloads", help="JSON file: [{size_bits, description}, ...]")
    p.add_argument("--preset", choices=["floodnet", "rescuenet", "both", "none"], default="none")
    p.set_defaults(func=cmd_latency_report)

    p = sub.add_parser("fidelity-report", help="feature fidelity of masked masks")
    common(p, data=True, seg=True, joint=True)
    p.set_defaults(func=cmd_fidelity_report)

    p = sub.add_parser("plot", help="render mIoU bars and accuracy-vs-payload")
    common(p)
    p.add_argument("--run", required=True, help="directory holding eval CSVs")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.float64:
        import torch

        torch.set_default_dtype(torch.float64)
    try:
        args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
