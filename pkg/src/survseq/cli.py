"""Command-line entry point: ``survseq <command> [options]``.

Failures print a single ``error: kind=<Kind> message=<text>`` line on stderr
and exit 1; argument errors exit 2 with usage text.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import Checkpoint
from .config import RunConfig, default_config_text, dump_config, load_config
from .data import Dataset, ingest_long_format
from .decoder import write_pdf
from .pipeline import (
    TrainingDiverged,
    crossvalidate,
    evaluate,
    load_dataset,
    predict,
    prepare,
    restore,
    split_validation,
    train,
)
from .synth import export, generate

log = logging.getLogger("survseq")


def _manifest(cfg: RunConfig, command: str, **extra) -> dict:
    return {"command": command, "code_version": __version__, "seed": cfg.seed, "config": cfg.to_dict()} | extra


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    obs = getattr(args, "observations", None)
    labels = getattr(args, "labels", None)
    if obs is not None or labels is not None:
        cfg.data.observations, cfg.data.labels = obs, labels
    cfg.validate()
    return cfg


def _dataset(cfg: RunConfig) -> Dataset:
    return prepare(cfg, load_dataset(cfg))


def cmd_generate(args) -> int:
    cfg = _config(args)
    if args.seed is not None:
        cfg.synthetic.seed = args.seed
    cohort = generate(cfg.synthetic)
    manifest = export(cohort.dataset, args.out_dir, cfg.synthetic)
    print(f"subjects={manifest['n_subjects']} rows={manifest['n_observation_rows']} out_dir={args.out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = _dataset(cfg)
    fit_idx, val_idx = split_validation(np.arange(len(ds)), cfg.train.val_fraction, [cfg.seed, 9])
    out = Path(args.out_dir)
    try:
        res = train(cfg, ds.subset(fit_idx), ds.subset(val_idx), n_events=max(ds.n_events, 1))
    except TrainingDiverged as exc:
        exc.checkpoint.save(out / "last_good.ckpt")
        raise
    res.checkpoint.save(out / "model.ckpt")
    _write_json(out / "history.json", res.history_dict())
    _write_json(out / "manifest.json", _manifest(cfg, "train", best_epoch=res.best_epoch, seconds=res.seconds))
    (out / "run.cfg").write_text(dump_config(cfg), encoding="utf-8")
    last = res.history[-1] if res.history else None
    print(f"best_epoch={res.best_epoch} epochs={len(res.history)} "
          f"val_loss={last.val_loss if last else 'NA'} checkpoint={out / 'model.ckpt'}")
    return 0


def cmd_evaluate(args) -> int:
    from .metrics import aggregate_folds

    model = restore(Checkpoint.load(args.checkpoint))
    cfg = _config(args)
    ds = _dataset(cfg)
    frag = evaluate(model.params, model.config, model.spec, model.stats, ds)
    report = aggregate_folds([frag], model.config.decoder_kind)
    report.write(args.out_dir, "evaluation")
    sys.stdout.write(report.to_text())
    return 0


def cmd_cv(args) -> int:
    cfg = _config(args)
    ds = _dataset(cfg)
    cv = crossvalidate(cfg, ds)
    out = Path(args.out_dir)
    cv.report.write(out, "report")
    for f, res in enumerate(cv.results):
        res.checkpoint.save(out / f"fold{f}.ckpt")
    folds = {f"fold{f}": [ds.samples[i].subject_id for i in idx] for f, idx in enumerate(cv.folds)}
    _write_json(out / "folds.json", folds)
    _write_json(out / "manifest.json", _manifest(cfg, "cv", seconds=[r.seconds for r in cv.results]))
    sys.stdout.write(cv.report.to_text())
    return 0


def cmd_predict(args) -> int:
    model = restore(Checkpoint.load(args.checkpoint))
    cfg = _config(args)
    ds = _dataset(cfg)
    pred = predict(model, ds)
    out = Path(args.out_dir)
    (out / "pdfs").mkdir(parents=True, exist_ok=True)
    with open(out / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "event", "predicted_time", "probability"])
        for i, sid in enumerate(pred.subject_ids):
            for k in range(pred.pdfs.shape[1]):
                w.writerow([sid, k + 1, repr(float(pred.times[i, k])), repr(float(pred.pdfs[i, k].sum()))])
    for i, sid in enumerate(pred.subject_ids):
        write_pdf(out / "pdfs" / f"{sid}.csv", pred.pdfs[i], pred.bin_width, sid)
    print(f"subjects={len(pred.subject_ids)} out_dir={out}")
    return 0


def cmd_export_plots(args) -> int:
    model = restore(Checkpoint.load(args.checkpoint))
    cfg = _config(args)
    ds = _dataset(cfg)
    wanted = set(args.sample)
    chosen = [s for s in ds.samples if s.subject_id in wanted]
    missing = sorted(wanted - {s.subject_id for s in chosen})
    if missing:
        raise KeyError(f"unknown subject ids: {', '.join(missing)}")
    pred = predict(model, Dataset(ds.covariates, chosen, ds.time_unit))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bw = pred.bin_width
    for i, sid in enumerate(pred.subject_ids):
        with open(out / f"curves_{sid}.csv", "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# subject_id={sid}\n# event_type={chosen[i].event_type}\n# event_time={chosen[i].event_time!r}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["event", "bin", "time", "pdf", "cdf"])
            for k in range(pred.pdfs.shape[1]):
                for t in range(pred.pdfs.shape[2]):
                    w.writerow([k + 1, t, repr(t * bw), repr(float(pred.pdfs[i, k, t])), repr(float(pred.cdfs[i, k, t]))])
    print(f"curves={len(pred.subject_ids)} out_dir={out}")
    return 0


def cmd_config(args) -> int:
    sys.stdout.write(default_config_text() if args.config is None else dump_config(load_config(args.config)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration (see `survseq config`)")
    common.add_argument("--seed", type=int, help="override run.seed (synthetic.seed for generate)")
    common.add_argument("--out-dir", default="out", help="output directory (default: out)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--observations", help="long-format observation csv (overrides data.observations)")
    data.add_argument("--labels", help="label csv (overrides data.labels)")

    ckpt = argparse.ArgumentParser(add_help=False)
    ckpt.add_argument("--checkpoint", required=True, help="model checkpoint file")

    p = argparse.ArgumentParser(prog="survseq", description="Survival Seq2Seq toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic cohort").set_defaults(fn=cmd_generate)
    sub.add_parser("train", parents=[common, data], help="train one model").set_defaults(fn=cmd_train)
    sub.add_parser("evaluate", parents=[common, data, ckpt], help="MAE/CI report for a checkpoint").set_defaults(
        fn=cmd_evaluate
    )
    sub.add_parser("cv", parents=[common, data], help="k-fold cross-validation").set_defaults(fn=cmd_cv)
    sub.add_parser("predict", parents=[common, data, ckpt], help="PDFs and predicted times").set_defaults(
        fn=cmd_predict
    )
    plots = sub.add_parser("export-plots", parents=[common, data, ckpt], help="per-event PDF/CDF curve files")
    plots.add_argument("--sample", action="append", required=True, help="subject id (repeatable)")
    plots.set_defaults(fn=cmd_export_plots)
    sub.add_parser("config", parents=[common], help="print the documented default config").set_defaults(fn=cmd_config)
    return p


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        print("error: kind=Interrupted message=interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parsable line
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: kind={type(exc).__name__} message={_one_line(msg)}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
