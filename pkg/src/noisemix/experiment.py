"""Experiment orchestration: full runs, ablations, sweeps, multi-seed batches."""

from __future__ import annotations

import copy
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import RunConfig, config_hash, resolved_text, set_key
from .datastream import TaskStream, load_embedding_stream, make_synthetic_stream
from .model import ContinualModel, build_model
from .numeric import SeededRng, derive_seed
from .pinoise import MixtureStrategy
from .report import RunSummary, emit, render_line_chart, summarize
from .trainer import TrainConfig, cosine_lr, run_session

ABLATION_VARIANTS = (
    "baseline",
    "average",
    "mu-only",
    "sigma-only",
    "last-task",
    "random-task",
    "full",
)

SWEEP_PARAMETERS = {
    "lambda": "classifier.regularization",
    "buffer_size": "backbone.buffer_size",
    "d2": "pinoise.latent_dim",
    "tau": "pinoise.tau",
}


def build_stream(cfg: RunConfig) -> TaskStream:
    d = cfg.data
    if d.source == "embedding":
        return load_embedding_stream(d.embedding_path, d.tasks, d.class_seed)
    return make_synthetic_stream(
        num_classes=d.num_classes,
        samples_per_class=d.samples_per_class,
        dim=d.dim,
        separation=d.separation,
        overlap_classes=d.overlap_classes,
        num_tasks=d.tasks,
        seed=d.class_seed,
    )


def build_run_model(cfg: RunConfig, input_dim: int) -> ContinualModel:
    p, b = cfg.pinoise, cfg.backbone
    return build_model(
        input_dim=input_dim,
        feature_dim=b.feature_dim,
        depth=b.depth,
        gain=b.gain,
        buffer_size=b.buffer_size,
        latent_dim=p.latent_dim,
        regularization=cfg.classifier.regularization,
        seed=b.seed,
        with_noise=p.enabled,
        strategy=MixtureStrategy.from_string(p.strategy),
        shared_mix_weights=p.shared_omega,
        stochastic_eval=p.stochastic_eval,
    )


def train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        epochs=t.epochs,
        batch_size=t.batch_size,
        lr_init=t.lr_init,
        momentum=t.momentum,
        tau=cfg.pinoise.tau,
        loss_mode=t.loss_mode,
        grad_clip=t.grad_clip,
        init_scale=cfg.pinoise.init_scale,
    )


def run_training(
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    resume_path: str | Path | None = None,
    stop_after: int | None = None,
    log: bool = True,
) -> RunSummary:
    """Run all sessions of the configured stream, emitting artifacts.

    With ``resume_path`` the model state is restored from a checkpoint and
    training continues at the next session; ``stop_after`` halts early (the
    checkpoint still gets written, so a later resume completes the run).
    """
    cfg.validate()
    stream = build_stream(cfg)
    model = build_run_model(cfg, stream.feature_dim)
    tcfg = train_config(cfg)
    hash_ = config_hash(cfg)

    start_task = 1
    earlier_reports = []
    if resume_path is not None:
        meta = ckpt.load_into(model, resume_path)
        if meta["config_hash"] != hash_:
            raise ckpt.CheckpointError("checkpoint was written by a different configuration")
        earlier_reports = ckpt.load_history(resume_path)
        start_task = model.sessions_completed + 1
        if len(earlier_reports) != model.sessions_completed:
            raise ckpt.CheckpointError("checkpoint history does not match completed sessions")

    last_task = stream.num_tasks if stop_after is None else min(stop_after, stream.num_tasks)
    out = Path(out_dir) if out_dir is not None else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.csv"
    if log and (start_task == 1 or not log_path.exists()):
        log_path.write_text("session,epoch,lr,mean_loss\n", encoding="utf-8")

    reports = []
    for t in range(start_task, last_task + 1):
        session_rng = SeededRng(derive_seed(cfg.train.seed, "session", t))
        report = run_session(model, stream, tcfg, session_rng)
        reports.append(report)
        if log:
            with open(log_path, "a", encoding="utf-8") as fh:
                for epoch, loss in enumerate(report.epoch_losses):
                    lr = cosine_lr(epoch, tcfg.epochs, tcfg.lr_init)
                    fh.write(f"{t},{epoch},{lr:.8f},{loss:.8f}\n")

    reports = earlier_reports + reports
    summary = summarize(reports, hash_)
    emit(summary, out)
    ckpt.save_checkpoint(
        out / "checkpoint.nmcp", model, hash_, cfg.train.seed, stream.num_tasks, history=reports
    )
    manifest = out / "run.json"
    manifest.write_text(
        '{"config_hash": "%s", "stream_hash": "%s", "sessions": %d}\n'
        % (hash_, stream.content_hash(), model.sessions_completed),
        encoding="utf-8",
    )
    (out / "config.resolved").write_text(resolved_text(cfg), encoding="utf-8")
    return summary


def _variant_config(cfg: RunConfig, variant: str) -> RunConfig:
    v = copy.deepcopy(cfg)
    if variant == "baseline":
        v.pinoise.enabled = False
    elif variant == "full":
        v.pinoise.enabled = True
        v.pinoise.strategy = "learned-omega"
    elif variant in ("average", "mu-only", "sigma-only", "last-task", "random-task"):
        v.pinoise.enabled = True
        v.pinoise.strategy = variant
    else:
        raise ValueError(f"unknown ablation variant {variant!r} (valid: {ABLATION_VARIANTS})")
    return v


def run_ablation(
    cfg: RunConfig,
    variants: list[str] | None = None,
    class_seeds: list[int] | None = None,
    out_dir: str | Path | None = None,
) -> list[dict]:
    """Run every variant on identical streams and emit a comparative CSV.

    With several class-order seeds each variant is run once per seed and the
    table reports mean and sample standard deviation of both metrics.
    """
    cfg.validate()
    variants = list(variants) if variants else list(ABLATION_VARIANTS)
    if len(variants) < 2:
        raise ValueError("ablation needs at least 2 variants")
    seeds = class_seeds or [cfg.data.class_seed]
    out = Path(out_dir) if out_dir is not None else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    stream_hashes: dict[int, set[str]] = {s: set() for s in seeds}
    rows = []
    for variant in variants:
        avg_accs, last_accs = [], []
        for seed in seeds:
            vcfg = _variant_config(cfg, variant)
            vcfg.data.class_seed = seed
            stream = build_stream(vcfg)
            stream_hashes[seed].add(stream.content_hash())
            model = build_run_model(vcfg, stream.feature_dim)
            tcfg = train_config(vcfg)
            reports = []
            for t in range(1, stream.num_tasks + 1):
                session_rng = SeededRng(derive_seed(vcfg.train.seed, "session", t))
                reports.append(run_session(model, stream, tcfg, session_rng))
            summary = summarize(reports, config_hash(vcfg))
            avg_accs.append(summary.average_accuracy)
            last_accs.append(summary.last_accuracy)
        rows.append(
            {
                "variant": variant,
                "seeds": len(seeds),
                "avg_pct_mean": 100.0 * float(np.mean(avg_accs)),
                "avg_pct_std": 100.0 * float(np.std(avg_accs, ddof=1)) if len(seeds) > 1 else 0.0,
                "last_pct_mean": 100.0 * float(np.mean(last_accs)),
                "last_pct_std": 100.0 * float(np.std(last_accs, ddof=1)) if len(seeds) > 1 else 0.0,
            }
        )
    for seed, hashes in stream_hashes.items():
        if len(hashes) != 1:
            raise RuntimeError(f"variants saw different streams for seed {seed}")

    lines = ["variant,seeds,avg_pct_mean,avg_pct_std,last_pct_mean,last_pct_std"]
    for r in rows:
        lines.append(
            f"{r['variant']},{r['seeds']},{r['avg_pct_mean']:.2f},{r['avg_pct_std']:.2f},"
            f"{r['last_pct_mean']:.2f},{r['last_pct_std']:.2f}"
        )
    (out / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows


def trainable_param_count(cfg: RunConfig, task_index: int = 1) -> int:
    """Parameters trained in one session: generators, mix weights, auxiliary."""
    if not cfg.pinoise.enabled:
        return 0
    d2 = cfg.pinoise.latent_dim
    depth = cfg.backbone.depth
    per_layer_gen = 2 * (d2 * d2 + d2)
    omega = task_index if cfg.pinoise.shared_omega else depth * task_index
    classes_per_task = cfg.data.num_classes // cfg.data.tasks
    aux = cfg.backbone.buffer_size * classes_per_task * task_index
    return depth * per_layer_gen + omega + aux


def run_sweep(
    cfg: RunConfig,
    parameter: str,
    values: list[float],
    out_dir: str | Path | None = None,
) -> list[dict]:
    """One full run per value of a single hyperparameter, shared data seed."""
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r} (valid: {sorted(SWEEP_PARAMETERS)})")
    if not values:
        raise ValueError("sweep needs at least one value")
    cfg.validate()
    out = Path(out_dir) if out_dir is not None else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    key = SWEEP_PARAMETERS[parameter]
    rows = []
    for value in values:
        vcfg = copy.deepcopy(cfg)
        raw = str(int(value)) if parameter in ("buffer_size", "d2") else str(value)
        set_key(vcfg, key, raw)
        vcfg.validate()
        stream = build_stream(vcfg)
        model = build_run_model(vcfg, stream.feature_dim)
        tcfg = train_config(vcfg)
        reports = []
        for t in range(1, stream.num_tasks + 1):
            session_rng = SeededRng(derive_seed(vcfg.train.seed, "session", t))
            reports.append(run_session(model, stream, tcfg, session_rng))
        summary = summarize(reports, config_hash(vcfg))
        rows.append(
            {
                "parameter": parameter,
                "value": value,
                "avg_pct": 100.0 * summary.average_accuracy,
                "last_pct": 100.0 * summary.last_accuracy,
                "trainable_params": trainable_param_count(vcfg),
            }
        )

    lines = ["parameter,value,avg_pct,last_pct,trainable_params"]
    for r in rows:
        lines.append(
            f"{r['parameter']},{r['value']},{r['avg_pct']:.2f},{r['last_pct']:.2f},{r['trainable_params']}"
        )
    (out / f"sweep_{parameter}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    points = [(float(r["value"]), r["avg_pct"]) for r in rows]
    svg = render_line_chart(
        [(parameter, points)],
        x_label=parameter,
        y_label="average accuracy (%)",
        annotation=f"sweep {parameter}",
    )
    (out / f"sweep_{parameter}.svg").write_text(svg, encoding="utf-8")
    return rows


def run_multi_seed(
    cfg: RunConfig, class_seeds: list[int], out_dir: str | Path | None = None
) -> dict:
    """Independent full runs over class-order seeds, aggregated mean and std."""
    cfg.validate()
    if not class_seeds:
        raise ValueError("need at least one seed")
    out = Path(out_dir) if out_dir is not None else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    avg, last = [], []
    for seed in class_seeds:
        vcfg = copy.deepcopy(cfg)
        vcfg.data.class_seed = seed
        summary = run_training(vcfg, out_dir=out / f"seed_{seed}", log=False)
        avg.append(summary.average_accuracy)
        last.append(summary.last_accuracy)
    agg = {
        "seeds": class_seeds,
        "avg_pct_mean": 100.0 * float(np.mean(avg)),
        "avg_pct_std": 100.0 * float(np.std(avg, ddof=1)) if len(avg) > 1 else 0.0,
        "last_pct_mean": 100.0 * float(np.mean(last)),
        "last_pct_std": 100.0 * float(np.std(last, ddof=1)) if len(last) > 1 else 0.0,
    }
    lines = ["seed,avg_pct,last_pct"]
    for seed, a, l in zip(class_seeds, avg, last):
        lines.append(f"{seed},{100.0 * a:.2f},{100.0 * l:.2f}")
    (out / "seeds.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return agg
