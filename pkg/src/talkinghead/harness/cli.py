"""Command-line interface: corpus synthesis, training stages, generation, evaluation."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import click

from ..audiofeat import read_wav
from ..fileformats import read_coeff_file, read_video_dir
from . import checkpoint
from .config import TrainConfig, load_config
from .corpus import corpus_from_config, load_corpus, save_corpus
from .evaluation import evaluate_artifacts
from .pipeline import run_pipeline, save_meta
from .report import plot_loss_history, write_report
from .training import (
    history_decrease_ratio,
    train_codec,
    train_expert_on_corpus,
    train_stage1,
    train_stage2,
)


def _config(config_path, **overrides) -> TrainConfig:
    cfg = load_config(config_path) if config_path else TrainConfig()
    clean = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **clean) if clean else cfg


config_opt = click.option(
    "--config", "config_path", type=click.Path(exists=True), default=None,
    help="key = value config file",
)
seed_opt = click.option("--seed", type=int, default=None)
epochs_opt = click.option("--epochs", type=int, default=None)


@click.group()
def main():
    """Two-stage decoupled diffusion talking head toolkit."""


@main.command("synth-data")
@click.option("--out", "out_dir", required=True, type=click.Path())
@config_opt
@click.option("--n-clips", type=int, default=None)
@click.option("--frames", "f", type=int, default=None)
@seed_opt
def synth_data(out_dir, config_path, n_clips, f, seed):
    """Generate and save a synthetic corpus."""
    cfg = _config(config_path, n_clips=n_clips, F=f, seed=seed)
    corpus = corpus_from_config(cfg)
    save_corpus(out_dir, corpus)
    click.echo(f"wrote {len(corpus.clips)} clips of {corpus.num_frames} frames to {out_dir}")


@main.command("train-expert")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "models_dir", required=True, type=click.Path())
@config_opt
@epochs_opt
@seed_opt
def train_expert_cmd(data_dir, models_dir, config_path, epochs, seed):
    """Train the lip-sync expert on the corpus."""
    cfg = _config(config_path, epochs=epochs, seed=seed)
    corpus = load_corpus(data_dir)
    expert = train_expert_on_corpus(corpus, cfg)
    models_dir = Path(models_dir)
    checkpoint.save_expert(models_dir / "expert", expert)
    checkpoint.save_basis(models_dir / "basis", corpus.basis)
    save_meta(models_dir, cfg.T, cfg.steps)
    click.echo(f"saved expert to {models_dir / 'expert'}")


@main.command("train-motion")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "models_dir", required=True, type=click.Path())
@config_opt
@epochs_opt
@seed_opt
@click.option("--lr", type=float, default=None)
@click.option("--t", "t_steps", type=int, default=None, help="diffusion steps T")
@click.option("--steps", type=int, default=None, help="inference denoising steps")
@click.option("--lambda-exp", type=float, default=None)
@click.option("--lambda-pose", type=float, default=None)
@click.option("--lambda-sync", type=float, default=None)
@click.option("--single-transformer", is_flag=True, default=None)
@click.option("--no-alignment-mask", is_flag=True, default=None)
@click.option("--no-sync-loss", is_flag=True, default=None)
def train_motion(
    data_dir, models_dir, config_path, epochs, seed, lr, t_steps, steps,
    lambda_exp, lambda_pose, lambda_sync,
    single_transformer, no_alignment_mask, no_sync_loss,
):
    """Train the expression/pose transformers (stage 1)."""
    cfg = _config(
        config_path,
        epochs=epochs, seed=seed, lr=lr, T=t_steps, steps=steps,
        lambda_exp=lambda_exp, lambda_pose=lambda_pose, lambda_sync=lambda_sync,
        single_transformer=single_transformer,
        no_alignment_mask=no_alignment_mask,
        no_sync_loss=no_sync_loss,
    )
    corpus = load_corpus(data_dir)
    models_dir = Path(models_dir)
    expert = None
    if cfg.effective_lambda_sync > 0:
        expert = checkpoint.load_expert(models_dir / "expert")
    models, history = train_stage1(corpus, cfg, expert)
    if "joint" in models:
        checkpoint.save_motion_model(models_dir / "motion_joint", models["joint"])
    else:
        checkpoint.save_motion_model(models_dir / "motion_exp", models["exp"])
        checkpoint.save_motion_model(models_dir / "motion_pose", models["pose"])
    checkpoint.save_basis(models_dir / "basis", corpus.basis)
    save_meta(models_dir, cfg.T, cfg.steps)
    plot_loss_history(history, models_dir / "motion_loss.png", keys=("total",))
    click.echo(
        f"stage-1 loss decrease: {100 * history_decrease_ratio(history):.1f}% "
        f"over {len(history)} steps"
    )


@main.command("train-codec")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "models_dir", required=True, type=click.Path())
@config_opt
@epochs_opt
@seed_opt
@click.option("--lr", type=float, default=None)
def train_codec_cmd(data_dir, models_dir, config_path, epochs, seed, lr):
    """Train the latent frame codec (stage-2 prerequisite)."""
    cfg = _config(config_path, epochs=epochs, seed=seed, codec_lr=lr)
    corpus = load_corpus(data_dir)
    codec, _, history = train_codec(corpus, cfg)
    models_dir = Path(models_dir)
    checkpoint.save_codec(models_dir / "codec", codec, cfg.codec_channels)
    save_meta(models_dir, cfg.T, cfg.steps)
    plot_loss_history(history, models_dir / "codec_loss.png")
    click.echo(
        f"codec loss decrease: {100 * history_decrease_ratio(history):.1f}% "
        f"over {len(history)} steps"
    )


@main.command("train-unet")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "models_dir", required=True, type=click.Path())
@config_opt
@epochs_opt
@seed_opt
@click.option("--lr", type=float, default=None)
@click.option("--coeff-source", type=click.Choice(["gt", "sampled"]), default=None)
@click.option("--concat-unet-conditions", is_flag=True, default=None)
def train_unet_cmd(data_dir, models_dir, config_path, epochs, seed, lr, coeff_source,
                   concat_unet_conditions):
    """Train the conditional frame UNet (stage 2)."""
    cfg = _config(
        config_path,
        epochs=epochs, seed=seed, unet_lr=lr,
        stage2_coeff_source=coeff_source,
        concat_unet_conditions=concat_unet_conditions,
    )
    corpus = load_corpus(data_dir)
    models_dir = Path(models_dir)
    codec = checkpoint.load_codec(models_dir / "codec")
    motion_models = None
    if cfg.stage2_coeff_source == "sampled":
        motion_models = {
            "exp": checkpoint.load_motion_model(models_dir / "motion_exp"),
            "pose": checkpoint.load_motion_model(models_dir / "motion_pose"),
        }
    unet, history = train_stage2(corpus, cfg, codec, motion_models)
    checkpoint.save_unet(models_dir / "unet", unet, (cfg.unet_c0, cfg.unet_c1), cfg.heads)
    save_meta(models_dir, cfg.T, cfg.steps)
    plot_loss_history(history, models_dir / "unet_loss.png")
    click.echo(
        f"stage-2 loss decrease: {100 * history_decrease_ratio(history):.1f}% "
        f"over {len(history)} steps"
    )


@main.command("generate")
@click.option("--audio", "audio_path", required=True, type=click.Path(exists=True))
@click.option("--reference", "reference_path", required=True, type=click.Path(exists=True))
@click.option("--models", "models_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@click.option("--steps", type=int, default=None)
def generate(audio_path, reference_path, models_dir, out_dir, seed, steps):
    """Drive the reference image with the audio clip."""
    result = run_pipeline(audio_path, reference_path, models_dir, out_dir, seed=seed, steps=steps)
    for name, value in result["metrics"].items():
        click.echo(f"{name} = {value:.6g}")
    click.echo(f"wrote {int(result['metrics']['frames'])} frames to {Path(out_dir) / 'frames'}")


@main.command("evaluate")
@click.option("--generated", "generated_dir", type=click.Path(exists=True), default=None)
@click.option("--reference-video", "reference_dir", type=click.Path(exists=True), default=None)
@click.option("--pose", "pose_path", type=click.Path(exists=True), default=None)
@click.option("--beta", "beta_path", type=click.Path(exists=True), default=None)
@click.option("--audio", "audio_path", type=click.Path(exists=True), default=None)
@click.option("--models", "models_dir", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
def evaluate(generated_dir, reference_dir, pose_path, beta_path, audio_path, models_dir, out_dir):
    """Score whatever artifacts are provided; write report + figures."""
    generated = read_video_dir(generated_dir)[0] if generated_dir else None
    reference = read_video_dir(reference_dir)[0] if reference_dir else None
    pose = read_coeff_file(pose_path) if pose_path else None
    beta = read_coeff_file(beta_path) if beta_path else None
    wave = read_wav(audio_path) if audio_path else None
    expert = basis = None
    if models_dir:
        models_dir = Path(models_dir)
        if (models_dir / "expert").exists():
            expert = checkpoint.load_expert(models_dir / "expert")
        if (models_dir / "basis").exists():
            basis = checkpoint.load_basis(models_dir / "basis")
    metrics, beats = evaluate_artifacts(
        generated_frames=generated,
        reference_frames=reference,
        pose=pose,
        beta=beta,
        wave=wave,
        expert=expert,
        basis=basis,
    )
    if not metrics:
        raise click.UsageError("no metrics computable from the provided artifacts")
    write_report(metrics, out_dir, beats=beats)
    for name, value in metrics.items():
        click.echo(f"{name} = {value:.6g}")


@main.command("ablate")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@config_opt
@click.option("--epochs", type=int, default=1)
@seed_opt
def ablate(data_dir, out_dir, config_path, epochs, seed):
    """Build and briefly train every ablation arm; report structural checks."""
    cfg = _config(config_path, epochs=epochs, seed=seed, lambda_sync=0.0)
    corpus = load_corpus(data_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    metrics = {}

    arms = {
        "full": cfg,
        "single_transformer": replace(cfg, single_transformer=True),
        "no_alignment_mask": replace(cfg, no_alignment_mask=True),
    }
    for name, arm_cfg in arms.items():
        models, history = train_stage1(corpus, arm_cfg, expert=None)
        metrics[f"{name}_final_loss"] = history[-1]["total"]
        param_sets = {k: sum(p.numel() for p in m.parameters()) for k, m in models.items()}
        lines.append(f"{name}: models={sorted(models)} params={param_sets}")
    codec_cfg = replace(cfg, epochs=max(1, epochs))
    codec, _, _ = train_codec(corpus, codec_cfg)
    for name, fused in (("dual_conditions", False), ("concat_unet_conditions", True)):
        unet, history = train_stage2(
            corpus, replace(cfg, concat_unet_conditions=fused), codec
        )
        metrics[f"{name}_final_loss"] = history[-1]["total"]
        blocks = [unet.down_cond, unet.mid_cond, unet.up_cond]
        fused_count = sum(b.fused for b in blocks)
        lines.append(f"{name}: fused_sites={fused_count}/{len(blocks)}")
    (out_dir / "ablation.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_report(metrics, out_dir)
    for line in lines:
        click.echo(line)


if __name__ == "__main__":
    main()
