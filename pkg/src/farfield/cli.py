"""Command-line interface.

Exit codes: 0 on success, 2 on input errors, 3 on numerical failures.
Logs go to standard error; results go to files (or stdout for small reports).
"""

from __future__ import annotations

import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from .counting import EmbeddingSet, count_speakers_session
from .diarization import ChunkSegmentation, postprocess_merge
from .errors import InputError, NumericalError
from .fusion import fuse
from .io import (
    format_report,
    load_manifest,
    read_c50,
    read_dmx,
    read_embeddings,
    read_rttm,
    read_session,
    write_rttm,
    write_wav,
)
from .metrics import count_metrics, der
from .pipeline import (
    PipelineConfig,
    boundaries_for_output,
    build_demo_session,
    enhance_chunkwise,
    enhance_utterance,
    load_config,
    run_diarization_assembly,
    select_microphones,
)
from .segments import speakers_of

logger = logging.getLogger("farfield")


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _config(ctx) -> PipelineConfig:
    cfg = load_config(ctx.obj["config"]) if ctx.obj["config"] else PipelineConfig()
    if ctx.obj["seed"] is not None:
        cfg.seed = ctx.obj["seed"]
    return cfg


@click.group()
@click.option("--config", type=click.Path(), default=None, help="Pipeline config YAML.")
@click.option("--seed", type=int, default=None, help="Random seed override.")
@click.option("--jobs", type=int, default=1, show_default=True, help="Worker threads.")
@click.option("--verbose", is_flag=True, help="Debug logging.")
@click.pass_context
def main(ctx, config, seed, jobs, verbose):
    """Multichannel enhancement and diarization frontend for distant recordings."""
    _setup_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj.update(config=config, seed=seed, jobs=max(1, jobs))


def _load_activities(manifest, cfg) -> list[ChunkSegmentation]:
    if manifest.activities_dir is None:
        raise InputError("manifest has no activities_dir")
    if manifest.activity_frame_rate is None:
        raise InputError("manifest has no activity_frame_rate")
    n_mics = len(list(manifest.channel_paths))
    per_mic = []
    wave_like = sorted(manifest.activities_dir.glob("act_m*_c*.dmx"))
    if not wave_like:
        raise InputError(f"no activity files in {manifest.activities_dir}")
    for m in range(n_mics):
        chunks = sorted(
            manifest.activities_dir.glob(f"act_m{m}_c*.dmx"),
            key=lambda p: int(p.stem.split("_c")[1]),
        )
        if not chunks:
            raise InputError(f"missing activity files for microphone {m}")
        posts = [read_dmx(p) for p in chunks]
        per_mic.append(
            ChunkSegmentation(
                np.stack(posts),
                frame_rate=manifest.activity_frame_rate,
                chunk_len=cfg.chunk_len,
            )
        )
    return per_mic


def _load_embeddings(manifest) -> EmbeddingSet:
    if manifest.embeddings_dir is None:
        raise InputError("manifest has no embeddings_dir")
    prefix = manifest.embeddings_dir / "embeddings"
    vectors, index = read_embeddings(prefix)
    return EmbeddingSet(
        vectors,
        [(m, c, sc, ls) for m, c, sc, ls, _ in index],
        np.array([d for *_, d in index]),
    )


@main.command("select-mics")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--method", type=click.Choice(["ev-topk", "ev-c50"]), default="ev-c50")
@click.option("--kmin", type=int, default=15, show_default=True)
@click.option("--ratio", type=float, default=0.65, show_default=True)
@click.option("--start", type=float, default=None, help="Segment start (s).")
@click.option("--end", type=float, default=None, help="Segment end (s).")
@click.pass_context
def select_mics_cmd(ctx, manifest, method, kmin, ratio, start, end):
    """Rank microphones and print the selected channel ids."""
    cfg = _config(ctx)
    cfg.selection.method = method
    cfg.selection.k_min = kmin
    cfg.selection.ratio_k1 = ratio
    session = load_manifest(manifest)
    wave = read_session(manifest)
    if start is not None or end is not None:
        wave = wave.slice_seconds(start or 0.0, end if end is not None else wave.duration)
    c50 = read_c50(session.c50_file) if session.c50_file else None
    chosen = select_microphones(wave, cfg, c50)
    for mic in chosen:
        click.echo(wave.channel_ids[mic])


@main.command("enhance")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--rttm", type=click.Path(exists=True), required=True, help="Diarization input.")
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--speaker", default=None, help="Only this speaker.")
@click.option("--beamformer", type=click.Choice(["sp-mwf", "r1-mwf", "mvdr", "sdw-mwf"]), default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--ban", type=click.Choice(["on", "off"]), default=None)
@click.option("--delta-db", type=float, default=None, help="TF-mask floor in dB (0 disables).")
@click.option("--context", type=float, default=None, help="Context seconds.")
@click.option("--wpe-taps", type=int, default=None)
@click.option("--wpe-delay", type=int, default=None)
@click.option("--wpe-iters", type=int, default=None)
@click.pass_context
def enhance_cmd(ctx, manifest, rttm, out_dir, speaker, beamformer, gamma, ban, delta_db,
                context, wpe_taps, wpe_delay, wpe_iters):
    """Enhance every diarized utterance to mono WAV files."""
    cfg = _config(ctx)
    if beamformer:
        cfg.beamformer.kind = "mvdr-souden" if beamformer == "mvdr" else beamformer
    if gamma is not None:
        cfg.beamformer.gamma = gamma
    if ban is not None:
        cfg.beamformer.ban = ban == "on"
    if delta_db is not None:
        cfg.beamformer.mask_floor_db = delta_db
    if context is not None:
        cfg.context = context
    if wpe_taps is not None:
        cfg.wpe.taps = wpe_taps
    if wpe_delay is not None:
        cfg.wpe.delay = wpe_delay
    if wpe_iters is not None:
        cfg.wpe.iterations = wpe_iters

    session = load_manifest(manifest)
    wave = read_session(manifest)
    boundaries = read_rttm(rttm)
    c50 = read_c50(session.c50_file) if session.c50_file else None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    jobs = []
    for spk in speakers_of(boundaries):
        if speaker and spk != speaker:
            continue
        n = sum(1 for s in boundaries if s.speaker == spk)
        jobs.extend((spk, j) for j in range(n))

    def run(job):
        spk, j = job
        enhanced = enhance_utterance(wave, boundaries, (spk, j), cfg, c50)
        path = out / f"{session.name}_{spk}_{j:04d}.wav"
        write_wav(path, enhanced.channels, enhanced.sample_rate)
        return path

    if ctx.obj["jobs"] > 1:
        with ThreadPoolExecutor(max_workers=ctx.obj["jobs"]) as pool:
            paths = list(pool.map(run, jobs))
    else:
        paths = [run(job) for job in jobs]
    for path in paths:
        click.echo(str(path))


@main.command("chunk-enhance")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--out-dir", type=click.Path(), required=True)
@click.pass_context
def chunk_enhance_cmd(ctx, manifest, out_dir):
    """Chunk-wise per-microphone enhancement for embedding extraction."""
    cfg = _config(ctx)
    session = load_manifest(manifest)
    wave = read_session(manifest)
    activities = _load_activities(session, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = enhance_chunkwise(wave, activities, cfg)
    for (mic, chunk, local), signal in sorted(results.items()):
        path = out / f"{session.name}_m{mic}_c{chunk}_s{local}.wav"
        write_wav(path, signal, wave.sample_rate)
        click.echo(str(path))


@main.command("count-speakers")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--subchunk", type=float, default=15.0, show_default=True)
@click.option("--tmin", type=float, default=0.75, show_default=True)
@click.option("--theta-mic", type=float, default=0.05, show_default=True)
@click.option("--tcorr", type=float, default=120.0, show_default=True)
@click.pass_context
def count_speakers_cmd(ctx, manifest, subchunk, tmin, theta_mic, tcorr):
    """Estimate the number of speakers from subchunk embeddings."""
    del subchunk  # subchunk structure is fixed by the embedding files
    session = load_manifest(manifest)
    wave = read_session(manifest)
    embeddings = _load_embeddings(session)
    sub_rows = np.array([sc >= 0 for _, _, sc, _ in embeddings.index])
    estimate = count_speakers_session(
        wave,
        embeddings.subset(sub_rows),
        t_min=tmin,
        theta_mic=theta_mic,
        t_corr=tcorr,
    )
    report = {"n_speakers": estimate.session, "n_groups": len(estimate.per_group)}
    for g, (count, weight) in enumerate(estimate.per_group):
        report[f"group{g}_count"] = count
        report[f"group{g}_embeddings"] = weight
    click.echo(format_report(report), nl=False)


@main.command("diarize-assemble")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--n-speakers", type=int, default=None, help="Skip counting.")
@click.option("--profile", type=click.Choice(["for-asr", "for-gss"]), default=None)
@click.pass_context
def diarize_assemble_cmd(ctx, manifest, out_dir, n_speakers, profile):
    """Assemble per-microphone and fused diarization from posterior files."""
    cfg = _config(ctx)
    if profile:
        cfg.postprocessing.profile = profile
    session = load_manifest(manifest)
    wave = read_session(manifest)
    activities = _load_activities(session, cfg)
    embeddings = _load_embeddings(session)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_mic, fused, estimate = run_diarization_assembly(
        wave, activities, embeddings, cfg, n_speakers=n_speakers, n_jobs=ctx.obj["jobs"]
    )
    for mic, segments in enumerate(per_mic):
        write_rttm(
            out / f"{session.name}_mic{mic}.rttm",
            boundaries_for_output(segments, cfg),
            session.name,
        )
    write_rttm(
        out / f"{session.name}_fused.rttm",
        boundaries_for_output(fused, cfg),
        session.name,
    )
    report = {"n_speakers": len(speakers_of(fused))}
    if estimate is not None:
        report["estimated_speakers"] = estimate.session
    (out / f"{session.name}_count.txt").write_text(format_report(report))
    click.echo(str(out / f"{session.name}_fused.rttm"))


@main.command("fuse")
@click.option("--inputs", "-i", multiple=True, required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), required=True)
@click.option("--frame", type=float, default=0.01, show_default=True)
@click.option("--session", default="session")
def fuse_cmd(inputs, out, frame, session):
    """Fuse several RTTM hypotheses by label alignment and majority vote."""
    hypotheses = [read_rttm(p) for p in inputs]
    fused = fuse(hypotheses, resolution=frame)
    write_rttm(out, fused, session)
    click.echo(out)


@main.command("postprocess")
@click.argument("activity_dmx", type=click.Path(exists=True))
@click.option("--frame-rate", type=float, required=True, help="Activity frames per second.")
@click.option("--out", type=click.Path(), required=True)
@click.option("--threshold", type=float, default=0.30, show_default=True)
@click.option("--offset", type=float, default=0.0, show_default=True)
@click.option("--merge", type=float, default=1.5, show_default=True)
@click.option("--session", default="session")
def postprocess_cmd(activity_dmx, frame_rate, out, threshold, offset, merge, session):
    """Turn a speaker-activity matrix into utterance boundaries."""
    activity = np.clip(read_dmx(activity_dmx), 0.0, 1.0)
    segments = postprocess_merge(
        activity, frame_rate, threshold=threshold, offset=offset, merge=merge
    )
    write_rttm(out, segments, session)
    click.echo(out)


@main.command("score")
@click.option("--ref", type=click.Path(exists=True), required=True)
@click.option("--hyp", type=click.Path(exists=True), required=True)
@click.option("--collar", type=float, default=0.25, show_default=True)
def score_cmd(ref, hyp, collar):
    """Diarization error rate of a hypothesis against a reference."""
    report = der(read_rttm(ref), read_rttm(hyp), collar=collar)
    click.echo(format_report(report.as_dict()), nl=False)


@main.command("score-count")
@click.option("--ref", "ref_counts", required=True, help="Comma-separated true counts.")
@click.option("--hyp", "hyp_counts", required=True, help="Comma-separated estimates.")
def score_count_cmd(ref_counts, hyp_counts):
    """Speaker-counting accuracy and mean absolute error."""
    ref = [int(x) for x in ref_counts.split(",") if x]
    hyp = [int(x) for x in hyp_counts.split(",") if x]
    report = count_metrics(ref, hyp)
    click.echo(format_report(report.as_dict()), nl=False)


@main.command("demo-session")
@click.argument("directory", type=click.Path())
@click.option("--duration", type=float, default=30.0, show_default=True)
@click.option("--mics", type=int, default=4, show_default=True)
@click.pass_context
def demo_session_cmd(ctx, directory, duration, mics):
    """Generate a synthetic session for smoke tests and demos."""
    seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else 0
    manifest = build_demo_session(directory, seed=seed, duration=duration, n_mics=mics)
    click.echo(str(manifest))


def run() -> int:
    try:
        main(standalone_mode=False)
    except InputError as err:
        logger.error("input error: %s", err)
        return 2
    except NumericalError as err:
        logger.error("numerical failure: %s", err)
        return 3
    except click.exceptions.Exit as err:
        return err.exit_code
    except click.ClickException as err:
        err.show()
        return 2
    except click.Abort:
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(run())
