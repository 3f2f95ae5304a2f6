"""Command-line entry point: gen, demo, train, eval, replay."""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from .comm import BROAD, CENTRAL, CMPR, COND, HANGRCOM, INTEN, NOCOMM, PROTOCOLS
from .engine import ABLATIONS, FLAT, HEURISTIC, LEARNED, EngineConfig
from .harness import (
    MAX_STEPS, SuiteSetting, replay as replay_log, run_suite, standard_settings, write_trajectory,
)
from .knowledge import load_ontology
from .learn import TrainConfig, load_model, save_model, subgoal_accuracy, train_team
from .perception import DetectorNoise
from .taskgen import (
    DemonstrationError, TaskGenError, generate_expert_demo, generate_meta_task, load_demos, load_tasks,
    materialize, roster_for, save_demos, save_tasks,
)
from .world import Capability, load_scene, shipped_scene_paths

log = logging.getLogger("tidyhet")

DEFAULT_PROTOCOLS = (HANGRCOM, BROAD, CENTRAL, COND, CMPR, INTEN)


def _scene_paths(scene_dir: str | None) -> list[Path]:
    if scene_dir is None:
        return shipped_scene_paths()
    paths = sorted(Path(scene_dir).glob("*.json"))
    if not paths:
        raise click.UsageError(f"no scene files in {scene_dir}")
    return paths


def _load_scenes(scene_dir, kb) -> dict:
    scenes = {}
    for p in _scene_paths(scene_dir):
        s = load_scene(p, kb)
        scenes[s.name] = s
    return scenes


def _parse_roster(text: str) -> tuple[Capability, ...]:
    try:
        caps = tuple(Capability(*(int(v) for v in part.split(","))) for part in text.split(";") if part.strip())
    except (TypeError, ValueError) as exc:
        raise click.BadParameter(f"roster must look like '1,0,0;1,1,1': {exc}") from None
    if not caps:
        raise click.BadParameter("empty roster")
    return caps


def _roster(setting: str, roster: str | None) -> tuple[Capability, ...]:
    if setting == "custom":
        if roster is None:
            raise click.UsageError("--setting custom needs --roster")
        return _parse_roster(roster)
    if roster is not None:
        raise click.UsageError("--roster is only valid with --setting custom")
    return roster_for(setting)


def _tasks_with_scenes(tasks_path, scene_dir, kb):
    scenes = _load_scenes(scene_dir, kb)
    out = []
    for t in load_tasks(tasks_path):
        if t.scene_name not in scenes:
            raise click.UsageError(f"task {t.ref} names unknown scene {t.scene_name!r}")
        out.append((scenes[t.scene_name], t))
    return out


setting_opt = click.option("--setting", type=click.Choice(["I", "II", "custom"]), default="I", show_default=True)
roster_opt = click.option("--roster", default=None, help="Custom roster, e.g. '1,0,0;1,1,1' (nav,mani,hei).")
scenes_opt = click.option("--scenes", "scene_dir", default=None, help="Directory of scene files (default: shipped).")
max_steps_opt = click.option("--max-steps", type=click.IntRange(1, MAX_STEPS), default=MAX_STEPS, show_default=True)


@click.group()
@click.option("-v", "--verbose", count=True)
def main(verbose):
    """Heterogeneous multi-agent tidying in a gridworld."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(message)s")


@main.command()
@scenes_opt
@click.option("--n", "n_tasks", type=click.IntRange(min=1), default=10, show_default=True, help="Tasks per scene.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--p-floor", type=click.FloatRange(0, 1), default=0.5, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def gen(scene_dir, n_tasks, seed, p_floor, out):
    """Generate meta-tasks from tidy scenes."""
    kb = load_ontology()
    tasks = []
    for p in _scene_paths(scene_dir):
        scene = load_scene(p, kb)
        for s in range(seed, seed + n_tasks):
            try:
                tasks.append(generate_meta_task(scene, kb, s, p_floor))
            except TaskGenError as exc:
                log.warning("skipping %s seed %d: %s", scene.name, s, exc)
    save_tasks(tasks, out)
    click.echo(f"wrote {len(tasks)} tasks to {out}")


@main.command()
@click.option("--tasks", "tasks_path", type=click.Path(exists=True, dir_okay=False), required=True)
@scenes_opt
@setting_opt
@roster_opt
@click.option("--starts", type=click.IntRange(1, 5), default=5, show_default=True, help="Start sets per task.")
@max_steps_opt
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def demo(tasks_path, scene_dir, setting, roster, starts, max_steps, out):
    """Record expert demonstrations for a task batch."""
    kb = load_ontology()
    caps = _roster(setting, roster)
    demos, failed = [], 0
    for scene, task in _tasks_with_scenes(tasks_path, scene_dir, kb):
        for si in range(starts):
            try:
                demos.append(generate_expert_demo(scene, task, caps, kb, si, max_steps))
            except DemonstrationError as exc:
                failed += 1
                log.warning("%s", exc)
    save_demos(demos, out)
    click.echo(f"wrote {len(demos)} demonstrations to {out} ({failed} failed)")
    if failed:
        sys.exit(1)


@main.command()
@click.option("--demos", "demos_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--epochs", type=click.IntRange(min=1), default=30, show_default=True)
@click.option("--lr", type=float, default=0.05, show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=32, show_default=True)
@click.option("--flat", is_flag=True, help="Train the flat (no sub-task hierarchy) ablation heads.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def train(demos_path, seed, epochs, lr, batch_size, flat, out):
    """Fit per-agent imitation heads on demonstrations."""
    kb = load_ontology()
    demos = load_demos(demos_path)
    cfg = TrainConfig(lr=lr, epochs=epochs, batch_size=batch_size, seed=seed)
    models = train_team(demos, cfg, kb, flat)
    save_model(models, out)
    for a, m in sorted(models.items()):
        click.echo(f"agent {a}: sub-goal accuracy {subgoal_accuracy(m, demos, kb, a):.3f}, "
                   f"final loss {m.loss_trace[-1]:.4f}")
    click.echo(f"wrote {out}")


@main.command(name="eval")
@click.option("--tasks", "tasks_path", type=click.Path(exists=True, dir_okay=False), required=True)
@scenes_opt
@setting_opt
@roster_opt
@click.option("--protocol", "protocols", multiple=True, type=click.Choice([p for p in PROTOCOLS if p != NOCOMM]),
              help="Protocol rows to run (repeatable; default all).")
@click.option("--policy", type=click.Choice([HEURISTIC, LEARNED]), default=HEURISTIC, show_default=True)
@click.option("--ablation", "ablations", multiple=True, type=click.Choice(list(ABLATIONS)),
              help="Add a HanGrCom row with this ablation (repeatable).")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--flat-model", "flat_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--no-baselines", is_flag=True, help="Skip the SA, SA(Oracle), Random and NoComm rows.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--seeds", "n_seeds", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--starts", type=click.IntRange(1, 5), default=1, show_default=True)
@click.option("--fp", type=click.FloatRange(0, 1), default=0.0, show_default=True, help="Detector false-positive rate.")
@click.option("--fn", type=click.FloatRange(0, 1), default=0.0, show_default=True, help="Detector false-negative rate.")
@max_steps_opt
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--trajectories", is_flag=True, help="Also write one replayable log per episode.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def evaluate(tasks_path, scene_dir, setting, roster, protocols, policy, ablations, model_path, flat_path,
             no_baselines, seed, n_seeds, starts, fp, fn, max_steps, workers, trajectories, out):
    """Run an experiment suite and write metrics tables and episode records."""
    kb = load_ontology()
    caps = _roster(setting, roster)
    tasks = _tasks_with_scenes(tasks_path, scene_dir, kb)
    models = load_model(model_path) if model_path else None
    flat_models = load_model(flat_path) if flat_path else None
    if policy == LEARNED and models is None:
        raise click.UsageError("--policy learned needs --model")
    if FLAT in ablations and flat_models is None:
        raise click.UsageError("--ablation flat needs --flat-model")
    settings = standard_settings(setting, protocols or DEFAULT_PROTOCOLS, baselines=not no_baselines,
                                 models=models, roster=caps, policy=policy)
    for abl in ablations:
        row_models = flat_models if abl == FLAT else models
        row_policy = HEURISTIC if abl == FLAT else policy
        settings.append(SuiteSetting(f"HanGrCom[{abl}]", caps,
                                     EngineConfig(protocol=HANGRCOM, policy=row_policy, ablations=(abl,)),
                                     row_models))
    out_dir = Path(out)
    settings = [SuiteSetting(s.name, s.roster, _with(s.config, max_steps, DetectorNoise(fp, fn)), s.models) for s in settings]
    res = run_suite(tasks, settings, starts=tuple(range(starts)), seeds=tuple(range(seed, seed + n_seeds)),
                    kb=kb, workers=workers)
    res.write(out_dir)
    if trajectories:
        tdir = out_dir / "trajectories"
        tdir.mkdir(parents=True, exist_ok=True)
        by_ref = {t.ref: (s, t) for s, t in tasks}
        for name, recs in res.records.items():
            tag = "".join(c if c.isalnum() else "_" for c in name)
            for r in recs:
                scene, task = by_ref[r.task_ref]
                start = materialize(task, scene, r.start_index, [Capability(*c) for c in r.roster])
                fname = f"{tag}__{task.ref.replace(':', '_')}__s{r.start_index}__seed{r.seed}.jsonl"
                write_trajectory(r, start, tdir / fname)
    click.echo(res.table())
    if res.errors:
        click.echo(f"{len(res.errors)} episodes failed; see {out_dir / 'errors.json'}", err=True)


def _with(cfg: EngineConfig, max_steps: int, noise: DetectorNoise) -> EngineConfig:
    return replace(cfg, max_steps=max_steps, noise=noise)


@main.command()
@click.argument("log_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--scene", "scene_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Start-state scene file; defaults to the copy embedded in the log.")
@click.option("--frames/--no-frames", default=True, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write frames here instead of stdout.")
def replay(log_path, scene_path, frames, out):
    """Rebuild an episode from its trajectory log and render ASCII frames."""
    kb = load_ontology()
    scene = load_scene(scene_path, kb) if scene_path else None
    res = replay_log(log_path, scene, kb, frames)
    text = "\n\n".join(res.frames)
    summary = json.dumps({"rounds": res.rounds, "frames": len(res.frames), "final_hash": res.final.hash()})
    if out:
        Path(out).write_text(text + "\n")
        click.echo(summary)
    else:
        if text:
            click.echo(text)
        click.echo(summary)


if __name__ == "__main__":
    main()
