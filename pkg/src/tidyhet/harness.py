"""Episodes, the six evaluation metrics, experiment suites, and trajectory replay."""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .comm import BROAD, CENTRAL, CMPR, COND, HANGRCOM, INTEN, NOCOMM
from .engine import (
    FLAT, HEURISTIC, NO_COMM, NO_DETECTOR, NO_KNOWLEDGE, NO_PREDICTOR, RANDOM, EngineConfig, TeamRunner,
)
from .knowledge import Ontology
from .taskgen import CROSS, SETTING_I, SETTING_II, SINGLE, SINGLE_AGENT, TaskSpec, materialize
from .world import Action, Capability, Scene, discriminate, parse_scene, step

MAX_STEPS = 300
SLICES = (SINGLE, CROSS, "All")
LOG_VERSION = 1


class LogCorruptionError(ValueError):
    def __init__(self, index: int, why: str):
        self.index = index
        super().__init__(f"trajectory log corrupt at record {index}: {why}")


class HashMismatchError(ValueError):
    pass


# -- episodes ------------------------------------------------------------------------------

@dataclass
class EpisodeRecord:
    task_ref: str
    scene_ref: str
    label: str
    start_index: int
    roster: list
    config: dict
    seed: int
    rounds: int
    len: int
    total: int
    outcomes: dict  # object id -> {"picked": bool, "replaced": bool}
    success: bool
    complete: bool
    halted: str
    start_hash: str
    final_hash: str
    log: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def n_agents(self) -> int:
        return len(self.roster)

    @property
    def k(self) -> int:
        return len(self.outcomes)

    def acm(self) -> float:
        """Dims received per agent per communication round."""
        return self.total / (self.rounds * self.n_agents) if self.rounds else 0.0

    def to_dict(self, with_time: bool = False) -> dict:
        doc = {
            "task_ref": self.task_ref, "scene_ref": self.scene_ref, "label": self.label,
            "start_index": self.start_index, "roster": [list(r) for r in self.roster],
            "config": self.config, "seed": self.seed, "rounds": self.rounds, "len": self.len,
            "total": self.total, "outcomes": self.outcomes, "success": self.success,
            "complete": self.complete, "halted": self.halted, "start_hash": self.start_hash,
            "final_hash": self.final_hash, "log": self.log,
        }
        if with_time:
            doc["wall_time"] = self.wall_time
        return doc

    def canonical_json(self) -> str:
        """Byte-stable serialization (wall time excluded)."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def run_episode(scene: Scene, task: TaskSpec, config: EngineConfig | None = None, roster=SETTING_I,
                start_index: int = 0, seed: int = 0, kb: Ontology | None = None, models=None,
                max_steps: int | None = None) -> EpisodeRecord:
    """Run one task from one start set and score it."""
    cfg = config or EngineConfig()
    if max_steps is not None:
        cfg = replace(cfg, max_steps=max_steps)
    if cfg.max_steps > MAX_STEPS:
        raise ValueError(f"max_steps may not exceed {MAX_STEPS}")
    kb = kb or scene.kb
    roster = tuple(r if isinstance(r, Capability) else Capability(*r) for r in roster)
    start = materialize(task, scene, start_index, roster)
    t0 = time.perf_counter()
    res = TeamRunner(start, kb, cfg, seed=seed, models=models).run()
    wall = time.perf_counter() - t0
    final = res.final
    outcomes = {}
    for m in task.misplacements:
        oid = m.object_id
        picked = oid in res.picked
        replaced = picked and final.holder(oid) is None and discriminate(final, oid, kb)
        outcomes[oid] = {"picked": picked, "replaced": replaced}
    return EpisodeRecord(
        task.ref, task.scene_ref, task.label, start_index, [r.as_tuple() for r in roster],
        cfg.to_dict(), seed, res.rounds, res.steps, res.total_dims, outcomes,
        all(o["replaced"] for o in outcomes.values()), res.complete, res.halted,
        start.hash(), final.hash(), res.log, wall,
    )


# -- metrics -----------------------------------------------------------------------------------

@dataclass(frozen=True)
class SliceMetrics:
    n: int
    suc: float | None = None
    ps: float | None = None
    fm: float | None = None
    pl: float | None = None
    acm: float | None = None
    ces: float | None = None


@dataclass
class MetricsReport:
    slices: dict  # slice name -> SliceMetrics

    def __getitem__(self, key: str) -> SliceMetrics:
        return self.slices[key]


def ces(suc: float, suc_sa: float, acm: float) -> float | None:
    """Communication efficiency score; None (not applicable) when nothing was sent."""
    if acm <= 0:
        return None
    return max(0.0, 10000.0 * (suc - suc_sa) / acm)


def _slice_metrics(records: list[EpisodeRecord], sa_suc: float | None) -> SliceMetrics:
    if not records:
        return SliceMetrics(0)
    n = len(records)
    suc = sum(r.success for r in records) / n
    ps = sum(sum(o["replaced"] for o in r.outcomes.values()) / r.k for r in records) / n
    fm = sum(sum(o["picked"] for o in r.outcomes.values()) / r.k for r in records) / n
    pl = sum(r.len for r in records) / n
    # A lone agent has nobody to talk to: ACm is not applicable, not zero.
    acm = None if all(r.n_agents == 1 for r in records) else sum(r.acm() for r in records) / n
    score = None if sa_suc is None or acm is None else ces(suc, sa_suc, acm)
    return SliceMetrics(n, suc, ps, fm, pl, acm, score)


def compute_metrics(records: list[EpisodeRecord], sa_suc=None) -> MetricsReport:
    """Suc, %PS, %FM, #PL, ACm and CES for the Single, Cross and All slices.

    ``sa_suc`` is the single-agent success rate, either one number or a
    mapping from slice name to number.
    """
    if not records:
        raise ValueError("no episode records")
    out = {}
    for name in SLICES:
        rows = records if name == "All" else [r for r in records if r.label == name]
        ref = sa_suc.get(name) if isinstance(sa_suc, dict) else sa_suc
        out[name] = _slice_metrics(rows, ref)
    return MetricsReport(out)


METRIC_COLUMNS = (("Suc", "suc", 3), ("%PS", "ps", 3), ("%FM", "fm", 3), ("#PL", "pl", 1),
                  ("ACm", "acm", 1), ("CES", "ces", 1))


def _fmt(v, digits: int) -> str:
    return "—" if v is None else f"{v:.{digits}f}"


def report_rows(name: str, report: MetricsReport) -> list[list[str]]:
    return [[name, s, str(report[s].n)] + [_fmt(getattr(report[s], attr), dig) for _, attr, dig in METRIC_COLUMNS]
            for s in SLICES]


def format_csv(rows: dict[str, MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "slice", "episodes"] + [c for c, _, _ in METRIC_COLUMNS])
    for name, rep in rows.items():
        w.writerows(report_rows(name, rep))
    return buf.getvalue()


def format_table(rows: dict[str, MetricsReport]) -> str:
    """Methods down the side, Single / Cross / All blocks across."""
    heads = [c for c, _, _ in METRIC_COLUMNS]
    top = f"{'Method':<24}" + "".join(f"| {s:^{7 * len(heads)}}" for s in SLICES)
    sub = f"{'':<24}" + "".join("| " + "".join(f"{h:>7}" for h in heads) for _ in SLICES)
    lines = [top, sub, "-" * len(sub)]
    for name, rep in rows.items():
        cells = []
        for s in SLICES:
            m = rep[s]
            cells.append("| " + "".join(f"{_fmt(getattr(m, attr), dig):>7}" for _, attr, dig in METRIC_COLUMNS))
        lines.append(f"{name:<24}" + "".join(cells))
    return "\n".join(lines) + "\n"


# -- suites ------------------------------------------------------------------------------------

@dataclass(frozen=True)
class SuiteSetting:
    name: str
    roster: tuple
    config: EngineConfig
    models: dict | None = None  # per-row models, e.g. flat heads for the hierarchy ablation


def standard_settings(setting: str = "I", protocols=(HANGRCOM, BROAD, CENTRAL, COND, CMPR, INTEN),
                      baselines: bool = True, ablations: bool = False, models=None, roster=None,
                      policy: str = HEURISTIC, flat_models=None) -> list[SuiteSetting]:
    """The baseline, protocol and ablation rows for one roster.

    ``roster`` overrides the Setting I/II roster for custom teams. The
    flat-policy ablation row is added only when ``flat_models`` are given.
    """
    if roster is None:
        roster = SETTING_I if setting == "I" else SETTING_II
    roster = tuple(r if isinstance(r, Capability) else Capability(*r) for r in roster)
    out = []
    if baselines:
        out += [
            SuiteSetting("SA", SINGLE_AGENT, EngineConfig(protocol=NOCOMM)),
            SuiteSetting("SA(Oracle)", SINGLE_AGENT, EngineConfig(protocol=NOCOMM, oracle=True)),
            SuiteSetting("Random", roster, EngineConfig(protocol=NOCOMM, policy=RANDOM)),
            SuiteSetting("NoComm", roster, EngineConfig(protocol=NOCOMM, policy=policy), models),
        ]
    out += [SuiteSetting(p, roster, EngineConfig(protocol=p, policy=policy), models) for p in protocols]
    if ablations:
        for tag, abl in (("w/o Know.", NO_KNOWLEDGE), ("w/o MisObjDec.", NO_DETECTOR),
                         ("w/o ReaRecPre.", NO_PREDICTOR), ("w/o Comm.", NO_COMM)):
            out.append(SuiteSetting(tag, roster, EngineConfig(protocol=HANGRCOM, policy=policy, ablations=(abl,)),
                                    models))
        if flat_models:
            out.append(SuiteSetting("w/o HierDec.", roster, EngineConfig(protocol=HANGRCOM, ablations=(FLAT,)),
                                    flat_models))
    return out


@dataclass
class SuiteResult:
    records: dict  # setting name -> list of EpisodeRecord
    reports: dict  # setting name -> MetricsReport
    errors: list

    def csv(self) -> str:
        return format_csv(self.reports)

    def table(self) -> str:
        return format_table(self.reports)

    def write(self, out: str | Path) -> None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(self.csv())
        (out / "table.txt").write_text(self.table())
        with open(out / "episodes.jsonl", "w") as fh:
            for name, recs in self.records.items():
                for r in recs:
                    fh.write(json.dumps({"setting": name, **r.to_dict(with_time=True)}, sort_keys=True) + "\n")
        if self.errors:
            (out / "errors.json").write_text(json.dumps(self.errors, indent=1))


def _suite_job(job):
    name, scene, task, config, roster, si, seed, kb, models = job
    try:
        return name, run_episode(scene, task, config, roster, si, seed, kb, models), None
    except Exception as exc:  # recorded, not fatal
        return name, None, {"setting": name, "task": task.ref, "start": si, "seed": seed,
                            "error": f"{type(exc).__name__}: {exc}"}


def run_suite(tasks: list[tuple[Scene, TaskSpec]], settings: list[SuiteSetting], starts=(0,), seeds=(0,),
              kb: Ontology | None = None, models=None, sa_name: str = "SA", workers: int = 1) -> SuiteResult:
    """Run every setting on every (task, start, seed); CES is measured against the ``sa_name`` setting.

    With ``workers > 1`` episodes go to a process pool; results are gathered
    in job order so reports do not depend on scheduling.
    """
    if not tasks:
        raise ValueError("empty task set")
    jobs = [(st.name, scene, task, st.config, st.roster, si, seed, kb or scene.kb, st.models or models)
            for st in settings for scene, task in tasks for si in starts for seed in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_suite_job, jobs, chunksize=4))
    else:
        results = [_suite_job(j) for j in jobs]
    records: dict[str, list[EpisodeRecord]] = {st.name: [] for st in settings}
    errors = []
    for name, rec, err in results:
        if err is not None:
            errors.append(err)
        else:
            records[name].append(rec)
    sa = None
    if sa_name in records and records[sa_name]:
        sa_rep = compute_metrics(records[sa_name])
        sa = {s: sa_rep[s].suc for s in SLICES}
    reports = {name: compute_metrics(recs, sa) for name, recs in records.items() if recs}
    return SuiteResult(records, reports, errors)


# -- trajectory logs and replay -------------------------------------------------------------------

def trajectory_lines(record: EpisodeRecord, start: Scene) -> list[str]:
    header = {"kind": "header", "version": LOG_VERSION, "scene": start.to_dict(), "scene_hash": start.hash(),
              "task_ref": record.task_ref, "roster": [list(r) for r in record.roster], "config": record.config,
              "seed": record.seed}
    lines = [json.dumps(header, sort_keys=True)]
    for e in record.log:
        lines.append(json.dumps({"kind": "step", **e}, sort_keys=True))
    footer = {"kind": "footer", "final_hash": record.final_hash, "rounds": record.rounds, "records": len(record.log)}
    lines.append(json.dumps(footer, sort_keys=True))
    return lines


def write_trajectory(record: EpisodeRecord, start: Scene, path: str | Path) -> None:
    Path(path).write_text("\n".join(trajectory_lines(record, start)) + "\n")


@dataclass
class ReplayResult:
    final: Scene
    frames: list
    rounds: int


def render_frame(scene: Scene, kb: Ontology | None = None, title: str = "") -> str:
    """Top-down ASCII: '#' wall, '.' floor, '=' furniture, digits agents, '!' misplaced object."""
    kb = kb or scene.kb
    g = scene.geometry
    grid = [["#" if (x, y) not in g.room_of else "." for x in range(g.width)] for y in range(g.height)]
    for r in scene.receptacles.values():
        grid[r.cell[1]][r.cell[0]] = "="
    for oid, o in scene.objects.items():
        if o.held:
            continue
        if not discriminate(scene, oid, kb):
            c = scene.object_cell(oid)
            grid[c[1]][c[0]] = "!"
    for i, a in enumerate(scene.agents):
        grid[a.pose.y][a.pose.x] = str(i % 10)
    rows = ["".join(row) for row in reversed(grid)]
    return "\n".join(([title] if title else []) + rows)


def replay(log, scene: Scene | None = None, kb: Ontology | None = None, frames: bool = False) -> ReplayResult:
    """Rebuild the final state from a trajectory log (a path or its lines).

    ``scene`` defaults to the start state embedded in the header; when given
    it must hash to the recorded start.
    """
    if isinstance(log, (str, Path)) and Path(log).exists():
        lines = Path(log).read_text().splitlines()
    else:
        lines = list(log)
    docs = []
    for idx, line in enumerate(lines):
        try:
            docs.append(json.loads(line))
        except json.JSONDecodeError:
            raise LogCorruptionError(idx, "unparseable record") from None
    if not docs or docs[0].get("kind") != "header":
        raise LogCorruptionError(0, "missing header")
    header = docs[0]
    if header.get("version") != LOG_VERSION:
        raise LogCorruptionError(0, f"unsupported log version {header.get('version')!r}")
    if scene is None:
        if kb is None:
            raise ValueError("an ontology is needed to rebuild the embedded scene")
        scene = parse_scene(header["scene"], kb)
    if scene.hash() != header["scene_hash"]:
        raise HashMismatchError(f"scene hash {scene.hash()[:12]} does not match the log's {header['scene_hash'][:12]}")
    kb = kb or scene.kb
    s = scene.copy()
    out_frames = []
    current = 1
    footer = None
    for idx, doc in enumerate(docs[1:], start=1):
        kind = doc.get("kind")
        if kind == "footer":
            if idx != len(docs) - 1:
                raise LogCorruptionError(idx + 1, "records after footer")
            footer = doc
            break
        if kind != "step" or not {"round", "agent", "action", "target", "result"} <= set(doc):
            raise LogCorruptionError(idx, "malformed step record")
        if doc["round"] < current:
            raise LogCorruptionError(idx, "rounds out of order")
        while frames and doc["round"] > current:
            out_frames.append(render_frame(s, kb, f"round {current}"))
            current += 1
        current = doc["round"]
        res = step(s, doc["agent"], Action(doc["action"], doc["target"]))
        if res.status != doc["result"]:
            raise LogCorruptionError(idx, f"recorded {doc['result']} but replay gave {res.status}")
    if footer is None:
        raise LogCorruptionError(len(docs), "log truncated before footer")
    if footer.get("records") != len(docs) - 2:
        raise LogCorruptionError(len(docs) - 1, "record count mismatch")
    if frames:
        while current <= footer["rounds"]:
            out_frames.append(render_frame(s, kb, f"round {current}"))
            current += 1
    if s.hash() != footer["final_hash"]:
        raise HashMismatchError("replayed final state does not match the recorded hash")
    return ReplayResult(s, out_frames, footer["rounds"])


__all__ = [
    "EpisodeRecord", "HashMismatchError", "LogCorruptionError", "MAX_STEPS", "MetricsReport",
    "ReplayResult", "SliceMetrics", "SuiteResult", "SuiteSetting", "ces", "compute_metrics",
    "format_csv", "format_table", "render_frame", "replay", "run_episode", "run_suite",
    "standard_settings", "trajectory_lines", "write_trajectory",
]
