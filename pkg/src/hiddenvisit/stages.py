"""Pipeline stages as functions of a config, reading and writing an artifact tree.

Layout under ``out_dir``::

    synth/     cdr.csv towers.csv truth.csv world.csv
    ingest/    records.csv towers.csv report.txt
    localize/  users.csv locations.csv membership.csv
    extract/   stays.csv displacements.csv summary.txt
    label/     labels.csv summary.txt
    features/  training.csv population.csv feature_dictionary.txt
    train/     model.json coefficients.csv summary.txt
    evaluate/  metrics.csv report.txt
    ablate/    ablation.csv
    deploy/    scored.csv hourly.csv distance.csv summary.txt
    report/    usage_hourly.csv interevent.csv *.svg
    manifest.json

Every file is written to a temporary name and renamed into place.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import math
import os
import tempfile
from collections import Counter, defaultdict
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import deployment, learning, report
from .config import PipelineConfig
from .errors import ConfigError, EmptyDatasetError, MissingPrerequisiteError
from .features import FEATURE_NAMES, build_feature_vector, feature_dictionary
from .fusion import Label, UsageKind, UserClass, label_balance, label_displacement
from .ingest import parse_tower_file, write_cdr, write_towers
from .learning import Dataset, ModelParams
from .localization import UserLocation
from .model import EVENT_BY_TOKEN, CellTowerId, GeoPoint, format_timestamp
from .movement import Displacement, Segment, StayPoint
from .pipeline import (
    RecordTable,
    UserView,
    extract,
    localize,
    map_users,
    read_table,
    timeline_for,
    training_set,
    user_history,
)
from .rng import derive_seed
from .synth import generate_world, simulate, write_truth, write_world

STAGES = ("synth", "ingest", "localize", "extract", "label", "features", "train", "evaluate", "ablate", "deploy", "report")
DISP_HEADER = "user_id,origin,destination,depart,arrive,eti,distance_km"


# ------------------------------------------------------------------- file io


@contextlib.contextmanager
def atomic_open(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text(path: Path, text: str) -> Path:
    with atomic_open(path) as fh:
        fh.write(text)
    return path


def write_rows(path: Path, header: str, rows: Iterable[Iterable]) -> Path:
    with atomic_open(path) as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")
    return path


def _cell(v) -> str:
    if isinstance(v, float) or isinstance(v, np.floating):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    if v is None:
        return ""
    return str(v)


def read_rows(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        return [dict(zip(header, line.rstrip("\n").split(","))) for line in fh if line.strip()]


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _float(text: str) -> float:
    return float(text) if text != "" else float("nan")


# ------------------------------------------------------------------ context


class StageContext:
    def __init__(self, cfg: PipelineConfig, workers: int | None = None):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.workers = workers if workers is not None else cfg.n_workers
        self.inputs: list[Path] = []

    def path(self, stage: str, name: str) -> Path:
        return self.out / stage / name

    def require(self, stage: str, current: str, *names: str) -> list[Path]:
        paths = [self.path(stage, n) for n in names]
        if not all(p.exists() for p in paths):
            raise MissingPrerequisiteError(current, stage)
        self.inputs.extend(paths)
        return paths

    def raw_inputs(self, current: str) -> tuple[Path, Path]:
        cfg = self.cfg
        if cfg.cdr or cfg.towers:
            cdr, towers = Path(cfg.cdr), Path(cfg.towers)
            missing = [str(p) for p in (cdr, towers) if not p.is_file()]
            if missing:
                raise ConfigError([f"paths: input file not readable: {m}" for m in missing])
            self.inputs.extend([cdr, towers])
            return cdr, towers
        return tuple(self.require("synth", current, "cdr.csv", "towers.csv"))

    def record_manifest(self, stage: str, outputs: list[Path]) -> None:
        manifest_path = self.out / "manifest.json"
        manifest = {}
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        manifest["config"] = self.cfg.to_ini()
        manifest["config_sha256"] = hashlib.sha256(self.cfg.to_ini().encode("utf-8")).hexdigest()
        stages = manifest.setdefault("stages", {})
        stages[stage] = {
            "inputs": {self._rel(p): sha256_file(p) for p in sorted(set(self.inputs))},
            "outputs": {self._rel(p): sha256_file(p) for p in sorted(outputs)},
        }
        manifest["stages"] = dict(sorted(stages.items(), key=lambda kv: STAGES.index(kv[0])))
        write_text(manifest_path, json.dumps(manifest, indent=2, sort_keys=False) + "\n")

    def _rel(self, p: Path) -> str:
        try:
            return str(p.resolve().relative_to(self.out.resolve()))
        except ValueError:
            return str(p)


# ------------------------------------------------------------- loaders


def load_registry(ctx: StageContext, current: str):
    (path,) = ctx.require("ingest", current, "towers.csv")
    return parse_tower_file(path)


def load_table(ctx: StageContext, current: str) -> RecordTable:
    (path,) = ctx.require("ingest", current, "records.csv")
    registry = load_registry(ctx, current)
    table, _ = read_table(str(path), registry, ctx.cfg.window, 0, ctx.workers)
    return table


def load_localization(ctx: StageContext, current: str) -> tuple[dict, dict]:
    users_p, loc_p, mem_p = ctx.require("localize", current, "users.csv", "locations.csv", "membership.csv")
    usage = {
        r["user_id"]: UserClass(UsageKind(r["kind"]), r["frequent"] == "1", int(r["voice_hours"]), int(r["data_hours"]))
        for r in read_rows(users_p)
    }
    members = defaultdict(lambda: defaultdict(set))
    for r in read_rows(mem_p):
        members[r["user_id"]][int(r["location_id"])].add(CellTowerId(int(r["lac"]), int(r["cell_id"])))
    locations = defaultdict(list)
    for r in read_rows(loc_p):
        u, lid = r["user_id"], int(r["location_id"])
        point = GeoPoint(float(r["lon"]), float(r["lat"]))
        locations[u].append(UserLocation(lid, point, frozenset(members[u][lid]), int(r["weight"])))
    return usage, dict(locations)


def _displacement(r: dict) -> Displacement:
    return Displacement(
        r["user_id"], int(r["origin"]), int(r["destination"]), int(r["depart"]), int(r["arrive"]),
        int(r["eti"]), _float(r["distance_km"]),
    )


def load_views(ctx: StageContext, current: str) -> dict:
    """UserViews rebuilt from the localize and extract artifacts (no timelines)."""
    usage, locations = load_localization(ctx, current)
    stays_p, disp_p = ctx.require("extract", current, "stays.csv", "displacements.csv")
    stays = defaultdict(list)
    for r in read_rows(stays_p):
        times = tuple(int(t) for t in r["times"].split(" "))
        seg = Segment(r["user_id"], int(r["location_id"]), times[0], times[-1], times)
        stays[r["user_id"]].append(StayPoint(seg.location, seg.start, seg))
    disps = defaultdict(list)
    for r in read_rows(disp_p):
        disps[r["user_id"]].append(_displacement(r))
    return {
        u: UserView(u, cls, locations.get(u, []), stays.get(u, []), disps.get(u, []), 0)
        for u, cls in sorted(usage.items())
    }


def load_dataset(path: Path) -> tuple[Dataset, list[Displacement]]:
    rows = read_rows(path)
    if not rows:
        raise EmptyDatasetError(f"{path} holds no rows")
    X = np.array([[float(r[n]) for n in FEATURE_NAMES] for r in rows])
    y = np.array([int(r["label"]) for r in rows])
    return Dataset(X, y, [r["user_id"] for r in rows]), [_displacement(r) for r in rows]


# ------------------------------------------------------------------- stages


def stage_synth(ctx: StageContext) -> list[Path]:
    sc = ctx.cfg.synth
    world = generate_world(sc)
    sim = simulate(sc, world)
    out = []
    with atomic_open(ctx.path("synth", "cdr.csv")) as fh:
        write_cdr(sim.records, fh)
    out.append(ctx.path("synth", "cdr.csv"))
    with atomic_open(ctx.path("synth", "towers.csv")) as fh:
        write_towers(world.registry, fh)
    out.append(ctx.path("synth", "towers.csv"))
    with atomic_open(ctx.path("synth", "truth.csv")) as fh:
        write_truth(sim.truth, fh)
    out.append(ctx.path("synth", "truth.csv"))
    with atomic_open(ctx.path("synth", "world.csv")) as fh:
        write_world(world, fh)
    out.append(ctx.path("synth", "world.csv"))
    return out


def stage_ingest(ctx: StageContext) -> list[Path]:
    cfg = ctx.cfg
    cdr, towers = ctx.raw_inputs("ingest")
    registry = parse_tower_file(towers)
    table, rep = read_table(str(cdr), registry, cfg.window, cfg.utc_offset, ctx.workers)
    rec_path = ctx.path("ingest", "records.csv")
    with atomic_open(rec_path) as fh:
        fh.write("user_id,lac,cell_id,timestamp,event\n")
        tokens = {int(e): e.token for e in EVENT_BY_TOKEN.values()}
        for i, user in enumerate(table.users):
            lo, hi = int(table.offsets[i]), int(table.offsets[i + 1])
            fh.writelines(
                f"{user},{a},{c},{format_timestamp(t)},{tokens[e]}\n"
                for a, c, t, e in zip(
                    table.lac[lo:hi].tolist(), table.cell[lo:hi].tolist(),
                    table.time[lo:hi].tolist(), table.event[lo:hi].tolist(),
                )
            )
    tow_path = ctx.path("ingest", "towers.csv")
    with atomic_open(tow_path) as fh:
        write_towers(registry, fh)
    rep_text = rep.to_text() + f"towers={registry.count}\ntowers_duplicate={registry.duplicates}\ntowers_malformed={registry.malformed}\n"
    return [rec_path, tow_path, write_text(ctx.path("ingest", "report.txt"), rep_text)]


def _localize_one(user, records, towers, cfg):
    return localize(records, towers, cfg)


def _extract_one(user, records, locations, cfg):
    locs = locations.get(user, [])
    return extract(records, locs, {loc.id: loc.centroid for loc in locs}, cfg)


def stage_localize(ctx: StageContext) -> list[Path]:
    cfg = ctx.cfg
    table = load_table(ctx, "localize")
    registry = load_registry(ctx, "localize")
    users, locs, mems = [], [], []
    results = map_users(_localize_one, table, (registry.towers, cfg), ctx.workers)
    for user, (usage, locations) in zip(table.users, results):
        if usage is None:
            continue
        users.append((user, usage.kind.value, int(usage.frequent), usage.active_voice_hours, usage.active_data_hours))
        for loc in locations:
            locs.append((user, loc.id, loc.centroid.lon, loc.centroid.lat, loc.weight))
            for t in sorted(loc.members):
                mems.append((user, loc.id, t.lac, t.cell))
    return [
        write_rows(ctx.path("localize", "users.csv"), "user_id,kind,frequent,voice_hours,data_hours", users),
        write_rows(ctx.path("localize", "locations.csv"), "user_id,location_id,lon,lat,weight", locs),
        write_rows(ctx.path("localize", "membership.csv"), "user_id,location_id,lac,cell_id", mems),
    ]


def stage_extract(ctx: StageContext) -> list[Path]:
    cfg = ctx.cfg
    table = load_table(ctx, "extract")
    usage, locations = load_localization(ctx, "extract")
    stays_rows, disp_rows = [], []
    passbys = 0
    results = map_users(_extract_one, table, (locations, cfg), ctx.workers)
    for user, (stays, disps, dropped) in zip(table.users, results):
        if user not in usage:
            continue
        passbys += dropped
        for sp in stays:
            seg = sp.segment
            stays_rows.append((user, sp.location, seg.start, seg.end, seg.n_presences, " ".join(map(str, seg.times))))
        disp_rows.extend(disps)
    n_eti = sum(d.eti for d in disp_rows)
    summary = f"stays={len(stays_rows)}\npassby_presences={passbys}\ndisplacements={len(disp_rows)}\neti_displacements={n_eti}\n"
    return [
        write_rows(ctx.path("extract", "stays.csv"), "user_id,location_id,start,end,n_presences,times", stays_rows),
        write_rows(ctx.path("extract", "displacements.csv"), DISP_HEADER, disp_rows),
        write_text(ctx.path("extract", "summary.txt"), summary),
    ]


def stage_label(ctx: StageContext) -> list[Path]:
    cfg = ctx.cfg
    views = load_views(ctx, "label")
    table = load_table(ctx, "label")
    index = {u: i for i, u in enumerate(table.users)}
    rows = []
    for user, view in views.items():
        if not view.usage.frequent:
            continue
        timeline = timeline_for(table.records(index[user]), view.locations, cfg.window)
        for d in view.displacements:
            if d.eti and d.origin != d.destination:
                rows.append((*d, int(label_displacement(d, timeline, cfg.window))))
    balance = label_balance(Label(r[-1]) for r in rows)
    summary = "".join(f"{lab.name.lower()}={n}\n" for lab, n in balance.items())
    return [
        write_rows(ctx.path("label", "labels.csv"), DISP_HEADER + ",label", rows),
        write_text(ctx.path("label", "summary.txt"), summary),
    ]


def stage_features(ctx: StageContext) -> list[Path]:
    cfg = ctx.cfg
    views = load_views(ctx, "features")
    (labels_p,) = ctx.require("label", "features", "labels.csv")
    labeled = defaultdict(list)
    for r in read_rows(labels_p):
        labeled[r["user_id"]].append((_displacement(r), Label(int(r["label"]))))

    observations = {}
    population = []
    for user, view in views.items():
        history = user_history(view, cfg)
        if user in labeled:
            observations[user] = [(d, lab, build_feature_vector(d, history.anchors, history)) for d, lab in labeled[user]]
        for d in view.displacements:
            if deployment.is_scorable(d, cfg.max_duration_hours):
                population.append((d, build_feature_vector(d, history.anchors, history)))
    header = DISP_HEADER + ",label," + ",".join(FEATURE_NAMES)
    out = []
    if observations:
        _, chosen = training_set(observations, cfg.seed)
        rows = [(*d, int(lab), *x) for d, lab, x in chosen]
    else:
        rows = []
    out.append(write_rows(ctx.path("features", "training.csv"), header, rows))
    out.append(write_rows(ctx.path("features", "population.csv"), DISP_HEADER + "," + ",".join(FEATURE_NAMES),
                          [(*d, *x) for d, x in population]))
    out.append(write_text(ctx.path("features", "feature_dictionary.txt"), feature_dictionary()))
    return out


def stage_train(ctx: StageContext) -> list[Path]:
    cfg = ctx.cfg
    (train_p,) = ctx.require("features", "train", "training.csv")
    data, _ = load_dataset(train_p)
    params = learning.train_logistic(data, cfg.C, cfg.tol, cfg.max_iter)
    rows = learning.wald_summary(params, data)
    balance = Counter(data.y.tolist())
    summary = (
        f"n={len(data)}\npositives={balance.get(1, 0)}\nnegatives={balance.get(0, 0)}\n"
        f"converged={int(params.converged)}\niterations={params.n_iter}\n"
        f"mcfadden_r2={learning.mcfadden_r2(params, data)!r}\n"
    )
    return [
        write_text(ctx.path("train", "model.json"), params.to_json()),
        write_rows(ctx.path("train", "coefficients.csv"), "name,estimate,std_error,p_value", rows),
        write_text(ctx.path("train", "summary.txt"), summary),
    ]


def classifiers(cfg: PipelineConfig) -> dict[str, Callable[[], object]]:
    return {
        "logistic": lambda: learning.LogisticClassifier(cfg.C, cfg.cutoff, cfg.tol, cfg.max_iter),
        "baseline_deterministic": learning.NoHiddenBaseline,
        "baseline_probabilistic": learning.MarginalBaseline,
    }


def stage_evaluate(ctx: StageContext) -> list[Path]:
    cfg = ctx.cfg
    ctx.require("train", "evaluate", "model.json")
    (train_p,) = ctx.require("features", "evaluate", "training.csv")
    data, _ = load_dataset(train_p)
    seed = derive_seed(cfg.seed, "evaluate")
    rows = []
    lines = [f"{cfg.k}-fold cross-validation on {len(data)} labeled displacements "
             f"({int(data.y.sum())} with a hidden visit)", ""]
    for name, make in classifiers(cfg).items():
        res = learning.cross_validate(data, cfg.k, seed, make)
        m = res.mean
        rows.append((name, m["accuracy"], m["precision"], m["recall"], m["f1"], m["roc_auc"]))
        lines.append(f"{name:24s} " + " ".join(
            f"{k}={'n/a' if m[k] is None else format(m[k], '.3f')}" for k in ("accuracy", "precision", "recall", "f1", "roc_auc")
        ))
    return [
        write_rows(ctx.path("evaluate", "metrics.csv"), "classifier,accuracy,precision,recall,f1,roc_auc", rows),
        write_text(ctx.path("evaluate", "report.txt"), "\n".join(lines) + "\n"),
    ]


def stage_ablate(ctx: StageContext) -> list[Path]:
    cfg = ctx.cfg
    (train_p,) = ctx.require("features", "ablate", "training.csv")
    data, _ = load_dataset(train_p)
    rows = learning.ablate(data, k=cfg.k, seed=derive_seed(cfg.seed, "ablate"), C=cfg.C, cutoff=cfg.cutoff)
    return [write_rows(ctx.path("ablate", "ablation.csv"), "groups,accuracy,roc_auc",
                       [("+".join(combo), acc, auc) for combo, acc, auc in rows])]


def stage_deploy(ctx: StageContext) -> list[Path]:
    cfg = ctx.cfg
    (model_p,) = ctx.require("train", "deploy", "model.json")
    (pop_p,) = ctx.require("features", "deploy", "population.csv")
    (disp_p,) = ctx.require("extract", "deploy", "displacements.csv")
    params = ModelParams.from_json(model_p.read_text(encoding="utf-8"))
    features = {}
    for r in read_rows(pop_p):
        features[_displacement(r)] = np.array([float(r[n]) for n in FEATURE_NAMES])
    displacements = [_displacement(r) for r in read_rows(disp_p)]
    scored = deployment.score_population(displacements, params, features.__getitem__, cfg.max_duration_hours)
    share_eti, share_all = deployment.expected_hidden_share(scored, displacements, cfg.max_duration_hours)
    curves = deployment.hourly_curves(scored, displacements, cfg.max_duration_hours)
    no_eti = [d for d in displacements if not d.eti]
    mean_plain, mean_eti, mean_weighted = deployment.weighted_mean_distance(scored, no_eti)
    summary = (
        f"scored={len(scored)}\ndisplacements={len(displacements)}\n"
        f"displacements_within_duration={sum(deployment.within_duration(d, cfg.max_duration_hours) for d in displacements)}\n"
        f"expected_hidden_share_of_eti={share_eti!r}\nexpected_hidden_share_of_all={share_all!r}\n"
    )
    return [
        write_rows(ctx.path("deploy", "scored.csv"), DISP_HEADER + ",p_hidden", [(*s.displacement, s.p_hidden) for s in scored]),
        write_rows(ctx.path("deploy", "hourly.csv"), "hour,eti_share,mean_p_hidden,hidden_share",
                   [(h, curves.eti_share[h], curves.mean_p_hidden[h], curves.hidden_share[h]) for h in range(24)]),
        write_rows(ctx.path("deploy", "distance.csv"), "set,mean_distance_km",
                   [("no_eti", mean_plain), ("eti_unweighted", mean_eti), ("eti_weighted", mean_weighted)]),
        write_text(ctx.path("deploy", "summary.txt"), summary),
    ]


def stage_report(ctx: StageContext) -> list[Path]:
    cfg = ctx.cfg
    table = load_table(ctx, "report")
    records = (r for i in range(len(table.users)) for r in table.records(i))
    stats = deployment.usage_statistics(records, cfg.window)
    edges = stats.bin_edges
    hours = list(range(24))
    out = [
        write_rows(ctx.path("report", "usage_hourly.csv"), "hour,voice_per_user_hour,data_per_user_hour",
                   [(h, stats.hourly["voice"][h], stats.hourly["data"][h]) for h in hours]),
        write_rows(ctx.path("report", "interevent.csv"), "bin_start_s,bin_end_s,voice,data",
                   [(int(edges[i]), int(edges[i + 1]), int(stats.histogram["voice"][i]), int(stats.histogram["data"][i]))
                    for i in range(len(edges) - 1)]),
        write_text(ctx.path("report", "usage_hourly.svg"), report.line_chart(
            hours, {"voice": stats.hourly["voice"].tolist(), "data": stats.hourly["data"].tolist()},
            "Records per user-hour by hour of day", "hour of day", "records")),
    ]
    centers = ((edges[:-1] + edges[1:]) / 2 / 3600).tolist()
    totals = {k: v / max(v.sum(), 1) for k, v in stats.histogram.items()}
    out.append(write_text(ctx.path("report", "interevent.svg"), report.line_chart(
        centers, {"voice": totals["voice"].tolist(), "data": totals["data"].tolist()},
        "Inter-event time distribution", "gap (hours)", "share of gaps")))
    hourly_p = ctx.path("deploy", "hourly.csv")
    if hourly_p.exists():
        ctx.inputs.append(hourly_p)
        rows = read_rows(hourly_p)
        series = {k: [_float(r[k]) for r in rows] for k in ("eti_share", "mean_p_hidden", "hidden_share")}
        out.append(write_text(ctx.path("report", "hidden_hourly.svg"), report.line_chart(
            hours, series, "Hidden visits by departure hour", "hour of day", "share")))
    return out


STAGE_FUNCS = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "localize": stage_localize,
    "extract": stage_extract,
    "label": stage_label,
    "features": stage_features,
    "train": stage_train,
    "evaluate": stage_evaluate,
    "ablate": stage_ablate,
    "deploy": stage_deploy,
    "report": stage_report,
}


def run_stage(stage: str, cfg: PipelineConfig, workers: int | None = None) -> list[Path]:
    ctx = StageContext(cfg, workers)
    outputs = STAGE_FUNCS[stage](ctx)
    ctx.record_manifest(stage, outputs)
    return outputs


def run_all(cfg: PipelineConfig, workers: int | None = None) -> list[Path]:
    outputs = []
    for stage in STAGES:
        if stage == "synth" and (cfg.cdr or cfg.towers):
            continue
        outputs.extend(run_stage(stage, cfg, workers))
    return outputs
