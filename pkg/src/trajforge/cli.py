"""Command-line surface.

Subcommands: gen-env, run, eval, passk, curate, export-finetune, predict,
inspect. Exit codes: 0 ok, 1 usage error, 2 runtime failure. One writer per
output directory, guarded by a lock file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

from .backends import CallCounter, HttpBackend, ScriptedBackend
from .bootstrap import Task, bootstrap, evaluate
from .config import LoadedConfig, load_config
from .core import RunConfig, TrajectoryDatabase
from .curation import (
    PopulationMember,
    PopulationState,
    RetrievalLedger,
    rank_members,
    run_population,
    select_exemplars,
)
from .embed import BuiltinEmbedder, EmbeddingCache, RemoteEmbedder
from .envs import CraftWorld, CraftWorldEnv, generate_craftworld, make_initial_db
from .manifest import RunManifest, verify_manifest
from .metrics import AttemptMatrix, TaskAttempts, auroc, calibration_table, fit_predictor, pass_at_k, predict
from .persist import export_finetune, load_db, load_ledger, save_db, save_episodes, save_events, save_ledger
from .seeds import derive_seed

logger = logging.getLogger(__name__)

STRATEGIES = ("fixed", "bootstrap", "db-curation", "exemplar", "db-exemplar")

LOCK_NAME = ".trajforge.lock"


class CliError(Exception):
    """Runtime failure that should exit with status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class _OutDirLock:
    def __init__(self, out_dir: Path):
        self.path = out_dir / LOCK_NAME
        self._fd = None

    def __enter__(self):
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CliError(
                f"output directory is locked by another run ({self.path}); "
                "remove the lock file if that run is dead") from None
        return self

    def __exit__(self, *exc_info):
        if self._fd is not None:
            os.close(self._fd)
            self.path.unlink(missing_ok=True)


def _build_embedder(loaded: LoadedConfig):
    block = loaded.embedder
    if block["kind"] == "builtin":
        return BuiltinEmbedder(loaded.run.embed_dim)
    return RemoteEmbedder(block["base_url"], block["model"],
                          key_env=block.get("key_env", "TRAJFORGE_EMBED_KEY"))


def _build_backend(loaded: LoadedConfig, seed: int, counter: CallCounter):
    block = loaded.backend
    if block["kind"] == "scripted":
        return ScriptedBackend(seed, counter)
    return HttpBackend(
        block["base_url"], block["model"],
        key_env=block.get("key_env", "TRAJFORGE_API_KEY"),
        timeout=block.get("timeout", 60.0),
        retries=block.get("retries", 3),
        backoff_base=block.get("backoff_base", 0.5),
        max_in_flight=block.get("max_in_flight", 8),
        counter=counter)


def _load_world(loaded: LoadedConfig) -> CraftWorld:
    block = loaded.environment
    if block["kind"] != "craftworld":
        raise CliError("only craftworld environments can be driven from config files; "
                       "external hosts attach through the library adapter")
    world_path = block.get("world")
    if world_path:
        return CraftWorld.load(world_path)
    return generate_craftworld(loaded.run.seed)


def _tasks_for(world: CraftWorld, split: str) -> list[Task]:
    tasks = world.train_tasks() if split == "train" else world.test_tasks()
    return [Task(t.task_id, world.goal_for(t)) for t in tasks]


def _member_seed(cfg: RunConfig, index: int) -> int:
    return derive_seed(cfg.seed, f"member-{index}")


def _write_outcomes(world: CraftWorld, outcomes: dict[str, bool], path: Path) -> None:
    """Label file consumed by the success predictor: goal, o1, label rows."""
    env = CraftWorldEnv(world)
    with path.open("w", encoding="utf-8") as fh:
        for task_id, label in sorted(outcomes.items()):
            task = world.task(task_id)
            o1 = env.reset(task_id)
            fh.write(json.dumps({
                "task_id": task_id,
                "goal": world.goal_for(task).text,
                "o1": o1,
                "label": int(label),
            }, sort_keys=True) + "\n")


def cmd_gen_env(args) -> int:
    world = generate_craftworld(args.seed, n_elements=args.elements,
                                n_train_tasks=args.train, n_test_tasks=args.test)
    world.save(args.out)
    print(f"wrote {args.out}: {len(world.elements)} elements, "
          f"{len(world.train_tasks())} train / {len(world.test_tasks())} test tasks")
    return 0


def cmd_run(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.dry_run:
        problems = verify_manifest(out_dir)
        for p in problems:
            print(f"FAIL {p}")
        if not problems:
            print("manifest ok: all file hashes verified")
        return 0 if not problems else 2

    loaded = load_config(args.config, seed_override=args.seed)
    cfg = loaded.run
    started = time.monotonic()

    with _OutDirLock(out_dir):
        world = _load_world(loaded)
        cache = EmbeddingCache(_build_embedder(loaded))
        fingerprint = cache.embedder.fingerprint
        n_exemplars = loaded.environment.get("initial_exemplars", 4)
        initial_db = make_initial_db(world, n_exemplars, cfg.seed, cfg)
        train_tasks = _tasks_for(world, "train")
        test_tasks = _tasks_for(world, "test")
        env_factory = lambda: CraftWorldEnv(world)  # noqa: E731
        counter = CallCounter()

        save_db(initial_db, out_dir / "initial_db.jsonl", fingerprint)
        files = ["initial_db.jsonl"]
        population = None

        if args.strategy == "fixed":
            final_db = initial_db
        elif args.strategy == "bootstrap":
            backend = _build_backend(loaded, _member_seed(cfg, 0), counter)
            run = bootstrap(initial_db, train_tasks, env_factory, backend, cfg, cache)
            final_db = run.db
            save_ledger(run.ledger, out_dir / "ledger.jsonl")
            save_episodes(run.episodes, out_dir / "episodes.jsonl")
            files += ["ledger.jsonl", "episodes.jsonl"]
        else:
            population = run_population(
                initial_db, train_tasks, env_factory,
                lambda i: _build_backend(loaded, _member_seed(cfg, i), counter),
                cfg, cache,
                curation_enabled=args.strategy in ("db-curation", "db-exemplar"))
            members_dir = out_dir / "members"
            members_dir.mkdir(exist_ok=True)
            stats = []
            for m in population.members:
                save_db(m.db, members_dir / f"member-{m.index}.db.jsonl", fingerprint)
                save_ledger(m.ledger, members_dir / f"member-{m.index}.ledger.jsonl")
                files += [f"members/member-{m.index}.db.jsonl",
                          f"members/member-{m.index}.ledger.jsonl"]
                stats.append({"index": m.index, "outcomes": [int(o) for o in m.outcomes]})
            with (out_dir / "population.json").open("w", encoding="utf-8") as fh:
                json.dump({"task_order": population.task_order, "members": stats,
                           "cfg": cfg.to_dict()}, fh, indent=2, sort_keys=True)
            save_events(population.events, out_dir / "events.jsonl")
            files += ["population.json", "events.jsonl"]

            if args.strategy == "db-curation":
                best, _ = rank_members(population.members)
                final_db = population.members[best].db
            else:
                final_db = select_exemplars(population, "best", initial_db, cfg)

        save_db(final_db, out_dir / "db_final.jsonl", fingerprint)
        files.append("db_final.jsonl")

        eval_backend = _build_backend(loaded, derive_seed(cfg.seed, "eval"), counter)
        result = evaluate(final_db, test_tasks, env_factory, eval_backend, cfg, cache)
        with (out_dir / "eval.json").open("w", encoding="utf-8") as fh:
            json.dump({"strategy": args.strategy, "db_size": len(final_db),
                       "success_rate": result.success_rate,
                       "outcomes": {k: int(v) for k, v in sorted(result.outcomes.items())}},
                      fh, indent=2, sort_keys=True)
        _write_outcomes(world, result.outcomes, out_dir / "outcomes.jsonl")
        files += ["eval.json", "outcomes.jsonl"]

        manifest = RunManifest(
            run_id=f"{args.strategy}-{cfg.seed}",
            cfg=cfg.to_dict(), seed=cfg.seed, llm_calls=dict(counter.counts),
            wall_time_s=time.monotonic() - started)
        for relative in files:
            manifest.add_file(out_dir, relative)
        manifest.write(out_dir)

    print(f"strategy={args.strategy} db_size={len(final_db)} "
          f"test_success_rate={result.success_rate:.3f}")
    return 0


def cmd_eval(args) -> int:
    loaded = load_config(args.config, seed_override=args.seed)
    cfg = loaded.run
    world = CraftWorld.load(args.tasks)
    cache = EmbeddingCache(_build_embedder(loaded))
    db = load_db(args.db, cache.embedder.fingerprint, cache, cfg)
    tasks = _tasks_for(world, args.split)
    env_factory = lambda: CraftWorldEnv(world)  # noqa: E731
    counter = CallCounter()

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.attempts == 1:
        backend = _build_backend(loaded, derive_seed(cfg.seed, "eval"), counter)
        result = evaluate(db, tasks, env_factory, backend, cfg, cache)
        _write_outcomes(world, result.outcomes, out_dir / "outcomes.jsonl")
        print(f"success_rate={result.success_rate:.3f} over {len(tasks)} tasks")
        return 0

    per_task: dict[str, list[bool]] = {t.task_id: [] for t in tasks}
    for attempt in range(args.attempts):
        backend = _build_backend(loaded, derive_seed(cfg.seed, f"attempt-{attempt}"), counter)
        result = evaluate(db, tasks, env_factory, backend, cfg, cache)
        for task_id, ok in result.outcomes.items():
            per_task[task_id].append(ok)
    with (out_dir / "attempts.jsonl").open("w", encoding="utf-8") as fh:
        for task_id in sorted(per_task):
            outcomes = per_task[task_id]
            fh.write(json.dumps({"task_id": task_id, "n": len(outcomes),
                                 "c": sum(outcomes)}, sort_keys=True) + "\n")
    print(f"wrote {out_dir / 'attempts.jsonl'} with {args.attempts} attempts per task")
    return 0


def cmd_passk(args) -> int:
    attempts = []
    with open(args.attempts_file, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                attempts.append(TaskAttempts(row["task_id"], row["n"], row["c"]))
    matrix = AttemptMatrix(attempts)
    out = Path(args.out) if args.out else Path("passk.csv")
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "estimate"])
        for k in args.k:
            _, macro = pass_at_k(matrix, k)
            writer.writerow([k, f"{macro:.6f}"])
            print(f"pass@{k} = {macro:.4f}")
    return 0


def cmd_curate(args) -> int:
    pop_dir = Path(args.population_dir)
    with (pop_dir / "population.json").open(encoding="utf-8") as fh:
        info = json.load(fh)
    cfg = RunConfig.from_dict(info["cfg"])
    members = []
    for stats in info["members"]:
        i = stats["index"]
        db = load_db(pop_dir / "members" / f"member-{i}.db.jsonl", cfg=cfg)
        ledger = load_ledger(pop_dir / "members" / f"member-{i}.ledger.jsonl")
        member = PopulationMember(index=i, db=db, ledger=ledger, backend=None)
        member.outcomes = [bool(o) for o in stats["outcomes"]]
        members.append(member)
    initial_db = load_db(pop_dir / "initial_db.jsonl", cfg=cfg)
    population = PopulationState(members=members, events=[],
                                 task_order=info["task_order"], cfg=cfg)
    composite = select_exemplars(population, args.mode, initial_db, cfg)
    save_db(composite, args.out, "unspecified")
    print(f"wrote {args.out}: {len(composite)} trajectories ({args.mode} per task)")
    return 0


def cmd_export_finetune(args) -> int:
    db = load_db(args.db)
    count = export_finetune(db, args.out)
    print(f"exported {count} fine-tune examples to {args.out}")
    return 0


def _read_outcome_rows(path) -> list[tuple[str, str, bool]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                rows.append((d["goal"], d["o1"], bool(d["label"])))
    return rows


def cmd_predict(args) -> int:
    loaded = load_config(args.config, seed_override=args.seed)
    cache = EmbeddingCache(_build_embedder(loaded))
    train_rows = _read_outcome_rows(args.train_outcomes)
    test_rows = _read_outcome_rows(args.test_tasks)
    model = fit_predictor(train_rows, cache, loaded.run)
    scores = [predict(model, g, o1, cache) for g, o1, _ in test_rows]
    labels = [1 if s else 0 for _, _, s in test_rows]
    score_auroc = auroc(scores, labels)
    table = calibration_table(scores, labels)
    out = Path(args.out) if args.out else Path("predictor.csv")
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["auroc", "bin", "mean_pred", "emp_rate", "count"])
        for row in table:
            writer.writerow([f"{score_auroc:.6f}", row.bin_index,
                             f"{row.mean_predicted:.6f}", f"{row.empirical_rate:.6f}",
                             row.count])
    print(f"auroc={score_auroc:.4f} over {len(test_rows)} held-out tasks; wrote {out}")
    return 0


def cmd_inspect(args) -> int:
    db = load_db(args.db)
    by_source: dict[str, int] = {}
    by_length: dict[int, int] = {}
    for t in db.trajectories:
        by_source[t.source] = by_source.get(t.source, 0) + 1
        by_length[len(t.steps)] = by_length.get(len(t.steps), 0) + 1
    print(f"db_id: {db.db_id}")
    print(f"trajectories: {len(db)}")
    for source in sorted(by_source):
        print(f"  source {source}: {by_source[source]}")
    print("step-count histogram:")
    for length in sorted(by_length):
        print(f"  {length:3d} steps: {by_length[length]}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="trajforge",
                     description="Trajectory bootstrapping and curation for "
                                 "retrieval-augmented agents.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-env", help="generate a crafting world", parents=[])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--elements", type=int, default=40)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--test", type=int, default=100)
    p.set_defaults(func=cmd_gen_env)

    p = sub.add_parser("run", help="run a database-construction strategy")
    p.add_argument("--strategy", required=True, choices=STRATEGIES)
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dry-run", action="store_true",
                   help="verify the manifest of a finished run instead of running")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="evaluate a database on a task split")
    p.add_argument("--db", required=True)
    p.add_argument("--tasks", required=True, help="world file providing the tasks")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--attempts", type=int, default=1)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("passk", help="pass@k from an attempts file")
    p.add_argument("--attempts-file", required=True)
    p.add_argument("--k", type=int, nargs="+", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_passk)

    p = sub.add_parser("curate", help="select exemplars across a population run")
    p.add_argument("--population-dir", required=True)
    p.add_argument("--mode", choices=("best", "worst"), default="best")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("export-finetune", help="export chat-format training data")
    p.add_argument("--db", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_finetune)

    p = sub.add_parser("predict", help="fit and evaluate the success predictor")
    p.add_argument("--train-outcomes", required=True)
    p.add_argument("--test-tasks", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect", help="summarize a database file")
    p.add_argument("--db", required=True)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
