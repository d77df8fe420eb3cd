"""Command-line entry point: ``gamerl <subcommand> [options]``.

Options may also come from ``--config FILE``, a plain-text file of
``key = value`` lines (``#`` starts a comment, keys use the long option
name with dashes or underscores). Flags given on the command line win.
The default output root is ``$GAMERL_OUTPUT_ROOT`` (else ``runs``).
Exit status: 0 success, 1 runtime failure, 2 usage error.
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
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger("gamerl")

OUTPUT_ROOT_ENV = "GAMERL_OUTPUT_ROOT"
FULL_SNAKE_N = 36_000
FULL_ROTATION_N = 36_000
DESK_N = 2_000


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise UsageError(f"config line {lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def _coerce(action: argparse.Action, value: str):
    if action.nargs == 0:  # store_true / store_false
        truth = value.lower() in ("1", "true", "yes", "on")
        return truth if isinstance(action, argparse._StoreTrueAction) else not truth
    return action.type(value) if action.type else value


def _apply_config(parser: argparse.ArgumentParser, argv: list[str], cfg: dict[str, str]) -> argparse.Namespace:
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, value in cfg.items():
        if key not in actions or key in ("help", "config"):
            raise UsageError(f"unknown config key {key!r}")
        try:
            defaults[key] = _coerce(actions[key], value)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {key!r}: {exc}") from exc
    parser.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _out_dir(args, name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / name


def _log_config(out: Path, args) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    (out / "run_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True, default=str) + "\n")


def _len_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected LO,HI") from exc
    return lo, hi


def _angle_set(args):
    from .move_oracle import RotationTarget
    from .rotation import RotationDifficulty

    if args.angles == "controlled":
        return RotationDifficulty.controlled(args.ninety).angle_set
    if args.angles == "uncontrolled":
        return RotationDifficulty.uncontrolled().angle_set
    return tuple(RotationTarget.from_token(t) for t in args.angles.split(","))


def make_agent(spec: str, seed: int = 0, work_dir: Optional[Path] = None):
    """Agent from a spec: oracle, random, greedy, ppo:CKPT, cmd:COMMAND or an http(s) URL."""
    import shlex

    from . import harness

    if spec in ("oracle", "random", "greedy"):
        return harness.builtin_agents(seed)[spec]
    if spec.startswith("ppo:"):
        return harness.PolicyNetAgent.from_checkpoint(spec[4:])
    if spec.startswith("cmd:"):
        return harness.SubprocessAgent(shlex.split(spec[4:]), image_dir=work_dir and work_dir / "agent_images")
    if spec.startswith(("http://", "https://")):
        return harness.HttpAgent(spec, image_dir=work_dir and work_dir / "agent_images")
    raise UsageError(f"unknown agent spec {spec!r}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_snake(args) -> int:
    from .data_engine import DifficultySpec, generate_snake_dataset, tree_hash

    n = args.n or (FULL_SNAKE_N if args.paper_faithful else DESK_N)
    out = _out_dir(args, "gen-snake")
    _log_config(out, args)
    res = generate_snake_dataset(
        n,
        policy_checkpoint=args.checkpoint,
        difficulty=DifficultySpec(snake_len_range=args.snake_len),
        seed=args.seed,
        out_dir=out,
        with_instruction=not args.no_instruction,
        jobs=args.jobs,
    )
    print(json.dumps({"out": str(out), "written": res.written, "requested": n, "tree_hash": tree_hash(out)}))
    if not res.complete:
        print(f"error: only {res.written} of {n} records could be generated", file=sys.stderr)
        return 1
    return 0


def cmd_gen_rotation(args) -> int:
    from .data_engine import DifficultySpec, generate_rotation_dataset, tree_hash
    from .rotation import RenderConfig

    n = args.n or (FULL_ROTATION_N if args.paper_faithful else DESK_N)
    out = _out_dir(args, "gen-rotation")
    _log_config(out, args)
    res = generate_rotation_dataset(
        n,
        mesh_dir=args.mesh_dir,
        difficulty=DifficultySpec(rotation_angle_set=_angle_set(args)),
        seed=args.seed,
        out_dir=out,
        render_config=RenderConfig(resolution=args.resolution, projection=args.projection),
        with_instruction=not args.no_instruction,
    )
    print(json.dumps({"out": str(out), "written": res.written, "label_counts": res.manifest["label_counts"], "tree_hash": tree_hash(out)}))
    return 0


def cmd_train_ppo(args) -> int:
    from .ppo import PPOConfig, mean_apples, net_policy, random_masked_policy, train_ppo, write_curve_csv
    from .snake_env import EnvConfig

    out = _out_dir(args, "train-ppo")
    _log_config(out, args)
    cfg = PPOConfig(
        lr=args.lr, gamma=args.gamma, epochs=args.epochs, minibatch=args.minibatch,
        buffer_size=args.buffer_size, normalize_advantages=args.normalize_advantages,
    )
    t = time.perf_counter()
    res = train_ppo(args.updates, cfg, EnvConfig(), seed=args.seed,
                    callback=lambda u, s: log.info("update %d mean_apples %.2f", u, s["mean_apples"]))
    res.net.save(out / "policy.bin")
    write_curve_csv(res.curve, out / "curve.csv")
    summary = {"updates": args.updates, "train_seconds": round(time.perf_counter() - t, 1)}
    if args.eval_episodes:
        seeds = range(10_000, 10_000 + args.eval_episodes)
        summary["random_masked_apples"] = mean_apples(random_masked_policy, EnvConfig(), seeds)
        summary["policy_apples"] = mean_apples(net_policy(res.net), EnvConfig(), seeds)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def cmd_train_rloo_toy(args) -> int:
    from .rloo import RlooConfig, best_move_accuracy, pool_sampler, reward_plateau, toy_problem_split, train_toy

    out = _out_dir(args, "train-rloo-toy")
    _log_config(out, args)
    train, held = toy_problem_split(args.train_states, args.eval_states, seed=args.seed)
    cfg = RlooConfig(
        k=args.k,
        batch=args.batch,
        lr=args.lr,
        updates=args.updates,
        time_budget_s=args.time_budget,
        seed=args.seed,
        entropy_coef=args.entropy_coef,
        warmup=args.warmup,
        decay=not args.no_decay,
    )
    res = train_toy(pool_sampler(train), config=cfg, plateau=None if args.no_early_stop else reward_plateau())
    res.policy.net.save(out / "toy_policy.bin")
    with open(out / "curve.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["update", "mean_reward", "mean_abs_advantage", "sample_best_acc"], extrasaction="ignore")
        w.writeheader()
        w.writerows(res.curve)
    summary = {"updates": res.updates, "seconds": round(res.seconds, 1), "heldout_best_accuracy": best_move_accuracy(res.policy, held)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def cmd_play(args) -> int:
    from .harness import play_match

    out = _out_dir(args, "play")
    _log_config(out, args)
    a, b = make_agent(args.a, args.seed, out), make_agent(args.b, args.seed + 1, out)
    try:
        res = play_match(a, b, args.seed, replay_path=out / "replay.jsonl", timeout=args.timeout)
    finally:
        a.close()
        b.close()
    print(json.dumps({"winner": res.winner, "scores": list(res.scores), "turns": res.turns, "replay": res.replay}))
    return 0


def cmd_tournament(args) -> int:
    from .harness import tournament

    out = _out_dir(args, "tournament")
    _log_config(out, args)
    a, b = make_agent(args.a, args.seed, out), make_agent(args.b, args.seed + 1, out)
    try:
        res = tournament(a, b, n=args.games, seed=args.seed, replay_dir=out / "replays", timeout=args.timeout)
    finally:
        a.close()
        b.close()
    with open(out / "results.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["match", "seed", "winner", "score_a", "score_b", "turns", "forfeit"])
        for i, m in enumerate(res.matches):
            w.writerow([i, args.seed + i, m.winner, m.scores[0], m.scores[1], m.turns, m.forfeit or ""])
    print(json.dumps({"a_wins": res.a_wins, "b_wins": res.b_wins, "draws": res.draws}))
    return 0


def cmd_eval_rotation(args) -> int:
    from .data_engine import DifficultySpec, load_meshes, split_meshes
    from .harness import eval_rotation
    from .rotation import RenderConfig, RotationDifficulty, make_instance

    out = _out_dir(args, "eval-rotation")
    _log_config(out, args)
    if args.dataset:
        instances = _instances_from_dataset(Path(args.dataset))
    else:
        task, example = split_meshes(load_meshes(args.mesh_dir), args.seed)
        diff = RotationDifficulty(tuple(DifficultySpec(rotation_angle_set=_angle_set(args)).rotation_angle_set))
        rng = np.random.default_rng([args.seed, 47])
        cfg = RenderConfig(resolution=args.resolution)
        instances = [make_instance(task[int(rng.integers(len(task)))], diff, rng, example, cfg, instance_id=f"eval_{i}") for i in range(args.n)]
    agent = make_agent(args.agent, args.seed, out)
    try:
        acc = eval_rotation(agent, instances, seed=args.seed, timeout=args.timeout)
    finally:
        agent.close()
    print(json.dumps({"instances": len(instances), "accuracy": acc}))
    return 0


def _instances_from_dataset(root: Path):
    from PIL import Image

    from .data_engine import read_records
    from .move_oracle import RotationTarget
    from .rotation import Orientation, RotationInstance

    def img(rel):
        return np.asarray(Image.open(root / rel).convert("RGB"))

    out = []
    for rec in read_records(root):
        if rec["game"] != "rotation":
            continue
        inst = rec["instance"]
        out.append(RotationInstance(
            instance_id=rec["id"],
            mesh_id=inst["mesh_id"],
            init_orientation=Orientation(**inst["init_orientation"]),
            target=RotationTarget.from_token(rec["labels"]["target"]),
            angle_set=tuple(RotationTarget.from_token(t) for t in rec["labels"]["angle_set"]),
            image_init=img(rec["images"][2]),
            image_rot=img(rec["images"][3]),
            example_mesh_id=inst["example_mesh_id"],
            example_orientation=Orientation(**inst["example_orientation"]),
            example_init=img(rec["images"][0]),
            example_rot=img(rec["images"][1]),
        ))
    if not out:
        raise ValueError(f"no rotation records in {root}")
    return out


def labels_from_json(obj: dict):
    """Labels from a ``score`` input line: a snake state, explicit label sets, or a rotation target."""
    from .move_oracle import MoveAssessment, RotationTarget, assess
    from .reward import RotationLabels
    from .snake_env import Action, GameState

    game = obj.get("game", "snake")
    labels = obj.get("labels", {})
    if game == "rotation":
        angle_set = labels.get("angle_set", ["counter clockwise 90", "180"])
        return RotationLabels(RotationTarget.from_token(labels["target"]), tuple(RotationTarget.from_token(t) for t in angle_set))
    if "state" in obj:
        return assess(GameState.from_dict(obj["state"]), int(obj.get("snake_id", 1)))
    return MoveAssessment(
        fatal=frozenset(Action[a] for a in labels.get("fatal", [])),
        nearest_apple=None,
        toward_nearest=frozenset(),
        best=frozenset(Action[a] for a in labels["best"]),
    )


def cmd_score(args) -> int:
    from .reward import score_response

    src = sys.stdin if args.input == "-" else open(args.input, encoding="utf-8")
    sink = sys.stdout if args.out is None else open(args.out, "w", encoding="utf-8")
    try:
        for lineno, line in enumerate(src, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            rb = score_response(obj["text"], labels_from_json(obj))
            row = {"line": lineno, **({"id": obj["id"]} if "id" in obj else {}), **rb.to_dict()}
            sink.write(json.dumps(row, sort_keys=True) + "\n")
    finally:
        if src is not sys.stdin:
            src.close()
        if sink is not sys.stdout:
            sink.close()
    return 0


def cmd_render(args) -> int:
    from .rotation import Orientation, RenderConfig, load_mesh, builtin_meshes, png_bytes, render
    from .snake_env import EnvConfig, GameState, board_png_bytes, new_game

    out = Path(args.out) if args.out else _out_dir(args, "render") / "render.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.mesh:
        meshes = {m.name: m for m in builtin_meshes()}
        if args.mesh in meshes:
            mesh = meshes[args.mesh]
        elif Path(args.mesh).is_file():
            mesh = load_mesh(args.mesh)
        else:
            raise UsageError(f"--mesh must be an .obj path or one of {', '.join(meshes)}")
        try:
            rx, ry, rz, turn = (float(x) for x in args.orientation.split(","))
        except ValueError as exc:
            raise UsageError("--orientation expects rx,ry,rz,turn") from exc
        img = render(mesh, Orientation(rx, ry, rz, turn), RenderConfig(resolution=args.resolution, projection=args.projection))
        out.write_bytes(png_bytes(img))
    else:
        state = GameState.from_dict(json.loads(Path(args.state).read_text())) if args.state else new_game(EnvConfig(seed=args.seed))
        out.write_bytes(board_png_bytes(state))
    print(json.dumps({"out": str(out)}))
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suites

    results = run_suites(args.suite or None)
    failed = 0
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name:<10} {r.detail}  ({r.seconds:.1f}s)")
        failed += not r.ok
    if args.dataset:
        from .data_engine import verify_dataset

        problems = verify_dataset(args.dataset)
        print(f"{'PASS' if not problems else 'FAIL'}  dataset    {len(problems)} problems in {args.dataset}")
        for p in problems[:20]:
            print("   ", p)
        failed += bool(problems)
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .rloo import RlooConfig
    from .verify import SUITES

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; command-line flags override it")
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--out", help="output directory (default $GAMERL_OUTPUT_ROOT/<subcommand>)")
    common.add_argument("--paper-faithful", action="store_true", help="full-scale preset: 36K samples, 10x10 board, [1,5] lengths")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gamerl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func)
        return sp

    def rotation_opts(sp):
        sp.add_argument("--angles", default="controlled", help="controlled, uncontrolled or comma-separated answer tokens")
        sp.add_argument("--ninety", choices=["ccw", "cw"], default="ccw", help="90-degree direction in the controlled set")
        sp.add_argument("--mesh-dir", help="directory of .obj meshes (default: built-in meshes)")
        sp.add_argument("--resolution", type=int, default=512)

    sp = add("gen-snake", cmd_gen_snake, "generate a labelled snake dataset")
    sp.add_argument("--n", type=int, default=0, help=f"records (default {DESK_N}; {FULL_SNAKE_N} with --paper-faithful)")
    sp.add_argument("--checkpoint", help="policy checkpoint used for self-play (default: random masked policy)")
    sp.add_argument("--snake-len", type=_len_range, default=(1, 5), help="inclusive length filter LO,HI")
    sp.add_argument("--no-instruction", action="store_true", help="omit the reasoning instruction")

    sp = add("gen-rotation", cmd_gen_rotation, "generate a labelled rotation dataset")
    sp.add_argument("--n", type=int, default=0)
    rotation_opts(sp)
    sp.add_argument("--projection", choices=["orthographic", "perspective"], default="orthographic")
    sp.add_argument("--no-instruction", action="store_true")

    sp = add("train-ppo", cmd_train_ppo, "train the self-play snake policy")
    sp.add_argument("--updates", type=int, default=200)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--gamma", type=float, default=0.99)
    sp.add_argument("--epochs", type=int, default=4)
    sp.add_argument("--minibatch", type=int, default=32)
    sp.add_argument("--buffer-size", type=int, default=2048)
    sp.add_argument("--normalize-advantages", action="store_true", help="standardize advantages per buffer")
    sp.add_argument("--eval-episodes", type=int, default=50)

    sp = add("train-rloo-toy", cmd_train_rloo_toy, "train the toy best/worst-move policy")
    toy = RlooConfig()
    sp.add_argument("--updates", type=int, default=toy.updates)
    sp.add_argument("--k", type=int, default=toy.k)
    sp.add_argument("--batch", type=int, default=toy.batch)
    sp.add_argument("--lr", type=float, default=toy.lr)
    sp.add_argument("--warmup", type=int, default=toy.warmup, help="updates of linear lr warmup")
    sp.add_argument("--no-decay", action="store_true", help="keep lr constant after warmup")
    sp.add_argument("--entropy-coef", type=float, default=toy.entropy_coef, help="0 gives the plain leave-one-out update")
    sp.add_argument("--time-budget", type=float, default=toy.time_budget_s, help="seconds")
    sp.add_argument("--train-states", type=int, default=20000)
    sp.add_argument("--eval-states", type=int, default=1000)
    sp.add_argument("--no-early-stop", action="store_true")

    for name, func, help_ in (("play", cmd_play, "play one match"), ("tournament", cmd_tournament, "play several matches")):
        sp = add(name, func, help_)
        sp.add_argument("--a", default="oracle", help="agent for snake 1 (oracle, random, greedy, ppo:CKPT, cmd:COMMAND, URL)")
        sp.add_argument("--b", default="random", help="agent for snake 2")
        sp.add_argument("--timeout", type=float, default=60.0)
        if name == "tournament":
            sp.add_argument("--games", type=int, default=10)

    sp = add("eval-rotation", cmd_eval_rotation, "rotation accuracy of an agent")
    sp.add_argument("--agent", default="oracle")
    sp.add_argument("--dataset", help="rotation dataset directory (default: generate --n instances)")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--timeout", type=float, default=60.0)
    rotation_opts(sp)

    sp = add("score", cmd_score, "score tagged responses from JSONL")
    sp.add_argument("--in", dest="input", default="-", help="JSONL with text and labels (default stdin)")

    sp = add("render", cmd_render, "render a board or a mesh to PNG (--out names the file)")
    sp.add_argument("--state", help="JSON game state (default: new game from --seed)")
    sp.add_argument("--mesh", help="built-in mesh name or .obj path")
    sp.add_argument("--orientation", default="0,0,0,0", help="rx,ry,rz,turn in degrees")
    sp.add_argument("--resolution", type=int, default=512)
    sp.add_argument("--projection", choices=["orthographic", "perspective"], default="orthographic")

    sp = add("verify", cmd_verify, "run the invariant and oracle suites")

    sp.add_argument("--suite", action="append", choices=list(SUITES), help="suite name (repeatable; default all)")
    sp.add_argument("--dataset", help="also verify a generated dataset directory")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.config:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            cfg = parse_config_text(Path(args.config).read_text())
            args = _apply_config(sub, argv[1:], cfg)
            args.command = argv[0]
    except UsageError as exc:
        print(f"gamerl: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"gamerl: error: cannot read config: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args))
    except UsageError as exc:
        print(f"gamerl: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"gamerl: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
