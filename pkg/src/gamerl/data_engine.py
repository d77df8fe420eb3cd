"""Deterministic, difficulty-controlled dataset synthesis (JSONL records plus PNG images)."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .move_oracle import RotationTarget, assess
from .nn import ConvPolicyNet
from .ppo import harvest_states, net_policy, random_masked_policy
from .prompts import build_rotation_prompt, build_snake_prompt
from .reward import format_rotation_response, format_snake_response
from .rotation import (
    CONTROLLED,
    Mesh,
    RenderConfig,
    RotationConfigError,
    RotationDifficulty,
    builtin_meshes,
    load_mesh,
    make_instance,
    png_bytes,
)
from .snake_env import EnvConfig, GameState, board_png_bytes

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
RECORDS_FILE = "records.jsonl"
MANIFEST_FILE = "manifest.json"
MAX_SNAKE_LEN = 19
EXAMPLE_POOL_SIZE = 3


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class DifficultySpec:
    snake_len_range: tuple[int, int] = (1, 5)
    rotation_angle_set: tuple[RotationTarget, ...] = CONTROLLED

    def __post_init__(self):
        lo, hi = self.snake_len_range
        if lo < 1 or hi > MAX_SNAKE_LEN or lo > hi:
            raise ValueError(f"snake length range must satisfy 1 <= lo <= hi <= {MAX_SNAKE_LEN}, got {self.snake_len_range}")
        if not self.rotation_angle_set:
            raise ValueError("rotation angle set is empty")
        object.__setattr__(self, "snake_len_range", (int(lo), int(hi)))
        object.__setattr__(self, "rotation_angle_set", tuple(RotationTarget(t) if not isinstance(t, RotationTarget) else t for t in self.rotation_angle_set))

    def to_dict(self) -> dict:
        return {"snake_len_range": list(self.snake_len_range), "rotation_angle_set": [t.token for t in self.rotation_angle_set]}


@dataclass
class DatasetResult:
    out_dir: Path
    written: int
    requested: int
    manifest: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return self.written >= self.requested


def record_seed(seed: int, index: int) -> int:
    """Per-record seed derived from the master seed and the record index."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0] >> 1)


def content_id(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:20]


def dump_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"


def record_schema() -> dict:
    text = (resources.files("gamerl") / "resources" / "schemas" / "record_v1.json").read_text(encoding="utf-8")
    return json.loads(text)


def tree_hash(directory) -> str:
    """SHA-256 over every file's relative path and bytes, in sorted order."""
    root = Path(directory)
    h = hashlib.sha256()
    for p in sorted(x for x in root.rglob("*") if x.is_file()):
        h.update(p.relative_to(root).as_posix().encode() + b"\0")
        h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=16))


def _write_manifest(out: Path, manifest: dict) -> None:
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# snake
# ---------------------------------------------------------------------------


def _snake_record(args) -> tuple[dict, bytes]:
    index, state_dict, seed, with_instruction, difficulty = args
    state = GameState.from_dict(state_dict)
    rng = np.random.default_rng(seed)
    sid = int(rng.integers(1, 3))
    labels = assess(state, sid)
    image = f"images/snake_{index:06d}.png"
    bundle = build_snake_prompt(state, sid, with_instruction=with_instruction, image_ref=image)
    key = {"game": "snake", "state": state_dict, "snake_id": sid, "seed": seed}
    record = {
        "id": content_id(key),
        "schema_version": SCHEMA_VERSION,
        "game": "snake",
        "index": index,
        "seed": seed,
        "images": [image],
        "prompt": bundle.text,
        "instruction_id": bundle.instruction_id,
        "snake_id": sid,
        "state": state_dict,
        "labels": {
            "best": sorted(a.name for a in labels.best),
            "fatal": sorted(a.name for a in labels.fatal),
            "nearest_apple": list(labels.nearest_apple) if labels.nearest_apple else None,
            "reference_response": format_snake_response(labels.canonical_best(), labels.fatal),
        },
        "difficulty": {
            "snake_len_range": list(difficulty),
            "snake_lengths": [len(s.body) for s in state.snakes],
        },
    }
    return record, board_png_bytes(state)


def load_policy(policy_checkpoint):
    """Policy callable from a checkpoint path, or the random-masked policy for ``None``."""
    if policy_checkpoint is None:
        return random_masked_policy
    if isinstance(policy_checkpoint, ConvPolicyNet):
        return net_policy(policy_checkpoint)
    return net_policy(ConvPolicyNet.load(policy_checkpoint))


def generate_snake_dataset(
    n: int,
    policy_checkpoint=None,
    difficulty: DifficultySpec = DifficultySpec(),
    seed: int = 0,
    out_dir=".",
    with_instruction: bool = True,
    env_config: EnvConfig = EnvConfig(),
    jobs: int = 1,
    step_budget: Optional[int] = None,
) -> DatasetResult:
    """Harvest self-play states, label them and write ``records.jsonl`` plus board PNGs.

    States whose chosen snake has no best move are dropped. The result is
    partial (``complete`` False) when too few distinct states were found.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    policy = load_policy(policy_checkpoint)
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    pool = harvest_states(
        policy, int(n * 1.25) + 16, difficulty.snake_len_range, seed=seed, env_config=env_config, step_budget=step_budget
    )
    tasks = []
    for st in pool:
        if len(tasks) == n:
            break
        i = len(tasks)
        s = record_seed(seed, i)
        sid = int(np.random.default_rng(s).integers(1, 3))
        if not assess(st, sid).best:
            continue
        tasks.append((i, st.to_dict(), s, with_instruction, difficulty.snake_len_range))
    results = _map(_snake_record, tasks, jobs)
    with open(out / RECORDS_FILE, "w", encoding="utf-8", newline="\n") as f:
        for record, png in results:
            (out / record["images"][0]).write_bytes(png)
            f.write(dump_line(record))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "game": "snake",
        "requested": n,
        "written": len(results),
        "complete": len(results) >= n,
        "seed": seed,
        "difficulty": difficulty.to_dict(),
        "with_instruction": with_instruction,
        "policy": str(policy_checkpoint) if policy_checkpoint is not None and not isinstance(policy_checkpoint, ConvPolicyNet) else "random-masked",
        "env": {k: getattr(env_config, k) for k in ("board_w", "board_h", "num_apples", "max_turns", "growth_per_apple")},
    }
    _write_manifest(out, manifest)
    if len(results) < n:
        log.warning("wrote %d of %d snake records", len(results), n)
    return DatasetResult(out, len(results), n, manifest)


# ---------------------------------------------------------------------------
# rotation
# ---------------------------------------------------------------------------


def load_meshes(mesh_dir) -> list[Mesh]:
    """Meshes from ``*.obj`` files in ``mesh_dir`` (sorted by name), or the built-in set."""
    if mesh_dir is None:
        return builtin_meshes()
    paths = sorted(Path(mesh_dir).glob("*.obj"))
    return [load_mesh(p) for p in paths]


def split_meshes(meshes: Sequence[Mesh], seed: int) -> tuple[list[Mesh], list[Mesh]]:
    """(task pool, 3-mesh example pool), chosen by a seeded permutation."""
    if len(meshes) < EXAMPLE_POOL_SIZE + 1:
        raise RotationConfigError(f"need at least {EXAMPLE_POOL_SIZE + 1} meshes, got {len(meshes)}")
    names = [m.name for m in meshes]
    if len(set(names)) != len(names):
        raise RotationConfigError("mesh names must be unique")
    order = np.random.default_rng([seed, 41]).permutation(len(meshes))
    example = [meshes[i] for i in sorted(order[:EXAMPLE_POOL_SIZE])]
    task = [meshes[i] for i in sorted(order[EXAMPLE_POOL_SIZE:])]
    return task, example


def balanced_targets(n: int, angle_set: Sequence[RotationTarget], seed: int) -> list[RotationTarget]:
    """Shuffled targets whose counts differ by at most one."""
    targets = [angle_set[i % len(angle_set)] for i in range(n)]
    order = np.random.default_rng([seed, 43]).permutation(n)
    return [targets[i] for i in order]


def generate_rotation_dataset(
    n: int,
    mesh_dir=None,
    difficulty: DifficultySpec = DifficultySpec(),
    seed: int = 0,
    out_dir=".",
    render_config: RenderConfig = RenderConfig(),
    with_instruction: bool = True,
    jobs: int = 1,
) -> DatasetResult:
    if n < 1:
        raise ValueError("n must be >= 1")
    meshes = load_meshes(mesh_dir)
    task_pool, example_pool = split_meshes(meshes, seed)
    targets = balanced_targets(n, difficulty.rotation_angle_set, seed)
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rot_difficulty = RotationDifficulty(tuple(difficulty.rotation_angle_set))
    with open(out / RECORDS_FILE, "w", encoding="utf-8", newline="\n") as f:
        for i in range(n):
            s = record_seed(seed, i)
            rng = np.random.default_rng(s)
            mesh = task_pool[int(rng.integers(len(task_pool)))]
            inst = make_instance(mesh, rot_difficulty, rng, example_pool, render_config, target=targets[i], instance_id=f"rot_{i:06d}")
            bundle = build_rotation_prompt(inst, rng, with_instruction=with_instruction)
            images = [f"images/rot_{i:06d}_{tag}.png" for tag in ("example_init", "example_rot", "task_init", "task_rot")]
            for path, img in zip(images, (inst.example_init, inst.example_rot, inst.image_init, inst.image_rot)):
                (out / path).write_bytes(png_bytes(img))
            instance = {
                "mesh_id": inst.mesh_id,
                "init_orientation": inst.init_orientation.to_dict(),
                "example_mesh_id": inst.example_mesh_id,
                "example_orientation": inst.example_orientation.to_dict(),
                "example_target": inst.example_target.token,
                "image_size": render_config.resolution,
                "projection": render_config.projection,
            }
            record = {
                "id": content_id({"game": "rotation", "instance": instance, "target": inst.target.token, "seed": s}),
                "schema_version": SCHEMA_VERSION,
                "game": "rotation",
                "index": i,
                "seed": s,
                "images": images,
                "prompt": bundle.text,
                "instruction_id": bundle.instruction_id,
                "instance": instance,
                "labels": {
                    "target": inst.target.token,
                    "ccw_degrees": inst.target.ccw_degrees,
                    "angle_set": [t.token for t in inst.angle_set],
                    "reference_response": format_rotation_response(inst.target.token),
                },
                "difficulty": {"rotation_angle_set": [t.token for t in difficulty.rotation_angle_set], "balanced": True},
            }
            f.write(dump_line(record))
    counts = {t.token: targets.count(t) for t in difficulty.rotation_angle_set}
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "game": "rotation",
        "requested": n,
        "written": n,
        "complete": True,
        "seed": seed,
        "difficulty": difficulty.to_dict(),
        "label_counts": counts,
        "labels_balanced": True,
        "task_meshes": [m.name for m in task_pool],
        "example_meshes": [m.name for m in example_pool],
        "render": {"size": render_config.resolution, "projection": render_config.projection},
    }
    _write_manifest(out, manifest)
    return DatasetResult(out, n, n, manifest)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


def read_records(path) -> list[dict]:
    p = Path(path)
    if p.is_dir():
        p = p / RECORDS_FILE
    return [json.loads(line) for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]


def verify_dataset(directory, check_images: bool = True) -> list[str]:
    """Problems found by re-deriving every label independently; empty means sound."""
    import jsonschema
    from PIL import Image

    from .rotation import image_rotate_oracle
    from .verify import brute_force_assess

    root = Path(directory)
    validator = jsonschema.Draft202012Validator(record_schema())
    problems = []
    for rec in read_records(root):
        rid = rec.get("id", "?")
        for err in validator.iter_errors(rec):
            problems.append(f"{rid}: schema: {err.message}")
        if rec.get("game") == "snake":
            state = GameState.from_dict(rec["state"])
            labels = brute_force_assess(state, rec["snake_id"])
            if sorted(a.name for a in labels.best) != rec["labels"]["best"]:
                problems.append(f"{rid}: best set mismatch")
            if sorted(a.name for a in labels.fatal) != rec["labels"]["fatal"]:
                problems.append(f"{rid}: fatal set mismatch")
            lo, hi = rec["difficulty"]["snake_len_range"]
            if not all(lo <= len(s.body) <= hi for s in state.snakes):
                problems.append(f"{rid}: snake length outside [{lo}, {hi}]")
            if check_images and not (root / rec["images"][0]).is_file():
                problems.append(f"{rid}: missing image")
        elif rec.get("game") == "rotation":
            target = RotationTarget.from_token(rec["labels"]["target"])
            if rec["labels"]["target"] not in rec["labels"]["angle_set"]:
                problems.append(f"{rid}: target outside angle set")
            if check_images:
                init = np.asarray(Image.open(root / rec["images"][2]).convert("RGB"))
                rot = np.asarray(Image.open(root / rec["images"][3]).convert("RGB"))
                if not np.array_equal(image_rotate_oracle(init, target.ccw_degrees), rot):
                    problems.append(f"{rid}: rotated image is not the pixel rotation of the initial image")
        else:
            problems.append(f"{rid}: unknown game {rec.get('game')!r}")
    return problems
