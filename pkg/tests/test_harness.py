import json
import sys
import threading
from fractions import Fraction
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from gamerl import harness
from gamerl.harness import (
    AgentTimeout,
    ConstantAgent,
    GreedyAgent,
    HttpAgent,
    OracleAgent,
    PolicyNetAgent,
    RandomAgent,
    SubprocessAgent,
    eval_rotation,
    pass_at_k,
    play_match,
    replay_match,
    tournament,
)
from gamerl.nn import ConvPolicyNet
from gamerl.prompts import build_snake_prompt
from gamerl.reward import parse_snake_response
from gamerl.rotation import RenderConfig, RotationDifficulty, builtin_meshes, make_instance
from gamerl.snake_env import new_game, EnvConfig

from conftest import make_state


def test_pass_at_k_examples():
    assert pass_at_k([[1, 1, 0, 0]], 2, exact=True) == Fraction(5, 6)
    assert pass_at_k([[1, 0, 0, 0]], 1) == 0.25
    assert pass_at_k([[0, 0, 0]], 3) == 0.0 and pass_at_k([[1, 0, 0]], 3) == 1.0
    with pytest.raises(ValueError):
        pass_at_k([[1, 0]], 3)
    with pytest.raises(ValueError):
        pass_at_k([[1]], 0)


def test_pass_at_k_monotone_in_k():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        rows = rng.random((int(rng.integers(1, 5)), n)) < rng.random()
        vals = [pass_at_k(rows, k, exact=True) for k in range(1, n + 1)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))
        assert vals[0] == Fraction(int(rows.sum()), rows.size)


def test_oracle_beats_random():
    res = tournament(OracleAgent(), RandomAgent(0), n=10, seed=0)
    assert res.counts() == (10, 0, 0)
    assert [m.scores for m in res.matches][:4] == [(1, 0), (3, 0), (1, 0), (3, 2)]


def test_oracle_vs_greedy():
    assert tournament(OracleAgent(), GreedyAgent(), n=10, seed=0).counts() == (9, 0, 1)


def test_replay_round_trip(tmp_path):
    path = tmp_path / "r.jsonl"
    res = play_match(OracleAgent(), RandomAgent(3), seed=11, replay_path=path)
    final, who = replay_match(path)
    assert who == res.winner
    rows = [json.loads(x) for x in path.read_text().splitlines()]
    assert rows[0]["kind"] == "header" and rows[-1]["kind"] == "result"
    assert rows[-2]["state_hash"] == res.final_hash


def test_replay_detects_tampering(tmp_path):
    path = tmp_path / "r.jsonl"
    play_match(OracleAgent(), OracleAgent(), seed=2, replay_path=path)
    rows = [json.loads(x) for x in path.read_text().splitlines()]
    rows[1]["state_hash"] = "0" * 64
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    with pytest.raises(ValueError, match="diverged"):
        replay_match(path)


def test_garbage_answers_fall_back():
    res = play_match(ConstantAgent("no tags"), OracleAgent(), seed=5)
    assert res.fallbacks[0] == res.turns and res.fallbacks[1] == 0


def test_oracle_answers_score_perfectly():
    from gamerl.move_oracle import assess
    from gamerl.reward import score_response

    st = new_game(EnvConfig(seed=4))
    for sid in (1, 2):
        text = OracleAgent().act(build_snake_prompt(st, sid))
        assert score_response(text, assess(st, sid)).reward == 1.1


def test_greedy_agent_heads_for_apple():
    s = make_state([(5, 5)], [(0, 9)], [(5, 8)])
    assert parse_snake_response(GreedyAgent().act(build_snake_prompt(s, 1))).best.name == "UP"


def test_policy_net_agent_avoids_fatal_moves():
    agent = PolicyNetAgent(ConvPolicyNet(seed=0))
    s = make_state([(0, 0), (1, 0)], [(6, 6)], [(5, 5)])
    p = parse_snake_response(agent.act(build_snake_prompt(s, 1)))
    assert p.best.name == "UP" and {a.name for a in p.worst} == {"DOWN", "LEFT", "RIGHT"}


ECHO = """
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"id": "stale", "text": "x"}))
    print("not json")
    print(json.dumps({"id": req["id"], "text": "<think></think><best_answer>UP</best_answer><worst_answer>None</worst_answer>"}), flush=True)
"""

SLOW = """
import sys, time
for line in sys.stdin:
    time.sleep(5)
"""


def test_subprocess_agent(tmp_path):
    agent = SubprocessAgent([sys.executable, "-c", ECHO], image_dir=tmp_path)
    try:
        text = agent.act(build_snake_prompt(new_game(EnvConfig(seed=1)), 1), timeout=20)
        assert parse_snake_response(text).best.name == "UP"
        assert len(list(tmp_path.glob("*.png"))) == 1
    finally:
        agent.close()


def test_subprocess_timeout():
    agent = SubprocessAgent([sys.executable, "-c", SLOW])
    try:
        with pytest.raises(AgentTimeout):
            agent.act(build_snake_prompt(new_game(EnvConfig(seed=1)), 1), timeout=0.2)
    finally:
        agent.proc.kill()


def test_timeouts_forfeit(monkeypatch):
    monkeypatch.setattr(harness, "MAX_TIMEOUTS", 1)
    agent = SubprocessAgent([sys.executable, "-c", SLOW])
    try:
        res = play_match(agent, OracleAgent(), seed=0, timeout=0.01)
    finally:
        agent.proc.kill()
    assert res.forfeit == "A" and res.winner == "B"


def test_http_agent():
    seen = []

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            req = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            seen.append(req)
            body = json.dumps({"id": req["id"], "text": "<think></think><answer>180</answer>"}).encode()
            self.send_response(200)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", 0), Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    try:
        meshes = builtin_meshes()
        inst = make_instance(meshes[0], RotationDifficulty.controlled(), np.random.default_rng(0), meshes[3:], RenderConfig(resolution=32))
        acc = eval_rotation(HttpAgent(f"http://127.0.0.1:{server.server_port}/"), [inst])
        assert acc == float(inst.target.token == "180")
        assert seen[0]["prompt"] and len(seen[0]["images"]) == 4
    finally:
        server.shutdown()


def test_eval_rotation_oracle_and_bare_ninety():
    meshes = builtin_meshes()
    rng = np.random.default_rng(2)
    insts = [make_instance(meshes[i % 3], RotationDifficulty.controlled(), rng, meshes[3:], RenderConfig(resolution=32)) for i in range(8)]
    assert eval_rotation(OracleAgent(), insts) == 1.0
    ninety = ConstantAgent("<think></think><answer>90</answer>")
    share = np.mean([i.target.token == "counter clockwise 90" for i in insts])
    assert eval_rotation(ninety, insts) == share
    with pytest.raises(ValueError):
        eval_rotation(OracleAgent(), [])
