"""Protocol conformance: every emitted line parses under the engine grammar."""

import io
import json
import subprocess
import sys

import pytest
from evopress import oracle_bridge

from pyoracle import ToyModel, serve


def run_transcript(lines, seed=2, blocks=2, dim=8, levels=2):
    model = ToyModel(seed=seed, blocks=blocks, dim=dim, levels=levels)
    out = io.StringIO()
    serve(model, stdin=io.StringIO("".join(l + "\n" for l in lines)), stdout=out)
    return out.getvalue().splitlines()


def eval_line(rid, levels, seed=1, tokens=64):
    return json.dumps(
        {"type": "eval", "id": rid, "levels": levels, "seed": seed, "tokens": tokens},
        separators=(",", ":"),
    )


HELLO = '{"type":"hello","version":1}'
BYE = '{"type":"bye"}'


class TestGoldenTranscript:
    def test_handshake_line_is_exact(self):
        out = run_transcript([HELLO, BYE])
        assert out == ['{"type":"info","version":1,"n_units":4,"levels_per_unit":[2,2,2,2]}']

    def test_all_retained_result_line_is_exact(self):
        out = run_transcript([HELLO, eval_line(1, [0, 0, 0, 0]), BYE])
        assert out[1] == '{"type":"result","id":1,"fitness":0.0,"tokens_used":64}'

    def test_every_line_parses_under_the_engine_grammar(self):
        out = run_transcript(
            [
                HELLO,
                eval_line(1, [0, 0, 0, 0]),
                eval_line(2, [1, 0, 1, 0], seed=3, tokens=128),
                "not even json",
                eval_line(3, [0, 9, 0, 0]),
                eval_line(4, [0, 1, 0, 0]),
                BYE,
            ]
        )
        info = oracle_bridge.decode_info(out[0])
        assert info.n_units == 4 and info.levels_per_unit == (2, 2, 2, 2)
        r1 = oracle_bridge.decode_response(out[1])
        assert r1.request_id == 1 and r1.fitness == 0.0 and r1.tokens_used == 64
        r2 = oracle_bridge.decode_response(out[2])
        assert r2.request_id == 2 and r2.fitness > 0.0 and r2.tokens_used == 128
        with pytest.raises(oracle_bridge.RemoteEvalFailure):
            oracle_bridge.decode_response(out[3])  # the bad-json complaint
        with pytest.raises(oracle_bridge.RemoteEvalFailure) as exc:
            oracle_bridge.decode_response(out[4])  # levels out of range
        assert exc.value.request_id == 3
        r4 = oracle_bridge.decode_response(out[5])
        assert r4.request_id == 4 and r4.fitness > 0.0

    def test_identical_requests_get_identical_answers(self):
        out = run_transcript(
            [HELLO, eval_line(1, [1, 0, 0, 1], seed=9), eval_line(2, [1, 0, 0, 1], seed=9), BYE]
        )
        a, b = (json.loads(l) for l in out[1:3])
        assert a["fitness"] == b["fitness"]
        assert a["tokens_used"] == b["tokens_used"]


class TestBadRequestsNeverKillTheLoop:
    def answers_after(self, bad_lines):
        """The loop must still answer a good eval after each bad input."""
        out = run_transcript([HELLO, *bad_lines, eval_line(77, [0, 0, 0, 0]), BYE])
        final = oracle_bridge.decode_response(out[-1])
        assert final.request_id == 77
        return out[1:-1]

    def test_malformed_json(self):
        (err,) = self.answers_after(["{broken"])
        doc = json.loads(err)
        assert doc["type"] == "error" and "id" not in doc

    def test_non_object_payload(self):
        (err,) = self.answers_after(["[1,2,3]"])
        assert json.loads(err)["type"] == "error"

    def test_unknown_request_type(self):
        (err,) = self.answers_after(['{"type":"train","id":1}'])
        assert "unknown request type" in json.loads(err)["message"]

    def test_missing_or_bool_id(self):
        errs = self.answers_after(
            [
                '{"type":"eval","levels":[0,0,0,0],"seed":1,"tokens":64}',
                '{"type":"eval","id":true,"levels":[0,0,0,0],"seed":1,"tokens":64}',
            ]
        )
        for err in errs:
            doc = json.loads(err)
            assert doc["type"] == "error" and "id" not in doc

    def test_wrong_levels_shape_or_values(self):
        errs = self.answers_after(
            [
                eval_line(5, [0, 0, 0]),
                eval_line(6, [0, 0, 0, 2]),
                eval_line(7, "nope"),
                eval_line(8, [0, 0, 0, True]),
            ]
        )
        assert [json.loads(e)["id"] for e in errs] == [5, 6, 7, 8]

    def test_bad_seed_or_tokens(self):
        errs = self.answers_after(
            [
                eval_line(9, [0, 0, 0, 0], seed=-1),
                eval_line(10, [0, 0, 0, 0], tokens=0),
                eval_line(11, [0, 0, 0, 0], tokens=1 << 40),
            ]
        )
        assert [json.loads(e)["id"] for e in errs] == [9, 10, 11]

    def test_blank_lines_are_ignored(self):
        out = run_transcript([HELLO, "", "   ", eval_line(1, [0, 0, 0, 0]), BYE])
        assert len(out) == 2


class TestProcessEntry:
    def test_command_line_serves_the_protocol(self):
        proc = subprocess.run(
            [sys.executable, "-m", "pyoracle", "--seed", "1", "--blocks", "2", "--dim", "8"],
            input=HELLO + "\n" + eval_line(1, [0, 1, 0, 0]) + "\n" + BYE + "\n",
            capture_output=True,
            text=True,
            timeout=60,
        )
        assert proc.returncode == 0
        lines = proc.stdout.splitlines()
        info = oracle_bridge.decode_info(lines[0])
        assert info.n_units == 4
        result = oracle_bridge.decode_response(lines[1])
        assert result.fitness > 0.0
