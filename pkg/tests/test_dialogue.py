import json
import logging

import pytest

from usersim.dialogue import (
    ABORTED,
    OPENER,
    SUCCESS,
    TURN_CAP,
    DialogueSession,
    GoalVerdict,
    JudgeUnparseable,
    SessionConfig,
    Turn,
    compose_button_prompt,
    compose_judge_prompt,
    compose_user_prompt,
    iter_sessions,
    judge_goals,
    next_user_turn,
    parse_judge_reply,
    run_session,
)
from usersim.llm import ScriptedBackend, TransportError
from usersim.studybot import StudyBot, StudyBotAdapter

from conftest import make_persona


class EchoAdapter:
    """System side that answers every user turn with a fixed reply."""

    def __init__(self, buttons=None, fail_times=0):
        self.buttons = buttons
        self.fail_times = fail_times
        self.calls = 0

    def reply(self, session_id, user_turn, history):
        self.calls += 1
        if self.calls <= self.fail_times:
            raise ConnectionError("system down")
        return Turn(user_turn.index + 1, "system", f"echo: {user_turn.utterance}", buttons=self.buttons)


def verdict(persona, met: bool):
    return json.dumps({g: "yes" if met else "no" for g in persona.user_goals})


def history(n):
    return [Turn(i, "user" if i % 2 == 0 else "system", f"t{i}") for i in range(n)]


def test_user_prompt_empty_history(persona):
    req = compose_user_prompt(persona, [])
    assert [m.role for m in req.messages] == ["system", "user"]
    assert req.messages[1].content == OPENER
    assert json.dumps(persona.to_dict(), indent=2) in req.messages[0].content


def test_user_prompt_history_in_order(persona):
    req = compose_user_prompt(persona, history(4))
    assert [m.content for m in req.messages[1:]] == ["t0", "t1", "t2", "t3"]
    assert [m.role for m in req.messages[1:]] == ["assistant", "user", "assistant", "user"]


def test_formal_directive(persona):
    formal = compose_user_prompt(persona, []).messages[0].content
    informal = compose_user_prompt(make_persona(communication_type="informal"), []).messages[0].content
    assert "formal" in formal and "polite" in formal.lower()
    assert formal != informal


def test_user_prompt_carries_language(persona):
    assert "Write in German" in compose_user_prompt(make_persona(language_preference="German"), []).messages[0].content


def test_button_prompt_lists_exact_options(persona):
    text = compose_button_prompt(persona, history(2), ["Bachelor", "Master"]).messages[-1].content
    assert '1. "Bachelor"' in text and '2. "Master"' in text
    assert "3." not in text


def test_button_prompt_requires_options(persona):
    with pytest.raises(ValueError):
        compose_button_prompt(persona, [], [])


def test_button_prompt_keeps_whitespace(persona):
    text = compose_button_prompt(persona, [], [" Master ", "Master"]).messages[-1].content
    assert '" Master "' in text


def test_button_reply_exact(persona):
    turn = next_user_turn(ScriptedBackend(["Master"]), persona, history(2), ["Bachelor", "Master"])
    assert turn.selected_button == "Master" and turn.speaker == "user" and turn.index == 2


def test_button_reply_retry(persona):
    backend = ScriptedBackend(["I'd like Master please", "Master"])
    turn = next_user_turn(backend, persona, history(2), ["Bachelor", "Master"])
    assert turn.selected_button == "Master"
    assert "not one of the options" in backend.requests[1].messages[-1].content


def test_button_reply_fallback(persona, caplog):
    backend = ScriptedBackend(["neither", "still neither"])
    with caplog.at_level(logging.WARNING):
        turn = next_user_turn(backend, persona, history(2), ["Bachelor", "Master"])
    assert turn.selected_button == "Bachelor"
    assert "falling back" in caplog.text


def test_plain_user_turn(persona):
    turn = next_user_turn(ScriptedBackend(["What are the admission requirements?"]), persona, [])
    assert turn.utterance == "What are the admission requirements?"
    assert turn.selected_button is None


def test_user_turn_must_follow_system(persona):
    with pytest.raises(ValueError):
        next_user_turn(ScriptedBackend(["x"]), persona, history(1))


def test_judge_all_yes():
    p = make_persona(secondary_goals=("module_contents",))
    v = judge_goals(ScriptedBackend([verdict(p, True)]), p, history(2))
    assert v.all_met and v.judged_at_turn == 1


def test_judge_partial():
    p = make_persona(secondary_goals=("module_contents", "admission_restriction"))
    reply = json.dumps({"find_relevant_study_programs": "yes", "module_contents": "yes", "admission_restriction": "no"})
    v = judge_goals(ScriptedBackend([reply]), p, history(2))
    assert not v.all_met
    assert v.per_goal == {"find_relevant_study_programs": True, "module_contents": True, "admission_restriction": False}


def test_judge_gibberish_twice(persona):
    backend = ScriptedBackend(["what?", "I refuse"])
    with pytest.raises(JudgeUnparseable) as info:
        judge_goals(backend, persona, history(2))
    v = info.value.verdict
    assert v.unparseable and not v.all_met and not any(v.per_goal.values())
    assert set(v.per_goal) == set(persona.user_goals)


def test_judge_reformat_retry(persona):
    backend = ScriptedBackend(["nope", verdict(persona, True)])
    assert judge_goals(backend, persona, history(2)).all_met
    assert len(backend.requests) == 2


def test_judge_prompt_lists_goals_and_transcript(persona):
    text = compose_judge_prompt(persona, history(2)).text
    for goal in persona.user_goals:
        assert f"- {goal}" in text
    assert "User: t0" in text and "StudyBot: t1" in text
    assert compose_judge_prompt(persona, history(2)).temperature == 0.0


@pytest.mark.parametrize(
    "reply",
    [
        '{"a": "yes"}',
        '{"a": "maybe", "b": "no"}',
        "no json here",
    ],
)
def test_parse_judge_reply_strict(reply):
    with pytest.raises(ValueError):
        parse_judge_reply(reply, ["a", "b"])


def test_parse_judge_reply_accepts_booleans():
    assert parse_judge_reply('```json\n{"a": true, "B": "No"}\n```', ["a", "b"]) == {"a": True, "b": False}


def test_all_met_is_derived():
    v = GoalVerdict({"a": True, "b": False}, 1, "")
    assert not v.all_met
    assert GoalVerdict({"a": True}, 1, "").all_met
    again = GoalVerdict.from_dict({**v.to_dict(), "all_met": True})
    assert not again.all_met


def test_session_success_after_third_user_turn(persona):
    judge = ScriptedBackend([verdict(persona, False)] * 2 + [verdict(persona, True)])
    session = run_session(ScriptedBackend(["q1", "q2", "q3"]), judge, EchoAdapter(), persona)
    assert session.outcome == SUCCESS
    assert session.user_turn_count == 3 and session.total_turn_count == 6
    assert session.final_verdict.judged_at_turn == 5
    assert len(session.goal_verdicts) == 3


def test_session_turn_cap(persona):
    session = run_session(
        ScriptedBackend([f"q{i}" for i in range(30)]),
        ScriptedBackend([verdict(persona, False)] * 30),
        EchoAdapter(),
        persona,
    )
    assert session.outcome == TURN_CAP
    assert session.total_turn_count == 20 and session.user_turn_count == 10


def test_success_wins_at_the_cap(persona):
    judge = ScriptedBackend([verdict(persona, False)] * 9 + [verdict(persona, True)])
    session = run_session(ScriptedBackend([f"q{i}" for i in range(10)]), judge, EchoAdapter(), persona)
    assert session.total_turn_count == 20 and session.outcome == SUCCESS


def test_odd_cap_stops_after_user_turn(persona):
    session = run_session(
        ScriptedBackend([f"q{i}" for i in range(10)]),
        ScriptedBackend([verdict(persona, False)] * 10),
        EchoAdapter(),
        persona,
        SessionConfig(max_turns=5),
    )
    assert session.total_turn_count == 5 and session.turns[-1].speaker == "user"
    assert session.outcome == TURN_CAP


def test_adapter_failures_abort(persona):
    cfg = SessionConfig(error_cap=3)
    session = run_session(ScriptedBackend(["q"] * 5), ScriptedBackend([]), EchoAdapter(fail_times=4), persona, cfg)
    assert session.outcome == ABORTED


def test_adapter_failures_within_cap_recover(persona):
    judge = ScriptedBackend([verdict(persona, True)])
    session = run_session(ScriptedBackend(["q"]), judge, EchoAdapter(fail_times=3), persona, SessionConfig(error_cap=3))
    assert session.outcome == SUCCESS


def test_user_backend_exhausted_aborts(persona):
    session = run_session(ScriptedBackend([]), ScriptedBackend([]), EchoAdapter(), persona)
    assert session.outcome == ABORTED and session.turns == []


def test_judge_transport_errors_abort(persona):
    class Down:
        model_label = "down"

        def complete(self, req):
            raise TransportError("no route")

    session = run_session(ScriptedBackend(["q"] * 10), Down(), EchoAdapter(), persona, SessionConfig(error_cap=2))
    assert session.outcome == ABORTED


def test_unparseable_judge_continues(persona):
    judge = ScriptedBackend(["?", "??", verdict(persona, True)])
    session = run_session(ScriptedBackend(["q1", "q2"]), judge, EchoAdapter(), persona)
    assert session.outcome == SUCCESS
    assert session.goal_verdicts[0].unparseable


def test_judge_only_at_end(persona):
    cfg = SessionConfig(max_turns=6, judge_every_user_turn=False)
    judge = ScriptedBackend([verdict(persona, True)])
    session = run_session(ScriptedBackend(["a", "b", "c"]), judge, EchoAdapter(), persona, cfg)
    assert session.outcome == SUCCESS and len(judge.requests) == 1
    assert session.total_turn_count == 6


def test_buttons_flow_through_session(persona, catalog):
    adapter = StudyBotAdapter(StudyBot(catalog))
    user = ScriptedBackend(["Which bachelor programs do you offer?", "Architecture"])
    judge = ScriptedBackend([verdict(persona, False), verdict(persona, True)])
    session = run_session(user, judge, adapter, persona)
    offered, picked, answer = session.turns[1], session.turns[2], session.turns[3]
    assert len(offered.buttons) == 5
    assert picked.selected_button == "Architecture"
    assert "Architecture" in answer.utterance


def test_jsonl_round_trip(persona):
    judge = ScriptedBackend([verdict(persona, False), verdict(persona, True)])
    session = run_session(ScriptedBackend(["q1", "A"]), judge, EchoAdapter(buttons=["A", "B"]), persona,
                          session_id="s-1")
    lines = [json.loads(line) for line in session.to_jsonl().splitlines()]
    assert lines[0]["type"] == "session" and lines[0]["persona_id"] == persona.id
    assert lines[-1] == {"type": "outcome", "session_id": "s-1", "outcome": SUCCESS,
                         "user_turn_count": 2, "total_turn_count": 4}
    assert [entry["type"] for entry in lines[1:-1]] == ["turn", "turn", "verdict", "turn", "turn", "verdict"]
    (again,) = list(iter_sessions(session.to_jsonl().splitlines()))
    assert again.turns == session.turns
    assert again.goal_verdicts == session.goal_verdicts
    assert again.outcome == session.outcome


def test_session_invariants(persona):
    s = DialogueSession("s", persona.id)
    assert s.total_turn_count == 0 and s.final_verdict is None
