"""Simulated conversations between a persona-driven user LLM and a dialogue system."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Protocol, Sequence

from .clock import WallClock
from .llm import USER_TEMPERATURE, JUDGE_TEMPERATURE, Backend, ChatRequest, Message
from .persona import MalformedJson, Persona, extract_json_object, snake_case

logger = logging.getLogger(__name__)

SUCCESS = "success"
TURN_CAP = "turn_cap_reached"
ABORTED = "aborted"
OUTCOMES = (SUCCESS, TURN_CAP, ABORTED)

OPENER = "StudyBot is waiting for your first message. Start the conversation."

STYLE_DIRECTIVES = {
    "formal": "Write in a formal, polite register: complete sentences, no slang.",
    "informal": "Write in a casual, informal register, the way you would text a friend.",
}


@dataclass(frozen=True)
class Turn:
    index: int
    speaker: str
    utterance: str
    buttons: tuple[str, ...] | None = None
    selected_button: str | None = None
    timestamp: str = ""

    def __post_init__(self):
        if self.speaker not in ("user", "system"):
            raise ValueError(f"unknown speaker {self.speaker!r}")
        if self.buttons is not None:
            object.__setattr__(self, "buttons", tuple(self.buttons))

    def to_dict(self) -> dict:
        out = {"index": self.index, "speaker": self.speaker, "utterance": self.utterance}
        if self.buttons is not None:
            out["buttons"] = list(self.buttons)
        if self.selected_button is not None:
            out["selected_button"] = self.selected_button
        out["timestamp"] = self.timestamp
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Turn":
        return cls(
            index=d["index"],
            speaker=d["speaker"],
            utterance=d["utterance"],
            buttons=d.get("buttons"),
            selected_button=d.get("selected_button"),
            timestamp=d.get("timestamp", ""),
        )


@dataclass(frozen=True)
class GoalVerdict:
    per_goal: dict[str, bool]
    judged_at_turn: int
    raw_judge_output: str = ""
    unparseable: bool = False

    @property
    def all_met(self) -> bool:
        return bool(self.per_goal) and all(self.per_goal.values())

    def to_dict(self) -> dict:
        return {
            "per_goal": dict(self.per_goal),
            "all_met": self.all_met,
            "judged_at_turn": self.judged_at_turn,
            "raw_judge_output": self.raw_judge_output,
            "unparseable": self.unparseable,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GoalVerdict":
        return cls(
            per_goal=dict(d["per_goal"]),
            judged_at_turn=d["judged_at_turn"],
            raw_judge_output=d.get("raw_judge_output", ""),
            unparseable=d.get("unparseable", False),
        )


@dataclass(frozen=True)
class SessionConfig:
    max_turns: int = 20
    judge_every_user_turn: bool = True
    error_cap: int = 3

    def __post_init__(self):
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")
        if self.error_cap < 0:
            raise ValueError("error_cap must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class DialogueSession:
    session_id: str
    persona_id: str
    turns: list[Turn] = field(default_factory=list)
    goal_verdicts: list[GoalVerdict] = field(default_factory=list)
    outcome: str | None = None
    config: dict = field(default_factory=dict)

    @property
    def user_turn_count(self) -> int:
        return sum(t.speaker == "user" for t in self.turns)

    @property
    def total_turn_count(self) -> int:
        return len(self.turns)

    @property
    def final_verdict(self) -> GoalVerdict | None:
        return self.goal_verdicts[-1] if self.goal_verdicts else None

    @property
    def goal_achieved(self) -> bool:
        return self.outcome == SUCCESS

    def to_jsonl(self) -> str:
        """Header line, then turns with verdict annotations after the turn they judge."""
        lines = [
            {
                "type": "session",
                "session_id": self.session_id,
                "persona_id": self.persona_id,
                "config": self.config,
            }
        ]
        verdicts = {}
        for v in self.goal_verdicts:
            verdicts.setdefault(v.judged_at_turn, []).append(v)
        for t in self.turns:
            lines.append({"type": "turn", "session_id": self.session_id, **t.to_dict()})
            for v in verdicts.pop(t.index, []):
                lines.append({"type": "verdict", "session_id": self.session_id, **v.to_dict()})
        for pending in verdicts.values():
            for v in pending:
                lines.append({"type": "verdict", "session_id": self.session_id, **v.to_dict()})
        lines.append(
            {
                "type": "outcome",
                "session_id": self.session_id,
                "outcome": self.outcome,
                "user_turn_count": self.user_turn_count,
                "total_turn_count": self.total_turn_count,
            }
        )
        return "".join(json.dumps(line, ensure_ascii=False) + "\n" for line in lines)


def iter_sessions(lines: Iterable[str]) -> Iterator[DialogueSession]:
    sessions: dict[str, DialogueSession] = {}
    for raw in lines:
        if not raw.strip():
            continue
        rec = json.loads(raw)
        kind = rec.pop("type")
        sid = rec.pop("session_id")
        if kind == "session":
            sessions[sid] = DialogueSession(sid, rec["persona_id"], config=rec.get("config", {}))
        elif kind == "turn":
            sessions[sid].turns.append(Turn.from_dict(rec))
        elif kind == "verdict":
            sessions[sid].goal_verdicts.append(GoalVerdict.from_dict(rec))
        elif kind == "outcome":
            session = sessions.pop(sid)
            session.outcome = rec["outcome"]
            yield session
        else:
            raise ValueError(f"unknown transcript record type {kind!r}")
    for session in sessions.values():
        yield session


def read_sessions(path) -> list[DialogueSession]:
    with open(path, encoding="utf-8") as fh:
        return list(iter_sessions(fh))


class SystemAdapter(Protocol):
    """The dialogue system under test."""

    def reply(self, session_id: str, user_turn: Turn, history: Sequence[Turn]) -> Turn: ...


def _system_text(turn: Turn) -> str:
    if not turn.buttons:
        return turn.utterance
    options = "\n".join(f"[{b}]" for b in turn.buttons)
    return f"{turn.utterance}\nOptions:\n{options}"


def user_system_prompt(p: Persona) -> str:
    persona_json = json.dumps(p.to_dict(), indent=2, ensure_ascii=False)
    style = STYLE_DIRECTIVES.get(p.communication_type, "")
    return (
        "You are role-playing the following prospective student in a chat with StudyBot, "
        "the study-program assistant of a technical university.\n"
        f"User profile:\n{persona_json}\n\n"
        "Stay in character. Pursue your user goals one at a time by asking StudyBot "
        "questions, and react to its answers the way this person would. "
        "Write only your next message, without any prefix or explanation. "
        f"{style} "
        f"Write in {p.language_preference or 'English'}."
    )


def _history_messages(history: Sequence[Turn]) -> list[Message]:
    # From the simulator's side the simulated user is the assistant.
    return [
        Message("assistant", t.utterance) if t.speaker == "user" else Message("user", _system_text(t))
        for t in history
    ]


def compose_user_prompt(
    p: Persona, history: Sequence[Turn], *, temperature: float = USER_TEMPERATURE
) -> ChatRequest:
    msgs = [Message("system", user_system_prompt(p)), *_history_messages(history)]
    if not history:
        msgs.append(Message("user", OPENER))
    return ChatRequest(tuple(msgs), temperature=temperature, max_tokens=300)


def compose_button_prompt(
    p: Persona, history: Sequence[Turn], buttons: Sequence[str], *, temperature: float = USER_TEMPERATURE
) -> ChatRequest:
    if not buttons:
        raise ValueError("compose_button_prompt needs at least one button")
    listing = "\n".join(f"{i}. {json.dumps(b, ensure_ascii=False)}" for i, b in enumerate(buttons, 1))
    instruction = (
        "StudyBot offers the following buttons:\n"
        f"{listing}\n"
        "Choose the option this user would pick. Reply with exactly one option text, "
        "copied verbatim without the number or quotes, and nothing else."
    )
    msgs = [Message("system", user_system_prompt(p)), *_history_messages(history), Message("user", instruction)]
    return ChatRequest(tuple(msgs), temperature=temperature, max_tokens=50)


def _match_button(reply: str, buttons: Sequence[str]) -> str | None:
    if reply in buttons:
        return reply
    cleaned = reply.strip().strip('"').strip("'")
    if cleaned in buttons:
        return cleaned
    loose = [b for b in buttons if b.strip() == cleaned]
    return loose[0] if len(loose) == 1 else None


def next_user_turn(
    backend: Backend,
    p: Persona,
    history: Sequence[Turn],
    pending_buttons: Sequence[str] | None = None,
    *,
    clock: Callable[[], str] | None = None,
) -> Turn:
    clock = clock or WallClock()
    if history and history[-1].speaker != "system":
        raise ValueError("a user turn must follow a system turn")
    index = len(history)
    if not pending_buttons:
        reply = backend.complete(compose_user_prompt(p, history)).content
        return Turn(index, "user", reply.strip(), timestamp=clock())

    req = compose_button_prompt(p, history, pending_buttons)
    reply = backend.complete(req).content
    choice = _match_button(reply, pending_buttons)
    if choice is None:
        corrective = (
            f"{reply!r} is not one of the options. Answer with exactly one of: "
            + ", ".join(json.dumps(b, ensure_ascii=False) for b in pending_buttons)
        )
        req = req.with_appended("assistant", reply).with_appended("user", corrective)
        reply = backend.complete(req).content
        choice = _match_button(reply, pending_buttons)
    if choice is None:
        choice = pending_buttons[0]
        logger.warning("button reply %r unusable, falling back to %r", reply, choice)
    return Turn(index, "user", choice, selected_button=choice, timestamp=clock())


class JudgeUnparseable(RuntimeError):
    def __init__(self, verdict: GoalVerdict):
        super().__init__("judge output could not be parsed")
        self.verdict = verdict


JUDGE_SYSTEM = (
    "You evaluate conversations between a prospective student and StudyBot, a "
    "study-program assistant. Decide for every goal of the student whether the "
    "conversation so far has fully satisfied it. "
    'Reply with one JSON object that maps each goal, spelled exactly as listed, to "yes" or "no". '
    "Output nothing else."
)


def compose_judge_prompt(p: Persona, history: Sequence[Turn]) -> ChatRequest:
    goals = "\n".join(f"- {g}" for g in p.user_goals)
    transcript = "\n".join(
        f"{'User' if t.speaker == 'user' else 'StudyBot'}: {_system_text(t) if t.speaker == 'system' else t.utterance}"
        for t in history
    )
    user = f"User goals:\n{goals}\n\nTranscript:\n{transcript}"
    return ChatRequest(
        (Message("system", JUDGE_SYSTEM), Message("user", user)),
        temperature=JUDGE_TEMPERATURE,
        max_tokens=200,
    )


_YES = {"yes", "true", "met", "y"}
_NO = {"no", "false", "not met", "n"}


def parse_judge_reply(reply: str, goals: Sequence[str]) -> dict[str, bool]:
    """Strict per-goal yes/no mapping; raises ``ValueError`` when anything is off."""
    try:
        obj = extract_json_object(reply)
    except MalformedJson as exc:
        raise ValueError(str(exc)) from exc
    normalized = {snake_case(k): v for k, v in obj.items()}
    out = {}
    for goal in goals:
        key = snake_case(goal)
        if key not in normalized:
            raise ValueError(f"judge reply lacks goal {goal!r}")
        value = normalized[key]
        if isinstance(value, bool):
            out[goal] = value
            continue
        text = str(value).strip().lower()
        if text in _YES:
            out[goal] = True
        elif text in _NO:
            out[goal] = False
        else:
            raise ValueError(f"goal {goal!r} has non yes/no value {value!r}")
    return out


def judge_goals(backend: Backend, p: Persona, history: Sequence[Turn]) -> GoalVerdict:
    if not history:
        raise ValueError("cannot judge an empty conversation")
    at_turn = history[-1].index
    goals = p.user_goals
    req = compose_judge_prompt(p, history)
    raw = backend.complete(req).content
    try:
        return GoalVerdict(parse_judge_reply(raw, goals), at_turn, raw)
    except ValueError as exc:
        first_error = exc
    req = req.with_appended("assistant", raw).with_appended(
        "user",
        f"That reply could not be used ({first_error}). Answer again with only a JSON object "
        "mapping each listed goal to \"yes\" or \"no\".",
    )
    raw = backend.complete(req).content
    try:
        return GoalVerdict(parse_judge_reply(raw, goals), at_turn, raw)
    except ValueError:
        raise JudgeUnparseable(
            GoalVerdict({g: False for g in goals}, at_turn, raw, unparseable=True)
        ) from None


def run_session(
    user_backend: Backend,
    judge_backend: Backend,
    system_adapter: SystemAdapter,
    p: Persona,
    cfg: SessionConfig = SessionConfig(),
    *,
    session_id: str | None = None,
    clock: Callable[[], str] | None = None,
) -> DialogueSession:
    """Alternate user and system turns until the goals are met or the cap is hit.

    Never raises for backend or adapter failures: more than ``cfg.error_cap``
    consecutive failures end the session with outcome ``aborted``.
    """
    clock = clock or WallClock()
    session = DialogueSession(session_id or f"session-{p.id}", p.id, config=cfg.to_dict())
    turns = session.turns
    failures = 0

    judge_failures = 0

    def failed(what: str, exc: Exception) -> bool:
        nonlocal failures
        failures += 1
        logger.warning("session %s: %s failed (%d in a row): %s", session.session_id, what, failures, exc)
        return failures > cfg.error_cap

    def judge() -> GoalVerdict | None:
        # the judge keeps its own streak; successful user/system turns in between do not reset it
        nonlocal judge_failures
        try:
            verdict = judge_goals(judge_backend, p, turns)
        except JudgeUnparseable as exc:
            verdict = exc.verdict
        except Exception as exc:
            judge_failures += 1
            logger.warning("session %s: judge failed (%d in a row): %s", session.session_id, judge_failures, exc)
            if judge_failures > cfg.error_cap:
                session.outcome = ABORTED
            return None
        judge_failures = 0
        session.goal_verdicts.append(verdict)
        return verdict

    while len(turns) < cfg.max_turns:
        pending = turns[-1].buttons if turns and turns[-1].buttons else None
        try:
            user_turn = next_user_turn(user_backend, p, turns, pending, clock=clock)
        except Exception as exc:
            if failed("user simulator", exc):
                session.outcome = ABORTED
                return session
            continue
        failures = 0
        turns.append(user_turn)
        if len(turns) >= cfg.max_turns:
            break

        while True:
            try:
                reply = system_adapter.reply(session.session_id, user_turn, tuple(turns))
                break
            except Exception as exc:
                if failed("system adapter", exc):
                    session.outcome = ABORTED
                    return session
        failures = 0
        turns.append(dataclasses.replace(reply, index=len(turns), speaker="system", selected_button=None, timestamp=clock()))

        if cfg.judge_every_user_turn:
            verdict = judge()
            if session.outcome == ABORTED:
                return session
            if verdict is not None and verdict.all_met:
                session.outcome = SUCCESS
                return session

    if not cfg.judge_every_user_turn and turns:
        verdict = judge()
        if session.outcome == ABORTED:
            return session
        if verdict is not None and verdict.all_met:
            session.outcome = SUCCESS
            return session
    session.outcome = TURN_CAP
    return session


class HTTPSystemAdapter:
    """Talks to a dialogue system served as ``POST {base_url}/respond``."""

    def __init__(self, base_url: str, timeout: float = 30.0, client=None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)

    def reply(self, session_id: str, user_turn: Turn, history: Sequence[Turn]) -> Turn:
        body = {"session_id": session_id}
        if user_turn.selected_button is not None:
            body["selected_button"] = user_turn.selected_button
        else:
            body["utterance"] = user_turn.utterance
        resp = self._client.post(f"{self.base_url}/respond", json=body)
        resp.raise_for_status()
        data = resp.json()
        return Turn(user_turn.index + 1, "system", data["utterance"], buttons=data.get("buttons") or None)
