"""A small task-oriented dialogue system over a study-program catalog."""

from .bot import (
    BotState,
    NoMatch,
    QueryError,
    QueryResult,
    StudyBot,
    StudyBotAdapter,
    UnknownProgram,
    execute_query,
    render_response,
    respond,
)
from .catalog import (
    ATTRIBUTE_NAMES,
    EmptyCatalog,
    MalformedRecord,
    ProgramCatalog,
    ProgramRecord,
    load_catalog,
    load_desk_catalog,
)
from .nlu import DialogueAct, IntentRecognizer, recognize

__all__ = [
    "ATTRIBUTE_NAMES",
    "BotState",
    "DialogueAct",
    "EmptyCatalog",
    "IntentRecognizer",
    "MalformedRecord",
    "NoMatch",
    "ProgramCatalog",
    "ProgramRecord",
    "QueryError",
    "QueryResult",
    "StudyBot",
    "StudyBotAdapter",
    "UnknownProgram",
    "execute_query",
    "load_catalog",
    "load_desk_catalog",
    "recognize",
    "render_response",
    "respond",
]
