"""``usersim`` command line: generate, simulate, analyze, serve."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .analytics import OrphanSession, write_report
from .clock import make_clock
from .config import CampaignConfig, ConfigError, load_config, make_backend
from .dialogue import ABORTED, OUTCOMES, DialogueSession, read_sessions, run_session
from .generator import BatchAborted, generate_batch
from .llm import load_script
from .persona import PersonaError, PersonaTemplate, dumps_personas, read_personas, template_default
from .studybot import StudyBot, StudyBotAdapter, load_catalog, load_desk_catalog
from .studybot.catalog import CatalogError
from .validation import EmptyInput

logger = logging.getLogger("usersim")

EXIT_OK, EXIT_CAMPAIGN, EXIT_CONFIG = 0, 1, 2
SESSION_NAMESPACE = uuid.UUID("6f1c1f0e-3a55-4a64-9c59-4d1a3a0f4b21")


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _template(cfg: CampaignConfig) -> PersonaTemplate:
    return PersonaTemplate.load(cfg.template_path) if cfg.template_path else template_default()


def cmd_generate(cfg: CampaignConfig, out_dir=None) -> int:
    out = Path(out_dir or cfg.output_dir)
    template = _template(cfg)
    backend = make_backend(cfg.backend("generator"), cfg.retry)
    clock = make_clock(cfg.clock)
    code = EXIT_OK
    try:
        personas, stats = generate_batch(backend, cfg.generation, template, clock=clock)
    except BatchAborted as exc:
        logger.error("generation aborted: %s", exc.failure)
        personas, stats = exc.completed, exc.stats
        code = EXIT_CAMPAIGN
    atomic_write(out / "personas.jsonl", dumps_personas(personas))
    atomic_write(out / "statistics.json", json.dumps(stats.to_dict(), indent=2, ensure_ascii=False) + "\n")
    print(f"generated {len(personas)}/{cfg.generation.batch_size} personas -> {out / 'personas.jsonl'}")
    return code


def _session_scripts(settings, role):
    """Per-persona scripts when the script file is keyed ``by_persona``."""
    if settings.kind != "scripted":
        return None
    script = load_script(settings.script_path)
    if isinstance(script, dict) and "by_persona" in script:
        return script["by_persona"]
    return None


def cmd_simulate(cfg: CampaignConfig, personas_path, out_dir=None) -> int:
    out = Path(out_dir or cfg.output_dir)
    personas = read_personas(personas_path, _template(cfg), strict=False)
    if not personas:
        print(f"no usable personas in {personas_path}", file=sys.stderr)
        return EXIT_CAMPAIGN
    catalog = load_catalog(cfg.catalog_path) if cfg.catalog_path else load_desk_catalog()

    roles = {}
    for role in ("user", "judge"):
        settings = cfg.backend(role)
        keyed = _session_scripts(settings, role)
        shared = None if keyed is not None else make_backend(settings, cfg.retry)
        roles[role] = (settings, keyed, shared)
    if cfg.parallel_sessions > 1 and any(shared is not None and s.kind == "scripted" for s, _, shared in roles.values()):
        logger.warning("shared scripted backends with parallel sessions give non-deterministic transcripts")

    responder = None
    mode = "template"
    if "responder" in cfg.backends:
        responder = make_backend(cfg.backend("responder"), cfg.retry)
        mode = "llm"
    adapter = StudyBotAdapter(StudyBot(catalog, mode=mode, backend=responder))

    def backend_for(role, persona_id):
        settings, keyed, shared = roles[role]
        if keyed is None:
            return shared
        return make_backend(settings, cfg.retry, script=keyed.get(persona_id, []))

    def simulate(item) -> DialogueSession:
        i, p = item
        sid = str(uuid.uuid5(SESSION_NAMESPACE, f"{cfg.seed}:{i}:{p.id}"))
        try:
            return run_session(
                backend_for("user", p.id),
                backend_for("judge", p.id),
                adapter,
                p,
                cfg.session,
                session_id=sid,
                clock=make_clock(cfg.clock, offset=i),
            )
        except Exception as exc:  # a broken session must not end the campaign
            logger.error("session for %s failed: %s", p.id, exc)
            return DialogueSession(sid, p.id, outcome=ABORTED, config=cfg.session.to_dict())

    out.mkdir(parents=True, exist_ok=True)
    final = out / "sessions.jsonl"
    partial = out / "sessions.jsonl.partial"
    tally = dict.fromkeys(OUTCOMES, 0)
    lock = threading.Lock()
    with open(partial, "w", encoding="utf-8") as sink:
        with ThreadPoolExecutor(max_workers=cfg.parallel_sessions) as pool:
            for session in pool.map(simulate, enumerate(personas)):
                block = session.to_jsonl()
                with lock:
                    sink.write(block)
                    sink.flush()
                    tally[session.outcome] += 1
        os.fsync(sink.fileno())
    os.replace(partial, final)
    summary = ", ".join(f"{k}={v}" for k, v in tally.items())
    print(f"simulated {len(personas)} sessions ({summary}) -> {final}")
    return EXIT_OK


def cmd_analyze(personas_path, sessions_path, out_dir) -> int:
    personas = read_personas(personas_path, strict=False)
    if not personas:
        print(f"EmptyInput: no personas in {personas_path}", file=sys.stderr)
        return EXIT_CAMPAIGN
    sessions = read_sessions(sessions_path) if sessions_path else []
    if not sessions:
        print("no sessions given; session metrics skipped", file=sys.stderr)
    try:
        summary = write_report(personas, sessions, out_dir)
    except EmptyInput as exc:
        print(f"EmptyInput: {exc}", file=sys.stderr)
        return EXIT_CAMPAIGN
    except OrphanSession as exc:
        print(f"OrphanSession: {exc.args[0]}", file=sys.stderr)
        return EXIT_CAMPAIGN
    line = f"analyzed {summary['n_personas']} personas"
    if summary.get("session_metrics"):
        line += f", {summary['session_metrics']['n_sessions']} sessions, success_rate={summary['success_rate']:.2f}%"
    print(line + f" -> {out_dir}")
    return EXIT_OK


def cmd_serve(catalog_path, host, port) -> int:
    from .studybot.server import serve

    catalog = load_catalog(catalog_path) if catalog_path else load_desk_catalog()
    server = serve(StudyBotAdapter(StudyBot(catalog)), host, port)
    print(f"StudyBot listening on http://{host}:{server.server_address[1]}/respond")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="usersim", description="LLM user simulation for task-oriented dialogue systems")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a persona batch")
    g.add_argument("--config", required=True)
    g.add_argument("--out")
    g.add_argument("--batch-size", type=int)
    g.add_argument("--seed", type=int)

    s = sub.add_parser("simulate", help="simulate one session per persona")
    s.add_argument("--config", required=True)
    s.add_argument("--personas", required=True)
    s.add_argument("--out")
    s.add_argument("--parallel-sessions", type=int)
    s.add_argument("--max-turns", type=int)
    s.add_argument("--seed", type=int)

    a = sub.add_parser("analyze", help="write the analytics report bundle")
    a.add_argument("--personas", required=True)
    a.add_argument("--sessions")
    a.add_argument("--out", required=True)

    v = sub.add_parser("serve", help="serve the reference bot over HTTP")
    v.add_argument("--catalog")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8000)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "analyze":
            return cmd_analyze(args.personas, args.sessions, args.out)
        if args.command == "serve":
            return cmd_serve(args.catalog, args.host, args.port)
        cfg = load_config(args.config)
        if args.command == "generate":
            cfg = cfg.with_overrides(batch_size=args.batch_size, seed=args.seed)
            return cmd_generate(cfg, args.out)
        cfg = cfg.with_overrides(
            parallel_sessions=args.parallel_sessions, max_turns=args.max_turns, seed=args.seed
        )
        return cmd_simulate(cfg, args.personas, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CatalogError, PersonaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAMPAIGN


if __name__ == "__main__":
    sys.exit(main())
