"""``agent``: one trusted client agent, one command per invocation."""

from __future__ import annotations

import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..agent import PURGE, RETAIN, Agent, AgentConfig, PushResult
from ..crypto import gen_identity
from ..errors import AccessRevoked, DossierError
from ..session import OfflineSession, TcpSession
from ..synchronizer import parse_endpoint
from ..errors import WireError
from . import Parser, fail, read_identity, write_identity


def build_parser() -> Parser:
    p = Parser(prog="agent", description="Trusted dossier agent.")
    p.add_argument("--identity", required=True, help="identity file (private keys)")
    p.add_argument("--store", required=True, help="local store directory")
    p.add_argument("--sync", default=os.environ.get("DC_SYNC"),
                   help="synchronizer host:port (default: $DC_SYNC)")
    p.add_argument("--revoke-policy", choices=[RETAIN, PURGE], default=RETAIN)
    p.add_argument("--key-cache-ttl", type=int, default=0, metavar="SECONDS")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)
    sub.add_parser("init").add_argument("user")
    c = sub.add_parser("create")
    c.add_argument("dossier")
    c.add_argument("fields", nargs="*", metavar="name=value")
    s = sub.add_parser("set")
    s.add_argument("dossier")
    s.add_argument("field")
    s.add_argument("value")
    d = sub.add_parser("del-field")
    d.add_argument("dossier")
    d.add_argument("field")
    g = sub.add_parser("grant")
    g.add_argument("dossier")
    g.add_argument("receiver")
    g.add_argument("fields", help="comma-separated field names")
    r = sub.add_parser("revoke")
    r.add_argument("dossier")
    r.add_argument("receiver")
    pu = sub.add_parser("push")
    which = pu.add_mutually_exclusive_group(required=True)
    which.add_argument("dossier", nargs="?")
    which.add_argument("--all", action="store_true")
    sub.add_parser("pull")
    sub.add_parser("show").add_argument("dossier")
    sub.add_parser("list")
    return p


def _session(endpoint: Optional[str]):
    if not endpoint:
        return OfflineSession()
    host, port = parse_endpoint(endpoint)
    return TcpSession(host, port)


def _report_push(res: PushResult) -> int:
    for rec in res.sent:
        print(f"sent {rec.dossier} -> {rec.receiver} v{rec.version}")
    for receiver, code in sorted(res.failed.items()):
        print(f"failed -> {receiver}: {code}", file=sys.stderr)
    return 1 if res.failed else 0


def _init(args, session) -> int:
    ident_path = Path(args.identity)
    if ident_path.exists():
        return fail(f"agent: {ident_path} already exists")
    if isinstance(session, OfflineSession):
        return fail("agent: init needs --sync (or DC_SYNC) to register")
    ident = gen_identity(args.user)
    agent = Agent.open(ident, args.store, session)
    try:
        agent.register()
        write_identity(ident_path, ident)
    finally:
        agent.close()
    print(f"registered {ident.user}")
    return 0


def _run(agent: Agent, args) -> int:
    cmd = args.command
    if cmd == "create":
        fields = {}
        for item in args.fields:
            name, sep, value = item.partition("=")
            if not sep:
                return fail(f"agent: expected name=value, got {item!r}")
            fields[name] = value.encode()
        d = agent.create_dossier(args.dossier, fields)
        print(f"created {d.id} v{d.version}")
    elif cmd == "set":
        d = agent.edit_field(args.dossier, args.field, args.value.encode())
        print(f"{d.id} v{d.version}")
    elif cmd == "del-field":
        d = agent.edit_field(args.dossier, args.field, None)
        print(f"{d.id} v{d.version}")
    elif cmd == "grant":
        names = [n for n in args.fields.split(",") if n]
        return _report_push(agent.grant(args.dossier, args.receiver, names))
    elif cmd == "revoke":
        agent.revoke(args.dossier, args.receiver)
        print(f"revoked {args.dossier} from {args.receiver}")
    elif cmd == "push":
        return _report_push(agent.push_all() if args.all else agent.push(args.dossier))
    elif cmd == "pull":
        res = agent.pull()
        print(f"applied {len(res.applied)} stale {len(res.stale)} quarantined {len(res.quarantined)}")
    elif cmd == "show":
        view = agent.use_dossier(args.dossier)
        out = sys.stdout.buffer
        for name in sorted(view.fields):
            out.write(name.encode() + b"=" + view.fields[name] + b"\n")
        out.flush()
    elif cmd == "list":
        st = agent.state
        for d in sorted(st.owned):
            print(f"owned {d} v{st.owned[d].version} receivers={','.join(st.acl.receivers(d))}")
        for d in sorted(st.foreign):
            rec = st.foreign[d]
            print(f"foreign {d} v{rec.version} owner={rec.owner}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = AgentConfig(args.revoke_policy, args.key_cache_ttl)
        session = _session(args.sync)
    except ValueError as exc:
        return fail(f"agent: {exc}")
    try:
        if args.command == "init":
            return _init(args, session)
        try:
            ident = read_identity(Path(args.identity))
        except (OSError, KeyError, TypeError, ValueError, WireError) as exc:
            return fail(f"agent: cannot read identity {args.identity}: {exc}")
        agent = Agent.open(ident, args.store, session, config=config)
        try:
            return _run(agent, args)
        finally:
            agent.close()
    except AccessRevoked as exc:
        return fail(f"agent: AccessRevoked: {exc}", 2)
    except DossierError as exc:
        return fail(f"agent: {exc.code}: {exc}")
    except OSError as exc:
        return fail(f"agent: {exc}")
    finally:
        if isinstance(session, TcpSession):
            session.close()


if __name__ == "__main__":
    sys.exit(main())
