"""``synchd``: run the synchronizer service over TCP."""

from __future__ import annotations

import logging
import signal
import sys
import threading
from typing import Optional, Sequence

from ..crypto import SUITE_ID
from ..errors import DossierError
from ..synchronizer import SyncServer, Synchronizer, parse_endpoint
from . import Parser, fail

log = logging.getLogger("synchd")


def build_parser() -> Parser:
    p = Parser(prog="synchd", description="Untrusted dossier synchronizer.")
    p.add_argument("--listen", default="127.0.0.1:7420", help="host:port to bind (port 0 picks one)")
    p.add_argument("--data", help="state directory (required)")
    p.add_argument("--suite", default=SUITE_ID, help="crypto suite id")
    p.add_argument("--log-level", default="WARNING")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if not args.data:
        return fail("synchd: --data is required")
    if args.suite != SUITE_ID:
        return fail(f"synchd: unsupported suite {args.suite!r}")
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        addr = parse_endpoint(args.listen)
    except ValueError as exc:
        return fail(f"synchd: --listen: {exc}")
    try:
        sync = Synchronizer.open(args.data, args.suite)
    except (DossierError, OSError) as exc:
        return fail(f"synchd: cannot recover {args.data}: {exc}")
    try:
        server = SyncServer(addr, sync, args.suite)
    except OSError as exc:
        sync.close(save=False)
        return fail(f"synchd: cannot bind {args.listen}: {exc}")

    def stop(signum, frame):
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, stop)
    signal.signal(signal.SIGINT, stop)
    host, port = server.address
    print(f"listening {host}:{port}", flush=True)
    try:
        server.serve_forever()
    finally:
        server.server_close()
        sync.close(save=True)
        log.info("state saved")
    return 0


if __name__ == "__main__":
    sys.exit(main())
