"""Command-line entry points: ``synchd``, ``agent`` and ``agent-sim``."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .. import wire
from ..crypto import SUITE_ID, Identity
from ..errors import DossierError


class Parser(argparse.ArgumentParser):
    """argparse with exit status 1 on usage errors (argparse itself uses 2)."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def fail(message: str, code: int = 1) -> int:
    print(message, file=sys.stderr)
    return code


def write_identity(path: Path, ident: Identity, suite_id: str = SUITE_ID) -> None:
    data = wire.frame(wire.dumps({
        "enc_private": wire.b64(ident.enc_private), "sig_private": wire.b64(ident.sig_private),
        "suite_id": suite_id, "type": "identity", "user": ident.user,
    }))
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)


def read_identity(path: Path) -> Identity:
    data = Path(path).read_bytes()
    frames, end = wire.split_frames(data)
    if len(frames) != 1 or end != len(data):
        raise DossierError(f"{path}: not an identity file")
    obj = wire.loads(frames[0][1])
    if not isinstance(obj, dict) or obj.get("type") != "identity":
        raise DossierError(f"{path}: not an identity file")
    return Identity(obj["user"], wire.unb64(obj["enc_private"]), wire.unb64(obj["sig_private"]))
