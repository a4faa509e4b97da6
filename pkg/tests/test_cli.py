import os
import signal
import stat
import subprocess
import sys

import pytest

from dossync import wire
from dossync.cli import agent as agent_cli
from dossync.cli import sim as sim_cli
from dossync.cli import synchd as synchd_cli
from dossync.model import Dossier, redact
from dossync.simnet import AgentOp, Scenario, encode_scenario, random_scenario


def run(*argv, env=None):
    return subprocess.run([sys.executable, "-m", *argv], capture_output=True, env=env, timeout=60)


@pytest.fixture
def synchd(tmp_path):
    proc = subprocess.Popen([sys.executable, "-m", "dossync.cli.synchd", "--listen", "127.0.0.1:0",
                             "--data", str(tmp_path / "sync")], stdout=subprocess.PIPE)
    line = proc.stdout.readline().decode()
    assert line.startswith("listening "), line
    endpoint = line.split()[1]
    yield endpoint, proc
    if proc.poll() is None:
        proc.send_signal(signal.SIGTERM)
        proc.wait(timeout=10)


def test_synchd_help(capsys):
    with pytest.raises(SystemExit) as exc:
        synchd_cli.main(["--help"])
    assert exc.value.code == 0 and "--data" in capsys.readouterr().out


def test_synchd_missing_data(capsys):
    assert synchd_cli.main([]) == 1
    assert "--data" in capsys.readouterr().err


def test_synchd_bad_flag_exits_1():
    with pytest.raises(SystemExit) as exc:
        synchd_cli.main(["--bogus"])
    assert exc.value.code == 1


def test_synchd_bind_failure(tmp_path, capsys):
    assert synchd_cli.main(["--listen", "256.0.0.1:1", "--data", str(tmp_path)]) == 1


def test_agent_offline_commands(tmp_path, capsys):
    from dossync.cli import write_identity
    from dossync.crypto import gen_identity
    ident = tmp_path / "id"
    write_identity(ident, gen_identity("alice"))
    assert stat.S_IMODE(os.stat(ident).st_mode) == 0o600
    base = ["--identity", str(ident), "--store", str(tmp_path / "st")]
    assert agent_cli.main(base + ["create", "d", "a=1", "b=2"]) == 0
    assert agent_cli.main(base + ["set", "d", "a", "9"]) == 0
    assert agent_cli.main(base + ["del-field", "d", "b"]) == 0
    capsys.readouterr()
    assert agent_cli.main(base + ["show", "d"]) == 0
    assert capsys.readouterr().out == "a=9\n"
    assert agent_cli.main(base + ["push", "--all"]) == 0  # no receivers, nothing to send
    assert agent_cli.main(base + ["pull"]) == 1  # no synchronizer configured


def test_agent_init_requires_sync(tmp_path, monkeypatch):
    monkeypatch.delenv("DC_SYNC", raising=False)
    assert agent_cli.main(["--identity", str(tmp_path / "i"), "--store", str(tmp_path / "s"),
                           "init", "alice"]) == 1


def test_two_user_shell_flow(tmp_path, synchd):
    endpoint, proc = synchd
    env = dict(os.environ, DC_SYNC=endpoint)

    def agent(who, *args):
        return run("dossync.cli.agent", "--identity", str(tmp_path / f"{who}.id"),
                   "--store", str(tmp_path / f"{who}.st"), *args, env=env)

    codes = []
    for who, args in [("alice", ["init", "alice"]), ("bob", ["init", "bob"]),
                      ("alice", ["create", "d1", "name=Ann", "ssn=123-45"]),
                      ("alice", ["grant", "d1", "bob", "name"]),
                      ("alice", ["push", "d1"]),
                      ("bob", ["pull"])]:
        r = agent(who, *args)
        codes.append(r.returncode)
        assert r.returncode == 0, (args, r.stderr)
    shown = agent("bob", "show", "d1")
    codes.append(shown.returncode)
    want = redact(Dossier("d1", "alice", 1, {"name": b"Ann", "ssn": b"123-45"}), {"name"})
    assert shown.stdout == b"".join(k.encode() + b"=" + v + b"\n" for k, v in sorted(want.fields.items()))

    r = agent("bob", "set", "d1", "name", "X")
    assert r.returncode == 1 and b"NotOwner" in r.stderr
    assert agent("alice", "revoke", "d1", "bob").returncode == 0
    r = agent("bob", "show", "d1")
    codes.append(r.returncode)
    assert r.returncode == 2 and b"Ann" not in r.stdout + r.stderr
    assert codes == [0, 0, 0, 0, 0, 0, 0, 2]

    proc.send_signal(signal.SIGTERM)
    assert proc.wait(timeout=10) == 0
    snap = (tmp_path / "sync" / "snapshot.dc").read_bytes()
    assert b"Ann" not in snap and wire.b64(b"Ann").encode() not in snap


def test_agent_sim_run(tmp_path, capsys):
    good = tmp_path / "good.sc"
    good.write_bytes(encode_scenario(random_scenario(5)))
    assert sim_cli.main(["run", str(good), "--check", "convergence,confidentiality"]) == 0
    undrained = tmp_path / "bad.sc"
    undrained.write_bytes(encode_scenario(Scenario(0, ("u1", "u2"), (
        AgentOp("u1", "create", {"dossier": "d", "fields": {"a": b"x" * 32}}),
        AgentOp("u1", "grant", {"dossier": "d", "receiver": "u2", "fields": ("a",)}),
    ))))
    assert sim_cli.main(["run", str(undrained), "--check", "convergence"]) == 1
    assert "QueuesNotDrained" in capsys.readouterr().out
    assert sim_cli.main(["run", str(tmp_path / "missing.sc")]) == 1


def test_agent_sim_gen(tmp_path):
    out = tmp_path / "s.sc"
    assert sim_cli.main(["gen", "9", str(out)]) == 0
    assert sim_cli.main(["run", str(out), "--check", "redaction"]) == 0
