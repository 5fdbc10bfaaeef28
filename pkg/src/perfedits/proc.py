"""Run a single program invocation under wall, memory and output limits."""

from __future__ import annotations

import ctypes
import ctypes.util
import functools
import logging
import os
import resource
import signal
import subprocess
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .core import Limits

logger = logging.getLogger(__name__)

_CLONE_NEWUSER = 0x10000000
_CLONE_NEWNET = 0x40000000


@dataclass(frozen=True)
class ProcResult:
    returncode: int | None
    stdout: bytes
    stderr: bytes
    elapsed_s: float
    timed_out: bool = False
    output_overflow: bool = False

    @property
    def ok(self) -> bool:
        return self.returncode == 0 and not self.timed_out and not self.output_overflow


def _unshare_network() -> None:
    """Move the calling process into fresh user and network namespaces.

    The new network namespace has only a loopback device, which starts down,
    so the program cannot reach any host. Raises OSError when the kernel
    refuses (unprivileged user namespaces disabled).
    """
    flags = _CLONE_NEWUSER | _CLONE_NEWNET
    if hasattr(os, "unshare"):
        os.unshare(flags)
        return
    libc = ctypes.CDLL(ctypes.util.find_library("c"), use_errno=True)
    if libc.unshare(flags) != 0:
        err = ctypes.get_errno()
        raise OSError(err, os.strerror(err))


@functools.lru_cache(maxsize=None)
def network_isolation_available() -> bool:
    """Probe once whether child processes can be given a private network namespace."""
    try:
        subprocess.run(["true"], preexec_fn=_unshare_network, check=True, capture_output=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        logger.warning("network namespaces unavailable; programs run with the host network")
        return False
    return True


def _preexec(limits: Limits, isolate: bool):
    def apply() -> None:
        os.setsid()
        if isolate:
            _unshare_network()
        if limits.memory_bytes is not None:
            resource.setrlimit(resource.RLIMIT_AS, (limits.memory_bytes, limits.memory_bytes))
        # Writes past the cap raise SIGXFSZ in the child.
        cap = limits.stdout_cap_bytes + 1
        resource.setrlimit(resource.RLIMIT_FSIZE, (cap, cap))

    return apply


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()


def run_process(
    argv: Sequence[str | os.PathLike],
    stdin: bytes,
    limits: Limits,
    cwd: str | os.PathLike | None = None,
) -> ProcResult:
    """Execute ``argv`` feeding ``stdin``; stdout/stderr go through temp files.

    The child runs in its own session so a timeout kills the whole process
    group, not only the direct child. With ``limits.isolate_network`` set it
    also gets a private network namespace when the kernel allows one.
    """
    isolate = limits.isolate_network and network_isolation_available()
    with tempfile.TemporaryDirectory(prefix="perfedits-run-") as tmp:
        tmp_path = Path(tmp)
        in_path = tmp_path / "stdin"
        in_path.write_bytes(stdin)
        out_path = tmp_path / "stdout"
        err_path = tmp_path / "stderr"
        timed_out = False
        start = time.perf_counter()
        with open(in_path, "rb") as fin, open(out_path, "wb") as fout, open(err_path, "wb") as ferr:
            proc = subprocess.Popen(
                [str(a) for a in argv],
                stdin=fin,
                stdout=fout,
                stderr=ferr,
                cwd=cwd if cwd is not None else tmp,
                preexec_fn=_preexec(limits, isolate),
            )
            try:
                proc.wait(timeout=limits.wall_timeout_s)
            except subprocess.TimeoutExpired:
                timed_out = True
                _kill_group(proc)
                proc.wait()
        elapsed = time.perf_counter() - start
        out_size = out_path.stat().st_size
        overflow = out_size > limits.stdout_cap_bytes or proc.returncode == -signal.SIGXFSZ
        stdout = b"" if overflow else out_path.read_bytes()
        with open(err_path, "rb") as f:
            stderr = f.read(64 * 1024)
    return ProcResult(
        returncode=None if timed_out else proc.returncode,
        stdout=stdout,
        stderr=stderr,
        elapsed_s=elapsed,
        timed_out=timed_out,
        output_overflow=overflow,
    )
