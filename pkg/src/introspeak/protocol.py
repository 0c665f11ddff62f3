"""Wire protocol for plugging an external captioner in as the model.

Line-delimited JSON over a pair of byte streams (stdio of a subprocess, or
a TCP socket).  One request in flight per session; concurrent decoders
should each open their own session.

    -> {"v": 1, "op": "hello", "vocab_hash": "<sha256>"}
    <- {"v": 1, "op": "hello", "vocab_hash": "<sha256>", "dist_size": K}
    -> {"v": 1, "op": "logprobs", "context": "<key>", "prefix": [ids]}
    <- {"v": 1, "logprobs": [K natural-log values]}
    -> {"v": 1, "op": "bye"}

Errors come back as {"v": 1, "error": "<message>"}.  Responses are
validated at this boundary: exactly ``dist_size`` entries, all finite,
exponentials summing to 1.
"""

from __future__ import annotations

import json
import socket
from typing import BinaryIO, Sequence

import numpy as np

from .corpus import Vocabulary
from .lm import ConditionalLM, UnknownContextError

PROTOCOL_VERSION = 1

# External models get a looser normalization tolerance than in-process
# distributions; JSON round-trips floats exactly, so this is headroom for
# foreign implementations, not for ours.
_NORM_TOL = 1e-6


class ProtocolError(RuntimeError):
    pass


def _send(stream: BinaryIO, obj: dict) -> None:
    stream.write(json.dumps(obj, sort_keys=True).encode("utf-8") + b"\n")
    stream.flush()


def _recv(stream: BinaryIO) -> dict | None:
    line = stream.readline()
    if not line:
        return None
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"undecodable message: {exc}") from None
    if not isinstance(msg, dict):
        raise ProtocolError("message is not a JSON object")
    return msg


def serve(lm: ConditionalLM, rfile: BinaryIO, wfile: BinaryIO) -> None:
    """Answer protocol requests from ``rfile`` until EOF or a bye message."""
    k = lm.vocab.dist_size
    vocab_hash = lm.vocab.sha256()
    while True:
        try:
            msg = _recv(rfile)
        except ProtocolError as exc:
            _send(wfile, {"v": PROTOCOL_VERSION, "error": str(exc)})
            continue
        if msg is None:
            return
        if msg.get("v") != PROTOCOL_VERSION:
            _send(wfile, {"v": PROTOCOL_VERSION, "error": f"unsupported protocol version {msg.get('v')!r}"})
            continue
        op = msg.get("op", "logprobs")
        if op == "hello":
            _send(
                wfile,
                {
                    "v": PROTOCOL_VERSION,
                    "op": "hello",
                    "vocab_hash": vocab_hash,
                    "dist_size": k,
                },
            )
        elif op == "bye":
            _send(wfile, {"v": PROTOCOL_VERSION, "op": "bye"})
            return
        elif op == "logprobs":
            try:
                context = msg["context"]
                prefix = [int(t) for t in msg["prefix"]]
                vec = lm.next_token_logprobs(context, prefix)
                _send(wfile, {"v": PROTOCOL_VERSION, "logprobs": [float(x) for x in vec]})
            except UnknownContextError as exc:
                _send(wfile, {"v": PROTOCOL_VERSION, "error": str(exc)})
            except (KeyError, TypeError, ValueError) as exc:
                _send(wfile, {"v": PROTOCOL_VERSION, "error": f"bad request: {exc}"})
        else:
            _send(wfile, {"v": PROTOCOL_VERSION, "error": f"unknown op {op!r}"})


def serve_tcp(lm: ConditionalLM, host: str = "127.0.0.1", port: int = 0) -> None:
    """Serve one connection at a time over TCP.  Blocks forever."""
    with socket.create_server((host, port)) as server:
        print(f"serving on {server.getsockname()[0]}:{server.getsockname()[1]}", flush=True)
        while True:
            conn, _addr = server.accept()
            with conn:
                rfile = conn.makefile("rb")
                wfile = conn.makefile("wb")
                try:
                    serve(lm, rfile, wfile)
                except (BrokenPipeError, ConnectionResetError):
                    pass


class ExternalLM:
    """Client side: looks like a ConditionalLM, answers come over the wire.

    The constructor performs the handshake and refuses a peer whose
    vocabulary hash disagrees with the local vocabulary.
    """

    def __init__(self, vocab: Vocabulary, rfile: BinaryIO, wfile: BinaryIO):
        self.vocab = vocab
        self._rfile = rfile
        self._wfile = wfile
        _send(wfile, {"v": PROTOCOL_VERSION, "op": "hello", "vocab_hash": vocab.sha256()})
        reply = self._reply()
        if reply.get("op") != "hello":
            raise ProtocolError(f"expected hello reply, got {reply!r}")
        if reply.get("vocab_hash") != vocab.sha256():
            raise ProtocolError("peer vocabulary hash does not match the local vocabulary")
        if reply.get("dist_size") != vocab.dist_size:
            raise ProtocolError(
                f"peer distribution size {reply.get('dist_size')!r} != local {vocab.dist_size}"
            )

    @classmethod
    def connect_tcp(cls, vocab: Vocabulary, host: str, port: int) -> "ExternalLM":
        sock = socket.create_connection((host, port))
        client = cls(vocab, sock.makefile("rb"), sock.makefile("wb"))
        client._sock = sock  # keep the socket alive alongside its files
        return client

    def _reply(self) -> dict:
        msg = _recv(self._rfile)
        if msg is None:
            raise ProtocolError("peer closed the connection")
        if msg.get("v") != PROTOCOL_VERSION:
            raise ProtocolError(f"peer speaks protocol version {msg.get('v')!r}")
        if "error" in msg:
            raise ProtocolError(f"peer error: {msg['error']}")
        return msg

    def next_token_logprobs(self, context: str, prefix: Sequence[int]) -> np.ndarray:
        _send(
            self._wfile,
            {
                "v": PROTOCOL_VERSION,
                "op": "logprobs",
                "context": context,
                "prefix": [int(t) for t in prefix],
            },
        )
        reply = self._reply()
        values = reply.get("logprobs")
        if not isinstance(values, list) or len(values) != self.vocab.dist_size:
            n = len(values) if isinstance(values, list) else "no"
            raise ProtocolError(
                f"expected exactly {self.vocab.dist_size} log-probabilities, got {n}"
            )
        vec = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(vec)):
            raise ProtocolError("peer returned non-finite log-probabilities")
        total = float(np.exp(vec).sum())
        if abs(total - 1.0) > _NORM_TOL:
            raise ProtocolError(f"peer distribution sums to {total!r}, not 1")
        vec.setflags(write=False)
        return vec

    def close(self) -> None:
        try:
            _send(self._wfile, {"v": PROTOCOL_VERSION, "op": "bye"})
            _recv(self._rfile)
        except (ProtocolError, OSError):
            pass
        for stream in (self._rfile, self._wfile):
            try:
                stream.close()
            except OSError:
                pass
        sock = getattr(self, "_sock", None)
        if sock is not None:
            sock.close()

    def __enter__(self) -> "ExternalLM":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
