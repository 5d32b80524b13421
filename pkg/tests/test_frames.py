"""Wire format: length-prefixed canonical JSON frames."""

import socket
import struct
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from datax.errors import FrameError
from datax.frames import (
    MAX_FRAME_BYTES,
    FrameConnection,
    decode_body,
    encode_doc,
    encode_frame,
)


def test_encoding_is_canonical():
    assert encode_doc({"b": 1, "a": 2}) == b'{"a":2,"b":1}'


def test_frame_layout():
    frame = encode_frame({"type": "ack", "payload": {}})
    (length,) = struct.unpack(">I", frame[:4])
    assert length == len(frame) - 4
    assert decode_body(frame[4:]) == {"type": "ack", "payload": {}}


def test_decode_rejects_garbage():
    with pytest.raises(FrameError):
        decode_body(b"{nope")
    with pytest.raises(FrameError):
        decode_body(b'["not", "a", "map"]')
    with pytest.raises(FrameError):
        decode_body(b'{"payload": {}}')  # no type tag
    with pytest.raises(FrameError):
        decode_body(b'{"type": 7}')


def test_oversized_frame_refused():
    with pytest.raises(FrameError):
        encode_frame({"type": "emit", "payload": {"x": "a" * MAX_FRAME_BYTES}})


@given(
    st.dictionaries(
        st.text(max_size=8),
        st.recursive(
            st.one_of(
                st.none(), st.booleans(), st.integers(),
                st.floats(allow_nan=False, allow_infinity=False),
                st.text(max_size=8),
            ),
            lambda inner: st.one_of(
                st.lists(inner, max_size=4),
                st.dictionaries(st.text(max_size=4), inner, max_size=4),
            ),
            max_leaves=10,
        ),
        max_size=6,
    )
)
def test_round_trip_any_document(payload):
    doc = {"type": "message", "stream": "s", "payload": payload}
    assert decode_body(encode_frame(doc)[4:]) == doc


def _pair():
    a, b = socket.socketpair()
    return FrameConnection(a), FrameConnection(b)


def test_connection_send_recv():
    left, right = _pair()
    left.send({"type": "config", "payload": {"fps": 15}})
    left.send({"type": "message", "stream": "camA", "payload": {"i": 0}})
    assert right.recv(timeout=1.0)["type"] == "config"
    frame = right.recv(timeout=1.0)
    assert frame["stream"] == "camA"
    left.close()
    right.close()


def test_recv_handles_byte_trickle():
    raw_a, raw_b = socket.socketpair()
    conn = FrameConnection(raw_b)
    frame = encode_frame({"type": "ack", "payload": {"seq": 4}})

    def trickle():
        for i in range(len(frame)):
            raw_a.sendall(frame[i:i + 1])

    t = threading.Thread(target=trickle)
    t.start()
    assert conn.recv(timeout=5.0)["payload"] == {"seq": 4}
    t.join()
    raw_a.close()
    raw_b.close()


def test_recv_timeout():
    left, right = _pair()
    with pytest.raises(socket.timeout):
        right.recv(timeout=0.05)
    left.close()
    right.close()


def test_recv_eof():
    left, right = _pair()
    left.close()
    with pytest.raises(EOFError):
        right.recv(timeout=1.0)
    right.close()


def test_recv_rejects_absurd_length():
    raw_a, raw_b = socket.socketpair()
    conn = FrameConnection(raw_b)
    raw_a.sendall(struct.pack(">I", MAX_FRAME_BYTES + 1))
    with pytest.raises(FrameError):
        conn.recv(timeout=1.0)
    raw_a.close()
    raw_b.close()
