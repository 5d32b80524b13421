"""Connects, reads config, then sends length-prefixed garbage bodies."""

import os
import socket
import struct
import time

if __name__ == "__main__":
    host, port = os.environ["DATAX_SOCKET"].rsplit(":", 1)
    sock = socket.create_connection((host, int(port)))
    # Drain the config frame first.
    header = b""
    while len(header) < 4:
        header += sock.recv(4 - len(header))
    (length,) = struct.unpack(">I", header)
    got = 0
    while got < length:
        got += len(sock.recv(length - got))
    for _ in range(4):
        body = b"{this is not json"
        sock.sendall(struct.pack(">I", len(body)) + body)
        time.sleep(0.05)
    time.sleep(3600)
