"""Parallel execution of the per-tile pipeline (filter, then segment).

Three interchangeable run modes produce byte-identical label output:

* ``run_sequential``: single process, the reference everything else is
  checked against.
* ``run_local``: a pool of child processes on one machine, one pipe per
  child so a crash is attributable to the exact chunk the child held.
* ``run_master`` / ``run_worker``: a TCP master that hands out chunks of
  tiles to pull-based workers and reassembles their results.

Tiles travel inline over the wire; workers never touch a shared
filesystem. Every frame on the socket is a 4-byte big-endian length,
one tag byte, then the body. The length counts the tag byte plus the
body. Bodies are a 4-byte big-endian JSON-header length, the UTF-8
JSON header, then raw blobs whose byte sizes the header lists under
``blob_sizes``.
"""

from __future__ import annotations

import json
import multiprocessing
import os
import queue
import re
import socket
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .cloudfilter import FilterConfig, apply_filter
from .raster import SceneRaster, Tile
from .segmentation import SegmentationScheme, get_preset, segment
from .tiling import PhaseTiming, read_image

HELLO = 1
TASK = 2
RESULT = 3
HEARTBEAT = 4
SHUTDOWN = 5
ERROR = 6
_TAG_NAMES = {HELLO: "HELLO", TASK: "TASK", RESULT: "RESULT",
              HEARTBEAT: "HEARTBEAT", SHUTDOWN: "SHUTDOWN", ERROR: "ERROR"}

HEARTBEAT_S = 2.0
IN_FLIGHT_PER_WORKER = 2
# A task whose worker keeps dying is requeued at most this many times
# before its tiles are recorded as failed.
REQUEUE_LIMIT = 3
# Upper bound on a single frame; anything larger is treated as garbage
# rather than an allocation request.
MAX_FRAME = 64 * 1024 * 1024

MODES = ("sequential", "local", "master", "worker")

_TILE_NAME = re.compile(r"_r(\d+)_c(\d+)$")


class EngineError(RuntimeError):
    pass


class ProtocolError(EngineError):
    pass


# --------------------------------------------------------------------------
# job description and per-tile work


@dataclass(frozen=True)
class JobSpec:
    """Everything a run needs: the tiles, the configs, and the mode.

    At most one of ``tiles`` (in-memory) and ``tile_paths`` (PNG files,
    decoded during the load phase) supplies the input. Paths named like
    ``scene_r001_c002.png`` keep their grid position; anything else is
    assigned row = input index, col = 0.
    """

    tiles: tuple = ()
    tile_paths: tuple = ()
    filter_config: FilterConfig = field(default_factory=FilterConfig)
    scheme: SegmentationScheme = field(default_factory=lambda: get_preset("ross-sea-summer"))
    mode: str = "sequential"
    workers: int = 1
    chunk_size: int = 8
    bind: str = "127.0.0.1:0"
    master_addr: str = ""
    # Master gives up if no worker is connected for this long while work
    # remains.
    worker_timeout_s: float = 30.0
    # Artificial per-tile delay. A testing and benchmarking knob only; it
    # makes "mid-run" a wide target for fault injection.
    tile_delay_s: float = 0.0

    def __post_init__(self) -> None:
        if self.tiles and self.tile_paths:
            raise ValueError("give tiles or tile_paths, not both")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if self.worker_timeout_s <= 0 or self.tile_delay_s < 0:
            raise ValueError("timings must be positive")
        object.__setattr__(self, "tiles", tuple(self.tiles))
        object.__setattr__(self, "tile_paths", tuple(self.tile_paths))


@dataclass
class TileResult:
    """Outcome for one tile. ``error`` empty means success."""

    scene_id: str
    row: int
    col: int
    label: Optional[np.ndarray] = None
    filtered: Optional[np.ndarray] = None
    affected_fraction: float = 0.0
    seconds: float = 0.0
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.error == ""


@dataclass
class RunOutcome:
    results: list
    timing: PhaseTiming
    # Per-run counters: requeued, duplicate_results, heartbeats,
    # max_in_flight, workers_seen. Empty outside master mode.
    stats: dict = field(default_factory=dict)


def process_tile(tile: Tile, config: FilterConfig, scheme: SegmentationScheme,
                 delay_s: float = 0.0) -> TileResult:
    started = time.perf_counter()
    try:
        if delay_s:
            time.sleep(delay_s)
        out = apply_filter(tile.raster, config)
        label = segment(out.filtered, scheme)
        return TileResult(tile.scene_id, tile.grid_row, tile.grid_col,
                          label=label.data, filtered=out.filtered.data,
                          affected_fraction=out.affected_fraction,
                          seconds=time.perf_counter() - started)
    except Exception as exc:
        return TileResult(tile.scene_id, tile.grid_row, tile.grid_col,
                          seconds=time.perf_counter() - started,
                          error=f"{type(exc).__name__}: {exc}")


def load_tiles(job: JobSpec, parallel: bool) -> list:
    """The load phase: decode PNG paths into tiles, or pass inline tiles
    through. ``parallel`` fans the decoding out over an I/O thread pool."""
    if job.tiles:
        return list(job.tiles)
    if not job.tile_paths:
        return []

    def decode(item) -> Tile:
        index, path = item
        raster = read_image(path, promote_gray=True)
        match = _TILE_NAME.search(raster.scene_id)
        if match:
            scene = raster.scene_id[:match.start()]
            row, col = int(match.group(1)), int(match.group(2))
        else:
            scene, row, col = raster.scene_id, index, 0
        return Tile(SceneRaster(raster.data, scene), scene, row, col)

    items = list(enumerate(job.tile_paths))
    if parallel and len(items) > 1:
        with ThreadPoolExecutor(max_workers=min(8, len(items))) as pool:
            return list(pool.map(decode, items))
    return [decode(item) for item in items]


def _chunks(count: int, size: int) -> list:
    return [list(range(lo, min(lo + size, count))) for lo in range(0, count, size)]


def _order_results(results: dict, count: int) -> list:
    missing = [i for i in range(count) if i not in results]
    if missing:
        raise EngineError(f"run lost tiles at input indices {missing}")
    return [results[i] for i in range(count)]


# --------------------------------------------------------------------------
# sequential and local modes


def run_sequential(job: JobSpec) -> RunOutcome:
    t0 = time.perf_counter()
    tiles = load_tiles(job, parallel=False)
    t1 = time.perf_counter()
    results = [process_tile(t, job.filter_config, job.scheme, job.tile_delay_s)
               for t in tiles]
    t2 = time.perf_counter()
    processed = sum(r.ok for r in results)
    timing = PhaseTiming(t1 - t0, t2 - t1, time.perf_counter() - t2,
                         tiles_processed=processed, workers=1)
    return RunOutcome(results, timing)


def _pool_child(conn, config: FilterConfig, scheme: SegmentationScheme,
                delay_s: float) -> None:
    while True:
        msg = conn.recv()
        if msg is None:
            return
        cid, tiles = msg
        conn.send((cid, [process_tile(t, config, scheme, delay_s) for t in tiles]))


def _mp_context():
    # fork keeps child startup cheap and lets a forked child see the
    # parent's module state; fall back to the default elsewhere.
    try:
        return multiprocessing.get_context("fork")
    except ValueError:
        return multiprocessing.get_context()


def run_local(job: JobSpec) -> RunOutcome:
    """Child-process pool on this machine. Output is ordered by input
    index, so it is byte-identical to ``run_sequential`` on the same job.

    Each child owns one chunk at a time over a dedicated pipe. A child
    dying mid-chunk is detected as EOF on that pipe; the chunk is retried
    once on a fresh child, then recorded as failed, tile by tile.
    """
    t0 = time.perf_counter()
    tiles = load_tiles(job, parallel=True)
    t1 = time.perf_counter()

    ctx = _mp_context()
    chunks = _chunks(len(tiles), job.chunk_size)
    lock = threading.Lock()
    pending = list(range(len(chunks)))
    attempts = {i: 0 for i in range(len(chunks))}
    results: dict = {}

    def spawn():
        parent_conn, child_conn = ctx.Pipe()
        child = ctx.Process(target=_pool_child,
                            args=(child_conn, job.filter_config, job.scheme,
                                  job.tile_delay_s),
                            daemon=True)
        child.start()
        child_conn.close()
        return child, parent_conn

    def record(cid: int, chunk_results: list) -> None:
        with lock:
            for idx, res in zip(chunks[cid], chunk_results):
                results[idx] = res

    def fail_or_requeue(cid: int) -> None:
        with lock:
            attempts[cid] += 1
            if attempts[cid] <= 1:
                pending.insert(0, cid)
                return
            chunk_results = []
            for idx in chunks[cid]:
                t = tiles[idx]
                chunk_results.append(TileResult(t.scene_id, t.grid_row, t.grid_col,
                                                error="worker process died twice on "
                                                      "this chunk"))
        record(cid, chunk_results)

    def feeder() -> None:
        child, conn = spawn()
        try:
            while True:
                with lock:
                    cid = pending.pop(0) if pending else None
                if cid is None:
                    return
                crashed = False
                try:
                    conn.send((cid, [tiles[i] for i in chunks[cid]]))
                    got_cid, chunk_results = conn.recv()
                except (EOFError, BrokenPipeError, OSError):
                    crashed = True
                if crashed:
                    conn.close()
                    child.join()
                    fail_or_requeue(cid)
                    child, conn = spawn()
                else:
                    record(got_cid, chunk_results)
        finally:
            try:
                conn.send(None)
            except (BrokenPipeError, OSError):
                pass
            conn.close()
            child.join()

    feeders = [threading.Thread(target=feeder, daemon=True)
               for _ in range(min(job.workers, max(1, len(chunks))))]
    for f in feeders:
        f.start()
    for f in feeders:
        f.join()

    t2 = time.perf_counter()
    ordered = _order_results(results, len(tiles))
    processed = sum(r.ok for r in ordered)
    timing = PhaseTiming(t1 - t0, t2 - t1, time.perf_counter() - t2,
                         tiles_processed=processed, workers=job.workers)
    return RunOutcome(ordered, timing)


# --------------------------------------------------------------------------
# wire protocol


def encode_frame(tag: int, header: dict, blobs: tuple = ()) -> bytes:
    if tag not in _TAG_NAMES:
        raise ProtocolError(f"unknown tag {tag}")
    header = dict(header)
    header["blob_sizes"] = [len(b) for b in blobs]
    head = json.dumps(header, separators=(",", ":")).encode()
    body = struct.pack(">I", len(head)) + head + b"".join(blobs)
    return struct.pack(">I", 1 + len(body)) + bytes([tag]) + body


def decode_frame(payload: bytes) -> tuple:
    """Split one length-stripped frame (tag byte + body) into
    (tag, header, blobs). Raises ProtocolError on anything malformed."""
    if not payload:
        raise ProtocolError("empty frame")
    tag = payload[0]
    if tag not in _TAG_NAMES:
        raise ProtocolError(f"unknown tag {tag}")
    body = payload[1:]
    if len(body) < 4:
        raise ProtocolError("frame too short for header length")
    head_len = struct.unpack(">I", body[:4])[0]
    if 4 + head_len > len(body):
        raise ProtocolError("header length overruns frame")
    try:
        header = json.loads(body[4:4 + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad JSON header: {exc}") from exc
    if not isinstance(header, dict):
        raise ProtocolError("header is not an object")
    sizes = header.get("blob_sizes", [])
    if not isinstance(sizes, list):
        raise ProtocolError("blob_sizes is not a list")
    blobs, at = [], 4 + head_len
    for size in sizes:
        if not isinstance(size, int) or size < 0 or at + size > len(body):
            raise ProtocolError("blob sizes do not match frame")
        blobs.append(body[at:at + size])
        at += size
    if at != len(body):
        raise ProtocolError("trailing bytes after blobs")
    return tag, header, blobs


def _recv_exact(sock: socket.socket, count: int) -> bytes:
    parts = []
    while count:
        chunk = sock.recv(min(count, 1 << 20))
        if not chunk:
            raise ConnectionError("peer closed connection")
        parts.append(chunk)
        count -= len(chunk)
    return b"".join(parts)


def read_frame(sock: socket.socket) -> tuple:
    length = struct.unpack(">I", _recv_exact(sock, 4))[0]
    if length == 0 or length > MAX_FRAME:
        raise ProtocolError(f"frame length {length} out of range")
    return decode_frame(_recv_exact(sock, length))


def write_frame(sock: socket.socket, tag: int, header: dict, blobs: tuple = ()) -> None:
    sock.sendall(encode_frame(tag, header, blobs))


def _pack_tiles(tiles: list) -> tuple:
    meta, blobs = [], []
    for t in tiles:
        meta.append({"scene_id": t.scene_id, "row": t.grid_row, "col": t.grid_col,
                     "h": t.raster.height, "w": t.raster.width})
        blobs.append(t.raster.data.tobytes())
    return meta, blobs


def _unpack_tiles(meta: list, blobs: list) -> list:
    tiles = []
    for rec, blob in zip(meta, blobs):
        data = np.frombuffer(blob, np.uint8).reshape(rec["h"], rec["w"], 3).copy()
        tiles.append(Tile(SceneRaster(data, rec["scene_id"]), rec["scene_id"],
                          rec["row"], rec["col"]))
    return tiles


def _pack_results(results: list) -> tuple:
    meta, blobs = [], []
    for r in results:
        rec = {"scene_id": r.scene_id, "row": r.row, "col": r.col,
               "affected_fraction": r.affected_fraction, "seconds": r.seconds,
               "error": r.error}
        if r.ok:
            rec["h"], rec["w"] = r.label.shape
            blobs.append(r.label.tobytes())
            blobs.append(r.filtered.tobytes())
        meta.append(rec)
    return meta, blobs


def _unpack_results(meta: list, blobs: list) -> list:
    results, at = [], 0
    for rec in meta:
        res = TileResult(rec["scene_id"], rec["row"], rec["col"],
                         affected_fraction=rec["affected_fraction"],
                         seconds=rec["seconds"], error=rec["error"])
        if res.ok:
            h, w = rec["h"], rec["w"]
            res.label = np.frombuffer(blobs[at], np.uint8).reshape(h, w).copy()
            res.filtered = np.frombuffer(blobs[at + 1], np.uint8).reshape(h, w, 3).copy()
            at += 2
        results.append(res)
    return results


# --------------------------------------------------------------------------
# master


def _parse_addr(text: str) -> tuple:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address {text!r} is not host:port")
    return host, int(port)


class _MasterState:
    """Book-keeping shared by the connection handlers and the reducer."""

    def __init__(self, chunks: list, tiles: list):
        self.lock = threading.Lock()
        self.chunks = chunks
        self.tiles = tiles
        self.pending = list(range(len(chunks)))
        self.attempts = {i: 0 for i in range(len(chunks))}
        self.done_tasks: set = set()
        self.results_q: queue.Queue = queue.Queue()
        self.alive_connections = 0
        self.stats = {"requeued": 0, "duplicate_results": 0, "heartbeats": 0,
                      "max_in_flight": 0, "workers_seen": 0}
        self.closing = False

    def next_task(self) -> Optional[int]:
        with self.lock:
            if self.pending:
                return self.pending.pop(0)
            return None

    def requeue(self, task_ids: set) -> None:
        """Give a dead worker's unacknowledged tasks back to the queue.
        Tasks past the requeue limit fail outright, every tile reported."""
        with self.lock:
            doomed = []
            for tid in sorted(task_ids):
                if tid in self.done_tasks:
                    continue
                self.attempts[tid] += 1
                if self.attempts[tid] > REQUEUE_LIMIT:
                    self.done_tasks.add(tid)
                    doomed.append(tid)
                else:
                    self.stats["requeued"] += 1
                    self.pending.insert(0, tid)
        for tid in doomed:
            failed = []
            for idx in self.chunks[tid]:
                t = self.tiles[idx]
                failed.append(TileResult(t.scene_id, t.grid_row, t.grid_col,
                                         error="task abandoned after repeated "
                                               "worker failures"))
            self.results_q.put((tid, failed))


def _send_frame_safely(sock: socket.socket, tag: int, header: dict,
                       blobs: tuple = ()) -> bool:
    """Send with a generous timeout, then restore the handler's short
    read timeout. False means the peer is unusable."""
    try:
        sock.settimeout(30.0)
        write_frame(sock, tag, header, blobs)
        return True
    except OSError:
        return False
    finally:
        try:
            sock.settimeout(0.25)
        except OSError:
            pass


def _handle_worker(sock: socket.socket, state: _MasterState, job: JobSpec) -> None:
    """One thread per connection. Pushes tasks (never more than
    IN_FLIGHT_PER_WORKER unacknowledged), forwards RESULT frames to the
    reducer, and requeues whatever is in flight if the peer vanishes.

    Totality: a frame that fails to parse gets an ERROR frame back and
    only this connection is dropped; nothing a peer sends can take the
    master down."""
    sock.settimeout(0.25)
    in_flight: set = set()
    registered = False
    try:
        while True:
            if state.closing and not in_flight:
                _send_frame_safely(sock, SHUTDOWN, {})
                return
            if registered and not state.closing:
                while len(in_flight) < IN_FLIGHT_PER_WORKER:
                    tid = state.next_task()
                    if tid is None:
                        break
                    tiles = [state.tiles[i] for i in state.chunks[tid]]
                    meta, blobs = _pack_tiles(tiles)
                    in_flight.add(tid)
                    # Config rides along so workers cannot drift from the job.
                    if not _send_frame_safely(sock, TASK,
                                              {"task_id": tid, "tiles": meta,
                                               "filter": job.filter_config.to_dict(),
                                               "scheme": job.scheme.to_dict(),
                                               "delay_s": job.tile_delay_s}, blobs):
                        return
                    with state.lock:
                        state.stats["max_in_flight"] = max(
                            state.stats["max_in_flight"], len(in_flight))
            try:
                tag, header, blobs = read_frame(sock)
            except socket.timeout:
                continue
            except ProtocolError as exc:
                _send_frame_safely(sock, ERROR, {"task_id": -1, "reason": str(exc)})
                return
            if tag == HELLO:
                if not registered:
                    registered = True
                    with state.lock:
                        state.stats["workers_seen"] += 1
            elif tag == HEARTBEAT:
                with state.lock:
                    state.stats["heartbeats"] += 1
            elif tag == RESULT:
                tid = header.get("task_id")
                in_flight.discard(tid)
                with state.lock:
                    known = tid in state.attempts and tid not in state.done_tasks
                    if known:
                        state.done_tasks.add(tid)
                    else:
                        state.stats["duplicate_results"] += 1
                if not known:
                    continue
                try:
                    unpacked = _unpack_results(header["tiles"], blobs)
                    if len(unpacked) != len(state.chunks[tid]):
                        raise ValueError("result count does not match task")
                except (KeyError, TypeError, ValueError) as exc:
                    with state.lock:
                        state.done_tasks.discard(tid)
                    state.requeue({tid})
                    _send_frame_safely(sock, ERROR,
                                       {"task_id": tid,
                                        "reason": f"unusable RESULT: {exc}"})
                    return
                state.results_q.put((tid, unpacked))
            elif tag == ERROR:
                tid = header.get("task_id", -1)
                if tid in in_flight:
                    in_flight.discard(tid)
                    state.requeue({tid})
            elif tag == SHUTDOWN:
                return
            else:
                _send_frame_safely(sock, ERROR,
                                   {"task_id": -1,
                                    "reason": f"unexpected {_TAG_NAMES[tag]} frame"})
                return
    except (ConnectionError, OSError):
        return
    finally:
        state.requeue(in_flight)
        with state.lock:
            state.alive_connections -= 1
        sock.close()


def run_master(job: JobSpec, bound_callback: Optional[Callable] = None) -> RunOutcome:
    """Bind, hand out tile chunks to whoever connects, reassemble.

    ``bound_callback(host, port)`` fires once the listener is up, so
    callers binding port 0 can learn the real port. Raises EngineError if
    work remains but no worker has been connected for
    ``job.worker_timeout_s``.
    """
    t0 = time.perf_counter()
    tiles = load_tiles(job, parallel=True)
    t1 = time.perf_counter()

    chunks = _chunks(len(tiles), job.chunk_size)
    state = _MasterState(chunks, tiles)
    index_results: dict = {}

    host, port = _parse_addr(job.bind)
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind((host, port))
    listener.listen()
    listener.settimeout(0.25)
    if bound_callback is not None:
        bound_callback(*listener.getsockname())

    handlers: list = []

    def accept_loop() -> None:
        while not state.closing:
            try:
                conn, _ = listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with state.lock:
                state.alive_connections += 1
            handler = threading.Thread(target=_handle_worker,
                                       args=(conn, state, job), daemon=True)
            handler.start()
            handlers.append(handler)

    acceptor = threading.Thread(target=accept_loop, daemon=True)
    acceptor.start()

    tiles_done = 0
    starved_since = time.perf_counter()
    try:
        while tiles_done < len(tiles):
            try:
                tid, results = state.results_q.get(timeout=0.25)
            except queue.Empty:
                with state.lock:
                    starving = state.alive_connections == 0
                if not starving:
                    starved_since = time.perf_counter()
                elif time.perf_counter() - starved_since > job.worker_timeout_s:
                    raise EngineError(
                        f"no workers connected for {job.worker_timeout_s:.1f}s "
                        f"with {len(tiles) - tiles_done} tiles unfinished")
                continue
            starved_since = time.perf_counter()
            for idx, res in zip(chunks[tid], results):
                # First RESULT wins; done_tasks already filters repeats.
                index_results[idx] = res
                tiles_done += 1
    finally:
        state.closing = True
        listener.close()
        acceptor.join(timeout=2.0)
        for handler in list(handlers):
            handler.join(timeout=2.0)

    t2 = time.perf_counter()
    ordered = _order_results(index_results, len(tiles))
    processed = sum(r.ok for r in ordered)
    timing = PhaseTiming(t1 - t0, t2 - t1, time.perf_counter() - t2,
                         tiles_processed=processed, workers=state.stats["workers_seen"])
    return RunOutcome(ordered, timing, dict(state.stats))


# --------------------------------------------------------------------------
# worker


def _heartbeat_loop(sock: socket.socket, send_lock: threading.Lock,
                    stop: threading.Event, interval_s: float) -> None:
    while not stop.wait(interval_s):
        try:
            with send_lock:
                write_frame(sock, HEARTBEAT, {})
        except OSError:
            return


def run_worker(master_addr: str, cores: int = 1,
               reconnect_attempts: int = 3, backoff_base_s: float = 0.5,
               heartbeat_s: float = HEARTBEAT_S) -> int:
    """Connect, say HELLO, process TASK frames until SHUTDOWN.

    Filter and scheme configuration arrive inside each TASK frame, so a
    worker needs nothing beyond the master's address.

    Returns 0 on a clean SHUTDOWN. Connection loss triggers reconnects
    with exponential backoff (backoff_base_s, doubling); after
    ``reconnect_attempts`` consecutive failures the return is 1. A
    malformed frame gets an ERROR frame back, then the connection is
    rebuilt through the same path.

    The local pool is a thread pool: the kernels release the GIL, so
    threads scale for this workload without nesting process pools.
    """
    host, port = _parse_addr(master_addr)
    worker_id = f"{socket.gethostname()}-{os.getpid()}"
    failures = 0

    def backoff() -> None:
        # Doubling, capped at 5s so a large retry budget stays responsive.
        time.sleep(min(5.0, backoff_base_s * (2 ** (failures - 1))))

    while True:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        try:
            sock.connect((host, port))
        except OSError:
            sock.close()
            failures += 1
            if failures >= reconnect_attempts:
                return 1
            backoff()
            continue
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        send_lock = threading.Lock()
        stop = threading.Event()
        beat = threading.Thread(target=_heartbeat_loop,
                                args=(sock, send_lock, stop, heartbeat_s), daemon=True)
        try:
            with send_lock:
                write_frame(sock, HELLO, {"worker_id": worker_id, "cores": cores})
            beat.start()
            while True:
                tag, header, blobs = read_frame(sock)
                # A well-formed frame proves the link works; only then does
                # the failure streak reset. A master spewing garbage burns
                # through the reconnect budget instead of looping forever.
                failures = 0
                if tag == SHUTDOWN:
                    return 0
                if tag == TASK:
                    try:
                        tiles = _unpack_tiles(header["tiles"], blobs)
                        config = (FilterConfig.from_dict(header["filter"])
                                  if "filter" in header else FilterConfig())
                        scheme = (SegmentationScheme.from_dict(header["scheme"])
                                  if "scheme" in header else
                                  get_preset("ross-sea-summer"))
                    except (KeyError, TypeError, ValueError) as exc:
                        with send_lock:
                            write_frame(sock, ERROR,
                                        {"task_id": header.get("task_id", -1),
                                         "reason": f"unusable TASK: {exc}"})
                        continue
                    delay = float(header.get("delay_s", 0.0))
                    if cores > 1 and len(tiles) > 1:
                        with ThreadPoolExecutor(max_workers=cores) as pool:
                            results = list(pool.map(
                                lambda t: process_tile(t, config, scheme, delay),
                                tiles))
                    else:
                        results = [process_tile(t, config, scheme, delay)
                                   for t in tiles]
                    meta, out_blobs = _pack_results(results)
                    with send_lock:
                        write_frame(sock, RESULT,
                                    {"task_id": header["task_id"], "tiles": meta},
                                    out_blobs)
                elif tag in (HEARTBEAT, ERROR):
                    continue
                else:
                    raise ProtocolError(f"unexpected {_TAG_NAMES[tag]} frame")
        except ProtocolError as exc:
            try:
                with send_lock:
                    write_frame(sock, ERROR, {"task_id": -1, "reason": str(exc)})
            except OSError:
                pass
            failures += 1
            if failures >= reconnect_attempts:
                return 1
            backoff()
        except (ConnectionError, OSError):
            failures += 1
            if failures >= reconnect_attempts:
                return 1
            backoff()
        finally:
            stop.set()
            sock.close()
            if beat.is_alive():
                beat.join(timeout=1.0)


# --------------------------------------------------------------------------
# self-contained runs and the benchmark table


def run_with_loopback_workers(job: JobSpec) -> RunOutcome:
    """Master plus ``job.workers`` in-process worker threads over
    loopback TCP. The self-contained form of master mode."""
    bound: queue.Queue = queue.Queue()
    box: dict = {}

    def master() -> None:
        try:
            box["outcome"] = run_master(job,
                                        bound_callback=lambda h, p: bound.put((h, p)))
        except BaseException as exc:
            box["error"] = exc
            bound.put(None)

    thread = threading.Thread(target=master, daemon=True)
    thread.start()
    addr = bound.get(timeout=10.0)
    if addr is None:
        thread.join()
        raise box["error"]
    host, port = addr
    workers = [threading.Thread(target=run_worker, args=(f"{host}:{port}",),
                                daemon=True)
               for _ in range(job.workers)]
    for w in workers:
        w.start()
    thread.join()
    for w in workers:
        w.join(timeout=5.0)
    if "error" in box:
        raise box["error"]
    return box["outcome"]


def run_job(job: JobSpec, bound_callback: Optional[Callable] = None) -> RunOutcome:
    """One-call entry point for self-contained runs. Master mode here
    spawns its own loopback workers; distributed runs drive
    ``run_master`` and ``run_worker`` directly."""
    if job.mode == "sequential":
        return run_sequential(job)
    if job.mode == "local":
        return run_local(job)
    if job.mode == "master":
        if bound_callback is not None:
            return run_master(job, bound_callback)
        return run_with_loopback_workers(job)
    raise EngineError(f"run_job cannot drive mode {job.mode!r}")


BENCH_COLUMNS = ("mode", "workers", "cores", "load_s", "map_s", "reduce_s",
                 "speedup_load", "speedup_reduce")


def bench(jobs: list) -> list:
    """Run each job and report phase times, one dict per row in
    BENCH_COLUMNS order. Speedups are relative to the first row, which
    should be the 1-worker baseline."""
    if not jobs:
        raise ValueError("bench needs at least one job")
    rows = []
    cores = os.cpu_count() or 1
    base_load = base_reduce = None
    for job in jobs:
        outcome = run_job(job)
        t = outcome.timing
        if base_load is None:
            base_load, base_reduce = t.load_s, t.reduce_s
        rows.append({
            "mode": job.mode, "workers": job.workers, "cores": cores,
            "load_s": round(t.load_s, 6), "map_s": round(t.map_s, 6),
            "reduce_s": round(t.reduce_s, 6),
            "speedup_load": round(base_load / t.load_s, 3)
                            if t.load_s > 0 and base_load > 0 else 1.0,
            "speedup_reduce": round(base_reduce / t.reduce_s, 3)
                              if t.reduce_s > 0 and base_reduce > 0 else 1.0,
        })
    return rows


def bench_csv(rows: list) -> str:
    lines = [",".join(BENCH_COLUMNS)]
    for row in rows:
        lines.append(",".join(str(row[c]) for c in BENCH_COLUMNS))
    return "\n".join(lines) + "\n"
