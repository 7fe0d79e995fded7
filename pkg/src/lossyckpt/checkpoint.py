"""Variable registry, checkpoint images, stores and recovery.

Variables are registered once with :meth:`Registry.protect` and classified as

* ``STATIC``: written once, into the epoch image (the matrix, the preconditioner);
* ``DYNAMIC``: written into every checkpoint image (x, and p and rho for classic CG);
* ``RECOMPUTED``: never written; the solver rebuilds them from x on restart (r).

An image is one line of JSON (the manifest) followed by the concatenated
compressed frames it indexes. Scalars live in the manifest, stored exactly.
"""
from __future__ import annotations

import enum
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .codec import CodecSpec, CompressedFrame, compress, decompress
from .errors import CorruptFrameError, DuplicateIdError, StorageError
from .sparse import CsrMatrix

FORMAT = 1
EPOCH_NAME = "epoch.img"
LATEST_NAME = "latest"
KINDS = ("vector", "scalar", "matrix")


class VariableClass(enum.Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"
    RECOMPUTED = "recomputed"


@dataclass(frozen=True)
class Registration:
    id: str
    var_class: VariableClass
    codec: CodecSpec = CodecSpec()
    kind: str = "vector"
    rebuild: Callable[[], Any] | None = None


class Registry:
    """Protected variables and their current values."""

    def __init__(self):
        self._regs: dict[str, Registration] = {}
        self._values: dict[str, Any] = {}

    def protect(self, id, var_class, codec: CodecSpec | None = None, kind="vector",
                value=None, rebuild=None) -> "Registry":
        """Track a variable; returns the registry so calls can be chained.

        ``rebuild`` (static variables only) regenerates the value at recovery
        instead of reading it back from the epoch image.
        """
        if id in self._regs:
            raise DuplicateIdError(f"variable {id!r} is already protected")
        var_class = VariableClass(var_class)
        if kind not in KINDS:
            raise ValueError(f"unknown payload kind {kind!r}")
        codec = codec or CodecSpec.identity()
        if kind == "matrix" and codec.kind == "lossy":
            raise ValueError("matrices are stored exactly")
        self._regs[id] = Registration(id, var_class, codec, kind, rebuild)
        if value is not None:
            self.bind(id, value)
        return self

    def bind(self, id, value) -> None:
        if id not in self._regs:
            raise KeyError(f"variable {id!r} is not protected")
        self._values[id] = value

    def set_codec(self, id, codec: CodecSpec) -> None:
        """Change a variable's codec, e.g. to follow a residual-adaptive error bound."""
        reg = self._regs[id]
        self._regs[id] = Registration(reg.id, reg.var_class, codec, reg.kind, reg.rebuild)

    def value(self, id):
        return self._values[id]

    def __contains__(self, id):
        return id in self._regs

    def __getitem__(self, id) -> Registration:
        return self._regs[id]

    def __iter__(self):
        return iter(self._regs.values())

    def of_class(self, var_class) -> list[Registration]:
        return [r for r in self._regs.values() if r.var_class is VariableClass(var_class)]


@dataclass
class CheckpointImage:
    iteration: int
    manifest: dict
    frames: list[CompressedFrame]
    data: bytes
    epoch: bool = False

    @property
    def nbytes(self) -> int:
        return len(self.data)

    @property
    def virtual_time(self):
        return self.manifest.get("virtual_time")

    @property
    def wall_time(self):
        return self.manifest.get("wall_time")


def _matrix_arrays(A: CsrMatrix):
    # index arrays are small non-negative integers, exact in float64
    return [("row_ptr", A.row_ptr), ("col_idx", A.col_idx), ("values", A.values)]


def build_image(registry: Registry, iteration: int, *, epoch=False, virtual_time=None,
                wall_time=None) -> CheckpointImage:
    """Serialize the dynamic variables (or, with ``epoch``, the static ones)."""
    wanted = VariableClass.STATIC if epoch else VariableClass.DYNAMIC
    entries, frames, offset = [], [], 0

    def add_frame(entry, array, codec):
        nonlocal offset
        frame = compress(np.asarray(array, dtype=np.float64), codec)
        frames.append(frame)
        entry.update(codec=frame.codec_id, offset=offset, length=frame.nbytes)
        offset += frame.nbytes
        return entry

    for reg in registry.of_class(wanted):
        if reg.id not in registry._values:
            raise StorageError(f"variable {reg.id!r} has no bound value")
        value = registry.value(reg.id)
        base = {"id": reg.id, "class": reg.var_class.value, "kind": reg.kind}
        if reg.kind == "scalar":
            entries.append({**base, "value": float(value)})
        elif reg.kind == "vector":
            entries.append(add_frame(base, value, reg.codec))
        else:
            parts = [add_frame({"part": name}, arr, reg.codec) for name, arr in _matrix_arrays(value)]
            entries.append({**base, "shape": list(value.shape), "parts": parts})

    manifest = {"format": FORMAT, "iteration": int(iteration), "epoch": bool(epoch),
                "entries": entries}
    if virtual_time is not None:
        manifest["virtual_time"] = float(virtual_time)
    if wall_time is not None:
        manifest["wall_time"] = f"{wall_time:020.6f}"
    head = (json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n").encode()
    data = head + b"".join(f.to_bytes() for f in frames)
    return CheckpointImage(int(iteration), manifest, frames, data, epoch)


def parse_image(data: bytes) -> tuple[dict, bytes]:
    head, sep, body = bytes(data).partition(b"\n")
    if not sep:
        raise CorruptFrameError("image has no manifest terminator")
    try:
        manifest = json.loads(head)
    except ValueError as exc:
        raise CorruptFrameError(f"unreadable manifest: {exc}") from None
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise CorruptFrameError("unknown image format")
    return manifest, body


def _read_frame(body: bytes, entry) -> np.ndarray:
    lo, n = entry["offset"], entry["length"]
    if lo + n > len(body):
        raise CorruptFrameError("image is truncated")
    return decompress(body[lo:lo + n])


def decode_image(data: bytes) -> tuple[int, dict]:
    """(iteration, {id: value}) from serialized image bytes."""
    manifest, body = parse_image(data)
    values = {}
    for e in manifest["entries"]:
        if e["kind"] == "scalar":
            values[e["id"]] = e["value"]
        elif e["kind"] == "vector":
            values[e["id"]] = _read_frame(body, e)
        else:
            arrs = {p["part"]: _read_frame(body, p) for p in e["parts"]}
            nrows, ncols = e["shape"]
            values[e["id"]] = CsrMatrix(nrows, ncols, arrs["row_ptr"].astype(np.int64),
                                        arrs["col_idx"].astype(np.int32), arrs["values"])
    return manifest["iteration"], values


# -- stores ---------------------------------------------------------------

class MemoryStore:
    """In-memory store charging ``len / bandwidth`` seconds per transfer.

    ``fail_next_commit`` makes the next :meth:`put` die after staging its data,
    which exercises the write-then-rename atomicity path.
    """

    def __init__(self, bandwidth: float | None = None):
        if bandwidth is not None and bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        self.bandwidth = bandwidth
        self.files: dict[str, bytes] = {}
        self.fail_next_commit = False
        self.bytes_written = 0

    def transfer_time(self, nbytes: int) -> float:
        return nbytes / self.bandwidth if self.bandwidth else 0.0

    def put(self, name: str, data: bytes) -> float:
        staged = bytes(data)
        if self.fail_next_commit:
            self.fail_next_commit = False
            raise StorageError(f"injected failure before committing {name}")
        self.files[name] = staged
        self.bytes_written += len(staged)
        return self.transfer_time(len(staged))

    def get(self, name: str) -> bytes:
        try:
            return self.files[name]
        except KeyError:
            raise StorageError(f"no such object {name!r}") from None

    def exists(self, name: str) -> bool:
        return name in self.files

    def delete(self, name: str) -> None:
        self.files.pop(name, None)

    def names(self):
        return sorted(self.files)


class DirectoryStore:
    """One directory per run; each write goes to a temp file and is renamed into place."""

    def __init__(self, root):
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot create {self.root}: {exc}") from exc
        self.fail_next_commit = False
        self.bytes_written = 0

    def put(self, name: str, data: bytes) -> float:
        start = time.perf_counter()
        try:
            fd, tmp = tempfile.mkstemp(dir=self.root, prefix=f".{name}.", suffix=".tmp")
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            if self.fail_next_commit:
                self.fail_next_commit = False
                os.unlink(tmp)
                raise StorageError(f"injected failure before committing {name}")
            os.replace(tmp, self.root / name)
        except StorageError:
            raise
        except OSError as exc:
            raise StorageError(f"writing {name}: {exc}") from exc
        self.bytes_written += len(data)
        return time.perf_counter() - start

    def get(self, name: str) -> bytes:
        try:
            return (self.root / name).read_bytes()
        except OSError as exc:
            raise StorageError(f"reading {name}: {exc}") from exc

    def exists(self, name: str) -> bool:
        return (self.root / name).exists()

    def delete(self, name: str) -> None:
        try:
            (self.root / name).unlink()
        except FileNotFoundError:
            pass

    def names(self):
        return sorted(p.name for p in self.root.iterdir() if not p.name.startswith("."))


def image_name(iteration: int) -> str:
    return f"ckpt_{iteration}.img"


def commit(store, image: CheckpointImage, prune: bool = True) -> float:
    """Write an image and, for checkpoint images, move the ``latest`` marker to it.

    The marker is itself written by rename, so a crash leaves either the old
    or the new image current. With ``prune`` older checkpoint images are
    deleted once the marker has moved.
    """
    if image.epoch:
        return store.put(EPOCH_NAME, image.data)
    name = image_name(image.iteration)
    elapsed = store.put(name, image.data)
    elapsed += store.put(LATEST_NAME, name.encode())
    if prune:
        for stale in store.names():
            if stale.startswith("ckpt_") and stale != name:
                store.delete(stale)
    return elapsed


@dataclass
class SnapshotResult:
    image: CheckpointImage
    elapsed: float
    epoch_image: CheckpointImage | None = None

    @property
    def nbytes(self) -> int:
        return self.image.nbytes


def snapshot(registry: Registry, iteration: int, store, *, virtual_time=None,
             prune: bool = True) -> SnapshotResult:
    """Make the current dynamic values durable.

    The epoch image of static variables is written on the first call against
    a store and never again. ``elapsed`` is the measured serialize+compress
    time plus the store's transfer time.
    """
    start = time.perf_counter()
    epoch = None
    if registry.of_class(VariableClass.STATIC) and not store.exists(EPOCH_NAME):
        epoch = build_image(registry, 0, epoch=True, virtual_time=virtual_time)
    image = build_image(registry, iteration, virtual_time=virtual_time)
    elapsed = time.perf_counter() - start
    if epoch is not None:
        elapsed += commit(store, epoch)
    elapsed += commit(store, image, prune)
    return SnapshotResult(image, elapsed, epoch)


@dataclass
class Restored:
    iteration: int
    values: dict = field(default_factory=dict)
    from_scratch: bool = False
    elapsed: float = 0.0
    nbytes: int = 0


def restore(store, registry: Registry) -> Restored:
    """Load the latest image back into ``registry``.

    Without any image the result has ``from_scratch=True`` and iteration 0.
    A damaged image raises :class:`CorruptFrameError`; there is no silent
    fallback to an older one.
    """
    if not store.exists(LATEST_NAME):
        return Restored(0, {}, from_scratch=True)
    start = time.perf_counter()
    name = store.get(LATEST_NAME).decode()
    data = store.get(name)
    iteration, values = decode_image(data)
    nbytes = len(data)
    statics = registry.of_class(VariableClass.STATIC)
    stored = [r for r in statics if r.rebuild is None]
    if stored:
        epoch_data = store.get(EPOCH_NAME)
        nbytes += len(epoch_data)
        _, epoch_values = decode_image(epoch_data)
        values.update({r.id: epoch_values[r.id] for r in stored})
    for reg in statics:
        if reg.rebuild is not None:
            values[reg.id] = reg.rebuild()
    for reg in registry.of_class(VariableClass.DYNAMIC):
        if reg.id not in values:
            raise CorruptFrameError(f"image {name} lacks dynamic variable {reg.id!r}")
    for id_, v in values.items():
        if id_ in registry:
            registry.bind(id_, v)
    elapsed = time.perf_counter() - start
    transfer = getattr(store, "transfer_time", None)
    if transfer is not None:
        elapsed += transfer(nbytes)
    return Restored(iteration, values, False, elapsed, nbytes)


# -- solver glue ----------------------------------------------------------

def solver_registry(method: str, codec: CodecSpec, A: CsrMatrix | None = None,
                    keep_direction: bool | None = None, rebuild_static=None) -> Registry:
    """Registry for a solver's variables.

    Classic CG keeps {rho, p, x} as dynamic variables unless
    ``keep_direction`` is False; restarted methods keep only x. The residual
    is always recomputed. The matrix, when given, is static.
    """
    if keep_direction is None:
        keep_direction = method == "cg"
    reg = Registry().protect("x", VariableClass.DYNAMIC, codec)
    if keep_direction:
        reg.protect("p", VariableClass.DYNAMIC, codec)
        reg.protect("rho", VariableClass.DYNAMIC, kind="scalar")
    reg.protect("r", VariableClass.RECOMPUTED, codec)
    if A is not None:
        exact = codec if codec.kind != "lossy" else CodecSpec.lossless()
        reg.protect("A", VariableClass.STATIC, exact, kind="matrix", value=A,
                    rebuild=rebuild_static)
    return reg


def bind_state(registry: Registry, state) -> None:
    registry.bind("x", state.x)
    if "p" in registry:
        registry.bind("p", state.aux["p"])
        registry.bind("rho", state.aux["rho"])


def restored_state(restored: Restored, registry: Registry):
    from .solvers import SolverState

    aux = {}
    if "p" in registry:
        aux = {"p": restored.values["p"], "rho": restored.values["rho"]}
    return SolverState(restored.iteration, restored.values["x"], aux, [])
