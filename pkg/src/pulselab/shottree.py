"""Per-shot hierarchical data store ("shot tree").

A model tree declares the node skeleton once; every shot instantiates it
into its own on-disk directory:

    <root>/shots/000123/manifest.json     declarations, parameters, timestamps
    <root>/shots/000123/TOP.RTCTRL.Z.sig  one binary blob per written signal
    <root>/logbook.jsonl                  append-only operator notes

Node paths look like ``\\TOP.RTCTRL.COIL:CMD``: dot-separated structure
segments with an optional ``:`` member at the end.  Input is
case-insensitive and stored uppercase; segments are 1-12 chars of
``[A-Z0-9_]``.

Writes go to OPEN trees only.  ``finalize`` flushes the manifest, flips the
tree to FINALIZED and emits a ``SHOT_DONE`` event; afterwards every write
is rejected and the directory contents never change.  Parameters persist in
the manifest, so the durability point for them is create/finalize; signal
blobs are written eagerly on each put.

Timestamps in manifests come from the caller (simulated time), never the
wall clock, which keeps two identical runs byte-identical on disk.
"""

import json
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

import numpy as np

from pulselab import sigfile

ROOT = "\\TOP"

_SEGMENT_RE = re.compile(r"^[A-Z0-9_]{1,12}$")

EVENT_TREE_WRITE = "TREE_WRITE"
EVENT_SHOT_DONE = "SHOT_DONE"


class ShotTreeError(Exception):
    pass


class InvalidPath(ShotTreeError):
    pass


class InvalidModel(ShotTreeError):
    pass


class DuplicateShot(ShotTreeError):
    pass


class NoSuchShot(ShotTreeError):
    pass


class NoSuchNode(ShotTreeError):
    pass


class UsageMismatch(ShotTreeError):
    pass


class BadSignal(ShotTreeError):
    pass


class BadParameter(ShotTreeError):
    pass


class NoData(ShotTreeError):
    pass


class Finalized(ShotTreeError):
    pass


class AlreadyFinalized(ShotTreeError):
    pass


class EmptyBody(ShotTreeError):
    pass


class StorageError(ShotTreeError):
    pass


# --------------------------------------------------------------------------
# Node paths
# --------------------------------------------------------------------------

def normalize_path(text: str) -> str:
    """Return the canonical form of a node path, or raise InvalidPath."""
    if not isinstance(text, str) or not text.strip():
        raise InvalidPath(f"empty path {text!r}")
    p = text.strip().upper()
    if not p.startswith("\\"):
        raise InvalidPath(f"path must start with \\TOP: {text!r}")
    body = p[1:]
    member = None
    if ":" in body:
        body, sep, member = body.partition(":")
        if ":" in member:
            raise InvalidPath(f"multiple ':' in path: {text!r}")
    segments = body.split(".")
    if segments[0] != "TOP":
        raise InvalidPath(f"path must start with \\TOP: {text!r}")
    for seg in segments:
        if not _SEGMENT_RE.match(seg):
            raise InvalidPath(f"bad segment {seg!r} in {text!r}")
    if member is not None:
        if not _SEGMENT_RE.match(member):
            raise InvalidPath(f"bad member {member!r} in {text!r}")
        return "\\" + ".".join(segments) + ":" + member
    return "\\" + ".".join(segments)


def path_segments(path: str) -> list:
    """Split a canonical path into its segments (member counts as one)."""
    body = path[1:]
    if ":" in body:
        body, _, member = body.partition(":")
        return body.split(".") + [member]
    return body.split(".")


def parent_path(path: str) -> Optional[str]:
    """Parent of a canonical path; None for the root."""
    if path == ROOT:
        return None
    body = path[1:]
    if ":" in body:
        return "\\" + body.partition(":")[0]
    head, _, _ = body.rpartition(".")
    return "\\" + head


def path_slug(path: str) -> str:
    """Filename-safe form: drop the leading backslash, ':' becomes '-'."""
    return path[1:].replace(":", "-")


def _compile_glob_segment(seg: str):
    out = []
    for ch in seg:
        if ch == "*":
            out.append("[A-Z0-9_]*")
        else:
            out.append(re.escape(ch))
    return re.compile("^" + "".join(out) + "$")


def _tokenize(text: str) -> list:
    """Split a path/pattern into (separator, segment) pairs.

    The separator is the character introducing the segment: None for the
    first, then "." for structure children or ":" for members.
    """
    tokens = []
    sep = None
    current = []
    for ch in text:
        if ch in ".:":
            tokens.append((sep, "".join(current)))
            sep, current = ch, []
        else:
            current.append(ch)
    tokens.append((sep, "".join(current)))
    return tokens


def _match_tokens(path_toks, pat_toks) -> bool:
    if not pat_toks:
        return not path_toks
    sep, seg = pat_toks[0]
    if seg == "**":
        # one or more segments of any depth, separators ignored
        for k in range(1, len(path_toks) + 1):
            if _match_tokens(path_toks[k:], pat_toks[1:]):
                return True
        return False
    if not path_toks:
        return False
    p_sep, p_seg = path_toks[0]
    if sep != p_sep:
        return False
    if not _compile_glob_segment(seg).match(p_seg):
        return False
    return _match_tokens(path_toks[1:], pat_toks[1:])


def glob_paths(paths: Iterable[str], pattern: str) -> list:
    """Filter canonical paths with a glob pattern, sorted lexicographically.

    ``*`` matches any characters within one segment, ``**`` any depth
    (one or more segments, separators ignored).  Single-segment wildcards
    respect the separator kind: ``\\TOP.X.*`` matches structure children
    of X, ``\\TOP.X:*`` its members.  A pattern without the ``\\TOP``
    prefix is taken relative to the root, so ``"**"`` means every node
    below it.
    """
    pat = pattern.strip().upper()
    if not pat:
        return []
    toks = _tokenize(pat.lstrip("\\"))
    toks = [(sep, seg) for sep, seg in toks if seg != ""]
    if not toks:
        return []
    if toks[0][1] != "TOP":
        toks = [(None, "TOP")] + [(sep or ".", seg) for sep, seg in toks]
    else:
        toks = [(None, "TOP")] + toks[1:]
    hits = [p for p in paths if _match_tokens(_tokenize(p[1:]), toks)]
    return sorted(hits)


# --------------------------------------------------------------------------
# Content types
# --------------------------------------------------------------------------

class Usage(str, Enum):
    SIGNAL = "SIGNAL"
    PARAMETER = "PARAMETER"
    STRUCTURE = "STRUCTURE"


@dataclass(frozen=True)
class UniformTimebase:
    """Evenly spaced timestamps: t0_us + k*dt_us for k in [0, n)."""

    t0_us: int
    dt_us: int
    n: int

    def validate(self):
        if self.dt_us < 1:
            raise BadSignal(f"dt_us must be >= 1, got {self.dt_us}")
        if self.n < 1:
            raise BadSignal(f"n must be >= 1, got {self.n}")

    def __len__(self):
        return self.n

    def times_us(self) -> np.ndarray:
        return self.t0_us + self.dt_us * np.arange(self.n, dtype=np.int64)


@dataclass(frozen=True)
class ExplicitTimebase:
    """Strictly ascending integer-microsecond timestamps."""

    times: np.ndarray  # int64

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.int64))

    def validate(self):
        if self.times.size < 1:
            raise BadSignal("explicit timebase must have at least one point")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise BadSignal("explicit timestamps must be strictly ascending")

    def __len__(self):
        return int(self.times.size)

    def times_us(self) -> np.ndarray:
        return self.times

    def __eq__(self, other):
        return isinstance(other, ExplicitTimebase) and np.array_equal(
            self.times, other.times
        )


Timebase = Union[UniformTimebase, ExplicitTimebase]


class Signal:
    """A waveform: a timebase plus float64 samples and a units label."""

    __slots__ = ("timebase", "samples", "units")

    def __init__(self, timebase: Timebase, samples, units: str = ""):
        self.timebase = timebase
        arr = np.array(samples, dtype=np.float64)
        arr.setflags(write=False)
        self.samples = arr
        self.units = units

    def validate(self):
        self.timebase.validate()
        if self.samples.ndim != 1:
            raise BadSignal("samples must be one-dimensional")
        if len(self.samples) != len(self.timebase):
            raise BadSignal(
                f"samples length {len(self.samples)} != timebase length "
                f"{len(self.timebase)}"
            )
        if not np.all(np.isfinite(self.samples)):
            raise BadSignal("samples must be finite")

    def times_us(self) -> np.ndarray:
        return self.timebase.times_us()

    def __eq__(self, other):
        if not isinstance(other, Signal):
            return NotImplemented
        return (
            self.timebase == other.timebase
            and self.units == other.units
            and self.samples.tobytes() == other.samples.tobytes()
        )

    def __repr__(self):
        return f"Signal(n={len(self.samples)}, units={self.units!r})"


_SCALAR_KINDS = {bool: "bool", int: "int", float: "float", str: "text"}


@dataclass(frozen=True)
class Parameter:
    """A scalar value: int, float, text or bool, with optional units."""

    value: Union[int, float, str, bool]
    units: str = ""

    def kind(self) -> str:
        # bool is a subclass of int, so check it first
        for typ, name in _SCALAR_KINDS.items():
            if type(self.value) is typ:
                return name
        raise BadParameter(f"unsupported parameter type {type(self.value)}")

    def validate(self):
        kind = self.kind()
        if kind == "float" and not np.isfinite(self.value):
            raise BadParameter("float parameter must be finite")


@dataclass(frozen=True)
class NodeDecl:
    path: str
    usage: Usage


@dataclass
class ModelTree:
    """The declared node skeleton copied into every new shot."""

    nodes: list = field(default_factory=list)

    def declare(self, path: str, usage: Usage) -> "ModelTree":
        self.nodes.append(NodeDecl(normalize_path(path), Usage(usage)))
        return self

    def validate(self):
        seen = {}
        for decl in self.nodes:
            try:
                canon = normalize_path(decl.path)
            except InvalidPath as e:
                raise InvalidModel(str(e)) from e
            if canon in seen:
                raise InvalidModel(f"duplicate node {canon}")
            seen[canon] = decl.usage
        if ROOT not in seen:
            raise InvalidModel("model must declare \\TOP")
        for canon in seen:
            parent = parent_path(canon)
            if parent is not None and parent not in seen:
                raise InvalidModel(f"parent {parent} of {canon} not declared")

    def to_json(self) -> list:
        return [{"path": d.path, "usage": d.usage.value} for d in self.nodes]

    @classmethod
    def from_json(cls, data: list) -> "ModelTree":
        m = cls()
        for item in data:
            m.declare(item["path"], Usage(item["usage"]))
        return m


@dataclass(frozen=True)
class LogEntry:
    id: int
    shot_number: int
    author: str
    body: str
    time_us: int


# --------------------------------------------------------------------------
# Shot tree
# --------------------------------------------------------------------------

class TreeState(str, Enum):
    OPEN = "OPEN"
    FINALIZED = "FINALIZED"


class _Node:
    __slots__ = ("usage", "writes", "signal", "parameter", "units", "blob")

    def __init__(self, usage: Usage):
        self.usage = usage
        self.writes = 0
        self.signal = None       # in-memory Signal, if loaded/written
        self.parameter = None    # Parameter
        self.units = ""
        self.blob = None         # blob filename for signals on disk


class ShotTree:
    """One shot's data, backed by a directory under the store.

    Single-writer: mutation must come from one thread at a time.  FINALIZED
    trees are immutable and safe to read concurrently.
    """

    def __init__(self, shot_number: int, directory: Path, model: ModelTree,
                 created_at_us: int = 0, sink=None, write_hooks=None):
        self.shot_number = shot_number
        self.directory = Path(directory)
        self.state = TreeState.OPEN
        self.created_at_us = int(created_at_us)
        self.finalized_at_us = None
        self._sink = sink
        self._write_hooks = list(write_hooks or [])
        self._nodes = {}
        for decl in model.nodes:
            self._nodes[decl.path] = _Node(decl.usage)

    # -- lookups -----------------------------------------------------------

    def _node(self, path: str) -> "_Node":
        canon = normalize_path(path)
        node = self._nodes.get(canon)
        if node is None:
            raise NoSuchNode(f"{canon} not declared in shot {self.shot_number}")
        return node

    def paths(self) -> list:
        return sorted(self._nodes)

    def usage_of(self, path: str) -> Usage:
        return self._node(path).usage

    def has_data(self, path: str) -> bool:
        node = self._node(path)
        if node.usage == Usage.SIGNAL:
            return node.signal is not None or node.blob is not None
        if node.usage == Usage.PARAMETER:
            return node.parameter is not None
        return False

    def walk(self, pattern: str) -> list:
        return glob_paths(self._nodes.keys(), pattern)

    # -- writes ------------------------------------------------------------

    def _check_writable(self):
        if self.state is not TreeState.OPEN:
            raise Finalized(f"shot {self.shot_number} is finalized")

    def _notify_write(self, path: str):
        if self._sink is not None:
            self._sink.post(EVENT_TREE_WRITE,
                            f"{self.shot_number}:{path}".encode())
        for hook in self._write_hooks:
            hook(self, path)

    def put_signal(self, path: str, signal: Signal):
        self._check_writable()
        canon = normalize_path(path)
        node = self._node(canon)
        if node.usage is not Usage.SIGNAL:
            raise UsageMismatch(f"{canon} is declared {node.usage.value}")
        if not isinstance(signal, Signal):
            raise BadSignal(f"expected Signal, got {type(signal)}")
        signal.validate()
        blob_name = path_slug(canon) + ".sig"
        tb = signal.timebase
        if isinstance(tb, UniformTimebase):
            data = sigfile.encode_uniform(tb.t0_us, tb.dt_us, signal.samples)
        else:
            data = sigfile.encode_explicit(tb.times, signal.samples)
        try:
            (self.directory / blob_name).write_bytes(data)
        except OSError as e:
            raise StorageError(f"writing {blob_name}: {e}") from e
        node.signal = signal
        node.units = signal.units
        node.blob = blob_name
        node.writes += 1
        self._notify_write(canon)

    def get_signal(self, path: str) -> Signal:
        canon = normalize_path(path)
        node = self._node(canon)
        if node.usage is not Usage.SIGNAL:
            raise UsageMismatch(f"{canon} is declared {node.usage.value}")
        if node.signal is not None:
            return node.signal
        if node.blob is None:
            raise NoData(f"{canon} has no data")
        kind, tbf, samples = sigfile.decode((self.directory / node.blob).read_bytes())
        if kind == sigfile.KIND_UNIFORM:
            tb = UniformTimebase(tbf[0], tbf[1], samples.size)
        else:
            tb = ExplicitTimebase(tbf)
        sig = Signal(tb, samples, node.units)
        node.signal = sig
        return sig

    def put_parameter(self, path: str, parameter: Parameter):
        self._check_writable()
        canon = normalize_path(path)
        node = self._node(canon)
        if node.usage is not Usage.PARAMETER:
            raise UsageMismatch(f"{canon} is declared {node.usage.value}")
        if not isinstance(parameter, Parameter):
            raise BadParameter(f"expected Parameter, got {type(parameter)}")
        parameter.validate()
        node.parameter = parameter
        node.writes += 1
        self._notify_write(canon)

    def get_parameter(self, path: str) -> Parameter:
        canon = normalize_path(path)
        node = self._node(canon)
        if node.usage is not Usage.PARAMETER:
            raise UsageMismatch(f"{canon} is declared {node.usage.value}")
        if node.parameter is None:
            raise NoData(f"{canon} has no data")
        return node.parameter

    def finalize(self, at_us: Optional[int] = None):
        if self.state is TreeState.FINALIZED:
            raise AlreadyFinalized(f"shot {self.shot_number} already finalized")
        self.state = TreeState.FINALIZED
        self.finalized_at_us = int(at_us) if at_us is not None else None
        self._write_manifest()
        if self._sink is not None:
            self._sink.post(EVENT_SHOT_DONE, str(self.shot_number).encode())

    # -- persistence -------------------------------------------------------

    def _manifest(self) -> dict:
        nodes = []
        for path in sorted(self._nodes):
            node = self._nodes[path]
            entry = {"path": path, "usage": node.usage.value}
            if node.writes:
                entry["writes"] = node.writes
            if node.usage is Usage.SIGNAL and node.blob is not None:
                entry["file"] = node.blob
                entry["units"] = node.units
            if node.usage is Usage.PARAMETER and node.parameter is not None:
                entry["value"] = node.parameter.value
                entry["kind"] = node.parameter.kind()
                entry["units"] = node.parameter.units
            nodes.append(entry)
        return {
            "format": "pulselab-shot/1",
            "shot": self.shot_number,
            "state": self.state.value,
            "created_at_us": self.created_at_us,
            "finalized_at_us": self.finalized_at_us,
            "nodes": nodes,
        }

    def _write_manifest(self):
        text = json.dumps(self._manifest(), indent=2, sort_keys=True)
        try:
            (self.directory / "manifest.json").write_text(text + "\n")
        except OSError as e:
            raise StorageError(f"writing manifest: {e}") from e


_PARAM_COERCE = {
    "int": int,
    "float": float,
    "text": str,
    "bool": bool,
}


# --------------------------------------------------------------------------
# Store
# --------------------------------------------------------------------------

class ShotStore:
    """Root directory holding shot directories and the logbook."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.shots_dir = self.root / "shots"
        self.shots_dir.mkdir(parents=True, exist_ok=True)
        self._logbook = self.root / "logbook.jsonl"
        self._log_lock = threading.Lock()
        self._next_log_id = self._scan_log_ids() + 1
        self._write_hooks = []

    def add_write_hook(self, hook: Callable):
        """hook(tree, path) is called after every successful tree write."""
        self._write_hooks.append(hook)

    def _shot_dir(self, shot_number: int) -> Path:
        return self.shots_dir / f"{shot_number:06d}"

    def list_shots(self) -> list:
        out = []
        for p in self.shots_dir.iterdir():
            if p.is_dir() and p.name.isdigit():
                out.append(int(p.name))
        return sorted(out)

    def next_shot_number(self) -> int:
        shots = self.list_shots()
        return (shots[-1] + 1) if shots else 1

    def create_shot(self, model: ModelTree, shot_number: int, *,
                    created_at_us: int = 0, sink=None) -> ShotTree:
        if shot_number < 1:
            raise InvalidModel(f"shot number must be positive, got {shot_number}")
        model.validate()
        directory = self._shot_dir(shot_number)
        if directory.exists():
            raise DuplicateShot(f"shot {shot_number} already exists")
        try:
            directory.mkdir(parents=True)
        except OSError as e:
            raise StorageError(f"creating {directory}: {e}") from e
        tree = ShotTree(shot_number, directory, model,
                        created_at_us=created_at_us, sink=sink,
                        write_hooks=self._write_hooks)
        tree._write_manifest()
        return tree

    def open_shot(self, shot_number: int, *, sink=None) -> ShotTree:
        directory = self._shot_dir(shot_number)
        manifest_file = directory / "manifest.json"
        if not manifest_file.exists():
            raise NoSuchShot(f"shot {shot_number} not found")
        manifest = json.loads(manifest_file.read_text())
        model = ModelTree()
        for entry in manifest["nodes"]:
            model.declare(entry["path"], Usage(entry["usage"]))
        tree = ShotTree(shot_number, directory, model,
                        created_at_us=manifest["created_at_us"], sink=sink,
                        write_hooks=self._write_hooks)
        tree.state = TreeState(manifest["state"])
        tree.finalized_at_us = manifest["finalized_at_us"]
        for entry in manifest["nodes"]:
            node = tree._nodes[entry["path"]]
            node.writes = entry.get("writes", 0)
            if "file" in entry:
                node.blob = entry["file"]
                node.units = entry.get("units", "")
            if "value" in entry:
                coerce = _PARAM_COERCE[entry["kind"]]
                node.parameter = Parameter(coerce(entry["value"]),
                                           entry.get("units", ""))
        return tree

    # -- logbook -----------------------------------------------------------

    def _scan_log_ids(self) -> int:
        if not self._logbook.exists():
            return 0
        last = 0
        with self._logbook.open() as f:
            for line in f:
                line = line.strip()
                if line:
                    last = max(last, json.loads(line)["id"])
        return last

    def logbook_add(self, shot_number: int, author: str, body: str,
                    time_us: int = 0) -> int:
        if not body or not body.strip():
            raise EmptyBody("logbook entry body must be non-empty")
        with self._log_lock:
            entry_id = self._next_log_id
            self._next_log_id += 1
            record = {"id": entry_id, "shot": int(shot_number),
                      "author": author, "body": body, "time_us": int(time_us)}
            with self._logbook.open("a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")
        return entry_id

    def logbook_query(self, shot_number: Optional[int] = None) -> list:
        """Entries for one shot (or all of them) in id order."""
        if not self._logbook.exists():
            return []
        out = []
        with self._logbook.open() as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if shot_number is None or rec["shot"] == shot_number:
                    out.append(LogEntry(rec["id"], rec["shot"], rec["author"],
                                        rec["body"], rec["time_us"]))
        return out
