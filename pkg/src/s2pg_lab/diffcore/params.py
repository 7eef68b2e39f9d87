"""Named parameters packed into one flat float64 buffer, plus checkpoint IO.

Checkpoint layout::

    S2PGCKPT 1\\n
    {json header}\\n
    <little-endian float64 payload>

The header lists dtype, byte order, every parameter's name/shape/offset and an
optional architecture descriptor supplied by the caller.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from s2pg_lab.diffcore.tensor import NumericError, ShapeError, Tape, Tensor

__all__ = ["ParameterStore", "save_checkpoint", "load_checkpoint"]

_MAGIC = b"S2PGCKPT 1\n"


class ParameterStore:
    """Ordered collection of named float64 arrays sharing one flat buffer.

    Add parameters, then :meth:`seal`. After sealing, every parameter is a view
    into :attr:`flat`, so optimizers and Polyak averaging work on one vector.
    """

    def __init__(self):
        self._pending: list[tuple[str, np.ndarray]] = []
        self._slices: dict[str, tuple[int, tuple[int, ...]]] = {}
        self._flat: np.ndarray | None = None
        self._views: dict[str, np.ndarray] = {}

    # construction
    def add(self, name: str, value) -> None:
        if self._flat is not None:
            raise RuntimeError("ParameterStore is sealed")
        if any(n == name for n, _ in self._pending):
            raise KeyError(f"duplicate parameter {name!r}")
        self._pending.append((name, np.array(value, dtype=np.float64)))

    def seal(self) -> "ParameterStore":
        if self._flat is not None:
            return self
        total = int(np.sum([v.size for _, v in self._pending], dtype=np.int64))
        self._flat = np.zeros(total)
        offset = 0
        for name, value in self._pending:
            self._slices[name] = (offset, value.shape)
            self._flat[offset:offset + value.size] = value.ravel()
            offset += value.size
        self._pending = []
        self._rebuild_views()
        return self

    def _rebuild_views(self):
        self._views = {
            name: self._flat[off:off + int(np.prod(shape, dtype=np.int64))].reshape(shape)
            for name, (off, shape) in self._slices.items()
        }

    def _sealed(self) -> np.ndarray:
        if self._flat is None:
            raise RuntimeError("ParameterStore must be sealed first")
        return self._flat

    # access
    @property
    def names(self) -> list[str]:
        self._sealed()
        return list(self._slices)

    @property
    def size(self) -> int:
        return self._sealed().size

    @property
    def flat(self) -> np.ndarray:
        """The live flat buffer (mutating it mutates every parameter)."""
        return self._sealed()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        self._sealed()
        return {name: shape for name, (_, shape) in self._slices.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        self._sealed()
        return self._views[name]

    def __contains__(self, name: str) -> bool:
        return name in self._slices

    def __iter__(self) -> Iterator[str]:
        return iter(self.names)

    def items(self):
        self._sealed()
        return self._views.items()

    # flat <-> named
    def flatten(self) -> np.ndarray:
        return self._sealed().copy()

    def unflatten(self, vector) -> dict[str, np.ndarray]:
        """Split a flat vector into named arrays (copies, not views of the store)."""
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ShapeError(f"expected flat vector of length {self.size}, got {vec.shape}")
        vec = vec.copy()
        return {
            name: vec[off:off + int(np.prod(shape, dtype=np.int64))].reshape(shape)
            for name, (off, shape) in self._slices.items()
        }

    def flatten_map(self, named: Mapping[str, np.ndarray]) -> np.ndarray:
        """Pack a name->array mapping (e.g. a gradient map) in store order."""
        out = np.zeros(self.size)
        for name, (off, shape) in self._slices.items():
            if name not in named:
                continue
            arr = np.asarray(named[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name}: shape {arr.shape} != {shape}")
            out[off:off + arr.size] = arr.ravel()
        return out

    def load_flat(self, vector) -> None:
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ShapeError(f"expected flat vector of length {self.size}, got {vec.shape}")
        if not np.isfinite(vec).all():
            raise NumericError("refusing to load non-finite parameters")
        self._flat[:] = vec

    def copy(self) -> "ParameterStore":
        other = ParameterStore()
        other._slices = dict(self._slices)
        other._flat = self._sealed().copy()
        other._rebuild_views()
        return other

    def slice_of(self, name: str) -> slice:
        off, shape = self._slices[name]
        return slice(off, off + int(np.prod(shape, dtype=np.int64)))

    def watch(self, tape: Tape, prefix: str = "") -> dict[str, Tensor]:
        """Register every parameter as a leaf of ``tape``."""
        return {name: tape.watch(view, prefix + name) for name, view in self.items()}

    def constants(self) -> dict[str, Tensor]:
        """Every parameter as a non-differentiable tensor."""
        return {name: Tensor(view) for name, view in self.items()}

    def manifest(self) -> list[dict]:
        return [
            {"name": name, "shape": list(shape), "offset": off}
            for name, (off, shape) in self._slices.items()
        ]


def save_checkpoint(store: ParameterStore, path, architecture: Mapping | None = None) -> Path:
    path = Path(path)
    header = {
        "dtype": "<f8",
        "byte_order": "little",
        "size": store.size,
        "params": store.manifest(),
        "architecture": dict(architecture or {}),
    }
    payload = store.flatten().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)
    return path


def load_checkpoint(path) -> tuple[ParameterStore, dict]:
    """Rebuild a sealed store from disk; returns (store, architecture descriptor)."""
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic {magic[:16]!r})")
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    if header.get("dtype") != "<f8":
        raise ValueError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if flat.size != header["size"]:
        raise ValueError(f"{path}: payload has {flat.size} values, header says {header['size']}")
    store = ParameterStore()
    for entry in sorted(header["params"], key=lambda e: e["offset"]):
        n = int(np.prod(entry["shape"], dtype=np.int64))
        store.add(entry["name"], flat[entry["offset"]:entry["offset"] + n].reshape(entry["shape"]))
    store.seal()
    return store, header.get("architecture", {})
