"""
Binary checkpoints of #ModelParams.

Layout (all integers little-endian):

```
magic      4 bytes   ASCII "MCDC"
version    u16
records    until end of file, each:
  name_len u16, name (UTF-8)
  dtype    u8        0 = UTF-8 text, 1 = f32, 2 = f64
  rank     u8
  extents  u32 * rank
  data     raw row-major little-endian payload
```

The first record is named `spec` and holds the #ArchitectureSpec as UTF-8 `key = value` lines. It is
followed by one record per parameter tensor, named `<stack>.<layer index>.<weights|bias>`.
"""

import logging
import struct
import typing as t
from pathlib import Path

import numpy as np

from ._errors import FormatError, SpecError
from ._model import ArchitectureSpec, ModelParams, build_model
from ._util import make_rng

logger = logging.getLogger(__name__)

MAGIC = b"MCDC"
FORMAT_VERSION = 1

_TEXT, _F32, _F64 = 0, 1, 2
_DTYPES = {_F32: np.dtype("<f4"), _F64: np.dtype("<f8")}


def _record(name: str, dtype_code: int, extents: t.Sequence[int], payload: bytes) -> bytes:
    encoded = name.encode("utf-8")
    header = struct.pack("<H", len(encoded)) + encoded + struct.pack("<BB", dtype_code, len(extents))
    return header + struct.pack(f"<{len(extents)}I", *extents) + payload


def dump_checkpoint(m: ModelParams) -> bytes:
    spec_text = "".join(f"{key} = {value}\n" for key, value in m.spec.to_items().items()).encode("utf-8")
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION), _record("spec", _TEXT, [len(spec_text)], spec_text)]
    for stack_name, layers in m.stacks().items():
        for index, layer in enumerate(layers):
            if not layer.kind.has_params:
                continue
            for attr in ("weights", "bias"):
                array: np.ndarray = getattr(layer, attr)
                code = _F64 if array.dtype == np.float64 else _F32
                data = np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes()
                parts.append(_record(f"{stack_name}.{index}.{attr}", code, array.shape, data))
    return b"".join(parts)


def save_checkpoint(m: ModelParams, path: t.Union[str, Path]) -> None:
    Path(path).write_bytes(dump_checkpoint(m))
    logger.info("wrote checkpoint %s", path)


class _Reader:
    def __init__(self, data: bytes, path: str) -> None:
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise FormatError(f"truncated file, needed {size} more bytes", self.path, self.offset)
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> t.Tuple[t.Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self, size: int) -> str:
        start = self.offset
        chunk = self.take(size)
        try:
            return chunk.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("invalid UTF-8 text", self.path, start + exc.start) from exc


    def at_end(self) -> bool:
        return self.offset >= len(self.data)


def parse_checkpoint(data: bytes, path: str = "<bytes>") -> ModelParams:
    reader = _Reader(data, path)
    if reader.take(4) != MAGIC:
        raise FormatError("bad magic, expected 'MCDC'", path, 0)
    (version,) = reader.unpack("<H")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", path, 4)

    records: t.Dict[str, t.Tuple[int, t.Any]] = {}
    order: t.List[str] = []
    while not reader.at_end():
        start = reader.offset
        (name_len,) = reader.unpack("<H")
        name = reader.text(name_len)
        dtype_code, rank = reader.unpack("<BB")
        extents = reader.unpack(f"<{rank}I")
        if dtype_code == _TEXT:
            records[name] = (start, reader.text(int(extents[0])))
        elif dtype_code in _DTYPES:
            dtype = _DTYPES[dtype_code]
            payload = reader.take(int(np.prod(extents, dtype=np.int64)) * dtype.itemsize)
            array = np.frombuffer(payload, dtype=dtype).reshape(extents)
            records[name] = (start, array.astype(dtype.newbyteorder("="), copy=True))
        else:
            raise FormatError(f"unknown dtype code {dtype_code} in record {name!r}", path, start)
        order.append(name)

    if not order or order[0] != "spec":
        raise FormatError("the first record must be the 'spec' metadata record", path, 6)
    items = {}
    for line in records["spec"][1].splitlines():
        key, _, value = line.partition("=")
        items[key.strip()] = value.strip()
    try:
        spec = ArchitectureSpec.from_items(items)
        model = build_model(spec, make_rng(0))
    except SpecError as exc:
        raise FormatError(str(exc), path, records["spec"][0]) from exc

    expected = set()
    for stack_name, layers in model.stacks().items():
        for index, layer in enumerate(layers):
            if not layer.kind.has_params:
                continue
            for attr in ("weights", "bias"):
                name = f"{stack_name}.{index}.{attr}"
                expected.add(name)
                if name not in records:
                    raise FormatError(f"missing tensor record {name!r}", path, len(data))
                offset, array = records[name]
                if array.shape != getattr(layer, attr).shape:
                    raise FormatError(f"tensor {name!r} has shape {array.shape}", path, offset)
                setattr(layer, attr, array.astype(spec.precision.dtype, copy=False))
    unexpected = set(order) - expected - {"spec"}
    if unexpected:
        name = sorted(unexpected)[0]
        raise FormatError(f"unexpected record {name!r}", path, records[name][0])
    return model


def load_checkpoint(path: t.Union[str, Path]) -> ModelParams:
    return parse_checkpoint(Path(path).read_bytes(), str(path))
