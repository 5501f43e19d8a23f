from __future__ import annotations

import contextlib
import hashlib
import io
import json
import os
import tempfile
import zipfile
import zlib
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

import numpy as np
from PIL import Image

from .errors import ArtifactMissingError, ModelLoadError

CONTAINER_VERSION = 1
# Fixed member timestamp so identical arrays give identical bytes.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


@contextlib.contextmanager
def atomic_write(path: Path, mode: str = "wb") -> Iterator[io.IOBase]:
    """Write to a temp file beside ``path`` and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text(path: Path, text: str) -> Path:
    with atomic_write(path, "w") as fh:
        fh.write(text)
    return Path(path)


def write_json(path: Path, data: Any) -> Path:
    return write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def write_jsonl(path: Path, rows: Iterable[Mapping[str, Any]]) -> Path:
    return write_text(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))


def read_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def write_frame(path: Path, df) -> Path:
    """Write a pandas ``DataFrame`` as CSV through ``atomic_write``."""
    with atomic_write(path, "w") as fh:
        df.to_csv(fh, index=False, lineterminator="\n")
    return Path(path)


def require(path: Path, what: str) -> Path:
    """Return ``path`` or raise a descriptive ``ArtifactMissingError``."""
    path = Path(path)
    if not path.exists():
        raise ArtifactMissingError(f"{what} not found at {path}; run the producing command first")
    return path


def file_sha256(path: Path) -> str:
    """Hash a file without loading it into memory."""
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        while True:
            chunk = fh.read(1024 * 1024)  # 1 MB
            if not chunk:
                break
            digest.update(chunk)
    return digest.hexdigest()


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Return the generator for the named random stream ``name`` at ``index``.

    The same ``(seed, name, index)`` always yields the same draws, independent
    of what other streams have consumed.
    """
    entropy = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    entropy.extend(int(i) for i in index)
    return np.random.default_rng(np.random.SeedSequence(entropy))


# ---------- images ----------

def read_png(path: Path) -> np.ndarray:
    """Load an 8-bit PNG as an ``H x W x 3`` uint8 array (grayscale is expanded)."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_png(path: Path, pixels: np.ndarray) -> Path:
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    with atomic_write(path, "wb") as fh:
        Image.fromarray(arr).save(fh, format="PNG")
    return Path(path)


# ---------- array container ----------

def save_arrays(path: Path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> Path:
    """Save named arrays plus JSON metadata into one zip container.

    Members are ``<name>.npy`` written with ``numpy.lib.format`` and a
    ``meta.json``; ``numpy.load`` can read the result directly.
    """
    payload = dict(meta)
    payload["format_version"] = CONTAINER_VERSION
    with atomic_write(path, "wb") as raw:
        with zipfile.ZipFile(raw, "w", compression=zipfile.ZIP_STORED) as zf:
            info = zipfile.ZipInfo("meta.json", date_time=_ZIP_EPOCH)
            zf.writestr(info, json.dumps(payload, indent=2, sort_keys=True))
            for name in sorted(arrays):
                info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH)
                with zf.open(info, "w", force_zip64=True) as fh:
                    np.lib.format.write_array(fh, np.ascontiguousarray(arrays[name]), allow_pickle=False)
    return Path(path)


def load_arrays(path: Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    if not path.is_file():
        raise ArtifactMissingError(f"container not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            arrays = {}
            for name in zf.namelist():
                if name.endswith(".npy"):
                    with zf.open(name) as fh:
                        arrays[name[:-4]] = np.lib.format.read_array(fh, allow_pickle=False)
    except (zipfile.BadZipFile, KeyError, ValueError) as exc:
        raise ModelLoadError(f"malformed container {path}: {exc}") from exc
    if meta.get("format_version") != CONTAINER_VERSION:
        raise ModelLoadError(
            f"unsupported container version {meta.get('format_version')!r} in {path}"
        )
    return arrays, meta
