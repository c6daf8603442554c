"""Scene directory export/import: PPM images, PGM masks, JSON-lines metadata.

Layout::

    <dir>/images/NNNN.ppm   P6, 8-bit RGB
    <dir>/masks/NNNN.pgm    P5, 8-bit: 0 background, 128 cue, 255 missing sign
    <dir>/meta.jsonl        one object per scene, in index order
"""

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from src.core.errors import DataFormatError
from src.synth.generator import CueType, Subset, SyntheticScene

CUE_LEVEL = 128
MISSING_LEVEL = 255
WHITESPACE = b" \t\r\n"


def encode_ppm(image: np.ndarray) -> bytes:
    """(H, W, 3) floats in [0, 1] -> binary P6 bytes."""
    h, w = image.shape[:2]
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def encode_pgm(values: np.ndarray) -> bytes:
    """(H, W) uint8 levels -> binary P5 bytes."""
    h, w = values.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + values.astype(np.uint8).tobytes()


def _read_token(blob: bytes, offset: int, path: Path) -> tuple[bytes, int]:
    """Skip whitespace and '#' comments, then read one header token."""
    while offset < len(blob):
        if blob[offset:offset + 1] in (b" ", b"\t", b"\r", b"\n"):
            offset += 1
        elif blob[offset:offset + 1] == b"#":
            while offset < len(blob) and blob[offset:offset + 1] != b"\n":
                offset += 1
        else:
            break
    start = offset
    while offset < len(blob) and blob[offset] not in WHITESPACE:
        offset += 1
    if start == offset:
        raise DataFormatError("unexpected end of header", path, start)
    return blob[start:offset], offset


def decode_netpbm(blob: bytes, magic: bytes, channels: int, path: Path) -> np.ndarray:
    """Parse a binary P5/P6 file with maxval 255.

    Raises:
        DataFormatError: Naming the byte offset of the first bad field
    """
    if blob[:2] != magic:
        raise DataFormatError(f"bad magic, expected {magic.decode()}", path, 0)

    offset = 2
    fields = []
    starts = []
    for label in ("width", "height", "maxval"):
        token, end = _read_token(blob, offset, path)
        if not token.isdigit():
            raise DataFormatError(f"{label} is not a number", path, end - len(token))
        fields.append(int(token))
        starts.append(end - len(token))
        offset = end
    width, height, maxval = fields
    if maxval != 255:
        raise DataFormatError(f"maxval {maxval} unsupported (expected 255)", path, starts[2])
    if offset >= len(blob) or blob[offset] not in WHITESPACE:
        raise DataFormatError("missing whitespace before pixel data", path, offset)
    offset += 1

    expected = width * height * channels
    if len(blob) - offset != expected:
        raise DataFormatError(f"pixel data has {len(blob) - offset} bytes, expected {expected}", path, offset)
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=offset)
    return pixels.reshape(height, width, channels) if channels > 1 else pixels.reshape(height, width)


def export_scenes(scenes: Sequence[SyntheticScene], out_dir: Path) -> None:
    """Write scenes to ``out_dir`` (created if missing)."""
    images_dir = out_dir / "images"
    masks_dir = out_dir / "masks"
    images_dir.mkdir(parents=True, exist_ok=True)
    masks_dir.mkdir(parents=True, exist_ok=True)

    lines = []
    for i, scene in enumerate(scenes):
        stem = f"{i:04d}"
        (images_dir / f"{stem}.ppm").write_bytes(encode_ppm(scene.image))

        levels = np.zeros(scene.cue_mask.shape, dtype=np.uint8)
        levels[scene.cue_mask] = CUE_LEVEL
        levels[scene.missing_mask] = MISSING_LEVEL
        (masks_dir / f"{stem}.pgm").write_bytes(encode_pgm(levels))

        lines.append(json.dumps({
            "index": i,
            "cue_type": scene.cue_type.value,
            "subset": scene.subset.value,
            "boxes": [list(b) for b in scene.sign_boxes],
            "missing_boxes": [list(b) for b in scene.missing_boxes],
            "seed": scene.seed,
        }, sort_keys=True))

    (out_dir / "meta.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")


def import_scenes(in_dir: Path) -> list[SyntheticScene]:
    """Read a directory written by ``export_scenes``.

    Image values come back quantized to multiples of 1/255; masks are exact.

    Raises:
        DataFormatError: On malformed images, masks or metadata
        FileNotFoundError: If the directory or a referenced file is missing
    """
    meta_path = in_dir / "meta.jsonl"
    scenes = []
    offset = 0
    for line in meta_path.read_bytes().splitlines(keepends=True):
        text = line.strip()
        if not text:
            offset += len(line)
            continue
        try:
            meta = json.loads(text)
            index = int(meta["index"])
            cue_type = CueType(meta["cue_type"])
            subset = Subset(meta["subset"])
        except (ValueError, KeyError, TypeError) as e:
            raise DataFormatError(f"bad metadata line ({e})", meta_path, offset) from e
        offset += len(line)

        stem = f"{index:04d}"
        image_path = in_dir / "images" / f"{stem}.ppm"
        mask_path = in_dir / "masks" / f"{stem}.pgm"
        image = decode_netpbm(image_path.read_bytes(), b"P6", 3, image_path).astype(np.float64) / 255.0
        levels = decode_netpbm(mask_path.read_bytes(), b"P5", 1, mask_path)

        scenes.append(SyntheticScene(
            image=image,
            cue_type=cue_type,
            cue_mask=levels == CUE_LEVEL,
            sign_boxes=[tuple(b) for b in meta.get("boxes", [])],
            missing_mask=levels == MISSING_LEVEL,
            subset=subset,
            seed=int(meta["seed"]),
            missing_boxes=[tuple(b) for b in meta.get("missing_boxes", [])],
        ))
    return scenes
