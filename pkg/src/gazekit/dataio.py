"""On-disk formats: frame datasets, eye crops, and trained models.

Dataset layout::

    <dir>/frames.jsonl        one JSON object per frame
    <dir>/crops/<subject>/<frame_index>.pgm   8-bit binary (P5) eye crops
    <dir>/manifest.json       counts, seed, content digests

A frame object carries ``subject_id`` (string), ``frame_index`` (int),
``label`` (one of the six region names), ``landmarks`` (flat array of 136
numbers, x0, y0, x1, y1, ...), ``eye_crop`` (path relative to the JSONL
file), and ``eye_polygon`` (flat array of 12 numbers). A line that is
missing, malformed, or fails validation is reported as a face-detection
failure rather than aborting the stream; frame invariants are enforced here,
at parse time.

Model files are little-endian throughout: magic ``GZKF``, a u16 format
version, a fixed header (forest configuration, class order, feature
dimension, training digest), then each tree as a preorder node stream.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .core import (
    DataFormatError,
    FrameRecord,
    GazeRegion,
    GrayImage,
    Landmarks,
    region_from_name,
)
from .forest import ForestConfig, ForestModel, Leaf, Split, TrainingDigest, TreeNode

__all__ = [
    "write_pgm",
    "read_pgm",
    "frame_to_obj",
    "parse_frame_obj",
    "ParsedLine",
    "iter_dataset",
    "write_dataset",
    "load_manifest",
    "MODEL_MAGIC",
    "MODEL_VERSION",
    "save_model",
    "load_model",
    "model_bytes",
]

MODEL_MAGIC = b"GZKF"
MODEL_VERSION = 1


# ---------------------------------------------------------------------------
# PGM (P5) eye crops
# ---------------------------------------------------------------------------

def write_pgm(path, image: GrayImage):
    path = Path(path)
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    path.write_bytes(header + image.pixels.tobytes())


def read_pgm(path) -> GrayImage:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise DataFormatError(f"{path}: not a binary PGM (P5) file")
    # Header = magic, width, height, maxval as whitespace-separated tokens;
    # '#' starts a comment running to end of line.
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(data):
            raise DataFormatError(f"{path}: truncated PGM header")
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif ch.isdigit():
            end = pos
            while end < len(data) and data[end : end + 1].isdigit():
                end += 1
            tokens.append(int(data[pos:end]))
            pos = end
        else:
            raise DataFormatError(f"{path}: unexpected byte in PGM header: {ch!r}")
    width, height, maxval = tokens
    if maxval != 255:
        raise DataFormatError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    pos += 1  # single whitespace byte after maxval
    pixels = data[pos : pos + width * height]
    if len(pixels) != width * height:
        raise DataFormatError(f"{path}: PGM payload truncated")
    return GrayImage.from_bytes(width, height, pixels)


# ---------------------------------------------------------------------------
# Frame records (JSONL)
# ---------------------------------------------------------------------------

def frame_to_obj(record: FrameRecord, crop_relpath: str) -> dict:
    return {
        "subject_id": record.subject_id,
        "frame_index": record.frame_index,
        "label": record.label.value,
        "landmarks": [float(v) for v in record.landmarks.points.reshape(-1)],
        "eye_crop": crop_relpath,
        "eye_polygon": [float(v) for v in record.eye_polygon.reshape(-1)],
    }


def parse_frame_obj(obj: dict, base_dir: Path) -> FrameRecord:
    """Build a validated FrameRecord from one JSON object.

    Raises DataFormatError on any structural problem; type invariants are
    checked by the record constructors themselves.
    """
    if not isinstance(obj, dict):
        raise DataFormatError("frame record must be a JSON object")
    try:
        subject_id = obj["subject_id"]
        frame_index = obj["frame_index"]
        label_name = obj["label"]
        landmarks_flat = obj["landmarks"]
        crop_rel = obj["eye_crop"]
        polygon_flat = obj["eye_polygon"]
    except KeyError as missing:
        raise DataFormatError(f"frame record missing field {missing}") from None
    if not isinstance(subject_id, str) or not isinstance(frame_index, int):
        raise DataFormatError("subject_id must be a string and frame_index an integer")
    if not isinstance(landmarks_flat, list) or len(landmarks_flat) != 136:
        raise DataFormatError("landmarks must be a flat array of 136 numbers")
    if not isinstance(polygon_flat, list) or len(polygon_flat) != 12:
        raise DataFormatError("eye_polygon must be a flat array of 12 numbers")
    try:
        points = np.array(landmarks_flat, dtype=np.float64).reshape(68, 2)
        polygon = np.array(polygon_flat, dtype=np.float64).reshape(6, 2)
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"non-numeric landmark data: {exc}") from None
    crop = read_pgm(base_dir / crop_rel)
    return FrameRecord(
        subject_id=subject_id,
        frame_index=frame_index,
        landmarks=Landmarks(points),
        eye_crop=crop,
        eye_polygon=polygon,
        label=region_from_name(label_name),
    )


@dataclass(frozen=True)
class ParsedLine:
    """One dataset line: a valid record, or a face-detection failure."""

    line_number: int
    record: FrameRecord | None
    error: str | None = None


def iter_dataset(jsonl_path) -> Iterator[ParsedLine]:
    """Stream a dataset, turning unusable lines into NoFace entries."""
    jsonl_path = Path(jsonl_path)
    base_dir = jsonl_path.parent
    with jsonl_path.open("r", encoding="utf-8") as stream:
        for line_number, line in enumerate(stream, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                record = parse_frame_obj(obj, base_dir)
            except (DataFormatError, json.JSONDecodeError, OSError) as exc:
                yield ParsedLine(line_number, None, error=str(exc))
                continue
            yield ParsedLine(line_number, record)


def write_dataset(out_dir, frames: Iterable, meta: dict | None = None) -> dict:
    """Write generated frames as a dataset directory; returns the manifest.

    ``frames`` yields :class:`gazekit.synth.GeneratedFrame` objects. Frames
    whose face detection failed become deliberately unparseable lines
    (``landmarks: null``) so downstream attrition accounting sees them.
    """
    out_dir = Path(out_dir)
    crops_dir = out_dir / "crops"
    out_dir.mkdir(parents=True, exist_ok=True)
    crops_dir.mkdir(exist_ok=True)

    jsonl_path = out_dir / "frames.jsonl"
    crop_hash = hashlib.sha256()
    total = 0
    face_failures = 0
    subjects: dict[str, int] = {}
    with jsonl_path.open("w", encoding="utf-8") as stream:
        for frame in frames:
            total += 1
            subjects[frame.subject_id] = subjects.get(frame.subject_id, 0) + 1
            if frame.record is None:
                face_failures += 1
                obj = {
                    "subject_id": frame.subject_id,
                    "frame_index": frame.frame_index,
                    "label": frame.label.value,
                    "landmarks": None,
                }
            else:
                subject_dir = crops_dir / frame.subject_id
                subject_dir.mkdir(exist_ok=True)
                rel = f"crops/{frame.subject_id}/{frame.frame_index:06d}.pgm"
                write_pgm(out_dir / rel, frame.record.eye_crop)
                crop_hash.update(rel.encode("utf-8"))
                crop_hash.update((out_dir / rel).read_bytes())
                obj = frame_to_obj(frame.record, rel)
            stream.write(json.dumps(obj) + "\n")

    manifest = {
        "format": "gazekit-dataset",
        "version": 1,
        "total_frames": total,
        "face_failures": face_failures,
        "subjects": subjects,
        "frames_sha256": hashlib.sha256(jsonl_path.read_bytes()).hexdigest(),
        "crops_sha256": crop_hash.hexdigest(),
    }
    if meta:
        manifest["meta"] = meta
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest


def load_manifest(dataset_dir) -> dict:
    return json.loads((Path(dataset_dir) / "manifest.json").read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<IIIIQBIHQd")
# n_trees, max_depth, features_per_split (0 = auto), min_samples_leaf,
# rng_seed, bootstrap, feature_dim, n_classes, digest_seed, coverage

_NODE_TAG_LEAF = 0
_NODE_TAG_SPLIT = 1


def _write_tree(parts: list[bytes], node: TreeNode, n_classes: int) -> int:
    count = 0
    stack = [node]
    while stack:
        current = stack.pop()
        count += 1
        if isinstance(current, Leaf):
            parts.append(struct.pack("<B", _NODE_TAG_LEAF))
            parts.append(struct.pack(f"<{n_classes}d", *current.class_fractions))
        else:
            parts.append(struct.pack("<Bid", _NODE_TAG_SPLIT, current.feature_index, current.threshold))
            stack.append(current.right)  # preorder: left subtree first
            stack.append(current.left)
    return count


def _read_tree(view: memoryview, offset: int, n_classes: int) -> tuple[TreeNode, int]:
    leaf_size = 8 * n_classes
    pending: list[list] = []  # [feature, threshold] or [feature, threshold, left]

    while True:
        tag = view[offset]
        offset += 1
        if tag == _NODE_TAG_SPLIT:
            feature, threshold = struct.unpack_from("<id", view, offset)
            offset += 12
            pending.append([feature, threshold])
            continue
        if tag != _NODE_TAG_LEAF:
            raise DataFormatError(f"corrupt model: unknown node tag {tag}")
        fractions = np.frombuffer(view, dtype="<f8", count=n_classes, offset=offset)
        offset += leaf_size
        node: TreeNode = Leaf(fractions.copy())
        # Fold the completed subtree into its ancestors: a split missing its
        # left child takes it and waits for the right subtree; a split with
        # both children is itself complete and folds further up.
        while pending:
            frame = pending[-1]
            if len(frame) == 2:
                frame.append(node)
                break
            pending.pop()
            node = Split(frame[0], float(frame[1]), frame[2], node)
        else:
            return node, offset


def model_bytes(model: ForestModel) -> bytes:
    """Serialize a model to the portable little-endian format."""
    cfg = model.config
    digest = model.training_digest
    parts: list[bytes] = [
        MODEL_MAGIC,
        struct.pack("<H", MODEL_VERSION),
        _HEADER.pack(
            cfg.n_trees,
            cfg.max_depth,
            cfg.features_per_split or 0,
            cfg.min_samples_leaf,
            cfg.rng_seed & ((1 << 64) - 1),
            1 if cfg.bootstrap else 0,
            model.feature_dim,
            model.n_classes,
            digest.rng_seed & ((1 << 64) - 1),
            digest.bootstrap_coverage,
        ),
    ]
    for label in model.class_order:
        name = label.value if isinstance(label, GazeRegion) else str(label)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(struct.pack(f"<{model.n_classes}Q", *digest.class_counts))
    for tree in model.trees:
        tree_parts: list[bytes] = []
        count = _write_tree(tree_parts, tree, model.n_classes)
        parts.append(struct.pack("<I", count))
        parts.extend(tree_parts)
    return b"".join(parts)


def save_model(model: ForestModel, path):
    Path(path).write_bytes(model_bytes(model))


def load_model(path) -> ForestModel:
    data = Path(path).read_bytes()
    view = memoryview(data)
    if data[:4] != MODEL_MAGIC:
        raise DataFormatError(f"{path}: not a gazekit model file")
    try:
        return _parse_model(path, data, view)
    except (struct.error, ValueError, IndexError) as exc:
        raise DataFormatError(f"{path}: corrupt model file ({exc})") from exc


def _parse_model(path, data: bytes, view: memoryview) -> ForestModel:
    (version,) = struct.unpack_from("<H", view, 4)
    if version != MODEL_VERSION:
        raise DataFormatError(f"{path}: unsupported model version {version}")
    offset = 6
    (
        n_trees,
        max_depth,
        features_per_split,
        min_samples_leaf,
        rng_seed,
        bootstrap,
        feature_dim,
        n_classes,
        digest_seed,
        coverage,
    ) = _HEADER.unpack_from(view, offset)
    offset += _HEADER.size

    names = []
    for _ in range(n_classes):
        (length,) = struct.unpack_from("<H", view, offset)
        offset += 2
        names.append(bytes(view[offset : offset + length]).decode("utf-8"))
        offset += length
    counts = struct.unpack_from(f"<{n_classes}Q", view, offset)
    offset += 8 * n_classes

    trees = []
    for _ in range(n_trees):
        (node_count,) = struct.unpack_from("<I", view, offset)
        offset += 4
        tree, offset = _read_tree(view, offset, n_classes)
        if _count_nodes(tree) != node_count:
            raise DataFormatError(f"{path}: tree node count mismatch")
        trees.append(tree)
    if offset != len(data):
        raise DataFormatError(f"{path}: trailing bytes after model payload")

    try:
        class_order: tuple = tuple(region_from_name(name) for name in names)
    except DataFormatError:
        class_order = tuple(names)
    cfg = ForestConfig(
        n_trees=n_trees,
        max_depth=max_depth,
        features_per_split=features_per_split or None,
        min_samples_leaf=min_samples_leaf,
        rng_seed=rng_seed,
        bootstrap=bool(bootstrap),
    )
    digest = TrainingDigest(
        class_counts=tuple(int(c) for c in counts),
        rng_seed=digest_seed,
        bootstrap_coverage=float(coverage),
    )
    return ForestModel(
        config=cfg,
        trees=tuple(trees),
        feature_dim=feature_dim,
        class_order=class_order,
        training_digest=digest,
    )


def _count_nodes(node: TreeNode) -> int:
    stack = [node]
    count = 0
    while stack:
        current = stack.pop()
        count += 1
        if isinstance(current, Split):
            stack.append(current.left)
            stack.append(current.right)
    return count
