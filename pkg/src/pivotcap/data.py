"""Dataset loading for emitted corpora.

A dataset directory is what `corpus.emit_dataset` produces: a manifest.json
naming the splits and their files, two vocabulary JSON files, and six aligned
JSONL files per split where line i of every file describes the same scene.
Loading validates every structure so malformed records fail at the boundary
with line numbers rather than deep inside training.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from typing import Dict, List

from .structures import (
    CaptionSequence,
    ConstituencyTree,
    SceneGraph,
    Vocabulary,
    caption_from_record,
    read_jsonl,
    sc_from_record,
    sg_from_record,
    validate_constituency_tree,
    validate_scene_graph,
)

MANIFEST_NAME = "manifest.json"


@dataclass
class Example:
    """One scene in every view the pipeline consumes.

    visual_sg carries node features (the stand-in for an image); language_sg
    is the feature-free graph mirroring the pivot caption. Captions are
    already encoded to id sequences with sentinel tokens.
    """

    visual_sg: SceneGraph
    language_sg: SceneGraph
    pivot: CaptionSequence
    pivot_tree: ConstituencyTree
    target: CaptionSequence
    target_tree: ConstituencyTree


@dataclass
class Dataset:
    root: str
    manifest: dict
    pivot_vocab: Vocabulary
    target_vocab: Vocabulary
    splits: Dict[str, List[Example]]

    def split(self, name: str) -> List[Example]:
        if name not in self.splits:
            raise KeyError(f"dataset has no split {name!r}; available: {sorted(self.splits)}")
        return self.splits[name]


def _file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def load_dataset(root: str, verify_hashes: bool = True) -> Dataset:
    """Read a dataset directory back into memory.

    verify_hashes re-hashes every data file against the manifest so silent
    edits surface immediately; disable it only for very large corpora.
    """
    manifest_path = os.path.join(root, MANIFEST_NAME)
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {root!r}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    for key in ("version", "splits", "file_sha256", "vocab"):
        if key not in manifest:
            raise ValueError(f"manifest missing {key!r}")

    if verify_hashes:
        for rel, digest in manifest["file_sha256"].items():
            path = os.path.join(root, rel)
            if not os.path.isfile(path):
                raise FileNotFoundError(f"manifest names missing file {rel!r}")
            actual = _file_sha256(path)
            if actual != digest:
                raise ValueError(
                    f"checksum mismatch for {rel!r}: manifest {digest[:12]}..., file {actual[:12]}..."
                )

    pivot_vocab = Vocabulary.from_file(os.path.join(root, manifest["vocab"]["pivot"]))
    target_vocab = Vocabulary.from_file(os.path.join(root, manifest["vocab"]["target"]))

    splits: Dict[str, List[Example]] = {}
    for split_name, entry in manifest["splits"].items():
        def rows(rel):
            return read_jsonl(os.path.join(root, rel))

        vsg = [sg_from_record(r, line=i + 1) for i, r in enumerate(rows(entry["scene_graph"]["visual"]))]
        lsg = [sg_from_record(r, line=i + 1) for i, r in enumerate(rows(entry["scene_graph"]["language"]))]
        piv = [caption_from_record(r, line=i + 1) for i, r in enumerate(rows(entry["caption"]["pivot"]))]
        tgt = [caption_from_record(r, line=i + 1) for i, r in enumerate(rows(entry["caption"]["target"]))]
        ptree = [sc_from_record(r, line=i + 1) for i, r in enumerate(rows(entry["constituency"]["pivot"]))]
        ttree = [sc_from_record(r, line=i + 1) for i, r in enumerate(rows(entry["constituency"]["target"]))]
        lengths = {len(vsg), len(lsg), len(piv), len(tgt), len(ptree), len(ttree)}
        if len(lengths) != 1:
            raise ValueError(f"split {split_name!r}: unaligned file lengths {sorted(lengths)}")
        if entry.get("count") is not None and len(vsg) != entry["count"]:
            raise ValueError(
                f"split {split_name!r}: manifest count {entry['count']} but files hold {len(vsg)} rows"
            )
        examples = []
        for i in range(len(vsg)):
            validate_scene_graph(vsg[i])
            validate_scene_graph(lsg[i])
            validate_constituency_tree(ptree[i], tokens=piv[i][1])
            validate_constituency_tree(ttree[i], tokens=tgt[i][1])
            examples.append(
                Example(
                    visual_sg=vsg[i],
                    language_sg=lsg[i],
                    pivot=pivot_vocab.encode(piv[i][1], piv[i][0]),
                    pivot_tree=ptree[i],
                    target=target_vocab.encode(tgt[i][1], tgt[i][0]),
                    target_tree=ttree[i],
                )
            )
        splits[split_name] = examples
    return Dataset(
        root=root,
        manifest=manifest,
        pivot_vocab=pivot_vocab,
        target_vocab=target_vocab,
        splits=splits,
    )


def content_hash(ds: Dataset) -> str:
    """Order-sensitive digest of every data file, for reproducibility records."""
    h = hashlib.sha256()
    for rel in sorted(ds.manifest["file_sha256"]):
        h.update(rel.encode("utf-8"))
        h.update(ds.manifest["file_sha256"][rel].encode("ascii"))
    return h.hexdigest()
