"""Dataset discovery, per-patient records, dataset doubling and k-fold plans."""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import read_json, write_json
from .errors import DuplicateId, EmptyDataset, TooFewPatients

MID_RT = "midRT"
PRE_RT = "preRT"
PHASE_ORDER = (MID_RT, PRE_RT)

# role -> file pattern relative to the patient directory (named after the id)
DEFAULT_LAYOUT = {
    "mid_img": "midRT/{id}_midRT_T2.nii.gz",
    "mid_gt": "midRT/{id}_midRT_mask.nii.gz",
    "pre_img_registered": "midRT/{id}_preRT_T2_registered.nii.gz",
    "pre_gt_registered": "midRT/{id}_preRT_mask_registered.nii.gz",
    "pre_img_native": "preRT/{id}_preRT_T2.nii.gz",
    "pre_gt_native": "preRT/{id}_preRT_mask.nii.gz",
}
ROLES = tuple(DEFAULT_LAYOUT)


def load_layout(path=None) -> dict[str, str]:
    if path is None:
        return dict(DEFAULT_LAYOUT)
    raw = read_json(path)
    layout = raw.get("roles", raw)
    unknown = set(layout) - set(ROLES)
    if unknown:
        raise ValueError(f"unknown layout roles: {sorted(unknown)}")
    for role, pattern in layout.items():
        if "{id}" not in pattern:
            raise ValueError(f"layout pattern for {role!r} lacks an {{id}} placeholder")
    return {**DEFAULT_LAYOUT, **layout}


@dataclass
class PatientCase:
    patient_id: str
    directory: Path
    paths: dict[str, Path]
    missing: list[str] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.missing

    def __getattr__(self, role):
        # expose roles as attributes: case.mid_img, case.pre_gt_registered, ...
        paths = self.__dict__.get("paths", {})
        if role in paths:
            return paths[role]
        raise AttributeError(role)


def _role_paths(directory: Path, pid: str, layout) -> dict[str, Path]:
    return {role: directory / pattern.format(id=pid) for role, pattern in layout.items()}


def scan_dataset(root, layout=None) -> list[PatientCase]:
    """Find patient directories below ``root``.

    A directory is a patient directory when at least one role file, with
    ``{id}`` replaced by the directory name, exists inside it. Cases missing
    some roles are returned with ``missing`` filled in.
    """
    root = Path(root)
    if not root.is_dir():
        raise EmptyDataset(f"dataset root {root} is not a directory")
    layout = layout or DEFAULT_LAYOUT
    found: dict[str, PatientCase] = {}
    for dirpath, dirnames, _ in os.walk(root):
        dirnames.sort()
        d = Path(dirpath)
        if d == root:
            continue
        paths = _role_paths(d, d.name, layout)
        present = {r for r, p in paths.items() if p.is_file()}
        if not present:
            continue
        if d.name in found:
            raise DuplicateId(f"patient id {d.name!r} found in {found[d.name].directory} and {d}")
        missing = sorted(set(paths) - present, key=ROLES.index)
        found[d.name] = PatientCase(d.name, d, paths, missing)
        dirnames[:] = []
    if not found:
        raise EmptyDataset(f"no patient directories found under {root}")
    return [found[k] for k in sorted(found)]


@dataclass(frozen=True)
class SampleDescriptor:
    patient_id: str
    phase: str
    image: Path
    prior: Path
    target: Path

    @property
    def sample_id(self) -> str:
        return f"{self.patient_id}_{self.phase}"


def expand_training(patients) -> list[SampleDescriptor]:
    """Two training samples per patient.

    mid-RT: mid-RT image with the registered pre-RT mask as prior.
    pre-RT: native pre-RT image with its own ground truth as prior.
    """
    out = []
    for p in patients:
        if not p.complete:
            raise FileNotFoundError(f"patient {p.patient_id} is missing roles {p.missing}")
        out.append(SampleDescriptor(p.patient_id, MID_RT, p.mid_img, p.pre_gt_registered, p.mid_gt))
        out.append(SampleDescriptor(p.patient_id, PRE_RT, p.pre_img_native, p.pre_gt_native, p.pre_gt_native))
    return out


def sample_seed(seed: int, patient_id: str, phase: str) -> np.random.SeedSequence:
    """Per-sample seed, independent of processing order or worker count."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(patient_id.encode()), PHASE_ORDER.index(phase)))


@dataclass
class Fold:
    index: int
    validation: list[str]
    train: list[tuple[str, str]]

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "validation": list(self.validation),
            "train": [{"patient_id": p, "phase": ph} for p, ph in self.train],
        }


@dataclass
class FoldPlan:
    k: int
    seed: int
    folds: list[Fold]

    @property
    def patient_ids(self) -> list[str]:
        return sorted(pid for f in self.folds for pid in f.validation)

    def to_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed, "folds": [f.to_dict() for f in self.folds]}

    @classmethod
    def from_dict(cls, d) -> "FoldPlan":
        folds = [
            Fold(f["index"], list(f["validation"]), [(t["patient_id"], t["phase"]) for t in f["train"]])
            for f in d["folds"]
        ]
        return cls(int(d["k"]), int(d["seed"]), folds)

    def save(self, path) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "FoldPlan":
        return cls.from_dict(read_json(path))


def split_folds(ids, k: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded patient-level k-fold split.

    Validation sets partition the patients (sizes differ by at most one);
    each fold trains on both phases of every patient outside its validation set.
    """
    ids = sorted(str(i) for i in ids)
    if len(set(ids)) != len(ids):
        raise DuplicateId("patient ids must be unique")
    if k < 2:
        raise TooFewPatients(f"need k >= 2, got {k}")
    if len(ids) < k:
        raise TooFewPatients(f"{len(ids)} patients cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(len(ids))
    chunks = np.array_split(perm, k)
    folds = []
    for f, chunk in enumerate(chunks):
        val = sorted(ids[i] for i in chunk)
        held = set(val)
        train = [(pid, ph) for pid in ids if pid not in held for ph in PHASE_ORDER]
        folds.append(Fold(f, val, train))
    return FoldPlan(k, int(seed), folds)
