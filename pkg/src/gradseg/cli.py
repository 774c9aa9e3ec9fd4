"""``gradseg`` command line: phantom, folds, preprocess, evaluate, volumes, analyze.

Exit codes: 0 success, 1 runtime failure (including any failed case),
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ._io import dumps_json, read_json, write_json, write_text
from .cohort import ROLES, FoldPlan, expand_training, load_layout, sample_seed, scan_dataset, split_folds
from .components import DEFAULT_CONNECTIVITY
from .errors import AllZeroDifferences, ConfigError, GradSegError, TooFewPatients
from .gradmap import GradMapConfig, assemble_sample
from .metrics import CaseMetrics, CohortReport, evaluate_case
from .nifti_io import DT_FLOAT32, read_mask, read_volume, write_volume
from .phantom import CohortSpec, generate_cohort
from .roi import DEFAULT_MARGINS, LABEL_NAMES
from .stats import PairedSample, VolumeChangeRecord, bin_volume_records, wilcoxon_signed_rank
from .volume import DEFAULT_TARGET_SPACING, MASK_ORDER, ResampleSpec, resample, resample_mask, volume_cc

log = logging.getLogger("gradseg")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
DEFAULT_BINS = (0.8, 3.0)


@dataclass
class RunConfig:
    seed: int = 0
    margins: tuple[int, int] = DEFAULT_MARGINS
    sigma: float = 1.0
    clip_scale: float = 1.0
    target_spacing: tuple[float, float, float] = DEFAULT_TARGET_SPACING
    resample: bool = False
    k: int = 5
    connectivity: int = DEFAULT_CONNECTIVITY
    layout: str | None = None

    def validate(self) -> "RunConfig":
        lo, hi = self.margins
        if not 0 <= lo <= hi:
            raise ConfigError(f"margins must satisfy 0 <= lo <= hi, got {self.margins}")
        if not self.sigma > 0 or not self.clip_scale > 0:
            raise ConfigError("sigma and clip_scale must be > 0")
        if self.connectivity not in (6, 18, 26):
            raise ConfigError(f"connectivity must be 6, 18 or 26, got {self.connectivity}")
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if len(self.target_spacing) != 3 or any(s <= 0 for s in self.target_spacing):
            raise ConfigError(f"bad target spacing {self.target_spacing}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["margins"] = list(self.margins)
        d["target_spacing"] = list(self.target_spacing)
        return d

    def digest(self) -> str:
        return hashlib.sha256(dumps_json(self.to_dict()).encode()).hexdigest()


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _default_seed() -> int:
    env = os.environ.get("GRADSEG_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"GRADSEG_SEED must be an integer, got {env!r}")


def resolve_config(args) -> RunConfig:
    """Defaults < ``--config`` JSON < explicit flags."""
    values = asdict(RunConfig())
    values["seed"] = _default_seed()
    if getattr(args, "config", None):
        try:
            from_file = read_json(args.config)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}")
        unknown = set(from_file) - set(values)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(from_file)
    for key in values:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    values["margins"] = tuple(int(x) for x in values["margins"])
    values["target_spacing"] = tuple(float(x) for x in values["target_spacing"])
    if len(values["margins"]) != 2:
        raise ConfigError(f"margins need two values, got {values['margins']}")
    return RunConfig(**values).validate()


def _map(fn, items, jobs: int):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def _layout(cfg_layout):
    try:
        return load_layout(cfg_layout)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad layout spec: {exc}")


# ---------------------------------------------------------------- phantom


def cmd_phantom(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    cs = CohortSpec()
    if args.shape:
        cs.shape = tuple(args.shape)
    if args.spacing:
        cs.spacing = tuple(args.spacing)
    if args.shrinkage:
        cs.shrinkage = tuple(args.shrinkage)
    if args.vanish_fraction is not None:
        cs.vanish_fraction = args.vanish_fraction
    if args.jitter is not None:
        cs.jitter = args.jitter
    if args.noise is not None:
        cs.noise_sigma = args.noise
    if len(cs.shape) != 3 or len(cs.spacing) != 3 or len(cs.shrinkage) != 2:
        raise ConfigError("shape and spacing need 3 values, shrinkage needs 2")
    if not 0 <= cs.shrinkage[0] <= cs.shrinkage[1] <= 1 or not 0 <= cs.vanish_fraction <= 1:
        raise ConfigError("shrinkage range and vanish fraction must lie in [0, 1]")
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    generate_cohort(args.n, args.out, seed, cs, jobs=args.jobs)
    print(Path(args.out) / "manifest.json")
    return EXIT_OK


# ---------------------------------------------------------------- folds


def _read_ids(path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    return [tok for tok in text.replace(",", "\n").split() if tok]


def cmd_folds(args) -> int:
    cfg = resolve_config(args)
    if args.ids:
        ids = _read_ids(args.ids)
    elif args.root:
        ids = [c.patient_id for c in scan_dataset(args.root, _layout(cfg.layout))]
    else:
        raise ConfigError("folds needs --root or --ids")
    try:
        plan = split_folds(ids, cfg.k, cfg.seed)
    except TooFewPatients as exc:
        raise ConfigError(str(exc))
    plan.save(args.out)
    print(args.out)
    return EXIT_OK


# ---------------------------------------------------------------- preprocess


def _preprocess_one(desc, cfg: RunConfig, out: Path) -> dict:
    sid = desc.sample_id
    img, _ = read_volume(desc.image)
    prior, _ = read_mask(desc.prior)
    target, _ = read_mask(desc.target)
    if cfg.resample:
        spec = ResampleSpec(cfg.target_spacing, 3)
        img = resample(img, spec)
        prior = resample_mask(prior, ResampleSpec(cfg.target_spacing, MASK_ORDER))
        target = resample_mask(target, ResampleSpec(cfg.target_spacing, MASK_ORDER))
    ss = sample_seed(cfg.seed, desc.patient_id, desc.phase)
    rng = np.random.default_rng(ss)
    sample = assemble_sample(
        img,
        prior,
        rng,
        GradMapConfig(cfg.sigma, cfg.clip_scale),
        case_id=desc.patient_id,
        phase=desc.phase,
        margins=cfg.margins,
        connectivity=cfg.connectivity,
        seed=cfg.seed,
    )
    files = {
        "channel0": f"samples/{sid}_0000.nii.gz",
        "channel1": f"samples/{sid}_0001.nii.gz",
        "label": f"labels/{sid}.nii.gz",
        "rois": f"rois/{sid}.json",
    }
    write_volume(sample.channel0, out / files["channel0"], DT_FLOAT32)
    write_volume(sample.channel1, out / files["channel1"], DT_FLOAT32)
    write_volume(target, out / files["label"])
    sample.rois.save(out / files["rois"])
    for w in sample.warnings:
        log.warning("%s: %s", sid, w)
    return {
        "sample_id": sid,
        "patient_id": desc.patient_id,
        "phase": desc.phase,
        "files": files,
        "n_boxes": len(sample.rois.boxes),
        "zscore_mean": sample.zscore_mean,
        "zscore_std": sample.zscore_std,
        "warnings": sample.warnings,
    }


def cmd_preprocess(args) -> int:
    cfg = resolve_config(args)
    layout = _layout(cfg.layout)
    cases = scan_dataset(args.root, layout)
    if args.folds:
        plan = FoldPlan.load(args.folds)
        wanted = set(plan.patient_ids)
        unknown = wanted - {c.patient_id for c in cases}
        if unknown:
            raise ConfigError(f"folds file names patients absent from the dataset: {sorted(unknown)[:5]}")
        cases = [c for c in cases if c.patient_id in wanted]
    out = Path(args.out)
    failures = []
    complete = []
    for c in cases:
        if c.complete:
            complete.append(c)
        else:
            failures.append({"patient_id": c.patient_id, "error": f"missing roles: {', '.join(c.missing)}"})
    descriptors = expand_training(complete)

    def run(desc):
        try:
            return _preprocess_one(desc, cfg, out)
        except Exception as exc:  # noqa: BLE001 - recorded per sample
            log.error("%s: %s", desc.sample_id, exc)
            return {"sample_id": desc.sample_id, "error": f"{type(exc).__name__}: {exc}"}

    results = _map(run, descriptors, args.jobs)
    samples = [r for r in results if "error" not in r]
    failures += [r for r in results if "error" in r]
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "n_patients": len(cases),
        "n_samples": len(samples),
        "samples": samples,
        "failures": failures,
    }
    write_json(out / "preprocess_manifest.json", manifest)
    print(f"{len(samples)} samples written to {out}; {len(failures)} failures")
    return EXIT_RUNTIME if failures else EXIT_OK


# ---------------------------------------------------------------- evaluate


def _nifti_id(p: Path) -> str | None:
    name = p.name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return None


def collect_masks(path, role: str | None, layout) -> dict[str, Path]:
    """Map case id -> mask path.

    A directory holding ``<id>.nii[.gz]`` files is read flat; otherwise it
    is scanned as a dataset root and ``role`` selects the file per patient.
    """
    path = Path(path)
    if not path.is_dir():
        raise ConfigError(f"{path} is not a directory")
    flat = {}
    for p in sorted(path.iterdir()):
        cid = _nifti_id(p)
        if p.is_file() and cid is not None:
            flat[cid] = p
    if flat:
        return flat
    if role is None:
        raise ConfigError(f"{path} holds no NIfTI files; pass a role to read it as a dataset root")
    if role not in ROLES:
        raise ConfigError(f"unknown role {role!r}; choose from {', '.join(ROLES)}")
    return {c.patient_id: c.paths[role] for c in scan_dataset(path, layout) if role not in c.missing}


def _evaluate_one(item):
    cid, pred_path, gt_path = item
    try:
        if pred_path is None:
            raise FileNotFoundError("no prediction for this case")
        pred, _ = read_mask(pred_path)
        gt, _ = read_mask(gt_path)
        return evaluate_case(pred, gt, cid)
    except Exception as exc:  # noqa: BLE001 - recorded per case
        return CaseMetrics(cid, error=f"{type(exc).__name__}: {exc}")


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    layout = _layout(cfg.layout)
    gt = collect_masks(args.gt, args.gt_role, layout)
    pred = collect_masks(args.pred, args.pred_role, layout)
    if not gt:
        raise ConfigError(f"no ground-truth masks found under {args.gt}")
    items = [(cid, pred.get(cid), gt[cid]) for cid in sorted(gt)]
    report = CohortReport.from_cases(_map(_evaluate_one, items, args.jobs))
    out = Path(args.out)
    write_json(out / "report.json", report.to_dict())
    write_text(out / "report.csv", report.to_csv())
    if not args.no_figures:
        from .plotting import plot_dsc_distribution

        per_label = {name: list(report.per_case(name).values()) for name in LABEL_NAMES.values()}
        plot_dsc_distribution(per_label, out / "dsc_distribution.png", title="per-case DSC")
    s = report.summary
    print(
        "DSC_agg GTVp={} GTVn={} mean={}".format(
            *(f"{v:.4f}" if v is not None else "n/a" for v in (s["GTVp"]["dsc_agg"], s["GTVn"]["dsc_agg"], s["mean_dsc_agg"]))
        )
    )
    for c in report.failed:
        log.error("%s: %s", c.case_id, c.error)
    return EXIT_RUNTIME if report.failed else EXIT_OK


# ---------------------------------------------------------------- volumes


def cmd_volumes(args) -> int:
    """Volume manifest (pre/mid cc per label) from a dataset's native masks."""
    cfg = resolve_config(args)
    cases = {}
    for c in scan_dataset(args.root, _layout(cfg.layout)):
        if "pre_gt_native" in c.missing or "mid_gt" in c.missing:
            log.warning("%s: missing masks, skipped", c.patient_id)
            continue
        pre, _ = read_mask(c.pre_gt_native)
        mid, _ = read_mask(c.mid_gt)
        cases[c.patient_id] = {
            name: {"pre_cc": volume_cc(pre, lab), "mid_cc": volume_cc(mid, lab)} for lab, name in LABEL_NAMES.items()
        }
    write_json(args.out, {"cases": cases})
    print(args.out)
    return EXIT_OK


# ---------------------------------------------------------------- analyze


def _short(path) -> str:
    # parent/name only: keeps stats.json independent of where runs live
    p = Path(path)
    return f"{p.parent.name}/{p.name}" if p.parent.name else p.name


def _load_report(path) -> CohortReport:
    try:
        return CohortReport.from_dict(read_json(path))
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report {path}: {exc}")


def volume_records(report: CohortReport, manifest: dict, label: str) -> list[VolumeChangeRecord]:
    recs = []
    for c in report.cases:
        if c.error is not None or label not in c.labels:
            continue
        entry = manifest.get("cases", {}).get(c.case_id, {}).get(label)
        if entry is None:
            continue
        pre = float(entry["pre_cc"])
        if pre == 0.0:
            # no prior tumor, no volume change to speak of
            continue
        m = c.labels[label]
        recs.append(VolumeChangeRecord(c.case_id, label, pre, m.gt_volume_cc, m.dsc))
    return recs


def _scatter_csv(binned) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case_id", "label", "pre_cc", "mid_cc", "delta_cc", "dsc", "group"])
    for lab, b in binned.items():
        for g in b.groups:
            for r in g.records:
                w.writerow([r.case_id, lab, repr(r.pre_cc), repr(r.mid_cc), repr(r.delta_cc), repr(r.dsc), g.name])
    return buf.getvalue()


def cmd_analyze(args) -> int:
    report = _load_report(args.report)
    out = Path(args.out)
    result: dict = {"report": _short(args.report)}
    figures = not args.no_figures

    if args.compare:
        other = _load_report(args.compare)
        comparison = {}
        pairs = {}
        pvals = {}
        for name in LABEL_NAMES.values():
            a, b = report.per_case(name), other.per_case(name)
            ids = sorted(set(a) & set(b))
            entry = {"n_pairs": len(ids), "mean_a": None, "mean_b": None}
            if ids:
                va, vb = [a[i] for i in ids], [b[i] for i in ids]
                entry["mean_a"], entry["mean_b"] = float(np.mean(va)), float(np.mean(vb))
                pairs[name] = (va, vb)
                try:
                    entry["wilcoxon"] = wilcoxon_signed_rank(PairedSample(va, vb, ids)).to_dict()
                    pvals[name] = entry["wilcoxon"]["p_two_sided"]
                except AllZeroDifferences as exc:
                    entry["wilcoxon"] = {"error": f"AllZeroDifferences: {exc}"}
                    log.warning("%s: %s", name, exc)
            comparison[name] = entry
        result["comparison"] = {"a": _short(args.report), "b": _short(args.compare), "labels": comparison}
        if figures and pairs:
            from .plotting import plot_paired_comparison

            plot_paired_comparison(pairs, ("A", "B"), out / "comparison.png", pvals)

    if args.manifest:
        try:
            manifest = read_json(args.manifest)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read volume manifest {args.manifest}: {exc}")
        edges = {"GTVp": args.bins_gtvp or args.bins, "GTVn": args.bins_gtvn or args.bins}
        binned = {}
        for name in LABEL_NAMES.values():
            try:
                binned[name] = bin_volume_records(volume_records(report, manifest, name), edges[name])
            except ValueError as exc:
                raise ConfigError(str(exc))
        result["volume_bins"] = {name: {"edges": list(edges[name]), **b.to_dict()} for name, b in binned.items()}
        write_text(out / "scatter.csv", _scatter_csv(binned))
        if figures:
            from .plotting import plot_volume_change

            plot_volume_change(binned, out / "volume_change.png")

    write_json(out / "stats.json", result)
    print(out / "stats.json")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_common(p, config=True):
    p.add_argument("--seed", type=int, default=None, help="random seed (default: $GRADSEG_SEED or 0)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads; outputs do not depend on it")
    if config:
        p.add_argument("--config", default=None, help="JSON run config; explicit flags override it")
        p.add_argument("--layout", default=None, help="JSON file mapping roles to {id} filename patterns")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic longitudinal cohort")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--shape", type=_ints, default=None)
    p.add_argument("--spacing", type=_floats, default=None)
    p.add_argument("--shrinkage", type=_floats, default=None, help="lo,hi shrinkage factor range")
    p.add_argument("--vanish-fraction", type=float, default=None)
    p.add_argument("--jitter", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    _add_common(p, config=False)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("folds", help="seeded patient-level k-fold split")
    p.add_argument("--root", default=None)
    p.add_argument("--ids", default=None, help="text file of patient ids")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_folds)

    p = sub.add_parser("preprocess", help="build two-channel samples with gradient maps")
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--folds", default=None)
    p.add_argument("--margins", type=_ints, default=None, help="lo,hi voxel margins")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--clip-scale", dest="clip_scale", type=float, default=None)
    p.add_argument("--connectivity", type=int, default=None)
    p.add_argument("--target-spacing", dest="target_spacing", type=_floats, default=None)
    p.add_argument("--resample", action="store_true", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--pred-role", default=None)
    p.add_argument("--gt-role", default="mid_gt")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("volumes", help="write a pre/mid volume manifest for a dataset")
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_volumes)

    p = sub.add_parser("analyze", help="Wilcoxon comparison and volume-binned Spearman")
    p.add_argument("--report", required=True)
    p.add_argument("--compare", default=None, help="second report for the paired test")
    p.add_argument("--manifest", default=None, help="volume manifest with pre_cc per case and label")
    p.add_argument("--bins", type=_floats, default=DEFAULT_BINS)
    p.add_argument("--bins-gtvp", type=_floats, default=None)
    p.add_argument("--bins-gtvn", type=_floats, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        print("gradseg: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"gradseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GradSegError, OSError, ValueError) as exc:
        print(f"gradseg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
