"""Command line pipeline driver.

Every subcommand reads one JSON config, writes its artifacts plus a
``manifest.json`` into ``--out``, and is deterministic: identical config and
inputs produce byte-identical outputs. Manifests record the config digest,
the seeds in effect, and SHA-256 digests of all inputs and outputs; they
contain no timestamps.

Exit codes: 0 success; 1 config or data error; 2 completed with per-image
failures (recorded in ``errors.json``); 3 unreadable or malformed input
files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import anomaly, attacksim, features, ingest, metrics, noise, supervised
from .lyap import LyapError, LyapunovParams, lyap_spectrum

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2
EXIT_IO = 3


class ConfigError(Exception):
    """Raised for malformed or incomplete configuration, with a field path."""


# ---------------------------------------------------------------------------
# config plumbing

def _load_config(path) -> tuple[dict, str]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return cfg, hashlib.sha256(raw).hexdigest()


def _get(cfg: dict, dotted: str, expect=None, required=False, default=None):
    node = cfg
    walked = []
    for part in dotted.split("."):
        walked.append(part)
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ConfigError(f"missing config field: {'.'.join(walked)}")
            return default
        node = node[part]
    if expect is not None and not isinstance(node, expect):
        names = expect.__name__ if isinstance(expect, type) else "/".join(t.__name__ for t in expect)
        raise ConfigError(f"config field {dotted}: expected {names}, got {type(node).__name__}")
    return node


def _require_seed(cfg: dict, dotted: str, override: int | None) -> int:
    """Seeds are mandatory: taken from the config block or the --seed flag,
    never from the clock."""
    if override is not None:
        return override
    seed = _get(cfg, dotted)
    if seed is None:
        raise ConfigError(f"missing seed: set {dotted} in the config or pass --seed")
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"config field {dotted}: expected integer seed")
    return seed


# ---------------------------------------------------------------------------
# manifest plumbing

def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_manifest(out: Path, command: str, config_sha: str, seeds: dict,
                    inputs: list[str], outputs: list[str]) -> None:
    doc = {
        "command": command,
        "config_sha256": config_sha,
        "seeds": seeds,
        "inputs": {str(p): _sha256_file(p) for p in sorted(set(map(str, inputs)))},
        "outputs": {rel: _sha256_file(out / rel) for rel in sorted(set(outputs))},
    }
    _write_text(out / "manifest.json", json.dumps(doc, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# shared loaders

def _load_images(cfg: dict, key: str) -> tuple[ingest.Dataset, list[str]]:
    """Load an image source block; returns the dataset and input paths used."""
    block = _get(cfg, key, expect=dict, required=True)
    kind = _get(block, "kind", expect=str, required=True)
    if kind == "idx":
        images_path = _get(block, "images", expect=str, required=True)
        labels_path = _get(block, "labels", expect=str)
        name = _get(block, "name", expect=str, default=Path(images_path).stem)
        with open(images_path, "rb") as fh:
            image_bytes = fh.read()
        label_bytes = None
        if labels_path:
            with open(labels_path, "rb") as fh:
                label_bytes = fh.read()
        ds = ingest.parse_idx(image_bytes, label_bytes, name=name)
        return ds, [images_path] + ([labels_path] if labels_path else [])
    if kind == "dir":
        path = _get(block, "path", expect=str, required=True)
        scaling = _get(block, "scaling", expect=str, required=True)
        prov_str = _get(block, "provenance", expect=str)
        try:
            prov = ingest.provenance_from_str(prov_str) if prov_str else None
            desc = ingest.ProvenanceDescriptor(scaling=scaling, provenance=prov)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}")
        ds = ingest.load_image_dir(path, desc)
        files = sorted(str(p) for p in Path(path).iterdir() if p.suffix in (".csv", ".bin", ".json"))
        return ds, files
    raise ConfigError(f"{key}.kind: expected 'idx' or 'dir', got {kind!r}")


def _lyap_params(cfg: dict) -> LyapunovParams:
    block = _get(cfg, "lyapunov", expect=dict, default={})
    try:
        return LyapunovParams(
            emb_dim=block.get("emb_dim", 10),
            matrix_dim=block.get("matrix_dim", 4),
            min_nb=block.get("min_nb"),
            min_tsep=block.get("min_tsep", 0),
            tau=block.get("tau", 1.0),
        )
    except ValueError as exc:
        raise ConfigError(f"lyapunov: {exc}")


def _load_feature_csvs(cfg: dict, key: str) -> tuple[features.FeatureMatrix, list[str]]:
    val = _get(cfg, key, required=True)
    paths = [val] if isinstance(val, str) else list(val)
    if not paths or not all(isinstance(p, str) for p in paths):
        raise ConfigError(f"{key}: expected a CSV path or list of CSV paths")
    mats = [features.read_feature_csv(p) for p in paths]
    dims = {m.dim for m in mats}
    if len(dims) > 1:
        raise ConfigError(f"{key}: feature files disagree on dimension: {sorted(dims)}")
    rows = np.vstack([m.rows for m in mats])
    meta = [r for m in mats for r in m.meta]
    return features.FeatureMatrix(rows=rows, meta=meta), paths


def _select_dim(mat: features.FeatureMatrix, dim: int | None) -> features.FeatureMatrix:
    if dim is None or dim == mat.dim:
        return mat
    if not (1 <= dim <= mat.dim):
        raise ConfigError(f"feature_dim {dim} outside 1..{mat.dim}")
    return features.FeatureMatrix(rows=mat.rows[:, :dim], meta=mat.meta)


# ---------------------------------------------------------------------------
# exponents

def _spectrum_worker(task):
    image_id, values, params_fields = task
    params = LyapunovParams(*params_fields)
    try:
        spectrum = lyap_spectrum(values, params)
        return image_id, [float(v) for v in spectrum.exponents], spectrum.n_steps, None
    except (LyapError, ValueError) as exc:
        return image_id, None, None, f"{type(exc).__name__}: {exc}"


def cmd_exponents(cfg: dict, out: Path, seed: int | None, jobs: int, config_sha: str) -> int:
    dataset, input_paths = _load_images(cfg, "images")
    params = _lyap_params(cfg)
    params_fields = (params.emb_dim, params.matrix_dim, params.min_nb, params.min_tsep, params.tau)

    tasks = []
    for k, im in enumerate(dataset.images):
        image_id = im.image_id or f"{dataset.name}-{k:05d}"
        tasks.append((image_id, ingest.flatten(im).values, params_fields))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_spectrum_worker, tasks, chunksize=max(1, len(tasks) // (4 * jobs) or 1)))
    else:
        results = [_spectrum_worker(t) for t in tasks]

    by_id = {image_id: im for (image_id, _, _), im in zip(tasks, dataset.images)}
    ok_rows, errors = [], []
    for image_id, exps, n_steps, err in results:
        if err is not None:
            errors.append({"id": image_id, "error": err})
        else:
            ok_rows.append((image_id, exps))
    ok_rows.sort(key=lambda r: r[0])
    errors.sort(key=lambda e: e["id"])

    outputs = []
    if ok_rows:
        mat = features.FeatureMatrix(
            rows=np.array([r[1] for r in ok_rows]),
            meta=[
                features.RowMeta(
                    image_id=r[0],
                    provenance=by_id[r[0]].provenance,
                    label=by_id[r[0]].label,
                )
                for r in ok_rows
            ],
        )
        features.write_feature_csv(mat, out / "features.csv")
        outputs.append("features.csv")
    if errors:
        _write_text(out / "errors.json", json.dumps(errors, sort_keys=True, indent=2) + "\n")
        outputs.append("errors.json")
    _write_manifest(out, "exponents", config_sha, {"seed": seed}, input_paths, outputs)
    if errors:
        log.warning("%d of %d images failed; see errors.json", len(errors), len(tasks))
        return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / score

def cmd_train(cfg: dict, out: Path, seed: int | None, jobs: int, config_sha: str) -> int:
    mat, input_paths = _load_feature_csvs(cfg, "features")
    mat = _select_dim(mat, _get(cfg, "feature_dim", expect=int))
    detector = _get(cfg, "detector", expect=dict, required=True)
    kind = _get(detector, "kind", expect=str, required=True)

    if kind == "iforest":
        train_seed = _require_seed(cfg, "detector.seed", seed)
        try:
            model = anomaly.iforest_fit(
                mat,
                n_trees=_get(detector, "n_trees", expect=int, default=anomaly.DEFAULT_N_TREES),
                subsample_size=_get(detector, "subsample_size", expect=int),
                seed=train_seed,
            )
            threshold = anomaly.calibrate_threshold(
                model, mat,
                contamination=_get(detector, "contamination", default=anomaly.DEFAULT_CONTAMINATION),
            )
            model.threshold = threshold
        except anomaly.AnomalyError as exc:
            raise ConfigError(f"detector: {exc}")
        anomaly.save_model(model, out / "model.json")
        seeds = {"seed": seed, "detector.seed": train_seed}
    elif kind == "logistic":
        labels = np.array([1 if ingest.is_adversarial(m.provenance) else 0 for m in mat.meta])
        try:
            lcfg = supervised.LogisticConfig(
                l2_penalty=_get(detector, "l2_penalty", default=1e-4),
                max_iters=_get(detector, "max_iters", expect=int, default=500),
                tol=_get(detector, "tol", default=1e-8),
            )
            model = supervised.logistic_fit(mat, labels, lcfg)
        except (ValueError, supervised.SupervisedError) as exc:
            raise ConfigError(f"detector: {exc}")
        supervised.save_model(model, out / "model.json")
        seeds = {"seed": seed}
    else:
        raise ConfigError(f"detector.kind: expected 'iforest' or 'logistic', got {kind!r}")

    _write_manifest(out, "train", config_sha, seeds, input_paths, ["model.json"])
    return EXIT_OK


def _load_any_model(path: str):
    text = Path(path).read_text()
    try:
        fmt = json.loads(text).get("format")
    except (json.JSONDecodeError, AttributeError):
        raise ConfigError(f"model file {path} is not a JSON object")
    if fmt == anomaly.MODEL_FORMAT:
        return anomaly.model_from_json(text)
    if fmt == supervised.MODEL_FORMAT:
        return supervised.model_from_json(text)
    raise ConfigError(f"model file {path} has unknown format {fmt!r}")


def cmd_score(cfg: dict, out: Path, seed: int | None, jobs: int, config_sha: str) -> int:
    mat, input_paths = _load_feature_csvs(cfg, "features")
    model_path = _get(cfg, "model", expect=str, required=True)
    model = _load_any_model(model_path)

    if isinstance(model, anomaly.IsolationForestModel):
        mat = _select_dim(mat, _get(cfg, "feature_dim", expect=int))
        scores = anomaly.anomaly_scores(model, mat)
        threshold = model.threshold
    else:
        mat = _select_dim(mat, _get(cfg, "feature_dim", expect=int, default=len(model.weights)))
        if mat.dim != len(model.weights):
            raise ConfigError(
                f"feature dimension {mat.dim} does not match model dimension {len(model.weights)}"
            )
        scores = supervised.logistic_scores(model, mat)
        threshold = _get(cfg, "threshold", default=0.5)

    decisions = [
        anomaly.Decision.REJECT if s > threshold else anomaly.Decision.ACCEPT for s in scores
    ]
    lines = ["id,provenance,label,score,decision"]
    for m, s, d in zip(mat.meta, scores, decisions):
        label = "" if m.label is None else str(m.label)
        lines.append(
            f"{m.image_id},{ingest.provenance_to_str(m.provenance)},{label},{float(s)!r},{d.value}"
        )
    _write_text(out / "scores.csv", "\n".join(lines) + "\n")

    report = metrics.detection_report(decisions, [m.provenance for m in mat.meta])
    _write_text(out / "report.json", metrics.report_to_json(report) + "\n")

    _write_manifest(out, "score", config_sha, {"seed": seed},
                    input_paths + [model_path], ["scores.csv", "report.json"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# perturb / attack

def cmd_perturb(cfg: dict, out: Path, seed: int | None, jobs: int, config_sha: str) -> int:
    dataset, input_paths = _load_images(cfg, "images")
    block = _get(cfg, "noise", expect=dict, required=True)
    kind = _get(block, "kind", expect=str, required=True)
    master_seed = _require_seed(cfg, "noise.seed", seed)
    child_seeds = [int(s.generate_state(1)[0])
                   for s in np.random.SeedSequence(master_seed).spawn(len(dataset.images))]

    if kind == "matched_l2":
        distances = _get(block, "distances", expect=list)
        if distances is None:
            pairs = _get(block, "pairs", expect=dict, required=True)
            base, base_paths = _load_images(pairs, "original")
            other, other_paths = _load_images(pairs, "perturbed")
            input_paths = input_paths + base_paths + other_paths
            by_id = {im.image_id: im for im in other.images}
            distances = []
            for im in base.images:
                if im.image_id in by_id:
                    distances.append(features.l2_distance(im.pixels, by_id[im.image_id].pixels))
            if not distances:
                raise ConfigError("noise.pairs: no image ids in common")
        try:
            perturbed = [
                noise.perturb_to_magnitude(
                    im, noise.sample_matched_magnitude(distances, s), seed=s
                )
                for im, s in zip(dataset.images, child_seeds)
            ]
        except noise.NoiseError as exc:
            raise ConfigError(f"noise: {exc}")
    else:
        try:
            model = noise.noise_from_config(block)
            perturbed = [noise.apply_noise(im, model, s) for im, s in zip(dataset.images, child_seeds)]
        except noise.NoiseError as exc:
            raise ConfigError(f"noise: {exc}")

    written = ingest.save_image_dir(ingest.Dataset(images=perturbed, name=dataset.name),
                                    out / "images", scaling="none")
    outputs = [f"images/{name}" for name in written]
    _write_manifest(out, "perturb", config_sha,
                    {"seed": seed, "noise.seed": master_seed}, input_paths, outputs)
    return EXIT_OK


def cmd_attack_fgsm(cfg: dict, out: Path, seed: int | None, jobs: int, config_sha: str) -> int:
    train_ds, train_paths = _load_images(cfg, "victim_train")
    apply_ds, apply_paths = _load_images(cfg, "apply_to")
    victim_block = _get(cfg, "victim", expect=dict, default={})
    victim_seed = _require_seed(cfg, "victim.seed", seed)
    labels = [im.label for im in train_ds.images]
    if any(l is None for l in labels):
        raise ConfigError("victim_train: every training image needs a label")
    try:
        vcfg = attacksim.VictimConfig(
            lr=victim_block.get("lr", 0.5),
            epochs=victim_block.get("epochs", 20),
            batch_size=victim_block.get("batch_size", 32),
            seed=victim_seed,
        )
        victim = attacksim.softmax_train(train_ds.images, labels, vcfg)
    except (ValueError, attacksim.AttackError) as exc:
        raise ConfigError(f"victim: {exc}")

    attack_block = _get(cfg, "attack", expect=dict, required=True)
    try:
        params = attacksim.FgsmParams(
            epsilon=_get(attack_block, "epsilon", required=True),
            targeted=attack_block.get("targeted", False),
            target=attack_block.get("target"),
        )
        attacked = [attacksim.fgsm(victim, im, params) for im in apply_ds.images]
    except attacksim.AttackError as exc:
        raise ConfigError(f"attack: {exc}")

    written = ingest.save_image_dir(ingest.Dataset(images=attacked, name=apply_ds.name),
                                    out / "images", scaling="none")
    outputs = [f"images/{name}" for name in written]
    summary = {
        "victim_train_accuracy": victim.train_accuracy,
        "epsilon": params.epsilon,
        "targeted": params.targeted,
        "n_attacked": len(attacked),
    }
    _write_text(out / "summary.json", json.dumps(summary, sort_keys=True, indent=2) + "\n")
    outputs.append("summary.json")
    _write_manifest(out, "attack-fgsm", config_sha,
                    {"seed": seed, "victim.seed": victim_seed},
                    train_paths + apply_paths, outputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluation

def cmd_eval_loao(cfg: dict, out: Path, seed: int | None, jobs: int, config_sha: str) -> int:
    natural, nat_paths = _load_feature_csvs(cfg, "natural")
    attacks_block = _get(cfg, "attacks", expect=dict, required=True)
    dim = _get(cfg, "feature_dim", expect=int)
    natural = _select_dim(natural, dim)
    per_attack = {}
    attack_paths = []
    for name in sorted(attacks_block):
        path = attacks_block[name]
        if not isinstance(path, str):
            raise ConfigError(f"attacks.{name}: expected a CSV path")
        per_attack[name] = _select_dim(features.read_feature_csv(path), dim)
        attack_paths.append(path)

    lblock = _get(cfg, "logistic", expect=dict, default={})
    try:
        lcfg = supervised.LogisticConfig(
            l2_penalty=lblock.get("l2_penalty", 1e-4),
            max_iters=lblock.get("max_iters", 500),
            tol=lblock.get("tol", 1e-8),
        )
        curves = supervised.leave_one_attack_out(
            natural, per_attack, lcfg,
            natural_train_fraction=_get(cfg, "natural_train_fraction", default=0.5),
        )
    except (ValueError, supervised.SupervisedError, metrics.MetricsError) as exc:
        raise ConfigError(f"leave-one-attack-out: {exc}")

    outputs = []
    for name, curve in sorted(curves.items()):
        rel = f"roc-{name}.csv"
        metrics.write_roc_csv(curve, out / rel)
        outputs.append(rel)
    summary = {"auroc": {name: curves[name].auroc for name in sorted(curves)}}
    _write_text(out / "summary.json", json.dumps(summary, sort_keys=True, indent=2) + "\n")
    outputs.append("summary.json")
    _write_manifest(out, "eval-loao", config_sha, {"seed": seed},
                    nat_paths + attack_paths, outputs)
    return EXIT_OK


def cmd_scatter(cfg: dict, out: Path, seed: int | None, jobs: int, config_sha: str) -> int:
    mat, input_paths = _load_feature_csvs(cfg, "features")
    mat = _select_dim(mat, _get(cfg, "feature_dim", expect=int))
    try:
        model = features.pca_fit(mat)
    except features.FeatureError as exc:
        raise ConfigError(f"scatter: {exc}")
    proj = features.pca_project(model, mat)

    lines = ["id,provenance,pc1,pc2"]
    for m, row in zip(mat.meta, proj):
        lines.append(
            f"{m.image_id},{ingest.provenance_to_str(m.provenance)},{float(row[0])!r},{float(row[1])!r}"
        )
    _write_text(out / "scatter.csv", "\n".join(lines) + "\n")

    legit_mask = [not ingest.is_adversarial(m.provenance) for m in mat.meta]
    silhouette = features.silhouette_two_groups(proj, legit_mask)
    summary = {
        "explained_variance": [float(v) for v in model.explained_variance],
        "silhouette": silhouette,
    }
    _write_text(out / "summary.json", json.dumps(summary, sort_keys=True, indent=2) + "\n")
    _write_manifest(out, "scatter", config_sha, {"seed": seed}, input_paths,
                    ["scatter.csv", "summary.json"])
    return EXIT_OK


def cmd_report(cfg: dict, out: Path, seed: int | None, jobs: int, config_sha: str) -> int:
    scores_path = _get(cfg, "scores", expect=str, required=True)
    lines = [ln for ln in Path(scores_path).read_text().splitlines() if ln.strip()]
    if not lines or lines[0] != "id,provenance,label,score,decision":
        raise ConfigError(f"unexpected scores CSV header in {scores_path}")
    provs, scores, decisions = [], [], []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != 5:
            raise ConfigError(f"scores CSV row has {len(cells)} cells, expected 5")
        provs.append(ingest.provenance_from_str(cells[1]))
        scores.append(float(cells[3]))
        decisions.append(anomaly.Decision(cells[4]))

    try:
        report = metrics.detection_report(decisions, provs)
    except metrics.MetricsError as exc:
        raise ConfigError(f"report: {exc}")
    _write_text(out / "report.json", metrics.report_to_json(report) + "\n")
    outputs = ["report.json"]

    labels = [1 if ingest.is_adversarial(p) else 0 for p in provs]
    if 0 < sum(labels) < len(labels):
        curve = metrics.roc(np.array(scores), np.array(labels))
        metrics.write_roc_csv(curve, out / "roc.csv")
        outputs.append("roc.csv")
    _write_manifest(out, "report", config_sha, {"seed": seed}, [scores_path], outputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

_COMMANDS = {
    "exponents": cmd_exponents,
    "train": cmd_train,
    "score": cmd_score,
    "perturb": cmd_perturb,
    "attack-fgsm": cmd_attack_fgsm,
    "eval-loao": cmd_eval_loao,
    "scatter": cmd_scatter,
    "report": cmd_report,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lyapdetect",
        description="Lyapunov-exponent screening pipeline for image inputs",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the command's master seed")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker processes for per-image work")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg, config_sha = _load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out, args.seed, args.jobs, config_sha)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ingest.IngestError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
