"""Acceptance gate: ten criteria, one test and one printed verdict line each.

Run with ``pytest -s tests/test_acceptance.py`` to see the verdict lines on
passing runs too. Criterion 6 needs the real MNIST training corpus; point
MNIST_DATA_DIR at a directory holding train-images-idx3-ubyte and
train-labels-idx1-ubyte to enable its full assertions. Without it the
criterion-6 pipeline still runs end to end on the bundled digit corpus and
reports its measurements, but the discrimination assertions are skipped:
those upscaled digits are too smooth for the texture signal to exist (the
attacked spectra collapse into the legitimate bulk, measured AUROC ~0.5).
"""

import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from lyapdetect import anomaly, cli, features, ingest, metrics, noise, supervised
from lyapdetect.attacksim import (
    FgsmParams,
    VictimConfig,
    fgsm,
    loss_gradient,
    softmax_train,
)
from lyapdetect.features import FeatureMatrix, RowMeta, build_features
from lyapdetect.lyap import LyapunovParams, has_positive_exponent, lyap_spectrum, qr_accumulate
from oracle_lyap import auroc_pair_count, logistic_map_exponent, oracle_spectrum

SERIES_LENGTH = 784  # 28 x 28 flattened


def verdict(n: int, ok: bool, detail: str) -> None:
    print(f"[criterion {n:02d}] {'PASS' if ok else 'FAIL'}: {detail}")


def logistic_series(x0: float, n: int) -> np.ndarray:
    xs = np.empty(n)
    xs[0] = x0
    for t in range(n - 1):
        xs[t + 1] = 4.0 * xs[t] * (1.0 - xs[t])
    return xs


# ---------------------------------------------------------------------------
# 1. estimator equivalence against the independent oracle

def test_criterion_01_estimator_matches_independent_oracle():
    diffs = []
    t0 = time.perf_counter()
    spectra = []
    for k in range(10):
        x = np.random.default_rng(100 + k).standard_normal(SERIES_LENGTH)
        spectra.append((x, lyap_spectrum(x)))
    elapsed = time.perf_counter() - t0
    for x, spec in spectra:
        oracle_exps, oracle_steps = oracle_spectrum(x)
        assert spec.n_steps == oracle_steps
        diffs.append(np.max(np.abs(spec.exponents - oracle_exps)))
    worst = max(diffs)
    ok = worst <= 1e-8 and elapsed < 10.0
    verdict(1, ok, f"max |impl - oracle| = {worst:.3e} over 10 series, {elapsed:.2f}s")
    assert worst <= 1e-8
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# 2. known dynamics: chaotic map in band, periodic signal near zero

def test_criterion_02_known_dynamics():
    x = logistic_series(0.1, 2000)
    params = LyapunovParams(emb_dim=4, matrix_dim=4)
    spec = lyap_spectrum(x, params)
    largest = float(np.max(spec.exponents))

    analytic = math.log(2.0)
    orbit_average = logistic_map_exponent(4.0, 0.1, 500000)
    assert abs(orbit_average - analytic) < 1e-4  # the oracle itself is sound

    oracle_exps, _ = oracle_spectrum(x, emb_dim=4, matrix_dim=4)
    oracle_gap = np.max(np.abs(spec.exponents - oracle_exps))

    t = np.arange(2000, dtype=np.float64)
    periodic = 0.5 + 0.5 * np.sin(2.0 * np.pi * t / 7.37)
    periodic_largest = float(np.max(lyap_spectrum(periodic, params).exponents))

    ok = 0.55 <= largest <= 0.80 and periodic_largest <= 0.05 and oracle_gap <= 1e-8
    verdict(
        2,
        ok,
        f"chaotic largest = {largest:.4f} (analytic {analytic:.4f}, band [0.55, 0.80]), "
        f"periodic largest = {periodic_largest:.5f} (<= 0.05), oracle gap {oracle_gap:.2e}",
    )
    assert 0.55 <= largest <= 0.80
    assert periodic_largest <= 0.05
    assert oracle_gap <= 1e-8


# ---------------------------------------------------------------------------
# 3. QR accumulation is exact on maps with known spectra

def test_criterion_03_qr_exactness():
    sigma = np.array([2.0, 1.3, 0.8, 0.4])
    sums, count = qr_accumulate([np.diag(sigma)] * 80)
    diag_err = float(np.max(np.abs(sums / count - np.log(sigma))))

    gen = np.random.default_rng(2718)
    rotations = []
    for _ in range(60):
        q, r = np.linalg.qr(gen.standard_normal((4, 4)))
        rotations.append(q * np.sign(np.diag(r)))
    rot_sums, rot_count = qr_accumulate(rotations)
    rot_err = float(np.max(np.abs(rot_sums / rot_count)))

    ok = diag_err <= 1e-10 and rot_err <= 1e-9
    verdict(3, ok, f"diagonal-map error {diag_err:.2e} (<= 1e-10), "
                   f"orthogonal-map drift {rot_err:.2e} (<= 1e-9)")
    assert diag_err <= 1e-10
    assert rot_err <= 1e-9


# ---------------------------------------------------------------------------
# 4. AUROC equals the ordered-pair probability

def test_criterion_04_auroc_matches_pair_counting():
    worst = 0.0
    checked = 0
    for seed in range(100):
        gen = np.random.default_rng(seed)
        n = int(gen.integers(20, 120))
        scores = gen.standard_normal(n)
        if seed % 2:
            scores = np.round(scores, 1)  # force tie groups on half the sets
        labels = gen.integers(0, 2, n)
        labels[:2] = [0, 1]
        curve = metrics.roc(scores, labels)
        worst = max(worst, abs(curve.auroc - auroc_pair_count(scores, labels)))
        if seed < 20:
            assert metrics.roc(2.0 * scores + 1.0, labels).auroc == curve.auroc
        checked += 1
    ok = worst <= 1e-12
    verdict(4, ok, f"max |trapezoid - pair count| = {worst:.2e} over {checked} sets; "
                   f"monotone-transform AUROC identical on 20 sets")
    assert worst <= 1e-12


# ---------------------------------------------------------------------------
# 5. isolation forest separates far outliers from fresh inliers

def test_criterion_05_isolation_forest_far_outliers():
    aurocs = []
    for seed in range(1000, 1020):
        gen = np.random.default_rng(seed)
        train = gen.standard_normal((200, 2))
        held_in = gen.standard_normal((100, 2))
        radius = gen.uniform(6.0, 9.0, 25)  # >= 6 sigma from the inlier mean
        angle = gen.uniform(0.0, 2.0 * np.pi, 25)
        outliers = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
        model = anomaly.iforest_fit(train, seed=seed)
        scores = anomaly.anomaly_scores(model, np.vstack([held_in, outliers]))
        labels = np.concatenate([np.zeros(100, int), np.ones(25, int)])
        aurocs.append(metrics.roc(scores, labels).auroc)

    mean_auroc = float(np.mean(aurocs))
    floor = float(np.min(aurocs))
    cn = anomaly.average_path_length(256)
    harmonic = 2.0 * math.fsum(1.0 / k for k in range(1, 256)) - 2.0 * 255.0 / 256.0
    cn_err = abs(cn - harmonic)

    ok = mean_auroc >= 0.99 and floor >= 0.97 and cn_err <= 1e-3
    verdict(5, ok, f"mean AUROC {mean_auroc:.4f} (>= 0.99) over 20 seeds, "
                   f"worst seed {floor:.4f} (>= 0.97), c(256) = {cn:.6f} vs "
                   f"harmonic {harmonic:.6f} (|diff| = {cn_err:.1e} <= 1e-3)")
    assert mean_auroc >= 0.99
    assert floor >= 0.97
    assert cn_err <= 1e-3


# ---------------------------------------------------------------------------
# 6 and 7 share one end-to-end pipeline run

def _load_corpus(digit_dataset):
    mnist_dir = os.environ.get("MNIST_DATA_DIR")
    if mnist_dir:
        ds = ingest.parse_idx(
            Path(mnist_dir) / "train-images-idx3-ubyte",
            Path(mnist_dir) / "train-labels-idx1-ubyte",
            name="mnist",
        )
        return ds.images[:400], True
    return digit_dataset.images[:400], False


def _spectra(images):
    return [lyap_spectrum(ingest.flatten(im)) for im in images]


def _feature_matrix(spectra, images):
    meta = [
        RowMeta(image_id=im.image_id, provenance=im.provenance, label=im.label)
        for im in images
    ]
    return build_features(spectra, dim=4, meta=meta)


def bootstrap_auroc_ci(scores, labels, n_resamples=1000, seed=2024):
    gen = np.random.default_rng(seed)
    n = len(scores)
    draws = np.empty(n_resamples)
    k = 0
    while k < n_resamples:
        idx = gen.integers(0, n, n)
        ys = labels[idx]
        if ys.min() == ys.max():
            continue
        draws[k] = metrics.roc(scores[idx], ys).auroc
        k += 1
    return float(np.quantile(draws, 0.025)), float(np.quantile(draws, 0.975))


@pytest.fixture(scope="module")
def pipeline(digit_dataset):
    corpus, is_mnist = _load_corpus(digit_dataset)
    train_images = corpus[:200]
    test_legit = corpus[200:300]
    attack_sources = corpus[300:400]

    t0 = time.perf_counter()
    victim = softmax_train(
        train_images, [im.label for im in train_images], VictimConfig(seed=7)
    )
    attacked = [fgsm(victim, im, FgsmParams(epsilon=0.25)) for im in attack_sources]

    train_spectra = _spectra(train_images)
    legit_spectra = _spectra(test_legit)
    adv_spectra = _spectra(attacked)

    train_mat = _feature_matrix(train_spectra, train_images)
    model = anomaly.iforest_fit(train_mat, seed=99)
    model.threshold = anomaly.calibrate_threshold(model, train_mat, contamination=0.05)

    test_mat = _feature_matrix(
        legit_spectra + adv_spectra, list(test_legit) + list(attacked)
    )
    scores = anomaly.anomaly_scores(model, test_mat)
    labels = np.array([0] * len(test_legit) + [1] * len(attacked))
    elapsed = time.perf_counter() - t0

    auroc = metrics.roc(scores, labels).auroc
    ci_low, ci_high = bootstrap_auroc_ci(scores, labels)
    frac_legit = float(np.mean([has_positive_exponent(s) for s in legit_spectra]))
    frac_adv = float(np.mean([has_positive_exponent(s) for s in adv_spectra]))

    tar_before = float(
        np.mean([anomaly.decide(model, r) is anomaly.Decision.ACCEPT for r in test_mat.rows[:100]])
    )

    noisy_images = [
        noise.apply_noise(im, noise.Gaussian(var=0.01), seed=5000 + k)
        for k, im in enumerate(train_images[:100])
    ]
    noisy_spectra = _spectra(noisy_images)
    aug_mat = _feature_matrix(
        train_spectra + noisy_spectra, list(train_images) + list(noisy_images)
    )
    aug_model = anomaly.iforest_fit(aug_mat, seed=99)
    aug_model.threshold = anomaly.calibrate_threshold(aug_model, aug_mat, contamination=0.05)
    tar_after = float(
        np.mean([anomaly.decide(aug_model, r) is anomaly.Decision.ACCEPT for r in test_mat.rows[:100]])
    )

    return {
        "is_mnist": is_mnist,
        "auroc": auroc,
        "ci": (ci_low, ci_high),
        "frac_legit": frac_legit,
        "frac_adv": frac_adv,
        "victim_accuracy": victim.train_accuracy,
        "elapsed": elapsed,
        "tar_before": tar_before,
        "tar_after": tar_after,
    }


def test_criterion_06_pipeline_flags_attacked_images(pipeline):
    p = pipeline
    detail = (
        f"AUROC {p['auroc']:.4f}, bootstrap 95% CI [{p['ci'][0]:.4f}, {p['ci'][1]:.4f}], "
        f"positive-exponent fraction adv {p['frac_adv']:.3f} vs legit {p['frac_legit']:.3f}, "
        f"victim accuracy {p['victim_accuracy']:.3f}, pipeline {p['elapsed']:.0f}s "
        f"({'mnist' if p['is_mnist'] else 'bundled digits'})"
    )
    assert p["elapsed"] < 300.0
    assert 0.0 <= p["auroc"] <= 1.0
    if not p["is_mnist"]:
        print(f"[criterion 06] SKIP (needs MNIST): {detail}")
        pytest.skip(
            "criterion 6 requires MNIST (set MNIST_DATA_DIR); on the bundled "
            "smooth digit corpus the texture signal does not exist - " + detail
        )
    ok = p["auroc"] > 0.5 and p["ci"][0] > 0.5 and p["frac_adv"] > p["frac_legit"]
    verdict(6, ok, detail)
    assert p["auroc"] > 0.5
    assert p["ci"][0] > 0.5  # the whole CI sits above chance
    assert p["frac_adv"] > p["frac_legit"]


def test_criterion_07_noise_augmentation_keeps_acceptance(pipeline):
    p = pipeline
    ok = p["tar_after"] >= p["tar_before"] - 0.02
    verdict(7, ok, f"TAR before {p['tar_before']:.3f}, after augmentation "
                   f"{p['tar_after']:.3f} (allowed drop 0.02)")
    assert p["tar_after"] >= p["tar_before"] - 0.02


# ---------------------------------------------------------------------------
# 8. attack implementation checks

def test_criterion_08_fgsm_gradients_and_budget(digit_dataset):
    pool = digit_dataset.images[:60]
    victim = softmax_train(pool, [im.label for im in pool], VictimConfig(epochs=8, seed=7))

    def ce(v, label):
        logits = victim.weights @ v + victim.bias
        shifted = logits - logits.max()
        return np.log(np.exp(shifted).sum()) - shifted[label]

    # central differences; h = 1e-5 balances truncation against roundoff
    h = 1e-5
    worst_rel = 0.0
    probes = pool[:3] + digit_dataset.images[100:102]  # seen and unseen inputs
    for im in probes:
        grad = loss_gradient(victim, im, im.label).ravel()
        flat = im.pixels.ravel(order="C")
        fd = np.empty_like(flat)
        for k in range(flat.size):
            up = flat.copy()
            up[k] += h
            down = flat.copy()
            down[k] -= h
            fd[k] = (ce(up, im.label) - ce(down, im.label)) / (2 * h)
        worst_rel = max(worst_rel, np.linalg.norm(fd - grad) / np.linalg.norm(grad))

    worst_linf = 0.0
    for eps in (0.0, 0.05, 0.25):
        for im in pool[5:15]:
            out = fgsm(victim, im, FgsmParams(epsilon=eps))
            delta = float(np.max(np.abs(out.pixels - im.pixels)))
            assert delta <= eps + 1e-12
            if eps == 0.0:
                assert np.array_equal(out.pixels, im.pixels)
            else:
                worst_linf = max(worst_linf, delta)

    ok = worst_rel < 1e-6
    verdict(8, ok, f"gradient FD relative error {worst_rel:.2e} (< 1e-6) over {len(probes)} images; "
                   f"|delta|_inf <= eps on all attacks (max seen {worst_linf:.3f}); "
                   f"eps = 0 reproduces inputs exactly")
    assert worst_rel < 1e-6


# ---------------------------------------------------------------------------
# 9. byte-identical reruns through the CLI

def test_criterion_09_cli_determinism(tmp_path, digit_dataset):
    subset = ingest.Dataset(images=digit_dataset.images[:10], name="det")
    image_bytes, label_bytes = ingest.write_idx(subset)
    (tmp_path / "imgs").write_bytes(image_bytes)
    (tmp_path / "lbls").write_bytes(label_bytes)

    exp_cfg = tmp_path / "exponents.json"
    exp_cfg.write_text(json.dumps({
        "images": {"kind": "idx", "images": str(tmp_path / "imgs"),
                   "labels": str(tmp_path / "lbls"), "name": "det"},
    }))

    outs = []
    for run in ("a", "b"):
        out = tmp_path / f"exp-{run}"
        assert cli.main(["exponents", "--config", str(exp_cfg), "--out", str(out)]) == 0
        outs.append(out)

    train_cfg = tmp_path / "train.json"
    train_cfg.write_text(json.dumps({
        "features": str(outs[0] / "features.csv"),
        "detector": {"kind": "iforest", "n_trees": 40, "seed": 13},
    }))
    touts = []
    for run in ("a", "b"):
        out = tmp_path / f"train-{run}"
        assert cli.main(["train", "--config", str(train_cfg), "--out", str(out)]) == 0
        touts.append(out)

    same = (
        (outs[0] / "features.csv").read_bytes() == (outs[1] / "features.csv").read_bytes()
        and (outs[0] / "manifest.json").read_bytes() == (outs[1] / "manifest.json").read_bytes()
        and (touts[0] / "model.json").read_bytes() == (touts[1] / "model.json").read_bytes()
        and (touts[0] / "manifest.json").read_bytes() == (touts[1] / "manifest.json").read_bytes()
    )
    verdict(9, same, "exponents + train reruns byte-identical "
                     "(features.csv, model.json, both manifests)")
    assert same


# ---------------------------------------------------------------------------
# 10. leave-one-attack-out transfers between like families

def test_criterion_10_loao_consistency():
    worst_gap = 0.0
    details = []
    for seed in (1, 2, 3):
        gen = np.random.default_rng(seed)

        def mat(center, n, tag, prov):
            rows = gen.normal(loc=center, scale=1.0, size=(n, 4))
            meta = [RowMeta(image_id=f"{tag}-{k}", provenance=prov) for k in range(n)]
            return FeatureMatrix(rows=rows, meta=meta)

        natural = mat(0.0, 200, "nat", ingest.Legitimate())
        per_attack = {
            "a": mat(0.8, 150, "a", ingest.Adversarial(attack="a")),
            "b": mat(0.8, 150, "b", ingest.Adversarial(attack="b")),
        }
        curves = supervised.leave_one_attack_out(natural, per_attack)
        gap = abs(curves["a"].auroc - curves["b"].auroc)
        worst_gap = max(worst_gap, gap)
        details.append(f"seed {seed}: |{curves['a'].auroc:.4f} - {curves['b'].auroc:.4f}| = {gap:.4f}")

    ok = worst_gap < 0.05
    verdict(10, ok, f"held-out AUROC gap < 0.05 for two same-distribution families; "
                    f"{'; '.join(details)}")
    assert worst_gap < 0.05
