"""Acceptance criteria. Each test prints one ``ACCEPTANCE <n>: PASS|FAIL`` line."""

import time

import numpy as np
import pytest

import edmri.cv as cv_module
from edmri.cli import main
from edmri.cv import CVPlan, default_space, nested_cv
from edmri.errors import LeakageError
from edmri.explain import modality_share, shapley_exact, shapley_sampled
from edmri.features import extract_features, multi_slice_features, single_slice_features, volume_features
from edmri.ingest import encode_clinical
from edmri.metrics import auc, balanced_accuracy, confusion, f1
from edmri.models import FusionClassifier, class_weights, mtl_loss, weighted_ce
from edmri.models.losses import mtl_loss_logits, sigmoid, weighted_ce_logits, weighted_ce_prob_grad
from edmri.models.networks import FusionNet
from edmri.phantom import PhantomSpec, iter_cohort
from edmri.volume import MaskVolume

from conftest import central_diff, network_grad_check, rel_err

SPACING = (0.273, 0.273, 2.368)
GRAD_TOL = 1e-4


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return report


# --------------------------------------------------------------------------- 1 and 2: geometry


@pytest.fixture(scope="module")
def geometry_cohort():
    """Generate the cohort and run one full feature pass, timed together."""
    spec = PhantomSpec(n_patients=100, with_image=False, seed=2024)
    start = time.perf_counter()
    rows = []
    for _, mask, _, _, truth in iter_cohort(spec):
        mid = single_slice_features(mask)
        multi = multi_slice_features(mask)
        vol = volume_features(mask)
        rows.append((mask, truth, mid, multi, vol))
    return rows, time.perf_counter() - start


def test_criterion_1_geometry_oracle(geometry_cohort, verdict):
    rows, runtime = geometry_cohort
    worst_median, worst_volume = 0.0, 0.0
    for _, truth, mid, multi, vol in rows:
        worst_median = max(worst_median, float(np.abs(mid.medians_mm - truth.sector_widths_mid).max()))
        for sector, widths in zip(multi.sectors, truth.sector_widths_12):
            worst_median = max(worst_median, float(np.abs(sector.medians_mm - widths).max()))
        for got, want in ((vol.prostate_ml, truth.volumes_ml["prostate"]),
                          (vol.fascia_ml, truth.volumes_ml["fascia"])):
            worst_volume = max(worst_volume, abs(got / want - 1.0))
    ok = worst_median <= 0.273 and worst_volume <= 0.02 and runtime < 300
    verdict(1, ok, f"max sector error {worst_median:.4f} mm, max volume error {100 * worst_volume:.2f}%, "
                   f"{len(rows)} patients generated and measured in {runtime:.0f} s")


def _shift(labels, dx, dy):
    moved = np.roll(labels, (dx, dy), axis=(0, 1))
    assert np.count_nonzero(moved) == np.count_nonzero(labels[max(0, -dx):labels.shape[0] - max(0, dx),
                                                               max(0, -dy):labels.shape[1] - max(0, dy)])
    return moved


def test_criterion_2_rigid_exactness(geometry_cohort, verdict):
    rows, _ = geometry_cohort
    rng = np.random.default_rng(7)
    rotated_ok = translated_ok = 0
    for mask, _, mid_f, multi_f, vol in rows:
        mid, multi = mid_f.medians_mm, multi_f.values
        base = np.concatenate([mid, multi, [vol.prostate_ml, vol.fascia_ml]])
        rot = MaskVolume(np.rot90(mask.labels, 1, axes=(0, 1)), SPACING)
        rot_mid = single_slice_features(rot).medians_mm
        rot_multi = multi_slice_features(rot).values
        rotated_ok += bool(np.array_equal(rot_mid, np.roll(mid, 3))
                           and np.array_equal(rot_multi.reshape(12, 12), np.roll(multi.reshape(12, 12), 3, axis=1)))
        dx, dy = (int(v) for v in rng.integers(-20, 21, size=2))
        moved = MaskVolume(_shift(mask.labels, dx, dy), SPACING)
        translated_ok += bool(np.array_equal(extract_features(moved, "all"), base))
    n = len(rows)
    verdict(2, rotated_ok == n and translated_ok == n,
            f"rotation roll-by-3 {rotated_ok}/{n}, translation bit-identical {translated_ok}/{n}")


# --------------------------------------------------------------------------- 3: metrics


def _brute_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (pos.size * neg.size)


def test_criterion_3_metric_oracles(verdict):
    rng = np.random.default_rng(3)
    worst = 0.0
    formula_ok = 0
    for _ in range(1000):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, n)
        y[rng.choice(n, 2, replace=False)] = (0, 1)
        # coarse grids make ties common
        s = rng.integers(0, int(rng.integers(2, 50)), n) / 7.0 if rng.random() < 0.5 else rng.normal(size=n)
        worst = max(worst, abs(auc(s, y) - _brute_auc(s, y)))
        pred = (rng.random(n) < 0.5).astype(int)
        tp = int(((pred == 1) & (y == 1)).sum())
        tn = int(((pred == 0) & (y == 0)).sum())
        fp = int(((pred == 1) & (y == 0)).sum())
        fn = int(((pred == 0) & (y == 1)).sum())
        ba = 0.5 * (tp / (tp + fn) + tn / (tn + fp))
        f = 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
        formula_ok += bool(confusion(pred, y) == (tp, fp, tn, fn)
                           and balanced_accuracy(pred, y) == ba and f1(pred, y) == f)
    verdict(3, worst <= 1e-12 and formula_ok == 1000,
            f"max |auc - concordance| {worst:.1e}, BA/F1 formulas {formula_ok}/1000")


# --------------------------------------------------------------------------- 4 and 5: pipeline


def _mid_slice_design(signal, n=400, seed=41):
    spec = PhantomSpec(n_patients=n, dims=(256, 256, 24), with_image=False, signal=signal, seed=seed)
    X, y = [], []
    for _, mask, _, outcome, _ in iter_cohort(spec):
        X.append(single_slice_features(mask).medians_mm)
        y.append(outcome.binary)
    return np.array(X), np.array(y)


@pytest.fixture(scope="module")
def pipeline_runs():
    checks = []
    original = cv_module._assert_disjoint

    def recording(inner, test, where):
        checks.append((np.array(inner, copy=True), np.array(test, copy=True), where))
        return original(inner, test, where)

    cv_module._assert_disjoint = recording
    try:
        start = time.perf_counter()
        results = {}
        for signal in ("strong", "none"):
            X, y = _mid_slice_design(signal)
            results[signal] = nested_cv(X, y, default_space("logreg"), CVPlan(5, 3, 50, seed=0))
        elapsed = time.perf_counter() - start
    finally:
        cv_module._assert_disjoint = original
    return results, checks, elapsed


def test_criterion_4_signal_recovery(pipeline_runs, verdict):
    results, _, elapsed = pipeline_runs
    strong = results["strong"].aggregate["auc"]["mean"]
    none = results["none"].aggregate["auc"]["mean"]
    ok = strong >= 0.80 and 0.40 <= none <= 0.60 and elapsed <= 900
    verdict(4, ok, f"strong AUC {strong:.3f}, none AUC {none:.3f}, both runs in {elapsed:.0f} s")


def test_criterion_5_leakage_guard(pipeline_runs, verdict):
    results, checks, _ = pipeline_runs
    overlaps = sum(np.intersect1d(inner, test).size for inner, test, _ in checks)
    fold_overlaps = sum(
        np.intersect1d(f.inner_indices, f.test_indices).size + np.intersect1d(f.train_indices, f.test_indices).size
        for r in results.values() for f in r.folds
    )
    with pytest.raises(LeakageError):
        cv_module._assert_disjoint(np.arange(10), np.array([3]), "planted overlap")
    n_fits = 2 * 5 * (50 * 3 + 1)
    verdict(5, overlaps == 0 and fold_overlaps == 0 and len(checks) >= n_fits,
            f"{len(checks)} index checks, {overlaps + fold_overlaps} shared indices")


# --------------------------------------------------------------------------- 6: training


def test_criterion_6_training_correctness(verdict):
    worst = {"weighted_ce": 0.0, "mtl_loss": 0.0, "fusion": 0.0}
    lam0_exact = weights_ok = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 30))
        y = np.r_[0, 1, rng.integers(0, 2, n - 2)]
        w = class_weights(y)
        n0, n1 = int((y == 0).sum()), int((y == 1).sum())
        weights_ok += bool(abs(w[0] * n0 - w[1] * n1) <= 1e-12 * n)

        p = rng.uniform(0.05, 0.95, n)
        z = rng.normal(size=n)
        g_prob = rel_err(weighted_ce_prob_grad(p, y, w), central_diff(lambda v: weighted_ce(v, y, w), p))
        g_logit = rel_err(weighted_ce_logits(z, y, w)[1], central_diff(lambda v: weighted_ce_logits(v, y, w)[0], z))
        worst["weighted_ce"] = max(worst["weighted_ce"], g_prob, g_logit)

        a = rng.normal(size=n)
        ages = rng.normal(size=n)
        lam = float(rng.uniform(0.0, 5.0))
        _, dz, da = mtl_loss_logits(z, a, y, ages, w, lam)
        num_z = central_diff(lambda v: mtl_loss(sigmoid(v), a, y, ages, w, lam), z)
        num_a = central_diff(lambda v: mtl_loss(sigmoid(z), v, y, ages, w, lam), a)
        worst["mtl_loss"] = max(worst["mtl_loss"], rel_err(dz, num_z), rel_err(da, num_a))
        lam0_exact += bool(mtl_loss(p, a, y, ages, w, lambda_reg=0.0) == weighted_ce(p, y, w))

        n_img, n_cli = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        X = rng.normal(size=(n, n_img + n_cli))
        net = FusionNet(n_img, n_cli, int(rng.integers(3, 8)), int(rng.integers(2, 5)))
        worst["fusion"] = max(worst["fusion"], network_grad_check(net, X, y, w, rng))
    ok = max(worst.values()) < GRAD_TOL and lam0_exact == 100 and weights_ok == 100
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(6, ok, f"max relative gradient error: {detail}; lambda=0 exact {lam0_exact}/100, "
                   f"w0*n0 = w1*n1 {weights_ok}/100")


# --------------------------------------------------------------------------- 7: Shapley


def _random_model(rng, d):
    W = rng.normal(size=(d, 6))
    v = rng.normal(size=6)
    return lambda X: sigmoid(np.tanh(X @ W) @ v + 0.3 * X[:, 0] * X[:, -1])


def test_criterion_7_shapley_axioms(verdict):
    rng = np.random.default_rng(11)
    worst_eff = worst_lin = 0.0
    for d in range(1, 11):
        for _ in range(3):
            f = _random_model(rng, d)
            bg = rng.normal(size=(25, d))
            rep = shapley_exact(f, rng.normal(size=d), bg)
            worst_eff = max(worst_eff, abs(rep.values.sum() - (rep.prediction - rep.base_value)))
            w, c = rng.normal(size=d), float(rng.normal())
            x = rng.normal(size=d)
            lin = shapley_exact(lambda X: X @ w + c, x, bg)
            worst_lin = max(worst_lin, float(np.abs(lin.values - w * (x - bg.mean(axis=0))).max()))
    f = _random_model(np.random.default_rng(5), 8)
    bg = np.random.default_rng(6).normal(size=(40, 8))
    x = np.random.default_rng(7).normal(size=8)
    exact = shapley_exact(f, x, bg).values
    sampled = shapley_sampled(f, x, bg, n_permutations=20_000, rng=np.random.default_rng(8)).values
    gap = float(np.abs(sampled - exact).max())
    verdict(7, worst_eff <= 1e-6 and worst_lin <= 1e-8 and gap <= 0.02,
            f"efficiency {worst_eff:.1e}, linear closed form {worst_lin:.1e}, sampled vs exact {gap:.4f}")


# --------------------------------------------------------------------------- 8: modality shares


def _fusion_shares(signal):
    spec = PhantomSpec(n_patients=300, dims=(128, 128, 24), radius_mm=(5.0, 6.0), signal=signal,
                       with_image=False, seed=17)
    F, R, y = [], [], []
    for _, mask, rec, outcome, _ in iter_cohort(spec):
        F.append(single_slice_features(mask).medians_mm)
        R.append(rec)
        y.append(outcome.binary)
    X = np.column_stack([np.array(F), encode_clinical(R)])
    y = np.array(y)
    tr, va, te = np.arange(180), np.arange(180, 240), np.arange(240, 300)
    model = FusionClassifier(n_imaging=12, hidden=16, d_emb=8).fit(X[tr], y[tr], X[va], y[va])
    predict = lambda rows: model.predict_proba(rows)[:, 1]  # noqa: E731
    background = X[tr][::4]
    partition = {"imaging": range(12), "clinical": range(12, X.shape[1])}
    rng = np.random.default_rng(0)
    shares = [modality_share(shapley_sampled(predict, X[i], background, 1000, rng).values, partition)
              for i in te]
    return {k: float(np.mean([s[k] for s in shares])) for k in partition}


def test_criterion_8_modality_shares(verdict):
    imaging = _fusion_shares("imaging")["imaging"]
    clinical = _fusion_shares("clinical")["clinical"]
    verdict(8, imaging > 0.5 and clinical > 0.5,
            f"imaging-signal imaging share {imaging:.3f}, clinical-signal clinical share {clinical:.3f}")


# --------------------------------------------------------------------------- 9: reproducibility


def _results(directory):
    return {p.relative_to(directory): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file() and not p.name.startswith("manifest")}


def test_criterion_9_cli_reproducibility(tmp_path, verdict):
    def run(*argv):
        assert main([str(a) for a in argv]) == 0

    for rep in ("a", "b"):
        root = tmp_path / rep
        run("phantom", "--n", 30, "--dims", "224,224,24", "--radius-profile", "ellipsoid",
            "--missing-rate", 0.1, "--seed", 9, "--out", root / "ds")
        run("features", "--masks", root / "ds" / "masks", "--mode", "all", "--seed", 9,
            "--out", root / "feats" / "features.csv")
        run("preprocess", "--in", root / "ds" / "volumes" / "P0000.mvol", "--seed", 9,
            "--out", root / "prep" / "P0000.mvol")
        run("train-eval", "--features", root / "feats" / "features.csv", "--clinical", root / "ds" / "clinical.csv",
            "--labels", root / "ds" / "labels.csv", "--model", "fusion", "--trials", 2, "--outer", 2,
            "--inner", 2, "--max-epochs", 15, "--patience", 5, "--seed", 9, "--out", root / "train")
        run("explain", "--model", root / "train" / "model_fold0.json", "--features", root / "train" / "design.csv",
            "--background", root / "train" / "design.csv", "--sampled", "--permutations", 50, "--limit", 3,
            "--max-background", 10, "--seed", 9, "--out", root / "explain" / "shap.json")
    mismatched = []
    commands = ("ds", "feats", "prep", "train", "explain")
    for sub in commands:
        a, b = _results(tmp_path / "a" / sub), _results(tmp_path / "b" / sub)
        if not a or a != b:
            mismatched.append(sub)
    verdict(9, not mismatched, f"{len(commands) - len(mismatched)}/{len(commands)} commands byte-identical"
                               + (f"; differing: {mismatched}" if mismatched else ""))

