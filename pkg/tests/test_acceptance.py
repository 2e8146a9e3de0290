"""One test per acceptance criterion, each recording a PASS/FAIL line.

The lines are printed together at the end of the run (see conftest.py).
"""
import csv
import json
import math
import time
from contextlib import contextmanager
from datetime import date

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.special import expit

from builders import window
from oracles import (
    classify_exact,
    coalition_shapley,
    dap_exact,
    finite_difference,
    mean_exact,
    pop_var_exact,
    relative_error,
)
from pndetect.cli import EXIT_OK, main
from pndetect.evaluation import ConfusionMatrix, false_positive_rate, metrics
from pndetect.explain import shapley_attribute
from pndetect.features import SparseVector
from pndetect.ingestion import Comment, OhlcvBar
from pndetect.labeling import COMMENT, POST, AgreementLexicon, Label, LabeledDocument, LabelSource, default_lexicon, label_comment
from pndetect.market_events import baseline_stats, classify_window, dap, rising_slope
from pndetect.models import (
    LogRegModel,
    MlpModel,
    TrainConfig,
    init_mlp,
    logreg_loss_grad,
    mlp_loss_grad,
    train,
    train_logreg,
    train_mlp,
)
from pndetect.synth import KINDS, generate_window, random_spec
from pndetect.text_pipeline import TokenSeq, preprocess

RESULTS: dict[int, tuple[bool, str]] = {}


@contextmanager
def criterion(n: int, title: str):
    notes: list[str] = []
    try:
        yield notes
    except BaseException as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        RESULTS[n] = (False, f"{title}: {msg}")
        raise
    RESULTS[n] = (True, f"{title}" + (f" ({'; '.join(notes)})" if notes else ""))
    print(f"criterion {n}: PASS  {RESULTS[n][1]}")


# -- 1 ----------------------------------------------------------------------------------

def test_criterion_1_metric_reproduction():
    with criterion(1, "published confusion matrices reproduce their scores") as notes:
        t0 = time.perf_counter()
        rows = {
            (2304, 2068, 13481, 702): (85.07, 52.70, 76.65, 62.46),
            (2382, 1718, 13831, 624): (87.38, 58.10, 79.24, 67.04),
        }
        for (tp, fp, tn, fn), want in rows.items():
            got = tuple(round(v, 2) for v in metrics(ConfusionMatrix(tp, fp, tn, fn)).as_tuple())
            assert got == want, f"{got} != {want}"
        fpr = false_positive_rate(ConfusionMatrix(2304, 2068, 13481, 702))
        assert round(fpr, 1) == 13.3, fpr
        ms = 1000 * (time.perf_counter() - t0)
        notes.append(f"fpr {fpr:.2f}%, {ms:.1f} ms")


# -- 2 ----------------------------------------------------------------------------------

GATES = {
    "pnd": (True, True, True),
    "normal": (False, False, False),
    "price_only_spike": (True, False, False),
    "volume_only_spike": (False, True, False),
    "steep_news": (True, True, False),
}


def test_criterion_2_labeling_oracle_equivalence():
    with criterion(2, "classify_window agrees with generator truth on 1,000 windows") as notes:
        t0 = time.perf_counter()
        rng = np.random.default_rng(2024)
        agree = 0
        total = 0
        for kind in KINDS:
            for _ in range(200):
                win, truth = generate_window(random_spec(kind, rng))
                v = classify_window(win)
                assert (v.price_anomaly, v.volume_anomaly, v.is_pnd_shape) == GATES[kind], kind
                agree += v.is_pnd_shape == truth
                total += 1
        elapsed = time.perf_counter() - t0
        assert agree == total == 1000
        assert elapsed < 10, f"{elapsed:.1f} s"
        notes.append(f"{agree}/{total} agree, {elapsed:.2f} s")


# -- 3 ----------------------------------------------------------------------------------

def _grid(rng, n, lo=1, hi=400):
    """Prices on a 1/64 grid, exactly representable."""
    return [int(k) / 64 for k in rng.integers(lo, hi, n)]


def _bars(prices, vols):
    return window(prices[:5], prices[5:], vols[:5], vols[5:])


def _dyadic_shift(rng):
    return int(rng.integers(-256, 256)) / 64


def test_criterion_3_equation_conformance():
    with criterion(3, "market equations over 10,000 randomized cases") as notes:
        t0 = time.perf_counter()
        rng = np.random.default_rng(3)
        cases = 10_000
        tie_cases = 0
        for i in range(cases):
            # quartet mean on a bar with distinct open/high/low/close
            o, h, l, c = _grid(rng, 4)
            bar = OhlcvBar(date(2020, 4, 1), o, max(o, h, l, c), min(o, h, l, c), c, 1)
            assert dap(bar) == float(dap_exact(bar.open, bar.high, bar.low, bar.close))

            if i % 5 == 0:
                # strict thresholding at an exactly representable two-sigma line:
                # baseline a*[0,0,0,0,5]+b has mean a+b and sigma 2a
                a = int(rng.integers(1, 40)) / 8
                b = int(rng.integers(1, 256)) / 64
                base = [b, b, b, b, 5 * a + b]
                rng.shuffle(base)
                line = 5 * a + b
                bump = 1 / 64 if rng.random() < 0.5 else 0.0
                event = [b, line + bump, b, b]
                vols = [100] * 9
                w = _bars(base + event, vols)
                v = classify_window(w)
                assert v.price_anomaly == (bump > 0)
                tie_cases += 1
                continue

            prices = _grid(rng, 9)
            vols = [int(x) for x in rng.integers(1, 50, 9) * 1000]
            w = _bars(prices, vols)
            s = baseline_stats(w)
            # five-day means and population sigma
            assert s.bap == float(mean_exact(prices[:5]))
            assert s.bav == float(mean_exact(vols[:5]))
            assert math.isclose(s.sigma_price, math.sqrt(pop_var_exact(prices[:5])), rel_tol=1e-12, abs_tol=1e-15)
            v = classify_window(w)
            want = classify_exact(prices[:5], vols[:5], prices[5:], vols[5:])
            assert (v.price_anomaly, v.volume_anomaly, v.is_pnd_shape) == want, (prices, vols)

            # scale equivariance with exact power-of-two factors
            j, jv = int(rng.integers(-3, 4)), int(rng.integers(0, 4))
            ws = _bars([p * 2.0**j for p in prices], [x * 2**jv for x in vols])
            ss = baseline_stats(ws)
            assert ss.bap == s.bap * 2.0**j and ss.sigma_price == s.sigma_price * 2.0**j
            assert classify_window(ws) == v

            # slope is invariant under positive affine maps of price
            ev = np.array(prices[5:])
            assert rising_slope(ev * 2.0**j + _dyadic_shift(rng)) == rising_slope(ev)
            cont = rng.uniform(0.1, 5.0, 4)
            alpha, beta = rng.uniform(0.01, 100.0), rng.uniform(-10.0, 10.0)
            assert abs(rising_slope(alpha * cont + beta) - rising_slope(cont)) <= 1e-9
        elapsed = time.perf_counter() - t0
        assert elapsed < 30, f"{elapsed:.1f} s"
        notes.append(f"{cases} cases incl. {tie_cases} threshold ties, {elapsed:.1f} s")


# -- 4 ----------------------------------------------------------------------------------

def _parent(label=Label.PND):
    return LabeledDocument("p1", POST, TokenSeq(("x",), "p1", POST), label, LabelSource.MARKET_SHAPE)


def _label(text_or_tokens, author="u2", lexicon=None, tokens=False):
    lexicon = lexicon or default_lexicon()
    if tokens:
        seq = TokenSeq(tuple(text_or_tokens), "c1", COMMENT)
        body = " ".join(text_or_tokens)
    else:
        seq = preprocess(text_or_tokens, "c1", COMMENT)
        body = text_or_tokens
    c = Comment("c1", "p1", author, 1_586_000_000, body)
    return label_comment(seq, c, _parent(), "op", lexicon)


def test_criterion_4_agreement_model():
    with criterion(4, "agreement rules on worked examples and 4,000 random comments") as notes:
        lex = default_lexicon()
        assert _label("anything at all", author="op").label is Label.PND
        assert _label("clearly a pump and dump scheme").label is Label.NOT_PND
        assert _label("i agree, buy now").label is Label.PND
        assert _label("buy", author="u9").label is Label.NOT_PND

        rng = np.random.default_rng(4)
        pool = sorted(lex.match_terms) + ["chart", "revenue", "debt", "merger", "scam", "filing"]
        small = AgreementLexicon.from_terms(sorted(lex.empath_terms)[:15], sorted(lex.custom_terms)[:10])
        for _ in range(2000):
            toks = [pool[i] for i in rng.integers(0, len(pool), int(rng.integers(0, 10)))]
            distinct = len(set(toks) & lex.match_terms)
            assert (_label(toks, tokens=True).label is Label.PND) == (distinct >= 2), toks
        for _ in range(2000):
            toks = [pool[i] for i in rng.integers(0, len(pool), int(rng.integers(0, 10)))]
            extra = [pool[i] for i in rng.integers(0, len(pool), 5)]
            big = AgreementLexicon.from_terms(set(small.empath_terms) | set(extra), small.custom_terms)
            if _label(toks, lexicon=small, tokens=True).label is Label.PND:
                assert _label(toks, lexicon=big, tokens=True).label is Label.PND
        notes.append(f"{len(lex.terms)} lexicon terms")


# -- 5 ----------------------------------------------------------------------------------

def _toy(n=40, d=6, seed=0):
    rng = np.random.default_rng(seed)
    X = sp.csr_matrix(rng.integers(0, 3, (n, d)).astype(float))
    y = rng.integers(0, 2, n).astype(float)
    y[:2] = [0, 1]
    return X, y, rng.uniform(0.5, 3.0, n)


def test_criterion_5_training_soundness():
    with criterion(5, "gradients, reproducibility, weighting") as notes:
        X, y, sw = _toy()
        worst = 0.0
        params = [np.random.default_rng(1).normal(size=6), np.array(0.2)]
        _, g = logreg_loss_grad(params, X, y, sw, 0.1)
        fd = finite_difference(lambda p: logreg_loss_grad(p, X, y, sw, 0.1)[0], params)
        for a, b in zip(g, fd):
            worst = max(worst, relative_error(a, b))
        rng = np.random.default_rng(2)
        params = [p + rng.normal(0, 0.1, p.shape) for p in init_mlp(6, (5, 4), seed=3)]
        _, g = mlp_loss_grad(params, X, y, sw, 0.05)
        fd = finite_difference(lambda p: mlp_loss_grad(p, X, y, sw, 0.05)[0], params)
        assert len(g) == 6
        for a, b in zip(g, fd):
            worst = max(worst, relative_error(a, b))
        assert worst <= 1e-5, worst

        for kind in ("logreg", "mlp"):
            cfg = TrainConfig(epochs=4, batch_size=8, seed=5, hidden_sizes=(6,))
            m1, m2 = train(kind, X, y, cfg), train(kind, X, y, cfg)
            assert all(np.array_equal(a, b) for a, b in zip(m1.params, m2.params)), kind

            dup = sp.vstack([X, X[5]]).tocsr()
            w = np.ones(X.shape[0])
            w[5] = 2.0
            full = TrainConfig(epochs=20, batch_size=1000, hidden_sizes=(4,), learning_rate=0.05)
            a = train(kind, dup, np.append(y, y[5]), full)
            b = (train_logreg if kind == "logreg" else train_mlp)(X, y, full, sample_weight=w)
            np.testing.assert_allclose(a.history, b.history, rtol=1e-12)
        notes.append(f"worst gradient relative error {worst:.1e}")


# -- 6 ----------------------------------------------------------------------------------

def test_criterion_6_explanation_soundness():
    with criterion(6, "Shapley efficiency, exhaustive agreement, linear closed form") as notes:
        rng = np.random.default_rng(6)
        w = rng.normal(size=8)
        lin = LogRegModel(w, 0.3)
        x = SparseVector.from_dense(rng.integers(0, 3, 8).astype(float))
        bg = rng.integers(0, 3, (1, 8)).astype(float)
        attr = shapley_attribute(lin, x, sp.csr_matrix(bg), samples=50, seed=1, output="logit")
        want = w * (x.to_dense() - bg[0])
        lin_err = max(abs(attr.values.get(j, 0.0) - want[j]) for j in range(8))
        assert lin_err <= 1e-6

        worst_gap, worst_rel = 0.0, 0.0
        for s in range(5):
            params = [p + np.random.default_rng(s).normal(0, 0.5, p.shape) for p in init_mlp(3, (5,), seed=s)]
            mlp = MlpModel(params[0::2], params[1::2])
            x3 = rng.integers(1, 4, 3).astype(float)
            B = rng.integers(0, 3, (4, 3)).astype(float)
            f = lambda z: float(expit(mlp.logits_dense(z[None, :], np.arange(3)))[0])  # noqa: E731
            oracle = coalition_shapley(f, x3, B)
            est = shapley_attribute(mlp, SparseVector.from_dense(x3), sp.csr_matrix(B), samples=2000, seed=s)
            e = np.array([est.values[j] for j in range(3)])
            rel = np.linalg.norm(e - oracle) / np.linalg.norm(oracle)
            worst_rel = max(worst_rel, rel)
            assert rel <= 0.05, rel
            tol = 1e-3 * abs(est.output - est.base) + 1e-6
            worst_gap = max(worst_gap, est.efficiency_gap())
            assert est.efficiency_gap() <= tol

            wide = [p + 0.1 for p in init_mlp(20, (8, 4), seed=s)]
            big = MlpModel(wide[0::2], wide[1::2])
            xb = SparseVector.from_dense(rng.integers(0, 3, 20).astype(float))
            Bb = sp.csr_matrix(rng.integers(0, 2, (100, 20)).astype(float))
            ab = shapley_attribute(big, xb, Bb, samples=2000, seed=s)
            worst_gap = max(worst_gap, ab.efficiency_gap())
            assert ab.efficiency_gap() <= 1e-3 * abs(ab.output - ab.base) + 1e-6
        notes.append(f"linear error {lin_err:.1e}, MC relative error <= {100 * worst_rel:.2f}%, "
                     f"efficiency gap <= {worst_gap:.1e}")


# -- 7 and 8 ------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    corpus, work = root / "corpus", root / "work"
    t0 = time.perf_counter()
    codes = [main(["simulate", "--out", str(corpus), "--n-posts", "5000", "--pnd-fraction", "0.09"])]
    common = ["--config", str(corpus / "config.yaml"), "--workdir", str(work)]
    for cmd in ("ingest", "label", "train", "eval"):
        codes.append(main([cmd, *common]))
    return corpus, work, codes, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_7_end_to_end(desk_run):
    with criterion(7, "simulate, ingest, label, train, eval on 5,000 posts") as notes:
        _, work, codes, elapsed = desk_run
        assert codes == [EXIT_OK] * 5, codes
        row = next(csv.DictReader(open(work / "eval" / "report.csv")))
        f1 = float(row["f1_mean"])
        assert elapsed < 300, f"{elapsed:.0f} s"
        assert f1 >= 90.0, f"mean F1 {f1:.2f}"
        notes.append(f"mean F1 {f1:.2f} (±{float(row['f1_std']):.2f}), {elapsed:.1f} s")


@pytest.mark.slow
def test_criterion_8_class_distribution(desk_run):
    with criterion(8, "class distribution equals generator truth") as notes:
        corpus, work, codes, _ = desk_run
        assert codes[:3] == [EXIT_OK] * 3
        truth = json.loads((corpus / "truth.json").read_text())
        got = json.loads((work / "label" / "class_distribution.json").read_text())

        def tally(labels):
            pnd = sum(labels.values())
            return {"pnd": pnd, "not_pnd": len(labels) - pnd, "total": len(labels)}
        posts, comments = tally(truth["post_labels"]), tally(truth["comment_labels"])
        want = {"posts": posts, "comments": comments,
                "total": {k: posts[k] + comments[k] for k in posts}}
        assert got == want

        table = (work / "label" / "class_distribution.txt").read_text()
        cells = [[c.strip() for c in line.split("|")] for line in table.splitlines() if "|" in line]
        assert [r[0] for r in cells] == ["Record Type", "Posts", "Comments", "Total"]
        assert cells[0][1:] == ["P&D", "Not P&D", "Total"]
        for r, key in zip(cells[1:], ("posts", "comments", "total")):
            assert [int(v.replace(",", "")) for v in r[1:]] == [want[key]["pnd"], want[key]["not_pnd"], want[key]["total"]]
        print(table)
        notes.append(f"{want['total']['pnd']:,} P&D of {want['total']['total']:,} records")
