"""
Training, cross-validation and word impact
==========================================

Bag-of-words features feed a class-weighted logistic regression and a small
multilayer perceptron. Five-fold stratified cross-validation gives the
results table, and permutation Shapley values rank the words that drive the
MLP's P&D predictions.
"""

# %%
import numpy as np

from pndetect.evaluation import cross_validate
from pndetect.explain import background_sample, rank_impact, stratified_indices
from pndetect.features import build_vocab, class_weights, vectorize, vectorize_corpus
from pndetect.ingestion import window_posts
from pndetect.labeling import POST, assemble_dataset, default_lexicon
from pndetect.market_events import classify_window
from pndetect.models import TrainConfig, train
from pndetect.synth import generate_corpus

lexicon = default_lexicon()
corpus = generate_corpus(1500, 0.09, lexicon, seed=3)
res = window_posts(corpus.posts, corpus.listings, corpus.bars, corpus.comments)
verdicts = {pid: classify_window(w) for pid, w in res.windows.items()}
docs, report = assemble_dataset(res.posts, res.comments, verdicts, lexicon, corpus.sector_map)
print(report.format_table())

# %%
# Class weights put the same total mass on each class.
y_all = np.array([int(d.label) for d in docs])
w = class_weights(y_all)
print(f"weight P&D {w.weight_pnd:.3f}, weight not P&D {w.weight_not:.3f}")

# %%
# Results table for both models on posts only and on posts with comments.
cfg = TrainConfig(learning_rate=0.01, epochs=8, batch_size=64, hidden_sizes=(32,))
for which in ("posts", "all"):
    subset = [d for d in docs if which == "all" or d.kind == POST]
    vocab = build_vocab(d.tokens.tokens for d in subset)
    X = vectorize_corpus((d.tokens.tokens for d in subset), vocab)
    y = np.array([int(d.label) for d in subset])
    for kind in ("logreg", "mlp"):
        name = f"{kind.upper()} {'Posts' if which == 'posts' else 'Posts and Comments'}"
        rep = cross_validate(X, y, kind, cfg, k=5, seed=0, name=name)
        print(" | ".join(rep.row()))

# %%
# Word impact for an MLP trained on everything: mean absolute Shapley value
# of the predicted P&D probability over a stratified sample of documents.
vocab = build_vocab(d.tokens.tokens for d in docs)
X = vectorize_corpus((d.tokens.tokens for d in docs), vocab)
model = train("mlp", X, y_all, TrainConfig(epochs=8, hidden_sizes=(32,), class_weights=w))
background = background_sample(X, y_all, 100, seed=0)
rows = stratified_indices(y_all, 60, seed=1)
instances = [vectorize(docs[i].tokens.tokens, vocab) for i in rows]
ranking = rank_impact(model, instances, background, vocab.terms, samples=200, seed=0, top_n=15)
for rank, (term, v) in enumerate(ranking, start=1):
    print(f"{rank:>3}. {term:<24} {v:.4f}")
