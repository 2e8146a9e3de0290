"""
Labeling posts and comments
===========================

Posts take their label from the market window; comments under a P&D post
are P&D when written by the original poster or when they use at least two
distinct agreement terms. This script shows the text pipeline and the
comment rules, then labels a synthetic corpus and prints its class table.
"""

# %%
from pndetect.ingestion import Comment, window_posts
from pndetect.labeling import COMMENT, POST, Label, LabeledDocument, LabelSource, assemble_dataset, default_lexicon, label_comment
from pndetect.market_events import classify_window
from pndetect.synth import generate_corpus
from pndetect.text_pipeline import TokenSeq, preprocess

lexicon = default_lexicon()
for text in ("Buying $AYTU!!! http://x.co at 0.50", "I'm gonna buy, it's going UP", "clearly a pump and dump scheme"):
    print(f"{text!r:<42} -> {list(preprocess(text).tokens)}")

# %%
# Comment rules under a P&D parent.
parent = LabeledDocument("p1", POST, TokenSeq(("x",), "p1", POST), Label.PND, LabelSource.MARKET_SHAPE)
for author, text in (("op", "thanks all"), ("u2", "i agree buy now"), ("u2", "clearly a pump and dump scheme"),
                     ("u2", "buy buy buy"), ("u2", "great pick, definitely worth it")):
    doc = label_comment(preprocess(text, "c", COMMENT), Comment("c", "p1", author, 0, text), parent, "op", lexicon)
    hits = sorted(lexicon.hits(doc.tokens.tokens))
    print(f"{author:<3} {text!r:<36} hits {hits}  -> {doc.label.name} via {doc.label_source.value}")

# %%
# A synthetic corpus labeled end to end. The generator records the label it
# intended for every document, so the class table can be checked exactly.
corpus = generate_corpus(2000, 0.09, lexicon, seed=1)
res = window_posts(corpus.posts, corpus.listings, corpus.bars, corpus.comments)
verdicts = {pid: classify_window(w) for pid, w in res.windows.items()}
docs, report = assemble_dataset(res.posts, res.comments, verdicts, lexicon, corpus.sector_map)
print(report.format_table())
print("matches generator truth:", report.as_dict() == corpus.truth.class_counts())

# %%
# Posts carry a sector token in place of their ticker.
for d in docs[:5]:
    print(d.id, d.label.name, " ".join(d.tokens.tokens))
