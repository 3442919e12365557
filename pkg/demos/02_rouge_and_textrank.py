"""
Scoring summaries and an extractive baseline
============================================

ROUGE compares clipped n-gram counts and the longest common subsequence.
The training reward is a weighted mix of the three F1 scores.
"""

from masksum import rouge
from masksum.corpus import SyntheticSpec, generate_examples
from masksum.textrank import EmbeddingTable, extract_summary

# %%
s = rouge.score("the cat sat", "the cat ate")
print("rouge1", s.rouge1)
print("rouge2", s.rouge2)
print("rougeL", s.rougeL)
print("reward with weights 0.4/0.3/0.3:", round(rouge.reward("the cat sat", "the cat ate"), 4))

# %%
# TextRank ranks sentences by weighted PageRank over cosine similarity of
# mean word vectors. Without a vector file, each word gets a hash-seeded
# random unit vector, so similarity reduces to word overlap.
doc = ("The river flooded the town after the storm. The storm brought heavy rain to the valley. "
       "Town officials opened shelters for families. A local bakery sold bread as usual.")
summary, graph = extract_summary(doc, k=2, emb=EmbeddingTable.hash_embeddings(), return_graph=True)
print("scores", graph.scores.round(3), "after", graph.iterations, "iterations")
print("summary:", summary)

# %%
# On the synthetic corpus the reference paraphrases verbs, so even a perfect
# extraction loses some unigrams. TextRank also has no idea which sentences
# matter; it favours ones that resemble the others.
examples = generate_examples(SyntheticSpec(num_examples=50))
pairs = [(extract_summary(e.article, k=2), e.summary) for e in examples]
print(rouge.corpus_eval(pairs).lines())
