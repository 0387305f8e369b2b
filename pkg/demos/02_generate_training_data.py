"""Create question/answer/passage training data from a passage store.

Uses the deterministic mock LLM client so the demo runs offline; swap in
RemoteLLMClient (RQA_LLM_ENDPOINT / RQA_LLM_KEY) for a real model.

Run: python demos/02_generate_training_data.py
"""

from rqakit.corpus import ingest
from rqakit.datagen import (
    dedup_questions,
    generate_answers,
    generate_questions,
    sample_gold_and_negatives,
    split_dataset,
)
from rqakit.llm import MockLLMClient
from rqakit.synth import synthetic_documents

store = ingest(synthetic_documents(n_docs=80, n_topics=16, seed=1), max_passage_tokens=64)
client = MockLLMClient()

# 1. pick gold passages and same-source hard negatives
sampled = sample_gold_and_negatives(store, n_gold=30, n_hard_neg=2, rng_seed=0)
gold_ids = [gid for gid, _ in sampled]
print(f"sampled {len(gold_ids)} gold passages")
print(f"hard negatives for {gold_ids[0]}: {dict(sampled)[gold_ids[0]]}")

# 2. questions: two per passage, with an optional filter hook
questions = generate_questions(
    client,
    [store.get(gid) for gid in gold_ids],
    questions_per_passage=2,
    filter_fn=lambda p: p.token_count >= 8,  # skip stub passages
)
print(f"\ngenerated {len(questions)} questions, e.g. {questions[0][0]!r}")

# 3. drop near-duplicates by ROUGE-L overlap against retained questions
unique = dedup_questions(questions, rouge_l_threshold=0.7)
print(f"after ROUGE-L dedup at 0.7: {len(unique)} questions")

# 4. answers conditioned on the gold passage
pairs = generate_answers(
    client,
    [(q, store.get(gid)) for q, gid in unique],
    store,
    hard_negatives=dict(sampled),
)
print(f"first pair: q={pairs[0].question!r}")
print(f"            a={pairs[0].answer!r}")

# 5. split without leaking a gold passage across splits
train, val, test = split_dataset(pairs, n_train=None, n_val=8, n_test=10, rng_seed=0)
print(f"\nsplits: train={len(train)} validation={len(val)} test={len(test)}")
train_golds = {p.gold_passage_id for p in train}
test_golds = {p.gold_passage_id for p in test}
print(f"gold-passage overlap between train and test: {len(train_golds & test_golds)}")
