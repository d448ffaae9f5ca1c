"""The learnable subject token.

Registers a pseudo-token initialized from its class noun, encodes prompts
with it, and shows that prompts differing in one word differ in exactly one
encoded position.
"""

import numpy as np

from subjectcraft import ToyTextEncoder

enc = ToyTextEncoder(embed_dim=16, max_length=8, extra_words=("photo",), seed=0)
print(f"vocabulary: {len(enc.vocabulary)} words, embed dim {enc.embed_dim}")

token_id = enc.register_token("v*", "ball")
print(f"registered 'v*' as id {token_id}, row copied from 'ball'")
same = np.array_equal(enc.embedding_table[token_id], enc.embedding_table[enc.vocabulary["ball"]])
print(f"row equals the 'ball' row at creation: {same}")

emb = enc.encode("a photo of v* ball")
print(f"\nencoded 'a photo of v* ball' -> shape {emb.shape}")
print(f"token ids: {enc.token_ids('a photo of v* ball')}")

a = enc.encode("a red ball on the table")
b = enc.encode("a blue ball on the table")
diff_positions = np.where(np.abs(a - b).sum(axis=1) > 0)[0]
print(f"\n'red' vs 'blue' prompts differ at positions {diff_positions.tolist()} only")

unknown = enc.token_ids("a zxqv ball")
print(f"unknown word maps to the UNK id: {unknown[1]} == {enc.vocabulary['<unk>']}")

# nudge the subject row the way a training step would; nothing else moves
before = enc.embedding_table.copy()
enc.embedding_table[token_id] += 0.25
moved = np.where(np.abs(enc.embedding_table - before).sum(axis=1) > 0)[0]
print(f"after a manual update, changed rows: {moved.tolist()} (the subject token only)")
