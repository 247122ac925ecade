"""
Mixing pretraining data into a finetuning stream
=================================================

Each row of a batch comes from the pretraining stream with probability p.
This script draws a mixed stream, checks the injection rate, counts tokens,
runs a scarce domain through several epochs, and packs loss masks into token
ids.
"""

import numpy as np

from scalelab.datapipe import (
    Cursor,
    DomainStream,
    MixtureConfig,
    binomial_band,
    masked_loss_positions,
    mixture_sources,
    next_epoch_batch,
    pack_array,
    sample_mixture,
    tokens_seen,
)

# Random token ids stand in for two tokenized corpora.
ft = DomainStream.synthetic("github", 2_000_000, seed=1)
pt = DomainStream.synthetic("slimpajama", 2_000_000, seed=2)

cfg = MixtureConfig(p=0.01, seed=0, batch_size=32, seq_len=1024)
mixed = sample_mixture(cfg, ft, pt)
batches = mixed.take(40)
n_pt = sum(int(b.from_pt.sum()) for b in batches)
print(f"40 batches: {n_pt} of {40 * 32} rows came from pretraining data")

# Over a million rows the observed rate sits inside the 3-sigma binomial band.
src = mixture_sources(cfg, 1_000_000)
lo, hi = binomial_band(cfg.p, src.size)
print(f"rate over 1e6 rows: {src.mean():.5f}  band [{lo:.5f}, {hi:.5f}]")

# Expected token split after 1800 steps of 32 x 1024 tokens.
pt_tok, ft_tok = tokens_seen(0.01, 1800, 32, 1024)
print(f"after 1800 steps: {pt_tok:,} pretraining tokens, {ft_tok:,} finetuning tokens")

# A domain capped at 300K unique tokens repeats. Under the default policy the
# batch that finishes an epoch is cut short so the next epoch starts clean.
scarce = DomainStream.synthetic("arxiv", 1_000_000, unique_token_budget=300_000)
cur, epochs = Cursor(), []
for _ in range(25):
    batch, cur, ep = next_epoch_batch(scarce, cur)
    epochs.append(ep)
print("epoch after each batch:", epochs)

# Instruction data: the vocabulary fits in 15 bits, so bit 15 marks prompt
# tokens that are excluded from the loss.
ids = np.array([812, 77, 4051, 9, 30000, 12])
prompt = np.array([True, True, True, False, False, False])
packed = pack_array(ids, prompt)
print("packed:", [hex(v) for v in packed], "loss on positions", masked_loss_positions(packed).tolist())
