"""
Key distribution with a classical Bob
=====================================

Run both key protocols without an eavesdropper, then let Eve measure every
qubit on its way back to Alice and watch the CTRL checks catch her.
"""

import numpy as np

from sqkd import ProtocolConfig, RoundClass, TrialBatch, run_batch, run_protocol1, run_protocol2

# %%
# One honest run.  With n=400 the INFO string is long enough for the
# Hamming syndromes and the security margin to leave a positive key length.
cfg = ProtocolConfig("p1", n=400, seed=11)
run = run_protocol1(cfg, trial=0)
print(run.outcome, "N =", cfg.N, "sifted =", run.stats.sifted, "key bits =", run.key_length)
print("keys equal:", np.array_equal(run.final_key_alice, run.final_key_bob))
print("leak =", run.leak, "margin =", run.security_margin)

# %%
# The public discussion, one message per line.
for msg in run.transcript:
    print(msg.seq, msg.sender.value, msg.kind.value)

# %%
# About a quarter of the N rounds become sifted key.
stats = run_batch(TrialBatch(ProtocolConfig("p1", n=64, seed=1), "none", 500))
print("mean SIFT_KEY count: %.1f (N/4 = %d)" % (stats.sift_mean, ProtocolConfig(n=64).N // 4))

# %%
# Eve measures in Z on the return leg.  Z_CTRL rounds stay clean, X_CTRL
# rounds err half the time, and both protocols abort.
for protocol in ("p1", "p2"):
    stats = run_batch(TrialBatch(ProtocolConfig(protocol, n=64, seed=2), "ir:z:ret", 200))
    rates = {c.name: stats.error_rate(c) for c in (RoundClass.Z_CTRL, RoundClass.X_CTRL, RoundClass.CTRL_X)}
    print(protocol, rates, "completed:", stats.completion_rate)

# %%
# Protocol 2 has no preparation choice at all: Alice always sends |+>.
run = run_protocol2(ProtocolConfig("p2", n=400, seed=3))
print("P2:", run.outcome, "key bits =", run.key_length)
