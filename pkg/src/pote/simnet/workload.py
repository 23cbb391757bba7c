"""Deterministic transaction batches for each height.

The generator keeps a shadow copy of honest state so nonces line up and
most transfers execute; every ``invalid_every``-th transaction overdraws
its sender on purpose and is skipped by execution.
"""

from __future__ import annotations

import numpy as np

from pote.chain import ChainState, Transaction, apply_batch
from pote.genesis import account_id
from pote.simnet.config import Workload


class WorkloadGenerator:
    def __init__(self, spec: Workload, state: ChainState, rng: np.random.Generator):
        self.spec = spec
        self._rng = rng
        self._ids = [account_id(i) for i in range(spec.accounts)]
        self._shadow = state
        self._batches: dict[int, tuple[Transaction, ...]] = {}

    def batch(self, height: int) -> tuple[Transaction, ...]:
        """Transactions for ``height``; generated in height order and cached."""
        while len(self._batches) < height:
            h = len(self._batches) + 1
            txs = self._generate()
            self._batches[h] = txs
            self._shadow = apply_batch(self._shadow, txs)
        return self._batches[height]

    def _generate(self) -> tuple[Transaction, ...]:
        n = self.spec.tx_per_block
        if n == 0:
            return ()
        m = self.spec.accounts
        senders = self._rng.integers(0, m, size=n)
        offsets = self._rng.integers(1, m, size=n)
        amounts = self._rng.integers(1, 1000, size=n)
        nonces: dict[int, int] = {}
        balances: dict[int, int] = {}
        txs = []
        every = self.spec.invalid_every
        for i in range(n):
            s = int(senders[i])
            r = (s + int(offsets[i])) % m
            sid = self._ids[s]
            if s not in nonces:
                acct = self._shadow.get(sid)
                nonces[s] = acct.next_nonce if acct else 0
                balances[s] = acct.balance if acct else 0
            amount = int(amounts[i])
            if every and (i + 1) % every == 0:
                # Overdraw: skipped by execution, nonce not consumed.
                txs.append(Transaction(sid, self._ids[r], balances[s] + 1, nonces[s]))
                continue
            if amount > balances[s]:
                amount = balances[s]
            txs.append(Transaction(sid, self._ids[r], amount, nonces[s]))
            nonces[s] += 1
            balances[s] -= amount
            if r not in balances:
                acct = self._shadow.get(self._ids[r])
                nonces[r] = acct.next_nonce if acct else 0
                balances[r] = acct.balance if acct else 0
            balances[r] += amount
        return tuple(txs)
