"""pimann: an IVFPQ vector-search workbench with replicated cluster
placement, batch query scheduling, co-occurrence aware re-encoding, and a
deterministic cost-model simulator of bank-partitioned PIM devices."""

__version__ = "0.1.0"
