"""Desk-scale federated learning security testbed.

Three mechanisms over a shared simulation harness: hierarchical encrypted
model aggregation, supervised escrow of the federation decryption key, and
timestamp-attested training-time incentives.
"""

__version__ = "0.1.0"
