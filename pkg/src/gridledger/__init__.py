"""Blockchain-backed management of power-grid data assets.

Subpackages: crypto (keys, signatures, envelopes), merkle (trees and
inclusion proofs), chain (blocks, verification, provenance), credit
(role system and score ledger), record_protocol (upload and block sealing),
share_protocol (peer-to-peer transfer), datastore (replicated ciphertext
storage), simnet (deterministic simulation), cli (command line).
"""

__version__ = "0.1.0"
