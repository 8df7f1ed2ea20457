"""Coexistence of unsynchronized TDMA body area networks.

Superframe/backoff MAC arithmetic, the backoff Markov chain, channel
synthesis, the joint power/rate game, the contention-window game, a
discrete-event coexistence simulator and welfare/PoA evaluation.
"""

from wbancoex.mac import MacParams, contention_window, draw_backoff, payload_duration

__all__ = ["MacParams", "contention_window", "draw_backoff", "payload_duration"]
__version__ = "0.1.0"
