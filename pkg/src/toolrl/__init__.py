"""Tool-augmented rollout generation and on-policy optimization.

Multi-turn reasoning/tool-calling inference over a tagged trajectory format,
rule-based rewarding, and masked token-level clipped policy objectives with
dynamic sampling, runnable end to end on a built-in toy policy with mock or
real tool backends.
"""

__version__ = "0.1.0"
