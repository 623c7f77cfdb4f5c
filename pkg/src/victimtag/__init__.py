"""Victim tagging: heuristic responder policies, an exact min-max routing oracle, and factorized deep Q-learning."""
