"""chronoforge: time-sensitive QA datasets from Wikipedia tables.

Builds year-indexed question/answer sets out of table dumps, evaluates
completion models against them with time-aware F1, and produces training
data that teaches a model to state which year its knowledge comes from.
"""

__version__ = "0.1.0"
