"""Small-area poverty estimation with hierarchical Bayes.

Fits a three-level normal model to household survey data by MCMC, evaluates
posterior draws of FGT poverty indices per comuna (the Q-matrix), and
answers three questions from that one artifact: point estimates with
uncertainty, exceedance flags against policy standards, and worst/best-area
identification with posterior rank probabilities.
"""

__version__ = "0.1.0"
