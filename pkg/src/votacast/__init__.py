"""Election forecasting: survey-trained local model + bias-corrected polls.

Submodules
----------
core         party canon, simplex and softmax utilities
seats        D'Hondt / Jefferson seat apportionment
inference    HMC sampler, convergence diagnostics, OLS
fundamental  hierarchical multinomial-logit survey model + post-stratification
polls        multilevel poll-error model and its predictive inversions
synthesis    importance-sampling evidence synthesis and seat distributions
benchmarks   alternative OLS models and comparison tables
ingest       dataset loaders, validation, persistence
cli          pipeline orchestration (``votacast`` command)
"""

__version__ = "0.1.0"
