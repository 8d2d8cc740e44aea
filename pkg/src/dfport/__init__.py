"""Decision-focused portfolio optimization engine.

Trains return forecasters against a hybrid of prediction error and
portfolio-decision regret by differentiating through a mean-variance
optimization layer with closed-form sensitivities, and evaluates the result
with a rolling backtester.
"""

__version__ = "0.1.0"
