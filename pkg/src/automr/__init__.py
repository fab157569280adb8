"""End-to-end motion recognition on windowed sensor time series: data
standardization, separable-convolution classifiers with exact gradients,
training with anomaly recovery, and sequential model-based tuning."""

__version__ = "0.1.0"
