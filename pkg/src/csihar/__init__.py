"""Wi-Fi CSI activity recognition toolkit: preprocessing, spiking and convolutional
classifiers, a probabilistic rule engine, lagged causal discovery and Bayesian
classifier comparison."""

__version__ = "0.1.0"
