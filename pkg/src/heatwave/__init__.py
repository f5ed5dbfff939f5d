"""heatwave: Markov-switching extreme value model for summer heat waves."""
__version__ = "0.1.0"
