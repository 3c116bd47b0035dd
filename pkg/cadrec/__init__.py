"""CaDRec - hypergraph recommender with popularity and individual-bias disentanglement."""

__version__ = "0.1.0"
