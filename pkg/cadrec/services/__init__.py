"""Services layer: encoders, HGC layer, objective, training and evaluation."""
