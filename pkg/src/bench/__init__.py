# Experiment suite, significance tests and report writing
