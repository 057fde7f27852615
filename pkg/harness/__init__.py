"""
harness — run configuration, experiment runners and the rydberg-lab CLI.

Entry point: rydberg-lab experiment --config config/ising_spectroscopy.yaml
"""
