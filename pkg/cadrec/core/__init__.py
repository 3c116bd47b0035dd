"""Configuration, domain models, errors and monitoring."""
