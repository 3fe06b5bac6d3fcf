# Shared infrastructure: logging, errors, configuration, caching and workers
