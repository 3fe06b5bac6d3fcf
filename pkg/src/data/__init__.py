# Dataset model, file ingestion and synthetic mixtures
