"""Predictive-maintenance and cyber-anomaly detection stack for a simulated
five-axis milling machine.

Subsystems:
    mtp        -- binary telemetry protocol codec
    simulator  -- seeded machine simulator with injectable anomaly scenarios
    store      -- append-only NDJSON segment store
    ingest     -- collector client, queries, replay
    features   -- encoding, robust scaling, collinearity pruning, windows
    unsup      -- four-family unsupervised detector ensemble
    semisup    -- label propagation, forest classifier, metrics, tuning
    forecast   -- hierarchical-interpolation utilization forecaster
    alerts     -- certainty fusion, cause ranking, alert lifecycle
    service    -- pipeline orchestration, HTTP API, CLI
"""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
