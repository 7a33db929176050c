"""Integration tests for the resilient demand-response simulator."""
