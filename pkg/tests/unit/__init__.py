"""Unit tests for the resilient demand-response simulator."""
