"""End-to-end tests for the resilient demand-response simulator."""
