"""Test suite for the resilient demand-response simulator."""
