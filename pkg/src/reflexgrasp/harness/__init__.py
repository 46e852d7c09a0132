"""Scenario configs, the simulation loop, batteries and reports."""
