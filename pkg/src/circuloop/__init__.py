"""circuloop: event-sourced warehouse-to-event orchestration with circularity
indicators, a role-gated project logistics workflow, and a sustainable
materials library."""

__version__ = "0.1.0"
