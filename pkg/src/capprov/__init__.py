"""Capacity provisioning toolkit for microservice clusters.

Workload forecasting, per-pod QPS capacity modelling, proactive and
reactive replica scaling, and a trace-driven cluster simulator used to
compare scaling policies.
"""

__version__ = "0.1.0"
